from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from errors import InvalidArgumentError, UnsupportedConfigurationError
from manifold_core.harmonics import harmonics_stack
from manifold_core.heat_kernels import KernelSpec, radial_kernel, spectral_decay
from manifold_core.manifolds import Manifold, ManifoldKind
from manifold_core.sampling import sphere_grid


@dataclass(frozen=True, eq=False)
class KernelExpansion:
    """Mercer expansion of a base kernel in eigenfunctions of the base Laplacian.

    On S^2 the coefficients are the degree weights c_l of sum_l c_l P_l(x.y); on S^1 the
    weights c_n of the cosine series; on R^3 the kernel k(y - x) is expanded shell by shell
    in spherical harmonics of the direction, with radial factors R_lm(|y - x|).
    """

    manifold: Manifold
    spec: KernelSpec
    L: int
    coefficients: np.ndarray

    def tail_bound(self, truncation: int) -> float:
        """Upper bound on |k - k_truncated| when only degrees <= truncation are kept."""
        if truncation >= self.L:
            return 0.0
        tail = self.coefficients[truncation + 1:]
        if self.manifold.kind == ManifoldKind.CIRCLE:
            return float(2.0 * tail.sum())
        return float(tail.sum())

    @cached_property
    def _shell(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        points, weights = sphere_grid(2 * self.L)
        return points, weights, harmonics_stack(self.L, points)

    def radial_coefficients(self, r: float) -> np.ndarray:
        """R_lm(r) = int_{S^2} k(r u) Y_lm(u) du for all (l, m), length (L+1)^2."""
        if self.manifold.kind != ManifoldKind.EUCLIDEAN:
            raise InvalidArgumentError("radial coefficients exist for Euclidean bases only")
        points, weights, Y = self._shell
        values = radial_kernel(
            self.manifold.dim, self.spec.t, np.full(len(points), float(r)), self.spec.radial_profile, self.spec.envelope_radius
        )
        return (weights * values) @ Y

    def radial_table(self, radii) -> np.ndarray:
        """Per-degree norms sqrt(sum_m R_lm(r)^2), shape (len(radii), L+1)."""
        out = []
        for r in np.asarray(radii, dtype=float):
            R = self.radial_coefficients(r)
            out.append([np.linalg.norm(R[l * l:(l + 1) ** 2]) for l in range(self.L + 1)])
        return np.array(out)


def expand_kernel(spec: KernelSpec, M: Manifold, L: int) -> KernelExpansion:
    if L < 0:
        raise InvalidArgumentError(f"expansion degree must be >= 0, got {L}")
    if M.kind == ManifoldKind.EUCLIDEAN and M.dim != 3:
        raise UnsupportedConfigurationError(f"directional expansion needs a 3-dimensional base, got {M}")
    if M.kind == ManifoldKind.SPHERE2:
        decay = spectral_decay(M, spec.t, L, spec.coefficients)
        coefficients = (2.0 * np.arange(L + 1) + 1.0) / (4.0 * math.pi) * decay
    elif M.kind == ManifoldKind.CIRCLE:
        coefficients = spectral_decay(M, spec.t, L, spec.coefficients) / (2.0 * math.pi)
    else:
        # degree weights: largest radial norm over shells out to four diffusion lengths
        shells = KernelExpansion(M, spec, L, np.zeros(L + 1))
        radii = np.linspace(0.0, 4.0 * math.sqrt(spec.t), 9)
        # |sum_m R_lm Y_lm| <= |R_l| sqrt((2l+1) / 4pi)
        l = np.arange(L + 1)
        coefficients = shells.radial_table(radii).max(axis=0) * np.sqrt((2 * l + 1) / (4.0 * math.pi))
    return KernelExpansion(M, spec, L, coefficients)


def reconstruct(expansion: KernelExpansion, x, y, truncation: Optional[int] = None) -> float:
    """Kernel value rebuilt from the expansion, keeping degrees <= truncation."""
    M = expansion.manifold
    L = expansion.L if truncation is None else min(truncation, expansion.L)
    x, y = M.validate_point(x), M.validate_point(y)
    if M.kind == ManifoldKind.SPHERE2:
        Yx, Yy = harmonics_stack(L, x[None, :])[0], harmonics_stack(L, y[None, :])[0]
        total = 0.0
        for l in range(L + 1):
            block = slice(l * l, (l + 1) ** 2)
            # addition theorem: sum_m Y_lm(x) Y_lm(y) = (2l+1)/(4pi) P_l(x.y)
            total += expansion.coefficients[l] * 4.0 * math.pi / (2 * l + 1) * float(Yx[block] @ Yy[block])
        return total
    if M.kind == ManifoldKind.CIRCLE:
        n = np.arange(1, L + 1)
        c = expansion.coefficients
        cross = np.cos(n * x[0]) * np.cos(n * y[0]) + np.sin(n * x[0]) * np.sin(n * y[0])
        return float(c[0] + 2.0 * (c[1:L + 1] @ cross))
    d = y - x
    r = float(np.linalg.norm(d))
    direction = d / r if r > 0 else np.array([0.0, 0.0, 1.0])
    R = expansion.radial_coefficients(r)[: (L + 1) ** 2]
    return float(R @ harmonics_stack(L, direction[None, :])[0])
