from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from config import POSITIVITY_GRID
from errors import InvalidArgumentError
from group_core.elements import GroupElement, GroupTag, compose, inverse
from group_core.irreps import IrrepLabel, character_of_angle
from manifold_core.harmonics import legendre_table
from manifold_core.manifolds import Manifold, ManifoldKind, pairwise_distances
from utils import get_logger

if TYPE_CHECKING:
    from bundle.fiber import FiberPoint

logger = get_logger(__name__)


class RadialProfile(str, Enum):
    GAUSSIAN = "gaussian"
    POLYNOMIAL_ENVELOPE = "polynomial_envelope"


@dataclass(frozen=True)
class KernelSpec:
    t: float
    l_base: int = 8
    l_grp: int = 2
    radial_profile: RadialProfile = RadialProfile.GAUSSIAN
    envelope_radius: Optional[float] = None
    coefficients: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        check_time(self.t)
        if self.l_base < 0 or self.l_grp < 0:
            raise InvalidArgumentError(f"band limits must be >= 0, got l_base={self.l_base}, l_grp={self.l_grp}")
        object.__setattr__(self, "radial_profile", RadialProfile(self.radial_profile))
        if self.radial_profile == RadialProfile.POLYNOMIAL_ENVELOPE:
            if self.envelope_radius is None or self.envelope_radius <= 0:
                raise InvalidArgumentError("polynomial_envelope needs a positive envelope_radius")
        if self.coefficients is not None:
            coefficients = tuple(float(c) for c in self.coefficients)
            if any(c < 0 for c in coefficients):
                raise InvalidArgumentError("kernel coefficient overrides must be non-negative")
            object.__setattr__(self, "coefficients", coefficients)

    def with_time(self, t: float) -> "KernelSpec":
        return replace(self, t=t)


def check_time(t: float) -> None:
    if not t > 0:
        raise InvalidArgumentError(f"diffusion time must be > 0, got {t}")


def spectral_decay(M: Manifold, t: float, L: int, coefficients: Optional[Sequence[float]] = None) -> np.ndarray:
    """Per-degree decay factors of the truncated kernel, degrees 0..L.

    Overrides replace the heat decay e^{-l(l+1)t} (sphere) or e^{-n^2 t} (circle); missing
    trailing entries count as zero.
    """
    if coefficients is not None:
        out = np.zeros(L + 1)
        values = np.asarray(coefficients, dtype=float)[: L + 1]
        out[: len(values)] = values
        return out
    l = np.arange(L + 1, dtype=float)
    if M.kind == ManifoldKind.SPHERE2:
        return np.exp(-l * (l + 1) * t)
    return np.exp(-(l**2) * t)


def polynomial_envelope(r, r_max: float, p: int = 6) -> np.ndarray:
    x = np.asarray(r, dtype=float) / r_max
    f = 1.0 - (p + 1) * (p + 2) / 2.0 * x**p + p * (p + 2) * x ** (p + 1) - p * (p + 1) / 2.0 * x ** (p + 2)
    return np.where(x < 1.0, f, 0.0)


def radial_kernel(d: int, t: float, r, profile: RadialProfile = RadialProfile.GAUSSIAN, envelope_radius: Optional[float] = None):
    """Translation-invariant heat kernel on R^d as a function of the distance r."""
    r = np.asarray(r, dtype=float)
    k = (4.0 * math.pi * t) ** (-d / 2.0) * np.exp(-(r**2) / (4.0 * t))
    if profile == RadialProfile.POLYNOMIAL_ENVELOPE:
        k = k * polynomial_envelope(r, envelope_radius)
    return k


def base_kernel_matrix(
    M: Manifold,
    t: float,
    X: np.ndarray,
    Y: np.ndarray,
    L: int,
    coefficients: Optional[Sequence[float]] = None,
    profile: RadialProfile = RadialProfile.GAUSSIAN,
    envelope_radius: Optional[float] = None,
) -> np.ndarray:
    """Base heat kernel between two arrays of validated points, shape (len(X), len(Y))."""
    check_time(t)
    if L < 0:
        raise InvalidArgumentError(f"band limit must be >= 0, got {L}")
    if M.kind == ManifoldKind.EUCLIDEAN:
        if coefficients is not None:
            logger.warning("coefficient overrides are ignored on Euclidean bases")
        return radial_kernel(M.dim, t, pairwise_distances(M, X, Y), profile, envelope_radius)
    warn_if_not_positive(M, L, t, coefficients)
    decay = spectral_decay(M, t, L, coefficients)
    if M.kind == ManifoldKind.SPHERE2:
        u = np.clip(np.einsum("ik,jk->ij", X, Y), -1.0, 1.0)
        P = legendre_table(L, u)
        c = (2.0 * np.arange(L + 1) + 1.0) / (4.0 * math.pi) * decay
        return np.tensordot(c, P, axes=1)
    delta = X[:, None, 0] - Y[None, :, 0]
    n = np.arange(1, L + 1)
    series = decay[0] + 2.0 * np.tensordot(decay[1:], np.cos(n[:, None, None] * delta[None]), axes=1)
    return series / (2.0 * math.pi)


def base_heat_kernel(M: Manifold, t: float, x, y, L: int, coefficients: Optional[Sequence[float]] = None) -> float:
    x, y = M.validate_point(x), M.validate_point(y)
    return float(base_kernel_matrix(M, t, x[None, :], y[None, :], L, coefficients)[0, 0])


def group_kernel_of_angle(group: GroupTag, t: float, omega, L: int) -> np.ndarray:
    """Group heat kernel as a function of the rotation angle; vectorized over omega.

    SO(3): sum_l (2l+1) e^{-l(l+1)t} chi_l, SO(2): 1 + 2 sum_m e^{-m^2 t} cos(m omega). Both
    integrate to one against the normalized Haar measure.
    """
    check_time(t)
    omega = np.asarray(omega, dtype=float)
    if group == GroupTag.TRIVIAL:
        return np.ones_like(omega)
    total = np.zeros_like(omega)
    for l in range(L + 1):
        label = IrrepLabel(group, l)
        if group == GroupTag.SO3:
            total = total + (2 * l + 1) * math.exp(-l * (l + 1) * t) * character_of_angle(label, omega)
        else:
            # chi_m = 2 cos(m omega) already counts both signs of m
            total = total + math.exp(-(l**2) * t) * character_of_angle(label, omega)
    return total


def group_heat_kernel(group: GroupTag, t: float, g: GroupElement, L: int) -> float:
    if g.group != group:
        raise InvalidArgumentError(f"{group.value} kernel evaluated on a {g.group.value} element")
    return float(group_kernel_of_angle(group, t, g.rotation_angle(), L))


def bundle_kernel(spec: KernelSpec, M: Manifold, p1: "FiberPoint", p2: "FiberPoint") -> float:
    """Product kernel k^M(x1, x2) k^G(R1^-1 R2) on the trivialized frame bundle."""
    group = M.structure_group
    for p in (p1, p2):
        if p.frame.group != group:
            raise InvalidArgumentError(f"fiber point frame is {p.frame.group.value}, {M} needs {group.value}")
    x1, x2 = M.validate_point(p1.point), M.validate_point(p2.point)
    base = base_kernel_matrix(
        M, spec.t, x1[None, :], x2[None, :], spec.l_base, spec.coefficients, spec.radial_profile, spec.envelope_radius
    )[0, 0]
    fiber = group_heat_kernel(group, spec.t, compose(inverse(p1.frame), p2.frame), spec.l_grp)
    return float(base * fiber)


@lru_cache(maxsize=None)
def truncation_positivity_threshold(M: Manifold, L: int) -> float:
    """Smallest t (to 1e-6 relative) at which the degree-L kernel is nonnegative on a dense grid."""
    if M.kind == ManifoldKind.EUCLIDEAN:
        return 0.0
    angles = np.linspace(0.0, math.pi, POSITIVITY_GRID)
    if M.kind == ManifoldKind.SPHERE2:
        P = legendre_table(L, np.cos(angles))
        weights = 2.0 * np.arange(L + 1) + 1.0
    else:
        P = np.cos(np.arange(L + 1)[:, None] * angles[None, :])
        weights = np.where(np.arange(L + 1) == 0, 1.0, 2.0)

    def minimum(t: float) -> float:
        return float(np.min(np.tensordot(weights * spectral_decay(M, t, L), P, axes=1)))

    lo, hi = 1e-6, 1.0
    if minimum(lo) >= 0.0:
        return 0.0
    while minimum(hi) < 0.0:
        hi *= 2.0
    while hi - lo > 1e-6 * hi:
        mid = 0.5 * (lo + hi)
        if minimum(mid) >= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def warn_if_not_positive(M: Manifold, L: int, t: float, coefficients=None) -> None:
    if coefficients is not None:
        return
    threshold = truncation_positivity_threshold(M, L)
    if t < threshold:
        _warn_once(str(M), L, t, threshold)


@lru_cache(maxsize=256)
def _warn_once(manifold: str, L: int, t: float, threshold: float) -> None:
    logger.warning(
        "truncated %s kernel at L=%d may be negative for t=%g (positivity threshold %.4g)", manifold, L, t, threshold
    )
