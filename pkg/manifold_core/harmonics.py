from __future__ import annotations

import math

import numpy as np
from scipy.special import lpmv

from config import UNIT_TOL
from errors import InvalidArgumentError


def legendre(l: int, u):
    """Legendre polynomial P_l by the three-term recurrence; vectorized over u."""
    if l < 0:
        raise InvalidArgumentError(f"Legendre degree must be >= 0, got {l}")
    u = np.asarray(u, dtype=float)
    if np.any(np.abs(u) > 1.0 + 1e-12):
        raise InvalidArgumentError("Legendre argument outside [-1, 1]")
    p_prev, p = np.ones_like(u), u.copy()
    if l == 0:
        return p_prev if p_prev.ndim else float(p_prev)
    for k in range(1, l):
        p_prev, p = p, ((2 * k + 1) * u * p - k * p_prev) / (k + 1)
    return p if p.ndim else float(p)


def legendre_table(l_max: int, u) -> np.ndarray:
    """P_0..P_lmax stacked on a new leading axis."""
    u = np.asarray(u, dtype=float)
    out = np.empty((l_max + 1,) + u.shape)
    out[0] = 1.0
    if l_max >= 1:
        out[1] = u
    for k in range(1, l_max):
        out[k + 1] = ((2 * k + 1) * u * out[k] - k * out[k - 1]) / (k + 1)
    return out


def _norm(l: int, m: int) -> float:
    return math.sqrt((2 * l + 1) / (4.0 * math.pi) * math.factorial(l - m) / math.factorial(l + m))


def spherical_harmonics(l: int, points) -> np.ndarray:
    """Real orthonormal spherical harmonics of degree l at unit vectors.

    Returns shape (N, 2l+1), columns ordered m = -l..l. The basis is the one the SO(3)
    irrep matrices act on: Y(R x) = D^l(R) Y(x).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    cos_theta = np.clip(z, -1.0, 1.0)
    phi = np.arctan2(y, x)
    out = np.empty((len(points), 2 * l + 1))
    out[:, l] = _norm(l, 0) * lpmv(0, l, cos_theta)
    for m in range(1, l + 1):
        # lpmv carries the Condon-Shortley phase; the real basis does not
        p = (-1) ** m * lpmv(m, l, cos_theta)
        scale = math.sqrt(2.0) * _norm(l, m) * p
        out[:, l + m] = scale * np.cos(m * phi)
        out[:, l - m] = scale * np.sin(m * phi)
    return out


def spherical_harmonic(l: int, m: int, u) -> float:
    if abs(m) > l:
        raise InvalidArgumentError(f"|m| must be <= l, got l={l}, m={m}")
    u = np.asarray(u, dtype=float)
    if u.shape != (3,) or abs(np.linalg.norm(u) - 1.0) > UNIT_TOL:
        raise InvalidArgumentError("spherical harmonics need a unit 3-vector")
    return float(spherical_harmonics(l, u[None, :])[0, l + m])


def harmonics_stack(l_max: int, points) -> np.ndarray:
    """All degrees 0..lmax side by side, shape (N, (lmax+1)^2)."""
    return np.concatenate([spherical_harmonics(l, points) for l in range(l_max + 1)], axis=1)


def solid_harmonics(l: int, vectors) -> np.ndarray:
    """|r|^l Y_l(r / |r|), a homogeneous harmonic polynomial; zero vectors map to zero (l > 0)."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    r = np.linalg.norm(vectors, axis=1)
    safe = np.where(r > 0, r, 1.0)
    Y = spherical_harmonics(l, vectors / safe[:, None])
    if l == 0:
        return Y
    return Y * (r**l)[:, None]
