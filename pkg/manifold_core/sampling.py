from __future__ import annotations

import math

import numpy as np

from errors import InvalidArgumentError
from manifold_core.manifolds import Manifold, ManifoldKind


def sample_points(M: Manifold, n: int, seed: int) -> np.ndarray:
    """Seeded points of M, one row per point."""
    if n < 1:
        raise InvalidArgumentError(f"need at least one point, got n={n}")
    rng = np.random.default_rng(seed)
    if M.kind == ManifoldKind.SPHERE2:
        x = rng.standard_normal((n, 3))
        return x / np.linalg.norm(x, axis=1, keepdims=True)
    if M.kind == ManifoldKind.CIRCLE:
        return rng.uniform(0.0, 2.0 * math.pi, size=(n, 1))
    return rng.uniform(0.0, 1.0, size=(n, M.dim))


def sphere_grid(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre in cos(theta) times uniform phi, exact for polynomials up to degree.

    Returns unit points (N, 3) and weights summing to 4 pi.
    """
    n_theta = degree // 2 + 1
    n_phi = degree + 1
    x, w = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    ct, ph = np.meshgrid(x, phi, indexing="ij")
    st = np.sqrt(1.0 - ct**2)
    points = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=-1).reshape(-1, 3)
    weights = np.repeat(w, n_phi) * (2.0 * math.pi / n_phi)
    return points, weights


def circle_grid(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform angles exact for trigonometric polynomials up to degree; weights sum to 2 pi."""
    n = degree + 1
    angles = 2.0 * math.pi * np.arange(n) / n
    return angles[:, None], np.full(n, 2.0 * math.pi / n)
