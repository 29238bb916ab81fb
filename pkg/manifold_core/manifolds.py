from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from config import SPHERE_POINT_TOL
from errors import InvalidArgumentError
from group_core.elements import GroupTag

TWO_PI = 2.0 * math.pi


class ManifoldKind(str, Enum):
    CIRCLE = "circle"
    SPHERE2 = "sphere2"
    EUCLIDEAN = "euclidean"


@dataclass(frozen=True)
class Manifold:
    kind: ManifoldKind
    dim: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ManifoldKind(self.kind))
        if self.kind == ManifoldKind.EUCLIDEAN:
            if self.dim not in (2, 3):
                raise InvalidArgumentError(f"Euclidean dimension must be 2 or 3, got {self.dim}")
        else:
            object.__setattr__(self, "dim", 1 if self.kind == ManifoldKind.CIRCLE else 2)

    @classmethod
    def circle(cls) -> "Manifold":
        return cls(ManifoldKind.CIRCLE)

    @classmethod
    def sphere2(cls) -> "Manifold":
        return cls(ManifoldKind.SPHERE2)

    @classmethod
    def euclidean(cls, d: int) -> "Manifold":
        return cls(ManifoldKind.EUCLIDEAN, d)

    @property
    def ambient_dim(self) -> int:
        """Length of the coordinate vector storing a point."""
        if self.kind == ManifoldKind.CIRCLE:
            return 1
        if self.kind == ManifoldKind.SPHERE2:
            return 3
        return self.dim

    @property
    def structure_group(self) -> GroupTag:
        if self.kind == ManifoldKind.CIRCLE:
            return GroupTag.TRIVIAL
        if self.kind == ManifoldKind.EUCLIDEAN and self.dim == 3:
            return GroupTag.SO3
        return GroupTag.SO2

    def __str__(self) -> str:
        if self.kind == ManifoldKind.EUCLIDEAN:
            return f"euclidean({self.dim})"
        return self.kind.value

    def validate_point(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.ambient_dim,):
            raise InvalidArgumentError(f"{self} point needs {self.ambient_dim} coordinates, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidArgumentError(f"{self} point has non-finite coordinates")
        if self.kind == ManifoldKind.SPHERE2 and abs(np.linalg.norm(x) - 1.0) > SPHERE_POINT_TOL:
            raise InvalidArgumentError(f"sphere point has norm {np.linalg.norm(x)!r}, expected 1")
        if self.kind == ManifoldKind.CIRCLE:
            x = np.mod(x, TWO_PI)
        return x

    def validate_points(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.ndim == 1 and self.ambient_dim == 1:
            points = points[:, None]
        if points.ndim != 2 or points.shape[1] != self.ambient_dim:
            raise InvalidArgumentError(f"{self} points need shape (n, {self.ambient_dim}), got {points.shape}")
        return np.stack([self.validate_point(p) for p in points]) if len(points) else points


def geodesic_distance(M: Manifold, x, y) -> float:
    x, y = M.validate_point(x), M.validate_point(y)
    return float(pairwise_distances(M, x[None, :], y[None, :])[0, 0])


def pairwise_distances(M: Manifold, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Geodesic distance matrix between already validated point arrays."""
    if M.kind == ManifoldKind.CIRCLE:
        delta = np.abs(X[:, None, 0] - Y[None, :, 0]) % TWO_PI
        return np.minimum(delta, TWO_PI - delta)
    if M.kind == ManifoldKind.SPHERE2:
        # atan2 form stays accurate for nearly equal and nearly antipodal points
        cross = np.linalg.norm(np.cross(X[:, None, :], Y[None, :, :]), axis=-1)
        dot = np.einsum("ik,jk->ij", X, Y)
        return np.arctan2(cross, dot)
    return np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=-1)
