from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from bundle.atlas import Atlas
from errors import InvalidArgumentError
from manifold_core.manifolds import Manifold, ManifoldKind, pairwise_distances


@dataclass(frozen=True, eq=False)
class GeometricGraph:
    """Radius graph on a base manifold. Build it with build_graph."""

    manifold: Manifold
    positions: np.ndarray
    cutoff: float
    distances: np.ndarray  # full geodesic distance matrix
    neighbors: tuple[tuple[int, ...], ...]

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def atlas(self) -> Atlas:
        return Atlas.for_manifold(self.manifold)

    @cached_property
    def charts(self) -> tuple[str, ...]:
        atlas = self.atlas
        return tuple(atlas.assign_chart(x) for x in self.positions)

    @cached_property
    def edges(self) -> tuple[tuple[int, int], ...]:
        """Undirected edges (i, j), i < j, in sorted order."""
        return tuple((i, j) for i in range(self.n) for j in self.neighbors[i] if i < j)

    def edge_distance(self, i: int, j: int) -> float:
        return float(self.distances[i, j])

    def same_as(self, other: "GeometricGraph") -> bool:
        return (
            self.manifold == other.manifold
            and self.cutoff == other.cutoff
            and np.array_equal(self.positions, other.positions)
            and self.neighbors == other.neighbors
        )


def build_graph(M: Manifold, positions, r_c: float) -> GeometricGraph:
    if not r_c > 0:
        raise InvalidArgumentError(f"cutoff must be > 0, got {r_c}")
    if M.kind == ManifoldKind.SPHERE2 and r_c >= math.pi / 2:
        raise InvalidArgumentError(
            f"cutoff {r_c} violates the chart-coverage rule on the sphere: r_c must be < pi/2"
        )
    positions = M.validate_points(positions)
    positions.setflags(write=False)
    D = pairwise_distances(M, positions, positions)
    np.fill_diagonal(D, 0.0)
    # symmetrize so both directions see the same value
    D = np.minimum(D, D.T)
    D.setflags(write=False)
    adjacency = D <= r_c
    np.fill_diagonal(adjacency, False)
    neighbors = tuple(tuple(int(j) for j in np.flatnonzero(row)) for row in adjacency)
    return GeometricGraph(M, positions, float(r_c), D, neighbors)
