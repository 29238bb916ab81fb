from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Optional, Sequence

import numpy as np

from bundle.atlas import Atlas, transition_function
from bundle.fiber import FiberPoint
from errors import DomainError, InvalidArgumentError
from group_core.elements import compose, identity, inverse
from group_core.irreps import RepSpace, rep_matrix

if TYPE_CHECKING:
    from diffusion.graph import GeometricGraph


@dataclass(frozen=True, eq=False)
class FeatureField:
    """Per-node vectors of V, each expressed in the gauge of the node's chart."""

    graph: "GeometricGraph"
    rep: RepSpace
    values: np.ndarray
    charts: tuple[str, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        n = self.graph.n
        if values.ndim == 1 and self.rep.dim == 1:
            values = values[:, None]
        if values.shape != (n, self.rep.dim):
            raise InvalidArgumentError(f"feature array has shape {values.shape}, expected ({n}, {self.rep.dim})")
        if self.rep.group != self.graph.manifold.structure_group:
            raise InvalidArgumentError(
                f"features transform under {self.rep.group.value}, {self.graph.manifold} needs {self.graph.manifold.structure_group.value}"
            )
        charts = tuple(self.charts)
        if len(charts) != n:
            raise InvalidArgumentError(f"{len(charts)} chart ids for {n} nodes")
        atlas = self.graph.atlas
        for i, name in enumerate(charts):
            if not atlas.covers(name, self.graph.positions[i]):
                raise DomainError(f"node {i} lies outside its chart {name!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "charts", charts)

    @classmethod
    def create(cls, graph: "GeometricGraph", rep: RepSpace, values, charts: Optional[Sequence[str]] = None) -> "FeatureField":
        return cls(graph, rep, values, tuple(charts) if charts is not None else graph.charts)

    @classmethod
    def zeros(cls, graph: "GeometricGraph", rep: RepSpace) -> "FeatureField":
        return cls.create(graph, rep, np.zeros((graph.n, rep.dim)))

    @property
    def atlas(self) -> Atlas:
        return self.graph.atlas

    def with_values(self, values: np.ndarray, rep: Optional[RepSpace] = None) -> "FeatureField":
        return FeatureField(self.graph, rep or self.rep, values, self.charts)


def gauge_transform(f: FeatureField, i: int, target: str) -> FeatureField:
    current = f.charts[i]
    x = f.graph.positions[i]
    if not f.atlas.covers(target, x):
        raise DomainError(f"node {i} lies outside target chart {target!r}")
    if target == current:
        return f
    g = transition_function(f.atlas, current, target, x)
    values = np.array(f.values)
    values[i] = rep_matrix(f.rep, g) @ values[i]
    charts = list(f.charts)
    charts[i] = target
    return FeatureField(f.graph, f.rep, values, tuple(charts))


def aligned_neighbors(f: FeatureField, i: int, neighbors: Sequence[int]) -> np.ndarray:
    """Neighbor vectors re-expressed in node i's gauge (transition evaluated at the neighbor)."""
    out = f.values[list(neighbors)] if len(neighbors) else np.zeros((0, f.rep.dim))
    target = f.charts[i]
    if all(f.charts[j] == target for j in neighbors):
        return out
    out = np.array(out)
    for k, j in enumerate(neighbors):
        if f.charts[j] != target:
            g = transition_function(f.atlas, f.charts[j], target, f.graph.positions[j])
            out[k] = rep_matrix(f.rep, g) @ out[k]
    return out


def evaluate_equivariant(f: FeatureField, i: int, p: FiberPoint) -> np.ndarray:
    """h(p) for the equivariant function h associated with the field.

    p is read as p_ref^C . g where C = p.chart; with g^{AC} the transition into the stored
    chart A, p = p_ref^A . (g^{AC} g) and h(p) = rho(g^{AC} g)^-1 v^A.
    """
    x = f.graph.positions[i]
    if np.asarray(p.point).shape != x.shape or not np.allclose(p.point, x, rtol=0.0, atol=1e-12):
        raise InvalidArgumentError(f"fiber point is not over node {i}")
    g_ac = transition_function(f.atlas, p.chart, f.charts[i], x)
    g = compose(g_ac, p.frame)
    return rep_matrix(f.rep, inverse(g)) @ f.values[i]


def from_equivariant(
    graph: "GeometricGraph",
    rep: RepSpace,
    h: Callable[[FiberPoint], np.ndarray],
    charts: Optional[Sequence[str]] = None,
) -> FeatureField:
    charts = tuple(charts) if charts is not None else graph.charts
    e = identity(rep.group)
    values = [np.asarray(h(FiberPoint(graph.positions[i], e, charts[i])), dtype=float) for i in range(graph.n)]
    return FeatureField(graph, rep, np.array(values).reshape(graph.n, rep.dim), charts)
