from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np

from bundle.fields import FeatureField
from diffusion.graph import GeometricGraph, build_graph
from errors import InvalidArgumentError
from group_core.elements import GroupElement, GroupTag, from_matrix, identity, random_element
from group_core.irreps import IrrepLabel, RepSpace, rep_matrix
from manifold_core.manifolds import Manifold, ManifoldKind


@dataclass(frozen=True, eq=False)
class IsometryAction:
    """Global isometry: a rotation (SO(d) on R^d and S^1, SO(3) on S^2) plus an optional translation."""

    rotation: GroupElement
    translation: Optional[np.ndarray] = None

    def apply(self, M: Manifold, positions: np.ndarray) -> np.ndarray:
        if M.kind == ManifoldKind.CIRCLE:
            return np.mod(positions + self.rotation.angle, 2.0 * np.pi)
        R = self.rotation.as_matrix()
        moved = positions @ R.T
        if M.kind == ManifoldKind.SPHERE2:
            return moved / np.linalg.norm(moved, axis=1, keepdims=True)
        if self.translation is not None:
            moved = moved + self.translation
        return moved


def isometry_group(M: Manifold) -> GroupTag:
    if M.kind == ManifoldKind.SPHERE2 or (M.kind == ManifoldKind.EUCLIDEAN and M.dim == 3):
        return GroupTag.SO3
    return GroupTag.SO2


def random_isometry(M: Manifold, rng: np.random.Generator, translate: bool = True) -> IsometryAction:
    rotation = random_element(isometry_group(M), rng)
    translation = None
    if translate and M.kind == ManifoldKind.EUCLIDEAN:
        translation = rng.uniform(-1.0, 1.0, size=M.dim)
    return IsometryAction(rotation, translation)


def act_on_graph(graph: GeometricGraph, action: IsometryAction) -> GeometricGraph:
    return build_graph(graph.manifold, action.apply(graph.manifold, graph.positions), graph.cutoff)


def node_gauges(graph: GeometricGraph, moved: GeometricGraph, action: IsometryAction, charts: Sequence[str]) -> list[GroupElement]:
    """Structure-group element relating each node's old gauge to its gauge after the isometry."""
    M = graph.manifold
    group = M.structure_group
    if M.kind == ManifoldKind.CIRCLE:
        return [identity(group)] * graph.n
    if M.kind == ManifoldKind.EUCLIDEAN:
        return [from_matrix(group, action.rotation.as_matrix())] * graph.n
    Q = action.rotation.as_matrix()
    out = []
    for i in range(graph.n):
        old = graph.atlas.frame(charts[i], graph.positions[i])
        new = moved.atlas.frame(moved.charts[i], moved.positions[i])
        out.append(from_matrix(group, new @ Q @ old.T))
    return out


def transform_values(rep: RepSpace, gauges: Sequence[GroupElement], values: np.ndarray) -> np.ndarray:
    out = np.empty_like(values)
    for i, g in enumerate(gauges):
        out[i] = rep_matrix(rep, g) @ values[i]
    return out


def act_on_field(f: FeatureField, action: IsometryAction) -> tuple[FeatureField, list[GroupElement]]:
    moved = act_on_graph(f.graph, action)
    gauges = node_gauges(f.graph, moved, action, f.charts)
    values = transform_values(f.rep, gauges, f.values)
    return FeatureField(moved, f.rep, values, moved.charts), gauges


@dataclass(frozen=True)
class EquivarianceReport:
    max_deviation: float
    tol: float
    samples: int

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tol


def _output(result: Any, out_rep: Optional[RepSpace], group: GroupTag) -> tuple[np.ndarray, RepSpace]:
    if hasattr(result, "values") and hasattr(result, "rep"):
        return np.asarray(result.values, dtype=float), result.rep
    values = np.asarray(result, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if out_rep is None:
        out_rep = RepSpace.single(IrrepLabel(group, 0), values.shape[1])
    if values.shape[1] != out_rep.dim:
        raise InvalidArgumentError(f"output has {values.shape[1]} columns, output space has dimension {out_rep.dim}")
    return values, out_rep


def check_equivariance(
    F: Callable[[FeatureField], Any],
    f: FeatureField,
    actions: Sequence[IsometryAction],
    tol: float,
    out_rep: Optional[RepSpace] = None,
) -> EquivarianceReport:
    """max over actions and nodes of |F(g.f) - rho(g) F(f)| / (1 + |F(f)|)."""
    group = f.rep.group
    base, rep = _output(F(f), out_rep, group)
    norms = np.linalg.norm(base, axis=1)
    worst = 0.0
    for action in actions:
        moved, gauges = act_on_field(f, action)
        got, _ = _output(F(moved), rep if out_rep is None else out_rep, group)
        expected = transform_values(rep, gauges, base)
        deviation = np.linalg.norm(got - expected, axis=1) / (1.0 + norms)
        worst = max(worst, float(deviation.max()) if len(deviation) else 0.0)
    return EquivarianceReport(worst, tol, len(actions))
