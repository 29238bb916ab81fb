from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from config import CHART_MARGIN
from errors import DomainError, InvalidArgumentError
from group_core.elements import GroupElement, GroupTag, from_matrix, identity
from manifold_core.manifolds import Manifold, ManifoldKind

GLOBAL = "global"
NORTH = "north"
SOUTH = "south"


@dataclass(frozen=True)
class Chart:
    name: str
    contains: Callable[[np.ndarray], bool]
    # orthonormal tangent frame at a covered point, one frame vector per row
    frame: Callable[[np.ndarray], np.ndarray]


def _standard_frame(d: int) -> Callable[[np.ndarray], np.ndarray]:
    eye = np.eye(d)
    return lambda x: eye


def _tangent_frame(x: np.ndarray, e1: np.ndarray) -> np.ndarray:
    e1 = e1 - np.dot(e1, x) * x
    e1 = e1 / np.linalg.norm(e1)
    # e2 = n x e1 keeps the frame positively oriented w.r.t. the outward normal
    return np.stack([e1, np.cross(x, e1)])


def _north_frame(x: np.ndarray) -> np.ndarray:
    # d/du of the inverse stereographic projection from the south pole, u = x / (1 + z)
    a, b, c = x
    return _tangent_frame(x, np.array([(1.0 + c) ** 2 + b * b - a * a, -2.0 * a * b, -2.0 * a * (1.0 + c)]))


def _south_frame(x: np.ndarray) -> np.ndarray:
    # same construction with the projection from the north pole, u = x / (1 - z)
    a, b, c = x
    return _tangent_frame(x, np.array([(1.0 - c) ** 2 + b * b - a * a, -2.0 * a * b, 2.0 * a * (1.0 - c)]))


class Atlas:
    """Charts of a base manifold with their frame fields.

    Euclidean spaces and the circle use a single global chart; the sphere uses the two
    stereographic charts. Chart order is the tie-break order for node assignment.
    """

    def __init__(self, manifold: Manifold, charts: list[Chart]):
        self.manifold = manifold
        self.group = manifold.structure_group
        self._charts = {chart.name: chart for chart in charts}
        self.chart_ids = tuple(chart.name for chart in charts)

    @classmethod
    def for_manifold(cls, M: Manifold) -> "Atlas":
        return _atlas_for(M)

    def chart(self, name: str) -> Chart:
        if name not in self._charts:
            raise InvalidArgumentError(f"unknown chart id {name!r} for {self.manifold}, expected one of {list(self.chart_ids)}")
        return self._charts[name]

    def covers(self, name: str, x) -> bool:
        return bool(self.chart(name).contains(np.asarray(x, dtype=float)))

    def assign_chart(self, x) -> str:
        for name in self.chart_ids:
            if self.covers(name, x):
                return name
        raise DomainError(f"point {np.asarray(x).tolist()} is not covered by any chart")

    def frame(self, name: str, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.covers(name, x):
            raise DomainError(f"point {x.tolist()} lies outside chart {name!r}")
        return self.chart(name).frame(x)


@lru_cache(maxsize=None)
def _atlas_for(M: Manifold) -> Atlas:
    if M.kind == ManifoldKind.SPHERE2:
        north = Chart(NORTH, lambda x: 1.0 + x[2] > CHART_MARGIN, _north_frame)
        south = Chart(SOUTH, lambda x: 1.0 - x[2] > CHART_MARGIN, _south_frame)
        return Atlas(M, [north, south])
    return Atlas(M, [Chart(GLOBAL, lambda x: True, _standard_frame(M.dim))])


def transition_function(atlas: Atlas, chart_a: str, chart_b: str, x) -> GroupElement:
    """g^{BA}_x: maps coordinates in the A frame at x to coordinates in the B frame."""
    x = np.asarray(x, dtype=float)
    frame_a = atlas.frame(chart_a, x)
    frame_b = atlas.frame(chart_b, x)
    if chart_a == chart_b:
        return identity(atlas.group)
    return from_matrix(atlas.group, frame_b @ frame_a.T)


def equator_winding(atlas: Atlas, samples: int = 360) -> int:
    """Signed number of turns of g^{south,north} along the equator, traversed once."""
    if atlas.group != GroupTag.SO2 or atlas.manifold.kind != ManifoldKind.SPHERE2:
        raise InvalidArgumentError("the equator winding is defined for the sphere atlas")
    phi = 2.0 * math.pi * np.arange(samples + 1) / samples
    angles = []
    for p in phi:
        g = transition_function(atlas, NORTH, SOUTH, np.array([math.cos(p), math.sin(p), 0.0]))
        angles.append(g.angle)
    total = np.unwrap(np.array(angles))
    return int(round((total[-1] - total[0]) / (2.0 * math.pi)))
