from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np

from errors import InvalidArgumentError
from group_core.elements import GroupElement, GroupTag, from_euler_zyz, identity, rotation2


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Normalized Haar quadrature exact on irrep matrix coefficients up to degree l_exact.

    SO(2) rules carry their node angles, SO(3) rules the ZYZ Euler angles of every node
    (one row per node) so irrep matrices can be evaluated in batches.
    """

    group: GroupTag
    weights: np.ndarray
    l_exact: int
    angles: np.ndarray | None = None
    euler: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.weights)

    @cached_property
    def nodes(self) -> tuple[GroupElement, ...]:
        if self.group == GroupTag.SO2:
            return tuple(rotation2(a) for a in self.angles)
        if self.group == GroupTag.SO3:
            return tuple(from_euler_zyz(*row) for row in self.euler)
        return (identity(self.group),)

    @cached_property
    def rotation_angles(self) -> np.ndarray:
        """Conjugation-invariant rotation angle of every node, in [0, pi]."""
        if self.group == GroupTag.SO2:
            return np.abs(np.angle(np.exp(1j * self.angles)))
        if self.group == GroupTag.SO3:
            a, b, c = self.euler.T
            # trace of Rz(a) Ry(b) Rz(c) = cos(b) + (1 + cos(b)) cos(a + c)
            trace = np.cos(b) + (1.0 + np.cos(b)) * np.cos(a + c)
            return np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0))
        return np.zeros(1)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@lru_cache(maxsize=64)
def haar_rule(group: GroupTag, l_exact: int) -> QuadratureRule:
    if l_exact < 0:
        raise InvalidArgumentError(f"quadrature band limit must be >= 0, got {l_exact}")
    if group == GroupTag.TRIVIAL:
        return QuadratureRule(group, _freeze(np.ones(1)), l_exact)
    n_uniform = 2 * l_exact + 1
    uniform = 2.0 * math.pi * np.arange(n_uniform) / n_uniform
    if group == GroupTag.SO2:
        weights = np.full(n_uniform, 1.0 / n_uniform)
        return QuadratureRule(group, _freeze(weights), l_exact, angles=_freeze(uniform))

    # Haar measure in ZYZ angles is sin(beta) da db dc / (8 pi^2); Gauss-Legendre in cos(beta)
    x, wx = np.polynomial.legendre.leggauss(l_exact + 1)
    beta = np.arccos(x)
    a, b, c = np.meshgrid(np.arange(n_uniform), np.arange(l_exact + 1), np.arange(n_uniform), indexing="ij")
    euler = np.stack([uniform[a.ravel()], beta[b.ravel()], uniform[c.ravel()]], axis=1)
    weights = wx[b.ravel()]
    weights = weights / weights.sum()
    return QuadratureRule(group, _freeze(weights), l_exact, euler=_freeze(euler))


def integrate_over_group(f: Callable[[GroupElement], np.ndarray], rule: QuadratureRule):
    """sum_q w_q f(g_q), accumulated in node order."""
    total = None
    shape = None
    for w, g in zip(rule.weights, rule.nodes):
        value = np.asarray(f(g), dtype=float)
        if shape is None:
            shape = value.shape
            total = np.zeros(shape)
        elif value.shape != shape:
            raise InvalidArgumentError(f"integrand changed shape from {shape} to {value.shape}")
        total += w * value
    return total if shape else float(total)


def weighted_sum(weights: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Contract the leading (node) axis of values with weights."""
    return np.tensordot(weights, values, axes=(0, 0))
