from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import TYPE_CHECKING, Iterable

import numpy as np
from scipy.linalg import block_diag, expm

from errors import InvalidArgumentError
from group_core.elements import GroupElement, GroupTag

if TYPE_CHECKING:
    from group_core.quadrature import QuadratureRule


@dataclass(frozen=True, order=True)
class IrrepLabel:
    """Real irreducible representation: degree m of SO(2) or l of SO(3)."""

    group: GroupTag
    degree: int

    def __post_init__(self):
        if self.degree < 0:
            raise InvalidArgumentError(f"irrep degree must be >= 0, got {self.degree}")
        if self.group == GroupTag.TRIVIAL and self.degree != 0:
            raise InvalidArgumentError("the trivial group only has the degree 0 irrep")

    @property
    def dim(self) -> int:
        if self.degree == 0:
            return 1
        if self.group == GroupTag.SO2:
            return 2
        return 2 * self.degree + 1

    @property
    def is_trivial(self) -> bool:
        return self.degree == 0

    def __str__(self) -> str:
        if self.group == GroupTag.SO3:
            return f"l={self.degree}"
        if self.group == GroupTag.SO2:
            return f"m={self.degree}"
        return "trivial"


@dataclass(frozen=True)
class Channel:
    """One copy of one irrep inside a RepSpace."""

    index: int
    label: IrrepLabel
    start: int

    @property
    def stop(self) -> int:
        return self.start + self.label.dim

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)


@dataclass(frozen=True)
class RepSpace:
    blocks: tuple[tuple[IrrepLabel, int], ...]

    def __post_init__(self):
        blocks = tuple((label, int(mult)) for label, mult in self.blocks)
        if not blocks:
            raise InvalidArgumentError("a representation space needs at least one block")
        groups = {label.group for label, _ in blocks}
        if len(groups) != 1:
            raise InvalidArgumentError(f"blocks mix groups {sorted(g.value for g in groups)}")
        for label, mult in blocks:
            if mult < 1:
                raise InvalidArgumentError(f"multiplicity of {label} must be positive, got {mult}")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_degrees(cls, group: GroupTag, degrees: Iterable[tuple[int, int]]) -> "RepSpace":
        return cls(tuple((IrrepLabel(group, d), m) for d, m in degrees))

    @classmethod
    def single(cls, label: IrrepLabel, multiplicity: int = 1) -> "RepSpace":
        return cls(((label, multiplicity),))

    @property
    def group(self) -> GroupTag:
        return self.blocks[0][0].group

    @property
    def dim(self) -> int:
        return sum(label.dim * mult for label, mult in self.blocks)

    @cached_property
    def channels(self) -> tuple[Channel, ...]:
        out, start = [], 0
        for label, mult in self.blocks:
            for _ in range(mult):
                out.append(Channel(len(out), label, start))
                start += label.dim
        return tuple(out)

    def trivial_channels(self) -> tuple[int, ...]:
        return tuple(c.index for c in self.channels if c.label.is_trivial)

    @property
    def max_degree(self) -> int:
        return max(label.degree for label, _ in self.blocks)

    def channel(self, index: int) -> Channel:
        if not 0 <= index < len(self.channels):
            raise InvalidArgumentError(f"channel {index} out of range, space has {len(self.channels)} channels")
        return self.channels[index]

    def describe(self) -> list[dict]:
        return [{"irrep": label.degree, "multiplicity": mult} for label, mult in self.blocks]


def _complex_to_real(l: int) -> np.ndarray:
    # rows: real harmonics m = -l..l, columns: complex Y^m with Condon-Shortley phase
    d = 2 * l + 1
    U = np.zeros((d, d), dtype=complex)
    s = 1.0 / math.sqrt(2.0)
    for m in range(-l, l + 1):
        row = m + l
        if m < 0:
            U[row, m + l] = 1j * s
            U[row, -m + l] = -1j * s * (-1) ** m
        elif m == 0:
            U[row, l] = 1.0
        else:
            U[row, -m + l] = s
            U[row, m + l] = s * (-1) ** m
    return U


@lru_cache(maxsize=None)
def _so3_generators(l: int) -> np.ndarray:
    """(A_x, A_y, A_z) on real spherical harmonics of degree l.

    The angular momentum matrices are built with ladder operators in the |l m> basis and
    moved to the real basis; A_k = i U J_k^T U^dagger, so that Y(exp(s L_k) x) = exp(s A_k) Y(x).
    """
    d = 2 * l + 1
    m = np.arange(-l, l + 1, dtype=float)
    Jz = np.diag(m).astype(complex)
    Jp = np.zeros((d, d), dtype=complex)
    for i in range(d - 1):
        Jp[i + 1, i] = math.sqrt(l * (l + 1) - m[i] * (m[i] + 1))
    Jm = Jp.T
    Jx = (Jp + Jm) / 2.0
    Jy = (Jp - Jm) / 2.0j
    U = _complex_to_real(l)
    out = []
    for J in (Jx, Jy, Jz):
        A = 1j * U @ J.T @ U.conj().T
        assert np.abs(A.imag).max() < 1e-12, "real generator has an imaginary part"
        out.append(A.real)
    out = np.stack(out)
    out.setflags(write=False)
    return out


def _so2_block(m: int, theta) -> np.ndarray:
    c, s = np.cos(m * np.asarray(theta)), np.sin(m * np.asarray(theta))
    return np.stack([np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2)


def _check_group(label: IrrepLabel, g: GroupElement):
    if label.group != g.group:
        raise InvalidArgumentError(f"irrep of {label.group.value} evaluated on a {g.group.value} element")


def irrep_matrix(label: IrrepLabel, g: GroupElement) -> np.ndarray:
    _check_group(label, g)
    if label.is_trivial:
        return np.ones((1, 1))
    if label.group == GroupTag.SO2:
        return _so2_block(label.degree, g.angle)
    return expm(np.tensordot(g.rotvec(), _so3_generators(label.degree), axes=1))


def irrep_matrices(label: IrrepLabel, rule: "QuadratureRule") -> np.ndarray:
    """Stacked irrep matrices at every node of a quadrature rule, shape (Q, d, d)."""
    if label.group != rule.group:
        raise InvalidArgumentError(f"irrep of {label.group.value} evaluated on a {rule.group.value} rule")
    q = len(rule.weights)
    if label.is_trivial:
        return np.ones((q, 1, 1))
    if label.group == GroupTag.SO2:
        return _so2_block(label.degree, rule.angles)
    # D(alpha, beta, gamma) = exp(alpha A_z) exp(beta A_y) exp(gamma A_z)
    A = _so3_generators(label.degree)
    euler = rule.euler
    factors = []
    for column, gen in ((0, A[2]), (1, A[1]), (2, A[2])):
        values, where = np.unique(euler[:, column], return_inverse=True)
        table = np.stack([expm(v * gen) for v in values])
        factors.append(table[where.reshape(-1)])
    return factors[0] @ factors[1] @ factors[2]


def generators(label: IrrepLabel) -> list[np.ndarray]:
    """d rho of the Lie algebra basis, one antisymmetric matrix per basis element."""
    if label.group == GroupTag.TRIVIAL:
        return []
    count = 3 if label.group == GroupTag.SO3 else 1
    if label.is_trivial:
        return [np.zeros((1, 1)) for _ in range(count)]
    if label.group == GroupTag.SO2:
        m = float(label.degree)
        return [np.array([[0.0, -m], [m, 0.0]])]
    return [np.array(A) for A in _so3_generators(label.degree)]


def casimir(label: IrrepLabel) -> np.ndarray:
    out = np.zeros((label.dim, label.dim))
    for A in generators(label):
        out -= A @ A
    return out


def casimir_value(label: IrrepLabel) -> float:
    if label.group == GroupTag.SO3:
        return float(label.degree * (label.degree + 1))
    return float(label.degree**2)


def casimir_on_space(V: RepSpace) -> np.ndarray:
    cache = {}
    blocks = []
    for channel in V.channels:
        if channel.label not in cache:
            cache[channel.label] = casimir(channel.label)
        blocks.append(cache[channel.label])
    return block_diag(*blocks)


def casimir_diagonal(V: RepSpace) -> np.ndarray:
    """Per-coordinate Casimir eigenvalue of V."""
    return np.concatenate([np.full(c.label.dim, casimir_value(c.label)) for c in V.channels])


def rep_matrix(V: RepSpace, g: GroupElement) -> np.ndarray:
    """Block-diagonal rho_V(g) in the layout of V."""
    cache = {}
    blocks = []
    for channel in V.channels:
        if channel.label not in cache:
            cache[channel.label] = irrep_matrix(channel.label, g)
        blocks.append(cache[channel.label])
    return block_diag(*blocks)


def character(label: IrrepLabel, g: GroupElement) -> float:
    _check_group(label, g)
    return float(character_of_angle(label, g.rotation_angle()))


def character_of_angle(label: IrrepLabel, omega) -> np.ndarray:
    """Character as a function of the rotation angle, vectorized over omega."""
    omega = np.asarray(omega, dtype=float)
    if label.is_trivial:
        return np.ones_like(omega)
    if label.group == GroupTag.SO2:
        return 2.0 * np.cos(label.degree * omega)
    l = label.degree
    half = np.sin(omega / 2.0)
    small = np.abs(half) < 1e-8
    safe = np.where(small, 1.0, half)
    value = np.sin((l + 0.5) * omega) / safe
    # series around omega = 0: (2l+1) - l(l+1)(2l+1) omega^2 / 6
    series = (2 * l + 1) * (1.0 - l * (l + 1) * omega**2 / 6.0)
    return np.where(small, series, value)

