from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from config import ROTATION_TOL
from errors import InvalidArgumentError

TWO_PI = 2.0 * math.pi


class GroupTag(str, Enum):
    TRIVIAL = "trivial"
    SO2 = "SO2"
    SO3 = "SO3"


def _reduce_angle(theta: float) -> float:
    theta = math.fmod(float(theta), TWO_PI)
    if theta < 0.0:
        theta += TWO_PI
    # fmod of a tiny negative number can land exactly on 2*pi
    if theta >= TWO_PI:
        theta = 0.0
    return theta


def _rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rotation_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True, eq=False)
class GroupElement:
    """Element of the trivial group, SO(2) or SO(3).

    SO(2) elements are stored as an angle reduced to [0, 2pi), SO(3) elements as a
    proper rotation matrix. Use the module-level constructors rather than the
    dataclass constructor.
    """

    group: GroupTag
    angle: float = 0.0
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.group == GroupTag.SO2:
            object.__setattr__(self, "angle", _reduce_angle(self.angle))
        elif self.group == GroupTag.SO3:
            if self.matrix is None:
                raise InvalidArgumentError("SO3 element needs a rotation matrix")
            R = np.array(self.matrix, dtype=float)
            if R.shape != (3, 3):
                raise InvalidArgumentError(f"SO3 matrix must be 3x3, got shape {R.shape}")
            if np.abs(R.T @ R - np.eye(3)).max() > ROTATION_TOL or abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
                raise InvalidArgumentError("matrix is not a proper rotation within tolerance")
            R.setflags(write=False)
            object.__setattr__(self, "matrix", R)

    def as_matrix(self) -> np.ndarray:
        """Fundamental (defining) representation of the element."""
        if self.group == GroupTag.SO3:
            return self.matrix
        if self.group == GroupTag.SO2:
            c, s = math.cos(self.angle), math.sin(self.angle)
            return np.array([[c, -s], [s, c]])
        return np.ones((1, 1))

    def rotvec(self) -> np.ndarray:
        if self.group == GroupTag.SO3:
            return Rotation.from_matrix(self.matrix).as_rotvec()
        if self.group == GroupTag.SO2:
            # principal angle in (-pi, pi]
            theta = self.angle if self.angle <= math.pi else self.angle - TWO_PI
            return np.array([theta])
        return np.zeros(0)

    def rotation_angle(self) -> float:
        """Angle of the rotation in [0, pi]; conjugation invariant."""
        return float(np.linalg.norm(self.rotvec()))

    def __repr__(self) -> str:
        if self.group == GroupTag.SO2:
            return f"GroupElement(SO2, angle={self.angle!r})"
        if self.group == GroupTag.SO3:
            return f"GroupElement(SO3, rotvec={self.rotvec().tolist()!r})"
        return "GroupElement(trivial)"


def identity(group: GroupTag) -> GroupElement:
    if group == GroupTag.SO3:
        return GroupElement(group, matrix=np.eye(3))
    return GroupElement(group)


def rotation2(theta: float) -> GroupElement:
    return GroupElement(GroupTag.SO2, angle=theta)


def rotation3(matrix) -> GroupElement:
    return GroupElement(GroupTag.SO3, matrix=matrix)


def from_euler_zyz(alpha: float, beta: float, gamma: float) -> GroupElement:
    """R = Rz(alpha) Ry(beta) Rz(gamma)."""
    return rotation3(_rotation_z(alpha) @ _rotation_y(beta) @ _rotation_z(gamma))


def euler_zyz(g: GroupElement) -> tuple[float, float, float]:
    """ZYZ angles with alpha, gamma in [0, 2pi) and beta in [0, pi].

    In the gimbal cases beta in {0, pi} the split between alpha and gamma is not
    unique and gamma is set to 0.
    """
    if g.group != GroupTag.SO3:
        raise InvalidArgumentError(f"Euler angles need an SO3 element, got {g.group.value}")
    R = g.matrix
    beta = math.acos(min(1.0, max(-1.0, R[2, 2])))
    if math.sin(beta) > 1e-12:
        alpha = math.atan2(R[1, 2], R[0, 2])
        gamma = math.atan2(R[2, 1], -R[2, 0])
    elif R[2, 2] > 0:
        alpha = math.atan2(R[1, 0], R[0, 0])
        gamma = 0.0
    else:
        alpha = math.atan2(-R[0, 1], -R[0, 0])
        gamma = 0.0
    return _reduce_angle(alpha), beta, _reduce_angle(gamma)


def from_rotvec(vec) -> GroupElement:
    return rotation3(Rotation.from_rotvec(np.asarray(vec, dtype=float)).as_matrix())


def from_matrix(group: GroupTag, matrix: np.ndarray) -> GroupElement:
    """Element whose fundamental representation is the given matrix."""
    if group == GroupTag.SO3:
        return rotation3(matrix)
    if group == GroupTag.SO2:
        matrix = np.asarray(matrix, dtype=float)
        return rotation2(math.atan2(matrix[1, 0], matrix[0, 0]))
    return identity(group)


def compose(g1: GroupElement, g2: GroupElement) -> GroupElement:
    if g1.group != g2.group:
        raise InvalidArgumentError(f"cannot compose {g1.group.value} with {g2.group.value}")
    if g1.group == GroupTag.SO2:
        return rotation2(g1.angle + g2.angle)
    if g1.group == GroupTag.SO3:
        return rotation3(g1.matrix @ g2.matrix)
    return g1


def inverse(g: GroupElement) -> GroupElement:
    if g.group == GroupTag.SO2:
        return rotation2(-g.angle)
    if g.group == GroupTag.SO3:
        return rotation3(g.matrix.T)
    return g


def exp_group(group: GroupTag, coeffs: Sequence[float]) -> GroupElement:
    """Exponential of sum_k coeffs[k] * basis_k of the Lie algebra.

    The basis is (L_x, L_y, L_z) with (L_k)_ij = -eps_kij for SO(3), so exp(s L_k) is
    the rotation by s about axis k, and the single generator [[0, -1], [1, 0]] for SO(2).
    """
    coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
    if group == GroupTag.SO3:
        if coeffs.shape != (3,):
            raise InvalidArgumentError(f"so(3) needs 3 coefficients, got {coeffs.shape[0]}")
        return from_rotvec(coeffs)
    if group == GroupTag.SO2:
        if coeffs.shape != (1,):
            raise InvalidArgumentError(f"so(2) needs 1 coefficient, got {coeffs.shape[0]}")
        return rotation2(coeffs[0])
    if coeffs.size:
        raise InvalidArgumentError("the trivial group has a zero-dimensional algebra")
    return identity(group)


def random_element(group: GroupTag, rng: np.random.Generator) -> GroupElement:
    """Haar-distributed sample."""
    if group == GroupTag.SO3:
        q = rng.standard_normal(4)
        q /= np.linalg.norm(q)
        return rotation3(Rotation.from_quat(q).as_matrix())
    if group == GroupTag.SO2:
        return rotation2(rng.uniform(0.0, TWO_PI))
    return identity(group)


def distance(g1: GroupElement, g2: GroupElement) -> float:
    """Frobenius distance between the fundamental representations."""
    if g1.group != g2.group:
        raise InvalidArgumentError(f"cannot compare {g1.group.value} with {g2.group.value}")
    return float(np.linalg.norm(g1.as_matrix() - g2.as_matrix()))
