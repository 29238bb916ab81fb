from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

from config import CG_SEED
from errors import InvalidArgumentError
from group_core.elements import GroupTag
from group_core.irreps import IrrepLabel, irrep_matrices
from group_core.quadrature import haar_rule


def triangle(l1: int, l2: int, l: int) -> bool:
    return abs(l1 - l2) <= l <= l1 + l2


@lru_cache(maxsize=None)
def clebsch_gordan(l1: int, l2: int, l: int) -> np.ndarray:
    """Real coupling tensor C of shape (2l1+1, 2l2+1, 2l+1) with (rho1 x rho2) C = C rho.

    C spans the invariant line of V1 x V2 x V; it is obtained by projecting a fixed random
    tensor with the Haar average of rho1 x rho2 x rho, normalized to unit Frobenius norm with
    the first nonzero entry (lexicographic order) positive.
    """
    if min(l1, l2, l) < 0:
        raise InvalidArgumentError(f"degrees must be >= 0, got ({l1}, {l2}, {l})")
    shape = (2 * l1 + 1, 2 * l2 + 1, 2 * l + 1)
    if not triangle(l1, l2, l):
        out = np.zeros(shape)
        out.setflags(write=False)
        return out
    rule = haar_rule(GroupTag.SO3, l1 + l2 + l)
    D1, D2, D = (irrep_matrices(IrrepLabel(GroupTag.SO3, d), rule) for d in (l1, l2, l))
    x0 = np.random.default_rng(CG_SEED).standard_normal(shape)
    v = np.einsum("q,qai,qbj,qck,ijk->abc", rule.weights, D1, D2, D, x0, optimize=True)
    v /= np.linalg.norm(v)
    flat = v.ravel()
    first = flat[np.flatnonzero(np.abs(flat) > 1e-10)[0]]
    if first < 0:
        v = -v
    v.setflags(write=False)
    return v


def reachable_degrees(degrees: Sequence[int]) -> set[int]:
    """Degrees contained in the tensor product of the given SO(3) irreps."""
    reach = {degrees[0]}
    for d in degrees[1:]:
        reach = {L for mu in reach for L in range(abs(mu - d), mu + d + 1)}
    return reach


def product_multiplicity(degrees: Sequence[int], out: int) -> int:
    """Multiplicity of degree out inside the tensor product of the given irreps."""
    mult = {degrees[0]: 1}
    for d in degrees[1:]:
        nxt: dict[int, int] = {}
        for mu, k in mult.items():
            for L in range(abs(mu - d), mu + d + 1):
                nxt[L] = nxt.get(L, 0) + k
        mult = nxt
    return mult.get(out, 0)


def default_coupling_path(degrees: Sequence[int], out: int) -> tuple[int, ...]:
    """Left-to-right intermediate degrees mu_1..mu_{n-2}, smallest admissible first."""
    degrees = tuple(degrees)
    if not degrees:
        raise InvalidArgumentError("coupling needs at least one factor")
    if out not in reachable_degrees(degrees):
        raise InvalidArgumentError(
            f"no admissible coupling path: degree {out} is not in the product of {list(degrees)} "
            f"(triangle rule |a - b| <= c <= a + b fails)"
        )
    path = []
    current = degrees[0]
    for k in range(1, len(degrees) - 1):
        rest = degrees[k + 1:]
        for mu in range(abs(current - degrees[k]), current + degrees[k] + 1):
            if out in reachable_degrees((mu,) + rest):
                break
        path.append(mu)
        current = mu
    return tuple(path)


def validate_coupling_path(degrees: Sequence[int], path: Sequence[int], out: int) -> None:
    degrees = tuple(degrees)
    expected = max(len(degrees) - 2, 0)
    if len(path) != expected:
        raise InvalidArgumentError(f"coupling path for {len(degrees)} factors needs {expected} intermediate degrees, got {len(path)}")
    chain = [degrees[0]] + list(path) + [out]
    for k, d in enumerate(degrees[1:]):
        if not triangle(chain[k], d, chain[k + 1]):
            raise InvalidArgumentError(
                f"no admissible coupling path: step {chain[k]} x {d} -> {chain[k + 1]} violates the triangle rule"
            )


def coupling_tensor(degrees: Sequence[int], path: Sequence[int], out: int) -> np.ndarray:
    """Intertwiner from the tensor product of the factors to degree out.

    Shape (d_1, ..., d_n, d_out); built by coupling left to right through the path.
    """
    degrees = tuple(degrees)
    if len(degrees) == 1:
        if degrees[0] != out:
            raise InvalidArgumentError(f"a single factor of degree {degrees[0]} cannot produce degree {out}")
        return np.eye(2 * out + 1)
    validate_coupling_path(degrees, path, out)
    chain = list(path) + [out]
    C = clebsch_gordan(degrees[0], degrees[1], chain[0])
    for k, d in enumerate(degrees[2:]):
        C = np.tensordot(C, clebsch_gordan(chain[k], d, chain[k + 1]), axes=([-1], [0]))
    return C


def contract(C: np.ndarray, factors: Sequence[np.ndarray]) -> np.ndarray:
    """C[a, b, ..., c] x_a y_b ... summed over the factor indices."""
    out = C
    for x in factors:
        out = np.tensordot(x, out, axes=([0], [0]))
    return out
