from __future__ import annotations

import math
from functools import lru_cache
from itertools import product
from typing import Optional, Sequence

import numpy as np

from bundle.fields import FeatureField, aligned_neighbors
from config import MACE_SPATIAL_DEGREE
from errors import InvalidArgumentError, UnsupportedConfigurationError
from group_core.clebsch_gordan import coupling_tensor, default_coupling_path, product_multiplicity, reachable_degrees
from group_core.elements import GroupTag
from group_core.irreps import IrrepLabel, RepSpace, casimir_value
from group_core.quadrature import QuadratureRule, haar_rule
from manifold_core.harmonics import harmonics_stack
from manifold_core.heat_kernels import KernelSpec
from manifold_core.manifolds import ManifoldKind
from message_passing.kernel_expansion import KernelExpansion, expand_kernel
from message_passing.messages import (
    MessageConfig,
    MessageResult,
    ProductMode,
    TensorPlan,
    _scalar_message,
    _tensor_message,
    base_sums,
    fiber_factor,
    message_kernel,
    plan_scalar,
    plan_tensor,
    required_band_limit,
)
from utils import PhaseTimer, get_logger, parallel_map

logger = get_logger(__name__)

_SPATIAL = "abcd"
_FEATURE = "pqrs"


def _check_supported(f: FeatureField) -> None:
    M = f.graph.manifold
    if M.kind != ManifoldKind.EUCLIDEAN or M.dim != 3 or f.rep.group != GroupTag.SO3:
        raise UnsupportedConfigurationError(f"the spherical-expansion path needs euclidean(3) with SO3 features, got {M} / {f.rep.group.value}")


def character_factor(spec: KernelSpec, out_degree: int, order: int) -> float:
    """(1/d_out) int (k^G)^order chi_out dg, from the character expansion of k^G.

    (k^G)^n = sum over degree tuples of prod (2l+1) e^{-l(l+1)t} chi_l1 ... chi_ln, and each
    product of characters contains chi_out as often as out appears in l1 x ... x ln.
    """
    kappa = [(2 * l + 1) * math.exp(-l * (l + 1) * spec.t) for l in range(spec.l_grp + 1)]
    total = 0.0
    for degrees in product(range(spec.l_grp + 1), repeat=order):
        mult = product_multiplicity(degrees, out_degree)
        if mult:
            total += math.prod(kappa[l] for l in degrees) * mult
    return total / (2 * out_degree + 1)


def a_features(f: FeatureField, expansion: KernelExpansion) -> np.ndarray:
    """A_{i,lm} = sum_j R_lm(d_ij) Y_lm(r_ij / d_ij) h_j, shape (n, (L+1)^2, dim V)."""
    graph = f.graph
    L = expansion.L

    def node(i: int) -> np.ndarray:
        nbrs = graph.neighbors[i]
        total = np.zeros(((L + 1) ** 2, f.rep.dim))
        for j, h_j in zip(nbrs, aligned_neighbors(f, i, nbrs)):
            d = graph.positions[j] - graph.positions[i]
            r = float(np.linalg.norm(d))
            direction = d / r if r > 0 else np.array([0.0, 0.0, 1.0])
            radial = expansion.radial_coefficients(r)
            Y = harmonics_stack(L, direction[None, :])[0]
            total = total + np.outer(radial * Y, h_j)
        return total

    return np.array(parallel_map(node, range(graph.n)))


@lru_cache(maxsize=None)
def spatial_couplings(order: int, l_max: int) -> tuple[tuple[tuple[int, ...], np.ndarray], ...]:
    """Invariant couplings of `order` harmonic degrees up to l_max, one per admissible tuple.

    Each tensor has shape (2 l_1 + 1, ..., 2 l_n + 1) and couples left to right down to degree 0.
    """
    out = []
    for degrees in product(range(l_max + 1), repeat=order):
        if 0 not in reachable_degrees(degrees):
            continue
        C = coupling_tensor(degrees, default_coupling_path(degrees, 0), 0)[..., 0]
        C.setflags(write=False)
        out.append((degrees, C))
    return tuple(out)


def b_features(A: np.ndarray, slices: Sequence[slice], feature_coupling: np.ndarray, l_max: int) -> np.ndarray:
    """B-features from the A-tensor, shape (n, d_out).

    For every degree tuple (l_1, ..., l_n) that couples to an invariant, the factors
    A_i[l_k block, channel k] are multiplied out; their harmonic indices are contracted with the
    spatial coupling and their feature indices with `feature_coupling` (d_1, ..., d_n, d_out).
    """
    order = len(slices)
    if A.shape[1] < (l_max + 1) ** 2:
        raise InvalidArgumentError(f"A-tensor carries {A.shape[1]} harmonics, degree {l_max} needs {(l_max + 1) ** 2}")
    spatial, feature = _SPATIAL[:order], _FEATURE[:order]
    expr = ",".join([spatial, *(s + c for s, c in zip(spatial, feature)), feature + "z"]) + "->z"
    couplings = spatial_couplings(order, l_max)
    d_out = feature_coupling.shape[-1]

    def node(i: int) -> np.ndarray:
        total = np.zeros(d_out)
        for degrees, C in couplings:
            factors = [A[i, l * l:(l + 1) ** 2, sl] for l, sl in zip(degrees, slices)]
            total = total + np.einsum(expr, C, *factors, feature_coupling, optimize=True)
        return total

    return np.array(parallel_map(node, range(A.shape[0]))).reshape(A.shape[0], d_out)


def mace_reference_message(f: FeatureField, spec: KernelSpec, cfg: MessageConfig) -> MessageResult:
    """Message evaluated without group quadrature: radial x spherical-harmonic A-features,
    n-fold products contracted with Clebsch-Gordan tensors, fiber integral from characters."""
    _check_supported(f)
    kernel = message_kernel(spec, cfg)
    V = f.rep
    l_max = min(kernel.l_base, MACE_SPATIAL_DEGREE)
    timer = PhaseTimer()
    with timer.phase("expand"):
        expansion = expand_kernel(kernel, f.graph.manifold, l_max)
    with timer.phase("a_features"):
        A = a_features(f, expansion)
    trivial = IrrepLabel(GroupTag.SO3, 0)

    if cfg.mode == ProductMode.SCALAR_CHANNELS:
        tuples = plan_scalar(V, cfg)
        scalar_coupling = coupling_tensor((0,) * cfg.order, (0,) * max(cfg.order - 2, 0), 0)
        with timer.phase("products"):
            columns = []
            for tup in tuples:
                slices = [slice(V.channel(c).start, V.channel(c).start + 1) for c in tup]
                columns.append(b_features(A, slices, scalar_coupling, l_max)[:, 0])
            values = character_factor(kernel, 0, cfg.order) * np.stack(columns, axis=1)
        return MessageResult(values, RepSpace.single(trivial, len(tuples)), 0.0, timer.totals, ())

    plan = plan_tensor(V, cfg)
    out_label = IrrepLabel(GroupTag.SO3, plan.out_degree)
    with timer.phase("contract"):
        C = coupling_tensor(plan.degrees, plan.path, plan.out_degree)
        B = b_features(A, [V.channel(s).slice for s in plan.selectors], C, l_max)
        damping = math.exp(-kernel.t * casimir_value(out_label)) if cfg.casimir_damping else 1.0
        values = damping * character_factor(kernel, plan.out_degree, cfg.order) * B
    return MessageResult(values, RepSpace.single(out_label), 0.0, timer.totals, plan.path)


def band_limit_sweep(
    f: FeatureField, spec: KernelSpec, cfg: MessageConfig, orders: Optional[Sequence[int]] = None
) -> list[tuple[int, float]]:
    """Relative gap between the quadrature path and the expansion path per rule order.

    Rules below the certified order are used on purpose here; the engine itself refuses them.
    """
    _check_supported(f)
    kernel = message_kernel(spec, cfg)
    reference = mace_reference_message(f, spec, cfg).values
    scale = max(float(np.abs(reference).max()), 1e-300)
    if cfg.mode == ProductMode.SCALAR_CHANNELS:
        tuples = plan_scalar(f.rep, cfg)
        required = required_band_limit(kernel, cfg.order, 0)
    else:
        plan = plan_tensor(f.rep, cfg)
        required = required_band_limit(kernel, cfg.order, plan.out_degree)
    if orders is None:
        orders = range(0, required + 2)
    out = []
    for order in orders:
        rule = haar_rule(GroupTag.SO3, order)
        if cfg.mode == ProductMode.SCALAR_CHANNELS:
            values = _scalar_message(f, kernel, tuples, rule)
        elif cfg.order == 1:
            values = _pairwise_with_rule(f, kernel, cfg, plan, rule)
        else:
            values, _ = _tensor_message(f, kernel, cfg, plan, rule)
        gap = float(np.abs(values - reference).max()) / scale
        logger.debug("band-limit sweep: order %d gap %.3e", order, gap)
        out.append((order, gap))
    return out


def _pairwise_with_rule(f: FeatureField, kernel: KernelSpec, cfg: MessageConfig, plan: TensorPlan, rule: QuadratureRule) -> np.ndarray:
    label = IrrepLabel(GroupTag.SO3, plan.out_degree)
    B = base_sums(f, kernel)[:, f.rep.channel(plan.selectors[0]).slice]
    damping = math.exp(-kernel.t * casimir_value(label)) if cfg.casimir_damping else 1.0
    return damping * B @ fiber_factor(label, kernel, rule).T
