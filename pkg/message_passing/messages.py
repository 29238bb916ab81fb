from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations_with_replacement
from typing import Optional

import numpy as np

from bundle.fields import FeatureField, aligned_neighbors
from bundle.fiber import FiberPoint
from config import MAX_CORRELATION_ORDER, MAX_MESSAGE_OUTPUTS
from errors import InvalidArgumentError, UnsupportedConfigurationError
from group_core.clebsch_gordan import contract, coupling_tensor, default_coupling_path, reachable_degrees, validate_coupling_path
from group_core.elements import GroupElement, GroupTag, identity
from group_core.irreps import IrrepLabel, RepSpace, casimir_diagonal, casimir_value, irrep_matrices
from group_core.quadrature import QuadratureRule, haar_rule, weighted_sum
from manifold_core.heat_kernels import KernelSpec, base_kernel_matrix, bundle_kernel, check_time, group_kernel_of_angle
from utils import PhaseTimer, get_logger, parallel_map

logger = get_logger(__name__)


class ProductMode(str, Enum):
    SCALAR_CHANNELS = "scalar_channels"
    TENSOR_CONTRACTION = "tensor_contraction"


@dataclass(frozen=True)
class MessageConfig:
    """Settings of one message iteration.

    selectors pick the channel feeding each factor (default: channel 0 for every factor);
    channel_tuples list the ScalarChannels outputs (default: every non-decreasing tuple of
    trivial channels); coupling_path gives the intermediate degrees of the left-to-right
    coupling. t, when set, replaces the kernel time for this iteration.
    """

    order: int = 1
    mode: ProductMode = ProductMode.TENSOR_CONTRACTION
    out_degree: Optional[int] = None
    selectors: Optional[tuple[int, ...]] = None
    channel_tuples: Optional[tuple[tuple[int, ...], ...]] = None
    coupling_path: Optional[tuple[int, ...]] = None
    casimir_damping: bool = True
    t: Optional[float] = None
    quadrature_order: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "mode", ProductMode(self.mode))
        if not 1 <= self.order <= MAX_CORRELATION_ORDER:
            raise InvalidArgumentError(f"correlation order must be in 1..{MAX_CORRELATION_ORDER}, got {self.order}")
        if self.t is not None:
            check_time(self.t)
        if self.selectors is not None:
            object.__setattr__(self, "selectors", tuple(int(s) for s in self.selectors))
        if self.coupling_path is not None:
            object.__setattr__(self, "coupling_path", tuple(int(s) for s in self.coupling_path))
        if self.channel_tuples is not None:
            object.__setattr__(self, "channel_tuples", tuple(tuple(int(c) for c in tup) for tup in self.channel_tuples))


@dataclass(frozen=True, eq=False)
class MessageResult:
    values: np.ndarray
    rep: RepSpace
    quadrature_residual: float = 0.0
    timings: dict = field(default_factory=dict)
    coupling_path: tuple[int, ...] = ()
    l_exact: int = 0


@dataclass(frozen=True)
class TensorPlan:
    selectors: tuple[int, ...]
    degrees: tuple[int, ...]
    out_degree: int
    path: tuple[int, ...]


def message_kernel(spec: KernelSpec, cfg: MessageConfig) -> KernelSpec:
    return spec.with_time(cfg.t) if cfg.t is not None else spec


def plan_tensor(V: RepSpace, cfg: MessageConfig) -> TensorPlan:
    n = cfg.order
    selectors = cfg.selectors if cfg.selectors is not None else (0,) * n
    if len(selectors) != n:
        raise InvalidArgumentError(f"{n} factors need {n} channel selectors, got {len(selectors)}")
    degrees = tuple(V.channel(s).label.degree for s in selectors)
    out = cfg.out_degree
    if out is None:
        out = degrees[0] if n == 1 else min(reachable_degrees(degrees))
    if n == 1:
        if out != degrees[0]:
            raise InvalidArgumentError(f"a single factor of degree {degrees[0]} cannot produce degree {out}")
        return TensorPlan(selectors, degrees, out, ())
    if V.group != GroupTag.SO3:
        raise UnsupportedConfigurationError(f"tensor contraction needs SO3 features, got {V.group.value}")
    if cfg.coupling_path is not None:
        validate_coupling_path(degrees, cfg.coupling_path, out)
        path = cfg.coupling_path
    else:
        path = default_coupling_path(degrees, out)
    return TensorPlan(selectors, degrees, out, tuple(path))


def plan_scalar(V: RepSpace, cfg: MessageConfig) -> tuple[tuple[int, ...], ...]:
    trivial = V.trivial_channels()
    if cfg.channel_tuples is not None:
        tuples = cfg.channel_tuples
    elif cfg.selectors is not None:
        tuples = (cfg.selectors,)
    else:
        tuples = tuple(combinations_with_replacement(trivial, cfg.order))
    if not tuples:
        raise InvalidArgumentError("scalar-channel messages need at least one trivial channel")
    for tup in tuples:
        if len(tup) != cfg.order:
            raise InvalidArgumentError(f"channel tuple {tup} has {len(tup)} entries, order is {cfg.order}")
        for c in tup:
            if not V.channel(c).label.is_trivial:
                raise InvalidArgumentError(f"channel {c} is {V.channel(c).label}, scalar-channel products need trivial channels")
    if len(tuples) > MAX_MESSAGE_OUTPUTS:
        raise InvalidArgumentError(f"{len(tuples)} outputs per node exceed the limit {MAX_MESSAGE_OUTPUTS}")
    return tuples


def required_band_limit(spec: KernelSpec, order: int, out_degree: int) -> int:
    return order * spec.l_grp + out_degree


def certified_rule(group: GroupTag, required: int, cfg: MessageConfig) -> QuadratureRule:
    if cfg.quadrature_order is not None:
        if cfg.quadrature_order < required:
            raise InvalidArgumentError(
                f"insufficient quadrature certification: rule exact to degree {cfg.quadrature_order}, "
                f"integrand needs {required}"
            )
        return haar_rule(group, cfg.quadrature_order)
    return haar_rule(group, required)


def base_sums(f: FeatureField, spec: KernelSpec) -> np.ndarray:
    """B_i = sum_j k^M(r_i, r_j) h_j over neighbors in ascending order, in node i's gauge."""
    graph = f.graph
    K = base_kernel_matrix(
        graph.manifold, spec.t, graph.positions, graph.positions, spec.l_base, spec.coefficients, spec.radial_profile, spec.envelope_radius
    )

    def node(i: int) -> np.ndarray:
        nbrs = graph.neighbors[i]
        total = np.zeros(f.rep.dim)
        for j, h_j in zip(nbrs, aligned_neighbors(f, i, nbrs)):
            total = total + K[i, j] * h_j
        return total

    return np.array(parallel_map(node, range(graph.n))).reshape(graph.n, f.rep.dim)


def atomic_basis(i: int, f: FeatureField, spec: KernelSpec, g: GroupElement) -> np.ndarray:
    """A_i(g) = sum_j k^P(p_i, p_j g) h_j with every fiber point in node i's gauge."""
    graph = f.graph
    M = graph.manifold
    e = identity(M.structure_group)
    p_i = FiberPoint(graph.positions[i], e, f.charts[i])
    nbrs = graph.neighbors[i]
    total = np.zeros(f.rep.dim)
    for j, h_j in zip(nbrs, aligned_neighbors(f, i, nbrs)):
        p_j = FiberPoint(graph.positions[j], e, f.charts[i]).act(g)
        total = total + bundle_kernel(spec, M, p_i, p_j) * h_j
    return total


def direct_group_integral(f: FeatureField, i: int, spec: KernelSpec, rule: QuadratureRule) -> np.ndarray:
    """sum_q w_q rho(g_q)^-1 A_i(g_q) at one node, with A_i taken pointwise from the bundle kernel."""
    A = np.array([atomic_basis(i, f, spec, g) for g in rule.nodes]).reshape(len(rule), f.rep.dim)
    out = np.zeros(f.rep.dim)
    for channel in f.rep.channels:
        D = irrep_matrices(channel.label, rule)
        out[channel.slice] = np.einsum("q,qji,qj->i", rule.weights, D, A[:, channel.slice])
    return out


def kernel_at_nodes(group: GroupTag, spec: KernelSpec, rule: QuadratureRule) -> np.ndarray:
    return group_kernel_of_angle(group, spec.t, rule.rotation_angles, spec.l_grp)


def fiber_factor(label: IrrepLabel, spec: KernelSpec, rule: QuadratureRule, order: int = 1) -> np.ndarray:
    """sum_q w_q k^G(g_q)^order rho(g_q)^-1 for one irrep; a multiple of the identity."""
    k = kernel_at_nodes(label.group, spec, rule) ** order
    D = irrep_matrices(label, rule)
    return weighted_sum(rule.weights * k, np.transpose(D, (0, 2, 1)))


def _space_factor(V: RepSpace, spec: KernelSpec, rule: QuadratureRule) -> np.ndarray:
    cache = {}
    out = np.zeros((V.dim, V.dim))
    for channel in V.channels:
        if channel.label not in cache:
            cache[channel.label] = fiber_factor(channel.label, spec, rule)
        out[channel.slice, channel.slice] = cache[channel.label]
    return out


def _damping(V: RepSpace, spec: KernelSpec, cfg: MessageConfig) -> np.ndarray:
    if not cfg.casimir_damping:
        return np.ones(V.dim)
    return np.exp(-spec.t * casimir_diagonal(V))


def _sample_node(f: FeatureField) -> int:
    for i, nbrs in enumerate(f.graph.neighbors):
        if nbrs:
            return i
    return 0


def pairwise_message(f: FeatureField, spec: KernelSpec, cfg: MessageConfig) -> MessageResult:
    """m_i = e^{-t Cas} sum_q w_q rho(g_q)^-1 A_i(g_q).

    Every fiber point of the sum sits in node i's gauge with the identity frame, so
    A_i(g) = k^G(g) B_i and the group integral reduces to one factor per irrep block.
    The residual compares one node against the unfactorized integral on a rule one order
    higher.
    """
    if cfg.order != 1:
        raise InvalidArgumentError(f"pairwise messages have order 1, got {cfg.order}")
    kernel = message_kernel(spec, cfg)
    V = f.rep
    rule = certified_rule(V.group, required_band_limit(kernel, 1, V.max_degree), cfg)
    timer = PhaseTimer()
    with timer.phase("base"):
        B = base_sums(f, kernel)
    with timer.phase("fiber"):
        G = _space_factor(V, kernel, rule)
    damping = _damping(V, kernel, cfg)
    with timer.phase("apply"):
        values = (B @ G.T) * damping
    with timer.phase("residual"):
        i = _sample_node(f)
        direct = direct_group_integral(f, i, kernel, haar_rule(V.group, rule.l_exact + 1))
        residual = float(np.abs(direct * damping - values[i]).max())
    return MessageResult(values, V, residual, timer.totals, (), rule.l_exact)


def _scalar_message(f: FeatureField, kernel: KernelSpec, tuples, rule: QuadratureRule) -> np.ndarray:
    V = f.rep
    B = base_sums(f, kernel)
    k = kernel_at_nodes(V.group, kernel, rule)
    columns = np.array([[V.channel(c).start for c in tup] for tup in tuples])

    def node(i: int) -> np.ndarray:
        A = k[:, None] * B[i][None, :]  # (Q, dim): A_i(g_q)
        return rule.weights @ np.prod(A[:, columns], axis=2)

    return np.array(parallel_map(node, range(f.graph.n))).reshape(f.graph.n, len(tuples))


def tensor_contractions(f: FeatureField, B: np.ndarray, plan: TensorPlan) -> np.ndarray:
    """C[B^(1), ..., B^(n)] per node, shape (n_nodes, 2 out + 1)."""
    C = coupling_tensor(plan.degrees, plan.path, plan.out_degree)
    slices = [f.rep.channel(s).slice for s in plan.selectors]
    return np.array([contract(C, [B[i][sl] for sl in slices]) for i in range(f.graph.n)])


def _tensor_message(f: FeatureField, kernel: KernelSpec, cfg: MessageConfig, plan: TensorPlan, rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray]:
    label = IrrepLabel(f.rep.group, plan.out_degree)
    B = base_sums(f, kernel)
    contracted = tensor_contractions(f, B, plan)
    F = fiber_factor(label, kernel, rule, cfg.order)
    damping = np.exp(-kernel.t * casimir_value(label)) if cfg.casimir_damping else 1.0
    return damping * contracted @ F.T, contracted


def higher_order_message(f: FeatureField, spec: KernelSpec, cfg: MessageConfig) -> MessageResult:
    V = f.rep
    kernel = message_kernel(spec, cfg)
    trivial = IrrepLabel(V.group, 0)

    if cfg.mode == ProductMode.SCALAR_CHANNELS:
        tuples = plan_scalar(V, cfg)
        if cfg.order == 1:
            pm = pairwise_message(f, spec, cfg)
            columns = [V.channel(tup[0]).start for tup in tuples]
            return MessageResult(pm.values[:, columns], RepSpace.single(trivial, len(tuples)), pm.quadrature_residual, pm.timings, (), pm.l_exact)
        rule = certified_rule(V.group, required_band_limit(kernel, cfg.order, 0), cfg)
        timer = PhaseTimer()
        with timer.phase("products"):
            values = _scalar_message(f, kernel, tuples, rule)
        with timer.phase("residual"):
            finer = _scalar_message(f, kernel, tuples, haar_rule(V.group, rule.l_exact + 1))
            residual = float(np.abs(finer[_sample_node(f)] - values[_sample_node(f)]).max())
        return MessageResult(values, RepSpace.single(trivial, len(tuples)), residual, timer.totals, (), rule.l_exact)

    plan = plan_tensor(V, cfg)
    out_label = IrrepLabel(V.group, plan.out_degree)
    if cfg.order == 1:
        pm = pairwise_message(f, spec, cfg)
        sl = V.channel(plan.selectors[0]).slice
        return MessageResult(pm.values[:, sl], RepSpace.single(out_label), pm.quadrature_residual, pm.timings, (), pm.l_exact)
    rule = certified_rule(V.group, required_band_limit(kernel, cfg.order, plan.out_degree), cfg)
    timer = PhaseTimer()
    with timer.phase("contract"):
        values, contracted = _tensor_message(f, kernel, cfg, plan, rule)
    with timer.phase("residual"):
        i = _sample_node(f)
        finer = fiber_factor(out_label, kernel, haar_rule(V.group, rule.l_exact + 1), cfg.order)
        coarse = fiber_factor(out_label, kernel, rule, cfg.order)
        residual = float(np.abs((finer - coarse) @ contracted[i]).max())
    logger.debug("tensor message %s -> %d via path %s", plan.degrees, plan.out_degree, plan.path)
    return MessageResult(values, RepSpace.single(out_label), residual, timer.totals, plan.path, rule.l_exact)


def output_space(V: RepSpace, cfg: MessageConfig) -> RepSpace:
    """Space the messages of one iteration live in; order-1 TensorContraction keeps all of V."""
    if cfg.mode == ProductMode.SCALAR_CHANNELS:
        return RepSpace.single(IrrepLabel(V.group, 0), len(plan_scalar(V, cfg)))
    if cfg.order == 1:
        return V
    return RepSpace.single(IrrepLabel(V.group, plan_tensor(V, cfg).out_degree))
