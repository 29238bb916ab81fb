from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import yaml
from jsonargparse import ArgumentParser

from config import DEFAULT_SEED
from errors import ConfigParseError, ConfigValidationError, GMFlowError
from group_core.elements import GroupTag
from group_core.irreps import IrrepLabel, RepSpace
from manifold_core.heat_kernels import KernelSpec
from manifold_core.manifolds import Manifold, ManifoldKind
from utils import get_logger

logger = get_logger(__name__)

SCHEDULE_MODES = ("diffusion", "beltrami", "message")
INIT_MODES = ("zeros", "random", "pattern")


@dataclass
class ManifoldSettings:
    kind: str = "euclidean"
    dim: int = 3


@dataclass
class KernelSettings:
    t: float = 0.5
    l_base: int = 8
    l_grp: int = 2
    coefficients: Optional[List[float]] = None
    radial_profile: str = "gaussian"
    envelope_radius: Optional[float] = None


@dataclass
class MessageSettings:
    order: int = 1
    product_mode: str = "tensor_contraction"
    out_degree: Optional[int] = None
    selectors: Optional[List[int]] = None
    channel_tuples: Optional[List[List[int]]] = None
    coupling_path: Optional[List[int]] = None
    casimir_damping: bool = True
    t: Optional[float] = None


@dataclass
class ScheduleSettings:
    mode: str = "diffusion"
    steps: int = 10
    dt: Optional[float] = None  # filled from the stability bound when missing
    weights: str = "heat_kernel"
    t0: float = 0.5
    kappa: float = 1.0
    casimir_term: bool = True
    attention: str = "constant"
    attention_scale: float = 1.0
    equivariance_every: int = 0  # 0 disables the per-step spot check
    message: MessageSettings = field(default_factory=MessageSettings)


@dataclass
class UpdateSettings:
    mode: str = "linear"
    dense: Optional[List[List[float]]] = None  # linear: full matrix on the message space
    gate_weights: Optional[List[List[float]]] = None  # gated: (channels, gate inputs)
    gate_bias: Optional[List[float]] = None


@dataclass
class GraphSettings:
    path: Optional[str] = None
    n: int = 10
    init: str = "random"


@dataclass
class OutputSettings:
    out_dir: str = "runs"
    trace: str = "trace.csv"
    final_state: str = "final_state.json"


@dataclass
class RunConfig:
    manifold: ManifoldSettings = field(default_factory=ManifoldSettings)
    group: Optional[str] = None
    rep: List[Dict[str, int]] = field(default_factory=lambda: [{"irrep": 0, "multiplicity": 1}])
    cutoff: float = 1.5
    kernel: KernelSettings = field(default_factory=KernelSettings)
    schedule: ScheduleSettings = field(default_factory=ScheduleSettings)
    update: UpdateSettings = field(default_factory=UpdateSettings)
    readout: Optional[List[float]] = None
    quadrature_order: Optional[int] = None
    seed: int = DEFAULT_SEED
    graph: GraphSettings = field(default_factory=GraphSettings)
    output: OutputSettings = field(default_factory=OutputSettings)

    def manifold_obj(self) -> Manifold:
        return Manifold(ManifoldKind(self.manifold.kind), self.manifold.dim)

    def rep_space(self) -> RepSpace:
        group = self.manifold_obj().structure_group
        return RepSpace(tuple((IrrepLabel(group, int(b["irrep"])), int(b.get("multiplicity", 1))) for b in self.rep))

    def kernel_spec(self) -> KernelSpec:
        k = self.kernel
        coefficients = tuple(k.coefficients) if k.coefficients is not None else None
        return KernelSpec(k.t, k.l_base, k.l_grp, k.radial_profile, k.envelope_radius, coefficients)

    def message_config(self):
        from message_passing.messages import MessageConfig

        m = self.schedule.message
        return MessageConfig(
            order=m.order,
            mode=m.product_mode,
            out_degree=m.out_degree,
            selectors=tuple(m.selectors) if m.selectors is not None else None,
            channel_tuples=tuple(tuple(t) for t in m.channel_tuples) if m.channel_tuples is not None else None,
            coupling_path=tuple(m.coupling_path) if m.coupling_path is not None else None,
            casimir_damping=m.casimir_damping,
            t=m.t,
            quadrature_order=self.quadrature_order,
        )

    def energy_config(self):
        from diffusion.laplacian import EnergyConfig

        s = self.schedule
        return EnergyConfig(s.weights, s.t0, s.kappa, s.casimir_term, self.kernel.l_base)


def _parser() -> ArgumentParser:
    parser = ArgumentParser(exit_on_error=False)
    parser.add_argument("--run", type=RunConfig)
    return parser


def _read_yaml(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as err:
        mark = err.problem_mark or err.context_mark
        line, column = (mark.line + 1, mark.column + 1) if mark is not None else (0, 0)
        raise ConfigParseError(path, line, column, err.problem or str(err)) from err
    except yaml.YAMLError as err:
        raise ConfigParseError(path, 0, 0, str(err)) from err
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigParseError(path, 1, 1, f"top level must be a mapping, got {type(raw).__name__}")
    return raw


def parse_config(raw: dict) -> RunConfig:
    """Typed RunConfig from a plain mapping; types and unknown keys are checked by jsonargparse."""
    parser = _parser()
    try:
        ns = parser.parse_object({"run": raw})
        return parser.instantiate_classes(ns).run
    except GMFlowError:
        raise
    except Exception as err:
        raise ConfigValidationError("config", str(err).strip()) from err


def _wrap(field_name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigValidationError:
        raise
    except (GMFlowError, ValueError) as err:
        raise ConfigValidationError(field_name, str(err)) from err


def build_update(u: UpdateSettings, space: RepSpace):
    """Update rule acting on the message space of one iteration."""
    from message_passing.updates import GatedUpdate, LinearUpdate

    if u.mode == "linear":
        if u.dense is None:
            return LinearUpdate.identity(space)
        return LinearUpdate.from_dense(space, space, u.dense)
    if u.mode == "gated":
        gates = space.trivial_channels()
        if u.gate_weights is None:
            return GatedUpdate(space, gates, np.zeros((len(space.channels), len(gates))), u.gate_bias)
        return GatedUpdate(space, gates, np.asarray(u.gate_weights, dtype=float), u.gate_bias)
    raise ConfigValidationError("update.mode", f"expected linear or gated, got {u.mode!r}")


def validate_config(cfg: RunConfig) -> RunConfig:
    """Re-checks every cross-module precondition and fills defaults."""
    from diffusion.laplacian import edge_weights, stability_dt, unit_weights
    from message_passing.messages import ProductMode, message_kernel, output_space, plan_scalar, plan_tensor, required_band_limit

    M = _wrap("manifold", cfg.manifold_obj)
    if cfg.group is not None:
        try:
            group = GroupTag(cfg.group)
        except ValueError:
            raise ConfigValidationError("group", f"unknown group {cfg.group!r}") from None
        if group != M.structure_group:
            raise ConfigValidationError("group", f"{M} has structure group {M.structure_group.value}, config says {group.value}")
    for k, block in enumerate(cfg.rep):
        unknown = set(block) - {"irrep", "multiplicity"}
        if unknown or "irrep" not in block:
            raise ConfigValidationError(f"rep[{k}]", "blocks are {irrep: int, multiplicity: int}")
    V = _wrap("rep", cfg.rep_space)
    if not cfg.cutoff > 0:
        raise ConfigValidationError("cutoff", f"must be > 0, got {cfg.cutoff}")
    if M.kind == ManifoldKind.SPHERE2 and cfg.cutoff >= math.pi / 2:
        raise ConfigValidationError("cutoff", f"{cfg.cutoff} violates the chart-coverage rule: r_c must be < pi/2 on the sphere")
    spec = _wrap("kernel", cfg.kernel_spec)
    if M.kind == ManifoldKind.EUCLIDEAN and spec.coefficients is not None:
        logger.warning("kernel coefficient overrides are ignored on %s", M)

    s = cfg.schedule
    if s.mode not in SCHEDULE_MODES:
        raise ConfigValidationError("schedule.mode", f"expected one of {list(SCHEDULE_MODES)}, got {s.mode!r}")
    if s.steps < 0:
        raise ConfigValidationError("schedule.steps", f"must be >= 0, got {s.steps}")
    if s.dt is not None and not s.dt > 0:
        raise ConfigValidationError("schedule.dt", f"must be > 0, got {s.dt}")
    if s.attention not in ("constant", "gaussian_distance"):
        raise ConfigValidationError("schedule.attention", f"unknown attention {s.attention!r}")
    if s.equivariance_every < 0:
        raise ConfigValidationError("schedule.equivariance_every", "must be >= 0")
    energy = _wrap("schedule", cfg.energy_config)
    if cfg.graph.init not in INIT_MODES:
        raise ConfigValidationError("graph.init", f"expected one of {list(INIT_MODES)}, got {cfg.graph.init!r}")
    if cfg.graph.path is None and cfg.graph.n < 1:
        raise ConfigValidationError("graph.n", f"must be >= 1, got {cfg.graph.n}")

    quadrature_order = cfg.quadrature_order
    if s.mode == "message":
        mcfg = _wrap("schedule.message", cfg.message_config)
        kernel = message_kernel(spec, mcfg)
        if mcfg.mode == ProductMode.SCALAR_CHANNELS:
            _wrap("schedule.message.channel_tuples", plan_scalar, V, mcfg)
            required = required_band_limit(kernel, mcfg.order, 0)
        else:
            plan = _wrap("schedule.message.out_degree", plan_tensor, V, mcfg)
            degree = V.max_degree if mcfg.order == 1 else plan.out_degree
            required = required_band_limit(kernel, mcfg.order, degree)
        if quadrature_order is not None and quadrature_order < required:
            raise ConfigValidationError(
                "quadrature_order", f"insufficient quadrature certification: {quadrature_order} < required {required}"
            )
        quadrature_order = required if quadrature_order is None else quadrature_order
        out = output_space(V, mcfg)
        _wrap("update", build_update, cfg.update, out)
        if out != V and s.steps > 1:
            raise ConfigValidationError(
                "schedule.steps", f"messages map {V.describe()} to {out.describe()}, so the schedule can run one step only"
            )

    if cfg.readout is not None:
        if len(cfg.readout) != len(V.channels):
            raise ConfigValidationError("readout", f"{len(cfg.readout)} weights for {len(V.channels)} channels")

    dt = s.dt
    if dt is None and s.mode != "message":
        from cli_io.graph_io import initial_state

        graph, _ = initial_state(cfg)
        if s.mode == "beltrami":
            weights = s.attention_scale * unit_weights(graph)
            dt = stability_dt(weights, V, 1.0)
        else:
            dt = stability_dt(edge_weights(graph, energy), V, energy.kappa)
        logger.debug("schedule.dt filled from the stability bound: %r", dt)
    return replace(cfg, quadrature_order=quadrature_order, schedule=replace(s, dt=dt))


def load_config(path, seed: Optional[int] = None) -> RunConfig:
    path = Path(path)
    raw = _read_yaml(path)
    cfg = parse_config(raw)
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    cfg = validate_config(cfg)
    logger.info("loaded %s: %s, %d channels, %s schedule", path.name, cfg.manifold_obj(), len(cfg.rep_space().channels), cfg.schedule.mode)
    return cfg
