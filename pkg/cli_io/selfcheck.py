from __future__ import annotations

import json
import math
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from rich.console import Console
from rich.table import Table

from bundle.atlas import NORTH, SOUTH, equator_winding, transition_function
from bundle.equivariance import check_equivariance, random_isometry
from bundle.fiber import FiberPoint
from bundle.fields import FeatureField, evaluate_equivariant, from_equivariant, gauge_transform
from diffusion.flows import beltrami_step, constant_attention, energy_terms, euler_step, propagate_exact, propagate_factorized
from diffusion.graph import build_graph
from diffusion.laplacian import EnergyConfig, edge_weights, stability_dt, unit_weights
from errors import InvalidArgumentError
from group_core.elements import GroupTag, compose, distance, identity, inverse, random_element
from group_core.irreps import IrrepLabel, RepSpace, casimir, casimir_value, character_of_angle, irrep_matrices, rep_matrix
from group_core.quadrature import haar_rule, weighted_sum
from manifold_core.heat_kernels import KernelSpec, base_kernel_matrix, group_kernel_of_angle
from manifold_core.manifolds import Manifold
from manifold_core.sampling import circle_grid, sample_points, sphere_grid
from message_passing.mace import mace_reference_message
from message_passing.messages import MessageConfig, ProductMode, higher_order_message, pairwise_message
from message_passing.updates import GatedUpdate, LinearUpdate, readout, update
from utils import get_logger, get_threads, set_threads

logger = get_logger(__name__)

EQUIVARIANCE_TOL = 1e-8
MACE_TOL = 1e-8


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    residual: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual)) and self.residual <= self.tol

    def to_dict(self) -> dict:
        return {"suite": self.suite, "name": self.name, "residual": self.residual, "tol": self.tol, "passed": self.passed}


def _max_abs(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.abs(a).max()) if a.size else 0.0


def casimir_suite(seed: int) -> list[CheckResult]:
    out = []
    for group in (GroupTag.SO3, GroupTag.SO2):
        for degree in range(5):
            label = IrrepLabel(group, degree)
            residual = _max_abs(casimir(label) - casimir_value(label) * np.eye(label.dim))
            out.append(CheckResult("casimir", f"{group.value} {label}", residual, 1e-12))
    return out


def schur_suite(seed: int) -> list[CheckResult]:
    out = []
    for group in (GroupTag.SO3, GroupTag.SO2):
        for degree in range(1, 5):
            label = IrrepLabel(group, degree)
            rule = haar_rule(group, 2 * degree)
            D = irrep_matrices(label, rule)
            out.append(CheckResult("schur", f"{group.value} {label} mean", _max_abs(weighted_sum(rule.weights, D)), 1e-10))
            chi = character_of_angle(label, rule.rotation_angles)
            projected = weighted_sum(rule.weights * chi, np.transpose(D, (0, 2, 1)))
            # SO(2) blocks are real forms of two complex characters, the average is I
            target = np.eye(label.dim) / (label.dim if group == GroupTag.SO3 else 1.0)
            out.append(CheckResult("schur", f"{group.value} {label} character", _max_abs(projected - target), 1e-10))
    return out


def semigroup_suite(seed: int) -> list[CheckResult]:
    out = []
    rng = np.random.default_rng(seed)
    L = 16
    S2, S1, E3 = Manifold.sphere2(), Manifold.circle(), Manifold.euclidean(3)
    pts, w = sphere_grid(2 * L)
    angles, cw = circle_grid(2 * L)
    x = sample_points(S2, 2, seed)
    for t in (0.1, 0.5, 1.0):
        mass = float(base_kernel_matrix(S2, t, x[:1], pts, L) @ w)
        out.append(CheckResult("semigroup", f"sphere2 normalization t={t}", abs(mass - 1.0), 1e-8))
    for s, t in ((0.1, 0.2), (0.3, 0.5), (0.5, 1.0)):
        left = base_kernel_matrix(S2, s, x[:1], pts, L)[0]
        right = base_kernel_matrix(S2, t, pts, x[1:], L)[:, 0]
        direct = base_kernel_matrix(S2, s + t, x[:1], x[1:], L)[0, 0]
        out.append(CheckResult("semigroup", f"sphere2 s={s} t={t}", abs(float((left * w) @ right) - direct), 1e-8))
        a = rng.uniform(0.0, 2.0 * math.pi, size=(2, 1))
        left = base_kernel_matrix(S1, s, a[:1], angles, L)[0]
        right = base_kernel_matrix(S1, t, angles, a[1:], L)[:, 0]
        direct = base_kernel_matrix(S1, s + t, a[:1], a[1:], L)[0, 0]
        out.append(CheckResult("semigroup", f"circle s={s} t={t}", abs(float((left * cw) @ right) - direct), 1e-8))
    p = rng.standard_normal((2, 3))
    for t in (0.1, 1.0):
        r2 = float(np.sum((p[0] - p[1]) ** 2))
        closed = (4.0 * math.pi * t) ** -1.5 * math.exp(-r2 / (4.0 * t))
        got = float(base_kernel_matrix(E3, t, p[:1], p[1:], 0)[0, 0])
        out.append(CheckResult("semigroup", f"euclidean(3) gaussian t={t}", abs(got - closed), 1e-14))
    for group in (GroupTag.SO3, GroupTag.SO2):
        rule = haar_rule(group, 2)
        mass = float(rule.weights @ group_kernel_of_angle(group, 0.4, rule.rotation_angles, 2))
        out.append(CheckResult("semigroup", f"{group.value} kernel mass", abs(mass - 1.0), 1e-12))
    out.extend(_factorization_checks(seed))
    return out


def _factorization_checks(seed: int) -> list[CheckResult]:
    M = Manifold.euclidean(3)
    graph = build_graph(M, sample_points(M, 10, seed), 0.7)
    V = RepSpace.from_degrees(GroupTag.SO3, [(0, 1), (1, 1), (2, 1)])
    f = FeatureField.create(graph, V, np.random.default_rng(seed).standard_normal((graph.n, V.dim)))
    W = edge_weights(graph, EnergyConfig())
    exact = propagate_exact(f, 0.3, W).values
    out = []
    for first in (True, False):
        factored = propagate_factorized(f, 0.3, W, casimir_first=first).values
        order = "casimir first" if first else "dirichlet first"
        out.append(CheckResult("semigroup", f"propagator factorization, {order}", _max_abs(exact - factored), 1e-12))
    return out


def _scene(kind: str, seed: int) -> tuple[FeatureField, RepSpace]:
    rng = np.random.default_rng(seed)
    if kind == "euclidean(2)":
        M, cutoff = Manifold.euclidean(2), 0.6
        V = RepSpace.from_degrees(GroupTag.SO2, [(0, 2), (1, 1), (2, 1)])
    elif kind == "euclidean(3)":
        M, cutoff = Manifold.euclidean(3), 0.7
        V = RepSpace.from_degrees(GroupTag.SO3, [(0, 2), (1, 1), (2, 1)])
    else:
        # invariant channels only: neighbor frames are compared without parallel transport
        M, cutoff = Manifold.sphere2(), 1.2
        V = RepSpace.from_degrees(GroupTag.SO2, [(0, 3)])
    graph = build_graph(M, sample_points(M, 10, seed), cutoff)
    return FeatureField.create(graph, V, rng.standard_normal((graph.n, V.dim))), V


def equivariance_maps(V: RepSpace, spec: KernelSpec, seed: int) -> dict[str, Callable]:
    rng = np.random.default_rng(seed)
    pair_cfg = MessageConfig()
    scalar_cfg = MessageConfig(order=2, mode=ProductMode.SCALAR_CHANNELS)
    linear = LinearUpdate(V, V, {label: rng.standard_normal((m, m)) for label, m in V.blocks})
    weights = [1.0 if c.label.is_trivial else 0.0 for c in V.channels]
    maps = {
        "pairwise message": lambda f: pairwise_message(f, spec, pair_cfg),
        "scalar-channel message n=2": lambda f: higher_order_message(f, spec, scalar_cfg),
        "linear update": lambda f: update(f, pairwise_message(f, spec, pair_cfg), linear),
        "readout": lambda f: readout(update(f, pairwise_message(f, spec, pair_cfg), linear), weights)[0],
    }
    gates = V.trivial_channels()
    if gates:
        gated = GatedUpdate(V, gates, rng.standard_normal((len(V.channels), len(gates))), rng.standard_normal(len(V.channels)))
        maps["gated update"] = lambda f: update(f, pairwise_message(f, spec, pair_cfg), gated)
        maps["readout"] = lambda f: readout(update(f, pairwise_message(f, spec, pair_cfg), gated), weights)[0]
    degrees = {c.label.degree: c.index for c in reversed(V.channels)}
    if V.group == GroupTag.SO3 and 1 in degrees and 2 in degrees:
        l1, l2 = degrees[1], degrees[2]
        tc = MessageConfig(order=2, out_degree=1, selectors=(l1, l2))
        maps["tensor message n=2"] = lambda f: higher_order_message(f, spec, tc)
    return maps


def equivariance_suite(seed: int) -> list[CheckResult]:
    out = []
    spec = KernelSpec(t=0.5, l_base=8, l_grp=2)
    for kind in ("euclidean(2)", "euclidean(3)", "sphere2"):
        f, V = _scene(kind, seed)
        rng = np.random.default_rng(seed + 7)
        actions = [random_isometry(f.graph.manifold, rng) for _ in range(20)]
        for name, F in equivariance_maps(V, spec, seed).items():
            report = check_equivariance(F, f, actions, EQUIVARIANCE_TOL)
            out.append(CheckResult("equivariance", f"{kind} {name}", report.max_deviation, EQUIVARIANCE_TOL))
    return out


def _relative_gap(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(_max_abs(b), 1e-300)
    return _max_abs(a - b) / scale


def mace_suite(seed: int) -> list[CheckResult]:
    M = Manifold.euclidean(3)
    V = RepSpace.from_degrees(GroupTag.SO3, [(0, 1), (1, 1), (2, 1)])
    spec = KernelSpec(t=0.5, l_base=8, l_grp=2)
    configs = {
        "n=1 invariant": MessageConfig(order=1, selectors=(0,)),
        "n=1 l=1": MessageConfig(order=1, selectors=(1,)),
        "n=2 scalar channels": MessageConfig(order=2, mode=ProductMode.SCALAR_CHANNELS),
        "n=2 (1,1)->0": MessageConfig(order=2, out_degree=0, selectors=(1, 1)),
        "n=2 (1,2)->1": MessageConfig(order=2, out_degree=1, selectors=(1, 2)),
    }
    out = []
    for k in range(3):
        graph = build_graph(M, sample_points(M, 8, seed + k), 0.8)
        f = FeatureField.create(graph, V, np.random.default_rng(seed + k).standard_normal((graph.n, V.dim)))
        for name, cfg in configs.items():
            gap = _relative_gap(higher_order_message(f, spec, cfg).values, mace_reference_message(f, spec, cfg).values)
            out.append(CheckResult("mace", f"cloud {k} {name}", gap, MACE_TOL))
    return out


def bundle_suite(seed: int) -> list[CheckResult]:
    M = Manifold.sphere2()
    rng = np.random.default_rng(seed)
    graph = build_graph(M, sample_points(M, 10, seed), 1.0)
    atlas = graph.atlas
    e = identity(GroupTag.SO2)
    cocycle = 0.0
    for x in graph.positions:
        there = transition_function(atlas, NORTH, SOUTH, x)
        back = transition_function(atlas, SOUTH, NORTH, x)
        loop = compose(back, compose(there, transition_function(atlas, NORTH, NORTH, x)))
        cocycle = max(cocycle, distance(loop, e))
    winding = equator_winding(atlas)
    out = [
        CheckResult("bundle", "cocycle", cocycle, 1e-10),
        CheckResult("bundle", f"equator winding ({winding:+d})", float(abs(abs(winding) - 2)), 0.0),
    ]

    V = RepSpace.from_degrees(GroupTag.SO2, [(0, 1), (1, 1), (2, 1)])
    f = FeatureField.create(graph, V, rng.standard_normal((graph.n, V.dim)))
    index = {tuple(x): i for i, x in enumerate(graph.positions)}
    def h(p: FiberPoint) -> np.ndarray:
        return evaluate_equivariant(f, index[tuple(p.point)], p)

    back = from_equivariant(graph, V, h, f.charts)
    out.append(CheckResult("bundle", "section round trip", _max_abs(back.values - f.values), 1e-10))
    covariance, gauge = 0.0, 0.0
    for i in range(graph.n):
        x = graph.positions[i]
        g = random_element(GroupTag.SO2, rng)
        p = FiberPoint(x, random_element(GroupTag.SO2, rng), f.charts[i])
        lhs = evaluate_equivariant(f, i, p.act(g))
        rhs = rep_matrix(V, inverse(g)) @ evaluate_equivariant(f, i, p)
        covariance = max(covariance, _max_abs(lhs - rhs))
        other = SOUTH if f.charts[i] == NORTH else NORTH
        if atlas.covers(other, x):
            moved = gauge_transform(f, i, other)
            gauge = max(gauge, _max_abs(evaluate_equivariant(f, i, FiberPoint(x, e, other)) - moved.values[i]))
    out.append(CheckResult("bundle", "equivariant function covariance", covariance, 1e-10))
    out.append(CheckResult("bundle", "chart change agrees with gauge transform", gauge, 1e-10))
    return out


def _energy_increase(f: FeatureField, steps: int) -> float:
    cfg = EnergyConfig()
    W = edge_weights(f.graph, cfg)
    dt = stability_dt(W, f.rep, cfg.kappa)
    energy = energy_terms(f, cfg, W).total
    worst = 0.0
    scale = max(energy, 1e-300)
    for _ in range(steps):
        f = euler_step(f, dt, W, cfg.kappa)
        nxt = energy_terms(f, cfg, W).total
        worst = max(worst, (nxt - energy) / scale)
        energy = nxt
    return worst


def dissipation_suite(seed: int) -> list[CheckResult]:
    worst = 0.0
    for k in range(20):
        f, _ = _scene(("euclidean(2)", "euclidean(3)", "sphere2")[k % 3], seed + k)
        worst = max(worst, _energy_increase(f, 100))
    out = [CheckResult("dissipation", "energy non-increasing, 20 graphs x 100 steps", worst, 1e-12)]

    f, _ = _scene("euclidean(3)", seed)
    W = edge_weights(f.graph, EnergyConfig())
    T = 0.5
    exact = propagate_exact(f, T, W).values
    errors = []
    for n in (40, 80):
        g = f
        for _ in range(n):
            g = euler_step(g, T / n, W)
        errors.append(_max_abs(g.values - exact))
    order = math.log2(errors[0] / errors[1])
    out.append(CheckResult("dissipation", f"euler convergence order {order:.3f}", abs(order - 1.0), 0.1))
    return out


def beltrami_suite(seed: int) -> list[CheckResult]:
    f, _ = _scene("euclidean(2)", seed)
    a, dt = 0.3, 0.05
    W = a * unit_weights(f.graph)
    diffusion = euler_step(f, dt, W, kappa=1.0, casimir=False).values
    attention = beltrami_step(f, constant_attention(a), dt).values
    bitwise = 0.0 if np.array_equal(diffusion, attention) else _max_abs(diffusion - attention) + 1.0
    out = [CheckResult("beltrami", "constant attention equals scalar diffusion (bitwise)", bitwise, 0.0)]

    M = Manifold.euclidean(2)
    graph = build_graph(M, np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), 1.5)
    g = FeatureField.create(graph, RepSpace.from_degrees(GroupTag.SO2, [(0, 1)]), np.array([[1.0], [2.0], [4.0]]))
    stepped = beltrami_step(g, constant_attention(0.25), 1.0).values[:, 0]
    out.append(CheckResult("beltrami", "three-node update, dt=1", _max_abs(stepped - np.array([1.25, 2.25, 3.5])), 1e-15))
    return out


def determinism_suite(seed: int) -> list[CheckResult]:
    from cli_io.runner import FlowRunner
    from cli_io.settings import RunConfig, validate_config

    cfg = RunConfig(seed=seed, rep=[{"irrep": 0, "multiplicity": 1}, {"irrep": 1, "multiplicity": 1}], cutoff=0.7)
    cfg = validate_config(replace(cfg, schedule=replace(cfg.schedule, steps=5)))
    outputs = []
    before = get_threads()
    try:
        with tempfile.TemporaryDirectory() as tmp:
            for k, threads in enumerate((1, 4, 1)):
                set_threads(threads)
                summary = FlowRunner(cfg, str(Path(tmp) / str(k)), progress=False).run()
                rows = [line.rsplit(",", 1)[0] for line in summary.trace_path.read_text().splitlines()]
                outputs.append((rows, summary.final_state_path.read_bytes()))
    finally:
        set_threads(before)
    same = all(o == outputs[0] for o in outputs[1:])
    return [CheckResult("determinism", "trace and final state across 1/4 threads and reruns", 0.0 if same else 1.0, 0.0)]


SUITES: dict[str, Callable[[int], list[CheckResult]]] = {
    "casimir": casimir_suite,
    "schur": schur_suite,
    "semigroup": semigroup_suite,
    "equivariance": equivariance_suite,
    "mace": mace_suite,
    "bundle": bundle_suite,
    "dissipation": dissipation_suite,
    "beltrami": beltrami_suite,
    "determinism": determinism_suite,
}


def run_suites(suite: str = "all", seed: int = 1235) -> dict:
    """Runs the named suite (or all of them) and returns the JSON report."""
    if suite != "all" and suite not in SUITES:
        raise InvalidArgumentError(f"unknown self-check suite {suite!r}, expected one of {['all', *SUITES]}")
    names = list(SUITES) if suite == "all" else [suite]
    checks, timings = [], {}
    for name in names:
        start = time.perf_counter()
        checks.extend(SUITES[name](seed))
        timings[name] = (time.perf_counter() - start) * 1000.0
        logger.info("suite %s done in %.0f ms", name, timings[name])
    return {
        "suite": suite,
        "seed": seed,
        "passed": all(c.passed for c in checks),
        "checks": [c.to_dict() for c in checks],
        "timings_ms": timings,
    }


def print_report(report: dict, console: Optional[Console] = None) -> None:
    table = Table(title=f"selfcheck {report['suite']}")
    for column in ("suite", "check", "residual", "tol", ""):
        table.add_column(column)
    for c in report["checks"]:
        status = "[green]pass[/green]" if c["passed"] else "[red]FAIL[/red]"
        table.add_row(c["suite"], c["name"], f"{c['residual']:.3e}", f"{c['tol']:.0e}", status)
    (console or Console()).print(table)


def write_report(report: dict, out_dir) -> Path:
    path = Path(out_dir) / "selfcheck.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {k: v for k, v in report.items() if k != "timings_ms"}
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path
