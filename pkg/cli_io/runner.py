from __future__ import annotations

import hashlib
import json
import platform
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy
from tqdm import tqdm

from bundle.equivariance import check_equivariance, random_isometry
from bundle.fields import FeatureField
from cli_io.graph_io import dumps, graph_document, initial_state
from cli_io.settings import RunConfig, build_update
from cli_io.trace import TraceRecord, TraceWriter
from diffusion.flows import beltrami_step, constant_attention, energy_terms, euler_step, gaussian_distance_attention
from diffusion.laplacian import edge_weights
from message_passing.messages import ProductMode, higher_order_message, output_space, pairwise_message
from message_passing.updates import readout, update
from utils import PhaseTimer, get_logger

logger = get_logger(__name__)

VERSION = "0.1.0"


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def versions() -> dict:
    return {"gmflow": VERSION, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


@dataclass(frozen=True)
class RunSummary:
    trace_path: Path
    final_state_path: Path
    records: tuple[TraceRecord, ...]
    final: FeatureField


class FlowRunner:
    """Executes one configured schedule and writes its trace and final state."""

    def __init__(self, cfg: RunConfig, out_dir: Optional[str] = None, progress: bool = True):
        self.cfg = cfg
        self.out_dir = Path(out_dir or cfg.output.out_dir)
        self.progress = progress
        self.energy_cfg = cfg.energy_config()
        self.spec = cfg.kernel_spec()
        self.timer = PhaseTimer()

    @property
    def trace_path(self) -> Path:
        return self.out_dir / self.cfg.output.trace

    @property
    def final_state_path(self) -> Path:
        return self.out_dir / self.cfg.output.final_state

    def cleanup(self):
        # outputs of an earlier run in the same directory
        for path in (self.trace_path, self.final_state_path):
            if path.exists():
                path.unlink()

    def _step_fn(self, weights):
        cfg = self.cfg
        s = cfg.schedule
        if s.mode == "diffusion":
            return lambda f: euler_step(f, s.dt, weights, s.kappa, s.casimir_term)
        if s.mode == "beltrami":
            if s.attention == "constant":
                attention = constant_attention(s.attention_scale)
            else:
                attention = gaussian_distance_attention(cfg.manifold_obj(), s.attention_scale)
            return lambda f: beltrami_step(f, attention, s.dt)
        mcfg = cfg.message_config()

        def message_step(f: FeatureField) -> FeatureField:
            if mcfg.mode == ProductMode.TENSOR_CONTRACTION and mcfg.order == 1:
                m = pairwise_message(f, self.spec, mcfg)
            else:
                m = higher_order_message(f, self.spec, mcfg)
            return update(f, m, build_update(cfg.update, output_space(f.rep, mcfg)))

        return message_step

    def _record(self, iteration: int, f: FeatureField, weights, residual=None, ms: float = 0.0) -> TraceRecord:
        terms = energy_terms(f, self.energy_cfg, weights)
        max_norm = float(np.linalg.norm(f.values, axis=1).max()) if f.graph.n else 0.0
        return TraceRecord.from_terms(iteration, terms, max_norm, residual, ms)

    def _spot_check(self, step, f: FeatureField, rng: np.random.Generator) -> float:
        """Deviation of one step under a random global isometry."""
        report = check_equivariance(step, f, [random_isometry(f.graph.manifold, rng)], tol=float("inf"))
        return report.max_deviation

    def run_schedule(self) -> RunSummary:
        cfg = self.cfg
        graph, f = initial_state(cfg)
        weights = edge_weights(graph, self.energy_cfg)
        step = self._step_fn(weights)
        rng = np.random.default_rng(cfg.seed + 2)
        every = cfg.schedule.equivariance_every

        logger.info("running %s schedule: %d steps on %d nodes", cfg.schedule.mode, cfg.schedule.steps, graph.n)
        with TraceWriter(self.trace_path) as trace:
            trace.write(self._record(0, f, weights))
            self.timer.lap()
            for k in tqdm(range(1, cfg.schedule.steps + 1), desc=cfg.schedule.mode, disable=not self.progress):
                residual = None
                with self.timer.phase("step"):
                    if every and k % every == 0:
                        residual = self._spot_check(step, f, rng)
                    f = step(f)
                trace.write(self._record(k, f, weights, residual, self.timer.lap()))
            records = tuple(trace.records)

        weights_out = cfg.readout if cfg.readout is not None and f.rep == cfg.rep_space() else [
            1.0 if c.label.is_trivial else 0.0 for c in f.rep.channels
        ]
        per_node, total = readout(f, weights_out)
        state = {
            "graph": graph_document(f),
            "readout": {"per_node": [float(y) for y in per_node], "total": total},
            "metadata": {"versions": versions(), "seed": cfg.seed, "config_hash": config_hash(cfg)},
        }
        self.final_state_path.write_text(dumps(state), encoding="utf-8")
        logger.info("wrote %s and %s (%.1f ms per step)", self.trace_path, self.final_state_path, self.timer.mean_lap_ms)
        return RunSummary(self.trace_path, self.final_state_path, records, f)

    def run(self) -> RunSummary:
        self.cleanup()
        start = time.perf_counter()
        summary = self.run_schedule()
        logger.debug("run finished in %.1f ms", (time.perf_counter() - start) * 1000.0)
        return summary
