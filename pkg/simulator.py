# Command-line entry: runs a configured flow, the self-check suites, and the graph/kernel tools

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from jsonargparse import ArgumentParser

from config import DEFAULT_SEED, DEFAULT_THREADS
from errors import IO_EXIT_CODE, GMFlowError, InvalidArgumentError, SelfCheckFailure
from utils import get_logger, set_threads, setup_logging

logger = get_logger("gmflow")

SUITE_NAMES = ["all", "casimir", "schur", "semigroup", "equivariance", "mace", "bundle", "dissipation", "beltrami", "determinism"]


def parse_rep(text: str) -> list[dict]:
    """'0x2,1,2x3' -> [{irrep: 0, multiplicity: 2}, {irrep: 1, ...: 1}, {irrep: 2, ...: 3}]"""
    blocks = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        degree, _, mult = item.partition("x")
        try:
            blocks.append({"irrep": int(degree), "multiplicity": int(mult) if mult else 1})
        except ValueError:
            raise InvalidArgumentError(f"cannot read representation block {item!r}, expected e.g. 0x2 or 1") from None
    if not blocks:
        raise InvalidArgumentError("empty representation")
    return blocks


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="gmflow", description="Equivariant heat-kernel diffusion and message passing on graphs.", exit_on_error=False)
    parser.add_argument("--config", type=Optional[str], default=None, help="Run file (YAML), see config/.")
    parser.add_argument("--seed", type=Optional[int], default=None, help="Overrides the seed of the run file.")
    parser.add_argument("--threads", type=int, default=DEFAULT_THREADS, help="Worker threads for per-node work.")
    parser.add_argument("--out_dir", "--out-dir", type=Optional[str], default=None, help="Output directory.")
    parser.add_argument("--verbose", type=bool, default=False)

    run = ArgumentParser(description="Execute the configured schedule.", exit_on_error=False)
    run.add_argument("--progress", type=bool, default=True)

    selfcheck = ArgumentParser(description="Run acceptance suites and write selfcheck.json.", exit_on_error=False)
    selfcheck.add_argument("suite", type=str, nargs="?", default="all", choices=SUITE_NAMES)

    gen = ArgumentParser(description="Write a seeded graph JSON.", exit_on_error=False)
    gen.add_argument("--manifold", type=str, default="euclidean")
    gen.add_argument("--dim", type=int, default=3)
    gen.add_argument("--n", type=int, default=10)
    gen.add_argument("--cutoff", type=float, default=0.7)
    gen.add_argument("--rep", type=str, default="0")
    gen.add_argument("--init", type=str, default="random", choices=["zeros", "random", "pattern"])
    gen.add_argument("--output", type=str, default="graph.json")

    expand = ArgumentParser(description="Print kernel expansion coefficients and tail bounds.", exit_on_error=False)
    expand.add_argument("--manifold", type=str, default="sphere2")
    expand.add_argument("--dim", type=int, default=3)
    expand.add_argument("--t", type=float, default=0.5)
    expand.add_argument("--degree", type=int, default=16)
    expand.add_argument("--truncation", type=Optional[int], default=None)
    expand.add_argument("--radii", type=Optional[List[float]], default=None)

    check = ArgumentParser(description="Equivariance harness on a generated or loaded graph.", exit_on_error=False)
    check.add_argument("--graph", type=Optional[str], default=None)
    check.add_argument("--samples", type=int, default=20)
    check.add_argument("--tol", type=float, default=1e-8)

    subcommands = parser.add_subcommands(dest="command")
    subcommands.add_subcommand("run", run)
    subcommands.add_subcommand("selfcheck", selfcheck)
    subcommands.add_subcommand("gen-graph", gen)
    subcommands.add_subcommand("expand-kernel", expand)
    subcommands.add_subcommand("check-equivariance", check)
    return parser


def cmd_run(args, sub) -> int:
    from cli_io.runner import FlowRunner
    from cli_io.settings import load_config

    if args.config is None:
        raise InvalidArgumentError("run needs --config")
    cfg = load_config(args.config, seed=args.seed)
    summary = FlowRunner(cfg, args.out_dir, progress=sub.progress).run()
    print(json.dumps({"trace": str(summary.trace_path), "final_state": str(summary.final_state_path), "steps": len(summary.records) - 1}))
    return 0


def cmd_selfcheck(args, sub) -> int:
    from cli_io.selfcheck import print_report, run_suites, write_report

    report = run_suites(sub.suite, DEFAULT_SEED if args.seed is None else args.seed)
    path = write_report(report, args.out_dir or "runs")
    print_report(report)
    logger.info("report written to %s", path)
    if not report["passed"]:
        failed = [c["name"] for c in report["checks"] if not c["passed"]]
        raise SelfCheckFailure(f"{len(failed)} checks failed: {', '.join(failed)}")
    return 0


def cmd_gen_graph(args, sub) -> int:
    from cli_io.graph_io import gen_graph, save_graph
    from cli_io.settings import load_config
    from group_core.irreps import IrrepLabel, RepSpace
    from manifold_core.manifolds import Manifold, ManifoldKind

    seed = DEFAULT_SEED if args.seed is None else args.seed
    if args.config is not None:
        cfg = load_config(args.config, seed=args.seed)
        M, rep, n, cutoff, init, seed = cfg.manifold_obj(), cfg.rep_space(), cfg.graph.n, cfg.cutoff, cfg.graph.init, cfg.seed
    else:
        try:
            M = Manifold(ManifoldKind(sub.manifold), sub.dim)
        except ValueError as err:
            raise InvalidArgumentError(str(err)) from err
        group = M.structure_group
        rep = RepSpace(tuple((IrrepLabel(group, b["irrep"]), b["multiplicity"]) for b in parse_rep(sub.rep)))
        n, cutoff, init = sub.n, sub.cutoff, sub.init
    field = gen_graph(M, n, cutoff, seed, rep, init)
    target = Path(args.out_dir) / sub.output if args.out_dir else Path(sub.output)
    save_graph(target, field)
    print(json.dumps({"graph": str(target), "nodes": field.graph.n, "edges": len(field.graph.edges)}))
    return 0


def cmd_expand_kernel(args, sub) -> int:
    from cli_io.settings import load_config
    from manifold_core.heat_kernels import KernelSpec
    from manifold_core.manifolds import Manifold, ManifoldKind
    from message_passing.kernel_expansion import expand_kernel

    if args.config is not None:
        cfg = load_config(args.config, seed=args.seed)
        M, spec = cfg.manifold_obj(), cfg.kernel_spec()
    else:
        try:
            M = Manifold(ManifoldKind(sub.manifold), sub.dim)
        except ValueError as err:
            raise InvalidArgumentError(str(err)) from err
        spec = KernelSpec(t=sub.t)
    expansion = expand_kernel(spec, M, sub.degree)
    truncation = sub.truncation if sub.truncation is not None else max(sub.degree - 2, 0)
    doc = {
        "manifold": str(M),
        "t": spec.t,
        "degree": sub.degree,
        "coefficients": [float(c) for c in expansion.coefficients],
        "truncation": truncation,
        "tail_bound": expansion.tail_bound(truncation),
    }
    if sub.radii is not None:
        doc["radial_table"] = {repr(float(r)): [float(v) for v in row] for r, row in zip(sub.radii, expansion.radial_table(sub.radii))}
    print(json.dumps(doc, indent=2))
    return 0


def cmd_check_equivariance(args, sub) -> int:
    import numpy as np

    from bundle.equivariance import check_equivariance, random_isometry
    from cli_io.graph_io import initial_state, load_graph
    from cli_io.selfcheck import equivariance_maps
    from cli_io.settings import load_config

    seed = DEFAULT_SEED if args.seed is None else args.seed
    if sub.graph is not None:
        _, field = load_graph(sub.graph)
        cfg = load_config(args.config, seed=args.seed) if args.config is not None else None
    elif args.config is not None:
        cfg = load_config(args.config, seed=args.seed)
        _, field = initial_state(cfg)
    else:
        raise InvalidArgumentError("check-equivariance needs --graph or --config")
    from manifold_core.heat_kernels import KernelSpec

    spec = cfg.kernel_spec() if cfg is not None else KernelSpec(t=0.5)
    rng = np.random.default_rng(seed)
    actions = [random_isometry(field.graph.manifold, rng) for _ in range(sub.samples)]
    results = {}
    for name, F in equivariance_maps(field.rep, spec, seed).items():
        results[name] = check_equivariance(F, field, actions, sub.tol).max_deviation
    passed = all(v <= sub.tol for v in results.values())
    print(json.dumps({"tol": sub.tol, "samples": sub.samples, "max_deviation": results, "passed": passed}, indent=2))
    if not passed:
        raise SelfCheckFailure("equivariance deviation above tolerance")
    return 0


COMMANDS = {
    "run": cmd_run,
    "selfcheck": cmd_selfcheck,
    "gen-graph": cmd_gen_graph,
    "expand-kernel": cmd_expand_kernel,
    "check-equivariance": cmd_check_equivariance,
}


def _report_error(err: BaseException) -> None:
    print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except Exception as err:  # jsonargparse reports bad arguments as plain exceptions here
        _report_error(err)
        return 1
    setup_logging(logging.DEBUG if args.verbose else logging.INFO)
    try:
        set_threads(args.threads)
        command = args.command
        return COMMANDS[command](args, args[command])
    except GMFlowError as err:
        _report_error(err)
        return err.exit_code
    except ValueError as err:
        _report_error(err)
        return 1
    except OSError as err:
        _report_error(err)
        return IO_EXIT_CODE


if __name__ == "__main__":
    sys.exit(main())
