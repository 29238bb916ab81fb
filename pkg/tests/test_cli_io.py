import json
import logging

import numpy as np
import pytest
import yaml

import simulator
from bundle.equivariance import check_equivariance, random_isometry
from cli_io.graph_io import field_from_document, gen_graph, graph_document, load_graph, pattern_values, save_graph
from cli_io.runner import FlowRunner
from cli_io.selfcheck import run_suites, write_report
from cli_io.settings import load_config
from cli_io.trace import COLUMNS, read_trace
from diffusion.flows import polyakov_energy
from diffusion.laplacian import EnergyConfig, edge_weights
from errors import ConfigParseError, ConfigValidationError, GraphFormatError, InvalidArgumentError
from group_core.elements import GroupTag
from group_core.irreps import RepSpace
from manifold_core.manifolds import Manifold
from utils import set_threads

BASE = {
    "manifold": {"kind": "euclidean", "dim": 3},
    "rep": [{"irrep": 0, "multiplicity": 1}, {"irrep": 1, "multiplicity": 1}],
    "cutoff": 0.7,
    "schedule": {"mode": "diffusion", "steps": 5},
    "graph": {"n": 8},
}


def write_config(tmp_path, doc, name="run.yml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return path


def with_changes(**changes):
    doc = json.loads(json.dumps(BASE))
    doc.update(changes)
    return doc


def message_doc(steps=1, **message):
    return with_changes(kernel={"t": 0.5, "l_grp": 2}, schedule={"mode": "message", "steps": steps, "message": message})


class TestSettings:
    def test_minimal_config_fills_dt(self, tmp_path):
        cfg = load_config(write_config(tmp_path, BASE))
        assert cfg.schedule.dt > 0.0
        assert cfg.rep_space().dim == 4
        assert load_config(write_config(tmp_path, BASE), seed=7).seed == 7

    def test_sphere_cutoff(self, tmp_path):
        doc = with_changes(manifold={"kind": "sphere2", "dim": 2}, cutoff=1.6)
        with pytest.raises(ConfigValidationError, match="chart-coverage"):
            load_config(write_config(tmp_path, doc))

    def test_group_must_match_manifold(self, tmp_path):
        with pytest.raises(ConfigValidationError, match="structure group"):
            load_config(write_config(tmp_path, with_changes(group="SO2")))

    def test_triangle_rule(self, tmp_path):
        doc = message_doc(order=2, out_degree=3, selectors=[1, 1])
        with pytest.raises(ConfigValidationError, match="triangle"):
            load_config(write_config(tmp_path, doc))

    def test_insufficient_quadrature(self, tmp_path):
        doc = message_doc()
        doc["quadrature_order"] = 1
        with pytest.raises(ConfigValidationError, match="insufficient quadrature"):
            load_config(write_config(tmp_path, doc))

    def test_quadrature_order_is_filled(self, tmp_path):
        cfg = load_config(write_config(tmp_path, message_doc()))
        # l_grp + max degree of the features
        assert cfg.quadrature_order == 3

    def test_changing_space_allows_one_step(self, tmp_path):
        doc = message_doc(steps=3, order=2, product_mode="scalar_channels")
        with pytest.raises(ConfigValidationError, match="one step only"):
            load_config(write_config(tmp_path, doc))

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "broken.yml"
        path.write_text("manifold: [euclidean\ncutoff: 1\n", encoding="utf-8")
        with pytest.raises(ConfigParseError) as err:
            load_config(path)
        assert err.value.line > 0

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigValidationError):
            load_config(write_config(tmp_path, with_changes(bogus=1)))

    def test_readout_length(self, tmp_path):
        with pytest.raises(ConfigValidationError, match="readout"):
            load_config(write_config(tmp_path, with_changes(readout=[1.0])))


class TestGraphIO:
    def test_round_trip(self, tmp_path):
        V = RepSpace.from_degrees(GroupTag.SO2, [(0, 1), (1, 1)])
        f = gen_graph(Manifold.sphere2(), 12, 1.0, 5, V)
        graph, back = load_graph(save_graph(tmp_path / "g.json", f))
        assert np.array_equal(back.values, f.values)
        assert back.charts == f.charts
        assert graph.neighbors == f.graph.neighbors

    def test_same_seed_same_bytes(self, tmp_path):
        V = RepSpace.from_degrees(GroupTag.SO3, [(0, 1), (2, 1)])
        a = save_graph(tmp_path / "a.json", gen_graph(Manifold.euclidean(3), 10, 0.7, 3, V))
        b = save_graph(tmp_path / "b.json", gen_graph(Manifold.euclidean(3), 10, 0.7, 3, V))
        assert a.read_bytes() == b.read_bytes()

    def test_wrong_feature_length(self, cloud3):
        doc = graph_document(cloud3)
        doc["nodes"][2]["features"] = [0.0]
        with pytest.raises(GraphFormatError, match=f"node 2: expected {cloud3.rep.dim} features"):
            field_from_document(doc)

    def test_unknown_chart(self, sphere_field):
        doc = graph_document(sphere_field)
        doc["nodes"][0]["chart"] = "east"
        with pytest.raises(GraphFormatError, match="node 0"):
            field_from_document(doc)

    def test_listed_edges_are_ignored(self, plane2, caplog):
        doc = graph_document(plane2)
        doc["edges"] = [[0, 1]]
        with caplog.at_level(logging.WARNING):
            f = field_from_document(doc)
        assert f.graph.neighbors == plane2.graph.neighbors
        assert "edges are derived" in caplog.text

    def test_missing_key(self, plane2):
        doc = graph_document(plane2)
        del doc["cutoff"]
        with pytest.raises(GraphFormatError, match="cutoff"):
            field_from_document(doc)

    def test_zero_init_has_zero_energy(self):
        V = RepSpace.from_degrees(GroupTag.SO3, [(0, 1), (1, 1)])
        f = gen_graph(Manifold.euclidean(3), 8, 0.8, 1, V, "zeros")
        cfg = EnergyConfig()
        assert polyakov_energy(f, cfg, edge_weights(f.graph, cfg)) == 0.0

    @pytest.mark.parametrize(
        "M,cutoff,degrees",
        [
            (Manifold.euclidean(3), 0.7, [(0, 2), (1, 1), (2, 1)]),
            (Manifold.euclidean(2), 0.6, [(0, 1), (1, 2), (3, 1)]),
            (Manifold.sphere2(), 1.2, [(0, 1), (1, 1), (2, 1)]),
        ],
    )
    def test_pattern_is_equivariant(self, M, cutoff, degrees):
        V = RepSpace.from_degrees(M.structure_group, degrees)
        f = gen_graph(M, 10, cutoff, 8, V, "pattern")
        rng = np.random.default_rng(2)
        actions = [random_isometry(M, rng) for _ in range(5)]
        report = check_equivariance(lambda g: pattern_values(g.graph, g.rep, g.charts), f, actions, 1e-10)
        assert report.passed, report.max_deviation

    def test_config_graph_must_match(self, tmp_path, plane2):
        path = save_graph(tmp_path / "plane.json", plane2)
        doc = with_changes(graph={"path": str(path)})
        with pytest.raises(GraphFormatError):
            load_config(write_config(tmp_path, doc))


class TestRunner:
    def test_zero_steps(self, tmp_path):
        cfg = load_config(write_config(tmp_path, with_changes(schedule={"mode": "diffusion", "steps": 0})))
        summary = FlowRunner(cfg, str(tmp_path / "out"), progress=False).run()
        assert [r.iteration for r in summary.records] == [0]
        state = json.loads(summary.final_state_path.read_text())
        assert state["metadata"]["seed"] == cfg.seed
        assert len(state["graph"]["nodes"]) == 8

    def test_trace_energy_decreases(self, tmp_path):
        doc = with_changes(schedule={"mode": "diffusion", "steps": 20, "equivariance_every": 5})
        cfg = load_config(write_config(tmp_path, doc))
        summary = FlowRunner(cfg, str(tmp_path / "out"), progress=False).run()
        rows = read_trace(summary.trace_path)
        assert tuple(rows[0]) == COLUMNS
        energies = [float(r["energy"]) for r in rows]
        assert all(b <= a * (1.0 + 1e-12) for a, b in zip(energies, energies[1:]))
        residuals = [float(r["equiv_residual"]) for r in rows if r["equiv_residual"]]
        assert len(residuals) == 4
        assert max(residuals) < 1e-8

    def test_threads_do_not_change_results(self, tmp_path):
        cfg = load_config(write_config(tmp_path, BASE))
        outputs = []
        for k, threads in enumerate((1, 4)):
            set_threads(threads)
            summary = FlowRunner(cfg, str(tmp_path / str(k)), progress=False).run()
            rows = [line.rsplit(",", 1)[0] for line in summary.trace_path.read_text().splitlines()]
            outputs.append((rows, summary.final_state_path.read_bytes()))
        assert outputs[0] == outputs[1]

    def test_message_schedule(self, tmp_path):
        doc = message_doc(steps=2)
        doc["update"] = {"mode": "gated"}
        cfg = load_config(write_config(tmp_path, doc))
        summary = FlowRunner(cfg, str(tmp_path / "out"), progress=False).run()
        assert len(summary.records) == 3
        assert summary.final.rep == cfg.rep_space()

    def test_message_changing_space(self, tmp_path):
        doc = message_doc(order=2, out_degree=1, selectors=[1, 1])
        cfg = load_config(write_config(tmp_path, doc))
        summary = FlowRunner(cfg, str(tmp_path / "out"), progress=False).run()
        assert summary.final.rep.dim == 3
        state = json.loads(summary.final_state_path.read_text())
        assert state["readout"]["total"] == 0.0

    def test_beltrami_schedule(self, tmp_path):
        doc = with_changes(schedule={"mode": "beltrami", "steps": 3, "attention": "gaussian_distance"})
        cfg = load_config(write_config(tmp_path, doc))
        summary = FlowRunner(cfg, str(tmp_path / "out"), progress=False).run()
        assert len(read_trace(summary.trace_path)) == 4


class TestSelfcheck:
    @pytest.mark.parametrize("suite", ["casimir", "beltrami"])
    def test_suite_passes(self, suite, tmp_path):
        report = run_suites(suite, 1235)
        assert report["passed"]
        assert {c["suite"] for c in report["checks"]} == {suite}
        doc = json.loads(write_report(report, tmp_path).read_text())
        assert "timings_ms" not in doc

    def test_unknown_suite(self):
        with pytest.raises(InvalidArgumentError):
            run_suites("nonsense")


class TestMain:
    def test_gen_graph(self, tmp_path, capsys):
        assert simulator.main(["--out_dir", str(tmp_path), "gen-graph", "--n", "6", "--rep", "0,1"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["nodes"] == 6
        _, f = load_graph(tmp_path / "graph.json")
        assert f.rep.dim == 4

    def test_missing_config_is_an_io_error(self, tmp_path, capsys):
        assert simulator.main(["--config", str(tmp_path / "missing.yml"), "run"]) == 3
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "FileNotFoundError"

    def test_invalid_config_exit_code(self, tmp_path):
        path = write_config(tmp_path, with_changes(cutoff=-1.0))
        assert simulator.main(["--config", str(path), "run", "--progress", "false"]) == 1

    def test_selfcheck(self, tmp_path):
        assert simulator.main(["--out_dir", str(tmp_path), "selfcheck", "casimir"]) == 0
        assert json.loads((tmp_path / "selfcheck.json").read_text())["passed"]

    def test_expand_kernel(self, capsys):
        assert simulator.main(["expand-kernel", "--t", "0.5", "--degree", "6", "--truncation", "3"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert len(doc["coefficients"]) == 7
        assert doc["tail_bound"] == pytest.approx(sum(doc["coefficients"][4:]))

    def test_run(self, tmp_path, capsys):
        path = write_config(tmp_path, BASE)
        assert simulator.main(["--config", str(path), "--out_dir", str(tmp_path / "out"), "run", "--progress", "false"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["steps"] == 5
        assert (tmp_path / "out" / "trace.csv").exists()

    def test_bad_arguments(self):
        assert simulator.main(["gen-graph", "--n", "many"]) == 1

    def test_parse_rep(self):
        assert simulator.parse_rep("0x2,1") == [{"irrep": 0, "multiplicity": 2}, {"irrep": 1, "multiplicity": 1}]
        with pytest.raises(InvalidArgumentError):
            simulator.parse_rep("one")
