from __future__ import annotations

import json
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

from bundle.fields import FeatureField
from diffusion.graph import GeometricGraph, build_graph
from errors import GMFlowError, GraphFormatError
from group_core.elements import GroupTag
from group_core.irreps import IrrepLabel, RepSpace
from manifold_core.harmonics import solid_harmonics
from manifold_core.manifolds import Manifold, ManifoldKind
from manifold_core.sampling import sample_points
from utils import get_logger

if TYPE_CHECKING:
    from cli_io.settings import RunConfig

logger = get_logger(__name__)


def manifold_to_dict(M: Manifold) -> dict:
    return {"kind": M.kind.value, "dim": M.dim}


def manifold_from_dict(doc: Any) -> Manifold:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise GraphFormatError("manifold must be an object with a 'kind' entry")
    try:
        return Manifold(ManifoldKind(doc["kind"]), int(doc.get("dim", 0)))
    except (GMFlowError, ValueError) as err:
        raise GraphFormatError(f"manifold: {err}") from err


def rep_from_list(group: GroupTag, blocks: Any) -> RepSpace:
    if not isinstance(blocks, list):
        raise GraphFormatError("rep must be a list of {irrep, multiplicity} objects")
    try:
        return RepSpace(tuple((IrrepLabel(group, int(b["irrep"])), int(b.get("multiplicity", 1))) for b in blocks))
    except (KeyError, TypeError) as err:
        raise GraphFormatError(f"rep: malformed block ({err})") from err
    except GMFlowError as err:
        raise GraphFormatError(f"rep: {err}") from err


def graph_document(f: FeatureField) -> dict:
    graph = f.graph
    return {
        "manifold": manifold_to_dict(graph.manifold),
        "cutoff": float(graph.cutoff),
        "rep": f.rep.describe(),
        "nodes": [
            {
                "id": i,
                "position": [float(x) for x in graph.positions[i]],
                "chart": f.charts[i],
                "features": [float(x) for x in f.values[i]],
            }
            for i in range(graph.n)
        ],
    }


def dumps(doc: dict) -> str:
    # json writes floats with repr, the shortest round-trip form
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def save_graph(path, f: FeatureField) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(graph_document(f)), encoding="utf-8")
    return path


def field_from_document(doc: Any) -> FeatureField:
    """Graph and features from a parsed graph document; edges are derived, never read."""
    if not isinstance(doc, dict):
        raise GraphFormatError("graph document must be a JSON object")
    for key in ("manifold", "cutoff", "rep", "nodes"):
        if key not in doc:
            raise GraphFormatError(f"missing top-level key {key!r}")
    M = manifold_from_dict(doc["manifold"])
    rep = rep_from_list(M.structure_group, doc["rep"])
    nodes = doc["nodes"]
    if not isinstance(nodes, list) or not nodes:
        raise GraphFormatError("nodes must be a non-empty list")
    positions, charts, values = [], [], []
    for k, node in enumerate(nodes):
        node_id = node.get("id", k) if isinstance(node, dict) else k
        if not isinstance(node, dict) or node_id != k:
            raise GraphFormatError(f"node {node_id}: nodes must be objects with ids 0..n-1 in order")
        try:
            x = M.validate_point(node["position"])
        except KeyError:
            raise GraphFormatError(f"node {k}: missing position") from None
        except GMFlowError as err:
            raise GraphFormatError(f"node {k}: {err}") from err
        features = node.get("features")
        if not isinstance(features, list) or len(features) != rep.dim:
            got = len(features) if isinstance(features, list) else "no"
            raise GraphFormatError(f"node {k}: expected {rep.dim} features, got {got}")
        positions.append(x)
        charts.append(node.get("chart"))
        values.append([float(v) for v in features])
    try:
        graph = build_graph(M, np.array(positions), float(doc["cutoff"]))
    except GMFlowError as err:
        raise GraphFormatError(f"cutoff: {err}") from err
    for k, name in enumerate(charts):
        if name is None:
            charts[k] = graph.charts[k]
            continue
        try:
            covered = graph.atlas.covers(name, graph.positions[k])
        except GMFlowError as err:
            raise GraphFormatError(f"node {k}: {err}") from err
        if not covered:
            raise GraphFormatError(f"node {k}: position lies outside chart {name!r}")
    if "edges" in doc:
        _report_edges(graph, doc["edges"])
    return FeatureField(graph, rep, np.array(values, dtype=float).reshape(graph.n, rep.dim), tuple(charts))


def _report_edges(graph: GeometricGraph, edges: Any) -> None:
    listed = set()
    for e in edges if isinstance(edges, list) else []:
        try:
            i, j = int(e[0]), int(e[1])
        except (TypeError, ValueError, IndexError):
            continue
        listed.add((min(i, j), max(i, j)))
    derived = set(graph.edges)
    logger.warning(
        "graph file lists %d edges; edges are derived from positions and cutoff (%d differ from the %d derived)",
        len(listed),
        len(listed ^ derived),
        len(derived),
    )


def load_graph(path) -> tuple[GeometricGraph, FeatureField]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise GraphFormatError(f"{path}:{err.lineno}:{err.colno}: {err.msg}") from err
    f = field_from_document(doc)
    logger.info("loaded %s: %d nodes, %d edges", path.name, f.graph.n, len(f.graph.edges))
    return f.graph, f


def _invariant_pattern(graph: GeometricGraph, copy: int) -> np.ndarray:
    return np.array([sum(np.exp(-(copy + 1) * graph.distances[i, j]) for j in graph.neighbors[i]) for i in range(graph.n)])


def _planar_power(z: np.ndarray, m: int) -> np.ndarray:
    w = z**m
    return np.stack([w.real, w.imag], axis=1)


def pattern_values(graph: GeometricGraph, rep: RepSpace, charts=None) -> np.ndarray:
    """Features that are an exactly equivariant function of the node positions.

    Invariant channels sum exp(-(k+1) d_ij) over neighbors. Euclidean(3) degree l carries the
    solid harmonic of the offset from the centroid; Euclidean(2) and Sphere2 degree m carry
    the m-th complex power of a planar vector (centroid offset, resp. the summed neighbor
    tangent directions in the node's frame).
    """
    M = graph.manifold
    charts = charts or graph.charts
    out = np.zeros((graph.n, rep.dim))
    copies: dict = {}
    offsets = graph.positions - graph.positions.mean(axis=0) if M.kind == ManifoldKind.EUCLIDEAN else None
    for channel in rep.channels:
        k = copies.get(channel.label, 0)
        copies[channel.label] = k + 1
        degree = channel.label.degree
        if degree == 0:
            out[:, channel.start] = _invariant_pattern(graph, k)
            continue
        scale = 1.0 / (k + 1)
        if M.kind == ManifoldKind.EUCLIDEAN and M.dim == 3:
            block = solid_harmonics(degree, offsets)
        elif M.kind == ManifoldKind.EUCLIDEAN:
            block = _planar_power(offsets[:, 0] + 1j * offsets[:, 1], degree)
        else:
            z = np.zeros(graph.n, dtype=complex)
            for i in range(graph.n):
                x = graph.positions[i]
                v = np.zeros(3)
                for j in graph.neighbors[i]:
                    y = graph.positions[j]
                    v = v + (y - np.dot(x, y) * x)
                c = graph.atlas.frame(charts[i], x) @ v
                z[i] = complex(c[0], c[1])
            block = _planar_power(z, degree)
        out[:, channel.slice] = scale * block
    return out


def initial_values(graph: GeometricGraph, rep: RepSpace, init: str, seed: int) -> np.ndarray:
    if init == "zeros":
        return np.zeros((graph.n, rep.dim))
    if init == "random":
        rng = np.random.default_rng(seed + 1)
        return rng.standard_normal((graph.n, rep.dim))
    if init == "pattern":
        return pattern_values(graph, rep)
    raise GraphFormatError(f"unknown feature initialization {init!r}")


def gen_graph(M: Manifold, n: int, cutoff: float, seed: int, rep: RepSpace, init: str = "random") -> FeatureField:
    """Seeded points, derived edges and initialized features."""
    graph = build_graph(M, sample_points(M, n, seed), cutoff)
    field = FeatureField.create(graph, rep, initial_values(graph, rep, init, seed))
    logger.info("generated %s graph: %d nodes, %d edges, %s features", M, graph.n, len(graph.edges), init)
    return field


def initial_state(cfg: "RunConfig") -> tuple[GeometricGraph, FeatureField]:
    """The graph and starting field a run config describes."""
    M, rep = cfg.manifold_obj(), cfg.rep_space()
    if cfg.graph.path is None:
        f = gen_graph(M, cfg.graph.n, cfg.cutoff, cfg.seed, rep, cfg.graph.init)
        return f.graph, f
    graph, f = load_graph(cfg.graph.path)
    if graph.manifold != M or f.rep != rep:
        raise GraphFormatError(f"{cfg.graph.path} holds {graph.manifold} / {f.rep.describe()}, config declares {M} / {rep.describe()}")
    return graph, f
