from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from bundle.atlas import transition_function
from bundle.fields import FeatureField, aligned_neighbors
from config import DENSE_LIMIT, STABILITY_SAFETY, WEIGHT_SYMMETRY_TOL
from diffusion.graph import GeometricGraph
from errors import InvalidArgumentError, UnsupportedSizeError
from group_core.irreps import RepSpace, casimir_diagonal, rep_matrix
from manifold_core.heat_kernels import base_kernel_matrix
from utils import parallel_map


class EdgeWeightRule(str, Enum):
    HEAT_KERNEL = "heat_kernel"
    UNIT = "unit"


@dataclass(frozen=True)
class EnergyConfig:
    weights: EdgeWeightRule = EdgeWeightRule.HEAT_KERNEL
    t0: float = 0.5
    kappa: float = 1.0
    casimir_term: bool = True
    l_base: int = 16

    def __post_init__(self):
        object.__setattr__(self, "weights", EdgeWeightRule(self.weights))
        if not self.kappa > 0:
            raise InvalidArgumentError(f"kappa must be > 0, got {self.kappa}")
        if self.weights == EdgeWeightRule.HEAT_KERNEL and not self.t0 > 0:
            raise InvalidArgumentError(f"t0 must be > 0 for heat-kernel weights, got {self.t0}")


def unit_weights(graph: GeometricGraph) -> np.ndarray:
    W = np.zeros((graph.n, graph.n))
    for i, j in graph.edges:
        W[i, j] = W[j, i] = 1.0
    return W


def heat_kernel_weights(graph: GeometricGraph, t0: float, l_base: int = 16) -> np.ndarray:
    K = base_kernel_matrix(graph.manifold, t0, graph.positions, graph.positions, l_base)
    W = np.zeros_like(K)
    for i, j in graph.edges:
        # a truncated spectral kernel can dip below zero; weights must not
        W[i, j] = W[j, i] = max(0.5 * (K[i, j] + K[j, i]), 0.0)
    return W


def edge_weights(graph: GeometricGraph, cfg: EnergyConfig) -> np.ndarray:
    if cfg.weights == EdgeWeightRule.UNIT:
        return unit_weights(graph)
    return heat_kernel_weights(graph, cfg.t0, cfg.l_base)


def validate_weights(graph: GeometricGraph, weights) -> np.ndarray:
    W = np.asarray(weights, dtype=float)
    if W.shape != (graph.n, graph.n):
        raise InvalidArgumentError(f"weight matrix has shape {W.shape}, expected ({graph.n}, {graph.n})")
    scale = max(1.0, float(np.abs(W).max()) if W.size else 1.0)
    if np.abs(W - W.T).max(initial=0.0) > WEIGHT_SYMMETRY_TOL * scale:
        raise InvalidArgumentError("edge weights must be symmetric")
    if (W < 0).any():
        raise InvalidArgumentError("edge weights must be nonnegative")
    mask = np.zeros_like(W, dtype=bool)
    for i, nbrs in enumerate(graph.neighbors):
        mask[i, list(nbrs)] = True
    if (W[~mask] != 0).any():
        raise InvalidArgumentError("edge weights must vanish off the edge set")
    return W


def stability_dt(weights: np.ndarray, V: RepSpace, kappa: float = 1.0) -> float:
    """Largest Euler step kept below the Gershgorin bound: 0.9 / (kappa * lambda_hat + cas_max)."""
    weights = np.asarray(weights, dtype=float)
    lam = 2.0 * float(weights.sum(axis=1).max()) if weights.size else 0.0
    cas_max = float(casimir_diagonal(V).max())
    denominator = kappa * lam + cas_max
    if denominator == 0.0:
        return STABILITY_SAFETY
    return STABILITY_SAFETY / denominator


def neighbor_flux(h_i: np.ndarray, aligned: np.ndarray, coefficients) -> np.ndarray:
    """sum_j c_j (h_j - h_i), accumulated in neighbor order."""
    total = np.zeros_like(h_i)
    for c, h_j in zip(coefficients, aligned):
        total = total + c * (h_j - h_i)
    return total


class GeneralizedLaplacian:
    """Delta^E h = -kappa sum_j w_ij (h_i - h_j) - Cas_V h_i, neighbors in the receiver's gauge.

    With casimir=False the Casimir term is dropped (plain Dirichlet operator).
    """

    def __init__(self, graph: GeometricGraph, weights, V: RepSpace, kappa: float = 1.0, casimir: bool = True):
        self.graph = graph
        self.weights = validate_weights(graph, weights)
        self.rep = V
        self.kappa = kappa
        self.casimir = casimir
        self._cas = casimir_diagonal(V) if casimir else np.zeros(V.dim)

    @property
    def size(self) -> int:
        return self.graph.n * self.rep.dim

    def _node(self, f: FeatureField, i: int) -> np.ndarray:
        nbrs = self.graph.neighbors[i]
        h_i = f.values[i]
        coefficients = [self.kappa * self.weights[i, j] for j in nbrs]
        flux = neighbor_flux(h_i, aligned_neighbors(f, i, nbrs), coefficients)
        return flux - self._cas * h_i

    def apply(self, f: FeatureField) -> np.ndarray:
        if f.rep != self.rep or f.graph is not self.graph:
            raise InvalidArgumentError("field does not live on this operator's graph and representation")
        return np.array(parallel_map(lambda i: self._node(f, i), range(self.graph.n))).reshape(self.graph.n, self.rep.dim)

    def dense(self, charts=None) -> np.ndarray:
        """Assembled matrix acting on the node-major stacked feature vector.

        Symmetric when every node sits in one chart. Across charts block (i, j) carries the
        transition at r_j and block (j, i) the one at r_i, so only the symmetric part is
        guaranteed negative semidefinite.
        """
        if self.size > DENSE_LIMIT:
            raise UnsupportedSizeError(f"dense operator of size {self.size} exceeds the limit {DENSE_LIMIT}")
        n, d = self.graph.n, self.rep.dim
        charts = charts or self.graph.charts
        A = np.zeros((n * d, n * d))
        for i in range(n):
            block_i = slice(i * d, (i + 1) * d)
            degree = 0.0
            for j in self.graph.neighbors[i]:
                w = self.kappa * self.weights[i, j]
                degree += w
                T = np.eye(d)
                if charts[j] != charts[i]:
                    g = transition_function(self.graph.atlas, charts[j], charts[i], self.graph.positions[j])
                    T = rep_matrix(self.rep, g)
                A[block_i, j * d:(j + 1) * d] += w * T
            A[block_i, block_i] -= degree * np.eye(d) + np.diag(self._cas)
        return A


def generalized_laplacian(graph: GeometricGraph, weights, V: RepSpace, kappa: float = 1.0, casimir: bool = True) -> GeneralizedLaplacian:
    return GeneralizedLaplacian(graph, weights, V, kappa, casimir)
