from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.linalg import expm

from bundle.fields import FeatureField, aligned_neighbors
from diffusion.laplacian import EnergyConfig, generalized_laplacian, neighbor_flux, validate_weights
from errors import InvalidArgumentError
from group_core.irreps import casimir_diagonal
from manifold_core.manifolds import Manifold, geodesic_distance
from utils import parallel_map


@dataclass(frozen=True)
class EnergyTerms:
    dirichlet: float
    casimir: float

    @property
    def total(self) -> float:
        return self.dirichlet + self.casimir


def energy_terms(f: FeatureField, cfg: EnergyConfig, weights) -> EnergyTerms:
    """Dirichlet and Casimir parts of the twisted Polyakov energy, summed in sorted edge order."""
    W = validate_weights(f.graph, weights)
    dirichlet = 0.0
    for i in range(f.graph.n):
        nbrs = [j for j in f.graph.neighbors[i] if j > i]
        if not nbrs:
            continue
        aligned = aligned_neighbors(f, i, nbrs)
        for j, h_j in zip(nbrs, aligned):
            diff = f.values[i] - h_j
            dirichlet += W[i, j] * float(diff @ diff)
    dirichlet *= cfg.kappa
    casimir = 0.0
    if cfg.casimir_term:
        cas = casimir_diagonal(f.rep)
        casimir = 0.5 * float(np.einsum("ik,k,ik->", f.values, cas, f.values))
    return EnergyTerms(dirichlet, casimir)


def polyakov_energy(f: FeatureField, cfg: EnergyConfig, weights) -> float:
    return energy_terms(f, cfg, weights).total


def euler_step(f: FeatureField, dt: float, weights, kappa: float = 1.0, casimir: bool = True) -> FeatureField:
    """One explicit Euler step h <- h + dt * Delta^E h."""
    if not dt > 0:
        raise InvalidArgumentError(f"time step must be > 0, got {dt}")
    op = generalized_laplacian(f.graph, weights, f.rep, kappa, casimir)
    return f.with_values(f.values + dt * op.apply(f))


def propagate_exact(f: FeatureField, t: float, weights, kappa: float = 1.0, casimir: bool = True) -> FeatureField:
    """exp(t Delta^E) applied to the stacked field through the dense operator."""
    if t < 0:
        raise InvalidArgumentError(f"propagation time must be >= 0, got {t}")
    op = generalized_laplacian(f.graph, weights, f.rep, kappa, casimir)
    A = op.dense(f.charts)
    out = expm(t * A) @ f.values.reshape(-1)
    return f.with_values(out.reshape(f.values.shape))


def propagate_factorized(f: FeatureField, t: float, weights, kappa: float = 1.0, casimir_first: bool = True) -> FeatureField:
    """exp(-t Cas) and exp(t Delta_Dirichlet) applied in either order."""
    dirichlet = generalized_laplacian(f.graph, weights, f.rep, kappa, casimir=False).dense(f.charts)
    damping = np.exp(-t * casimir_diagonal(f.rep))
    P = expm(t * dirichlet)
    h = f.values
    if casimir_first:
        out = (P @ (h * damping).reshape(-1)).reshape(h.shape)
    else:
        out = (P @ h.reshape(-1)).reshape(h.shape) * damping
    return f.with_values(out)


class NodeState(NamedTuple):
    position: np.ndarray
    features: np.ndarray


Attention = Callable[[NodeState, NodeState], float]


def constant_attention(a: float) -> Attention:
    return lambda sender, receiver: a


def gaussian_distance_attention(M: Manifold, scale: float = 1.0) -> Attention:
    """a = scale * exp(-d(r_j, r_i)^2) with d the geodesic distance on M."""

    def attention(sender: NodeState, receiver: NodeState) -> float:
        d = geodesic_distance(M, sender.position, receiver.position)
        return scale * math.exp(-d * d)

    return attention


def beltrami_step(f: FeatureField, attention: Attention, dt: float) -> FeatureField:
    """h_i <- h_i + dt * sum_j a(sigma_j, sigma_i) (h_j - h_i)."""
    graph = f.graph

    def node(i: int) -> np.ndarray:
        nbrs = graph.neighbors[i]
        h_i = f.values[i]
        aligned = aligned_neighbors(f, i, nbrs)
        receiver = NodeState(graph.positions[i], h_i)
        coefficients = []
        for j, h_j in zip(nbrs, aligned):
            a = float(attention(NodeState(graph.positions[j], h_j), receiver))
            if not math.isfinite(a):
                raise InvalidArgumentError(f"attention between nodes {j} and {i} is not finite")
            coefficients.append(a)
        return h_i + dt * neighbor_flux(h_i, aligned, coefficients)

    values = np.array(parallel_map(node, range(graph.n))).reshape(f.values.shape)
    return f.with_values(values)
