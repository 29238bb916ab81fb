import numpy as np
import pytest

from bundle.fields import FeatureField
from diffusion.graph import build_graph
from group_core.elements import GroupTag
from group_core.irreps import RepSpace
from manifold_core.heat_kernels import KernelSpec
from manifold_core.manifolds import Manifold
from manifold_core.sampling import sample_points
from utils import get_threads, set_threads

SEED = 1235


@pytest.fixture(autouse=True)
def restore_threads():
    before = get_threads()
    yield
    set_threads(before)


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


def random_field(M: Manifold, V: RepSpace, n: int, cutoff: float, seed: int = SEED) -> FeatureField:
    graph = build_graph(M, sample_points(M, n, seed), cutoff)
    values = np.random.default_rng(seed + 1).standard_normal((graph.n, V.dim))
    return FeatureField.create(graph, V, values)


@pytest.fixture
def cloud3():
    """8-node Euclidean(3) cloud with an l = 0, 1, 2 channel each."""
    V = RepSpace.from_degrees(GroupTag.SO3, [(0, 1), (1, 1), (2, 1)])
    return random_field(Manifold.euclidean(3), V, 8, 0.8)


@pytest.fixture
def plane2():
    V = RepSpace.from_degrees(GroupTag.SO2, [(0, 2), (1, 1), (2, 1)])
    return random_field(Manifold.euclidean(2), V, 10, 0.6)


@pytest.fixture
def sphere_field():
    V = RepSpace.from_degrees(GroupTag.SO2, [(0, 1), (1, 1), (2, 1)])
    return random_field(Manifold.sphere2(), V, 10, 1.2)


@pytest.fixture
def spec():
    return KernelSpec(t=0.5, l_base=8, l_grp=2)
