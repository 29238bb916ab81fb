import math

import numpy as np
import pytest

from bundle.equivariance import act_on_field, check_equivariance, random_isometry
from bundle.fields import FeatureField
from cli_io.selfcheck import equivariance_maps
from diffusion.graph import build_graph
from errors import InvalidArgumentError, UnsupportedConfigurationError
from group_core.clebsch_gordan import clebsch_gordan, coupling_tensor
from group_core.elements import GroupTag, compose, identity, inverse, random_element
from group_core.irreps import IrrepLabel, RepSpace, casimir_diagonal, irrep_matrix, rep_matrix
from group_core.quadrature import haar_rule
from manifold_core.heat_kernels import KernelSpec, base_heat_kernel, group_heat_kernel, radial_kernel
from manifold_core.manifolds import Manifold
from manifold_core.sampling import sample_points
from message_passing.kernel_expansion import expand_kernel, reconstruct
from message_passing.mace import b_features, band_limit_sweep, character_factor, mace_reference_message, spatial_couplings
from message_passing.messages import (
    MessageConfig,
    ProductMode,
    atomic_basis,
    base_sums,
    direct_group_integral,
    fiber_factor,
    higher_order_message,
    output_space,
    pairwise_message,
    plan_tensor,
    required_band_limit,
)
from message_passing.updates import GatedUpdate, LinearUpdate, readout, update
from tests.conftest import random_field

SO3_01 = RepSpace.from_degrees(GroupTag.SO3, [(0, 1), (1, 1)])


def rel_gap(a, b):
    return float(np.abs(a - b).max()) / max(float(np.abs(b).max()), 1e-300)


class TestAtomicBasis:
    def test_group_dependence_is_a_scalar_factor(self, cloud3, spec, rng):
        e = identity(GroupTag.SO3)
        i = next(k for k, nbrs in enumerate(cloud3.graph.neighbors) if nbrs)
        at_e = atomic_basis(i, cloud3, spec, e)
        assert np.abs(at_e).max() > 0.0
        for _ in range(3):
            g = random_element(GroupTag.SO3, rng)
            ratio = group_heat_kernel(GroupTag.SO3, spec.t, g, spec.l_grp) / group_heat_kernel(GroupTag.SO3, spec.t, e, spec.l_grp)
            np.testing.assert_allclose(atomic_basis(i, cloud3, spec, g), ratio * at_e, atol=1e-12)

    def test_covariance_under_isometry(self, cloud3, spec, rng):
        for _ in range(20):
            moved, gauges = act_on_field(cloud3, random_isometry(cloud3.graph.manifold, rng))
            g0 = gauges[0]
            i = int(rng.integers(cloud3.graph.n))
            g = random_element(GroupTag.SO3, rng)
            got = atomic_basis(i, moved, spec, g)
            want = rep_matrix(cloud3.rep, g0) @ atomic_basis(i, cloud3, spec, compose(compose(inverse(g0), g), g0))
            np.testing.assert_allclose(got, want, atol=1e-10)


class TestPairwise:
    def test_factorized_values_match_direct_integral(self, cloud3, spec):
        m = pairwise_message(cloud3, spec, MessageConfig())
        rule = haar_rule(GroupTag.SO3, m.l_exact)
        damping = np.exp(-spec.t * casimir_diagonal(cloud3.rep))
        for i in range(3):
            direct = direct_group_integral(cloud3, i, spec, rule)
            np.testing.assert_allclose(direct * damping, m.values[i], atol=1e-12)

    def test_certified_rule_is_exact(self, cloud3, spec):
        m = pairwise_message(cloud3, spec, MessageConfig())
        assert m.quadrature_residual <= 1e-10
        assert m.l_exact == required_band_limit(spec, 1, cloud3.rep.max_degree)
        finer = pairwise_message(cloud3, spec, MessageConfig(quadrature_order=m.l_exact + 1))
        np.testing.assert_allclose(finer.values, m.values, atol=1e-12)

    def test_insufficient_quadrature(self, cloud3, spec):
        with pytest.raises(InvalidArgumentError, match="insufficient quadrature"):
            pairwise_message(cloud3, spec, MessageConfig(quadrature_order=1))

    def test_fiber_integral_collapses_to_casimir_damping(self, cloud3):
        spec = KernelSpec(t=0.4, l_base=8, l_grp=3)
        m = pairwise_message(cloud3, spec, MessageConfig())
        expected = np.exp(-2.0 * spec.t * casimir_diagonal(cloud3.rep)) * base_sums(cloud3, spec)
        np.testing.assert_allclose(m.values, expected, atol=1e-12)

    @pytest.mark.parametrize("group,degree", [(GroupTag.SO2, 1), (GroupTag.SO2, 3), (GroupTag.SO3, 2)])
    def test_fiber_factor_is_scalar(self, group, degree):
        spec = KernelSpec(t=0.3, l_grp=4)
        label = IrrepLabel(group, degree)
        F = fiber_factor(label, spec, haar_rule(group, spec.l_grp + degree))
        decay = degree * degree if group == GroupTag.SO2 else degree * (degree + 1)
        np.testing.assert_allclose(F, math.exp(-decay * spec.t) * np.eye(label.dim), atol=1e-12)

    def test_isolated_nodes_receive_nothing(self, spec):
        M = Manifold.euclidean(3)
        graph = build_graph(M, [[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]], 1.0)
        f = FeatureField.create(graph, SO3_01, np.ones((2, 4)))
        assert not pairwise_message(f, spec, MessageConfig()).values.any()

    def test_permutation_invariance(self, cloud3, spec):
        perm = np.random.default_rng(4).permutation(cloud3.graph.n)
        graph = build_graph(cloud3.graph.manifold, cloud3.graph.positions[perm], cloud3.graph.cutoff)
        shuffled = FeatureField.create(graph, cloud3.rep, cloud3.values[perm])
        base = pairwise_message(cloud3, spec, MessageConfig()).values
        np.testing.assert_allclose(pairwise_message(shuffled, spec, MessageConfig()).values, base[perm], atol=1e-12)

    def test_iteration_time_overrides_kernel(self, plane2, spec):
        a = pairwise_message(plane2, spec, MessageConfig(t=0.2)).values
        b = pairwise_message(plane2, spec.with_time(0.2), MessageConfig()).values
        assert np.array_equal(a, b)


class TestHigherOrder:
    def test_order_one_is_the_pairwise_slice(self, cloud3, spec):
        pm = pairwise_message(cloud3, spec, MessageConfig()).values
        for c in range(3):
            m = higher_order_message(cloud3, spec, MessageConfig(selectors=(c,)))
            assert np.array_equal(m.values, pm[:, cloud3.rep.channel(c).slice])

    def test_tensor_against_scalar_channels(self, spec):
        f = random_field(Manifold.euclidean(3), SO3_01, 8, 0.8)
        tc = higher_order_message(f, spec, MessageConfig(order=2, out_degree=0, selectors=(1, 1))).values[:, 0]
        sc = higher_order_message(f, spec, MessageConfig(order=2, mode=ProductMode.SCALAR_CHANNELS, channel_tuples=((0, 0),))).values[:, 0]
        B = base_sums(f, spec)
        c000 = clebsch_gordan(1, 1, 0)[0, 0, 0]
        lhs = tc * B[:, 0] ** 2
        rhs = c000 * np.sum(B[:, 1:] ** 2, axis=1) * sc
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-300)

    def test_tensor_message_certified(self, cloud3, spec):
        cfg = MessageConfig(order=2, out_degree=1, selectors=(1, 2))
        m = higher_order_message(cloud3, spec, cfg)
        assert m.rep == RepSpace.single(IrrepLabel(GroupTag.SO3, 1))
        assert m.quadrature_residual <= 1e-10
        assert m.l_exact == 2 * spec.l_grp + 1

    def test_triangle_rule(self, cloud3):
        with pytest.raises(InvalidArgumentError, match="triangle"):
            plan_tensor(cloud3.rep, MessageConfig(order=2, out_degree=4, selectors=(1, 1)))

    def test_tensor_products_need_so3(self, plane2, spec):
        with pytest.raises(UnsupportedConfigurationError):
            higher_order_message(plane2, spec, MessageConfig(order=2, selectors=(2, 3)))

    def test_scalar_products_need_trivial_channels(self, cloud3, spec):
        with pytest.raises(InvalidArgumentError, match="trivial"):
            higher_order_message(cloud3, spec, MessageConfig(order=2, mode="scalar_channels", channel_tuples=((0, 1),)))

    def test_order_limit(self):
        with pytest.raises(InvalidArgumentError):
            MessageConfig(order=5)

    def test_output_space(self, plane2):
        assert output_space(plane2.rep, MessageConfig()) == plane2.rep
        scalar = output_space(plane2.rep, MessageConfig(order=2, mode="scalar_channels"))
        assert scalar == RepSpace.single(IrrepLabel(GroupTag.SO2, 0), 3)

    @pytest.mark.parametrize("scene", ["cloud3", "plane2"])
    def test_equivariance(self, scene, spec, request):
        f = request.getfixturevalue(scene)
        rng = np.random.default_rng(11)
        actions = [random_isometry(f.graph.manifold, rng) for _ in range(5)]
        for name, F in equivariance_maps(f.rep, spec, 3).items():
            report = check_equivariance(F, f, actions, 1e-8)
            assert report.passed, f"{name}: {report.max_deviation:.3e}"


class TestMace:
    @pytest.mark.parametrize(
        "cfg",
        [
            MessageConfig(order=1, selectors=(0,)),
            MessageConfig(order=1, selectors=(2,)),
            MessageConfig(order=2, mode=ProductMode.SCALAR_CHANNELS),
            MessageConfig(order=2, out_degree=1, selectors=(1, 2)),
            MessageConfig(order=3, out_degree=0, selectors=(1, 1, 2)),
        ],
    )
    def test_matches_quadrature_path(self, cloud3, spec, cfg):
        reference = mace_reference_message(cloud3, spec, cfg).values
        assert rel_gap(higher_order_message(cloud3, spec, cfg).values, reference) <= 1e-8

    def test_invariant_pairwise(self, cloud3, spec):
        pm = pairwise_message(cloud3, spec, MessageConfig()).values[:, :1]
        reference = mace_reference_message(cloud3, spec, MessageConfig(selectors=(0,))).values
        assert rel_gap(pm, reference) <= 1e-8

    def test_band_limit_sweep_converges(self, cloud3, spec):
        cfg = MessageConfig(order=2, out_degree=1, selectors=(1, 2))
        sweep = band_limit_sweep(cloud3, spec, cfg)
        required = required_band_limit(spec, 2, 1)
        assert [order for order, _ in sweep] == list(range(required + 2))
        assert all(gap <= 1e-8 for order, gap in sweep if order >= required)

    def test_b_features_rotate_with_the_a_tensor(self, rng):
        V = RepSpace.from_degrees(GroupTag.SO3, [(0, 1), (1, 1), (2, 1)])
        A = rng.standard_normal((3, 9, V.dim))
        slices = [V.channel(1).slice, V.channel(2).slice]
        C = coupling_tensor((1, 2), (), 1)
        B = b_features(A, slices, C, 2)
        for _ in range(3):
            g = random_element(GroupTag.SO3, rng)
            rotated = np.empty_like(A)
            for l in range(3):
                block = slice(l * l, (l + 1) ** 2)
                D = irrep_matrix(IrrepLabel(GroupTag.SO3, l), g)
                rotated[:, block, :] = np.einsum("ab,nbc->nac", D, A[:, block, :]) @ rep_matrix(V, g).T
            want = B @ irrep_matrix(IrrepLabel(GroupTag.SO3, 1), g).T
            np.testing.assert_allclose(b_features(rotated, slices, C, 2), want, atol=1e-10)

    def test_b_features_pair_degree_one_harmonics(self):
        a = np.array([0.3, -1.2, 0.7])
        A = np.zeros((1, 4, 1))
        A[0, 1:4, 0] = a
        scalar = coupling_tensor((0, 0), (), 0)
        got = b_features(A, [slice(0, 1), slice(0, 1)], scalar, 1)
        # only (1, 1) -> 0 survives; multiplying the summed harmonics would give sum(a)^2
        assert got[0, 0] == pytest.approx(float(a @ a) / math.sqrt(3.0), abs=1e-12)

    def test_spatial_couplings_are_invariant(self, rng):
        g = random_element(GroupTag.SO3, rng)
        for degrees, C in spatial_couplings(3, 2):
            moved = C
            for axis, l in enumerate(degrees):
                D = irrep_matrix(IrrepLabel(GroupTag.SO3, l), g)
                moved = np.moveaxis(np.tensordot(D, moved, axes=([1], [axis])), 0, axis)
            np.testing.assert_allclose(moved, C, atol=1e-10)

    def test_sphere_is_unsupported(self, sphere_field, spec):
        with pytest.raises(UnsupportedConfigurationError):
            mace_reference_message(sphere_field, spec, MessageConfig())

    def test_character_factor(self, spec):
        assert character_factor(spec, 0, 1) == 1.0
        assert character_factor(spec, 1, 1) == pytest.approx(math.exp(-2.0 * spec.t))
        # beyond the group band limit nothing survives a single factor
        assert character_factor(spec, spec.l_grp + 1, 1) == 0.0


class TestKernelExpansion:
    def test_sphere_coefficients(self):
        t, L = 0.3, 10
        expansion = expand_kernel(KernelSpec(t=t), Manifold.sphere2(), L)
        expected = [(2 * l + 1) / (4 * math.pi) * math.exp(-l * (l + 1) * t) for l in range(L + 1)]
        np.testing.assert_allclose(expansion.coefficients, expected, atol=1e-12)

    @pytest.mark.parametrize("M", [Manifold.sphere2(), Manifold.circle()])
    def test_reconstruct(self, M):
        t, L = 0.2, 16
        expansion = expand_kernel(KernelSpec(t=t), M, L)
        x, y = sample_points(M, 2, 9)
        assert reconstruct(expansion, x, y) == pytest.approx(base_heat_kernel(M, t, x, y, L), abs=1e-12)

    def test_tail_bound(self):
        M = Manifold.sphere2()
        t, L, T = 0.05, 16, 4
        expansion = expand_kernel(KernelSpec(t=t), M, L)
        bound = expansion.tail_bound(T)
        assert bound > 0.0
        assert expansion.tail_bound(L) == 0.0
        points = sample_points(M, 200, 2)
        for x, y in zip(points[::2], points[1::2]):
            gap = abs(reconstruct(expansion, x, y) - reconstruct(expansion, x, y, truncation=T))
            assert gap <= bound * (1.0 + 1e-12)

    def test_euclidean_shells(self):
        t = 0.5
        M = Manifold.euclidean(3)
        expansion = expand_kernel(KernelSpec(t=t), M, 4)
        x, y = np.array([0.1, 0.2, 0.3]), np.array([0.4, -0.2, 0.5])
        r = float(np.linalg.norm(y - x))
        exact = float(radial_kernel(3, t, np.array([r]))[0])
        assert reconstruct(expansion, x, y) == pytest.approx(exact, rel=1e-10)
        table = expansion.radial_table([0.0, 0.5])
        assert table.shape == (2, 5)
        assert np.abs(table[:, 1:]).max() < 1e-12

    def test_expansion_arguments(self):
        with pytest.raises(InvalidArgumentError):
            expand_kernel(KernelSpec(t=0.5), Manifold.sphere2(), -1)
        with pytest.raises(UnsupportedConfigurationError):
            expand_kernel(KernelSpec(t=0.5), Manifold.euclidean(2), 4)


class TestUpdates:
    def test_identity_passthrough(self, cloud3, spec):
        m = pairwise_message(cloud3, spec, MessageConfig())
        out = update(cloud3, m, LinearUpdate.identity(cloud3.rep))
        assert np.array_equal(out.values, m.values)
        assert out.charts == cloud3.charts

    def test_from_dense(self):
        A = np.diag([2.0, 3.0, 3.0, 3.0])
        lin = LinearUpdate.from_dense(SO3_01, SO3_01, A)
        assert lin.weights[IrrepLabel(GroupTag.SO3, 0)].tolist() == [[2.0]]
        assert lin.weights[IrrepLabel(GroupTag.SO3, 1)].tolist() == [[3.0]]
        np.testing.assert_allclose(lin(np.ones((1, 4))), [[2.0, 3.0, 3.0, 3.0]], atol=0.0)

    def test_from_dense_rejects_non_intertwiners(self):
        A = np.eye(4)
        A[1, 0] = 1.0
        with pytest.raises(InvalidArgumentError, match="couples"):
            LinearUpdate.from_dense(SO3_01, SO3_01, A)
        B = np.diag([1.0, 1.0, 2.0, 1.0])
        with pytest.raises(InvalidArgumentError, match="multiple of the identity"):
            LinearUpdate.from_dense(SO3_01, SO3_01, B)

    def test_missing_weights(self):
        with pytest.raises(InvalidArgumentError, match="no weights"):
            LinearUpdate(SO3_01, SO3_01, {IrrepLabel(GroupTag.SO3, 0): np.eye(1)})

    def test_zero_gate_is_passthrough(self, plane2, spec):
        m = pairwise_message(plane2, spec, MessageConfig())
        out = update(plane2, m, GatedUpdate.passthrough(plane2.rep))
        assert np.array_equal(out.values, m.values)

    def test_gate_reads_invariant_channels_only(self, plane2):
        with pytest.raises(InvalidArgumentError, match="invariant"):
            GatedUpdate(plane2.rep, (2,), np.zeros((4, 1)))

    def test_update_checks_message_space(self, plane2, cloud3, spec):
        m = pairwise_message(cloud3, spec, MessageConfig())
        with pytest.raises(InvalidArgumentError):
            update(plane2, m, LinearUpdate.identity(plane2.rep))

    def test_readout(self, plane2):
        y, total = readout(plane2, [1.0, -2.0, 0.0, 0.0])
        np.testing.assert_allclose(y, plane2.values[:, 0] - 2.0 * plane2.values[:, 1], atol=1e-15)
        assert total == pytest.approx(float(y.sum()))
        y2, _ = readout(plane2, {1: 0.5})
        np.testing.assert_allclose(y2, 0.5 * plane2.values[:, 1], atol=0.0)

    def test_readout_errors(self, plane2):
        with pytest.raises(InvalidArgumentError, match="readout weights"):
            readout(plane2, [1.0])
        with pytest.raises(InvalidArgumentError, match="invariant"):
            readout(plane2, [0.0, 0.0, 1.0, 0.0])
