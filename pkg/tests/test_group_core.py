import math

import numpy as np
import pytest
from scipy.linalg import expm

from errors import InvalidArgumentError
from group_core.clebsch_gordan import (
    clebsch_gordan,
    coupling_tensor,
    default_coupling_path,
    product_multiplicity,
    reachable_degrees,
    validate_coupling_path,
)
from group_core.elements import (
    GroupTag,
    compose,
    distance,
    euler_zyz,
    exp_group,
    from_euler_zyz,
    identity,
    inverse,
    random_element,
    rotation2,
    rotation3,
)
from group_core.irreps import (
    IrrepLabel,
    RepSpace,
    casimir,
    casimir_diagonal,
    casimir_on_space,
    character,
    generators,
    irrep_matrices,
    irrep_matrix,
    rep_matrix,
)
from group_core.quadrature import haar_rule, integrate_over_group, weighted_sum
from manifold_core.harmonics import spherical_harmonics


def rz(alpha):
    c, s = math.cos(alpha), math.sin(alpha)
    return rotation3(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))


def so3(l):
    return IrrepLabel(GroupTag.SO3, l)


def so2(m):
    return IrrepLabel(GroupTag.SO2, m)


class TestElements:
    def test_so2_angles_add(self):
        assert compose(rotation2(1.0), rotation2(2.0)).angle == pytest.approx(3.0, abs=1e-15)

    def test_so2_angle_is_reduced(self):
        assert rotation2(-0.5).angle == pytest.approx(2 * math.pi - 0.5, abs=1e-15)
        assert rotation2(4 * math.pi).angle == 0.0

    def test_so3_one_parameter_subgroup(self):
        g = compose(rz(2.0), rz(5.0))
        assert distance(g, rz(7.0 - 2 * math.pi)) < 1e-12

    def test_identity_is_neutral(self, rng):
        for group in (GroupTag.SO2, GroupTag.SO3):
            g = random_element(group, rng)
            assert distance(compose(identity(group), g), g) < 1e-15
            assert distance(compose(g, inverse(g)), identity(group)) < 1e-12

    def test_so3_inverse_is_transpose(self, rng):
        g = random_element(GroupTag.SO3, rng)
        assert np.array_equal(inverse(g).matrix, g.matrix.T)

    def test_mismatched_groups(self):
        with pytest.raises(InvalidArgumentError):
            compose(rotation2(1.0), identity(GroupTag.SO3))

    def test_rejects_improper_rotation(self):
        with pytest.raises(InvalidArgumentError):
            rotation3(np.diag([1.0, 1.0, -1.0]))

    def test_euler_round_trip(self, rng):
        for _ in range(20):
            g = random_element(GroupTag.SO3, rng)
            assert distance(from_euler_zyz(*euler_zyz(g)), g) < 1e-10

    def test_exp_group_so3_is_axis_rotation(self):
        assert distance(exp_group(GroupTag.SO3, [0.0, 0.0, 0.7]), rz(0.7)) < 1e-12


class TestIrreps:
    def test_trivial_irrep(self, rng):
        g = random_element(GroupTag.SO3, rng)
        assert np.array_equal(irrep_matrix(so3(0), g), np.ones((1, 1)))

    def test_planar_quarter_turn(self):
        D = irrep_matrix(so2(1), rotation2(math.pi / 2))
        np.testing.assert_allclose(D, [[0.0, -1.0], [1.0, 0.0]], atol=1e-15)

    def test_l1_about_z(self):
        # real basis of degree 1 is ordered (y, z, x)
        a = 0.4
        D = irrep_matrix(so3(1), rz(a))
        c, s = math.cos(a), math.sin(a)
        np.testing.assert_allclose(D, [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]], atol=1e-12)

    @pytest.mark.parametrize("l", [0, 1, 2, 3, 4])
    def test_homomorphism_and_orthogonality(self, l, rng):
        g1, g2 = random_element(GroupTag.SO3, rng), random_element(GroupTag.SO3, rng)
        D1, D2 = irrep_matrix(so3(l), g1), irrep_matrix(so3(l), g2)
        np.testing.assert_allclose(irrep_matrix(so3(l), compose(g1, g2)), D1 @ D2, atol=1e-10)
        np.testing.assert_allclose(D1.T @ D1, np.eye(2 * l + 1), atol=1e-12)

    @pytest.mark.parametrize("l", [1, 2, 3])
    def test_harmonics_transform_with_irrep(self, l, rng):
        points = rng.standard_normal((6, 3))
        points /= np.linalg.norm(points, axis=1, keepdims=True)
        g = random_element(GroupTag.SO3, rng)
        moved = spherical_harmonics(l, points @ g.matrix.T)
        np.testing.assert_allclose(moved, spherical_harmonics(l, points) @ irrep_matrix(so3(l), g).T, atol=1e-12)

    def test_batched_matrices_match(self):
        rule = haar_rule(GroupTag.SO3, 2)
        batch = irrep_matrices(so3(2), rule)
        for q in range(0, len(rule), 17):
            np.testing.assert_allclose(batch[q], irrep_matrix(so3(2), rule.nodes[q]), atol=1e-12)

    @pytest.mark.parametrize("label", [so2(3), so3(1), so3(2)])
    def test_generators_exponentiate(self, label):
        for k, A in enumerate(generators(label)):
            np.testing.assert_allclose(A, -A.T, atol=1e-15)
            for s in (0.3, 1.7, math.pi):
                coeffs = np.zeros(3 if label.group == GroupTag.SO3 else 1)
                coeffs[k] = s
                g = exp_group(label.group, coeffs)
                np.testing.assert_allclose(expm(s * A), irrep_matrix(label, g), atol=1e-9)

    def test_so2_generator(self):
        assert np.array_equal(generators(so2(3))[0], np.array([[0.0, -3.0], [3.0, 0.0]]))

    @pytest.mark.parametrize("l", range(5))
    def test_casimir_spectrum(self, l):
        np.testing.assert_allclose(casimir(so3(l)), l * (l + 1) * np.eye(2 * l + 1), atol=1e-12)
        if l:
            np.testing.assert_allclose(casimir(so2(l)), l * l * np.eye(2), atol=1e-12)

    @pytest.mark.parametrize("label", [so2(2), so3(1), so3(3)])
    def test_casimir_commutes_with_the_representation(self, label, rng):
        C = casimir(label)
        for _ in range(5):
            D = irrep_matrix(label, random_element(label.group, rng))
            assert np.linalg.norm(C @ D - D @ C) <= 1e-10

    def test_casimir_on_space(self):
        V = RepSpace.from_degrees(GroupTag.SO3, [(0, 1), (1, 1)])
        assert casimir_diagonal(V).tolist() == [0.0, 2.0, 2.0, 2.0]
        np.testing.assert_allclose(casimir_on_space(V), np.diag([0.0, 2.0, 2.0, 2.0]), atol=1e-12)

    def test_character_is_trace(self, rng):
        g = random_element(GroupTag.SO3, rng)
        for l in range(4):
            assert character(so3(l), g) == pytest.approx(np.trace(irrep_matrix(so3(l), g)), abs=1e-10)

    def test_rep_matrix_is_block_diagonal(self, rng):
        V = RepSpace.from_degrees(GroupTag.SO2, [(0, 1), (2, 1)])
        g = random_element(GroupTag.SO2, rng)
        R = rep_matrix(V, g)
        assert R.shape == (3, 3)
        assert R[0, 0] == 1.0 and not R[0, 1:].any()
        np.testing.assert_allclose(R[1:, 1:], irrep_matrix(so2(2), g), atol=1e-15)

    def test_repspace_rejects_mixed_groups(self):
        with pytest.raises(InvalidArgumentError):
            RepSpace(((so2(1), 1), (so3(1), 1)))


class TestQuadrature:
    @pytest.mark.parametrize("group", [GroupTag.SO2, GroupTag.SO3])
    def test_nontrivial_irreps_average_to_zero(self, group):
        rule = haar_rule(group, 4)
        assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
        for l in range(1, 5):
            label = IrrepLabel(group, l)
            mean = weighted_sum(rule.weights, irrep_matrices(label, rule))
            assert np.abs(mean).max() < 1e-10

    @pytest.mark.parametrize("l", range(5))
    def test_schur_orthogonality(self, l):
        rule = haar_rule(GroupTag.SO3, 2 * l)
        D = irrep_matrices(so3(l), rule)
        chi = np.trace(D, axis1=1, axis2=2)
        got = weighted_sum(rule.weights * chi, np.transpose(D, (0, 2, 1)))
        np.testing.assert_allclose(got, np.eye(2 * l + 1) / (2 * l + 1), atol=1e-10)

    def test_integrate_over_group_matches_batch(self):
        rule = haar_rule(GroupTag.SO2, 3)
        total = integrate_over_group(lambda g: math.cos(g.angle) ** 2, rule)
        assert total == pytest.approx(0.5, abs=1e-14)

    def test_negative_order(self):
        with pytest.raises(InvalidArgumentError):
            haar_rule(GroupTag.SO3, -1)


class TestClebschGordan:
    @pytest.mark.parametrize("l1,l2,l", [(1, 1, 0), (1, 1, 1), (1, 1, 2), (1, 2, 1), (2, 2, 2), (2, 1, 3)])
    def test_intertwines(self, l1, l2, l, rng):
        C = clebsch_gordan(l1, l2, l)
        assert np.linalg.norm(C) == pytest.approx(1.0, abs=1e-12)
        g = random_element(GroupTag.SO3, rng)
        D1, D2, D = (irrep_matrix(so3(d), g) for d in (l1, l2, l))
        left = np.einsum("ai,bj,ijk->abk", D1, D2, C)
        right = np.einsum("abc,ck->abk", C, D)
        np.testing.assert_allclose(left, right, atol=1e-10)

    def test_invariant_pairing(self):
        np.testing.assert_allclose(clebsch_gordan(1, 1, 0)[:, :, 0], np.eye(3) / math.sqrt(3.0), atol=1e-10)

    def test_triangle_violation_is_zero(self):
        assert not clebsch_gordan(1, 1, 3).any()

    def test_multiplicities(self):
        assert reachable_degrees((1, 1)) == {0, 1, 2}
        assert product_multiplicity((1, 1), 0) == 1
        assert product_multiplicity((1, 1, 1), 1) == 3
        assert product_multiplicity((1, 1, 1), 0) == 1
        assert product_multiplicity((1, 2), 4) == 0

    def test_default_path(self):
        assert default_coupling_path((1, 1, 1), 1) == (0,)
        assert default_coupling_path((2, 2), 0) == ()

    def test_unreachable_degree_names_triangle_rule(self):
        with pytest.raises(InvalidArgumentError, match="triangle"):
            default_coupling_path((1, 1), 3)
        with pytest.raises(InvalidArgumentError, match="triangle"):
            validate_coupling_path((1, 1, 1), (0,), 2)

    def test_coupling_paths_span_the_multiplicity_space(self, rng):
        # every path gives an intertwiner; together they span all three copies of l=1 in 1x1x1
        tensors = [coupling_tensor((1, 1, 1), (mu,), 1) for mu in (0, 1, 2)]
        g = random_element(GroupTag.SO3, rng)
        D = irrep_matrix(so3(1), g)
        for C in tensors:
            left = np.einsum("ai,bj,ck,ijkl->abcl", D, D, D, C)
            np.testing.assert_allclose(left, np.einsum("abcm,ml->abcl", C, D), atol=1e-10)
        singular = np.linalg.svd(np.stack([C.ravel() for C in tensors]), compute_uv=False)
        assert singular.min() > 1e-3
