"""Transformation lifts, commutation checks, and structured constructions."""

import numpy as np
import pytest

from deeplq.equivariance import (
    LqSystem,
    Transformation,
    all_permutation_matrices,
    check_equivariant,
    make_permutation_structured,
    make_polynomial_system,
    make_symmetric_structured,
    normal_decomposition_check,
    permutation_matrix,
)


class TestTransformation:
    def test_lift_has_kronecker_structure(self, rng):
        F = rng.standard_normal((3, 3))
        tr = Transformation(F, d_x=2, d_u=1)
        np.testing.assert_allclose(tr.F_x, np.kron(F, np.eye(2)), atol=0)
        np.testing.assert_allclose(tr.F_u, np.kron(F, np.eye(1)), atol=0)

    def test_normality_detection(self, rng):
        sym = rng.standard_normal((4, 4))
        sym = sym + sym.T
        assert Transformation(sym).is_normal
        skew = rng.standard_normal((4, 4))
        skew = skew - skew.T
        assert Transformation(skew).is_normal
        dense = rng.standard_normal((4, 4))
        assert not Transformation(dense).is_normal

    def test_spectral_requires_normal(self, rng):
        dense = rng.standard_normal((4, 4)) + 10 * np.triu(np.ones((4, 4)), 1)
        with pytest.raises(ValueError, match="normal"):
            Transformation(dense).spectral()

    def test_spectral_reconstructs_matrix(self, rng):
        F = rng.standard_normal((4, 4))
        F = F + F.T
        lam, V = Transformation(F).spectral()
        np.testing.assert_allclose(V @ np.diag(lam) @ np.conj(V.T), F, atol=1e-12)


class TestCheckEquivariant:
    def test_identity_always_passes(self, rng):
        n, d = 3, 2
        sys = LqSystem(
            A=rng.standard_normal((n * d, n * d)),
            B=rng.standard_normal((n * d, n * d)),
            Q=rng.standard_normal((n * d, n * d)),
            R=rng.standard_normal((n * d, n * d)),
        )
        verdict = check_equivariant(Transformation(np.eye(n), d_x=d, d_u=d), sys)
        assert verdict.ok

    def test_polynomial_system_passes(self, rng):
        F = rng.standard_normal((4, 4))
        tr = Transformation(F)
        sys = make_polynomial_system(tr, [0.3, -0.2, 0.1], [1.0, 0.4], [0.5, 0.0, 0.2], [1.0])
        assert check_equivariant(tr, sys).ok

    def test_random_dense_system_fails_under_permutation(self, rng):
        n = 4
        sys = LqSystem(
            A=rng.standard_normal((n, n)),
            B=rng.standard_normal((n, n)),
            Q=np.eye(n),
            R=np.eye(n),
        )
        P = permutation_matrix([1, 2, 3, 0])
        verdict = check_equivariant(Transformation(P), sys)
        assert not verdict.ok
        assert verdict.residual_dynamics_A > 1e-6

    def test_dimension_mismatch_raises(self, rng):
        sys = LqSystem(A=np.eye(4), B=np.eye(4), Q=np.eye(4), R=np.eye(4))
        with pytest.raises(ValueError, match="dims"):
            check_equivariant(Transformation(np.eye(3)), sys)

    def test_verdict_renders_residuals(self):
        sys = LqSystem(A=np.eye(2), B=np.eye(2), Q=np.eye(2), R=np.eye(2))
        verdict = check_equivariant(Transformation(np.eye(2)), sys)
        text = str(verdict)
        assert "pass" in text and "cost" in text


class TestPolynomialSystems:
    def test_constant_coefficient_gives_identity(self):
        tr = Transformation(np.diag([2.0, 3.0]))
        sys = make_polynomial_system(tr, [1.0], [1.0], [1.0], [1.0])
        np.testing.assert_allclose(sys.A.at(0.0), np.eye(2), atol=0)

    def test_indefinite_weight_still_equivariant(self, rng):
        F = rng.standard_normal((3, 3))
        F = F + F.T
        tr = Transformation(F)
        sys = make_polynomial_system(tr, [0.1, 0.2], [1.0], [-1.0, 0.0, 0.5], [1.0])
        assert np.min(np.linalg.eigvalsh(sys.Q.at(0.0))) < 0
        assert check_equivariant(tr, sys).ok

    def test_requires_square_action_lift(self):
        tr = Transformation(np.eye(3), d_x=2, d_u=1)
        with pytest.raises(ValueError, match="d_x == d_u"):
            make_polynomial_system(tr, [1.0], [1.0], [1.0], [1.0])


class TestNormalDecomposition:
    def test_orthogonal_transformation_is_isometry(self, rng):
        theta = 0.7
        F = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        x = rng.standard_normal(2)
        u = rng.standard_normal(2)
        lhs, rhs, residual = normal_decomposition_check(
            Transformation(F), np.eye(2), np.eye(2), x, u
        )
        assert lhs == pytest.approx(x @ x + u @ u, rel=1e-12)
        assert residual <= 1e-10

    def test_spectral_line_case(self):
        # eigenvalues (2, 0, 0): cost of x = v_1 quadruples
        V = np.linalg.qr(np.arange(9.0).reshape(3, 3) + np.eye(3))[0]
        F = 2.0 * np.outer(V[:, 0], V[:, 0])
        x = V[:, 0]
        lhs, rhs, residual = normal_decomposition_check(
            Transformation(F), np.eye(3), np.eye(3), x, np.zeros(3)
        )
        assert lhs == pytest.approx(4.0, rel=1e-12)
        assert rhs == pytest.approx(4.0, rel=1e-12)

    def test_zero_transformation(self, rng):
        lhs, rhs, residual = normal_decomposition_check(
            Transformation(np.zeros((3, 3))),
            np.eye(3),
            np.eye(3),
            rng.standard_normal(3),
            rng.standard_normal(3),
        )
        assert lhs == 0.0 and rhs == 0.0 and residual == 0.0

    def test_permutation_spectrum_is_unimodular(self):
        P = permutation_matrix([2, 0, 1, 3])
        lam, _ = Transformation(P).spectral()
        np.testing.assert_allclose(np.abs(lam), 1.0, atol=1e-10)


class TestSymmetricStructured:
    def test_identity_transformation_sums_coefficients(self):
        st = make_symmetric_structured(np.eye(3), [0.2, 0.3], [1.0], [0.5], [1.0])
        np.testing.assert_allclose(st.feature_a, np.full(3, 0.5), atol=1e-12)
        np.testing.assert_allclose(st.local_a, 0.2, atol=0)

    def test_all_ones_two_agent_spectrum(self):
        st = make_symmetric_structured(np.ones((2, 2)), [0.0, 1.0], [1.0], [1.0], [1.0])
        np.testing.assert_allclose(sorted(st.eigenvalues), [0.0, 2.0], atol=1e-12)

    def test_influence_factors_orthonormal(self, rng):
        F = rng.standard_normal((5, 5))
        F = F + F.T
        st = make_symmetric_structured(F, [0.1, 0.2], [1.0, 0.1], [1.0], [1.0])
        n = st.n
        np.testing.assert_allclose(st.alpha.T @ st.alpha / n, np.eye(n), atol=1e-10)

    def test_joint_assembly_passes_check(self, rng):
        F = rng.standard_normal((4, 4))
        F = F + F.T
        st = make_symmetric_structured(F, [0.1, 0.3], [1.0, -0.2], [0.7, 0.1], [1.0, 0.05])
        verdict = check_equivariant(Transformation(F), st.to_lq_system())
        assert verdict.ok

    def test_rejects_asymmetric_input(self, rng):
        with pytest.raises(ValueError, match="symmetric"):
            make_symmetric_structured(rng.standard_normal((3, 3)), [1.0], [1.0], [1.0], [1.0])


class TestPermutationStructured:
    def test_decoupled_system_trivially_equivariant(self):
        sys = make_permutation_structured(1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, n=4)
        for P in all_permutation_matrices(4):
            assert check_equivariant(Transformation(P), sys).ok

    def test_mean_coupling_commutes_with_all_permutations(self):
        sys = make_permutation_structured(1.0, 0.5, 1.0, 0.1, 1.0, 0.2, 1.0, 0.0, n=3)
        A = sys.A.at(0.0)
        np.testing.assert_allclose(A, np.eye(3) + 0.5 * np.ones((3, 3)), atol=0)
        for P in all_permutation_matrices(3):
            np.testing.assert_allclose(P.T @ A @ P, A, atol=0)

    def test_indefinite_coupling_remains_equivariant(self):
        sys = make_permutation_structured(1.0, 0.0, 1.0, 0.0, 0.1, -1.0, 1.0, 0.0, n=3)
        assert np.min(np.linalg.eigvalsh(sys.Q.at(0.0))) < 0
        for P in all_permutation_matrices(3):
            assert check_equivariant(Transformation(P), sys).ok

    def test_permutation_matrix_helpers(self):
        P = permutation_matrix([1, 0])
        np.testing.assert_allclose(P, [[0.0, 1.0], [1.0, 0.0]], atol=0)
        mats = all_permutation_matrices(3)
        assert len(mats) == 6
        with pytest.raises(ValueError):
            all_permutation_matrices(7)
