import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from robustgate.errors import ValidationError
from robustgate.qlinalg import (I2, X, Y, Z, Hermitian2, dagger, expm_frechet, expm_hermitian, expm_su2,
                                ordered_product, su2_exp, unitarity_error)

finite = st.floats(-20, 20, allow_nan=False)


def random_hermitian(rng, n):
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (A + A.conj().T) / 2


class TestExpmSu2:
    def test_x_quarter_turn(self):
        np.testing.assert_allclose(expm_su2(Hermitian2(ax=1), np.pi / 2), -1j * X, atol=1e-15)

    def test_z_diagonal(self):
        np.testing.assert_allclose(expm_su2(Hermitian2(az=1), 4.0), np.diag([np.exp(-4j), np.exp(4j)]), atol=1e-15)

    def test_zero_generator(self):
        np.testing.assert_allclose(expm_su2(Hermitian2(), 3.3), I2, atol=0)

    def test_zero_norm_with_phase(self):
        np.testing.assert_allclose(expm_su2(Hermitian2(a0=0.4), 2.0), np.exp(-0.8j) * I2, atol=1e-15)

    def test_nonfinite_time_rejected(self):
        with pytest.raises(ValidationError):
            expm_su2(Hermitian2(ax=1), np.inf)

    def test_nonfinite_coefficients_rejected(self):
        with pytest.raises(ValidationError):
            Hermitian2(ax=np.nan)

    def test_hermitian2_matrix_is_exactly_hermitian(self):
        H = Hermitian2(0.3, -1.2, 0.7, 2.0).matrix()
        assert np.array_equal(H, H.conj().T)

    @settings(max_examples=200, deadline=None)
    @given(finite, finite, finite, finite, st.floats(-10, 10))
    def test_unitary_and_matches_eigh(self, ax, ay, az, a0, t):
        H = Hermitian2(ax, ay, az, a0)
        U = expm_su2(H, t)
        assert unitarity_error(U) < 1e-12
        np.testing.assert_allclose(U, expm_hermitian(H.matrix(), t), atol=1e-12)

    def test_vectorised_shapes(self):
        U = su2_exp(np.linspace(0, 1, 6).reshape(2, 3), 0.0, 1.0, 0.0, 0.5)
        assert U.shape == (2, 3, 2, 2)


class TestExpmHermitian:
    def test_z_half_period(self):
        np.testing.assert_allclose(expm_hermitian(Z, np.pi), -I2, atol=1e-15)

    def test_zero_time(self):
        H = random_hermitian(np.random.default_rng(0), 3)
        np.testing.assert_allclose(expm_hermitian(H, 0.0), np.eye(3), atol=1e-15)

    def test_matches_eigendecomposition_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            H = random_hermitian(rng, 4)
            t = rng.uniform(-3, 3)
            # oracle: Schur form of a Hermitian matrix is diagonal
            Tm, Q = scipy.linalg.schur(H, output="complex")
            ref = Q @ np.diag(np.exp(-1j * t * np.diag(Tm))) @ Q.conj().T
            np.testing.assert_allclose(expm_hermitian(H, t), ref, atol=1e-12)

    def test_unitary_for_large_spectrum(self):
        H = 1e3 * random_hermitian(np.random.default_rng(2), 6)
        assert unitarity_error(expm_hermitian(H, 7.0)) < 1e-12

    def test_non_hermitian_rejected(self):
        with pytest.raises(ValidationError):
            expm_hermitian(np.array([[0, 1], [0, 0]]), 1.0)

    def test_non_square_rejected(self):
        with pytest.raises(ValidationError):
            expm_hermitian(np.zeros((2, 3)), 1.0)


class TestFrechet:
    def test_zero_direction(self):
        U, dU = expm_frechet(X + 0.3 * Z, np.zeros((2, 2)), 1.3)
        np.testing.assert_allclose(dU, 0, atol=1e-15)
        np.testing.assert_allclose(U, expm_hermitian(X + 0.3 * Z, 1.3), atol=1e-13)

    def test_commuting_case(self):
        _, dU = expm_frechet(Z, Z, 1.0)
        np.testing.assert_allclose(dU, -1j * Z @ expm_hermitian(Z, 1.0), atol=1e-14)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        eps = 1e-6
        for _ in range(20):
            H = Hermitian2(*rng.normal(size=4)).matrix()
            E = Hermitian2(*rng.normal(size=4)).matrix()
            t = rng.uniform(0.1, 2)
            _, dU = expm_frechet(H, E, t)
            fd = (expm_hermitian(H + eps * E, t) - expm_hermitian(H - eps * E, t)) / (2 * eps)
            assert np.max(np.abs(dU - fd)) / np.max(np.abs(dU)) < 1e-8

    def test_linearity(self):
        rng = np.random.default_rng(4)
        H, E1, E2 = (random_hermitian(rng, 3) for _ in range(3))
        a, b = 0.7, -1.9
        _, d1 = expm_frechet(H, E1, 0.8)
        _, d2 = expm_frechet(H, E2, 0.8)
        _, d = expm_frechet(H, a * E1 + b * E2, 0.8)
        np.testing.assert_allclose(d, a * d1 + b * d2, atol=1e-10)

    def test_batched_equals_loop(self):
        rng = np.random.default_rng(5)
        Hs = np.stack([random_hermitian(rng, 2) for _ in range(5)])
        U, dU = expm_frechet(Hs, X, 0.4)
        for k in range(5):
            u, du = expm_frechet(Hs[k], X, 0.4)
            np.testing.assert_allclose(U[k], u, atol=1e-14)
            np.testing.assert_allclose(dU[k], du, atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            expm_frechet(np.eye(2), np.eye(3), 1.0)


def test_ordered_product_is_time_ordered():
    A, B, C = expm_su2(Hermitian2(ax=1), 0.3), expm_su2(Hermitian2(az=1), 0.5), expm_su2(Hermitian2(ay=1), 0.7)
    np.testing.assert_allclose(ordered_product(np.stack([A, B, C])), C @ B @ A, atol=1e-15)


def test_dagger():
    M = np.array([[1, 2j], [3, 4 - 1j]])
    np.testing.assert_array_equal(dagger(M), M.conj().T)


def test_pauli_algebra():
    np.testing.assert_allclose(X @ Y, 1j * Z)
    for P in (X, Y, Z):
        np.testing.assert_allclose(P @ P, I2)
