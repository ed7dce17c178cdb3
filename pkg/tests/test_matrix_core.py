import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcrlab.errors import DimensionError, InvalidOperator, SingularSupport
from qcrlab.matrix_core import (
    SX,
    SY,
    SZ,
    eig_herm,
    is_psd,
    lyapunov_solve,
    tensor,
    trace_product,
)

from _oracles import random_hermitian


def test_is_psd_examples():
    assert is_psd(np.eye(2), 1e-10)
    assert not is_psd(np.diag([1, -0.5]), 1e-10)
    # eigenvalues {1, 0}
    assert is_psd((np.eye(2) + SX) / 2, 1e-10)


def test_is_psd_rejects_bad_input():
    with pytest.raises(InvalidOperator):
        is_psd(np.array([[1, 1], [0, 1]]))
    with pytest.raises(InvalidOperator):
        is_psd(np.ones((2, 3)))


def test_tensor_examples():
    A = random_hermitian(3, np.random.default_rng(0))
    assert np.array_equal(tensor(A, np.eye(1)), A)
    assert np.array_equal(tensor(SZ, SZ), np.diag([1, -1, -1, 1]).astype(complex))
    assert tensor(np.eye(2), np.eye(3)).shape == (6, 6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
def test_tensor_associative(seed, a, b, c):
    rng = np.random.default_rng(seed)
    A, B, C = (rng.normal(size=(k, k)) + 1j * rng.normal(size=(k, k)) for k in (a, b, c))
    # integer entries make every product exact, so the two groupings agree bit for bit
    Ai, Bi, Ci = (np.round(4 * M) for M in (A, B, C))
    assert np.array_equal(tensor(tensor(Ai, Bi), Ci), tensor(Ai, tensor(Bi, Ci)))
    left, right = tensor(tensor(A, B), C), tensor(A, tensor(B, C))
    assert left.shape == (a * b * c,) * 2
    assert np.max(np.abs(left - right)) <= 1e-12 * max(1.0, np.max(np.abs(left)))


def test_eig_herm_examples():
    lam, _ = eig_herm(SZ)
    assert np.allclose(lam, [-1, 1])
    lam, _ = eig_herm(np.eye(5))
    assert np.allclose(lam, 1)


def test_eig_herm_reconstruction_random():
    rng = np.random.default_rng(1)
    for _ in range(100):
        d = int(rng.integers(1, 9))
        A = random_hermitian(d, rng)
        lam, V = eig_herm(A)
        scale = np.linalg.norm(A, 2)
        assert np.all(np.diff(lam) >= 0)
        assert np.linalg.norm(V @ np.diag(lam) @ V.conj().T - A) <= 1e-9 * max(scale, 1)
        assert np.linalg.norm(V.conj().T @ V - np.eye(d)) <= 1e-9
        assert np.linalg.norm(A @ V - V * lam) <= 1e-9 * max(scale, 1)


def test_eig_herm_rejects_non_hermitian():
    with pytest.raises(InvalidOperator):
        eig_herm(np.array([[0, 1], [0, 0]]))


def test_trace_product_examples():
    assert trace_product(np.eye(2) / 2, np.eye(2)) == pytest.approx(1)
    assert trace_product(SX, SY) == pytest.approx(0)
    rho = (np.eye(2) + 0.6 * SX) / 2
    E = (np.eye(2) + SX) / 2
    assert trace_product(rho, E) == pytest.approx(0.8)
    with pytest.raises(DimensionError):
        trace_product(np.eye(2), np.eye(3))


def test_trace_product_conjugate_symmetry():
    rng = np.random.default_rng(2)
    for _ in range(20):
        d = int(rng.integers(1, 6))
        A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        B = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        assert trace_product(A, B) == pytest.approx(np.conj(trace_product(B.conj().T, A.conj().T)))
        H1, H2 = random_hermitian(d, rng), random_hermitian(d, rng)
        assert abs(trace_product(H1, H2).imag) <= 1e-12 * max(1, np.abs(H1).max() * np.abs(H2).max() * d)


def test_lyapunov_examples():
    assert np.allclose(lyapunov_solve(np.eye(2) / 2, SZ / 2), SZ)
    assert np.allclose(lyapunov_solve(np.eye(2) / 2, np.zeros((2, 2))), 0)
    assert np.allclose(lyapunov_solve(np.diag([0.9, 0.1]), SX / 2), SX)


def test_lyapunov_singular_support():
    rho = np.diag([1.0, 0.0])
    # diagonal weight on the kernel of rho cannot be matched
    with pytest.raises(SingularSupport):
        lyapunov_solve(rho, np.diag([0.5, -0.5]))
    # off-diagonal coupling into the kernel is fine for a pure state
    L = lyapunov_solve(rho, SX / 2)
    assert np.allclose((L @ rho + rho @ L) / 2, SX / 2)


def test_lyapunov_forward_substitution_random():
    rng = np.random.default_rng(3)
    for _ in range(100):
        d = int(rng.integers(1, 7))
        X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        rho = X @ X.conj().T
        rho /= np.trace(rho).real
        H = random_hermitian(d, rng)
        L = lyapunov_solve(rho, H)
        assert np.max(np.abs(L - L.conj().T)) < 1e-12
        assert np.linalg.norm((L @ rho + rho @ L) / 2 - H) <= 1e-9 * max(np.linalg.norm(H), 1)
