"""Dense complex linear algebra on small operators.

Matrices are plain ``numpy.ndarray`` objects of dtype complex128.
"""

from functools import reduce

import numpy as np

from .errors import DimensionError, InvalidOperator, SingularSupport
from .policy import DEFAULT_POLICY

# Pauli matrices, used all over the package.
I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (SX, SY, SZ)


def as_matrix(A):
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {A.shape}")
    return A


def hermiticity_defect(A):
    """Largest entrywise deviation ``|A_jk - conj(A_kj)|``."""
    A = as_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise InvalidOperator(f"matrix is not square: {A.shape}")
    return float(np.max(np.abs(A - A.conj().T))) if A.size else 0.0


def is_hermitian(A, tol=DEFAULT_POLICY.hermitian_tol):
    return hermiticity_defect(A) <= tol


def is_psd(A, tol=DEFAULT_POLICY.structural_tol):
    """True iff the Hermitian matrix ``A`` has smallest eigenvalue >= -tol."""
    A = as_matrix(A)
    if hermiticity_defect(A) > tol:
        raise InvalidOperator("matrix is not Hermitian within tolerance")
    lam = np.linalg.eigvalsh(0.5 * (A + A.conj().T))
    return bool(lam[0] >= -tol)


def tensor(*mats):
    """Kronecker product of one or more matrices, left to right."""
    if not mats:
        raise DimensionError("tensor needs at least one operand")
    return reduce(np.kron, (np.asarray(m, dtype=complex) for m in mats))


def eig_herm(A):
    """Ascending eigenvalues and orthonormal eigenvectors (columns) of a Hermitian matrix."""
    A = as_matrix(A)
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if hermiticity_defect(A) > DEFAULT_POLICY.hermitian_tol * scale:
        raise InvalidOperator("eig_herm requires a Hermitian matrix")
    lam, V = np.linalg.eigh(0.5 * (A + A.conj().T))
    return lam, V


def trace_product(A, B):
    """``tr(A B)`` computed as an elementwise contraction."""
    A = as_matrix(A)
    B = as_matrix(B)
    if A.shape[0] != B.shape[1] or A.shape[1] != B.shape[0] or A.shape[0] != A.shape[1]:
        raise DimensionError(f"incompatible shapes {A.shape} and {B.shape}")
    return complex(np.einsum("ij,ji->", A, B))


def lyapunov_solve(rho, X, policy=DEFAULT_POLICY):
    """Hermitian ``L`` with ``(L rho + rho L)/2 = X``.

    Solved in the eigenbasis of ``rho``: ``L_jk = 2 X_jk / (l_j + l_k)``.
    Components where ``l_j + l_k`` vanishes are set to zero when ``X_jk`` does
    too; otherwise :class:`SingularSupport` is raised.
    """
    rho = as_matrix(rho)
    X = as_matrix(X)
    if rho.shape != X.shape:
        raise DimensionError(f"rho {rho.shape} and X {X.shape} differ")
    lam, U = eig_herm(rho)
    Xe = U.conj().T @ X @ U
    denom = lam[:, None] + lam[None, :]
    small = denom <= policy.support_tol
    if np.any(np.abs(Xe[small]) > policy.support_rhs_tol):
        raise SingularSupport(
            "derivative has components outside the support of the state "
            f"(max {np.max(np.abs(Xe[small])):.3e})"
        )
    Le = np.zeros_like(Xe)
    Le[~small] = 2.0 * Xe[~small] / denom[~small]
    L = U @ Le @ U.conj().T
    return 0.5 * (L + L.conj().T)
