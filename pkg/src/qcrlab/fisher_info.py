"""Classical and SLD Fisher information, local unbiasedness, adaptive chains."""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import CapacityError, DimensionError, SupportBoundary
from .matrix_core import lyapunov_solve
from .policy import DEFAULT_POLICY
from .quantum_model import Povm, StateModel, outcome_distribution


@dataclass(frozen=True, eq=False)
class FisherMatrix:
    matrix: np.ndarray
    theta: np.ndarray
    source: str  # "povm" or "sld"

    @property
    def m(self):
        return self.matrix.shape[0]

    def inverse_trace(self, G):
        return float(np.trace(np.asarray(G, dtype=float) @ np.linalg.inv(self.matrix)))


def _symmetrize(J):
    return 0.5 * (J + J.T)


def probability_derivatives(model: StateModel, p: Povm, theta):
    """``(q, dq)`` with ``q_k = tr(rho E_k)`` and ``dq[i, k] = tr(d_i rho E_k)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    rho = model.state(theta)
    if rho.shape[0] != p.dim:
        raise DimensionError(f"model dim {rho.shape[0]} != POVM dim {p.dim}")
    q = np.einsum("ij,kji->k", rho, p.elements).real
    dq = np.einsum("aij,kji->ak", model.derivatives(theta), p.elements).real
    return q, dq


def classical_fisher(model: StateModel, p: Povm, theta, policy=DEFAULT_POLICY) -> FisherMatrix:
    """Fisher matrix ``sum_k dq_i dq_j / q_k`` of the outcome distribution of ``p``.

    Outcomes with ``q_k <= q_floor`` are skipped when their derivative is also
    negligible; otherwise the information diverges and :class:`SupportBoundary`
    is raised.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    q, dq = probability_derivatives(model, p, theta)
    low = q <= policy.q_floor
    if np.any(low & np.any(np.abs(dq) > policy.deriv_floor, axis=0)):
        raise SupportBoundary(f"outcome with vanishing probability but nonzero derivative at theta={theta}")
    keep = ~low
    J = (dq[:, keep] / q[keep]) @ dq[:, keep].T
    return FisherMatrix(_symmetrize(J), theta, "povm")


def sld_operators(model: StateModel, theta, policy=DEFAULT_POLICY):
    rho = model.state(theta)
    return rho, [lyapunov_solve(rho, D, policy) for D in model.derivatives(theta)]


def sld_fisher(model: StateModel, theta, policy=DEFAULT_POLICY) -> FisherMatrix:
    """SLD quantum Fisher matrix ``Re tr(rho L_i L_j)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    rho, Ls = sld_operators(model, theta, policy)
    m = len(Ls)
    J = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            J[i, j] = J[j, i] = np.einsum("ij,jk,ki->", rho, Ls[i], Ls[j]).real
    return FisherMatrix(J, theta, "sld")


def check_local_unbiasedness(model: StateModel, p: Povm, est, theta, tol=1e-9):
    """Check ``E[theta_hat] = theta`` and ``d E[theta_hat] / d theta = I`` at ``theta``.

    ``est`` maps every outcome label to a vector.  Returns ``(ok, report)``
    where the report holds the mean defect and the Jacobian defect.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    missing = [s for s in p.labels if s not in est]
    if missing:
        raise DimensionError(f"estimator undefined on outcomes {missing}")
    values = np.array([np.atleast_1d(np.asarray(est[s], dtype=float)) for s in p.labels])
    q, dq = probability_derivatives(model, p, theta)
    mean = values.T @ q
    jac = values.T @ dq.T  # jac[j, l] = sum_k est^j(k) d_l q_k
    mean_defect = np.abs(mean - theta)
    jac_defect = np.abs(jac - np.eye(len(theta)))
    ok = bool(mean_defect.max() <= tol and jac_defect.max() <= tol)
    return ok, {"mean": mean, "jacobian": jac, "mean_defect": mean_defect, "jacobian_defect": jac_defect}


class HistoryRule:
    """Sequential measurement plan: ``rule(history) -> Povm``.

    ``history`` is the tuple of outcome labels observed so far.
    """

    def __init__(self, rule: Callable):
        self.rule = rule

    def povm_for(self, history):
        return self.rule(tuple(history))


def adaptive_chain_fisher(strategy, model: StateModel, theta, n: int, max_histories=1_000_000,
                          policy=DEFAULT_POLICY):
    """Both sides of ``(1/n) J[M_n] = J[M^n_theta]`` by brute force over histories.

    ``strategy`` is anything with ``povm_for(history)``.  The left side is the
    Fisher matrix of the joint distribution of outcome histories divided by n.
    The right side is the Fisher matrix of the single-copy POVM whose elements
    are ``P_theta(h) M_k[h](w) / n`` for every step k, history h of length k-1
    and outcome w, with the history weights frozen at ``theta``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    m = model.m
    rho = model.state(theta)
    drho = model.derivatives(theta)
    # frontier entries: (history, P(h), dP(h))
    frontier = [((), 1.0, np.zeros(m))]
    avg_elements, avg_labels = [], []
    count = 1
    for k in range(n):
        nxt = []
        for hist, P, dP in frontier:
            M = strategy.povm_for(hist)
            q = np.einsum("ij,kji->k", rho, M.elements).real
            dq = np.einsum("aij,kji->ak", drho, M.elements).real
            for idx, label in enumerate(M.labels):
                avg_elements.append(P * M.elements[idx] / n)
                avg_labels.append(f"{k + 1}|{'/'.join(hist)}|{label}")
                nxt.append((hist + (label,), P * q[idx], dP * q[idx] + P * dq[:, idx]))
        count += len(nxt)
        if count > max_histories:
            raise CapacityError(f"more than {max_histories} outcome histories")
        frontier = nxt

    P = np.array([f[1] for f in frontier])
    dP = np.array([f[2] for f in frontier]).T
    low = P <= policy.q_floor
    if np.any(low & np.any(np.abs(dP) > policy.deriv_floor, axis=0)):
        raise SupportBoundary("joint history distribution hits the support boundary")
    joint = (dP[:, ~low] / P[~low]) @ dP[:, ~low].T
    lhs = FisherMatrix(_symmetrize(joint) / n, theta, "povm")

    averaged = Povm(avg_elements, avg_labels)
    rhs = classical_fisher(model, averaged, theta, policy)
    return lhs, rhs


def joint_history_distribution(strategy, model: StateModel, theta, n: int):
    """Probabilities of every length-n outcome history (for testing and diagnostics)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    rho = model.state(theta)
    out = {(): 1.0}
    for _ in range(n):
        nxt = {}
        for hist, P in out.items():
            M = strategy.povm_for(hist)
            q = outcome_distribution(rho, M)
            for label, qk in zip(M.labels, q):
                nxt[hist + (label,)] = P * qk
        out = nxt
    return out
