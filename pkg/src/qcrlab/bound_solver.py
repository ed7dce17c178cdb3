"""Numerical quasi-quantum Cramér-Rao type bounds.

``C(G) = inf_M Tr G J_M^{-1}`` is approximated by multi-restart Nelder-Mead
over rank-one POVMs ``E_k = S^{-1/2} w_k w_k^+ S^{-1/2}`` with
``S = sum_k w_k w_k^+``.  Every parameter vector is a valid POVM, so the
search is unconstrained.  The infimum over outcome counts is approximated
by the lower envelope over ``L in {m+1, 2d, d^2}``.
"""

import itertools
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from . import kernels
from .errors import DegenerateModel, InvalidOperator
from .fisher_info import FisherMatrix, classical_fisher, sld_fisher
from .policy import DEFAULT_POLICY
from .quantum_model import Povm, StateModel, tensor_power_model


@dataclass(frozen=True)
class SolverOptions:
    outcomes: Optional[int] = None  # None: envelope over the default outcome counts
    restarts: int = 4
    max_evals: int = 400_000  # per restart
    seed: int = 0
    penalty: float = DEFAULT_POLICY.penalty
    epsilon: float = 1e-3  # target slack for near-optimal measurements
    step: float = 0.5
    polish_step: float = 0.05
    xatol: float = 1e-8
    frtol: float = 1e-12

    def __post_init__(self):
        if self.restarts < 1:
            raise InvalidOperator("restarts must be >= 1")
        if self.max_evals < 1:
            raise InvalidOperator("max_evals must be >= 1")
        if self.outcomes is not None and self.outcomes < 1:
            raise InvalidOperator("outcomes must be positive")


@dataclass(frozen=True, eq=False)
class BoundResult:
    value: float
    argmin_povm: Povm
    restarts_used: int
    evaluations: int
    converged: bool
    gap_estimate: float
    outcomes: int
    params: np.ndarray = field(repr=False)
    sld_floor: float = float("nan")
    theta: Optional[np.ndarray] = None


def weighted_inverse_objective(J, G, penalty=DEFAULT_POLICY.penalty, cond_max=DEFAULT_POLICY.cond_max):
    """``Tr(G J^-1)``, or ``penalty`` when ``G`` sees a numerically singular direction of ``J``."""
    if isinstance(J, FisherMatrix):
        J = J.matrix
    J = np.atleast_2d(np.asarray(J, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    return float(kernels.weighted_inverse(np.ascontiguousarray(J), np.ascontiguousarray(G), float(penalty), float(cond_max)))


def povm_objective_value(model: StateModel, p: Povm, theta, G, penalty=DEFAULT_POLICY.penalty):
    """``Tr G J^{-1}`` for an arbitrary POVM ``p`` at ``theta``."""
    return weighted_inverse_objective(classical_fisher(model, p, theta), G, penalty)


def povm_from_params(x, d, L) -> Povm:
    V, ok = kernels.povm_vectors(np.asarray(x, dtype=float), d, L)
    if not ok:
        raise DegenerateModel("parameter vector gives a rank-deficient frame")
    return Povm([np.outer(v, v.conj()) for v in V], [str(k) for k in range(L)])


def params_from_vectors(V):
    """Inverse of the parameterization for an already normalized frame."""
    V = np.asarray(V, dtype=complex)
    return np.concatenate([V.real.ravel(), V.imag.ravel()])


def default_outcome_counts(m, d):
    return sorted({max(m + 1, d), 2 * d, d * d})


def _as_weight(G, m):
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if G.shape != (m, m):
        raise InvalidOperator(f"G must be {m}x{m}")
    if np.max(np.abs(G - G.T)) > 1e-12:
        raise InvalidOperator("G must be symmetric")
    if np.linalg.eigvalsh(G)[0] < -1e-10:
        raise InvalidOperator("G must be positive semidefinite")
    return G


class _Problem:
    def __init__(self, model, theta, G, opts):
        self.theta = np.atleast_1d(np.asarray(theta, dtype=float))
        self.model = model
        self.d = model.dim
        self.m = model.m
        self.G = _as_weight(G, self.m)
        scale = float(np.max(np.abs(self.G)))
        # optimize with G/scale so that c*G follows exactly the same search path
        self.gscale = scale if scale > 0 else 1.0
        self.Gn = np.ascontiguousarray(self.G / self.gscale)
        self.rho = np.ascontiguousarray(model.state(self.theta))
        self.drho = np.ascontiguousarray(model.derivatives(self.theta))
        self.opts = opts

    def run(self, L, x0, step, max_evals):
        n = 2 * self.d * L
        data = (self.rho, self.drho, self.Gn, float(self.opts.penalty), self.d, L)
        inf = np.full(n, np.inf)
        x, f, evals, conv = kernels.nelder_mead(
            kernels.povm_objective, data, np.asarray(x0, dtype=float), np.full(n, step),
            -inf, inf, int(max_evals), self.opts.xatol, 0.0, self.opts.frtol,
        )
        return float(f), x, int(evals), bool(conv)


def _sld_floor(model, theta, G):
    J = sld_fisher(model, theta)
    w = np.linalg.eigvalsh(J.matrix)
    if w[0] <= 0 or w[-1] / w[0] > DEFAULT_POLICY.sld_cond_max:
        raise DegenerateModel(f"SLD Fisher matrix is (nearly) singular at theta={theta}")
    return float(np.trace(G @ np.linalg.inv(J.matrix)))


def cr_bound(model: StateModel, theta, G, opts: Optional[SolverOptions] = None,
             seeds: Optional[List[Tuple[int, np.ndarray]]] = None,
             outcome_counts: Optional[List[int]] = None) -> BoundResult:
    """Minimize ``Tr G J_M^{-1}`` over POVMs at ``theta``.

    ``seeds`` holds extra ``(L, x0)`` warm starts, searched with the polish
    step before the random restarts.  Deterministic in ``opts``.
    """
    opts = opts or SolverOptions()
    prob = _Problem(model, theta, G, opts)
    floor = _sld_floor(model, prob.theta, prob.G)
    if outcome_counts is None:
        if opts.outcomes is not None:
            if opts.outcomes < prob.m + 1:
                raise InvalidOperator(f"need at least m+1={prob.m + 1} outcomes")
            outcome_counts = [max(opts.outcomes, prob.d)]
        else:
            outcome_counts = default_outcome_counts(prob.m, prob.d)

    runs = []
    for L, x0 in seeds or ():
        runs.append((L,) + prob.run(L, x0, opts.polish_step, opts.max_evals))
    for L in outcome_counts:
        for r in range(opts.restarts):
            x0 = np.random.default_rng([opts.seed, L, r]).standard_normal(2 * prob.d * L)
            runs.append((L,) + prob.run(L, x0, opts.step, opts.max_evals))
    return _collect(prob, runs, floor)


def _collect(prob, runs, floor):
    values = [r[1] for r in runs]
    best = int(np.argmin(values))
    L, f, x, _, conv = runs[best]
    if f >= prob.opts.penalty:
        raise DegenerateModel("every restart ended on a singular Fisher matrix")
    rest = sorted(values[:best] + values[best + 1:])
    gap = (rest[0] - f) if rest else 0.0
    return BoundResult(
        value=f * prob.gscale,
        argmin_povm=povm_from_params(x, prob.d, L),
        restarts_used=len(runs),
        evaluations=sum(r[3] for r in runs),
        converged=conv,
        gap_estimate=gap * prob.gscale,
        outcomes=L,
        params=x,
        sld_floor=floor,
        theta=prob.theta,
    )


def polish_bound(model: StateModel, theta, G, start: BoundResult, opts: Optional[SolverOptions] = None,
                 max_evals: Optional[int] = None) -> BoundResult:
    """One simplex run at ``theta`` warm-started from another solution."""
    opts = opts or SolverOptions()
    prob = _Problem(model, theta, G, opts)
    floor = _sld_floor(model, prob.theta, prob.G)
    run = (start.outcomes,) + prob.run(start.outcomes, start.params, opts.polish_step,
                                       max_evals or opts.max_evals)
    res = _collect(prob, [run], floor)
    return replace(res, gap_estimate=start.gap_estimate)


def product_seed(single: BoundResult, d: int, n: int):
    """Parameters of the n-fold product of a single-copy rank-one solution."""
    V1, _ = kernels.povm_vectors(single.params, d, single.outcomes)
    Vn = [np.asarray(v) for v in V1]
    prods = [v for v in Vn]
    for _ in range(n - 1):
        prods = [np.kron(a, b) for a, b in itertools.product(prods, Vn)]
    return len(prods), params_from_vectors(np.array(prods))


def cr_bound_n(model: StateModel, theta, G, n: int, opts: Optional[SolverOptions] = None) -> BoundResult:
    """Bound for the n-copy family ``rho^{⊗n}`` (not multiplied by n).

    One search is seeded with the n-fold product of the single-copy optimum,
    so the result never exceeds ``cr_bound / n`` by more than rounding.
    """
    opts = opts or SolverOptions()
    single = cr_bound(model, theta, G, opts)
    if n == 1:
        return single
    model_n = tensor_power_model(model, n)
    Lp, xp = product_seed(single, model.dim, n)
    dn = model_n.dim
    if opts.outcomes is not None:
        counts = [min(max(opts.outcomes ** n, dn), dn * dn)]
    else:
        counts = default_outcome_counts(model.m, dn)
    seeds = [(Lp, xp)] if Lp <= dn * dn else []
    return cr_bound(model_n, theta, G, opts, seeds=seeds, outcome_counts=counts)


@dataclass(frozen=True, eq=False)
class QuantumBoundEstimate:
    """Finite-n surrogate for ``C^Q = liminf n C^n``; ``upper_bound`` is an upper bound, not the limit."""

    scaled: List[Tuple[int, float]]
    running_min: List[float]
    results: List[BoundResult]

    @property
    def upper_bound(self):
        return self.running_min[-1]


def quantum_cr_bound(model: StateModel, theta, G, n_max: int, opts: Optional[SolverOptions] = None):
    """The sequence ``n C^n(G)`` for ``n = 1..n_max`` and its running minimum."""
    opts = opts or SolverOptions()
    scaled, mins, results = [], [], []
    for n in range(1, n_max + 1):
        res = cr_bound_n(model, theta, G, n, opts)
        results.append(res)
        scaled.append((n, n * res.value))
        mins.append(min(mins[-1], n * res.value) if mins else n * res.value)
    return QuantumBoundEstimate(scaled, mins, results)
