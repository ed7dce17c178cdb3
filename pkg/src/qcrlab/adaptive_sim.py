"""Monte Carlo engine for the two-stage adaptive estimator.

Stage one measures ``floor(sqrt(n))`` copies with a fixed informationally
complete POVM ``m0`` and forms a preliminary MLE.  Stage two measures the
remaining copies with a near-optimal POVM chosen at that estimate and
returns the MLE of the second-stage data alone.

Studies are reproducible: trial ``t`` always uses random stream ``t`` of the
master seed, and reductions run in trial order, so the worker count never
changes a result.
"""

import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .bound_solver import SolverOptions, cr_bound, cr_bound_n, polish_bound
from .errors import QcrError, StudyAborted, TooFewSamples
from .fisher_info import HistoryRule, classical_fisher
from .estimation import MleOptions, RngStream, mle_counts, sample_counts
from .quantum_model import Povm, StateModel, default_m0, tensor_povm, tensor_power_model

WORKERS_ENV = "QCRLAB_WORKERS"


def default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class WarmStart:
    """Solve hierarchy for the selector.

    A full multi-restart solve at the domain center (the root), coarse
    anchors polished from the root, and fine cells polished from their
    anchor.  Each level depends only on its own grid point.
    """

    anchor_pitch: float = 0.25
    anchor_evals: int = 20_000
    fine_evals: int = 5_000


class MeasurementSelector:
    """``theta' -> M_theta'``: a near-optimal POVM at the quantized ``theta'``.

    With ``copies > 1`` the POVM acts on ``copies`` tensor copies.  Results are
    cached per grid cell; duplicate solves in different workers agree
    because every solve is deterministic.
    """

    def __init__(self, model: StateModel, G, opts: Optional[SolverOptions] = None, pitch=1e-3,
                 copies=1, warm: Optional[WarmStart] = WarmStart()):
        self.base = model
        self.copies = copies
        self.model = tensor_power_model(model, copies)
        self.G = np.atleast_2d(np.asarray(G, dtype=float))
        self.opts = opts or SolverOptions()
        self.pitch = float(pitch)
        self.warm = warm
        self._root = None
        self._anchors = {}
        self._cells = {}
        self.solves = 0

    def _full(self, theta):
        self.solves += 1
        if self.copies == 1:
            return cr_bound(self.base, theta, self.G, self.opts)
        return cr_bound_n(self.base, theta, self.G, self.copies, self.opts)

    def _point(self, theta, pitch):
        key = tuple(int(v) for v in np.round(np.asarray(theta, dtype=float) / pitch))
        return key, self.base.domain.clip(np.array(key, dtype=float) * pitch)

    def root(self):
        if self._root is None:
            self._root = self._full(self.base.domain.center)
        return self._root

    def _anchor(self, point):
        key, apoint = self._point(point, self.warm.anchor_pitch)
        if key not in self._anchors:
            self.solves += 1
            self._anchors[key] = polish_bound(self.model, apoint, self.G, self.root(), self.opts,
                                              self.warm.anchor_evals)
        return self._anchors[key]

    def result(self, theta):
        key, point = self._point(theta, self.pitch)
        res = self._cells.get(key)
        if res is None:
            if self.warm is None:
                res = self._full(point)
            else:
                self.solves += 1
                res = polish_bound(self.model, point, self.G, self._anchor(point), self.opts,
                                   self.warm.fine_evals)
            self._cells[key] = res
        return res

    def __call__(self, theta) -> Povm:
        return self.result(theta).argmin_povm


class ConstantSelector:
    """Selector that ignores the preliminary estimate."""

    def __init__(self, povm: Povm):
        self.povm = povm

    def __call__(self, theta):
        return self.povm


@dataclass
class AdaptiveStrategy:
    m0: Povm
    selector: Callable
    epsilon: Optional[float] = None

    def sequential(self, model: StateModel, first_steps=1, mle_opts=None):
        """History rule: ``m0`` for the first steps, then the selector at the MLE of those outcomes."""
        m0, selector = self.m0, self.selector

        def rule(history):
            if len(history) < first_steps:
                return m0
            counts = np.zeros(len(m0))
            for label in history[:first_steps]:
                counts[m0.index(label)] += 1
            est = mle_counts(model, m0, counts, model.domain, mle_opts)
            return selector(est)

        return HistoryRule(rule)


@dataclass(frozen=True, eq=False)
class TrialResult:
    theta_hat: np.ndarray
    theta_check: np.ndarray
    n: int
    n1: int
    seed: int
    stream: int


@dataclass(frozen=True, eq=False)
class MseReport:
    n: int
    trials: int
    V: np.ndarray
    trace_mse: float
    mc_stderr: float  # standard error of trace_mse
    c_bound: float
    sld_bound: float
    n_cn_bound: Optional[float] = None
    failures: int = 0
    epsilon: float = 0.0
    block_size: int = 1

    @property
    def n_trace_mse(self):
        return self.n * self.trace_mse

    @property
    def n_stderr(self):
        return self.n * self.mc_stderr


def first_stage_size(n):
    return math.isqrt(n)


def two_stage_trial(model: StateModel, theta, strategy: AdaptiveStrategy, n: int, rng: RngStream,
                    mle_opts: Optional[MleOptions] = None) -> TrialResult:
    """One run of the two-stage estimator on ``n`` copies of ``rho_theta``."""
    if n < 4:
        raise TooFewSamples("two-stage estimation needs n >= 4")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    n1 = first_stage_size(n)
    dom = model.domain
    c1 = sample_counts(model, theta, strategy.m0, n1, rng)
    check = mle_counts(model, strategy.m0, c1, dom, mle_opts, rng=rng)
    M = strategy.selector(check)
    c2 = sample_counts(model, theta, M, n - n1, rng)
    hat = mle_counts(model, M, c2, dom, mle_opts, start=check, rng=rng)
    return TrialResult(hat, check, n, n1, rng.seed, rng.stream)


@dataclass
class _Job:
    model: StateModel
    theta: np.ndarray
    strategy: AdaptiveStrategy
    mle_opts: Optional[MleOptions]


_ACTIVE_JOB: Optional[_Job] = None


def _run_chunk(n, start, stop, seed):
    job = _ACTIVE_JOB
    out = []
    for t in range(start, stop):
        try:
            res = two_stage_trial(job.model, job.theta, job.strategy, n, RngStream(seed, t), job.mle_opts)
            out.append((res.theta_hat, res.theta_check))
        except QcrError as exc:
            out.append(type(exc).__name__)
    return out


def run_trials(job: _Job, n, trials, seed, workers=None):
    """Trial results in stream order; failed trials appear as their error name."""
    global _ACTIVE_JOB
    workers = workers or default_workers()
    _ACTIVE_JOB = job
    try:
        if workers == 1:
            return _run_chunk(n, 0, trials, seed)
        bounds = np.linspace(0, trials, workers + 1).astype(int)
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            futures = [pool.submit(_run_chunk, n, int(a), int(b), seed) for a, b in zip(bounds[:-1], bounds[1:])]
            out = []
            for f in futures:
                out.extend(f.result())
        return out
    finally:
        _ACTIVE_JOB = None


def aggregate(results, theta, G, n, c_bound, sld_bound, n_cn_bound=None, epsilon=0.0, block_size=1,
              max_failure_rate=0.01):
    """Empirical MSE matrix with compensated, fixed-order summation."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    ok = [r for r in results if not isinstance(r, str)]
    failures = len(results) - len(ok)
    if failures > max_failure_rate * len(results):
        raise StudyAborted(f"{failures} of {len(results)} trials failed")
    T = len(ok)
    E = np.array([r[0] - theta for r in ok])
    m = len(theta)
    V = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            V[i, j] = V[j, i] = math.fsum(E[:, i] * E[:, j]) / T
    s = np.einsum("ti,ij,tj->t", E, G, E)
    trace_mse = math.fsum(s) / T
    stderr = float(np.std(s, ddof=1) / math.sqrt(T)) if T > 1 else 0.0
    return MseReport(n, len(results), V, trace_mse, stderr, c_bound, sld_bound, n_cn_bound, failures,
                     epsilon, block_size)


def _references(model, theta, G, opts):
    ref = cr_bound(model, theta, G, opts)
    return ref.value, ref.sld_floor, ref.gap_estimate


def mse_study(model: StateModel, theta, strategy: AdaptiveStrategy, n_grid, trials: int, seed: int, G=None,
              opts: Optional[SolverOptions] = None, references=None, workers=None,
              mle_opts: Optional[MleOptions] = None) -> List[MseReport]:
    """Scaled MSE ``n Tr G V`` of the two-stage estimator for each ``n``.

    ``references`` may supply ``(C, sld_bound, epsilon)``; otherwise they are
    computed at ``theta``.
    """
    if trials < 100:
        raise TooFewSamples("mse_study needs at least 100 trials")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    G = np.eye(model.m) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
    c, sld, gap = references or _references(model, theta, G, opts)
    eps = strategy.epsilon if strategy.epsilon is not None else gap
    job = _Job(model, theta, strategy, mle_opts)
    reports = []
    for n in n_grid:
        res = run_trials(job, int(n), trials, seed, workers)
        reports.append(aggregate(res, theta, G, int(n), c, sld, epsilon=eps))
    return reports


def make_strategy(model: StateModel, G, opts=None, pitch=1e-3, copies=1, warm: Optional[WarmStart] = WarmStart(),
                  m0: Optional[Povm] = None, epsilon=None) -> AdaptiveStrategy:
    m0 = m0 or default_m0(model)
    if copies > 1:
        m0 = tensor_povm([m0] * copies)
    selector = MeasurementSelector(model, G, opts, pitch, copies, warm)
    return AdaptiveStrategy(m0, selector, epsilon)


def block_collective_study(model: StateModel, theta, G, n1: int, n2_grid, trials: int, seed: int,
                           opts: Optional[SolverOptions] = None, pitch=1e-3,
                           warm: Optional[WarmStart] = WarmStart(), references=None, workers=None,
                           mle_opts: Optional[MleOptions] = None, strategy=None) -> List[MseReport]:
    """Two-stage scheme over ``n2`` blocks of ``n1`` copies, each block measured collectively.

    Reports use ``n = n1 * n2`` so that ``n_trace_mse`` compares directly
    with ``n1 * C^{n1}`` (stored as ``n_cn_bound``).  ``references`` may
    supply ``(C, sld_bound, n1*C^{n1}, epsilon)``.
    """
    if trials < 100:
        raise TooFewSamples("block_collective_study needs at least 100 trials")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    opts = opts or SolverOptions()
    if references is None:
        single = cr_bound(model, theta, G, opts)
        block = cr_bound_n(model, theta, G, n1, opts) if n1 > 1 else single
        references = (single.value, single.sld_floor, n1 * block.value, block.gap_estimate)
    c, sld, ncn, gap = references
    strategy = strategy or make_strategy(model, G, opts, pitch, n1, warm)
    eps = strategy.epsilon if strategy.epsilon is not None else gap
    model_n = tensor_power_model(model, n1)
    job = _Job(model_n, theta, strategy, mle_opts)
    reports = []
    for n2 in n2_grid:
        res = run_trials(job, int(n2), trials, seed, workers)
        rep = aggregate(res, theta, G, n1 * int(n2), c, sld, ncn, eps, n1)
        reports.append(rep)
    return reports


@dataclass(frozen=True, eq=False)
class RegularityReport:
    n: int
    trials: int
    exceed_probability: List[tuple]  # (delta, P(|check - theta| > delta))
    conditional_mse: List[dict]  # per distance bin
    continuity_probe: List[dict]  # per probe point
    failures: int = 0


def regularity_diagnostics(model: StateModel, theta, strategy: AdaptiveStrategy, n: int, trials: int, seed: int,
                           G=None, deltas=(0.05, 0.1, 0.2, 0.4), bins=4, probe_offsets=(-0.1, -0.05, 0.0, 0.05, 0.1),
                           mle_opts=None, workers=None) -> RegularityReport:
    """Empirical surrogates for the regularity conditions of the two-stage scheme.

    * consistency of the preliminary estimate: ``P(|check - theta| > delta)``;
    * scaled second-stage MSE conditioned on ``|check - theta|`` (in quantile
      bins), next to the mean of ``Tr G J^{-1}`` for the measurement chosen;
    * continuity of ``theta' -> Tr G (J_theta[M_theta'])^{-1}`` along each
      coordinate, with the selector's bound value at ``theta'``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    G = np.eye(model.m) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
    results = run_trials(_Job(model, theta, strategy, mle_opts), n, trials, seed, workers)
    ok = [r for r in results if not isinstance(r, str)]
    if not ok:
        raise StudyAborted(f"all {len(results)} trials failed")
    hats = np.array([r[0] for r in ok])
    checks = np.array([r[1] for r in ok])
    dist = np.linalg.norm(checks - theta, axis=1)
    exceed = [(float(d), float(np.mean(dist > d))) for d in deltas]

    n2 = n - first_stage_size(n)
    err = hats - theta
    loss = n2 * np.einsum("ti,ij,tj->t", err, G, err)
    inv_tr = []
    for c in checks:
        J = classical_fisher(model, strategy.selector(c), theta)
        try:
            inv_tr.append(float(np.trace(G @ np.linalg.inv(J.matrix))))
        except np.linalg.LinAlgError:
            inv_tr.append(float("inf"))
    inv_tr = np.array(inv_tr)
    edges = np.quantile(dist, np.linspace(0, 1, bins + 1))
    conditional = []
    for b in range(bins):
        lo, hi = edges[b], edges[b + 1]
        sel = (dist >= lo) & ((dist <= hi) if b == bins - 1 else (dist < hi))
        if not np.any(sel):
            continue
        conditional.append({
            "dist_lo": float(lo), "dist_hi": float(hi), "count": int(sel.sum()),
            "scaled_mse": float(loss[sel].mean()),
            "scaled_mse_stderr": float(loss[sel].std(ddof=1) / np.sqrt(sel.sum())) if sel.sum() > 1 else 0.0,
            "mean_inverse_fisher": float(inv_tr[sel].mean()),
        })

    probe = []
    for j in range(model.m):
        for t in probe_offsets:
            tp = theta.copy()
            tp[j] += t
            tp = model.domain.clip(tp)
            J = classical_fisher(model, strategy.selector(tp), theta)
            val = float(np.trace(G @ np.linalg.inv(J.matrix)))
            entry = {"coord": j, "offset": float(t), "theta_prime": tp.tolist(), "objective_at_true": val}
            if hasattr(strategy.selector, "result"):
                entry["bound_at_theta_prime"] = float(strategy.selector.result(tp).value)
            probe.append(entry)
    return RegularityReport(n, len(results), exceed, conditional, probe, len(results) - len(ok))
