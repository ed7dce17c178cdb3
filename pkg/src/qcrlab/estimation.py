"""Outcome sampling and maximum-likelihood estimation for POVM data."""

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import kernels
from .errors import DesignError, FlatLikelihood, InfeasibleLikelihood, NoData
from .quantum_model import ParameterDomain, Povm, StateModel, outcome_distribution


class RngStream:
    """Independent random stream ``(seed, stream)`` built on ``SeedSequence`` spawning."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self.gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(self.stream,))))

    def random(self, size=None):
        return self.gen.random(size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"


class Sample(NamedTuple):
    label: str
    step: int


def draw_indices(probs, count, rng: RngStream):
    """Inverse-CDF draws over the fixed outcome order."""
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    cdf = np.cumsum(probs)
    idx = np.searchsorted(cdf, rng.random(count), side="right")
    return np.minimum(idx, len(probs) - 1)


def sample_counts(model: StateModel, theta, p: Povm, count: int, rng: RngStream):
    q = outcome_distribution(model.state(theta), p)
    return np.bincount(draw_indices(q, count, rng), minlength=len(p)).astype(float)


def sample_outcomes(model: StateModel, theta, p: Povm, count: int, rng: RngStream, first_step=0):
    """``count`` i.i.d. outcomes of measuring ``p`` on ``rho_theta``."""
    q = outcome_distribution(model.state(theta), p)
    idx = draw_indices(q, count, rng)
    return [Sample(p.labels[k], first_step + s) for s, k in enumerate(idx)]


def counts_from_samples(p: Povm, samples: Sequence[Sample]):
    c = np.zeros(len(p))
    for s in samples:
        c[p.index(s.label)] += 1
    return c


@dataclass(frozen=True)
class MleOptions:
    starts: int = 8
    max_evals: int = 4000
    fatol: float = 1e-9
    xatol: float = 1e-7
    step_frac: float = 0.1
    seed: int = 0
    penalty: float = 1e300


class LogLikelihood:
    """Negative log-likelihood of outcome counts under ``model`` measured with ``p``.

    Feature-linear models use the compiled kernel; other models evaluate the
    Born rule directly.
    """

    def __init__(self, model: StateModel, p: Povm, counts, penalty=1e300):
        self.model = model
        self.counts = np.ascontiguousarray(counts, dtype=float)
        self.penalty = float(penalty)
        if model.features is not None:
            P = model.features.probability_matrix(p)
            self.fun = kernels.neg_loglik
            self.data = (P, self.counts, model.features.kind, model.features.power, self.penalty)
            self.minimize = kernels.nelder_mead
        else:
            self.fun = _generic_neg_loglik
            self.data = (model, p.elements, self.counts, self.penalty)
            self.minimize = kernels.nelder_mead.py_func

    def __call__(self, theta):
        return float(self.fun(np.asarray(theta, dtype=float), self.data))


def _generic_neg_loglik(theta, data):
    model, elements, counts, penalty = data
    q = np.einsum("ij,kji->k", model.state(theta), elements).real
    hit = counts > 0
    if np.any(q[hit] <= 0):
        return penalty
    return float(-np.sum(counts[hit] * np.log(q[hit])))


def mle_counts(model: StateModel, p: Povm, counts, domain: ParameterDomain, opts: Optional[MleOptions] = None,
               start=None, rng: Optional[RngStream] = None):
    """Maximum-likelihood estimate from outcome counts, constrained to ``domain``.

    Multi-start bounded simplex: the first start is ``start`` (or the box
    center), the rest are uniform in the box.  Among starts within ``fatol``
    of the best value the lexicographically smallest estimate wins.
    """
    opts = opts or MleOptions()
    counts = np.asarray(counts, dtype=float)
    if counts.sum() <= 0:
        raise NoData("no samples")
    nll = LogLikelihood(model, p, counts, opts.penalty)
    lo, hi = domain.lower, domain.upper
    gen = rng.gen if rng is not None else np.random.default_rng(opts.seed)
    starts = [domain.clip(domain.center if start is None else start)]
    starts += [lo + (hi - lo) * gen.random(domain.m) for _ in range(opts.starts - 1)]
    step = opts.step_frac * (hi - lo)

    found = []
    start_values = []
    for x0 in starts:
        start_values.append(nll(x0))
        x, f, _, _ = nll.minimize(nll.fun, nll.data, x0, step, lo, hi, opts.max_evals, opts.xatol, opts.fatol, 0.0)
        found.append((float(f), domain.clip(x)))
    fbest = min(f for f, _ in found)
    if fbest >= opts.penalty:
        raise InfeasibleLikelihood("an observed outcome has zero probability throughout the domain")
    vals = np.array(start_values + [f for f, _ in found])
    if np.ptp(vals) <= 1e-12 * (1.0 + abs(fbest)):
        raise FlatLikelihood("likelihood is constant on the domain")
    near = [x for f, x in found if f <= fbest + opts.fatol]
    return min(near, key=lambda x: tuple(x))


def mle(model: StateModel, p: Povm, samples: Sequence[Sample], domain: ParameterDomain,
        opts: Optional[MleOptions] = None, start=None, rng: Optional[RngStream] = None):
    if len(samples) == 0:
        raise NoData("no samples")
    return mle_counts(model, p, counts_from_samples(p, samples), domain, opts, start, rng)


def preliminary_estimate(model: StateModel, m0: Povm, samples, domain: ParameterDomain,
                         opts: Optional[MleOptions] = None, rng: Optional[RngStream] = None):
    """First-stage consistent estimate: MLE under ``m0``.  ``samples`` may be Samples or counts."""
    if len(samples) and not isinstance(samples[0], Sample):
        return mle_counts(model, m0, samples, domain, opts, rng=rng)
    return mle(model, m0, samples, domain, opts, rng=rng)


@dataclass(frozen=True, eq=False)
class UnbiasednessReport:
    bias: np.ndarray
    bias_stderr: np.ndarray
    jacobian: np.ndarray
    jacobian_stderr: np.ndarray


def asymptotic_unbiasedness_diag(trials, model: StateModel, h: float) -> UnbiasednessReport:
    """Bias ``B_n`` and Jacobian ``A_n`` of the mean estimate from a finite-difference trial design.

    ``trials`` is a sequence of ``(theta_hat, true_theta)`` pairs run at a
    center point ``theta`` and at every ``theta ± h e_j``.
    """
    m = model.m
    groups = {}
    for est, true in trials:
        key = tuple(np.round(np.atleast_1d(np.asarray(true, dtype=float)), 12))
        groups.setdefault(key, []).append(np.atleast_1d(np.asarray(est, dtype=float)))
    if len(groups) != 2 * m + 1:
        raise DesignError(f"expected {2 * m + 1} design points, got {len(groups)}")
    pts = np.array(list(groups))
    center = pts.mean(axis=0)
    ckey = tuple(np.round(center, 12))
    if ckey not in groups:
        raise DesignError("design has no center point")

    def stats(key):
        a = np.array(groups[key])
        return a.mean(axis=0), a.std(axis=0, ddof=1) / np.sqrt(len(a)) if len(a) > 1 else np.zeros(m)

    mean0, se0 = stats(ckey)
    A = np.empty((m, m))
    Ase = np.empty((m, m))
    for j in range(m):
        e = np.zeros(m)
        e[j] = h
        kp, km = tuple(np.round(center + e, 12)), tuple(np.round(center - e, 12))
        if kp not in groups or km not in groups:
            raise DesignError(f"missing ±h design points along coordinate {j}")
        mp, sp = stats(kp)
        mm, sm = stats(km)
        A[:, j] = (mp - mm) / (2 * h)
        Ase[:, j] = np.sqrt(sp ** 2 + sm ** 2) / (2 * h)
    return UnbiasednessReport(mean0 - center, se0, A, Ase)
