"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the lines are
also collected in the "acceptance criteria" section of the terminal summary.
"""

import time

import numpy as np
import pytest

from qcrlab.adaptive_sim import block_collective_study, make_strategy, mse_study
from qcrlab.bound_solver import SolverOptions, cr_bound, cr_bound_n
from qcrlab.cli import emit_study_table
from qcrlab.fisher_info import HistoryRule, adaptive_chain_fisher, classical_fisher, sld_fisher
from qcrlab.quantum_model import (
    DensityOperator,
    Povm,
    coarse_grain,
    make_model,
    validate_povm,
)
from qcrlab.errors import InvalidOperator

from _oracles import (
    fd_loglik_fisher,
    interior_point,
    multinomial_fisher,
    projective_grid_bound,
    random_density,
    random_hermitian,
    random_povm,
)

SEED = 20261016
OPTS = SolverOptions()

ROT = make_model("qubit-rotation1", r=0.9)
BLOCH = make_model("qubit-bloch3")
REGISTRY = [BLOCH, ROT, make_model("classical-diag", d=2), make_model("classical-diag", d=3)]
QUBITS = [BLOCH, ROT]

ROT_THETA = np.array([0.3])
ROT_GRID = [256, 1024, 4096]
BLOCH_THETA = np.array([0.2, -0.1, 0.15])


def _timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - start


# --- criterion 1 -----------------------------------------------------------

def _perturbed_povm(rng, delta, kind):
    d = int(rng.integers(2, 5))
    p = random_povm(d, d + int(rng.integers(0, 3)), rng, rank_one=True)
    E = [e.copy() for e in p.elements]
    if kind == "completeness":
        E[0] = E[0] + delta * np.eye(d)
    elif kind == "positive":
        # push E_0 negative along a direction orthogonal to its range, keep the sum
        w, U = np.linalg.eigh(E[0])
        u = U[:, 0]
        E[0] = E[0] - delta * np.outer(u, u.conj())
        E[1] = E[1] + delta * np.outer(u, u.conj())
    elif kind == "hermitian":
        X = np.zeros((d, d), dtype=complex)
        X[0, 1] = delta
        E[0] = E[0] + X
        E[1] = E[1] - X
    else:  # tiny Hermitian noise on a valid POVM
        E = [e + delta * random_hermitian(d, rng) / (len(E) * d) for e in E]
    return Povm(E, p.labels)


def _perturbed_state(rng, delta, kind):
    d = int(rng.integers(2, 5))
    rank = int(rng.integers(1, d)) if kind == "positive" else int(rng.integers(1, d + 1))
    rho = random_density(d, rng, rank)
    if kind == "trace":
        return rho * (1 + delta)
    if kind == "positive":
        w, U = np.linalg.eigh(rho)
        u, v = U[:, 0], U[:, -1]  # kernel direction and top eigenvector
        return rho - delta * np.outer(u, u.conj()) + delta * np.outer(v, v.conj())
    if kind == "hermitian":
        X = np.zeros((d, d), dtype=complex)
        X[0, 1] = delta
        return rho + X
    return rho + delta * random_hermitian(d, rng) / (2 * d)


def _state_accepted(A):
    try:
        DensityOperator(A)
        return True
    except InvalidOperator:
        return False


def test_criterion_01_validation(criterion):
    with criterion(1, "POVM/state validation", budget_s=10) as info:
        rng = np.random.default_rng(SEED)
        false_accept = false_reject = 0
        for i in range(100):
            invalid = i % 2 == 1
            if invalid:
                delta = 10 ** rng.uniform(-6, -1)
                pk = ("completeness", "positive", "hermitian")[i // 2 % 3]
                sk = ("trace", "positive", "hermitian")[i // 2 % 3]
            else:
                delta = 10 ** rng.uniform(-15, -12)
                pk = sk = "noise"
            povm_ok = validate_povm(_perturbed_povm(rng, delta, pk)) == []
            state_ok = _state_accepted(_perturbed_state(rng, delta, sk))
            for ok in (povm_ok, state_ok):
                false_accept += invalid and ok
                false_reject += (not invalid) and not ok
        info.update(cases=200, false_accepts=false_accept, false_rejects=false_reject)
        assert false_accept == 0 and false_reject == 0


# --- criterion 2 -----------------------------------------------------------

def test_criterion_02_fisher_oracle(criterion):
    with criterion(2, "classical Fisher vs finite-difference log-likelihood", budget_s=30) as info:
        rng = np.random.default_rng(SEED + 2)
        worst = 0.0
        for model in REGISTRY:
            for _ in range(20):
                theta = interior_point(model, rng)
                p = random_povm(model.dim, int(rng.integers(2, 7)), rng, rank_one=bool(rng.integers(2)))
                J = classical_fisher(model, p, theta).matrix
                worst = max(worst, float(np.max(np.abs(J - fd_loglik_fisher(model, p, theta)))))
        info.update(cases=20 * len(REGISTRY), max_abs_err=f"{worst:.2e}")
        assert worst <= 1e-6


# --- criterion 3 -----------------------------------------------------------

def test_criterion_03_information_inequalities(criterion):
    with criterion(3, "J^M below J^SLD and coarse-graining monotone", budget_s=60) as info:
        rng = np.random.default_rng(SEED + 3)
        worst_sld = worst_cg = np.inf
        for i in range(150):
            model = REGISTRY[i % len(REGISTRY)]
            theta = interior_point(model, rng)
            p = random_povm(model.dim, int(rng.integers(1, 8)), rng, rank_one=bool(rng.integers(2)))
            gap = sld_fisher(model, theta).matrix - classical_fisher(model, p, theta).matrix
            worst_sld = min(worst_sld, float(np.linalg.eigvalsh(gap)[0]))
        for i in range(100):
            model = REGISTRY[i % len(REGISTRY)]
            theta = interior_point(model, rng)
            L = int(rng.integers(2, 8))
            p = random_povm(model.dim, L, rng, rank_one=bool(rng.integers(2)))
            groups = rng.integers(0, max(1, L - 1), size=len(p))
            cg = coarse_grain(p, {s: f"g{g}" for s, g in zip(p.labels, groups)})
            gap = classical_fisher(model, p, theta).matrix - classical_fisher(model, cg, theta).matrix
            worst_cg = min(worst_cg, float(np.linalg.eigvalsh(gap)[0]))
        info.update(min_eig_sld_gap=f"{worst_sld:.2e}", min_eig_cg_gap=f"{worst_cg:.2e}")
        assert worst_sld >= -1e-9 and worst_cg >= -1e-9


# --- criterion 4 -----------------------------------------------------------

def test_criterion_04_chain_identity(criterion):
    with criterion(4, "adaptive chain Fisher identity", budget_s=30) as info:
        rng = np.random.default_rng(SEED + 4)
        worst = 0.0
        for i in range(50):
            model = QUBITS[i % 2]
            theta = interior_point(model, rng)
            first = random_povm(2, int(rng.integers(2, 5)), rng, rank_one=bool(rng.integers(2)))
            second = {s: random_povm(2, int(rng.integers(2, 5)), rng) for s in first.labels}
            rule = HistoryRule(lambda h, first=first, second=second: first if not h else second[h[0]])
            lhs, rhs = adaptive_chain_fisher(rule, model, theta, 2)
            worst = max(worst, float(np.max(np.abs(lhs.matrix - rhs.matrix))))
        info.update(strategies=50, max_abs_err=f"{worst:.2e}")
        assert worst <= 1e-9


# --- criterion 5 -----------------------------------------------------------

def test_criterion_05_one_parameter_bound(criterion):
    with criterion(5, "qubit-rotation1 bound", budget_s=120) as info:
        res = cr_bound(ROT, ROT_THETA, [[1.0]], OPTS)
        grid = projective_grid_bound(ROT, ROT_THETA)
        info.update(value=f"{res.value:.6f}", sld=f"{1 / 0.81:.6f}", grid_3600=f"{grid:.6f}")
        assert abs(res.value - 1 / 0.81) <= 1e-3
        assert abs(res.value - grid) <= 1e-3


# --- criterion 6 -----------------------------------------------------------

def test_criterion_06_classical_reduction(criterion):
    with criterion(6, "classical-diag reduction", budget_s=180) as info:
        diag2, diag3 = REGISTRY[2], REGISTRY[3]
        worst = 0.0
        for theta, G in [([0.3], [[1.0]]), ([0.72], [[2.5]])]:
            val = cr_bound(diag2, theta, G, OPTS).value
            worst = max(worst, abs(val - np.trace(np.array(G) @ np.linalg.inv(multinomial_fisher(theta)))))
        for theta, G in [([0.3, 0.2], [[1.0, 0.3], [0.3, 2.0]]), ([0.1, 0.4], np.eye(2))]:
            val = cr_bound(diag3, theta, G, OPTS).value
            worst = max(worst, abs(val - np.trace(np.array(G) @ np.linalg.inv(multinomial_fisher(theta)))))
        c1 = cr_bound_n(diag2, [0.3], [[1.0]], 1, OPTS).value
        c2 = 2 * cr_bound_n(diag2, [0.3], [[1.0]], 2, OPTS).value
        info.update(max_err=f"{worst:.2e}", nCn=f"{c1:.6f},{c2:.6f}")
        assert worst <= 1e-4
        assert abs(c2 - c1) <= 2e-3


# --- criterion 7 -----------------------------------------------------------

@pytest.fixture(scope="module")
def bloch_bounds():
    def solve():
        single = cr_bound(BLOCH, BLOCH_THETA, np.eye(3), OPTS)
        two = cr_bound_n(BLOCH, BLOCH_THETA, np.eye(3), 2, OPTS)
        return single, two

    return _timed(solve)


def test_criterion_07_collective_inequality(criterion, bloch_bounds):
    (single, two), elapsed = bloch_bounds
    with criterion(7, "2 C^2 <= C on qubit-bloch3", budget_s=600) as info:
        info["setup_s"] = elapsed
        info.update(C=f"{single.value:.6f}", two_C2=f"{2 * two.value:.6f}")
        assert 2 * two.value <= single.value + 2e-3


# --- criteria 8, 9, 11 -----------------------------------------------------

def _rotation_study(workers):
    strategy = make_strategy(ROT, [[1.0]], OPTS)
    return mse_study(ROT, ROT_THETA, strategy, ROT_GRID, 2000, SEED, [[1.0]], OPTS, workers=workers)


@pytest.fixture(scope="module")
def rotation_study():
    return _timed(lambda: _rotation_study(1))


def test_criterion_08_achievability(criterion, rotation_study):
    reports, elapsed = rotation_study
    with criterion(8, "two-stage achievability on qubit-rotation1", budget_s=600) as info:
        info["setup_s"] = elapsed
        vals = [r.n_trace_mse for r in reports]
        target = reports[-1].c_bound + reports[-1].epsilon
        info.update(nTrGV=",".join(f"{v:.4f}" for v in vals), target=f"{target:.4f}",
                    rel_dev=f"{abs(vals[-1] - target) / target:.3f}")
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert abs(vals[-1] - target) <= 0.15 * target


# --- criterion 10 ----------------------------------------------------------

@pytest.fixture(scope="module")
def collective_studies(bloch_bounds):
    (single, two), _ = bloch_bounds
    G = np.eye(3)

    def run():
        base = mse_study(BLOCH, BLOCH_THETA, make_strategy(BLOCH, G, OPTS), [256, 1024, 4096], 1000, SEED, G, OPTS,
                         references=(single.value, single.sld_floor, single.gap_estimate))
        block = block_collective_study(BLOCH, BLOCH_THETA, G, 2, [128, 512, 2048], 1000, SEED, OPTS,
                                       references=(single.value, single.sld_floor, 2 * two.value, two.gap_estimate))
        return base, block

    return _timed(run)


def test_criterion_10_block_strategy(criterion, collective_studies, bloch_bounds):
    (base, block), elapsed = collective_studies
    (single, two), _ = bloch_bounds
    with criterion(10, "block-collective strategy on qubit-bloch3", budget_s=1800) as info:
        info["setup_s"] = elapsed
        b, s = block[-1], base[-1]
        margin = 2 * np.hypot(b.n_stderr, s.n_stderr)
        target = 2 * two.value
        info.update(block=f"{b.n_trace_mse:.4f}±{b.n_stderr:.4f}", single=f"{s.n_trace_mse:.4f}±{s.n_stderr:.4f}",
                    two_C2=f"{target:.4f}", rel_dev=f"{abs(b.n_trace_mse - target) / target:.3f}")
        assert b.n == s.n == 4096
        assert b.n_trace_mse <= s.n_trace_mse + margin
        assert abs(b.n_trace_mse - target) <= 0.2 * target


# --- criterion 9 -----------------------------------------------------------

def test_criterion_09_lower_bound(criterion, rotation_study, collective_studies):
    (rot_reports, _), ((base, block), _) = rotation_study, collective_studies
    with criterion(9, "one-sided lower-bound test for n >= 1024") as info:
        checked, worst = 0, np.inf
        for reports in (rot_reports, base, block):
            for r in reports:
                if r.n < 1024:
                    continue
                # a block of n1 copies is one sample of the n1-copy family, whose bound is n1*C^n1
                bound = r.c_bound if r.block_size == 1 else r.n_cn_bound
                z = (r.n_trace_mse - bound) / r.n_stderr
                worst = min(worst, z)
                checked += 1
        info.update(checks=checked, min_z=f"{worst:.2f}")
        assert checked == 6 and worst >= -3


# --- criterion 11 ----------------------------------------------------------

def test_criterion_11_reproducibility(criterion, rotation_study, tmp_path):
    reports, _ = rotation_study
    with criterion(11, "bit-identical study tables across worker counts", budget_s=600) as info:
        again = _rotation_study(2)
        a = emit_study_table(reports, tmp_path / "workers1.csv").read_bytes()
        b = emit_study_table(again, tmp_path / "workers2.csv").read_bytes()
        info.update(bytes=len(a), identical=a == b)
        assert a == b
