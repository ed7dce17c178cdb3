"""Time the hot kernels with numba and with the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each backend runs in its own interpreter because the choice is made at
import time from QCRLAB_NUMBA.
"""

import argparse
import json
import os
import subprocess
import sys

CASES = r"""
import json, sys, time
import numpy as np
from qcrlab import kernels
from qcrlab.bound_solver import SolverOptions, cr_bound
from qcrlab.estimation import MleOptions, mle_counts
from qcrlab.quantum_model import make_model, pauli6_povm, tensor_power_model

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
bloch = make_model("qubit-bloch3", check=False)
theta = np.array([0.2, -0.1, 0.15])
rho, drho = bloch.state(theta), bloch.derivatives(theta)
two = tensor_power_model(bloch, 2)
rho2, drho2 = two.state(theta), two.derivatives(theta)
P = bloch.features.probability_matrix(pauli6_povm())
counts = np.array([30.0, 20.0, 25.0, 25.0, 40.0, 10.0])
x4 = rng.standard_normal(16)
x16 = rng.standard_normal(2 * 4 * 16)
rot = make_model("qubit-rotation1", check=False)


def objective_1copy():
    for _ in range(2000):
        kernels.povm_objective(x4, (rho, drho, np.eye(3), 1e6, 2, 4))
    return 2000


def objective_2copy():
    for _ in range(200):
        kernels.povm_objective(x16, (rho2, drho2, np.eye(3), 1e6, 4, 16))
    return 200


def loglik():
    t = np.array([0.1, 0.0, -0.1])
    for _ in range(5000):
        kernels.neg_loglik(t, (P, counts, 0, 1, 1e300))
    return 5000


def mle():
    mle_counts(bloch, pauli6_povm(), counts, bloch.domain, MleOptions(starts=4))
    return 1


def bound():
    cr_bound(rot, [0.3], [[1.0]], SolverOptions(restarts=1, max_evals=20_000))
    return 1


out = {}
for name, fn in [("povm_objective d=2 L=4", objective_1copy), ("povm_objective d=4 L=16", objective_2copy),
                 ("neg_loglik pauli6", loglik), ("mle bloch3 4 starts", mle), ("cr_bound rotation1 1 restart", bound)]:
    fn()  # warm-up (includes compilation)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        calls = fn()
        best = min(best, (time.perf_counter() - t0) / calls)
    out[name] = best
json.dump(out, sys.stdout)
"""


def run_backend(flag, repeat):
    env = dict(os.environ, QCRLAB_NUMBA=flag)
    proc = subprocess.run([sys.executable, "-c", CASES, str(repeat)], capture_output=True, text=True, env=env)
    if proc.returncode:
        raise SystemExit(proc.stderr)
    return json.loads(proc.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write the raw timings here")
    args = ap.parse_args(argv)
    fast = run_backend("1", args.repeat)
    slow = run_backend("0", args.repeat)
    print(f"{'case':32s} {'numba':>12s} {'numpy':>12s} {'speedup':>9s}")
    for name in fast:
        print(f"{name:32s} {fast[name] * 1e6:10.1f}us {slow[name] * 1e6:10.1f}us {slow[name] / fast[name]:8.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"numba": fast, "numpy": slow}, fh, indent=2)


if __name__ == "__main__":
    main()
