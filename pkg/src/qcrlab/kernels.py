"""Hot numeric kernels.

Everything here is written in the numpy subset numba understands, and is
compiled through :func:`qcrlab._accel.kernel`.  With ``QCRLAB_NUMBA=0`` the
same functions run as plain numpy.

Kernels:

* rank-one POVM parameterization and its Fisher information,
* the weighted inverse-Fisher objective ``Tr G J^-1``,
* feature-linear state models and their multinomial log-likelihood,
* a bounded Nelder-Mead simplex search that calls any kernel objective.
"""

import numpy as np

from ._accel import kernel

FEATURE_AFFINE = 0
FEATURE_ROTATION = 1


@kernel
def povm_vectors(x, d, L):
    """Map ``2*d*L`` reals to ``L`` vectors ``v_k`` with ``sum_k v_k v_k^+ = I``.

    Returns ``(V, ok)``; ``ok`` is False when the raw frame is rank deficient.
    """
    n = d * L
    W = (x[:n] + 1j * x[n:2 * n]).reshape(L, d)
    S = np.ascontiguousarray(W.T) @ np.ascontiguousarray(W.conj())
    S = 0.5 * (S + S.conj().T)
    lam, U = np.linalg.eigh(S)
    if lam[0] <= 1e-12 * lam[d - 1] or lam[d - 1] <= 0.0:
        return W, False
    Sih = (U * (1.0 / np.sqrt(lam))) @ np.ascontiguousarray(U.conj().T)
    V = W @ np.ascontiguousarray(Sih.T)
    return V, True


@kernel
def rank_one_fisher(V, rho, drho):
    """Outcome probabilities, their derivatives and the Fisher matrix for POVM ``{v_k v_k^+}``."""
    m = drho.shape[0]
    L = V.shape[0]
    Vc = V.conj()
    q = np.sum(Vc * (V @ np.ascontiguousarray(rho.T)), axis=1).real
    dq = np.empty((m, L))
    for i in range(m):
        dq[i] = np.sum(Vc * (V @ np.ascontiguousarray(drho[i].T)), axis=1).real
    J = np.zeros((m, m))
    for k in range(L):
        if q[k] > 1e-300:
            for i in range(m):
                a = dq[i, k] / q[k]
                for j in range(m):
                    J[i, j] += a * dq[j, k]
    return q, dq, J


@kernel
def weighted_inverse(J, G, penalty, cond_max):
    """``Tr(G J^-1)``; ``penalty`` if ``G`` reaches a direction where ``J`` is numerically singular."""
    m = J.shape[0]
    mu, Q = np.linalg.eigh(0.5 * (J + J.T))
    gscale = np.max(np.abs(G))
    if gscale == 0.0:
        return 0.0
    top = mu[m - 1]
    total = 0.0
    for i in range(m):
        v = Q[:, i]
        gii = v @ (G @ v)
        if top <= 0.0 or mu[i] * cond_max < top:
            if abs(gii) > 1e-12 * gscale:
                return penalty
            continue
        total += gii / mu[i]
    return total


@kernel
def povm_objective(x, data):
    rho, drho, G, penalty, d, L = data
    V, ok = povm_vectors(x, d, L)
    if not ok:
        return penalty
    q, dq, J = rank_one_fisher(V, rho, drho)
    return weighted_inverse(J, G, penalty, 1e10)


@kernel
def model_features(theta, kind, power):
    """Feature vector ``f(theta)`` and Jacobian ``df/dtheta`` with ``rho = sum_j f_j B_j``."""
    m = theta.shape[0]
    if kind == FEATURE_ROTATION:
        f1 = np.empty(3)
        f1[0] = 1.0
        f1[1] = np.cos(theta[0])
        f1[2] = np.sin(theta[0])
        j1 = np.zeros((1, 3))
        j1[0, 1] = -f1[2]
        j1[0, 2] = f1[1]
    else:
        f1 = np.empty(m + 1)
        f1[0] = 1.0
        f1[1:] = theta
        j1 = np.zeros((m, m + 1))
        for i in range(m):
            j1[i, i + 1] = 1.0
    f = f1.copy()
    jac = j1.copy()
    for _ in range(power - 1):
        nf = np.outer(f, f1).ravel()
        nj = np.empty((m, nf.shape[0]))
        for i in range(m):
            nj[i] = np.outer(jac[i], f1).ravel() + np.outer(f, j1[i]).ravel()
        f = nf
        jac = nj
    return f, jac


@kernel
def neg_loglik(theta, data):
    """Negative multinomial log-likelihood ``-sum_k c_k log q_k(theta)`` for a feature-linear model."""
    P, counts, kind, power, penalty = data
    f, _ = model_features(theta, kind, power)
    q = P @ f
    total = 0.0
    for k in range(q.shape[0]):
        c = counts[k]
        if c > 0.0:
            if q[k] <= 0.0:
                return penalty
            total -= c * np.log(q[k])
    return total


@kernel
def nelder_mead(fun, data, x0, step, lower, upper, max_evals, xatol, fatol, frtol):
    """Adaptive Nelder-Mead with candidates clipped into ``[lower, upper]``.

    Stops when the simplex spread is within ``xatol`` in x and within
    ``max(fatol, frtol*|f_best|)`` in f, or after ``max_evals`` evaluations.
    Returns ``(x_best, f_best, evals, converged)``.
    """
    n = x0.shape[0]
    alpha = 1.0
    chi = 1.0 + 2.0 / n
    psi = 0.75 - 1.0 / (2.0 * n)
    sigma = 1.0 - 1.0 / n

    sim = np.empty((n + 1, n))
    fs = np.empty(n + 1)
    sim[0] = np.minimum(np.maximum(x0, lower), upper)
    for i in range(n):
        y = sim[0].copy()
        y[i] = y[i] + step[i]
        if y[i] > upper[i]:
            y[i] = sim[0, i] - step[i]
        sim[i + 1] = np.minimum(np.maximum(y, lower), upper)
    for i in range(n + 1):
        fs[i] = fun(sim[i], data)
    evals = n + 1
    converged = False

    while evals < max_evals:
        order = np.argsort(fs, kind="mergesort")
        sim = sim[order]
        fs = fs[order]
        fspread = np.max(np.abs(fs[1:] - fs[0]))
        xspread = np.max(np.abs(sim[1:] - sim[0]))
        if xspread <= xatol and fspread <= max(fatol, frtol * abs(fs[0])):
            converged = True
            break

        centroid = np.sum(sim[:n], axis=0) / n
        xr = np.minimum(np.maximum(centroid + alpha * (centroid - sim[n]), lower), upper)
        fr = fun(xr, data)
        evals += 1
        if fr < fs[0]:
            xe = np.minimum(np.maximum(centroid + chi * (xr - centroid), lower), upper)
            fe = fun(xe, data)
            evals += 1
            if fe < fr:
                sim[n] = xe
                fs[n] = fe
            else:
                sim[n] = xr
                fs[n] = fr
        elif fr < fs[n - 1]:
            sim[n] = xr
            fs[n] = fr
        else:
            shrink = False
            if fr < fs[n]:
                xc = np.minimum(np.maximum(centroid + psi * (xr - centroid), lower), upper)
                fc = fun(xc, data)
                evals += 1
                if fc <= fr:
                    sim[n] = xc
                    fs[n] = fc
                else:
                    shrink = True
            else:
                xcc = centroid + psi * (sim[n] - centroid)
                fcc = fun(xcc, data)
                evals += 1
                if fcc < fs[n]:
                    sim[n] = xcc
                    fs[n] = fcc
                else:
                    shrink = True
            if shrink:
                for i in range(1, n + 1):
                    sim[i] = sim[0] + sigma * (sim[i] - sim[0])
                    fs[i] = fun(sim[i], data)
                evals += n

    best = np.argmin(fs)
    return sim[best].copy(), fs[best], evals, converged
