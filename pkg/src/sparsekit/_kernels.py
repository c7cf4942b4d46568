"""Compiled inner loops for the coordinate and proximal-gradient solvers."""

import numpy as np
from numba import njit


@njit(cache=True)
def cd_sweep_gram(Q, z, alpha, dn, curv, lam, seq):
    """One coordinate-descent sweep in the order ``seq``; updates in place."""
    for t in range(seq.size):
        j = seq[t]
        old = alpha[j]
        u = z[j] + dn[j] * old
        au = abs(u) - lam[j]
        if au > 0.0:
            new = (au if u > 0 else -au) / curv[j]
        else:
            new = 0.0
        if new != old:
            delta = new - old
            for i in range(z.size):
                z[i] -= Q[i, j] * delta
            alpha[j] = new


@njit(cache=True)
def kkt_violation(grad, alpha, lam):
    worst = 0.0
    for i in range(alpha.size):
        if alpha[i] != 0.0:
            v = abs(grad[i] + (lam[i] if alpha[i] > 0 else -lam[i]))
        else:
            v = abs(grad[i]) - lam[i]
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def ista_penalized(Q, q, x2, eta, lam, alpha, max_iter, tol, accelerate, objs):
    """ISTA/FISTA on ``0.5 a'Qa - q'a + lam |a|_1``.

    Objectives of the iterates are written to ``objs`` unless it is empty
    (it must otherwise hold ``max_iter + 1`` entries).  Returns ``(alpha, iterations, converged)``.
    """
    p = alpha.size
    y = alpha.copy()
    t = 1.0
    thr = eta * lam
    lam_v = np.full(p, lam)
    track = objs.size > 0
    if track:
        objs[0] = 0.5 * (x2 - 2.0 * q @ alpha + alpha @ (Q @ alpha)) + lam * np.abs(alpha).sum()
    for it in range(max_iter):
        v = y - eta * (Q @ y - q)
        new = np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)
        if accelerate:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = new + ((t - 1.0) / t_new) * (new - alpha)
            t = t_new
        else:
            y = new
        alpha = new
        Qa = Q @ alpha
        if track:
            objs[it + 1] = 0.5 * (x2 - 2.0 * q @ alpha + alpha @ Qa) + lam * np.abs(alpha).sum()
        if kkt_violation(Qa - q, alpha, lam_v) <= tol:
            return alpha, it + 1, True
    return alpha, max_iter, False


# ---------------------------------------------------------------------------
# Homotopy
# ---------------------------------------------------------------------------

STOP_FULL, STOP_LAMBDA, STOP_RESIDUAL, STOP_NORM = 0, 1, 2, 3
HOM_OK, HOM_TIE, HOM_RANK, HOM_MAXKINKS = 0, 1, 2, 3


@njit(cache=True)
def _fwd(L, n, b):
    y = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    return y


@njit(cache=True)
def _bwd(L, n, y):
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def _chol_remove(L, n, i):
    for r in range(i, n - 1):
        for k in range(n):
            L[r, k] = L[r + 1, k]
    for j in range(i, n - 1):
        a = L[j, j]
        b = L[j, j + 1]
        rr = np.hypot(a, b)
        c = a / rr
        s = b / rr
        for r in range(j, n - 1):
            u = L[r, j]
            v = L[r, j + 1]
            L[r, j] = c * u + s * v
            L[r, j + 1] = -s * u + c * v
    for k in range(n):
        L[n - 1, k] = 0.0
        L[k, n - 1] = 0.0
    for j in range(n - 1):
        if L[j, j] < 0:
            for r in range(j, n - 1):
                L[r, j] = -L[r, j]


@njit(cache=True)
def homotopy_kernel(Q, q, x2, stop_kind, stop_val, ridge, max_kinks, record, cap,
                    tie_tol, schur_floor, m):
    """Follow the Lasso path; see ``convex.homotopy`` for the algorithm.

    Returns ``(status, lambdas, codes, final, bad, stopped)`` where ``codes``
    has one entry per recorded point (only the start and the end point when
    ``record`` is false) and ``bad`` lists the atoms involved in a
    degenerate event.
    """
    p = q.size
    alpha = np.zeros(p)
    c = q.copy()
    lam = 0.0
    for j in range(p):
        if abs(c[j]) > lam:
            lam = abs(c[j])
    lams = [lam]
    codes = [alpha.copy()]
    bad = np.zeros(0, dtype=np.int64)
    if lam == 0.0:
        return HOM_OK, lams, codes, alpha, bad, stop_kind != STOP_FULL
    # stop rule already met at the start
    if stop_kind == STOP_LAMBDA and stop_val >= lam:
        return HOM_OK, lams, codes, alpha, bad, True
    if stop_kind == STOP_RESIDUAL and x2 <= stop_val:
        return HOM_OK, lams, codes, alpha, bad, True
    if stop_kind == STOP_NORM and stop_val <= 0.0:
        return HOM_OK, lams, codes, alpha, bad, True

    tie = tie_tol * lam
    L = np.zeros((cap, cap))
    active = np.zeros(cap, dtype=np.int64)
    signs = np.zeros(cap)
    isact = np.zeros(p, dtype=np.bool_)
    na = 0

    # first atoms
    nstart = 0
    for j in range(p):
        if abs(c[j]) >= lam - tie:
            nstart += 1
    if nstart > 1 and ridge == 0.0:
        bad = np.zeros(nstart, dtype=np.int64)
        k = 0
        for j in range(p):
            if abs(c[j]) >= lam - tie:
                bad[k] = j
                k += 1
        return HOM_TIE, lams, codes, alpha, bad, False
    for j in range(p):
        if abs(c[j]) >= lam - tie:
            if na >= cap:
                return HOM_RANK, lams, codes, alpha, bad, False
            g = np.empty(na)
            for k in range(na):
                g[k] = Q[active[k], j]
            v = _fwd(L, na, g)
            s = Q[j, j] + ridge - v @ v
            if s <= schur_floor:
                bad = np.array([j], dtype=np.int64)
                return HOM_RANK, lams, codes, alpha, bad, False
            for k in range(na):
                L[na, k] = v[k]
            L[na, na] = np.sqrt(s)
            active[na] = j
            signs[na] = 1.0 if c[j] > 0 else -1.0
            isact[j] = True
            na += 1

    nk = 1
    tau_ev = np.empty(p)
    while True:
        if nk > max_kinks:
            return HOM_MAXKINKS, lams, codes, alpha, bad, False
        a1 = _bwd(L, na, _fwd(L, na, signs[:na]))
        b = np.zeros(p)
        for k in range(na):
            col = active[k]
            w = a1[k]
            for i in range(p):
                b[i] += Q[i, col] * w
        tau_event = np.inf
        # with m active atoms (no ridge) the correlations of inactive atoms
        # stay proportional to lam, so none can enter
        full = ridge == 0.0 and na >= m
        for j in range(p):
            t = np.inf
            if isact[j] or full:
                pass
            else:
                if 1.0 - b[j] > 0:
                    tu = (lam - c[j]) / (1.0 - b[j])
                    if tu > tie and tu < t:
                        t = tu
                if 1.0 + b[j] > 0:
                    td = (lam + c[j]) / (1.0 + b[j])
                    if td > tie and td < t:
                        t = td
            tau_ev[j] = t
        for k in range(na):
            j = active[k]
            t = np.inf
            if a1[k] != 0.0:
                to = -alpha[j] / a1[k]
                if to > tie:
                    t = to
            tau_ev[j] = t
        for j in range(p):
            if tau_ev[j] < tau_event:
                tau_event = tau_ev[j]

        # stopping rule on this segment
        tau_stop = np.inf
        if stop_kind == STOP_LAMBDA:
            tau_stop = max(lam - stop_val, 0.0)
        elif stop_kind == STOP_RESIDUAL:
            qa = 0.0
            for i in range(p):
                qa += q[i] * alpha[i]
            # |r|^2 = x2 - q'a - c'a  (since c = q - Q a)
            ca = 0.0
            for i in range(p):
                ca += c[i] * alpha[i]
            res2 = x2 - qa - ca
            A2 = 0.0
            B2 = 0.0
            for k in range(na):
                A2 += a1[k] * b[active[k]]
                B2 += c[active[k]] * a1[k]
            C2 = res2 - stop_val
            if C2 <= 0:
                tau_stop = 0.0
            else:
                disc = B2 * B2 - A2 * C2
                if A2 > 0 and disc >= 0:
                    tau_stop = C2 / (B2 + np.sqrt(disc))
        elif stop_kind == STOP_NORM:
            slope = 0.0
            nrm1 = 0.0
            for k in range(na):
                slope += signs[k] * a1[k]
                nrm1 += abs(alpha[active[k]])
            gap = stop_val - nrm1
            if gap <= 0:
                tau_stop = 0.0
            elif slope > 0:
                tau_stop = gap / slope

        if tau_stop <= min(tau_event, lam):
            if tau_stop > 0:
                for k in range(na):
                    alpha[active[k]] += tau_stop * a1[k]
                lams.append(lam - tau_stop)
                codes.append(alpha.copy())
            return HOM_OK, lams, codes, alpha, bad, True
        if lam <= tau_event * (1 + 1e-10) or tau_event >= lam - tie:
            qg = np.empty(na)
            for k in range(na):
                qg[k] = q[active[k]]
            sol = _bwd(L, na, _fwd(L, na, qg))
            alpha[:] = 0.0
            for k in range(na):
                alpha[active[k]] = sol[k]
            lams.append(0.0)
            codes.append(alpha.copy())
            return HOM_OK, lams, codes, alpha, bad, stop_kind != STOP_FULL

        nhit = 0
        for j in range(p):
            if tau_ev[j] <= tau_event + tie:
                nhit += 1
        hit = np.empty(nhit, dtype=np.int64)
        k = 0
        for j in range(p):
            if tau_ev[j] <= tau_event + tie:
                hit[k] = j
                k += 1
        if nhit > 1 and ridge == 0.0:
            return HOM_TIE, lams, codes, alpha, hit, False

        lam -= tau_event
        for k in range(na):
            alpha[active[k]] += tau_event * a1[k]
        c_new = c - tau_event * b
        was = np.empty(nhit, dtype=np.bool_)
        for h in range(nhit):
            was[h] = isact[hit[h]]
        # leaving atoms first
        for h in range(nhit):
            j = hit[h]
            if isact[j]:
                pos = 0
                while active[pos] != j:
                    pos += 1
                _chol_remove(L, na, pos)
                for k in range(pos, na - 1):
                    active[k] = active[k + 1]
                    signs[k] = signs[k + 1]
                na -= 1
                isact[j] = False
                alpha[j] = 0.0
        rhs = np.empty(na)
        for k in range(na):
            rhs[k] = q[active[k]] - lam * signs[k]
        sol = _bwd(L, na, _fwd(L, na, rhs))
        alpha[:] = 0.0
        for k in range(na):
            alpha[active[k]] = sol[k]
        for h in range(nhit):
            if was[h]:
                continue
            j = hit[h]
            # entering atom
            if na >= cap:
                bad = np.array([j], dtype=np.int64)
                return HOM_RANK, lams, codes, alpha, bad, False
            g = np.empty(na)
            for k in range(na):
                g[k] = Q[active[k], j]
            v = _fwd(L, na, g)
            s = Q[j, j] + ridge - v @ v
            if s <= schur_floor:
                bad = np.empty(na + 1, dtype=np.int64)
                bad[0] = j
                for k in range(na):
                    bad[k + 1] = active[k]
                return HOM_RANK, lams, codes, alpha, bad, False
            for k in range(na):
                L[na, k] = v[k]
            L[na, na] = np.sqrt(s)
            active[na] = j
            signs[na] = 1.0 if c_new[j] > 0 else -1.0
            isact[j] = True
            na += 1
        c = q - Q @ alpha
        nk += 1
        if record:
            lams.append(lam)
            codes.append(alpha.copy())
