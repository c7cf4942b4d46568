"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import itertools

import numpy as np

from sparsekit.convex import AtLambda, AtNorm, AtResidual, FullPath, RegPath
from sparsekit.core import DegeneratePathError, NumericalError
from sparsekit.greedy import SCHUR_FLOOR, CholFactor

TIE_TOL = 1e-12


def l1_projection_sorted(beta, mu):
    """Sort-based projection onto the l1-ball (O(p log p) scan)."""
    beta = np.asarray(beta, dtype=np.float64)
    u = np.abs(beta)
    if u.sum() <= mu:
        return beta.copy()
    s = np.sort(u)[::-1]
    csum = np.cumsum(s)
    k = np.arange(1, s.size + 1)
    rho = int(np.nonzero(s - (csum - mu) / k > 0)[0][-1])
    import math

    theta = (math.fsum(s[: rho + 1]) - mu) / (rho + 1)
    return np.sign(beta) * np.maximum(u - theta, 0.0)


def exhaustive_l0(x, D, k):
    """Best least-squares fit over all supports of size <= k (ties: first found)."""
    best = (float(x @ x), (), np.zeros(0))
    p = D.shape[1]
    for size in range(1, k + 1):
        for sup in itertools.combinations(range(p), size):
            Ds = D[:, sup]
            a, *_ = np.linalg.lstsq(Ds, x, rcond=None)
            r = x - Ds @ a
            e = float(r @ r)
            if e < best[0] - 1e-12 * max(1.0, best[0]):
                best = (e, sup, a)
    return best


def mutual_coherence(D):
    Dn = D / np.linalg.norm(D, axis=0)
    G = np.abs(Dn.T @ Dn)
    np.fill_diagonal(G, 0.0)
    return float(G.max())


def jacobi_svd_top(E, sweeps=60):
    """Leading singular pair from a one-sided Jacobi SVD."""
    U = np.array(E, dtype=np.float64).T.copy()  # rotate columns of E^T
    n = U.shape[1]
    V = np.eye(n)
    for _ in range(sweeps):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                a = U[:, i] @ U[:, i]
                b = U[:, j] @ U[:, j]
                g = U[:, i] @ U[:, j]
                off = max(off, abs(g) / np.sqrt(a * b) if a * b > 0 else 0.0)
                if abs(g) < 1e-300:
                    continue
                zeta = (b - a) / (2 * g)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1 + zeta * zeta)) if zeta != 0 else 1.0
                c = 1 / np.sqrt(1 + t * t)
                s = c * t
                ui, uj = U[:, i].copy(), U[:, j].copy()
                U[:, i], U[:, j] = c * ui - s * uj, s * ui + c * uj
                vi, vj = V[:, i].copy(), V[:, j].copy()
                V[:, i], V[:, j] = c * vi - s * vj, s * vi + c * vj
        if off < 1e-15:
            break
    sv = np.linalg.norm(U, axis=0)
    k = int(np.argmax(sv))
    # E^T = U' S V'^T  =>  E = V' S U'^T: left vector of E is V[:, k]
    return V[:, k], float(sv[k]), U[:, k] / sv[k]


def _stop_tau(stop, lam, alpha_g, eta, a1, c_g, res2, Qgg):
    if isinstance(stop, AtLambda):
        return max(lam - stop.lam, 0.0)
    if isinstance(stop, AtResidual):
        A = float(a1 @ Qgg @ a1)
        B = float(c_g @ a1)
        C = res2 - stop.eps
        if C <= 0:
            return 0.0
        disc = B * B - A * C
        if A <= 0 or disc < 0:
            return np.inf
        return C / (B + np.sqrt(disc))
    if isinstance(stop, AtNorm):
        slope = float(eta @ a1)
        gap = stop.mu - float(np.abs(alpha_g).sum())
        if gap <= 0:
            return 0.0
        return gap / slope if slope > 0 else np.inf
    return np.inf


def homotopy_reference(x, D, stop=None, ridge: float = 0.0, max_kinks=None, gram=None):
    """Straightforward NumPy path follower (LARS-Lasso); returns ``(path, events)``."""
    stop = FullPath() if stop is None else stop
    D = np.asarray(D, dtype=np.float64)
    m, p = D.shape
    x = np.asarray(x, dtype=np.float64).ravel()
    max_kinks = 50 * min(m, p) + 10 if max_kinks is None else max_kinks
    Q = D.T @ D if gram is None else gram
    q = D.T @ x
    x2 = float(x @ x)
    c = q.copy()
    lam = float(np.max(np.abs(c))) if p else 0.0
    lam0 = lam
    lambdas = [lam]
    codes = [np.zeros(p)]
    events = []
    alpha = np.zeros(p)

    def finish(stopped):
        return RegPath(np.array(lambdas), np.column_stack(codes), stopped), events

    if lam == 0.0:
        return finish(not isinstance(stop, FullPath))
    if _stop_tau(stop, lam, np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), x2,
                 np.zeros((0, 0))) == 0.0 and not isinstance(stop, FullPath):
        return finish(True)

    tie = TIE_TOL * lam0
    active: list[int] = []
    signs: list[float] = []
    chol = CholFactor(min(m, p) + 1)

    def add(j, sgn):
        v, s = chol.schur(Q[active, j], Q[j, j] + ridge)
        if s <= SCHUR_FLOOR:
            raise DegeneratePathError(f"atom {j} is dependent on the active set", [j, *active])
        chol.append(v, s)
        active.append(j)
        signs.append(sgn)

    def drop(j):
        i = active.index(j)
        chol.remove(i)
        del active[i]
        del signs[i]
        alpha[j] = 0.0

    start = np.flatnonzero(np.abs(c) >= lam - tie)
    if start.size > 1 and ridge == 0:
        raise DegeneratePathError("several atoms enter at the first kink", start)
    for j in start:
        add(int(j), float(np.sign(c[j])))

    while True:
        if len(lambdas) > max_kinks:
            raise NumericalError(f"homotopy exceeded {max_kinks} kinks")
        g = np.array(active)
        eta = np.array(signs)
        a1 = chol.solve(eta)
        b = Q[:, g] @ a1
        inactive = np.ones(p, dtype=bool)
        inactive[g] = False

        tau_ev = np.full(p, np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_up = np.where(1.0 - b > 0, (lam - c) / (1.0 - b), np.inf)
            t_dn = np.where(1.0 + b > 0, (lam + c) / (1.0 + b), np.inf)
            t_in = np.minimum(np.where(t_up > tie, t_up, np.inf), np.where(t_dn > tie, t_dn, np.inf))
            t_out = np.where(a1 != 0, -alpha[g] / a1, np.inf)
        tau_ev[inactive] = t_in[inactive]
        tau_ev[g] = np.where(t_out > tie, t_out, np.inf)
        tau_event = float(tau_ev.min()) if p else np.inf

        res2 = float(x2 - 2 * q @ alpha + alpha @ Q @ alpha)
        tau_stop = _stop_tau(stop, lam, alpha[g], eta, a1, c[g], res2, Q[np.ix_(g, g)])
        tau_end = lam

        if tau_stop <= min(tau_event, tau_end):
            if tau_stop > 0:
                alpha[g] += tau_stop * a1
                lambdas.append(lam - tau_stop)
                codes.append(alpha.copy())
            return finish(True)
        if tau_end <= tau_event * (1 + 1e-10) or tau_event >= lam - tie:
            # the path reaches lam = 0 before any other event
            alpha[g] = chol.solve(q[g])
            lambdas.append(0.0)
            codes.append(alpha.copy())
            return finish(isinstance(stop, (AtLambda, AtResidual, AtNorm)))

        hit = np.flatnonzero(tau_ev <= tau_event + tie)
        if hit.size > 1 and ridge == 0:
            raise DegeneratePathError("simultaneous path events", hit)
        lam -= tau_event
        alpha[g] += tau_event * a1
        c_new = c - tau_event * b
        entering = []
        for j in hit:
            j = int(j)
            if j in active:
                drop(j)
                events.append(("leave", j, lam))
            else:
                entering.append(j)
        # refresh the coefficients on the surviving set; entering atoms are
        # exactly zero at their kink
        alpha[:] = 0.0
        if active:
            g = np.array(active)
            alpha[g] = chol.solve(q[g] - lam * np.array(signs))
        for j in entering:
            add(j, float(np.sign(c_new[j])))
            events.append(("enter", j, lam))
        c = q - Q @ alpha
        lambdas.append(lam)
        codes.append(alpha.copy())




def low_coherence_dictionary(m, p, mu, rng, max_iter=200, restarts=20):
    """Random unit-norm ``m x p`` frame with mutual coherence below ``mu``.

    Alternates clipping the Gram matrix's off-diagonal entries with a rank-m
    projection (a standard frame-design iteration), restarting from a new
    random frame if it stalls.
    """
    target = 0.75 * mu
    for _ in range(restarts):
        D = rng.standard_normal((m, p))
        D /= np.linalg.norm(D, axis=0)
        for _ in range(max_iter):
            if mutual_coherence(D) < mu:
                return D
            G = np.clip(D.T @ D, -target, target)
            np.fill_diagonal(G, 1.0)
            w, V = np.linalg.eigh(G)
            D = np.sqrt(np.maximum(w[-m:], 0.0))[:, None] * V[:, -m:].T
            D /= np.linalg.norm(D, axis=0)
    raise RuntimeError("could not reach the requested coherence")
