"""Greedy l0 solvers: matching pursuit, orthogonal matching pursuit and
iterative hard-thresholding.

OMP is implemented order-recursively: the Cholesky factor ``L`` of the
active Gram block grows by one row per selection through a Schur
complement, and the products ``V = L^{-1} D_G^T D`` and ``w = L^{-1} D_G^T x``
are kept so that correlations, residual energy and the selection score are
updated in ``O(p |G|)`` per iteration.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .core import (
    SparseCode,
    SparseKitError,
    as_code,
    check_dictionary,
    check_matrix,
    check_signal,
    hard_threshold,
    max_eigenvalue,
)

SCHUR_FLOOR = 1e-12
UNIT_NORM_TOL = 1e-8
STALL_CORR = 1e-14
# residual energy (relative to |x|^2) treated as an exact fit; the Gram
# update x2 - |w|^2 cannot resolve anything smaller than a few ulps of x2
EXACT_FIT = 1e-14


# ---------------------------------------------------------------------------
# Stopping rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaxNonzeros:
    k: int


@dataclass(frozen=True)
class ResidualSq:
    eps: float


@dataclass(frozen=True)
class Both:
    k: int
    eps: float


def _stop_params(stop, p: int):
    """Return ``(k, eps)`` for a stop rule; missing parts are unbounded."""
    if isinstance(stop, MaxNonzeros):
        k, eps = stop.k, -1.0
    elif isinstance(stop, ResidualSq):
        k, eps = p, stop.eps
    elif isinstance(stop, Both):
        k, eps = stop.k, stop.eps
    else:
        raise SparseKitError(f"unknown stop rule {stop!r}")
    if k < 0:
        raise SparseKitError("k must be >= 0")
    if isinstance(stop, (ResidualSq, Both)) and eps < 0:
        raise SparseKitError("eps must be >= 0")
    return min(int(k), p), float(eps)


# ---------------------------------------------------------------------------
# Linear-algebra helpers
# ---------------------------------------------------------------------------


class GramCache:
    """Precomputed ``Q = D^T D`` shared read-only across signals."""

    def __init__(self, D):
        self.D = check_dictionary(D)
        Q = self.D.T @ self.D
        self.Q = 0.5 * (Q + Q.T)


class CholFactor:
    """Lower-triangular ``L`` with ``L L^T = G`` for a growing active set.

    Rows are appended with a Schur complement; :meth:`remove` deletes one
    index and restores triangularity with Givens rotations.
    """

    def __init__(self, capacity: int):
        self._L = np.zeros((max(capacity, 1), max(capacity, 1)))
        self.n = 0

    @property
    def L(self) -> np.ndarray:
        return self._L[: self.n, : self.n]

    def _grow(self):
        cap = self._L.shape[0]
        new = np.zeros((2 * cap, 2 * cap))
        new[:cap, :cap] = self._L
        self._L = new

    def forward(self, b) -> np.ndarray:
        if self.n == 0:
            return np.zeros(0)
        return solve_triangular(self.L, b, lower=True, check_finite=False)

    def solve(self, b) -> np.ndarray:
        """Solve ``G y = b``."""
        if self.n == 0:
            return np.zeros(0)
        y = solve_triangular(self.L, b, lower=True, check_finite=False)
        return solve_triangular(self.L.T, y, lower=False, check_finite=False)

    def schur(self, g_col, g_diag: float):
        """Return ``(v, s)`` with ``v = L^{-1} g_col`` and ``s = g_diag - |v|^2``."""
        v = self.forward(g_col)
        return v, float(g_diag - v @ v)

    def append(self, v, s: float) -> None:
        if s <= 0:
            raise SparseKitError("non-positive Schur complement")
        if self.n == self._L.shape[0]:
            self._grow()
        self._L[self.n, : self.n] = v
        self._L[self.n, self.n] = np.sqrt(s)
        self.n += 1

    def remove(self, i: int) -> None:
        """Drop row/column ``i`` of ``G`` (Givens downdate)."""
        n = self.n
        L = self._L
        # deleting row i leaves a lower-Hessenberg block below it
        L[i : n - 1, :n] = L[i + 1 : n, :n].copy()
        for j in range(i, n - 1):
            a, b = L[j, j], L[j, j + 1]
            r = np.hypot(a, b)
            c, s = a / r, b / r
            col_j = L[j:n - 1, j].copy()
            col_k = L[j:n - 1, j + 1].copy()
            L[j:n - 1, j] = c * col_j + s * col_k
            L[j:n - 1, j + 1] = -s * col_j + c * col_k
        L[n - 1, :] = 0.0
        L[:, n - 1] = 0.0
        self.n = n - 1
        # keep a positive diagonal
        d = np.sign(np.diag(self.L))
        d[d == 0] = 1.0
        self._L[: self.n, : self.n] *= d[None, :]


# ---------------------------------------------------------------------------
# Matching pursuit
# ---------------------------------------------------------------------------


def mp(x, D, stop, max_iter: int | None = None, trace: list | None = None) -> SparseCode:
    """Matching pursuit.

    Repeatedly picks ``j = argmax |d_j^T r|`` and adds that correlation to
    ``alpha[j]``.  Atoms must have unit norm.  ``trace`` (if given) receives
    the residual energy after every iteration.
    """
    D = check_dictionary(D)
    m, p = D.shape
    x = check_signal(x, m)
    norms = np.sqrt(np.einsum("ij,ij->j", D, D))
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        raise SparseKitError("matching pursuit needs unit-norm atoms")
    k, eps = _stop_params(stop, p)
    max_iter = 10 * p if max_iter is None else int(max_iter)
    alpha = np.zeros(p)
    r = x.copy()
    res2 = float(r @ r)
    status = "ok"
    if trace is not None:
        trace.append(res2)
    for _ in range(max_iter):
        if np.count_nonzero(alpha) >= k or res2 <= eps:
            break
        c = D.T @ r
        j = int(np.argmax(np.abs(c)))
        if abs(c[j]) < STALL_CORR:
            status = "converged_early"
            break
        alpha[j] += c[j]
        r -= c[j] * D[:, j]
        res2 = float(r @ r)
        if trace is not None:
            trace.append(res2)
    else:
        if np.count_nonzero(alpha) < k and res2 > eps:
            status = "max_iter"
    return SparseCode.from_dense(alpha, status)


# ---------------------------------------------------------------------------
# Orthogonal matching pursuit
# ---------------------------------------------------------------------------


def _omp_core(x, D, Q, k, eps, trace):
    """Order-recursive OMP; ``Q`` is the Gram matrix or ``None``."""
    m, p = D.shape
    x2 = float(x @ x)
    q = D.T @ x
    diag = np.diag(Q).copy() if Q is not None else np.einsum("ij,ij->j", D, D)
    usable = diag > SCHUR_FLOOR
    kmax = min(k, m, p)
    V = np.zeros((kmax, p))  # rows: L^{-1} D_G^T d_j for all j
    w = np.zeros(kmax)
    L = CholFactor(kmax)
    proj2 = np.zeros(p)  # |P_G d_j|^2
    support = []
    res2 = x2
    z = q.copy()
    r = x.copy() if Q is None else None
    status = "ok"
    eps = max(eps, EXACT_FIT * x2)
    while len(support) < kmax and res2 > eps:
        denom = diag - proj2
        ok = usable & (denom > SCHUR_FLOOR)
        ok[support] = False
        if not ok.any():
            status = "degenerate_atom"
            break
        score = np.where(ok, z * z / np.where(ok, denom, 1.0), -1.0)
        j = int(np.argmax(score))
        if score[j] <= 0.0:
            status = "converged_early"
            break
        t = len(support)
        v = V[:t, j]
        s = float(diag[j] - v @ v)
        if s <= SCHUR_FLOOR:
            status = "degenerate_atom"
            break
        L.append(v, s)
        rs = np.sqrt(s)
        row = Q[j] if Q is not None else D[:, j] @ D
        V[t] = (row - v @ V[:t]) / rs
        w[t] = (q[j] - v @ w[:t]) / rs
        support.append(j)
        proj2 += V[t] ** 2
        if Q is not None:
            z -= w[t] * V[t]
            res2 = max(x2 - float(w[: t + 1] @ w[: t + 1]), 0.0)
        else:
            a = solve_triangular(L.L.T, w[: t + 1], lower=False, check_finite=False)
            r = x - D[:, support] @ a
            z = D.T @ r
            res2 = float(r @ r)
        if trace is not None:
            trace.append((list(support), res2))
    t = len(support)
    a = solve_triangular(L.L.T, w[:t], lower=False, check_finite=False) if t else np.zeros(0)
    return support, a, status


def _to_code(p, support, a, status) -> SparseCode:
    alpha = np.zeros(p)
    alpha[np.asarray(support, dtype=np.intp)] = a
    return SparseCode.from_dense(alpha, status)


def omp(x, D, stop, cache: GramCache | None = None, trace: list | None = None) -> SparseCode:
    """Orthogonal matching pursuit.

    Each iteration adds the atom whose inclusion most reduces the
    least-squares residual, i.e. ``argmax z_j^2 / |P_perp d_j|^2`` with
    ``z = D^T r``, then refits all coefficients on the support.  When the
    new atom is numerically dependent on the support (Schur complement
    below ``1e-12``) the current code is returned with status
    ``"degenerate_atom"``.

    Parameters
    ----------
    x : ndarray of shape (m,)
    D : ndarray of shape (m, p)
    stop : MaxNonzeros, ResidualSq or Both
    cache : GramCache, optional
        Precomputed Gram matrix; without it the residual is recomputed
        explicitly every iteration.
    trace : list, optional
        Receives ``(support, residual_energy)`` after each selection.
    """
    if cache is not None:
        D = cache.D
    else:
        D = check_dictionary(D)
    x = check_signal(x, D.shape[0])
    k, eps = _stop_params(stop, D.shape[1])
    support, a, status = _omp_core(x, D, None if cache is None else cache.Q, k, eps, trace)
    return _to_code(D.shape[1], support, a, status)


def omp_batch(X, D, stop, cache: GramCache | None = None, n_threads: int = 1,
              return_status: bool = False):
    """Column-wise OMP with a shared Gram matrix.

    Returns the ``(p, n)`` code matrix (and the per-column status list when
    ``return_status``).  Columns are independent; ``n_threads > 1`` runs
    them on a thread pool with identical results.
    """
    cache = cache if cache is not None else GramCache(D)
    D = cache.D
    X = check_matrix(X, "signal matrix")
    if X.shape[0] != D.shape[0]:
        raise SparseKitError(f"signals have {X.shape[0]} rows, dictionary {D.shape[0]}")
    k, eps = _stop_params(stop, D.shape[1])
    p, n = D.shape[1], X.shape[1]
    A = np.zeros((p, n))
    status = [""] * n
    # contiguous rows give the same BLAS path (and bits) as single-signal calls
    Xt = np.ascontiguousarray(X.T)

    def work(i):
        sup, a, st = _omp_core(Xt[i], D, cache.Q, k, eps, None)
        A[sup, i] = a
        status[i] = st

    if n_threads > 1 and n > 1:
        with ThreadPoolExecutor(n_threads) as ex:
            list(ex.map(work, range(n)))
    else:
        for i in range(n):
            work(i)
    return (A, status) if return_status else A


def omp_masked(x, mask, D, stop) -> SparseCode:
    """OMP on the observed entries only: rows with ``mask == False`` are dropped.

    Atom norms of the restricted dictionary can be below one, which the
    selection rule handles.
    """
    mask = np.asarray(mask, dtype=bool).ravel()
    D = check_matrix(D, "dictionary")
    x = check_signal(x, D.shape[0])
    Dm = D[mask]
    k, eps = _stop_params(stop, D.shape[1])
    support, a, status = _omp_core(x[mask], Dm, Dm.T @ Dm, k, eps, None)
    return _to_code(D.shape[1], support, a, status)


# ---------------------------------------------------------------------------
# Iterative hard-thresholding
# ---------------------------------------------------------------------------


def iht(x, D, k: int | None = None, lam: float | None = None, step: float | None = None,
        n_iter: int = 100, alpha0=None, trace: list | None = None) -> SparseCode:
    """Iterative hard-thresholding.

    Each iteration takes a gradient step of size ``step`` on
    ``0.5 |x - D a|^2`` and then keeps the ``k`` largest entries (top-k mode)
    or zeroes entries below ``sqrt(2 lam step)`` (penalized mode, objective
    ``0.5 |x - D a|^2 + lam |a|_0``).

    ``step`` defaults to ``1 / lambda_max(D^T D)`` estimated by the power
    method.  ``trace`` receives the objective at every iterate.
    """
    D = check_dictionary(D)
    m, p = D.shape
    x = check_signal(x, m)
    if (k is None) == (lam is None):
        raise SparseKitError("give exactly one of k or lam")
    if lam is not None and lam < 0:
        raise SparseKitError("lam must be >= 0")
    Q = D.T @ D
    if step is None:
        step = 1.0 / max(max_eigenvalue(Q), np.finfo(float).tiny)
    if not step > 0:
        raise SparseKitError("step size must be > 0")
    alpha = as_code(alpha0, p)
    if k is not None and np.count_nonzero(alpha) > k:
        raise SparseKitError("initial code has more than k nonzeros")
    q = D.T @ x
    x2 = float(x @ x)

    def objective(a):
        val = 0.5 * (x2 - 2 * q @ a + a @ Q @ a)
        return float(val if k is not None else val + lam * np.count_nonzero(a))

    if trace is not None:
        trace.append(objective(alpha))
    tau = None if lam is None else np.sqrt(2.0 * lam * step)
    for _ in range(n_iter):
        beta = alpha + step * (q - Q @ alpha)
        new = hard_threshold(beta, k=k) if k is not None else hard_threshold(beta, mu=tau)
        done = np.array_equal(new, alpha)
        alpha = new
        if trace is not None:
            trace.append(objective(alpha))
        if done:
            break
    return SparseCode.from_dense(alpha)
