"""Dictionary learning.

Batch learners (MOD, alternate minimization, block coordinate descent,
K-SVD) minimize

    (1/n) sum_i 0.5 |x_i - D a_i|^2 + psi(a_i)

over dictionaries whose atoms lie in the unit ball, with ``psi`` the l1
penalty or an l0 budget.  Stochastic (SGD) and online learners process
signals one at a time; the online learner keeps the sufficient statistics
``B = sum x a^T`` and ``C = sum a a^T``.  K-means is included as the
one-hot special case.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convex import AtLambda, AtNorm, AtResidual, homotopy_code, lasso_batch
from .core import SparseKitError, check_matrix, project_unit_columns, soft_threshold
from .greedy import Both, GramCache, MaxNonzeros, ResidualSq, omp_batch

ZERO_USAGE = 1e-12
MOD_RIDGE = 1e-10
FALLBACK_RIDGE = 1e-10


@dataclass
class LearnTrace:
    """Objective values per (half-)iteration and atom replacement events."""

    objectives: list = field(default_factory=list)
    events: list = field(default_factory=list)
    atom_residuals: list = field(default_factory=list)


@dataclass
class SufficientStats:
    B: np.ndarray
    C: np.ndarray
    t: int = 0
    # running sums needed to report the online surrogate objective
    x_energy: float = 0.0
    code_l1: float = 0.0

    @classmethod
    def zeros(cls, m: int, p: int) -> "SufficientStats":
        return cls(np.zeros((m, p)), np.zeros((p, p)))


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _check_data(X) -> np.ndarray:
    return check_matrix(X, "training matrix")


def init_dictionary(X, p: int, seed: int = 0) -> np.ndarray:
    """``p`` distinct random training columns scaled to unit norm.

    Zero columns are replaced by random unit vectors.
    """
    X = _check_data(X)
    m, n = X.shape
    if p < 1:
        raise SparseKitError("p must be >= 1")
    if p > n:
        raise SparseKitError(f"cannot pick {p} distinct columns from {n} signals")
    rng = np.random.default_rng(seed)
    D = X[:, rng.choice(n, size=p, replace=False)].copy()
    norms = np.linalg.norm(D, axis=0)
    dead = norms <= ZERO_USAGE
    if dead.any():
        D[:, dead] = rng.standard_normal((m, int(dead.sum())))
        norms[dead] = np.linalg.norm(D[:, dead], axis=0)
    return D / norms


def _start(X, p, seed, D0):
    if D0 is None:
        return init_dictionary(X, p, seed)
    D = project_unit_columns(D0)
    if D.shape != (X.shape[0], p):
        raise SparseKitError(f"initial dictionary has shape {D.shape}, expected {(X.shape[0], p)}")
    return D


def objective_l1(X, D, A, lam: float) -> float:
    """``(1/n) sum 0.5 |x_i - D a_i|^2 + lam |a_i|_1``."""
    R = X - D @ A
    return float((0.5 * np.sum(R * R) + lam * np.abs(A).sum()) / X.shape[1])


def objective_l0(X, D, A) -> float:
    """``(1/n) sum 0.5 |x_i - D a_i|^2``."""
    R = X - D @ A
    return float(0.5 * np.sum(R * R) / X.shape[1])


def surrogate_objective(D, B, C) -> float:
    """``0.5 tr(D^T D C) - tr(D^T B)``."""
    return float(0.5 * np.sum((D.T @ D) * C) - np.sum(D * B))


def replace_atom(D, j, X, R, trace: LearnTrace | None, taken=None, reason="unused") -> int:
    """Replace atom ``j`` by the (normalized) signal with the largest residual.

    ``R`` holds the current residuals ``X - D A`` (columns); ``taken`` is a
    set of signal indices already used for replacement in this sweep.
    Returns the chosen signal index.
    """
    energy = np.einsum("ij,ij->j", R, R)
    if taken:
        energy[list(taken)] = -1.0
    i = int(np.argmax(energy))
    v = X[:, i]
    nrm = np.linalg.norm(v)
    if nrm > ZERO_USAGE:
        D[:, j] = v / nrm
        if taken is not None:
            taken.add(i)
        if trace is not None:
            trace.events.append(f"replace atom {j} by signal {i} ({reason})")
    return i


# ---------------------------------------------------------------------------
# Dictionary update with block coordinate descent
# ---------------------------------------------------------------------------


def dict_update_bcd(D, B, C, passes: int = 1, trace: list | None = None) -> np.ndarray:
    """Block coordinate descent on ``0.5 tr(D^T D C) - tr(D^T B)`` over the unit ball.

    Column ``j`` becomes ``Proj(d_j + (b_j - D c_j) / C_jj)``.  Columns with
    ``C_jj ~ 0`` are left unchanged (the caller decides on replacement).
    ``trace`` receives the objective after every column update.
    """
    D = np.array(D, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    p = D.shape[1]
    if B.shape != D.shape or C.shape != (p, p):
        raise SparseKitError("sufficient statistics do not match the dictionary")
    scale = max(float(np.max(np.diag(C))), 0.0)
    if trace is not None:
        trace.append(surrogate_objective(D, B, C))
    for _ in range(passes):
        for j in range(p):
            cjj = C[j, j]
            if cjj <= ZERO_USAGE * max(scale, 1e-300):
                continue
            u = (B[:, j] - D @ C[:, j]) / cjj + D[:, j]
            nrm = np.linalg.norm(u)
            D[:, j] = u / max(nrm, 1.0)
            if trace is not None:
                trace.append(surrogate_objective(D, B, C))
    return D


# ---------------------------------------------------------------------------
# MOD
# ---------------------------------------------------------------------------


def mod_least_squares(X, A) -> tuple[np.ndarray, np.ndarray]:
    """Unprojected least-squares dictionary ``X A^T (A A^T)^{-1}`` on used atoms.

    Returns ``(D, used)`` where ``used`` flags atoms with a nonzero code
    row; the columns of unused atoms are zero.  A tiny ridge
    ``1e-10 tr(G)/p`` is added when the Gram of the used rows is singular.
    """
    X = np.asarray(X, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    used = np.any(A != 0, axis=1)
    D = np.zeros((X.shape[0], A.shape[0]))
    if not used.any():
        return D, used
    Au = A[used]
    G = Au @ Au.T
    rhs = X @ Au.T
    try:
        c, low = _cho(G)
        from scipy.linalg import cho_solve

        D[:, used] = cho_solve((c, low), rhs.T, check_finite=False).T
    except np.linalg.LinAlgError:
        G = G + MOD_RIDGE * np.trace(G) / G.shape[0] * np.eye(G.shape[0])
        D[:, used] = np.linalg.solve(G, rhs.T).T
    return D, used


def _cho(G):
    from scipy.linalg import cho_factor

    c, low = cho_factor(G, lower=True, check_finite=False)
    d = np.abs(np.diag(c))
    if d.min() <= 1e-7 * d.max():
        raise np.linalg.LinAlgError("ill-conditioned Gram")
    return c, low


def dl_mod(X, p: int, k: int, n_iter: int = 20, seed: int = 0, D0=None,
           n_threads: int = 1):
    """Method of optimal directions with an OMP sparse coding step.

    Returns ``(D, A, trace)``; ``trace.objectives`` holds the l0 objective
    after each coding step.
    """
    X = _check_data(X)
    D = _start(X, p, seed, D0)
    trace = LearnTrace()
    A = np.zeros((p, X.shape[1]))
    for _ in range(n_iter):
        A = omp_batch(X, D, MaxNonzeros(k), n_threads=n_threads)
        trace.objectives.append(objective_l0(X, D, A))
        D_ls, used = mod_least_squares(X, A)
        D_new = project_unit_columns(D_ls)
        R = X - D_new @ A
        taken: set = set()
        for j in np.flatnonzero(~used):
            replace_atom(D_new, int(j), X, R, trace, taken)
        D = D_new
    A = omp_batch(X, D, MaxNonzeros(k), n_threads=n_threads)
    trace.objectives.append(objective_l0(X, D, A))
    return D, A, trace


# ---------------------------------------------------------------------------
# Alternate minimization (l1)
# ---------------------------------------------------------------------------


def _l1_stop(lam, mu, eps):
    given = [v is not None for v in (lam, mu, eps)]
    if sum(given) != 1:
        raise SparseKitError("give exactly one of lam, mu or eps")
    if lam is not None:
        return AtLambda(lam)
    if mu is not None:
        return AtNorm(mu)
    return AtResidual(eps)


def _replace_unused_l1(D, X, A, trace):
    usage = np.einsum("ij,ij->i", A, A)
    unused = np.flatnonzero(usage <= ZERO_USAGE * max(float(usage.max()), 1e-300))
    if unused.size:
        R = X - D @ A
        taken: set = set()
        for j in unused:
            replace_atom(D, int(j), X, R, trace, taken)
    return D


def dl_alt_l1(X, p: int, lam: float | None = None, mu: float | None = None,
              eps: float | None = None, n_iter: int = 20, seed: int = 0, D0=None,
              bcd_passes: int = 10, n_threads: int = 1, replace: bool = True):
    """Alternate minimization for l1 dictionary learning.

    Codes come from the homotopy solver stopped at ``lam`` (penalized),
    ``mu`` (l1-ball) or ``eps`` (residual energy per signal); the
    dictionary is then refined by :func:`dict_update_bcd` on
    ``B = X A^T``, ``C = A A^T``.  In penalized mode ``trace.objectives``
    holds the objective after every half-step.
    """
    X = _check_data(X)
    stop = _l1_stop(lam, mu, eps)
    D = _start(X, p, seed, D0)
    trace = LearnTrace()

    def record(A):
        if lam is not None:
            trace.objectives.append(objective_l1(X, D, A, lam))
        else:
            trace.objectives.append(objective_l0(X, D, A))

    A = None
    for _ in range(n_iter):
        A = lasso_batch(X, D, stop, n_threads=n_threads, fallback_ridge=FALLBACK_RIDGE)
        record(A)
        D = dict_update_bcd(D, X @ A.T, A @ A.T, bcd_passes)
        if replace:
            D = _replace_unused_l1(D, X, A, trace)
        record(A)
    A = lasso_batch(X, D, stop, n_threads=n_threads, fallback_ridge=FALLBACK_RIDGE)
    record(A)
    return D, A, trace


# ---------------------------------------------------------------------------
# Block coordinate descent on codes and dictionary
# ---------------------------------------------------------------------------


def code_rows_bcd(X, D, A, lam: float, R=None):
    """One pass of row-wise soft-thresholding updates of the code matrix.

    Row ``j`` becomes ``S_{lam/|d_j|^2}(a_j + d_j^T R / |d_j|^2)`` with
    ``R = X - D A`` kept current.  Returns ``(A, R, skipped_atoms)``.
    """
    A = np.array(A, dtype=np.float64)
    R = X - D @ A if R is None else R
    skipped = []
    for j in range(D.shape[1]):
        d = D[:, j]
        dn = float(d @ d)
        if dn <= ZERO_USAGE:
            # a zero atom cannot explain anything; its row only costs penalty
            A[j] = 0.0
            skipped.append(j)
            continue
        new = soft_threshold(A[j] + (d @ R) / dn, lam / dn)
        delta = new - A[j]
        if np.any(delta):
            R -= np.outer(d, delta)
            A[j] = new
    return A, R, skipped


def dl_bcd(X, p: int, lam: float, n_iter: int = 20, seed: int = 0, D0=None,
           code_passes: int = 1, bcd_passes: int = 10):
    """Block coordinate descent alternating code rows and dictionary columns.

    ``trace.objectives`` holds the penalized objective after every
    half-step.
    """
    X = _check_data(X)
    if not lam >= 0:
        raise SparseKitError("lam must be >= 0")
    D = _start(X, p, seed, D0)
    A = np.zeros((p, X.shape[1]))
    trace = LearnTrace()
    trace.objectives.append(objective_l1(X, D, A, lam))
    R = X.copy()
    for _ in range(n_iter):
        for _ in range(code_passes):
            A, R, skipped = code_rows_bcd(X, D, A, lam, R)
        trace.objectives.append(objective_l1(X, D, A, lam))
        D = dict_update_bcd(D, X @ A.T, A @ A.T, bcd_passes)
        taken: set = set()
        R = X - D @ A
        usage = np.einsum("ij,ij->i", A, A)
        for j in sorted(set(skipped) | set(np.flatnonzero(usage == 0).tolist())):
            replace_atom(D, int(j), X, R, trace, taken)
        trace.objectives.append(objective_l1(X, D, A, lam))
    return D, A, trace


# ---------------------------------------------------------------------------
# K-SVD
# ---------------------------------------------------------------------------


def rank_one_power(E, n_iter: int = 30, tol: float = 1e-10, init=None):
    """Leading singular triplet ``(u, s, v)`` of ``E`` by power iteration.

    Iterates ``u <- E E^T u / |E E^T u|`` from ``init`` (default: the
    column of ``E`` with the largest norm) until ``u`` moves by less than
    ``tol`` or ``n_iter`` iterations.  ``v = E^T u / s``.
    """
    E = np.asarray(E, dtype=np.float64)
    if init is None:
        init = E[:, int(np.argmax(np.einsum("ij,ij->j", E, E)))]
    u = np.array(init, dtype=np.float64)
    nrm = np.linalg.norm(u)
    if nrm == 0:
        u = np.zeros(E.shape[0])
        u[0] = 1.0
    else:
        u /= nrm
    for _ in range(n_iter):
        w = E @ (E.T @ u)
        wn = np.linalg.norm(w)
        if wn == 0:
            break
        w /= wn
        done = np.linalg.norm(w - u) < tol
        u = w
        if done:
            break
    g = E.T @ u
    s = float(np.linalg.norm(g))
    v = g / s if s > 0 else g
    return u, s, v


def _ksvd_stop(k, eps):
    if k is None and eps is None:
        raise SparseKitError("give k and/or eps")
    if eps is None:
        return MaxNonzeros(k)
    if k is None:
        return ResidualSq(eps)
    return Both(k, eps)


def ksvd_sweep(X, D, A, trace: LearnTrace | None = None, power_iters: int = 30,
               power_tol: float = 1e-10):
    """One K-SVD dictionary sweep; updates ``D`` and ``A`` in place.

    For each atom the residual restricted to the signals using it is refit
    by a rank-one approximation.  The residual norm after every atom update
    is appended to ``trace.atom_residuals``.
    """
    E = X - D @ A
    taken: set = set()
    for j in range(D.shape[1]):
        omega = np.flatnonzero(A[j])
        if omega.size == 0:
            replace_atom(D, j, X, E, trace, taken, reason="empty support")
        else:
            Ej = E[:, omega] + np.outer(D[:, j], A[j, omega])
            u, s, v = rank_one_power(Ej, power_iters, power_tol, init=D[:, j])
            D[:, j] = u
            A[j, omega] = s * v
            E[:, omega] = Ej - np.outer(u, A[j, omega])
        if trace is not None:
            trace.atom_residuals.append(float(np.linalg.norm(E)))
    return D, A


def dl_ksvd(X, p: int, k: int | None = None, eps: float | None = None, n_iter: int = 10,
            seed: int = 0, D0=None, power_iters: int = 30, power_tol: float = 1e-10,
            n_threads: int = 1):
    """K-SVD with OMP coding (``k`` nonzeros and/or residual energy ``eps``).

    ``trace.objectives`` holds the l0 objective after each coding step and
    after each dictionary sweep.
    """
    X = _check_data(X)
    D = _start(X, p, seed, D0)
    stop = _ksvd_stop(k, eps)
    trace = LearnTrace()
    A = np.zeros((p, X.shape[1]))
    for _ in range(n_iter):
        A = omp_batch(X, D, stop, cache=GramCache(D), n_threads=n_threads)
        trace.objectives.append(objective_l0(X, D, A))
        D, A = ksvd_sweep(X, D, A, trace, power_iters, power_tol)
        trace.objectives.append(objective_l0(X, D, A))
    return D, A, trace


# ---------------------------------------------------------------------------
# Stochastic and online learning
# ---------------------------------------------------------------------------


def dl_sgd(X, p: int, lam: float, n_steps: int = 1000, eta: float = 1.0, t0: float = 10.0,
           gamma: float = 1.0, seed: int = 0, D0=None, eval_every: int = 0):
    """Projected stochastic gradient descent on the penalized objective.

    At step ``t`` a random signal is coded by homotopy and the dictionary
    moves by ``-eta_t (D a - x) a^T`` with ``eta_t = eta / (t + t0)^gamma``
    before projection onto the unit ball.  With ``eval_every > 0`` the full
    objective is recorded every that many steps.  Returns ``(D, trace)``.
    """
    X = _check_data(X)
    if not eta > 0:
        raise SparseKitError("eta must be > 0")
    D = _start(X, p, seed, D0)
    rng = np.random.default_rng(seed + 1)
    trace = LearnTrace()
    n = X.shape[1]
    for t in range(1, n_steps + 1):
        x = X[:, rng.integers(n)]
        a = homotopy_code(x, D, AtLambda(lam), fallback_ridge=FALLBACK_RIDGE)
        if np.any(a):
            step = eta / (t + t0) ** gamma
            D = project_unit_columns(D - step * np.outer(D @ a - x, a))
        if eval_every and t % eval_every == 0:
            A = lasso_batch(X, D, AtLambda(lam))
            trace.objectives.append(objective_l1(X, D, A, lam))
    return D, trace


def online_accumulate(stats: SufficientStats, x, a, lam: float = 0.0,
                      rho: float | None = None) -> SufficientStats:
    """Add one coded signal to the sufficient statistics (in place).

    With ``rho`` set, the past is first rescaled by
    ``gamma_t = (1 - 1/t)^rho``.
    """
    stats.t += 1
    if rho is not None and stats.t > 1:
        g = (1.0 - 1.0 / stats.t) ** rho
        stats.B *= g
        stats.C *= g
        stats.x_energy *= g
        stats.code_l1 *= g
    stats.B += np.outer(x, a)
    stats.C += np.outer(a, a)
    stats.x_energy += float(x @ x)
    stats.code_l1 += lam * float(np.abs(a).sum())
    return stats


def online_surrogate(D, stats: SufficientStats) -> float:
    """Online surrogate ``(1/t) sum 0.5 |x - D a|^2 + lam |a|_1`` via ``B``, ``C``."""
    t = max(stats.t, 1)
    return (surrogate_objective(D, stats.B, stats.C) + 0.5 * stats.x_energy + stats.code_l1) / t


def dl_online(X, p: int, lam: float, n_epochs: int = 1, batch: int = 1, rho: float | None = None,
              seed: int = 0, D0=None, bcd_passes: int = 1, n_threads: int = 1,
              n_draws: int | None = None):
    """Online dictionary learning with sufficient statistics.

    Signals are visited in a fresh random order every epoch.  Each
    mini-batch is coded by homotopy with the current dictionary, added to
    ``B`` and ``C`` one signal at a time, and followed by a warm-started
    :func:`dict_update_bcd`.  ``trace.objectives`` holds the online
    surrogate after every dictionary update.  Returns ``(D, stats, trace)``.
    """
    X = _check_data(X)
    if batch < 1:
        raise SparseKitError("batch must be >= 1")
    m, n = X.shape
    D = _start(X, p, seed, D0)
    rng = np.random.default_rng(seed + 1)
    stats = SufficientStats.zeros(m, p)
    trace = LearnTrace()
    total = n_epochs * n if n_draws is None else int(n_draws)
    done = 0
    while done < total:
        order = rng.permutation(n)
        for s in range(0, n, batch):
            idx = order[s: s + batch][: total - done]
            if idx.size == 0:
                break
            A = lasso_batch(X[:, idx], D, AtLambda(lam), n_threads=n_threads,
                            fallback_ridge=FALLBACK_RIDGE)
            for c, i in enumerate(idx):
                online_accumulate(stats, X[:, i], A[:, c], lam, rho)
            D = dict_update_bcd(D, stats.B, stats.C, bcd_passes)
            trace.objectives.append(online_surrogate(D, stats))
            done += idx.size
            if done >= total:
                break
    return D, stats, trace


# ---------------------------------------------------------------------------
# K-means
# ---------------------------------------------------------------------------


def kmeans(X, p: int, n_iter: int = 100, seed: int = 0, trace: list | None = None):
    """Lloyd's algorithm; returns ``(centroids, labels)``.

    Assignment ties go to the lowest centroid index.  An empty cluster is
    reseeded with the point farthest from its centroid.  ``trace`` receives
    the objective ``sum |x_i - c_{l_i}|^2`` after each assignment and each
    update.
    """
    X = _check_data(X)
    m, n = X.shape
    if p > n:
        raise SparseKitError(f"p={p} exceeds the number of points n={n}")
    rng = np.random.default_rng(seed)
    Cn = X[:, rng.choice(n, size=p, replace=False)].copy()
    labels = np.full(n, -1)
    xx = np.einsum("ij,ij->j", X, X)

    def assign(Cn):
        d2 = xx[None, :] - 2.0 * Cn.T @ X + np.einsum("ij,ij->j", Cn, Cn)[:, None]
        return np.argmin(d2, axis=0)

    def objective(Cn, labels):
        R = X - Cn[:, labels]
        return float(np.sum(R * R))

    for _ in range(n_iter):
        new = assign(Cn)
        changed = not np.array_equal(new, labels)
        labels = new
        if trace is not None:
            trace.append(objective(Cn, labels))
        counts = np.bincount(labels, minlength=p)
        sums = np.zeros((m, p))
        np.add.at(sums.T, labels, X.T)
        nonempty = counts > 0
        Cn[:, nonempty] = sums[:, nonempty] / counts[nonempty]
        for j in np.flatnonzero(~nonempty):
            R = X - Cn[:, labels]
            res = np.einsum("ij,ij->j", R, R)
            i = int(np.argmax(res))
            Cn[:, j] = X[:, i]
            labels[i] = j
            changed = True
        if trace is not None:
            trace.append(objective(Cn, labels))
        if not changed:
            break
    return Cn, labels
