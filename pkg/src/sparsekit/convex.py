"""l1 solvers: coordinate descent, proximal gradient (ISTA/FISTA) and the
homotopy (LARS-Lasso) path algorithm.

All penalized solvers minimize

    0.5 |x - D a|^2 + lam |a|_1 (+ 0.5 gamma |a|^2 for elastic-net)

and stop on the optimality (KKT) violation, so their outputs can be
compared directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DegeneratePathError,
    ElasticNet,
    L1,
    NumericalError,
    SparseCode,
    SparseKitError,
    WeightedL1,
    as_code,
    check_dictionary,
    check_signal,
    max_eigenvalue,
    penalty_params,
    project_l1_ball,
    soft_threshold,
)
from . import _kernels
from .greedy import SCHUR_FLOOR

GRAM_MAX_ATOMS = 4096
TIE_TOL = 1e-12
# relative safety margin on the power-method estimate of the Lipschitz constant
LIPSCHITZ_MARGIN = 1e-4


# ---------------------------------------------------------------------------
# Problem description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Penalized:
    lam: float


@dataclass(frozen=True)
class ResidualConstrained:
    eps: float


@dataclass(frozen=True)
class NormConstrained:
    mu: float


@dataclass(frozen=True)
class LassoProblem:
    x: np.ndarray
    D: np.ndarray
    form: object

    def __post_init__(self):
        val = getattr(self.form, "lam", getattr(self.form, "eps", getattr(self.form, "mu", None)))
        if val is None:
            raise SparseKitError(f"unknown Lasso form {self.form!r}")
        if val < 0:
            raise SparseKitError("Lasso parameter must be >= 0")


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 10000
    tol: float = 1e-6
    accelerate: bool = False

    def __post_init__(self):
        if self.max_iter < 1:
            raise SparseKitError("max_iter must be >= 1")
        if not self.tol > 0:
            raise SparseKitError("tol must be > 0")


def _kkt_violation(grad, alpha, lam) -> float:
    """Max KKT violation given ``grad`` of the smooth part (incl. ridge)."""
    active = alpha != 0
    v = np.where(active, np.abs(grad + lam * np.sign(alpha)),
                 np.maximum(np.abs(grad) - lam, 0.0))
    return float(v.max()) if v.size else 0.0


# ---------------------------------------------------------------------------
# Coordinate descent
# ---------------------------------------------------------------------------


def cd_lasso(x, D, lam, penalty=None, opts: SolverOptions | None = None, alpha0=None,
             order: str = "cyclic", seed: int = 0, trace: list | None = None) -> SparseCode:
    """Coordinate descent for the Lasso, elastic-net or weighted Lasso.

    Coordinate ``j`` is set to
    ``S_{lam_j}(z_j + |d_j|^2 a_j) / (|d_j|^2 + gamma)`` where
    ``z = D^T (x - D a)`` is kept up to date, from the Gram matrix when
    ``p <= 4096`` and from the residual otherwise.  The KKT violation is
    checked after every sweep.

    Parameters
    ----------
    lam : float
        Regularization; multiplied by the weights of a
        :class:`WeightedL1` penalty.
    penalty : L1, ElasticNet or WeightedL1, optional
    order : {"cyclic", "random", "greedy"}
        Sweep order.  ``"greedy"`` picks, ``p`` times per sweep, the
        coordinate with the largest pending change.
    trace : list, optional
        Receives the objective after every sweep (and at the start).
    """
    opts = opts or SolverOptions()
    D = check_dictionary(D)
    m, p = D.shape
    x = check_signal(x, m)
    lam_v, gamma = penalty_params(penalty, lam, p)
    dn = np.einsum("ij,ij->j", D, D)
    if np.any(dn <= 0):
        raise SparseKitError("coordinate descent needs nonzero atoms")
    if order not in ("cyclic", "random", "greedy"):
        raise SparseKitError(f"unknown coordinate order {order!r}")
    alpha = as_code(alpha0, p)
    curv = dn + gamma
    use_gram = p <= GRAM_MAX_ATOMS
    if use_gram:
        Q = D.T @ D
        z = D.T @ x - Q @ alpha
    else:
        r = x - D @ alpha
    rng = np.random.default_rng(seed)

    def objective():
        res = x - D @ alpha
        return float(0.5 * res @ res + lam_v @ np.abs(alpha) + 0.5 * gamma * alpha @ alpha)

    if trace is not None:
        trace.append(objective())
    status = "max_iter"
    cyclic = np.arange(p)
    for _ in range(opts.max_iter):
        if order == "random":
            seq = rng.permutation(p)
        else:
            seq = cyclic
        if use_gram and order != "greedy":
            _kernels.cd_sweep_gram(Q, z, alpha, dn, curv, lam_v, seq)
        else:
            for step in range(p):
                if order == "greedy":
                    zz = z if use_gram else D.T @ r
                    prop = soft_threshold(zz + dn * alpha, lam_v) / curv
                    j = int(np.argmax(np.abs(prop - alpha)))
                else:
                    j = int(seq[step])
                old = alpha[j]
                zj = z[j] if use_gram else float(D[:, j] @ r)
                u = zj + dn[j] * old
                new = np.sign(u) * max(abs(u) - lam_v[j], 0.0) / curv[j]
                if new != old:
                    if use_gram:
                        z -= Q[:, j] * (new - old)
                    else:
                        r -= D[:, j] * (new - old)
                    alpha[j] = new
        if trace is not None:
            trace.append(objective())
        zz = z if use_gram else D.T @ r
        if _kkt_violation(-zz + gamma * alpha, alpha, lam_v) <= opts.tol:
            status = "ok"
            break
    return SparseCode.from_dense(alpha, status)


# ---------------------------------------------------------------------------
# Proximal gradient
# ---------------------------------------------------------------------------


def lipschitz_step(D) -> float:
    """``1 / lambda_max(D^T D)`` from the power method, with a small safety margin."""
    L = max_eigenvalue(D.T @ D)
    return 1.0 / max(L * (1.0 + LIPSCHITZ_MARGIN), np.finfo(float).tiny)


def prox_grad(x, D, lam: float | None = None, mu: float | None = None,
              opts: SolverOptions | None = None, alpha0=None, step: float | None = None,
              trace: list | None = None) -> SparseCode:
    """ISTA / FISTA for the penalized (``lam``) or l1-ball constrained (``mu``) problem.

    Each iteration takes a gradient step on ``0.5 |x - D a|^2`` followed by
    soft-thresholding at ``step * lam`` or projection onto the l1-ball of
    radius ``mu``.  ``opts.accelerate`` switches on FISTA momentum.  The
    penalized mode stops on the KKT violation; the constrained mode stops
    on the norm of the gradient mapping.
    """
    opts = opts or SolverOptions()
    D = check_dictionary(D)
    m, p = D.shape
    x = check_signal(x, m)
    if (lam is None) == (mu is None):
        raise SparseKitError("give exactly one of lam or mu")
    if lam is not None and lam < 0:
        raise SparseKitError("lam must be >= 0")
    if mu is not None and not mu > 0:
        raise SparseKitError("l1-ball radius must be > 0")
    Q = D.T @ D
    q = D.T @ x
    x2 = float(x @ x)
    eta = lipschitz_step(D) if step is None else float(step)
    if not eta > 0:
        raise SparseKitError("step size must be > 0")
    if lam is not None:
        prox = lambda v: soft_threshold(v, eta * lam)  # noqa: E731
    else:
        prox = lambda v: project_l1_ball(v, mu)  # noqa: E731
    alpha = as_code(alpha0, p)
    if mu is not None and np.abs(alpha).sum() > mu:
        alpha = prox(alpha)

    def objective(a):
        val = 0.5 * (x2 - 2 * q @ a + a @ Q @ a)
        return float(val + (lam * np.abs(a).sum() if lam is not None else 0.0))

    if lam is not None:
        objs = np.empty(opts.max_iter + 1 if trace is not None else 0)
        alpha, n_it, ok = _kernels.ista_penalized(Q, q, x2, eta, float(lam), alpha, opts.max_iter,
                                                  opts.tol, opts.accelerate, objs)
        if trace is not None:
            trace.extend(objs[: n_it + 1].tolist())
        return SparseCode.from_dense(alpha, "ok" if ok else "max_iter")
    if trace is not None:
        trace.append(objective(alpha))
    y = alpha.copy()
    t = 1.0
    status = "max_iter"
    for _ in range(opts.max_iter):
        new = prox(y - eta * (Q @ y - q))
        if opts.accelerate:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = new + ((t - 1.0) / t_new) * (new - alpha)
            t = t_new
        else:
            y = new
        alpha = new
        if trace is not None:
            trace.append(objective(alpha))
        grad = Q @ alpha - q
        if lam is not None:
            viol = _kkt_violation(grad, alpha, lam)
        else:
            viol = float(np.linalg.norm(alpha - prox(alpha - eta * grad)) / eta)
        if viol <= opts.tol:
            status = "ok"
            break
    return SparseCode.from_dense(alpha, status)


# ---------------------------------------------------------------------------
# Homotopy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AtLambda:
    lam: float


@dataclass(frozen=True)
class AtResidual:
    eps: float


@dataclass(frozen=True)
class AtNorm:
    mu: float


@dataclass(frozen=True)
class FullPath:
    pass


@dataclass
class RegPath:
    """Piecewise-linear Lasso path.

    ``lambdas`` is strictly decreasing and ``codes[:, i]`` is the solution
    at ``lambdas[i]``.  When the path was stopped by a rule, the last entry
    is the stopping point rather than a kink.
    """

    lambdas: np.ndarray
    codes: np.ndarray
    stopped: bool = False

    def __len__(self):
        return self.lambdas.size

    @property
    def kinks(self):
        return [(float(l), SparseCode.from_dense(self.codes[:, i]))
                for i, l in enumerate(self.lambdas)]

    @property
    def final(self) -> SparseCode:
        return SparseCode.from_dense(self.codes[:, -1])

    def interpolate(self, lam: float) -> np.ndarray:
        """Solution at ``lam`` by linear interpolation between recorded points."""
        lams = self.lambdas
        if lam >= lams[0]:
            return self.codes[:, 0].copy()
        if lam < lams[-1]:
            raise SparseKitError(f"lambda {lam} below the end of the path ({lams[-1]})")
        i = int(np.searchsorted(-lams, -lam, side="right")) - 1
        if i >= lams.size - 1:
            return self.codes[:, -1].copy()
        w = (lams[i] - lam) / (lams[i] - lams[i + 1])
        return (1 - w) * self.codes[:, i] + w * self.codes[:, i + 1]


_STOP_KIND = {FullPath: _kernels.STOP_FULL, AtLambda: _kernels.STOP_LAMBDA,
              AtResidual: _kernels.STOP_RESIDUAL, AtNorm: _kernels.STOP_NORM}


def _stop_code(stop):
    kind = _STOP_KIND.get(type(stop))
    if kind is None:
        raise SparseKitError(f"unknown homotopy stop {stop!r}")
    val = float(getattr(stop, "lam", getattr(stop, "eps", getattr(stop, "mu", 0.0))))
    if val < 0:
        raise SparseKitError("stopping value must be >= 0")
    return kind, val


def homotopy(x, D, stop=None, ridge: float = 0.0, max_kinks: int | None = None,
             gram=None, record: bool = True) -> RegPath:
    """Homotopy (LARS-Lasso) algorithm following the regularization path.

    Starts at ``lam = |D^T x|_inf`` with a zero code and decreases ``lam``
    from kink to kink.  On each segment the active coefficients move along
    ``a1 = G^{-1} sign`` with ``G = D_G^T D_G (+ ridge I)`` while inactive
    correlations move along ``D^T D_G a1``; the next kink is the first atom
    entering (its correlation reaches ``+-lam``) or leaving (its coefficient
    reaches zero).  Active coefficients are recomputed from the normal
    equations at every kink, and the Cholesky factor of ``G`` is updated by
    Schur complements and Givens downdates.

    Parameters
    ----------
    stop : AtLambda, AtResidual, AtNorm or FullPath
        Where to stop.  The code at the stopping point is appended to the
        path (see :attr:`RegPath.final`); it is interpolated exactly on the
        current segment.
    ridge : float
        Adds ``0.5 ridge |a|^2`` to the objective (elastic-net).  With
        ``ridge > 0`` simultaneous events are processed together instead of
        raising :class:`DegeneratePathError`.
    gram : ndarray, optional
        Precomputed ``D^T D`` (shared across signals in batch encoding).
    record : bool
        Keep every kink.  When false only the start and end points are
        returned, which is faster for plain encoding.

    Raises
    ------
    DegeneratePathError
        Two events closer than ``1e-12 lam_0`` or an atom dependent on the
        active set (only when ``ridge == 0``).
    """
    stop = FullPath() if stop is None else stop
    kind, val = _stop_code(stop)
    D = check_dictionary(D) if gram is None else D
    m, p = D.shape
    x = check_signal(x, m)
    if ridge < 0:
        raise SparseKitError("ridge must be >= 0")
    max_kinks = 50 * min(m, p) + 10 if max_kinks is None else int(max_kinks)
    Q = D.T @ D if gram is None else gram
    q = D.T @ x
    cap = p + 1 if ridge > 0 else min(m, p) + 1
    status, lams, codes, _, bad, stopped = _kernels.homotopy_kernel(
        Q, q, float(x @ x), kind, val, float(ridge), max_kinks, record, cap,
        TIE_TOL, SCHUR_FLOOR, m)
    if status == _kernels.HOM_TIE:
        raise DegeneratePathError("simultaneous path events", bad)
    if status == _kernels.HOM_RANK:
        raise DegeneratePathError("atom dependent on the active set", bad)
    if status == _kernels.HOM_MAXKINKS:
        raise NumericalError(f"homotopy exceeded {max_kinks} kinks")
    return RegPath(np.array(lams), np.column_stack(codes), bool(stopped))


def homotopy_code(x, D, stop, ridge: float = 0.0, fallback_ridge: float | None = None,
                  gram=None) -> np.ndarray:
    """Dense code at the stopping point of :func:`homotopy`.

    With ``fallback_ridge`` set, a degenerate path is retried with that
    ridge instead of raising.
    """
    try:
        return homotopy(x, D, stop, ridge=ridge, gram=gram, record=False).codes[:, -1]
    except DegeneratePathError:
        if fallback_ridge is None or ridge > 0:
            raise
        return homotopy(x, D, stop, ridge=fallback_ridge, gram=gram, record=False).codes[:, -1]


def lasso_batch(X, D, stop, n_threads: int = 1, fallback_ridge: float | None = 1e-10) -> np.ndarray:
    """Homotopy codes for every column of ``X`` with a shared Gram matrix.

    ``stop`` is one stopping rule for all columns or a callable mapping the
    column index to a rule.  Returns the ``(p, n)`` code matrix.
    """
    D = check_dictionary(D)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != D.shape[0]:
        raise SparseKitError("signal matrix does not match the dictionary")
    Q = D.T @ D
    Q = 0.5 * (Q + Q.T)
    n = X.shape[1]
    A = np.zeros((D.shape[1], n))
    rule = stop if callable(stop) else (lambda i: stop)

    def work(i):
        A[:, i] = homotopy_code(X[:, i], D, rule(i), fallback_ridge=fallback_ridge, gram=Q)

    if n_threads > 1 and n > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(n_threads) as ex:
            list(ex.map(work, range(n)))
    else:
        for i in range(n):
            work(i)
    return A


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


METHODS = ("cd", "ista", "fista", "homotopy")


def solve(prob: LassoProblem, method: str = "homotopy", opts: SolverOptions | None = None,
          penalty=None) -> SparseCode:
    """Solve a Lasso problem with the chosen method.

    Supported pairings: penalized form with any method; l1-ball constrained
    form with ISTA/FISTA/homotopy; residual-constrained form with homotopy
    only (any method returns zero when the constraint holds at zero).
    """
    method = method.lower()
    if method not in METHODS:
        raise SparseKitError(f"unknown method {method!r}")
    form = prob.form
    opts = opts or SolverOptions()
    if isinstance(form, ResidualConstrained):
        x = np.asarray(prob.x, dtype=np.float64)
        if float(x @ x) <= form.eps:
            return SparseCode.from_dense(np.zeros(np.shape(prob.D)[1]))
        if method != "homotopy":
            raise SparseKitError("residual-constrained form is solved by homotopy only")
        return homotopy(prob.x, prob.D, AtResidual(form.eps)).final
    if isinstance(form, NormConstrained):
        if method == "cd":
            raise SparseKitError("coordinate descent does not handle the l1-ball constraint")
        if method == "homotopy":
            return homotopy(prob.x, prob.D, AtNorm(form.mu)).final
        o = SolverOptions(opts.max_iter, opts.tol, method == "fista")
        return prox_grad(prob.x, prob.D, mu=form.mu, opts=o)
    if isinstance(form, Penalized):
        if method == "cd":
            return cd_lasso(prob.x, prob.D, form.lam, penalty, opts)
        if penalty is not None and not isinstance(penalty, L1):
            if method == "homotopy" and isinstance(penalty, ElasticNet):
                return homotopy(prob.x, prob.D, AtLambda(form.lam), ridge=penalty.gamma).final
            raise SparseKitError(f"{method} supports the plain l1 penalty only")
        if method == "homotopy":
            return homotopy(prob.x, prob.D, AtLambda(form.lam)).final
        o = SolverOptions(opts.max_iter, opts.tol, method == "fista")
        return prox_grad(prob.x, prob.D, lam=form.lam, opts=o)
    raise SparseKitError(f"unknown Lasso form {form!r}")


__all__ = [
    "AtLambda", "AtNorm", "AtResidual", "FullPath", "LassoProblem", "NormConstrained",
    "Penalized", "RegPath", "ResidualConstrained", "SolverOptions", "WeightedL1",
    "cd_lasso", "homotopy", "homotopy_code", "lasso_batch", "lipschitz_step", "prox_grad", "solve",
]
