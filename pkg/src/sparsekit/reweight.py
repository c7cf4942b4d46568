"""Reweighted schemes: reweighted-l1 for the log penalty and iteratively
reweighted least squares (IRLS) for l1, lq and group norms.

IRLS uses the variational form of each norm: for fixed weights ``eta`` the
code minimizes ``0.5 |x - D a|^2 + (lam / 2) sum a_j^2 / eta_j``, solved in
the stabilized form ``a = H (H Q H + lam I)^{-1} H q`` with
``H = diag(sqrt(eta))`` so that tiny weights do not blow up the system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .convex import SolverOptions, cd_lasso
from .core import (
    GroupStructure,
    NumericalError,
    SparseCode,
    SparseKitError,
    WeightedL1,
    as_code,
    check_dictionary,
    check_signal,
)

EPS_FLOOR = 1e-10


@dataclass(frozen=True)
class ReweightConfig:
    """Smoothing ``eps``, outer iteration count and inner solver options.

    ``anneal`` halves ``eps`` after every outer iteration (floor 1e-10).
    Iterations stop early once the iterate moves by less than
    ``rel_change * |a|``.
    """

    eps: float = 1e-3
    outer_iters: int = 20
    inner: SolverOptions = field(default_factory=lambda: SolverOptions(tol=1e-9))
    anneal: bool = False
    rel_change: float = 1e-9

    def __post_init__(self):
        if not self.eps > 0:
            raise SparseKitError("eps must be > 0")
        if self.outer_iters < 1:
            raise SparseKitError("outer_iters must be >= 1")


def _next_eps(cfg: ReweightConfig, eps: float) -> float:
    return max(0.5 * eps, EPS_FLOOR) if cfg.anneal else eps


def _converged(new, old, cfg) -> bool:
    return float(np.linalg.norm(new - old)) < cfg.rel_change * float(np.linalg.norm(new))


def log_objective(x, D, alpha, lam, eps) -> float:
    """``0.5 |x - D a|^2 + lam sum log(|a_j| + eps)``."""
    r = x - D @ alpha
    return float(0.5 * r @ r + lam * np.sum(np.log(np.abs(alpha) + eps)))


def reweighted_l1(x, D, lam: float, cfg: ReweightConfig | None = None, alpha0=None,
                  trace: list | None = None) -> SparseCode:
    """Majorization-minimization for the log penalty.

    Every outer iteration solves a weighted Lasso with weights
    ``lam / (|a_old| + eps)`` by coordinate descent, warm-started from
    ``a_old``.  ``trace`` receives the log-penalized objective.
    """
    cfg = cfg or ReweightConfig()
    if not lam > 0:
        raise SparseKitError("lam must be > 0")
    D = check_dictionary(D)
    x = check_signal(x, D.shape[0])
    alpha = as_code(alpha0, D.shape[1])
    eps = cfg.eps
    if trace is not None:
        trace.append(log_objective(x, D, alpha, lam, eps))
    for _ in range(cfg.outer_iters):
        weights = lam / (np.abs(alpha) + eps)
        new = np.asarray(cd_lasso(x, D, 1.0, WeightedL1(weights), cfg.inner, alpha0=alpha))
        done = _converged(new, alpha, cfg)
        alpha = new
        eps = _next_eps(cfg, eps)
        if trace is not None:
            trace.append(log_objective(x, D, alpha, lam, eps))
        if done:
            break
    return SparseCode.from_dense(alpha)


def _weighted_ridge(Q, q, eta, lam):
    """``argmin_a 0.5 a'Qa - q'a + (lam/2) sum a_j^2 / eta_j`` in stabilized form."""
    h = np.sqrt(eta)
    M = h[:, None] * Q * h[None, :]
    M[np.diag_indices_from(M)] += lam
    try:
        c = cho_factor(M, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise NumericalError("stabilized IRLS system is not positive definite") from exc
    return h * cho_solve(c, h * q, check_finite=False)


def _irls(x, D, lam, cfg, eta_of, joint, trace, alpha0):
    D = check_dictionary(D)
    x = check_signal(x, D.shape[0])
    if not lam > 0:
        raise SparseKitError("lam must be > 0")
    Q = D.T @ D
    q = D.T @ x
    # default start: weights from the correlations D^T x
    alpha = q.copy() if alpha0 is None else as_code(alpha0, D.shape[1])
    eps = cfg.eps
    eta = eta_of(alpha, eps)
    for _ in range(cfg.outer_iters):
        new = _weighted_ridge(Q, q, eta, lam)
        if trace is not None:
            trace.append(joint(new, eta, eps))
        eta = eta_of(new, eps)
        if trace is not None:
            trace.append(joint(new, eta, eps))
        done = _converged(new, alpha, cfg)
        alpha = new
        if cfg.anneal:
            eps = _next_eps(cfg, eps)
            eta = eta_of(alpha, eps)
        if done:
            break
    alpha[alpha == 0] = 0.0
    return SparseCode.from_dense(alpha)


def irls_l1(x, D, lam: float, cfg: ReweightConfig | None = None,
            trace: list | None = None, alpha0=None) -> SparseCode:
    """IRLS for the Lasso.

    Alternates ``eta_j = sqrt(a_j^2 + eps)`` with the weighted ridge solve.
    The first weights come from ``alpha0`` (default ``D^T x``); a zero
    ``alpha0`` makes the first step a ridge regression.
    ``trace`` receives the joint objective
    ``0.5 |x - D a|^2 + (lam/2) sum (a_j^2 / eta_j + eta_j + eps / eta_j)``
    after every half-step; it is non-increasing.
    """
    cfg = cfg or ReweightConfig()
    x_ = np.asarray(x, dtype=np.float64).ravel()
    D_ = np.asarray(D, dtype=np.float64)

    def eta_of(a, eps):
        return np.sqrt(a * a + eps)

    def joint(a, eta, eps):
        r = x_ - D_ @ a
        return float(0.5 * r @ r + 0.5 * lam * np.sum((a * a + eps) / eta + eta))

    return _irls(x, D, lam, cfg, eta_of, joint, trace, alpha0)


def irls_lq(x, D, lam: float, q: float, cfg: ReweightConfig | None = None,
            trace: list | None = None, alpha0=None) -> SparseCode:
    """IRLS for the penalty ``lam |a|_q`` with ``0 < q < 2``.

    With ``s_j = sqrt(a_j^2 + eps)`` the weights are
    ``eta_j = s_j^(2-q) |s|_q^(q-1)``, the minimizer over ``eta`` of
    ``sum s_j^2 / eta_j + |eta|_r`` with ``r = q / (2 - q)``, whose minimum
    is ``2 |s|_q``.  ``trace`` receives that joint objective (times
    ``lam / 2``, plus the data term) after every half-step.
    """
    if not 0 < q < 2:
        raise SparseKitError("q must lie in (0, 2)")
    cfg = cfg or ReweightConfig()
    x_ = np.asarray(x, dtype=np.float64).ravel()
    D_ = np.asarray(D, dtype=np.float64)
    r_exp = q / (2.0 - q)

    def eta_of(a, eps):
        s = np.sqrt(a * a + eps)
        nq = np.sum(s**q) ** (1.0 / q)
        return s ** (2.0 - q) * nq ** (q - 1.0)

    def joint(a, eta, eps):
        res = x_ - D_ @ a
        eta_norm = np.sum(eta**r_exp) ** (1.0 / r_exp)
        return float(0.5 * res @ res + 0.5 * lam * (np.sum((a * a + eps) / eta) + eta_norm))

    return _irls(x, D, lam, cfg, eta_of, joint, trace, alpha0)


def irls_group(x, D, lam: float, groups: GroupStructure, cfg: ReweightConfig | None = None,
               trace: list | None = None, alpha0=None) -> SparseCode:
    """IRLS for the group-Lasso penalty ``lam sum_g |a_g|_2``.

    Each group shares the weight ``eta_g = sqrt(|a_g|^2 + eps)``.
    """
    if not isinstance(groups, GroupStructure):
        groups = GroupStructure(tuple(groups))
    D_ = np.asarray(D, dtype=np.float64)
    if groups.p != D_.shape[1]:
        raise SparseKitError("group structure does not match the dictionary")
    cfg = cfg or ReweightConfig()
    x_ = np.asarray(x, dtype=np.float64).ravel()
    labels = groups.labels()
    n_groups = len(groups.groups)

    def group_sq(a):
        return np.bincount(labels, weights=a * a, minlength=n_groups)

    def eta_of(a, eps):
        return np.sqrt(group_sq(a) + eps)[labels]

    def joint(a, eta, eps):
        res = x_ - D_ @ a
        eg = np.array([eta[g[0]] for g in groups.groups])
        return float(0.5 * res @ res + 0.5 * lam * np.sum((group_sq(a) + eps) / eg + eg))

    return _irls(x, D, lam, cfg, eta_of, joint, trace, alpha0)


def group_lasso_objective(x, D, alpha, lam, groups: GroupStructure) -> float:
    a = as_code(alpha)
    r = np.asarray(x) - np.asarray(D) @ a
    return float(0.5 * r @ r + lam * sum(np.linalg.norm(a[g]) for g in groups.groups))
