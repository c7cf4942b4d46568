"""Shared numeric building blocks.

Dictionaries are plain ``(m, p)`` float64 arrays whose columns (atoms) have
an l2-norm of at most one; codes are length-``p`` vectors or ``(p, n)``
matrices.  This module holds the thresholding and projection operators, the
penalty functions, the Lasso optimality check and the PSNR metric shared by
every solver and pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ATOM_NORM_SLACK = 1e-12


class SparseKitError(ValueError):
    """Invalid argument passed to a sparsekit routine."""


class NumericalError(ArithmeticError):
    """A computation could not be completed reliably."""


class DegeneratePathError(NumericalError):
    """Homotopy hit simultaneous events or a rank-deficient active set."""

    def __init__(self, message: str, indices=()):
        super().__init__(message)
        self.indices = tuple(int(i) for i in indices)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SparseCode:
    """A sparse coefficient vector stored as (support, coefficients).

    ``support`` is strictly increasing and no explicit zero is stored.
    ``status`` carries a solver termination flag ("ok", "converged_early",
    "degenerate_atom", "max_iter").  ``np.asarray(code)`` gives the dense
    vector.
    """

    dim: int
    support: np.ndarray
    coeffs: np.ndarray
    status: str = "ok"

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.intp)
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if support.shape != coeffs.shape or support.ndim != 1:
            raise SparseKitError("support and coeffs must be aligned 1-D arrays")
        if support.size and (np.any(np.diff(support) <= 0) or support[0] < 0
                             or support[-1] >= self.dim):
            raise SparseKitError("support must be strictly increasing and < dim")
        if not np.all(np.isfinite(coeffs)):
            raise SparseKitError("non-finite coefficient")
        if np.any(coeffs == 0):
            raise SparseKitError("explicit zeros are not stored")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def from_dense(cls, alpha, status: str = "ok") -> "SparseCode":
        alpha = np.asarray(alpha, dtype=np.float64).ravel()
        support = np.flatnonzero(alpha)
        return cls(alpha.size, support, alpha[support], status)

    def toarray(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.support] = self.coeffs
        return out

    def __array__(self, dtype=None, copy=None):
        out = self.toarray()
        return out if dtype is None else out.astype(dtype)

    def __len__(self):
        return self.dim

    @property
    def nnz(self) -> int:
        return int(self.support.size)


def as_code(alpha, p: int | None = None) -> np.ndarray:
    """Dense float copy of a code given as array, SparseCode or ``None``."""
    if alpha is None:
        if p is None:
            raise SparseKitError("dimension needed for a zero code")
        return np.zeros(p)
    out = np.array(alpha, dtype=np.float64).ravel()
    if p is not None and out.size != p:
        raise SparseKitError(f"code has {out.size} entries, expected {p}")
    return out


@dataclass(frozen=True)
class L0:
    pass


@dataclass(frozen=True)
class L1:
    pass


@dataclass(frozen=True)
class ElasticNet:
    gamma: float

    def __post_init__(self):
        if not self.gamma >= 0:
            raise SparseKitError("elastic-net gamma must be >= 0")


@dataclass(frozen=True)
class Lq:
    q: float

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise SparseKitError("Lq penalty needs 0 < q < 1")


@dataclass(frozen=True)
class WeightedL1:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise SparseKitError("weights must be finite and >= 0")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class GroupStructure:
    """Disjoint index groups covering ``range(p)``."""

    groups: tuple
    p: int = field(default=-1)

    def __post_init__(self):
        groups = tuple(np.asarray(g, dtype=np.intp).ravel() for g in self.groups)
        p = self.p if self.p >= 0 else sum(g.size for g in groups)
        flat = np.concatenate(groups) if groups else np.zeros(0, np.intp)
        if flat.size != p or np.any(np.sort(flat) != np.arange(p)):
            raise SparseKitError("groups must form a partition of range(p)")
        if any(g.size == 0 for g in groups):
            raise SparseKitError("empty group")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "p", p)

    @classmethod
    def singletons(cls, p: int) -> "GroupStructure":
        return cls(tuple([i] for i in range(p)), p)

    @classmethod
    def contiguous(cls, sizes: Sequence[int]) -> "GroupStructure":
        bounds = np.cumsum([0, *sizes])
        return cls(tuple(np.arange(a, b) for a, b in zip(bounds[:-1], bounds[1:])))

    def labels(self) -> np.ndarray:
        """Group index of every coordinate."""
        out = np.empty(self.p, dtype=np.intp)
        for k, g in enumerate(self.groups):
            out[g] = k
        return out


@dataclass(frozen=True)
class GroupL2:
    structure: GroupStructure


@dataclass(frozen=True)
class KktReport:
    max_violation_active: float
    max_violation_inactive: float
    passed: bool


# ---------------------------------------------------------------------------
# Validation helpers
# ---------------------------------------------------------------------------


def check_matrix(M, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise SparseKitError(f"{name} must be a non-empty 2-D array")
    if not np.all(np.isfinite(M)):
        raise SparseKitError(f"{name} has non-finite entries")
    return M


def check_dictionary(D) -> np.ndarray:
    """Return ``D`` as a float array after checking every atom norm is <= 1."""
    D = check_matrix(D, "dictionary")
    norms = np.sqrt(np.einsum("ij,ij->j", D, D))
    if np.any(norms > 1 + ATOM_NORM_SLACK):
        bad = int(np.argmax(norms))
        raise SparseKitError(f"atom {bad} has norm {norms[bad]:.6g} > 1")
    return D


def check_signal(x, m: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != m:
        raise SparseKitError(f"signal has {x.size} entries, dictionary expects {m}")
    if not np.all(np.isfinite(x)):
        raise SparseKitError("signal has non-finite entries")
    return x


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def project_unit_columns(M) -> np.ndarray:
    """Project every column onto the unit l2-ball: d <- d / max(||d||, 1)."""
    M = check_matrix(M)
    norms = np.sqrt(np.einsum("ij,ij->j", M, M))
    return M / np.maximum(norms, 1.0)


def hard_threshold(beta, k: int | None = None, mu: float | None = None) -> np.ndarray:
    """Hard-thresholding in top-``k`` or level-``mu`` mode.

    Top-``k`` keeps the ``k`` largest magnitudes (ties go to the lowest
    index); level mode zeroes entries with ``|beta| < mu``.  Kept entries are
    returned untouched.
    """
    beta = np.asarray(beta, dtype=np.float64)
    if (k is None) == (mu is None):
        raise SparseKitError("give exactly one of k or mu")
    out = np.zeros_like(beta)
    if k is not None:
        if k < 0 or k > beta.size:
            raise SparseKitError(f"k={k} outside [0, {beta.size}]")
        keep = np.argsort(-np.abs(beta), kind="stable")[:k]
        out[keep] = beta[keep]
    else:
        if mu < 0:
            raise SparseKitError("mu must be >= 0")
        keep = np.abs(beta) >= mu
        out[keep] = beta[keep]
    return out


def soft_threshold(beta, lam) -> np.ndarray:
    """Entry-wise ``sign(b) * max(|b| - lam, 0)``; ``lam`` may be a vector."""
    lam_arr = np.asarray(lam, dtype=np.float64)
    if np.any(lam_arr < 0):
        raise SparseKitError("threshold must be >= 0")
    beta = np.asarray(beta, dtype=np.float64)
    return np.sign(beta) * np.maximum(np.abs(beta) - lam_arr, 0.0)


def group_threshold(beta, groups: GroupStructure, lam: float) -> np.ndarray:
    """Block soft-thresholding: shrink each group's l2-norm by ``lam``."""
    if lam < 0:
        raise SparseKitError("threshold must be >= 0")
    beta = np.asarray(beta, dtype=np.float64)
    if groups.p != beta.size:
        raise SparseKitError("group structure does not match vector size")
    out = np.zeros_like(beta)
    for g in groups.groups:
        nrm = np.linalg.norm(beta[g])
        if lam == 0:
            out[g] = beta[g]
        elif nrm >= lam:
            out[g] = (1.0 - lam / nrm) * beta[g]
    return out


def _l1_threshold_from_kept(u_kept: np.ndarray, mu: float) -> float:
    # exactly rounded sum so the result does not depend on summation order
    return (math.fsum(u_kept) - mu) / u_kept.size


def project_l1_ball(beta, mu: float, seed: int = 0) -> np.ndarray:
    """Euclidean projection onto ``{a : ||a||_1 <= mu}``.

    Uses randomized pivoting to find the soft-threshold level in expected
    linear time.
    """
    if not mu > 0:
        raise SparseKitError("l1-ball radius must be > 0")
    beta = np.asarray(beta, dtype=np.float64)
    u = np.abs(beta)
    if u.sum() <= mu:
        return beta.copy()
    rng = np.random.default_rng(seed)
    cand = u
    s = 0.0
    rho = 0
    low = np.inf  # smallest magnitude accepted in the kept set
    while cand.size:
        pivot = cand[rng.integers(cand.size)]
        upper = cand >= pivot
        ds = cand[upper].sum()
        dr = int(upper.sum())
        if (s + ds) - (rho + dr) * pivot < mu:
            s += ds
            rho += dr
            low = pivot
            cand = cand[~upper]
        else:
            # pivot is not kept; the kept set lies strictly above it
            cand = cand[cand > pivot]
    theta = _l1_threshold_from_kept(u[u >= low], mu)
    return np.sign(beta) * np.maximum(u - theta, 0.0)


# ---------------------------------------------------------------------------
# Penalties, optimality, metrics
# ---------------------------------------------------------------------------


def penalty_eval(penalty, alpha) -> float:
    """Value of a sparsity penalty at ``alpha``."""
    a = as_code(alpha)
    if isinstance(penalty, L0):
        return float(np.count_nonzero(a))
    if isinstance(penalty, L1):
        return float(np.abs(a).sum())
    if isinstance(penalty, ElasticNet):
        return float(np.abs(a).sum() + 0.5 * penalty.gamma * a @ a)
    if isinstance(penalty, Lq):
        return float(np.sum(np.abs(a) ** penalty.q))
    if isinstance(penalty, WeightedL1):
        if penalty.weights.size != a.size:
            raise SparseKitError("weights do not match code size")
        return float(penalty.weights @ np.abs(a))
    if isinstance(penalty, GroupL2):
        return float(sum(np.linalg.norm(a[g]) for g in penalty.structure.groups))
    raise SparseKitError(f"unknown penalty {penalty!r}")


def lasso_objective(x, D, alpha, lam, penalty=None) -> float:
    """``0.5 ||x - D a||^2 + lam ||a||_1`` plus ``0.5 gamma ||a||^2`` for elastic-net."""
    a = as_code(alpha)
    lam_v, gamma = penalty_params(penalty, lam, a.size)
    r = np.asarray(x, dtype=np.float64) - D @ a
    return float(0.5 * r @ r + lam_v @ np.abs(a) + 0.5 * gamma * a @ a)


def lasso_kkt_check(x, D, alpha, lam, penalty=None, tol: float = 1e-6) -> KktReport:
    """Check the Lasso (or elastic-net) optimality conditions at ``alpha``.

    With ``g = -D^T (x - D a) + gamma a`` (``gamma`` only for
    :class:`ElasticNet`), active coordinates must satisfy
    ``g_i = -lam sign(a_i)`` and inactive ones ``|g_i| <= lam``.  A
    :class:`WeightedL1` penalty scales ``lam`` per coordinate.
    """
    D = check_matrix(D, "dictionary")
    x = check_signal(x, D.shape[0])
    a = as_code(alpha, D.shape[1])
    lam, gamma = penalty_params(penalty, lam, a.size)
    grad = -(D.T @ (x - D @ a)) + gamma * a
    active = a != 0
    v_act = np.abs(grad[active] + lam[active] * np.sign(a[active]))
    v_inact = np.maximum(np.abs(grad[~active]) - lam[~active], 0.0)
    va = float(v_act.max()) if v_act.size else 0.0
    vi = float(v_inact.max()) if v_inact.size else 0.0
    return KktReport(va, vi, va <= tol and vi <= tol)


def penalty_params(penalty, lam, p: int):
    """Per-coordinate l1 weights and ridge ``gamma`` of an L1-type penalty."""
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0):
        raise SparseKitError("lambda must be >= 0")
    gamma = 0.0
    if penalty is None or isinstance(penalty, L1):
        pass
    elif isinstance(penalty, ElasticNet):
        gamma = float(penalty.gamma)
    elif isinstance(penalty, WeightedL1):
        if penalty.weights.size != p:
            raise SparseKitError("weights do not match code size")
        lam = lam * penalty.weights
    else:
        raise SparseKitError(f"penalty {penalty!r} is not an l1-type penalty")
    return np.broadcast_to(lam, (p,)).astype(np.float64), gamma


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for images on the [0, 255] scale."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise SparseKitError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def max_eigenvalue(Q, n_iter: int = 100, tol: float = 1e-6, seed: int = 0) -> float:
    """Largest eigenvalue of a PSD matrix by power iteration (Rayleigh quotient)."""
    Q = np.asarray(Q, dtype=np.float64)
    v = np.random.default_rng(seed).standard_normal(Q.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(n_iter):
        w = Q @ v
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        new = float(v @ w)
        v = w / nrm
        if abs(new - est) <= tol * abs(new):
            est = new
            break
        est = new
    return max(est, float(v @ Q @ v))
