"""Sparse-representation classifiers.

``src_classify`` codes a test signal on the concatenation of all class
dictionaries and assigns the class whose coefficients reconstruct it best.
``residual_classify`` codes the signal on each class dictionary separately
and compares the optimal Lasso objectives.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .convex import AtLambda, homotopy_code
from .core import SparseKitError, check_signal, lasso_objective, project_unit_columns
from .dictlearn import FALLBACK_RIDGE, dl_alt_l1

SRC_LAMBDA_FACTOR = 1e-4
# residuals closer than this fraction of |x|^2 count as tied
TIE_RTOL = 1e-5


@dataclass(frozen=True)
class ClassDictSet:
    """Ordered ``(label, dictionary)`` pairs sharing the signal dimension."""

    labels: tuple
    dicts: tuple

    def __post_init__(self):
        if len(self.labels) != len(self.dicts):
            raise SparseKitError("one dictionary per label is required")
        if len(self.labels) < 2:
            raise SparseKitError("at least two classes are required")
        dims = {np.shape(D)[0] for D in self.dicts}
        if len(dims) != 1:
            raise SparseKitError("class dictionaries have different signal dimensions")
        for D in self.dicts:
            if np.ndim(D) != 2 or np.shape(D)[1] == 0:
                raise SparseKitError("class dictionaries must be non-empty matrices")

    @classmethod
    def from_pairs(cls, pairs) -> "ClassDictSet":
        pairs = list(pairs)
        return cls(tuple(l for l, _ in pairs),
                   tuple(np.asarray(D, dtype=np.float64) for _, D in pairs))

    @classmethod
    def from_samples(cls, X, labels) -> "ClassDictSet":
        """One dictionary per class made of that class's training columns."""
        X = np.asarray(X, dtype=np.float64)
        labels = np.asarray(labels)
        if labels.shape != (X.shape[1],):
            raise SparseKitError("need one label per training column")
        classes = np.unique(labels)
        return cls(tuple(classes.tolist()), tuple(X[:, labels == c] for c in classes))

    @property
    def m(self) -> int:
        return int(np.shape(self.dicts[0])[0])


def _default_lam(lam, x, D):
    if lam is None:
        lam = SRC_LAMBDA_FACTOR * float(np.max(np.abs(D.T @ x)))
        if lam == 0:
            lam = SRC_LAMBDA_FACTOR
    if not lam > 0:
        raise SparseKitError("lam must be > 0")
    return lam


def _normalize(D):
    D = np.asarray(D, dtype=np.float64)
    n = np.linalg.norm(D, axis=0)
    return D / np.where(n > 0, n, 1.0)[None, :]


def _argmin_first(v, scale: float) -> int:
    """First index within ``TIE_RTOL * scale`` of the minimum."""
    v = np.asarray(v)
    return int(np.flatnonzero(v <= v.min() + TIE_RTOL * scale)[0])


def src_classify(x, train: ClassDictSet, lam: float | None = None):
    """Sparse-representation classification of one signal.

    Training columns are normalized, the Lasso is solved on their
    concatenation (``lam`` defaults to ``1e-4 |D^T x|_inf``), and the label
    minimizing ``|x - D_j a_j|^2`` over the class blocks ``a_j`` is returned
    with the per-class residuals.  Ties (within ``1e-5 |x|^2``) go to the
    first class.
    """
    x = check_signal(x, train.m)
    blocks = [_normalize(D) for D in train.dicts]
    D = np.hstack(blocks)
    lam = _default_lam(lam, x, D)
    alpha = homotopy_code(x, D, AtLambda(lam), fallback_ridge=FALLBACK_RIDGE)
    res = np.empty(len(blocks))
    start = 0
    for j, B in enumerate(blocks):
        stop = start + B.shape[1]
        r = x - B @ alpha[start:stop]
        res[j] = float(r @ r)
        start = stop
    return train.labels[_argmin_first(res, float(x @ x))], res


def residual_classify(x, train: ClassDictSet, lam: float):
    """Assign the class whose dictionary gives the lowest optimal Lasso objective.

    Returns ``(label, objectives)``; ties (within ``1e-5 |x|^2``) go to the
    first class.
    """
    if lam is None or not lam > 0:
        raise SparseKitError("lam must be > 0")
    x = check_signal(x, train.m)
    obj = np.empty(len(train.dicts))
    for j, D in enumerate(train.dicts):
        D = project_unit_columns(D)
        a = homotopy_code(x, D, AtLambda(lam), fallback_ridge=FALLBACK_RIDGE)
        obj[j] = lasso_objective(x, D, a, lam)
    return train.labels[_argmin_first(obj, float(x @ x))], obj


def classify_batch(X, train: ClassDictSet, lam: float | None = None, rule: str = "src",
                   n_threads: int = 1) -> list:
    """Labels for every column of ``X`` with ``rule`` in ``{"src", "residual"}``."""
    X = np.asarray(X, dtype=np.float64)
    if rule == "src":
        fn = lambda i: src_classify(X[:, i], train, lam)[0]
    elif rule == "residual":
        fn = lambda i: residual_classify(X[:, i], train, lam)[0]
    else:
        raise SparseKitError(f"unknown rule {rule!r}")
    idx = range(X.shape[1])
    if n_threads <= 1:
        return [fn(i) for i in idx]
    with ThreadPoolExecutor(n_threads) as ex:
        return list(ex.map(fn, idx))


def learn_class_dictionaries(X, labels, p: int, lam: float, n_iter: int = 20, seed: int = 0,
                             n_threads: int = 1) -> ClassDictSet:
    """Learn one ``p``-atom dictionary per class with :func:`dl_alt_l1`."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape != (X.shape[1],):
        raise SparseKitError("need one label per training column")
    classes = np.unique(labels)
    dicts = []
    for c in classes:
        D, _, _ = dl_alt_l1(X[:, labels == c], p, lam=lam, n_iter=n_iter, seed=seed,
                            n_threads=n_threads)
        dicts.append(D)
    return ClassDictSet(tuple(classes.tolist()), tuple(dicts))
