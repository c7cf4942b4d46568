import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparsekit.classify import (
    ClassDictSet,
    classify_batch,
    learn_class_dictionaries,
    residual_classify,
    src_classify,
)
from sparsekit.core import SparseKitError


def two_subspaces(rng, m=20, dim=3, per_class=10):
    Q, _ = np.linalg.qr(rng.standard_normal((m, 2 * dim)))
    bases = [Q[:, :dim], Q[:, dim:]]
    dicts = [B @ rng.standard_normal((dim, per_class)) for B in bases]
    return bases, ClassDictSet.from_pairs([(0, dicts[0]), (1, dicts[1])])


def test_self_representation():
    rng = np.random.default_rng(0)
    train = ClassDictSet.from_pairs([(c, rng.standard_normal((15, 8))) for c in "abc"])
    x = train.dicts[1][:, 3].copy()
    label, res = src_classify(x, train, lam=1e-6)
    assert label == "b"
    assert res[1] <= 1e-8 * (x @ x)
    assert np.all(res >= 0) and res[1] == res.min()


def test_tie_rule_duplicated_class():
    rng = np.random.default_rng(1)
    D = rng.standard_normal((10, 6))
    train = ClassDictSet.from_pairs([(7, D), (3, D.copy())])
    x = rng.standard_normal(10)
    assert residual_classify(x, train, 0.1)[0] == 7
    for seed in range(20):
        x = np.random.default_rng(seed).standard_normal(10)
        assert src_classify(x, train)[0] == 7


def test_large_lambda_reduces_to_tie():
    rng = np.random.default_rng(2)
    train = ClassDictSet.from_pairs([(1, rng.standard_normal((8, 5))),
                                     (2, rng.standard_normal((8, 5)))])
    x = rng.standard_normal(8)
    label, obj = residual_classify(x, train, 1e6)
    assert label == 1
    assert np.allclose(obj, 0.5 * x @ x)


def test_orthogonal_subspaces():
    rng = np.random.default_rng(3)
    correct = 0
    for _ in range(100):
        bases, train = two_subspaces(rng)
        c = int(rng.integers(2))
        x = bases[c] @ rng.standard_normal(3) + 0.01 * rng.standard_normal(20)
        correct += src_classify(x, train)[0] == c
    assert correct == 100


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
def test_src_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    _, train = two_subspaces(rng)
    x = rng.standard_normal(20)
    # the default lambda is proportional to |D^T x|_inf, so it scales with x
    a, _ = src_classify(x, train)
    b, _ = src_classify(scale * x, train)
    assert a == b


def test_digits_error_rate():
    from sklearn.datasets import load_digits

    X, y = load_digits(return_X_y=True)
    keep = (y == 3) | (y == 8)
    X, y = X[keep].T / 16.0, y[keep]
    rng = np.random.default_rng(4)
    order = rng.permutation(y.size)
    tr, te = order[:250], order[250:350]
    train = learn_class_dictionaries(X[:, tr], y[tr], p=32, lam=0.1, n_iter=10)
    pred = classify_batch(X[:, te], train, lam=0.1, rule="residual", n_threads=2)
    err = np.mean(np.array(pred) != y[te])
    assert err <= 0.05
    src = classify_batch(X[:, te], ClassDictSet.from_samples(X[:, tr], y[tr]))
    assert np.mean(np.array(src) != y[te]) <= 0.05


def test_batch_threads_match_serial():
    rng = np.random.default_rng(5)
    _, train = two_subspaces(rng)
    X = rng.standard_normal((20, 12))
    assert classify_batch(X, train, n_threads=3) == classify_batch(X, train)


def test_validation():
    D = np.eye(4)
    with pytest.raises(SparseKitError):
        ClassDictSet.from_pairs([(0, D)])
    with pytest.raises(SparseKitError):
        ClassDictSet.from_pairs([(0, D), (1, np.eye(5))])
    train = ClassDictSet.from_pairs([(0, D), (1, D)])
    with pytest.raises(SparseKitError):
        src_classify(np.ones(4), train, lam=-1.0)
    with pytest.raises(SparseKitError):
        residual_classify(np.ones(4), train, 0.0)
    with pytest.raises(SparseKitError):
        classify_batch(np.ones((4, 2)), train, rule="knn")
    with pytest.raises(SparseKitError):
        ClassDictSet.from_samples(np.ones((4, 3)), [0, 1])
