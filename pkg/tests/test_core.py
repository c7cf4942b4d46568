import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import l1_projection_sorted
from sparsekit.core import (
    L0,
    L1,
    ElasticNet,
    GroupL2,
    GroupStructure,
    Lq,
    SparseCode,
    SparseKitError,
    WeightedL1,
    check_dictionary,
    group_threshold,
    hard_threshold,
    lasso_kkt_check,
    max_eigenvalue,
    penalty_eval,
    project_l1_ball,
    project_unit_columns,
    psnr,
    soft_threshold,
)

floats = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 40), elements=floats)


# SparseCode ----------------------------------------------------------------


def test_sparse_code_roundtrip():
    a = np.array([0.0, 1.5, 0.0, -2.0])
    c = SparseCode.from_dense(a)
    assert c.nnz == 2 and list(c.support) == [1, 3]
    assert np.array_equal(np.asarray(c), a)


@pytest.mark.parametrize("support,coeffs", [([1, 0], [1.0, 2.0]), ([0, 4], [1.0, 1.0]),
                                            ([0], [0.0]), ([0], [np.nan])])
def test_sparse_code_invariants(support, coeffs):
    with pytest.raises(SparseKitError):
        SparseCode(4, support, coeffs)


# project_unit_columns --------------------------------------------------------


def test_project_unit_columns_examples():
    M = np.array([[3.0, 0.3, 0.0], [4.0, 0.4, 0.0]])
    out = project_unit_columns(M)
    assert np.allclose(out[:, 0], [0.6, 0.8])
    assert np.array_equal(out[:, 1], [0.3, 0.4])
    assert np.array_equal(out[:, 2], [0.0, 0.0])


def test_project_unit_columns_rejects_nonfinite():
    with pytest.raises(SparseKitError):
        project_unit_columns(np.array([[np.inf]]))


@given(arrays(np.float64, (5, 4), elements=floats))
def test_project_unit_columns_idempotent(M):
    once = project_unit_columns(M)
    assert np.all(np.linalg.norm(once, axis=0) <= 1 + 1e-12)
    assert np.allclose(project_unit_columns(once), once, rtol=0, atol=1e-15)


def test_check_dictionary_slack():
    D = np.eye(3) * (1 + 5e-13)
    check_dictionary(D)
    with pytest.raises(SparseKitError):
        check_dictionary(np.eye(3) * (1 + 1e-9))


# thresholding ----------------------------------------------------------------


def test_hard_threshold_examples():
    b = np.array([3.0, 1.0, -2.0])
    assert np.array_equal(hard_threshold(b, k=2), [3, 0, -2])
    assert np.array_equal(hard_threshold(b, mu=2), [3, 0, -2])
    assert np.array_equal(hard_threshold(np.zeros(3), k=1), np.zeros(3))
    # ties go to the lowest index
    assert np.array_equal(hard_threshold(np.array([1.0, -1.0, 1.0]), k=1), [1, 0, 0])
    with pytest.raises(SparseKitError):
        hard_threshold(b, k=4)
    with pytest.raises(SparseKitError):
        hard_threshold(b, k=1, mu=1.0)


@given(vectors, st.integers(0, 40))
def test_hard_threshold_topk_oracle(b, k):
    k = min(k, b.size)
    out = hard_threshold(b, k=k)
    assert np.count_nonzero(out) <= k
    kept = out != 0
    assert np.array_equal(out[kept], b[kept])
    # sort-based oracle: keep magnitudes ranked < k with stable index order
    order = sorted(range(b.size), key=lambda i: (-abs(b[i]), i))[:k]
    ref = np.zeros_like(b)
    ref[order] = b[order]
    assert np.array_equal(out, ref)


@given(vectors, st.floats(0, 100))
def test_hard_threshold_level(b, mu):
    out = hard_threshold(b, mu=mu)
    assert np.all((out == 0) | (out == b))
    assert np.all(out[np.abs(b) < mu] == 0)


def test_soft_threshold_examples():
    assert np.array_equal(soft_threshold(np.array([2, 0.5, -3]), 1.0), [1, 0, -2])
    b = np.array([1.0, -2.0])
    assert np.array_equal(soft_threshold(b, 0.0), b)
    assert soft_threshold(np.array([-0.3]), 0.3)[0] == 0
    with pytest.raises(SparseKitError):
        soft_threshold(b, -1.0)


@given(vectors, vectors, st.floats(0, 100))
def test_soft_threshold_odd_and_lipschitz(a, b, lam):
    n = min(a.size, b.size)
    a, b = a[:n], b[:n]
    assert np.array_equal(soft_threshold(-a, lam), -soft_threshold(a, lam))
    assert np.all(np.abs(soft_threshold(a, lam) - soft_threshold(b, lam))
                  <= np.abs(a - b) + 1e-12)


def test_group_threshold_examples():
    g = GroupStructure.singletons(2)
    one = GroupStructure(((0, 1),), 2)
    assert np.allclose(group_threshold(np.array([3.0, 4.0]), one, 5.0), 0)
    assert np.allclose(group_threshold(np.array([3.0, 4.0]), one, 2.5), [1.5, 2])
    with pytest.raises(SparseKitError):
        group_threshold(np.array([3.0, 4.0]), g, -1.0)


@given(vectors, st.floats(0, 100))
def test_group_threshold_singletons_equal_soft(b, lam):
    g = GroupStructure.singletons(b.size)
    assert np.allclose(group_threshold(b, g, lam), soft_threshold(b, lam), rtol=0, atol=1e-12)


def test_group_structure_validation():
    with pytest.raises(SparseKitError):
        GroupStructure(((0, 1), (1, 2)), 3)
    with pytest.raises(SparseKitError):
        GroupStructure(((0,), (2,)), 3)
    assert list(GroupStructure.contiguous([2, 1]).labels()) == [0, 0, 1]


# l1 projection -----------------------------------------------------------------


def test_project_l1_examples():
    assert np.array_equal(project_l1_ball(np.array([0.6, 0.4]), 1.0), [0.6, 0.4])
    assert np.allclose(project_l1_ball(np.array([2.0, 1.0]), 1.0), [1.0, 0.0])
    with pytest.raises(SparseKitError):
        project_l1_ball(np.ones(2), 0.0)


@given(vectors, st.floats(1e-3, 1e3), st.integers(0, 2**16))
def test_project_l1_matches_sorted_oracle(b, mu, seed):
    out = project_l1_ball(b, mu, seed=seed)
    assert np.array_equal(out, l1_projection_sorted(b, mu))
    assert np.abs(out).sum() <= mu + 1e-10 * max(1.0, mu)


@given(arrays(np.float64, 6, elements=floats), st.floats(0.01, 10))
def test_project_l1_is_closest_point(b, mu):
    # variational inequality of the projection: <b - P, y - P> <= 0 for y in the ball
    P = project_l1_ball(b, mu)
    rng = np.random.default_rng(0)
    for _ in range(20):
        y = rng.standard_normal(6)
        y *= mu / max(np.abs(y).sum(), mu)
        assert (b - P) @ (y - P) <= 1e-8 * (1 + np.abs(b).sum())


# penalties, KKT, metrics -------------------------------------------------------


def test_penalty_eval_examples():
    a = np.array([1.0, -2.0, 0.0])
    assert penalty_eval(L1(), a) == 3
    assert penalty_eval(L0(), a) == 2
    assert penalty_eval(ElasticNet(2.0), np.array([1.0, 0.0])) == 2
    assert penalty_eval(Lq(0.5), np.array([4.0, 0.0])) == 2
    assert penalty_eval(WeightedL1(np.array([1.0, 2.0, 3.0])), a) == 5
    g = GroupL2(GroupStructure(((0, 1), (2,)), 3))
    assert math.isclose(penalty_eval(g, a), math.sqrt(5))


def test_kkt_zero_solution_above_lambda_max():
    rng = np.random.default_rng(0)
    D = rng.standard_normal((5, 8))
    D /= np.linalg.norm(D, axis=0)
    x = rng.standard_normal(5)
    lam = np.abs(D.T @ x).max()
    rep = lasso_kkt_check(x, D, np.zeros(8), lam)
    assert rep.passed and rep.max_violation_active == 0 and rep.max_violation_inactive == 0


def test_kkt_orthonormal_closed_form_and_perturbation():
    rng = np.random.default_rng(1)
    for _ in range(100):
        D, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        x = rng.standard_normal(6)
        beta = D.T @ x
        lam = rng.uniform(0.05, 0.9) * np.abs(beta).max()
        a = soft_threshold(beta, lam)
        assert lasso_kkt_check(x, D, a, lam, tol=1e-10).passed
        j = int(np.flatnonzero(a)[0])
        a[j] += 10 * 1e-6
        rep = lasso_kkt_check(x, D, a, lam, tol=1e-6)
        assert not rep.passed
        assert math.isclose(rep.max_violation_active, 1e-5, rel_tol=1e-6)


def test_kkt_elastic_net_and_weighted():
    D = np.eye(2)
    x = np.array([3.0, 0.5])
    # elastic-net closed form: a = S(x, lam) / (1 + gamma)
    a = soft_threshold(x, 1.0) / 1.5
    assert lasso_kkt_check(x, D, a, 1.0, ElasticNet(0.5), tol=1e-12).passed
    w = np.array([2.0, 0.1])
    a = soft_threshold(x, w)
    assert lasso_kkt_check(x, D, a, 1.0, WeightedL1(w), tol=1e-12).passed
    with pytest.raises(SparseKitError):
        lasso_kkt_check(x, np.eye(3), np.zeros(3), 1.0)


def test_psnr():
    a = np.full((8, 8), 100.0)
    assert psnr(a, a) == math.inf
    assert math.isclose(psnr(a, a + 25), 10 * math.log10(255**2 / 625))
    rng = np.random.default_rng(0)
    big = np.full((1000, 1000), 128.0)
    assert abs(psnr(big, big + 25 * rng.standard_normal(big.shape)) - 20.17) < 0.1
    with pytest.raises(SparseKitError):
        psnr(a, a[:4])


def test_max_eigenvalue_matches_eigvalsh():
    rng = np.random.default_rng(2)
    M = rng.standard_normal((10, 30))
    Q = M @ M.T
    assert math.isclose(max_eigenvalue(Q, n_iter=500, tol=1e-12),
                        np.linalg.eigvalsh(Q)[-1], rel_tol=1e-8)
