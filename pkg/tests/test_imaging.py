import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsekit.core import SparseKitError, psnr
from sparsekit.greedy import MaxNonzeros
from sparsekit.imaging import (
    DCT,
    AdaptiveL0,
    DenoiseParams,
    InpaintParams,
    NoiseModel,
    PatchGrid,
    add_noise,
    build_dct_dictionary,
    center_patches,
    chi2_quantile,
    contrast_normalize,
    default_patch_side,
    denoise,
    extract_patches,
    inpaint,
    masked_dictionary_update,
    omp_masked_batch,
    recombine_average,
    scatter,
    uncenter_patches,
    whiten_apply,
    whiten_fit,
)


def smooth_image(h=32, w=32, seed=0):
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:h, 0:w]
    img = 128 + 60 * np.sin(x / 5.0) * np.cos(y / 7.0) + 30 * (x > w // 2)
    return img + rng.normal(0, 1, (h, w))


# patch algebra -----------------------------------------------------------------


@given(st.integers(8, 20), st.integers(8, 20), st.integers(1, 6), st.integers(1, 5),
       st.sampled_from([1, 3]))
@settings(max_examples=30)
def test_extract_recombine_roundtrip(h, w, e, stride, ch):
    e = min(e, h, w)
    stride = min(stride, e)  # wider strides leave gaps
    rng = np.random.default_rng(h * w + e)
    img = rng.uniform(0, 255, (h, w) if ch == 1 else (h, w, 3))
    grid = PatchGrid.for_image(img, e, stride)
    P = extract_patches(img, grid)
    assert P.shape == (grid.m, grid.n)
    assert np.allclose(recombine_average(P, grid), img, atol=1e-10)
    # adjointness: <E img, P> = <img, E^T P>
    Q = rng.standard_normal(P.shape)
    assert np.isclose(np.sum(P * Q), np.sum(img * scatter(Q, grid)), rtol=1e-10)


def test_patch_layout_and_counts():
    img = np.arange(20.0).reshape(4, 5)
    grid = PatchGrid.for_image(img, 2, 2)
    assert list(grid.rows) == [0, 2] and list(grid.cols) == [0, 2, 3]
    P = extract_patches(img, grid)
    assert list(P[:, 0]) == [0, 1, 5, 6]
    g1 = PatchGrid(20, 20, 4)
    assert np.all(g1.counts()[3:-3, 3:-3] == 16)
    assert g1.counts()[0, 0] == 1
    with pytest.raises(SparseKitError):
        PatchGrid(3, 3, 4)
    with pytest.raises(SparseKitError):
        extract_patches(np.zeros((4, 4)), grid)


def test_weighted_recombine():
    img = np.ones((6, 6))
    grid = PatchGrid.for_image(img, 3)
    P = extract_patches(img, grid) * 2.0
    w = np.random.default_rng(0).uniform(0.5, 2.0, grid.n)
    assert np.allclose(recombine_average(P, grid, weights=w), 2.0)


# preprocessing -----------------------------------------------------------------


def test_centering_roundtrip_gray_and_rgb():
    rng = np.random.default_rng(1)
    P = rng.standard_normal((12, 7))
    C, mu = center_patches(P, 3)
    assert mu.shape == (3, 7)
    assert np.allclose(C.reshape(3, 4, 7).mean(axis=1), 0)
    assert np.allclose(uncenter_patches(C, mu), P)
    C1, mu1 = center_patches(P)
    assert np.allclose(C1.mean(axis=0), 0) and np.allclose(uncenter_patches(C1, mu1), P)


def test_contrast_normalize():
    P = np.column_stack([[3.0, 4.0], [0.03, 0.04], [0.0, 0.0]])
    out = contrast_normalize(P)
    eta = 0.2 * np.mean([5.0, 0.05, 0.0])
    assert np.allclose(out[:, 0], [0.6, 0.8])
    assert np.allclose(out[:, 1], P[:, 1] / eta)
    assert np.all(out[:, 2] == 0)
    with pytest.raises(SparseKitError):
        contrast_normalize(P, 0.0)


def test_whitening_gives_identity_covariance():
    rng = np.random.default_rng(2)
    P = rng.standard_normal((5, 5)) @ rng.standard_normal((5, 2000))
    model = whiten_fit(P)
    W = whiten_apply(model, P)
    assert np.allclose(W @ W.T / 2000, np.eye(5), atol=1e-8)
    # truncation keeps the smallest prefix with enough variance
    s2 = model.s**2
    cut = whiten_fit(P, 0.9)
    k = cut.kept
    assert s2[:k].sum() >= 0.9 * s2.sum() * (1 - 1e-12)
    assert k == 1 or s2[: k - 1].sum() < 0.9 * s2.sum()
    with pytest.raises(SparseKitError):
        whiten_fit(P, 0.0)


def test_whitening_rank_deficient():
    rng = np.random.default_rng(3)
    P = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 100))
    assert whiten_fit(P).kept == 2


# noise and DCT -----------------------------------------------------------------


def test_noise_model():
    assert NoiseModel(10.0).epsilon(64) == pytest.approx(64 * 11.5**2)
    assert NoiseModel(10.0, "chi2", 0.5).epsilon(64) == pytest.approx(100 * chi2_quantile(0.5, 64))
    with pytest.raises(SparseKitError):
        NoiseModel(1.0, "bogus")
    with pytest.raises(SparseKitError):
        chi2_quantile(1.0, 3)


def test_add_noise_statistics():
    img = np.full((300, 300), 100.0)
    out = add_noise(img, 20.0, seed=4)
    assert abs((out - img).std() - 20.0) < 0.2
    assert np.array_equal(out, add_noise(img, 20.0, seed=4))
    assert np.array_equal(add_noise(img, 0.0), img)


def test_dct_dictionary():
    D = build_dct_dictionary(8, 256)
    assert D.shape == (64, 256)
    assert np.allclose(np.linalg.norm(D, axis=0), 1.0)
    assert np.allclose(D[:, 0], 1 / 8)
    assert np.allclose(D[:, 1:].sum(axis=0), 0, atol=1e-12)
    # complete case: an orthonormal basis
    B = build_dct_dictionary(4, 16)
    assert np.allclose(B.T @ B, np.eye(16), atol=1e-12)
    C = build_dct_dictionary(4, 16, channels=3)
    assert C.shape == (48, 48)


# denoising ---------------------------------------------------------------------


def test_default_patch_side():
    assert default_patch_side(25) == 8 and default_patch_side(30) == 12


def test_denoise_low_noise():
    img = smooth_image(40, 40)
    noisy = add_noise(img, 2.0, seed=5)
    out, rep = denoise(noisy, NoiseModel(2.0), DCT(),
                       DenoiseParams(p=64, reference=img))
    assert rep["psnr"] > 40
    assert rep["psnr"] > rep["psnr_noisy"]


def test_denoise_improves_and_learning_helps():
    img = smooth_image(40, 40)
    noisy = add_noise(img, 20.0, seed=6)
    prm = DenoiseParams(p=64, reference=img, n_iter=3)
    _, r_dct = denoise(noisy, NoiseModel(20.0), DCT(), prm)
    _, r_l0 = denoise(noisy, NoiseModel(20.0), AdaptiveL0(), prm)
    assert r_dct["psnr"] > r_dct["psnr_noisy"] + 5
    assert r_l0["psnr"] > r_dct["psnr_noisy"] + 5


def test_denoise_translation_equivariant():
    img = smooth_image(32, 40)
    noisy = add_noise(img, 10.0, seed=7)
    prm = DenoiseParams(p=64)
    a, _ = denoise(noisy, NoiseModel(10.0), DCT(), prm)
    b, _ = denoise(noisy[:, 8:], NoiseModel(10.0), DCT(), prm)
    # pixels whose covering patches all lie inside both crops agree
    assert np.allclose(a[:, 15:], b[:, 7:], atol=1e-9)


def test_denoise_rgb_and_errors():
    img = np.stack([smooth_image(24, 24, s) for s in range(3)], axis=-1)
    noisy = add_noise(img, 10.0, seed=9)
    out, rep = denoise(noisy, NoiseModel(10.0), DCT(), DenoiseParams(p=192, reference=img))
    assert out.shape == img.shape and rep["psnr"] > rep["psnr_noisy"]
    with pytest.raises(SparseKitError):
        denoise(noisy, NoiseModel(0.0))
    with pytest.raises(SparseKitError):
        denoise(noisy, NoiseModel(10.0), DCT(), DenoiseParams(p=190))


# inpainting --------------------------------------------------------------------


def test_masked_omp_ignores_missing_entries():
    rng = np.random.default_rng(10)
    D = rng.standard_normal((16, 24))
    D /= np.linalg.norm(D, axis=0)
    a = np.zeros(24)
    a[[1, 7]] = [2.0, -1.0]
    X = np.column_stack([D @ a, np.zeros(16)])
    M = np.ones((16, 2), bool)
    M[::3, 0] = False
    M[:, 1] = False
    X[~M] = 999.0
    A = omp_masked_batch(X, M, D, stop=MaxNonzeros(2))
    assert np.allclose(A[:, 0], a, atol=1e-10)
    assert not A[:, 1].any()


def test_masked_dictionary_update_full_mask_is_ls():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((6, 50))
    A = rng.standard_normal((4, 50))
    D = masked_dictionary_update(X, np.ones_like(X, bool), A, np.zeros((6, 4)), ridge=0.0)
    ls = X @ A.T @ np.linalg.inv(A @ A.T)
    want = ls / np.maximum(1.0, np.linalg.norm(ls, axis=0))
    assert np.allclose(D, want, atol=1e-10)


def test_inpaint_full_mask_returns_input():
    img = smooth_image(16, 16)
    D0 = build_dct_dictionary(4, 16)
    out, rep = inpaint(img, np.ones(img.shape, bool), D0,
                       InpaintParams(patch_side=4, n_iter=1))
    assert np.array_equal(out, img)
    assert rep["patches_without_observations"] == 0


def test_inpaint_text_overlay_gain():
    img = smooth_image(32, 32)
    mask = np.ones(img.shape, bool)
    mask[::6, :] = False
    mask[:, 3::7] = False
    corrupt = np.where(mask, img, 255.0)
    D0 = build_dct_dictionary(6, 64)
    out, rep = inpaint(corrupt, mask, D0, InpaintParams(patch_side=6, n_iter=2, sigma_hat=2.0))
    assert psnr(out, img) >= psnr(corrupt, img) + 5
    assert np.array_equal(out[mask], img[mask])
    assert rep["unfilled_pixels"] == 0


def test_inpaint_errors():
    img = smooth_image(16, 16)
    D0 = build_dct_dictionary(4, 16)
    with pytest.raises(SparseKitError):
        inpaint(img, np.ones((15, 16), bool), D0)
    with pytest.raises(SparseKitError):
        inpaint(np.stack([img] * 3, -1), np.ones((16, 16), bool), D0)
    with pytest.raises(SparseKitError):
        inpaint(img, np.ones((16, 16), bool), D0, InpaintParams(patch_side=8))
