"""Patch algebra, preprocessing and the denoising / inpainting pipelines.

Images are float arrays on the [0, 255] scale, ``(h, w)`` for grayscale and
``(h, w, 3)`` for RGB.  A patch is stored as a column: its pixels in
row-major order, with the three channel blocks concatenated for RGB.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import sparse
from scipy.stats import chi2

from .convex import lasso_batch
from .core import SparseKitError, project_unit_columns, psnr
from .dictlearn import FALLBACK_RIDGE, dl_alt_l1, dl_ksvd
from .greedy import Both, GramCache, ResidualSq, _omp_core, _stop_params, omp_batch

FIXED_FACTOR = 1.15


# ---------------------------------------------------------------------------
# Patch geometry
# ---------------------------------------------------------------------------


def _axis_origins(size: int, e: int, stride: int) -> np.ndarray:
    if e > size:
        raise SparseKitError(f"patch side {e} exceeds image side {size}")
    o = list(range(0, size - e + 1, stride))
    if o[-1] != size - e:
        o.append(size - e)
    return np.array(o, dtype=np.intp)


@dataclass(frozen=True)
class PatchGrid:
    """Regular grid of ``e x e`` patches covering an image.

    Origins are spaced by ``stride`` along each axis, and the last row and
    column of origins always touch the image border so every pixel is
    covered.
    """

    height: int
    width: int
    e: int
    stride: int = 1
    channels: int = 1
    rows: np.ndarray = field(init=False, repr=False)
    cols: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.e < 1 or self.stride < 1:
            raise SparseKitError("patch side and stride must be >= 1")
        if self.channels not in (1, 3):
            raise SparseKitError("images have 1 or 3 channels")
        object.__setattr__(self, "rows", _axis_origins(self.height, self.e, self.stride))
        object.__setattr__(self, "cols", _axis_origins(self.width, self.e, self.stride))

    @classmethod
    def for_image(cls, img, e: int, stride: int = 1) -> "PatchGrid":
        img = np.asarray(img)
        ch = 1 if img.ndim == 2 else img.shape[2]
        return cls(img.shape[0], img.shape[1], e, stride, ch)

    @property
    def m(self) -> int:
        return self.e * self.e * self.channels

    @property
    def n(self) -> int:
        return self.rows.size * self.cols.size

    @property
    def origins(self) -> np.ndarray:
        r, c = np.meshgrid(self.rows, self.cols, indexing="ij")
        return np.column_stack([r.ravel(), c.ravel()])

    def counts(self) -> np.ndarray:
        """Number of patches covering each pixel, shape ``(height, width)``."""
        cr = np.zeros(self.height)
        cc = np.zeros(self.width)
        for r in self.rows:
            cr[r: r + self.e] += 1
        for c in self.cols:
            cc[c: c + self.e] += 1
        return np.outer(cr, cc)

    def check(self, img) -> np.ndarray:
        img = np.asarray(img, dtype=np.float64)
        shape = (self.height, self.width) if self.channels == 1 else (self.height, self.width, 3)
        if img.shape != shape:
            raise SparseKitError(f"image shape {img.shape} does not match grid {shape}")
        if not np.all(np.isfinite(img)):
            raise SparseKitError("image has non-finite values")
        return img


def _planes(img, channels):
    return [img] if channels == 1 else [img[..., c] for c in range(3)]


def extract_patches(img, grid: PatchGrid) -> np.ndarray:
    """Stack the grid's patches as columns of an ``(m, n)`` matrix."""
    img = grid.check(img)
    e = grid.e
    blocks = []
    for plane in _planes(img, grid.channels):
        win = sliding_window_view(plane, (e, e))[np.ix_(grid.rows, grid.cols)]
        blocks.append(win.reshape(grid.n, e * e))
    return np.ascontiguousarray(np.concatenate(blocks, axis=1).T)


def scatter(P, grid: PatchGrid) -> np.ndarray:
    """Adjoint of :func:`extract_patches`: add every patch back at its place."""
    P = np.asarray(P, dtype=np.float64)
    if P.shape != (grid.m, grid.n):
        raise SparseKitError(f"patch matrix {P.shape} does not match grid {(grid.m, grid.n)}")
    e = grid.e
    nr, nc = grid.rows.size, grid.cols.size
    out = np.zeros((grid.height, grid.width, grid.channels))
    for ch in range(grid.channels):
        block = P[ch * e * e: (ch + 1) * e * e]
        plane = out[..., ch]
        for di in range(e):
            ri = grid.rows + di
            for dj in range(e):
                vals = block[di * e + dj].reshape(nr, nc)
                # origins are distinct, so the fancy-indexed add has no collisions
                plane[np.ix_(ri, grid.cols + dj)] += vals
    return out[..., 0] if grid.channels == 1 else out


def recombine_average(P, grid: PatchGrid, weights=None) -> np.ndarray:
    """Average overlapping patch estimates pixel by pixel.

    Each pixel is divided by its true coverage count (or by the summed
    ``weights`` of the patches covering it when per-patch weights are
    given).
    """
    if weights is None:
        counts = grid.counts()
        acc = scatter(P, grid)
    else:
        w = np.asarray(weights, dtype=np.float64)
        acc = scatter(np.asarray(P) * w[None, :], grid)
        cov = scatter(np.broadcast_to(w, (grid.m, grid.n)), grid)
        counts = cov if grid.channels == 1 else cov[..., 0]
    if np.any(counts <= 0):
        raise SparseKitError("grid leaves pixels uncovered")
    return acc / (counts if grid.channels == 1 else counts[..., None])


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------


def center_patches(P, channels: int = 1):
    """Remove each column's mean (per channel block for RGB).

    Returns ``(centered, means)`` with ``means`` of shape ``(n,)`` or
    ``(3, n)``.
    """
    P = np.asarray(P, dtype=np.float64)
    if channels == 1:
        mu = P.mean(axis=0)
        return P - mu[None, :], mu
    if P.shape[0] % 3:
        raise SparseKitError("RGB patches need a row count divisible by 3")
    blk = P.reshape(3, P.shape[0] // 3, P.shape[1])
    mu = blk.mean(axis=1)
    return (blk - mu[:, None, :]).reshape(P.shape), mu


def uncenter_patches(P, means) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    means = np.asarray(means)
    if means.ndim == 1:
        return P + means[None, :]
    blk = P.reshape(3, P.shape[0] // 3, P.shape[1])
    return (blk + means[:, None, :]).reshape(P.shape)


def contrast_normalize(P, eta_factor: float = 0.2) -> np.ndarray:
    """Divide each column by ``max(|col|, eta)``, ``eta = eta_factor * mean norm``."""
    if not eta_factor > 0:
        raise SparseKitError("eta_factor must be > 0")
    P = np.asarray(P, dtype=np.float64)
    norms = np.linalg.norm(P, axis=0)
    eta = eta_factor * float(norms.mean())
    return P / np.maximum(norms, eta)[None, :] if eta > 0 else P.copy()


@dataclass(frozen=True)
class WhitenModel:
    U: np.ndarray
    s: np.ndarray
    s_dagger: np.ndarray
    kept_fraction: float

    @property
    def kept(self) -> int:
        return int(np.count_nonzero(self.s_dagger))


def whiten_fit(P, variance_keep: float = 1.0) -> WhitenModel:
    """Whitening transform from the eigendecomposition of ``P P^T / n``.

    ``s`` are the square roots of the eigenvalues (decreasing).  The
    smallest ``k`` with ``sum_{i<=k} s_i^2 >= variance_keep * sum s_i^2`` is
    kept; the pseudo-inverse threshold is the largest dropped ``s``.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] < 2:
        raise SparseKitError("whitening needs at least two samples")
    if not 0 < variance_keep <= 1:
        raise SparseKitError("variance_keep must lie in (0, 1]")
    n = P.shape[1]
    w, U = np.linalg.eigh(P @ P.T / n)
    order = np.argsort(w)[::-1]
    w = np.maximum(w[order], 0.0)
    U = U[:, order]
    s = np.sqrt(w)
    total = float(w.sum())
    if total == 0:
        raise SparseKitError("cannot whiten all-zero data")
    # relative floor on the eigenvalues removes directions that are zero up to rounding
    tiny = w > w[0] * 1e-12
    cum = np.cumsum(w) / total
    k = int(np.searchsorted(cum, variance_keep * (1 - 1e-12)) + 1) if variance_keep < 1 else s.size
    k = min(k, int(tiny.sum()))
    s_dag = np.zeros_like(s)
    s_dag[:k] = 1.0 / s[:k]
    return WhitenModel(U, s, s_dag, float(w[:k].sum() / total))


def whiten_apply(model: WhitenModel, P) -> np.ndarray:
    """``x <- U S^+ U^T x`` for every column."""
    U = model.U
    return U @ (model.s_dagger[:, None] * (U.T @ np.asarray(P, dtype=np.float64)))


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------


def chi2_quantile(tau: float, m: int) -> float:
    """Inverse CDF of the chi-square distribution with ``m`` degrees of freedom."""
    if not 0 < tau < 1:
        raise SparseKitError("tau must lie in (0, 1)")
    return float(chi2.ppf(tau, m))


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian noise level and the rule giving the residual budget ``eps``.

    ``rule="fixed"`` uses ``m (1.15 sigma)^2``; ``rule="chi2"`` uses
    ``sigma^2 F_m^{-1}(tau)``.
    """

    sigma: float
    rule: str = "fixed"
    tau: float = 0.9

    def __post_init__(self):
        if not self.sigma >= 0:
            raise SparseKitError("sigma must be >= 0")
        if self.rule not in ("fixed", "chi2"):
            raise SparseKitError(f"unknown eps rule {self.rule!r}")
        if not 0 < self.tau < 1:
            raise SparseKitError("tau must lie in (0, 1)")

    def epsilon(self, m: int) -> float:
        if self.rule == "fixed":
            return m * (FIXED_FACTOR * self.sigma) ** 2
        return self.sigma**2 * chi2_quantile(self.tau, m)


def add_noise(img, sigma: float, seed: int = 0) -> np.ndarray:
    """Add i.i.d. ``N(0, sigma^2)`` noise (no clamping)."""
    if sigma < 0:
        raise SparseKitError("sigma must be >= 0")
    img = np.asarray(img, dtype=np.float64)
    if sigma == 0:
        return img.copy()
    return img + sigma * np.random.default_rng(seed).standard_normal(img.shape)


# ---------------------------------------------------------------------------
# DCT dictionary
# ---------------------------------------------------------------------------


def build_dct_dictionary(e: int, p: int, channels: int = 1) -> np.ndarray:
    """Overcomplete 2-D DCT dictionary with ``p`` atoms for ``e x e`` patches.

    Uses ``q = ceil(sqrt(p))`` sampled cosines ``cos(pi j (i + 0.5) / q)``
    per axis; atom ``(j1, j2)`` is their outer product, mean-removed except
    for the constant atom and normalized.  Atoms are ordered by total
    frequency ``j1 + j2`` then ``j1``.  For RGB the gray dictionary is
    repeated on each channel block.
    """
    if e < 1 or p < 1:
        raise SparseKitError("patch side and atom count must be >= 1")
    q = math.isqrt(p - 1) + 1
    i = np.arange(e)
    waves = np.cos(np.pi * np.outer(i + 0.5, np.arange(q)) / q)  # (e, q)
    pairs = sorted(((j1, j2) for j1 in range(q) for j2 in range(q)),
                   key=lambda t: (t[0] + t[1], t[0]))[:p]
    D = np.empty((e * e, p))
    for k, (j1, j2) in enumerate(pairs):
        atom = np.outer(waves[:, j1], waves[:, j2]).ravel()
        if k > 0:
            atom = atom - atom.mean()
        nrm = np.linalg.norm(atom)
        D[:, k] = atom / nrm if nrm > 0 else atom
    if channels == 3:
        D = np.kron(np.eye(3), D)
    return D


# ---------------------------------------------------------------------------
# Denoising
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DCT:
    pass


@dataclass(frozen=True)
class GlobalDict:
    D: np.ndarray


@dataclass(frozen=True)
class AdaptiveL0:
    """K-SVD on the noisy patches, started from ``D0`` (default DCT)."""

    D0: np.ndarray | None = None


@dataclass(frozen=True)
class AdaptiveL1:
    """l1 dictionary learning on the noisy patches, started from ``D0``."""

    D0: np.ndarray | None = None


@dataclass
class DenoiseParams:
    """Pipeline settings.

    ``patch_side`` defaults to 8 for ``sigma <= 25`` and 12 above.
    ``final_lambda`` switches the final reconstruction from OMP to the
    Lasso at that regularization.
    """

    patch_side: int | None = None
    p: int = 256
    n_iter: int = 10
    max_train: int = 200_000
    seed: int = 0
    stride: int = 1
    reference: np.ndarray | None = None
    n_threads: int = 1
    final_lambda: float | None = None


def default_patch_side(sigma: float) -> int:
    return 8 if sigma <= 25 else 12


def _training_subset(P, max_train, seed):
    n = P.shape[1]
    if n <= max_train:
        return P
    idx = np.sort(np.random.default_rng(seed).choice(n, size=max_train, replace=False))
    return P[:, idx]


def denoise(img, noise: NoiseModel, scenario=None, params: DenoiseParams | None = None):
    """Patch-based denoising with a fixed or learned dictionary.

    Overlapping patches are centered, coded by OMP until their residual
    energy drops below ``eps`` (from ``noise``), reconstructed, and averaged
    back into the image.  Adaptive scenarios first learn the dictionary on
    the noisy patches themselves.  Returns ``(image, report)``; the report
    holds ``eps``, the patch side, the mean number of atoms per patch and
    the PSNR against ``params.reference`` when given.
    """
    scenario = DCT() if scenario is None else scenario
    params = params or DenoiseParams()
    if not noise.sigma > 0:
        raise SparseKitError("sigma must be > 0 for denoising")
    img = np.asarray(img, dtype=np.float64)
    e = params.patch_side or default_patch_side(noise.sigma)
    grid = PatchGrid.for_image(img, e, params.stride)
    grid.check(img)
    P = extract_patches(img, grid)
    Pc, means = center_patches(P, grid.channels)
    m = grid.m
    eps = noise.epsilon(m)
    p = params.p if not isinstance(scenario, GlobalDict) else np.shape(scenario.D)[1]
    if grid.channels == 3 and p % 3:
        raise SparseKitError("RGB dictionaries need an atom count divisible by 3")
    if isinstance(scenario, GlobalDict):
        D = project_unit_columns(scenario.D)
        if D.shape[0] != m:
            raise SparseKitError(f"dictionary has {D.shape[0]} rows, patches have {m}")
    else:
        dct = build_dct_dictionary(e, p // grid.channels, grid.channels)
        if isinstance(scenario, DCT):
            D = dct
        elif isinstance(scenario, (AdaptiveL0, AdaptiveL1)):
            D0 = dct if scenario.D0 is None else project_unit_columns(scenario.D0)
            if D0.shape[0] != m:
                raise SparseKitError(f"initial dictionary has {D0.shape[0]} rows, patches have {m}")
            train = _training_subset(Pc, params.max_train, params.seed)
            if isinstance(scenario, AdaptiveL0):
                D, _, _ = dl_ksvd(train, D0.shape[1], eps=eps, n_iter=params.n_iter,
                                  D0=D0, n_threads=params.n_threads)
            else:
                D, _, _ = dl_alt_l1(train, D0.shape[1], eps=eps, n_iter=params.n_iter,
                                    D0=D0, n_threads=params.n_threads)
        else:
            raise SparseKitError(f"unknown scenario {scenario!r}")
    if params.final_lambda is not None:
        from .convex import AtLambda

        A = lasso_batch(Pc, D, AtLambda(params.final_lambda), n_threads=params.n_threads,
                        fallback_ridge=FALLBACK_RIDGE)
    else:
        A = omp_batch(Pc, D, ResidualSq(eps), cache=GramCache(D), n_threads=params.n_threads)
    rec = uncenter_patches(D @ A, means)
    out = recombine_average(rec, grid)
    report = {
        "scenario": type(scenario).__name__,
        "patch_side": e,
        "eps": eps,
        "mean_atoms": float(np.count_nonzero(A) / A.shape[1]),
    }
    if params.reference is not None:
        report["psnr"] = psnr(out, params.reference)
        report["psnr_noisy"] = psnr(img, params.reference)
    return out, report


# ---------------------------------------------------------------------------
# Inpainting
# ---------------------------------------------------------------------------


def omp_masked_batch(X, M, D, stop=None, eps_per_obs: float | None = None, k: int | None = None):
    """Masked OMP for every column: only entries with ``M == True`` are fitted.

    Either pass ``stop`` (one rule for all columns) or ``eps_per_obs``,
    giving each column the budget ``|obs| * eps_per_obs`` (optionally
    combined with ``k``).  Columns without observed entries get zero codes.
    """
    X = np.asarray(X, dtype=np.float64)
    M = np.asarray(M, dtype=bool)
    p = D.shape[1]
    A = np.zeros((p, X.shape[1]))
    for i in range(X.shape[1]):
        obs = M[:, i]
        n_obs = int(obs.sum())
        if n_obs == 0:
            continue
        if stop is not None:
            kk, eps = _stop_params(stop, p)
        else:
            rule = ResidualSq(n_obs * eps_per_obs) if k is None else Both(k, n_obs * eps_per_obs)
            kk, eps = _stop_params(rule, p)
        Dm = D[obs]
        sup, a, _ = _omp_core(X[obs, i], Dm, Dm.T @ Dm, kk, eps, None)
        A[sup, i] = a
    return A


def masked_dictionary_update(X, M, A, D, ridge: float = 1e-10) -> np.ndarray:
    """Least-squares dictionary refit on observed entries, row by row.

    Row ``r`` of ``D`` minimizes ``sum_i M_ri (x_ri - d_r a_i)^2`` over the
    atoms used by at least one code; unused atoms are kept.  Columns are
    then projected onto the unit ball.
    """
    X = np.asarray(X, dtype=np.float64)
    Mf = np.asarray(M, dtype=np.float64)
    used = np.flatnonzero(np.any(A != 0, axis=1))
    D = np.array(D, dtype=np.float64)
    if used.size == 0:
        return D
    Au = sparse.csr_matrix(A[used])
    for r in range(X.shape[0]):
        w = Mf[r]
        G = (Au.multiply(w[None, :]) @ Au.T).toarray()
        b = Au @ (w * X[r])
        tr = np.trace(G)
        if tr <= 0:
            continue
        G[np.diag_indices_from(G)] += ridge * tr / used.size
        D[r, used] = np.linalg.solve(G, b)
    return project_unit_columns(D)


@dataclass
class InpaintParams:
    """Inpainting settings.

    ``sigma_hat`` sets the per-patch budget ``|obs| (1.15 sigma_hat)^2``;
    ``k`` optionally caps the number of atoms.
    """

    patch_side: int = 8
    stride: int = 1
    sigma_hat: float = 1.0
    k: int | None = None
    n_iter: int = 5
    keep_observed: bool = True
    max_train: int = 50_000
    seed: int = 0


def _masked_center(P, Mk):
    cnt = Mk.sum(axis=0)
    mu = np.where(cnt > 0, (P * Mk).sum(axis=0) / np.maximum(cnt, 1), 0.0)
    return (P - mu[None, :]) * Mk, mu


def inpaint(img, mask, D0, params: InpaintParams | None = None):
    """Fill missing pixels from a dictionary learned on the observed ones.

    Dictionary learning alternates masked OMP and the masked least-squares
    dictionary refit, starting from ``D0``.  Every patch is then coded on
    its observed pixels and the reconstructions are averaged; patches with
    no observed pixel get zero weight.  Returns ``(image, report)``.
    """
    params = params or InpaintParams()
    img = np.asarray(img, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape[:2]:
        raise SparseKitError("mask shape does not match the image")
    if img.ndim != 2:
        raise SparseKitError("inpainting supports grayscale images")
    grid = PatchGrid.for_image(img, params.patch_side, params.stride)
    D = project_unit_columns(D0)
    if D.shape[0] != grid.m:
        raise SparseKitError(f"dictionary has {D.shape[0]} rows, patches have {grid.m}")
    P = extract_patches(np.where(mask, img, 0.0), grid)
    Mk = extract_patches(mask.astype(np.float64), grid) > 0.5
    Pc, mu = _masked_center(P, Mk)
    eps_obs = (FIXED_FACTOR * params.sigma_hat) ** 2
    has_obs = Mk.any(axis=0)
    train_idx = np.flatnonzero(has_obs)
    if train_idx.size > params.max_train:
        rng = np.random.default_rng(params.seed)
        train_idx = np.sort(rng.choice(train_idx, params.max_train, replace=False))
    for _ in range(params.n_iter):
        A = omp_masked_batch(Pc[:, train_idx], Mk[:, train_idx], D,
                             eps_per_obs=eps_obs, k=params.k)
        D = masked_dictionary_update(Pc[:, train_idx], Mk[:, train_idx], A, D)
    A = omp_masked_batch(Pc, Mk, D, eps_per_obs=eps_obs, k=params.k)
    rec = D @ A + mu[None, :]
    weights = has_obs.astype(np.float64)
    counts = scatter(np.broadcast_to(weights, (grid.m, grid.n)), grid)
    acc = scatter(rec * weights[None, :], grid)
    holes = counts <= 0
    fill = float(img[mask].mean()) if mask.any() else 0.0
    out = np.where(holes, fill, acc / np.maximum(counts, 1e-300))
    if params.keep_observed:
        out = np.where(mask, img, out)
    report = {
        "patches_without_observations": int((~has_obs).sum()),
        "unfilled_pixels": int(holes.sum()),
        "mean_atoms": float(np.count_nonzero(A) / max(A.shape[1], 1)),
    }
    return out, report
