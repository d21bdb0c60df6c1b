"""Linear-subspace and distribution-similarity metrics.

Everything here is plain numpy over read-only arrays: PCA by SVD, the
subspace similarity factor (sum of squared cosines of principal angles),
an elbow heuristic for choosing the component count, silhouette scoring,
an aggregate distribution-similarity score, and Gaussian KDE curves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class PcaBasis:
    """Top-k principal components of a data matrix.

    loadings            F x k orthonormal matrix, one component per column
    explained_variance  k nonincreasing variances (eigenvalues of the
                        sample covariance)
    center              F-vector subtracted before projection
    """

    loadings: np.ndarray
    explained_variance: np.ndarray
    center: np.ndarray

    @property
    def k(self) -> int:
        return self.loadings.shape[1]

    def project(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.center) @ self.loadings

    def back_project(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=float) @ self.loadings.T + self.center


@dataclass(frozen=True)
class FidelityScores:
    """Fidelity summary for one synthetic-data batch vs its real reference."""

    spca: float
    similarity_score: float
    silhouette_real: float
    silhouette_synth: float
    k_used: int


def _centered_svd(X: np.ndarray):
    X = np.asarray(X, dtype=float)
    center = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - center, full_matrices=False)
    return center, s, vt


def pca_fit(X: np.ndarray, k: int) -> PcaBasis:
    """Fit the top-k principal components of X (rows = observations).

    Components are the right singular vectors of the centered matrix; the
    sign of each component is fixed so that its largest-magnitude entry is
    positive, which makes the basis reproducible across SVD backends.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InputError("pca_fit needs a 2-D matrix with at least 2 rows")
    n, f = X.shape
    k_max = min(n - 1, f)
    if not 1 <= k <= k_max:
        raise InputError(f"k={k} out of range [1, {k_max}] for a {n}x{f} matrix")
    center, s, vt = _centered_svd(X)
    loadings = vt[:k].T.copy()
    # sign convention: largest-|entry| of each component is positive
    for j in range(k):
        i = int(np.argmax(np.abs(loadings[:, j])))
        if loadings[i, j] < 0:
            loadings[:, j] = -loadings[:, j]
    explained = (s[:k] ** 2) / (n - 1)
    return PcaBasis(loadings=loadings, explained_variance=explained, center=center)


def elbow_k(explained_variance) -> int:
    """Pick a component count at the knee of the cumulative variance curve.

    The curve (i, v1 + ... + vi) is compared against the chord joining its
    first and last points; the index with the largest perpendicular
    distance to the chord is the knee. Flat spectra (all distances zero)
    give 1, as does a single entry.
    """
    v = np.asarray(list(explained_variance), dtype=float)
    if v.size == 0:
        raise InputError("explained_variance is empty")
    if np.any(np.diff(v) > 1e-12):
        raise InputError("explained_variance must be non-increasing")
    m = v.size
    if m == 1:
        return 1
    c = np.cumsum(v)
    x = np.arange(1, m + 1, dtype=float)
    dx, dy = m - 1.0, c[-1] - c[0]
    norm = np.hypot(dx, dy)
    if norm == 0.0:
        return 1
    # distance of (x_i, c_i) from the line through (1, c_0) and (m, c_-1)
    dist = np.abs(dy * (x - 1.0) - dx * (c - c[0])) / norm
    return int(np.argmax(dist)) + 1


def _effective_rank(s: np.ndarray, n: int, f: int) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 0
    tol = max(n, f) * np.finfo(float).eps * s[0]
    return int(np.sum(s > tol))


def spca(A: np.ndarray, B: np.ndarray, k: int) -> float:
    """Similarity of the top-k principal subspaces of two matrices.

    Returns sum_ij cos^2(theta_ij) over the k x k principal-component
    pairs, equal to ||L^T M||_F^2 for the loading matrices L, M. The value
    lies in [0, k]: k for identical subspaces, 0 for orthogonal ones.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise InputError(
            f"column counts differ: {A.shape} vs {B.shape}; "
            "spca compares matrices over the same feature space"
        )
    for name, X in (("A", A), ("B", B)):
        _, s, _ = _centered_svd(X)
        r = _effective_rank(s, *X.shape)
        if r < k:
            raise InputError(
                f"matrix {name} has effective rank {r} < k={k}; lower k to at most {r}"
            )
    L = pca_fit(A, k).loadings
    M = pca_fit(B, k).loadings
    return float(np.sum((L.T @ M) ** 2))


def silhouette(X: np.ndarray, labels) -> float:
    """Mean silhouette coefficient under the Euclidean metric.

    For each point, a = mean distance to its own cluster, b = smallest
    mean distance to any other cluster, score = (b - a) / max(a, b).
    Singleton clusters contribute 0, as do points where a = b = 0.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    if X.shape[0] != labels.shape[0]:
        raise InputError("X and labels length mismatch")
    if X.shape[0] < 3:
        raise InputError("silhouette needs at least 3 points")
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise InputError("silhouette needs at least 2 clusters")
    d = np.sqrt(np.maximum(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1), 0.0))
    scores = np.zeros(X.shape[0])
    masks = {c: labels == c for c in uniq}
    for i in range(X.shape[0]):
        own = masks[labels[i]]
        n_own = int(own.sum())
        if n_own == 1:
            continue
        a = d[i, own].sum() / (n_own - 1)
        b = min(d[i, masks[c]].mean() for c in uniq if c != labels[i])
        m = max(a, b)
        scores[i] = 0.0 if m == 0.0 else (b - a) / m
    return float(scores.mean())


def _rmse(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.size == 0:
        return 0.0
    return float(np.sqrt(np.mean((u - v) ** 2)))


def _corr_upper(X: np.ndarray) -> np.ndarray:
    f = X.shape[1]
    if f < 2:
        return np.empty(0)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.corrcoef(X, rowvar=False)
    c = np.nan_to_num(c, nan=0.0)  # constant columns carry no correlation signal
    iu = np.triu_indices(f, k=1)
    return c[iu]


def similarity_score(real: np.ndarray, synth: np.ndarray) -> float:
    """Aggregate distribution similarity of a synthetic matrix to a real one.

    Both matrices are standardized by the real data's per-column mean/std,
    then three RMSEs are computed (per-feature means, per-feature standard
    deviations, upper-triangle Pearson correlations), each mapped to (0, 1]
    via 1 / (1 + rmse), and averaged. Identical matrices score 1.
    """
    real = np.asarray(real, dtype=float)
    synth = np.asarray(synth, dtype=float)
    if real.ndim != 2 or synth.ndim != 2 or real.shape[1] != synth.shape[1]:
        raise InputError("real and synth must be 2-D with equal column counts")
    if real.shape[0] < 2 or synth.shape[0] < 2:
        raise InputError("need at least 2 rows on each side")
    mu = real.mean(axis=0)
    sd = real.std(axis=0)
    sd = np.where(sd == 0.0, 1.0, sd)
    r = (real - mu) / sd
    s = (synth - mu) / sd
    parts = [
        _rmse(r.mean(axis=0), s.mean(axis=0)),
        _rmse(r.std(axis=0), s.std(axis=0)),
        _rmse(_corr_upper(r), _corr_upper(s)),
    ]
    return float(np.mean([1.0 / (1.0 + p) for p in parts]))


def kde_curve(x, grid, bandwidth: float) -> np.ndarray:
    """Gaussian kernel density estimate of samples x evaluated on grid."""
    x = np.asarray(x, dtype=float).ravel()
    grid = np.asarray(grid, dtype=float).ravel()
    if x.size == 0:
        raise InputError("kde_curve needs at least one sample")
    if bandwidth <= 0:
        raise InputError("bandwidth must be positive")
    z = (grid[:, None] - x[None, :]) / bandwidth
    dens = np.exp(-0.5 * z * z).sum(axis=1)
    return dens / (x.size * bandwidth * np.sqrt(2.0 * np.pi))


def fidelity_scores(real: np.ndarray, synth: np.ndarray,
                    real_labels=None, synth_labels=None,
                    k: int | None = None) -> FidelityScores:
    """Bundle the three fidelity metrics for a synthetic batch.

    k defaults to the elbow of the real data's variance spectrum and is
    reused for the synthetic side so scores stay comparable across
    generators. Silhouettes are computed within each side over its own
    class labels (a flat synthetic silhouette flags mode collapse); sides
    without at least two labelled classes report NaN.
    """
    real = np.asarray(real, dtype=float)
    synth = np.asarray(synth, dtype=float)
    if k is None:
        k_max = min(real.shape[0] - 1, real.shape[1])
        basis = pca_fit(real, k_max)
        k = elbow_k(basis.explained_variance)
    k = min(k, min(synth.shape[0] - 1, synth.shape[1]))

    def _side_silhouette(X, labels):
        if labels is None:
            return float("nan")
        labels = np.asarray(labels)
        if np.unique(labels).size < 2 or X.shape[0] < 3:
            return float("nan")
        return silhouette(X, labels)

    return FidelityScores(
        spca=spca(real, synth, k),
        similarity_score=similarity_score(real, synth),
        silhouette_real=_side_silhouette(real, real_labels),
        silhouette_synth=_side_silhouette(synth, synth_labels),
        k_used=int(k),
    )
