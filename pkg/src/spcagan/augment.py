"""Classical oversampling baselines over a labeled feature matrix.

Four methods share one plan shape: random oversampling (ROS), SMOTE
interpolation, per-class Gaussian-mixture sampling (own EM), and
variance-scaled noise jitter. All operate per class, append synthetic
rows after the originals, and are deterministic under the plan seed
(each class uses an independently derived stream, so classes could be
processed in parallel without changing the output).
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .errors import InputError, SpecificationError, TrainingError
from .features import FeatureMatrix

_METHODS = ("ROS", "SMOTE", "GMM", "NOISE")


@dataclass(frozen=True)
class AugmentPlan:
    method: str
    per_class_target: Mapping
    seed: int
    k_neighbors: int = 5     # SMOTE
    n_components: int = 1    # GMM
    sigma: float = 0.05      # NOISE

    def __post_init__(self):
        if self.method not in _METHODS:
            raise SpecificationError(
                f"method {self.method!r} not in {_METHODS}")
        if self.k_neighbors < 1:
            raise SpecificationError("k_neighbors must be >= 1")
        if self.n_components < 1:
            raise SpecificationError("n_components must be >= 1")
        if self.sigma < 0:
            raise SpecificationError("sigma must be >= 0")
        for c, t in self.per_class_target.items():
            if int(t) < 0:
                raise SpecificationError(f"target for class {c} is negative")


def balance_plan(fm: FeatureMatrix, method: str, seed: int,
                 ratio: float = 1.0, **params) -> AugmentPlan:
    """Plan that raises every minority class toward ratio x majority count."""
    classes, counts = np.unique(fm.labels, return_counts=True)
    majority = int(counts.max())
    targets = {}
    for c, n in zip(classes, counts):
        if n == majority:
            continue
        targets[int(c)] = max(int(n), int(round(ratio * majority)))
    return AugmentPlan(method=method, per_class_target=targets, seed=seed,
                       **params)


def _class_rows(fm: FeatureMatrix, cls: int) -> np.ndarray:
    return np.flatnonzero(fm.labels == cls)


def _extras(fm: FeatureMatrix, plan: AugmentPlan):
    """Per-class (indices, n_extra) honoring the targets-cover-counts rule."""
    out = []
    for cls in sorted(plan.per_class_target):
        target = int(plan.per_class_target[cls])
        idx = _class_rows(fm, int(cls))
        if target < idx.size:
            raise SpecificationError(
                f"class {cls}: target {target} below current count {idx.size}")
        if target == idx.size:
            continue
        if idx.size == 0:
            raise InputError(f"class {cls} has no rows to oversample")
        out.append((int(cls), idx, target - idx.size))
    return out


def _append(fm: FeatureMatrix, blocks) -> FeatureMatrix:
    if not blocks:
        return fm
    new_rows = np.vstack([fm.values] + [b[1] for b in blocks])
    new_labels = np.concatenate(
        [fm.labels] + [np.full(len(b[1]), b[0], dtype=fm.labels.dtype)
                       for b in blocks])
    tag_date = dt.date(1970, 1, 1)
    index = list(fm.user_day_index)
    for cls, rows, method in blocks:
        index += [(f"@synthetic/{method}/c{cls}", tag_date)] * len(rows)
    return FeatureMatrix(values=new_rows, feature_names=fm.feature_names,
                         labels=new_labels, user_day_index=tuple(index))


def _rng(plan: AugmentPlan, cls: int) -> np.random.Generator:
    return np.random.default_rng([plan.seed, cls])


def ros(fm: FeatureMatrix, plan: AugmentPlan) -> FeatureMatrix:
    """Duplicate random same-class rows (with replacement) up to the targets."""
    blocks = []
    for cls, idx, n_extra in _extras(fm, plan):
        rng = _rng(plan, cls)
        picks = idx[rng.integers(idx.size, size=n_extra)]
        blocks.append((cls, fm.values[picks].copy(), "ROS"))
    return _append(fm, blocks)


def smote(fm: FeatureMatrix, plan: AugmentPlan) -> FeatureMatrix:
    """Interpolate x + lambda (x_nn - x) between same-class nearest neighbors."""
    k = plan.k_neighbors
    blocks = []
    for cls, idx, n_extra in _extras(fm, plan):
        if idx.size < k + 1:
            raise InputError(
                f"class {cls} has {idx.size} rows; SMOTE with "
                f"k_neighbors={k} needs at least {k + 1}")
        X = fm.values[idx]
        d = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
        neighbors = []
        for i in range(idx.size):
            order = [j for j in np.argsort(d[i], kind="stable") if j != i]
            neighbors.append(order[:k])
        rng = _rng(plan, cls)
        rows = np.empty((n_extra, fm.f))
        for s in range(n_extra):
            i = int(rng.integers(idx.size))
            j = neighbors[i][int(rng.integers(k))]
            lam = rng.random()
            rows[s] = X[i] + lam * (X[j] - X[i])
        blocks.append((cls, rows, "SMOTE"))
    return _append(fm, blocks)


def noise_jitter(fm: FeatureMatrix, plan: AugmentPlan) -> FeatureMatrix:
    """Copy random same-class rows plus N(0, sigma^2 diag(class variances))."""
    blocks = []
    for cls, idx, n_extra in _extras(fm, plan):
        rng = _rng(plan, cls)
        scale = plan.sigma * np.sqrt(fm.values[idx].var(axis=0))
        picks = idx[rng.integers(idx.size, size=n_extra)]
        rows = fm.values[picks] + rng.normal(size=(n_extra, fm.f)) * scale
        blocks.append((cls, rows, "NOISE"))
    return _append(fm, blocks)


# ----------------------------------------------------------------- GMM / EM

@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray       # (m,)
    means: np.ndarray         # (m, F)
    covariances: np.ndarray   # (m, F, F)
    log_likelihood: float     # total, at convergence
    n_iter: int
    converged: bool


def _mvn_logpdf(X: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = X.shape[1]
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise np.linalg.LinAlgError("covariance not positive definite")
    diff = X - mean
    quad = np.einsum("ij,ij->i", diff, np.linalg.solve(cov, diff.T).T)
    return -0.5 * (d * np.log(2.0 * np.pi) + logdet + quad)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def fit_gmm(X: np.ndarray, n_components: int, seed: int,
            tol: float = 1e-6, max_iter: int = 200,
            ridge: float = 1e-6) -> GmmModel:
    """Full-covariance EM; the ridge keeps covariance diagonals positive."""
    X = np.asarray(X, dtype=float)
    n, f = X.shape
    if n < n_components:
        raise InputError(f"{n} rows cannot support {n_components} components")
    rng = np.random.default_rng(seed)
    m = n_components
    means = X[rng.choice(n, size=m, replace=False)].copy()
    base_cov = np.cov(X, rowvar=False, ddof=0).reshape(f, f) + ridge * np.eye(f)
    covs = np.stack([base_cov.copy() for _ in range(m)])
    weights = np.full(m, 1.0 / m)

    trace = []
    prev = -np.inf
    for it in range(1, max_iter + 1):
        log_p = np.stack(
            [np.log(weights[j]) + _mvn_logpdf(X, means[j], covs[j])
             for j in range(m)], axis=1)
        row_ll = _logsumexp(log_p, axis=1)
        ll = float(row_ll.sum())
        trace.append(ll)
        resp = np.exp(log_p - row_ll[:, None])
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-10)
        weights = nk / n
        means = (resp.T @ X) / nk[:, None]
        for j in range(m):
            diff = X - means[j]
            covs[j] = (resp[:, j][:, None] * diff).T @ diff / nk[j]
            covs[j][np.diag_indices(f)] += ridge
        if abs(ll - prev) < tol:
            return GmmModel(weights, means, covs, ll, it, True)
        prev = ll
    raise TrainingError(
        f"EM did not converge within {max_iter} iterations "
        f"(last delta {abs(trace[-1] - trace[-2]):.3g})", trace=trace)


def sample_gmm(model: GmmModel, n: int, rng: np.random.Generator) -> np.ndarray:
    comp = rng.choice(len(model.weights), size=n, p=model.weights)
    out = np.empty((n, model.means.shape[1]))
    for j in range(len(model.weights)):
        mask = comp == j
        if mask.any():
            out[mask] = rng.multivariate_normal(
                model.means[j], model.covariances[j], size=int(mask.sum()))
    return out


def gmm_sample(fm: FeatureMatrix, plan: AugmentPlan) -> FeatureMatrix:
    """Fit a per-class mixture and sample it up to the targets."""
    blocks = []
    for cls, idx, n_extra in _extras(fm, plan):
        minimum = plan.n_components * (fm.f + 1)
        if idx.size < minimum:
            raise InputError(
                f"class {cls} has {idx.size} rows; a {plan.n_components}-"
                f"component mixture over {fm.f} features needs >= {minimum}")
        rng = _rng(plan, cls)
        model = fit_gmm(fm.values[idx], plan.n_components,
                        seed=int(rng.integers(2 ** 31)))
        blocks.append((cls, sample_gmm(model, n_extra, rng), "GMM"))
    return _append(fm, blocks)


_DISPATCH = {"ROS": ros, "SMOTE": smote, "GMM": gmm_sample,
             "NOISE": noise_jitter}


def apply_plan(fm: FeatureMatrix, plan: AugmentPlan) -> FeatureMatrix:
    return _DISPATCH[plan.method](fm, plan)


def with_method(plan: AugmentPlan, method: str) -> AugmentPlan:
    """Same targets and seed, different method (for baseline sweeps)."""
    return replace(plan, method=method)
