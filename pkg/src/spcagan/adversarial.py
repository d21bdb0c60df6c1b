"""White-box attacks (FGSM, DeepFool) and the robustness-evaluation protocol.

Attacks run against the detector's deterministic forward pass (posterior
means, dropout off), in standardized feature space, with no clipping to
observed feature ranges.

The robustness protocol: train a surrogate MLP on the malicious rows of
the test split, attack those rows against the surrogate, relabel the
perturbed rows as normal, append them to the test set, and score the
detector under test on both the clean and the injected sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .detect import (ClassificationReport, DetectorConfig, DetectorModel,
                     build, evaluate, fit, predict)
from .errors import InputError, SpecificationError
from .features import FeatureMatrix

_KINDS = ("FGSM", "DEEPFOOL")


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    epsilon: float = 0.1
    max_iter: int = 50
    overshoot: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise SpecificationError(f"kind {self.kind!r} not in {_KINDS}")
        if self.epsilon < 0:
            raise SpecificationError("epsilon must be >= 0")
        if self.max_iter < 1:
            raise SpecificationError("max_iter must be >= 1")
        if self.overshoot < 0:
            raise SpecificationError("overshoot must be >= 0")


@dataclass(eq=False)
class DeepFoolResult:
    x_adv: np.ndarray
    flipped: np.ndarray   # rows that never flip keep their last iterate
    n_iter: np.ndarray


@dataclass(frozen=True)
class RobustnessReport:
    clean_report: ClassificationReport
    attacked_report: ClassificationReport
    attack: AttackConfig
    mean_perturbation_linf: float
    mean_perturbation_l2: float


# ------------------------------------------------------------ model access

def _require_detector(model):
    if not isinstance(model, DetectorModel):
        raise InputError("attacks need a differentiable DetectorModel")


def _scores(model: DetectorModel, x: torch.Tensor) -> torch.Tensor:
    """Per-class scores, differentiable and deterministic.

    Logits for single networks; log of the averaged member probabilities
    for the ensemble (same argmax as its prediction rule).
    """
    kind = model.config.kind
    if kind == "ENSEMBLE":
        probs = (torch.softmax(_scores(model.members[0], x), dim=1)
                 + torch.softmax(_scores(model.members[1], x), dim=1)) / 2.0
        return torch.log(probs.clamp_min(1e-12))
    if kind == "BNN":
        return model.net.logits(x, sample=False)
    if kind == "HYBRID":
        return model.net.logits(x, sample=False, dropout=False)
    return model.net.logits(x)


def _check_x(model: DetectorModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.config.feature_dim:
        raise InputError(f"expected (N, {model.config.feature_dim}) input, "
                         f"got {X.shape}")
    return X


# ----------------------------------------------------------------- attacks

def fgsm(model: DetectorModel, X: np.ndarray, y: np.ndarray,
         cfg: AttackConfig) -> np.ndarray:
    """X + epsilon * sign of the input gradient of the loss at true labels."""
    _require_detector(model)
    X = _check_x(model, X)
    y = np.asarray(y)
    if y.shape != (X.shape[0],):
        raise InputError("labels must be one per row")
    if y.size and (y.min() < 0 or y.max() >= model.config.n_classes):
        raise InputError("labels exceed the model's n_classes")
    if cfg.epsilon == 0.0:
        return X.copy()
    Xt = torch.as_tensor(X, dtype=torch.float64).requires_grad_(True)
    yt = torch.as_tensor(y, dtype=torch.long)
    scores = _scores(model, Xt)
    logp = torch.log_softmax(scores, dim=1)
    loss = torch.nn.functional.nll_loss(logp, yt)
    grad, = torch.autograd.grad(loss, Xt)
    return (X + cfg.epsilon * torch.sign(grad).numpy())


def _row_deepfool(model, x0: torch.Tensor, target: int, cfg: AttackConfig):
    n_classes = model.config.n_classes
    over = 1.0 + cfg.overshoot
    r_raw = torch.zeros_like(x0)
    n_it = 0
    for it in range(cfg.max_iter):
        x = (x0 + over * r_raw).detach().requires_grad_(True)
        scores = _scores(model, x)[0]
        if int(scores.argmax()) != target:
            break
        grads = [torch.autograd.grad(scores[k], x, retain_graph=True)[0][0]
                 for k in range(n_classes)]
        best = None
        for k in range(n_classes):
            if k == target:
                continue
            wk = grads[k] - grads[target]
            norm = float(torch.linalg.vector_norm(wk))
            if norm < 1e-30:
                continue
            fk = float(scores[k].detach() - scores[target].detach())
            dist = abs(fk) / norm
            if best is None or dist < best[0]:
                best = (dist, fk, wk, norm)
        if best is None:  # flat scores: no boundary direction to follow
            break
        _, fk, wk, norm = best
        # small nudge pushes just past the linearized boundary
        r_raw = r_raw + ((abs(fk) + 1e-9) / (norm * norm)) * wk.detach()
        n_it = it + 1
    x_final = x0 + over * r_raw
    with torch.no_grad():
        flipped = int(_scores(model, x_final).argmax()) != target
    return x_final, flipped, n_it


def deepfool(model: DetectorModel, X: np.ndarray, cfg: AttackConfig,
             y: np.ndarray | None = None) -> DeepFoolResult:
    """Iterative minimal-perturbation attack (multiclass linearization).

    The flip target is the model's own prediction per row, or y when
    given; rows already off-target at entry come back unperturbed with
    n_iter = 0. The final perturbation carries the (1 + overshoot) factor.
    """
    _require_detector(model)
    X = _check_x(model, X)
    Xt = torch.as_tensor(X, dtype=torch.float64)
    if y is None:
        with torch.no_grad():
            targets = _scores(model, Xt).argmax(dim=1).numpy()
    else:
        targets = np.asarray(y)
        if targets.shape != (X.shape[0],):
            raise InputError("labels must be one per row")
    out = np.empty_like(X)
    flipped = np.zeros(X.shape[0], dtype=bool)
    n_iter = np.zeros(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        xf, fl, it = _row_deepfool(model, Xt[i:i + 1], int(targets[i]), cfg)
        out[i] = xf.detach().numpy()[0]
        flipped[i] = fl
        n_iter[i] = it
    return DeepFoolResult(x_adv=out, flipped=flipped, n_iter=n_iter)


# ------------------------------------------------------------- evaluation

_SURROGATE_HIDDEN = (32,)
_SURROGATE_EPOCHS = 40


def _surrogate(test: FeatureMatrix, mal: np.ndarray, n_classes: int,
               seed: int) -> DetectorModel:
    fm = FeatureMatrix(values=test.values[mal],
                       feature_names=test.feature_names,
                       labels=test.labels[mal],
                       user_day_index=tuple(test.user_day_index[i]
                                            for i in np.flatnonzero(mal)))
    cfg = DetectorConfig(kind="MLP", n_classes=n_classes,
                         feature_dim=test.values.shape[1],
                         hidden=_SURROGATE_HIDDEN, dropout_rate=0.0,
                         mc_samples=1, epochs=_SURROGATE_EPOCHS, lr=0.01,
                         batch_size=32, seed=seed)
    return fit(build(cfg), fm)


def robustness_eval(target: DetectorModel, test: FeatureMatrix,
                    cfg: AttackConfig) -> RobustnessReport:
    """Score a trained detector before and after label-reversal injection."""
    n_classes = target.config.n_classes
    labels = np.asarray(test.labels)
    if labels.size and labels.max() >= n_classes:
        raise InputError("test labels exceed the detector's n_classes")
    for s in range(1, n_classes):
        if not np.any(labels == s):
            raise InputError(f"scenario S{s} missing from test split")
    mal = labels > 0
    X_mal = np.asarray(test.values, dtype=np.float64)[mal]

    surrogate = _surrogate(test, mal, n_classes, cfg.seed)
    if cfg.kind == "FGSM":
        x_adv = fgsm(surrogate, X_mal, labels[mal], cfg)
        keep = np.ones(len(X_mal), dtype=bool)
    else:
        res = deepfool(surrogate, X_mal, cfg)
        x_adv = res.x_adv
        keep = res.flipped  # unflipped rows excluded from the means

    delta = x_adv - X_mal
    if keep.any():
        linf = float(np.abs(delta[keep]).max(axis=1).mean())
        l2 = float(np.linalg.norm(delta[keep], axis=1).mean())
    else:
        linf = l2 = 0.0

    clean_pred = predict(target, test.values, seed=cfg.seed)
    clean_report = evaluate(clean_pred, labels)

    X_att = np.vstack([test.values, x_adv])
    y_att = np.concatenate([labels, np.zeros(len(x_adv), dtype=labels.dtype)])
    att_pred = predict(target, X_att, seed=cfg.seed)
    attacked_report = evaluate(att_pred, y_att)

    return RobustnessReport(clean_report=clean_report,
                            attacked_report=attacked_report, attack=cfg,
                            mean_perturbation_linf=linf,
                            mean_perturbation_l2=l2)
