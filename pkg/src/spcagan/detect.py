"""Anomaly classifiers: MLP, 1-D CNN, Bayesian NN, ensemble, and hybrid.

The hybrid model concatenates an MLP feature stack with a 1-D conv stack
and finishes with a single variational dense layer; dropout stays active
at prediction time (Monte-Carlo dropout), while the variational layer
predicts with its posterior means — so with dropout_rate = 0 the hybrid
is deterministic. The plain BNN instead samples weights at prediction.

Uncertainty is the per-row standard deviation, across MC passes, of the
probability assigned to the predicted (argmax-of-mean) class.

Dropout draws one mask per MC pass shared across rows, which keeps
predictions row-independent: duplicated inputs get identical outputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import InputError, SpecificationError, TrainingError
from .features import FeatureMatrix

DTYPE = torch.float64
_KINDS = ("MLP", "CNN1D", "BNN", "ENSEMBLE", "HYBRID")
_CNN_CHANNELS = (32, 64)
_MIN_CNN_DIM = 4  # two halving pools must leave at least one position


@dataclass(frozen=True)
class DetectorConfig:
    kind: str
    n_classes: int
    feature_dim: int
    hidden: tuple = (64, 32)
    dropout_rate: float = 0.3
    mc_samples: int = 30
    kl_weight: float = 1.0
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.kind not in _KINDS:
            raise SpecificationError(f"kind {self.kind!r} not in {_KINDS}")
        if self.n_classes < 2:
            raise SpecificationError("n_classes must be >= 2")
        if self.mc_samples < 1:
            raise SpecificationError("mc_samples must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise SpecificationError("dropout_rate must lie in [0, 1)")
        if self.epochs < 0 or self.lr <= 0 or self.batch_size < 1:
            raise SpecificationError("bad epochs/lr/batch_size")


@dataclass(eq=False)
class Prediction:
    class_probs: np.ndarray   # N x C, rows sum to 1
    predicted: np.ndarray     # N, argmax (ties -> lower class)
    uncertainty: np.ndarray   # N, >= 0; zeros for deterministic kinds


@dataclass(frozen=True)
class ClassificationReport:
    precision: float
    recall: float
    f1: float
    kappa: float
    mcc: float
    confusion: tuple          # n_classes x n_classes counts


# ------------------------------------------------------------ layer pieces

def _init_uniform(t: torch.Tensor, fan_in: int, g: torch.Generator):
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        t.uniform_(-bound, bound, generator=g)


class VariationalLinear(nn.Module):
    """Dense layer with a Gaussian posterior (mean, log-variance) per weight.

    Prior is standard normal; forward with sample=True draws one weight
    set by reparameterization, sample=False uses the posterior means.
    """

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.w_mu = nn.Parameter(torch.empty(out_features, in_features,
                                             dtype=DTYPE))
        self.w_logvar = nn.Parameter(torch.full((out_features, in_features),
                                                -5.0, dtype=DTYPE))
        self.b_mu = nn.Parameter(torch.empty(out_features, dtype=DTYPE))
        self.b_logvar = nn.Parameter(torch.full((out_features,), -5.0,
                                                dtype=DTYPE))

    def forward(self, x, g: torch.Generator | None = None,
                sample: bool = True):
        if sample:
            ew = torch.randn(self.w_mu.shape, generator=g, dtype=DTYPE)
            eb = torch.randn(self.b_mu.shape, generator=g, dtype=DTYPE)
            w = self.w_mu + torch.exp(0.5 * self.w_logvar) * ew
            b = self.b_mu + torch.exp(0.5 * self.b_logvar) * eb
        else:
            w, b = self.w_mu, self.b_mu
        return F.linear(x, w, b)

    def kl(self) -> torch.Tensor:
        """KL(N(mu, sigma^2) || N(0, 1)) summed over all weights."""
        total = torch.zeros((), dtype=DTYPE)
        for mu, logvar in ((self.w_mu, self.w_logvar),
                           (self.b_mu, self.b_logvar)):
            total = total + 0.5 * torch.sum(
                torch.exp(logvar) + mu ** 2 - 1.0 - logvar)
        return total


def _shared_dropout(x, p: float, g: torch.Generator | None, active: bool):
    if not active or p == 0.0:
        return x
    mask = (torch.rand(1, x.shape[1], generator=g, dtype=DTYPE) >= p)
    return x * mask.to(DTYPE) / (1.0 - p)


def _mlp_stack(feature_dim: int, hidden) -> nn.Sequential:
    dims = [feature_dim, *hidden]
    layers = []
    for a, b in zip(dims, dims[1:]):
        layers += [nn.Linear(a, b), nn.ReLU()]
    return nn.Sequential(*layers).to(DTYPE)


class _CnnStack(nn.Module):
    """Two conv blocks over the feature vector as a 1-channel sequence."""

    def __init__(self, feature_dim: int):
        super().__init__()
        if feature_dim < _MIN_CNN_DIM:
            raise SpecificationError(
                f"CNN1D needs feature_dim >= {_MIN_CNN_DIM} for two pooling "
                f"stages; got {feature_dim}")
        self.conv1 = nn.Conv1d(1, _CNN_CHANNELS[0], 3, padding=1).to(DTYPE)
        self.conv2 = nn.Conv1d(_CNN_CHANNELS[0], _CNN_CHANNELS[1], 3,
                               padding=1).to(DTYPE)
        self.out_dim = _CNN_CHANNELS[1] * (feature_dim // 2 // 2)

    def forward(self, x):
        h = x.unsqueeze(1)
        h = F.max_pool1d(F.relu(self.conv1(h)), 2)
        h = F.max_pool1d(F.relu(self.conv2(h)), 2)
        return h.flatten(1)


class _Mlp(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.stack = _mlp_stack(cfg.feature_dim, cfg.hidden)
        self.head = nn.Linear(cfg.hidden[-1], cfg.n_classes).to(DTYPE)

    def logits(self, x, g=None, sample=False, dropout=False):
        return self.head(self.stack(x))


class _Cnn(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.stack = _CnnStack(cfg.feature_dim)
        self.head = nn.Linear(self.stack.out_dim, cfg.n_classes).to(DTYPE)

    def logits(self, x, g=None, sample=False, dropout=False):
        return self.head(self.stack(x))


class _Bnn(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        dims = [cfg.feature_dim, *cfg.hidden, cfg.n_classes]
        self.layers = nn.ModuleList(
            [VariationalLinear(a, b) for a, b in zip(dims, dims[1:])])

    def logits(self, x, g=None, sample=True, dropout=False):
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h, g=g, sample=sample)
            if i < len(self.layers) - 1:
                h = F.relu(h)
        return h

    def kl_total(self):
        return sum(layer.kl() for layer in self.layers)


class _Hybrid(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.mlp = _mlp_stack(cfg.feature_dim, cfg.hidden)
        self.cnn = _CnnStack(cfg.feature_dim)
        self.dropout_rate = cfg.dropout_rate
        self.head = VariationalLinear(cfg.hidden[-1] + self.cnn.out_dim,
                                      cfg.n_classes)

    def logits(self, x, g=None, sample=True, dropout=True):
        h = torch.cat([self.mlp(x), self.cnn(x)], dim=1)
        h = _shared_dropout(h, self.dropout_rate, g, dropout)
        return self.head(h, g=g, sample=sample)

    def kl_total(self):
        return self.head.kl()


@dataclass(eq=False)
class DetectorModel:
    config: DetectorConfig
    net: nn.Module | None = None          # single-network kinds
    members: tuple = ()                   # ENSEMBLE: (mlp_model, cnn_model)
    loss_history: list = field(default_factory=list)


def _seed_init(module: nn.Module, g: torch.Generator):
    for m in module.modules():
        if isinstance(m, nn.Linear):
            _init_uniform(m.weight, m.in_features, g)
            _init_uniform(m.bias, m.in_features, g)
        elif isinstance(m, nn.Conv1d):
            fan_in = m.in_channels * m.kernel_size[0]
            _init_uniform(m.weight, fan_in, g)
            _init_uniform(m.bias, fan_in, g)
        elif isinstance(m, VariationalLinear):
            _init_uniform(m.w_mu, m.in_features, g)
            _init_uniform(m.b_mu, m.in_features, g)
            # logvars keep their small constant init


def build(cfg: DetectorConfig) -> DetectorModel:
    """Seeded construction; identical cfg gives identical parameters."""
    if cfg.kind == "ENSEMBLE":
        mlp = build(replace(cfg, kind="MLP"))
        cnn = build(replace(cfg, kind="CNN1D", seed=cfg.seed + 1))
        return DetectorModel(config=cfg, members=(mlp, cnn))
    net = {"MLP": _Mlp, "CNN1D": _Cnn, "BNN": _Bnn,
           "HYBRID": _Hybrid}[cfg.kind](cfg)
    g = torch.Generator().manual_seed(cfg.seed)
    _seed_init(net, g)
    return DetectorModel(config=cfg, net=net)


# ----------------------------------------------------------------- training

def _check_data(X: np.ndarray, y: np.ndarray, cfg: DetectorConfig):
    if X.shape[1] != cfg.feature_dim:
        raise InputError(f"data has {X.shape[1]} features, config says "
                         f"{cfg.feature_dim}")
    if np.unique(y).size < 2:
        raise InputError("training data must contain at least 2 classes")
    if y.min() < 0 or y.max() >= cfg.n_classes:
        raise InputError("labels exceed configured n_classes")


def fit(model: DetectorModel, train: FeatureMatrix) -> DetectorModel:
    """Minibatch training for cfg.epochs; returns the same (mutated) model."""
    cfg = model.config
    X = np.asarray(train.values, dtype=np.float64)
    y = np.asarray(train.labels)
    _check_data(X, y, cfg)
    if cfg.kind == "ENSEMBLE":
        for member in model.members:
            fit(member, train)
        model.loss_history = [
            {"loss": (a["loss"] + b["loss"]) / 2.0, "kl": 0.0}
            for a, b in zip(*[m.loss_history for m in model.members])]
        return model

    Xt = torch.as_tensor(X, dtype=DTYPE)
    yt = torch.as_tensor(y, dtype=torch.long)
    net = model.net
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    g = torch.Generator().manual_seed(cfg.seed ^ 0x2F4A7C15)
    n = Xt.shape[0]
    variational = cfg.kind in ("BNN", "HYBRID")

    for epoch in range(cfg.epochs):
        perm = torch.randperm(n, generator=g)
        tot_loss = tot_kl = 0.0
        n_b = 0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            opt.zero_grad()
            logits = net.logits(Xt[idx], g=g, sample=True, dropout=True)
            loss = F.cross_entropy(logits, yt[idx])
            kl_val = 0.0
            if variational:
                kl = cfg.kl_weight * net.kl_total() / n
                loss = loss + kl
                kl_val = float(kl.detach())
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} batch {bi}",
                    trace=[h["loss"] for h in model.loss_history])
            loss.backward()
            opt.step()
            tot_loss += float(loss.detach())
            tot_kl += kl_val
            n_b += 1
        model.loss_history.append(
            {"loss": tot_loss / n_b, "kl": tot_kl / n_b})
    return model


# ---------------------------------------------------------------- predict

def _stochastic(cfg: DetectorConfig) -> bool:
    if cfg.kind == "BNN":
        return True
    if cfg.kind == "HYBRID":
        return cfg.dropout_rate > 0.0
    return False


def _forward_probs(model: DetectorModel, Xt, g, stochastic_pass: bool):
    cfg = model.config
    if cfg.kind == "ENSEMBLE":
        probs = [_forward_probs(m, Xt, g, stochastic_pass)
                 for m in model.members]
        return (probs[0] + probs[1]) / 2.0
    if cfg.kind == "BNN":
        logits = model.net.logits(Xt, g=g, sample=stochastic_pass)
    elif cfg.kind == "HYBRID":
        # posterior means at prediction; MC-dropout is the stochastic part
        logits = model.net.logits(Xt, g=g, sample=False,
                                  dropout=stochastic_pass)
    else:
        logits = model.net.logits(Xt)
    return torch.softmax(logits, dim=1)


def predict(model: DetectorModel, X: np.ndarray, seed: int = 0) -> Prediction:
    """Class probabilities, labels, and MC uncertainty for rows of X."""
    cfg = model.config
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != cfg.feature_dim:
        raise InputError(f"expected (N, {cfg.feature_dim}) input, "
                         f"got {X.shape}")
    Xt = torch.as_tensor(X, dtype=DTYPE)
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        if _stochastic(cfg):
            passes = torch.stack([
                _forward_probs(model, Xt, g, stochastic_pass=True)
                for _ in range(cfg.mc_samples)])
        else:
            passes = _forward_probs(model, Xt, g, stochastic_pass=False)
            passes = passes.unsqueeze(0)
    probs = passes.mean(dim=0).numpy()
    predicted = probs.argmax(axis=1)
    per_pass = passes.numpy()[:, np.arange(len(predicted)), predicted]
    uncertainty = (per_pass.std(axis=0, ddof=0)
                   if passes.shape[0] > 1
                   else np.zeros(len(predicted)))
    return Prediction(class_probs=probs, predicted=predicted,
                      uncertainty=uncertainty)


# ----------------------------------------------------------------- metrics

def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise InputError("empty evaluation input")
    if y_true.shape != y_pred.shape:
        raise InputError("length mismatch between truth and predictions")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def macro_prf(cm: np.ndarray):
    """Macro precision/recall/F1; zero-support classes are excluded."""
    support = cm.sum(axis=1)
    pred_tot = cm.sum(axis=0)
    diag = np.diag(cm)
    ps, rs, fs = [], [], []
    for c in range(cm.shape[0]):
        if support[c] == 0:
            continue
        p = diag[c] / pred_tot[c] if pred_tot[c] else 0.0
        r = diag[c] / support[c]
        f = 2 * p * r / (p + r) if (p + r) else 0.0
        ps.append(p)
        rs.append(r)
        fs.append(f)
    return float(np.mean(ps)), float(np.mean(rs)), float(np.mean(fs))


def cohen_kappa(cm: np.ndarray) -> float:
    n = cm.sum()
    p_o = np.trace(cm) / n
    p_e = float((cm.sum(axis=1) * cm.sum(axis=0)).sum()) / (n * n)
    denom = 1.0 - p_e
    if denom == 0.0:  # both raters constant: no chance-corrected signal
        return 0.0
    return float((p_o - p_e) / denom)


def matthews_corrcoef(cm: np.ndarray) -> float:
    """Multiclass MCC (the R_k statistic); 0 when the denominator vanishes."""
    t = cm.sum(axis=1).astype(float)   # truth marginals
    p = cm.sum(axis=0).astype(float)   # prediction marginals
    s = float(cm.sum())
    c = float(np.trace(cm))
    num = c * s - float(t @ p)
    den = math.sqrt((s * s - float(p @ p)) * (s * s - float(t @ t)))
    return num / den if den else 0.0


def classification_report(y_true, y_pred, n_classes: int) -> ClassificationReport:
    cm = confusion_matrix(y_true, y_pred, n_classes)
    p, r, f = macro_prf(cm)
    return ClassificationReport(
        precision=p, recall=r, f1=f,
        kappa=cohen_kappa(cm), mcc=matthews_corrcoef(cm),
        confusion=tuple(tuple(int(v) for v in row) for row in cm))


def evaluate(pred: Prediction, truth) -> ClassificationReport:
    return classification_report(truth, pred.predicted,
                                 pred.class_probs.shape[1])


# ------------------------------------------------------------- persistence

def save_detector(model: DetectorModel, path) -> None:
    """Same flat npz container layout as the GAN checkpoints."""
    arrays = {"__config__": np.array(json.dumps(asdict(model.config)))}
    if model.config.kind == "ENSEMBLE":
        for tag, member in zip(("m", "c"), model.members):
            for name, p in member.net.state_dict().items():
                arrays[f"{tag}:{name}"] = p.numpy()
    else:
        for name, p in model.net.state_dict().items():
            arrays[f"n:{name}"] = p.numpy()
    np.savez(path, **arrays)


def load_detector(path) -> DetectorModel:
    with np.load(path, allow_pickle=False) as z:
        raw = json.loads(str(z["__config__"]))
        cfg = DetectorConfig(**{k: tuple(v) if isinstance(v, list) else v
                                for k, v in raw.items()})
        model = build(cfg)
        if cfg.kind == "ENSEMBLE":
            for tag, member in zip(("m", "c"), model.members):
                state = {k.split(":", 1)[1]: torch.as_tensor(z[k])
                         for k in z.files if k.startswith(tag + ":")}
                member.net.load_state_dict(state)
        else:
            state = {k.split(":", 1)[1]: torch.as_tensor(z[k])
                     for k in z.files if k.startswith("n:")}
            model.net.load_state_dict(state)
    return model
