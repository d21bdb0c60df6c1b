"""Conditional GAN core: networks, the four training modes, sampling.

Modes share one generator shape (dense stack, leaky-ReLU, linear output)
and differ in the discriminator head layout and objective:

  CGAN     D sees (x, one-hot y), source head only, log-likelihood game
  ACGAN    D sees x alone, sigmoid source head + softmax class head
  SPCAGAN  ACGAN plus a generator penalty spca_weight * (k - SPCA(real, fake))
           computed per minibatch, differentiable through the fake batch
  CWGANGP  conditional critic (no sigmoid), Wasserstein loss with gradient
           penalty, several critic steps per generator step

Everything runs in float64 on CPU; training is deterministic under the
config seed (local torch generators only, no global RNG state touched).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from . import linmetrics
from .errors import InputError, SpcaSkip, SpecificationError, TrainingError
from .features import FeatureMatrix

DTYPE = torch.float64
_MODES = ("CGAN", "ACGAN", "CWGANGP", "SPCAGAN")
_EPS = 1e-7


@dataclass(frozen=True)
class GanConfig:
    mode: str
    n_classes: int
    feature_dim: int
    latent_dim: int = 64
    gen_hidden: tuple = (32, 64, 64, 128, 512, 1024)
    disc_hidden: tuple | None = None   # defaults to reversed gen_hidden
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    batch_size: int = 128
    max_epochs: int = 100
    leaky_slope: float = 0.2
    spca_weight: float = 1.0
    spca_k: int = 2
    gp_weight: float = 10.0
    critic_steps: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "gen_hidden", tuple(self.gen_hidden))
        if self.disc_hidden is None:
            object.__setattr__(self, "disc_hidden",
                               tuple(reversed(self.gen_hidden)))
        else:
            object.__setattr__(self, "disc_hidden", tuple(self.disc_hidden))
        if self.mode not in _MODES:
            raise SpecificationError(f"mode {self.mode!r} not in {_MODES}")
        if self.n_classes < 1 or self.feature_dim < 1 or self.latent_dim < 1:
            raise SpecificationError("dims must be >= 1")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise SpecificationError("learning rates must be > 0")
        if self.batch_size <= self.spca_k + 1:
            raise SpecificationError(
                f"batch_size {self.batch_size} must exceed spca_k+1 = "
                f"{self.spca_k + 1}")
        if self.max_epochs < 0 or self.critic_steps < 1:
            raise SpecificationError("bad epoch/critic-step counts")


@dataclass(frozen=True)
class LossBundle:
    l_source: float
    l_class: float
    l_spca: float
    total_g: float
    total_d: float


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    losses: LossBundle
    spca_trace: float
    spca_skips: int


@dataclass
class GanModel:
    generator: nn.Module
    discriminator: nn.Module
    config: GanConfig
    epoch_history: list = field(default_factory=list)


def one_hot(labels: torch.Tensor, n_classes: int) -> torch.Tensor:
    return torch.nn.functional.one_hot(labels.long(), n_classes).to(DTYPE)


def _init_linear(layer: nn.Linear, g: torch.Generator):
    bound = 1.0 / math.sqrt(layer.in_features)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=g)
        layer.bias.uniform_(-bound, bound, generator=g)


class Generator(nn.Module):
    def __init__(self, cfg: GanConfig):
        super().__init__()
        dims = [cfg.latent_dim + cfg.n_classes, *cfg.gen_hidden]
        layers = []
        for a, b in zip(dims, dims[1:]):
            layers += [nn.Linear(a, b), nn.LeakyReLU(cfg.leaky_slope)]
        layers.append(nn.Linear(dims[-1], cfg.feature_dim))
        self.net = nn.Sequential(*layers).to(DTYPE)

    def forward(self, z, y_onehot):
        return self.net(torch.cat([z, y_onehot], dim=1))


class Discriminator(nn.Module):
    """Trunk + source head; ACGAN-family models add the class head."""

    def __init__(self, cfg: GanConfig):
        super().__init__()
        conditional = cfg.mode in ("CGAN", "CWGANGP")
        dims = [cfg.feature_dim + (cfg.n_classes if conditional else 0),
                *cfg.disc_hidden]
        layers = []
        for a, b in zip(dims, dims[1:]):
            layers += [nn.Linear(a, b), nn.LeakyReLU(cfg.leaky_slope)]
        self.trunk = nn.Sequential(*layers).to(DTYPE)
        self.source_head = nn.Linear(dims[-1], 1).to(DTYPE)
        self.class_head = (nn.Linear(dims[-1], cfg.n_classes).to(DTYPE)
                           if cfg.mode in ("ACGAN", "SPCAGAN") else None)

    def forward(self, x):
        h = self.trunk(x)
        logit = self.source_head(h).squeeze(-1)
        cls = self.class_head(h) if self.class_head is not None else None
        return logit, cls


def build_gan(cfg: GanConfig) -> GanModel:
    """Seed-deterministic construction; same cfg twice gives equal weights."""
    g = torch.Generator().manual_seed(cfg.seed)
    gen, disc = Generator(cfg), Discriminator(cfg)
    for module in (gen, disc):
        for m in module.modules():
            if isinstance(m, nn.Linear):
                _init_linear(m, g)
    return GanModel(generator=gen, discriminator=disc, config=cfg)


# ------------------------------------------------------------ loss pieces

def source_loss(d_real_prob: torch.Tensor, d_fake_prob: torch.Tensor):
    """L_S = E[log p(real)] + E[log(1 - p(fake))]; clamped at 1e-7."""
    p_r = torch.clamp(d_real_prob, _EPS, 1.0 - _EPS)
    p_f = torch.clamp(d_fake_prob, _EPS, 1.0 - _EPS)
    return torch.log(p_r).mean() + torch.log(1.0 - p_f).mean()


def class_loss(class_probs_real, labels_real, class_probs_fake, labels_fake):
    """L_C = E[log p(true class | real)] + E[log p(conditioned class | fake)]."""
    def term(probs, labels):
        n_cls = probs.shape[1]
        if labels.numel() and (labels.min() < 0 or labels.max() >= n_cls):
            raise InputError(
                f"label outside [0, {n_cls - 1}]: "
                f"{int(labels.min())}..{int(labels.max())}")
        p = torch.clamp(probs, _EPS, 1.0)
        return torch.log(p[torch.arange(len(labels)), labels.long()]).mean()

    return term(class_probs_real, labels_real) + \
        term(class_probs_fake, labels_fake)


def spca_regularizer(x_real: torch.Tensor, x_fake: torch.Tensor, k: int):
    """k - SPCA(real batch, fake batch), differentiable through x_fake.

    The real batch's loadings are constants (no gradient); the fake side
    keeps its decomposition in the graph. Raises SpcaSkip when either
    batch's spectrum is unsafe: decomposition failure, fewer than k usable
    components, or an eigenvalue gap below 1e-9 between components k and
    k+1 (where the subspace — and its gradient — stops being well-defined).
    """
    if x_real.shape[1] != x_fake.shape[1]:
        raise InputError("real/fake feature dims differ")
    if min(x_real.shape[0], x_fake.shape[0]) <= k:
        raise SpcaSkip(f"batch rows must exceed k={k}")

    def loadings(x, grad: bool):
        xc = x - x.mean(dim=0, keepdim=True)
        n, d = x.shape
        # After centering the batch has rank <= n-1. A wide batch (n-1 < d)
        # leaves d-n+1 repeated zero singular values, and svd/eigh backward
        # divides by spectral gaps, so differentiating the d-sized
        # factorization yields NaN. Eigendecompose the smaller Gram side
        # instead: its tail holds at most one structural zero.
        wide = n - 1 < d
        try:
            if not grad:
                with torch.no_grad():
                    _, s, vt = torch.linalg.svd(xc, full_matrices=False)
                lam, vecs = s ** 2, vt.T
            else:
                gram = xc @ xc.T if wide else xc.T @ xc
                lam_asc, vecs_asc = torch.linalg.eigh(gram)
                lam = torch.flip(lam_asc, (0,))
                vecs = torch.flip(vecs_asc, (1,))
        except Exception as e:  # torch raises LinAlgError subclasses
            raise SpcaSkip(f"decomposition failed: {e}") from e
        if not torch.isfinite(lam).all():
            raise SpcaSkip("non-finite spectrum")
        if lam.numel() < k:
            raise SpcaSkip(f"only {lam.numel()} components, need {k}")
        eigs = lam.detach() / (n - 1)
        if lam.numel() > k and float(eigs[k - 1] - eigs[k]) < 1e-9:
            raise SpcaSkip(
                f"eigenvalue gap {float(eigs[k - 1] - eigs[k]):.3g} < 1e-9 "
                f"between components {k} and {k + 1}")
        if grad and wide:
            # recover right singular vectors from the row-side eigenvectors;
            # the gap check above bounds lam[:k] away from zero
            return (xc.T @ vecs[:, :k]) / torch.sqrt(lam[:k])
        return vecs[:, :k]

    L = loadings(x_real, grad=False).detach()
    M = loadings(x_fake, grad=True)
    return k - torch.sum((L.T @ M) ** 2)


def gradient_penalty(critic_fn, x_real: torch.Tensor, x_fake: torch.Tensor,
                     g: torch.Generator | None = None):
    """Mean (||grad_x critic(x~)||_2 - 1)^2 on random interpolates."""
    if x_real.shape != x_fake.shape:
        raise InputError("real/fake shapes differ")
    eps = torch.rand(x_real.shape[0], 1, generator=g, dtype=x_real.dtype)
    x_mid = (eps * x_real + (1.0 - eps) * x_fake).detach().requires_grad_(True)
    score = critic_fn(x_mid)
    if not score.requires_grad:  # critic ignores its input: gradient is 0
        return (torch.zeros((), dtype=x_real.dtype) - 1.0) ** 2
    grad, = torch.autograd.grad(score.sum(), x_mid, create_graph=True,
                                allow_unused=True)
    if grad is None:
        return (torch.zeros((), dtype=x_real.dtype) - 1.0) ** 2
    norms = torch.sqrt(torch.clamp((grad ** 2).sum(dim=1), min=1e-24))
    return ((norms - 1.0) ** 2).mean()


# ---------------------------------------------------------------- training

def _epoch_spca_trace(model: GanModel, X, y, epoch: int) -> float:
    """spca(real sample, generated sample) on the library metric, no grads."""
    cfg = model.config
    g = torch.Generator().manual_seed(cfg.seed * 1_000_003 + epoch)
    m = min(X.shape[0], 512)
    ridx = torch.randperm(X.shape[0], generator=g)[:m]
    z = torch.randn(m, cfg.latent_dim, generator=g, dtype=DTYPE)
    with torch.no_grad():
        fake = model.generator(z, one_hot(y[ridx], cfg.n_classes))
    try:
        return linmetrics.spca(X[ridx].numpy(), fake.numpy(), cfg.spca_k)
    except InputError:
        return float("nan")


def train(data: FeatureMatrix, cfg: GanConfig) -> GanModel:
    """Alternating minibatch updates per Algorithm-style loop; see module doc."""
    X = torch.as_tensor(np.asarray(data.values, dtype=np.float64), dtype=DTYPE)
    y = torch.as_tensor(np.asarray(data.labels), dtype=torch.long)
    if X.shape[1] != cfg.feature_dim:
        raise InputError(f"data has {X.shape[1]} features, "
                         f"config says {cfg.feature_dim}")
    if int(y.max()) >= cfg.n_classes or int(y.min()) < 0:
        raise InputError("labels exceed configured n_classes")
    if cfg.mode in ("ACGAN", "SPCAGAN") and torch.unique(y).numel() < 2:
        raise InputError(f"{cfg.mode} needs at least 2 classes in the data")

    model = build_gan(cfg)
    gen, disc = model.generator, model.discriminator
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.lr_d, betas=(0.5, 0.999))
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.lr_g, betas=(0.5, 0.999))
    gloop = torch.Generator().manual_seed(cfg.seed ^ 0x5DEECE66D)
    n = X.shape[0]
    use_spca = cfg.mode == "SPCAGAN" and cfg.spca_weight != 0.0

    for epoch in range(cfg.max_epochs):
        sums = {"l_source": 0.0, "l_class": 0.0, "l_spca": 0.0,
                "total_g": 0.0, "total_d": 0.0}
        n_d = n_g = n_reg = skips = 0
        perm = torch.randperm(n, generator=gloop)
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            xb, yb = X[idx], y[idx]
            b = len(idx)
            z = torch.randn(b, cfg.latent_dim, generator=gloop, dtype=DTYPE)
            yf = torch.randint(0, cfg.n_classes, (b,), generator=gloop)
            yf_oh = one_hot(yf, cfg.n_classes)
            fake = gen(z, yf_oh)

            # ---- discriminator / critic step
            opt_d.zero_grad()
            if cfg.mode == "CWGANGP":
                yb_oh = one_hot(yb, cfg.n_classes)
                s_real, _ = disc(torch.cat([xb, yb_oh], dim=1))
                s_fake, _ = disc(torch.cat([fake.detach(), yf_oh], dim=1))
                wdist = s_real.mean() - s_fake.mean()
                gp = gradient_penalty(
                    lambda x: disc(torch.cat([x, yf_oh], dim=1))[0],
                    xb, fake.detach(), g=gloop)
                d_loss = -wdist + cfg.gp_weight * gp
                l_src, l_cls = float(wdist.detach()), 0.0
            elif cfg.mode == "CGAN":
                yb_oh = one_hot(yb, cfg.n_classes)
                lr_real, _ = disc(torch.cat([xb, yb_oh], dim=1))
                lr_fake, _ = disc(torch.cat([fake.detach(), yf_oh], dim=1))
                ls = source_loss(torch.sigmoid(lr_real), torch.sigmoid(lr_fake))
                d_loss = -ls
                l_src, l_cls = float(ls.detach()), 0.0
            else:  # ACGAN / SPCAGAN
                lr_real, cl_real = disc(xb)
                lr_fake, cl_fake = disc(fake.detach())
                ls = source_loss(torch.sigmoid(lr_real), torch.sigmoid(lr_fake))
                lc = class_loss(torch.softmax(cl_real, dim=1), yb,
                                torch.softmax(cl_fake, dim=1), yf)
                d_loss = -(ls + lc)
                l_src, l_cls = float(ls.detach()), float(lc.detach())
            if not torch.isfinite(d_loss):
                raise TrainingError(
                    f"non-finite discriminator loss at epoch {epoch} "
                    f"batch {bi}", trace=[r.losses.total_d
                                          for r in model.epoch_history])
            d_loss.backward()
            opt_d.step()
            sums["total_d"] += float(d_loss.detach())
            sums["l_source"] += l_src
            sums["l_class"] += l_cls
            n_d += 1

            # ---- generator step (CWGANGP: every critic_steps-th batch)
            if cfg.mode == "CWGANGP" and (bi + 1) % cfg.critic_steps != 0:
                continue
            opt_g.zero_grad()
            if cfg.mode == "CWGANGP":
                s_fake, _ = disc(torch.cat([fake, yf_oh], dim=1))
                g_loss = -s_fake.mean()
            elif cfg.mode == "CGAN":
                lr_fake, _ = disc(torch.cat([fake, yf_oh], dim=1))
                p_f = torch.clamp(torch.sigmoid(lr_fake), _EPS, 1.0 - _EPS)
                g_loss = torch.log(1.0 - p_f).mean()
            else:
                lr_fake, cl_fake = disc(fake)
                p_f = torch.clamp(torch.sigmoid(lr_fake), _EPS, 1.0 - _EPS)
                p_c = torch.clamp(torch.softmax(cl_fake, dim=1), _EPS, 1.0)
                g_loss = torch.log(1.0 - p_f).mean() - \
                    torch.log(p_c[torch.arange(b), yf]).mean()
                if use_spca:
                    try:
                        reg = spca_regularizer(xb, fake, cfg.spca_k)
                        g_loss = g_loss + cfg.spca_weight * reg
                        sums["l_spca"] += float(reg.detach())
                        n_reg += 1
                    except SpcaSkip:
                        skips += 1
            if not torch.isfinite(g_loss):
                raise TrainingError(
                    f"non-finite generator loss at epoch {epoch} batch {bi}",
                    trace=[r.losses.total_g for r in model.epoch_history])
            g_loss.backward()
            opt_g.step()
            sums["total_g"] += float(g_loss.detach())
            n_g += 1

        losses = LossBundle(
            l_source=sums["l_source"] / max(n_d, 1),
            l_class=sums["l_class"] / max(n_d, 1),
            l_spca=sums["l_spca"] / max(n_reg, 1),
            total_g=sums["total_g"] / max(n_g, 1),
            total_d=sums["total_d"] / max(n_d, 1),
        )
        model.epoch_history.append(EpochRecord(
            epoch=epoch, losses=losses,
            spca_trace=_epoch_spca_trace(model, X, y, epoch),
            spca_skips=skips))
    return model


def sample(model: GanModel, class_id: int, n: int, seed: int = 0) -> np.ndarray:
    """n generator draws conditioned on class_id; (n, feature_dim) ndarray."""
    cfg = model.config
    if not 0 <= class_id < cfg.n_classes:
        raise InputError(f"class_id {class_id} outside [0, {cfg.n_classes - 1}]")
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(n, cfg.latent_dim, generator=g, dtype=DTYPE)
    labels = torch.full((n,), class_id, dtype=torch.long)
    with torch.no_grad():
        out = model.generator(z, one_hot(labels, cfg.n_classes))
    return out.numpy().copy()


# ------------------------------------------------------------- persistence

def save_gan(model: GanModel, path) -> None:
    """Flat npz container: JSON config plus named parameter arrays."""
    arrays = {"__config__": np.array(json.dumps(asdict(model.config)))}
    for prefix, module in (("g", model.generator), ("d", model.discriminator)):
        for name, p in module.state_dict().items():
            arrays[f"{prefix}:{name}"] = p.numpy()
    np.savez(path, **arrays)


def load_gan(path) -> GanModel:
    with np.load(path, allow_pickle=False) as z:
        cfg_raw = json.loads(str(z["__config__"]))
        cfg = GanConfig(**{k: tuple(v) if isinstance(v, list) else v
                           for k, v in cfg_raw.items()})
        model = build_gan(cfg)
        for prefix, module in (("g", model.generator),
                               ("d", model.discriminator)):
            state = {k.split(":", 1)[1]: torch.as_tensor(z[k])
                     for k in z.files if k.startswith(prefix + ":")}
            module.load_state_dict(state)
    return model


def export_history(model: GanModel, csv_path) -> None:
    """Per-epoch losses + SPCA trace, one row per epoch."""
    import csv
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "l_source", "l_class", "l_spca",
                    "total_g", "total_d", "spca_trace", "spca_skips"])
        for r in model.epoch_history:
            w.writerow([r.epoch, r.losses.l_source, r.losses.l_class,
                        r.losses.l_spca, r.losses.total_g, r.losses.total_d,
                        r.spca_trace, r.spca_skips])
