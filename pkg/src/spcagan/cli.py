"""Experiment orchestration and the `spcagan` command-line entry point.

Pipeline: corpus -> features -> select -> standardize -> stratified split
-> augment (train split only) -> detector -> evaluate -> attacks -> report.

Configs are JSON; `--seed`/`--out` flags and the SPCAGAN_SEED/SPCAGAN_OUT
environment variables override every seed and the output directory (flag
beats environment beats file). Emitted CSV artifacts start with a '#'
provenance block (version, config hash, seeds, timestamp); `verify`
re-hashes the config and checks the emitted artifacts against it.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import io
import json
import math
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field, is_dataclass, asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .adversarial import AttackConfig, robustness_eval
from .augment import _append, apply_plan, balance_plan
from .detect import (ClassificationReport, DetectorConfig, build as det_build,
                     evaluate as det_evaluate, fit as det_fit,
                     predict as det_predict, save_detector)
from .errors import (FormatError, InputError, PipelineError,
                     SpcaganError, SpecificationError)
from .features import (FeatureMatrix, extract_features, save_feature_matrix,
                       select_features, standardize)
from .gan import (GanConfig, sample as gan_sample, save_gan,
                  train as gan_train)
from .linmetrics import FidelityScores, fidelity_scores, kde_curve, pca_fit
from .loggen import (CorpusSpec, generate_with_truth, parse_cert_csv,
                     write_cert_csv)

AUGMENTERS = ("NONE", "ROS", "SMOTE", "GMM", "NOISE",
              "CGAN", "ACGAN", "CWGANGP", "SPCAGAN")
GAN_METHODS = ("CGAN", "ACGAN", "CWGANGP", "SPCAGAN")
RESULT_COLUMNS = ("method", "dataset", "attack", "P", "R", "F", "K", "MCC")


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_frac < 1.0:
            raise SpecificationError("train_frac must lie in (0, 1)")


@dataclass(frozen=True)
class AugmenterSpec:
    method: str = "NONE"
    ratio: float = 1.0
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "params", dict(self.params))
        if self.method not in AUGMENTERS:
            raise SpecificationError(
                f"augmenter {self.method!r} not in {AUGMENTERS}")
        if self.ratio <= 0:
            raise SpecificationError("ratio must be > 0")


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusSpec | None
    cert_dir: str | None
    split: SplitSpec
    augmenter: AugmenterSpec
    detector: dict               # DetectorConfig fields minus the derived dims
    attacks: tuple
    output_dir: str
    select_threshold: float = 0.95
    grid: tuple | None = None    # (augmenter specs, detector kinds)

    def __post_init__(self):
        if (self.corpus is None) == (self.cert_dir is None):
            raise SpecificationError(
                "exactly one corpus source: 'corpus' or 'cert_dir'")
        if "kind" not in self.detector:
            raise SpecificationError("detector.kind is required")


@dataclass(eq=False)
class QualityReport:
    fidelity: FidelityScores | None
    detection: ClassificationReport
    robustness: list
    provenance: dict


# ------------------------------------------------------------------ config

def load_config(path, seed_override=None, out_override=None) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file not found: {path}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"config is not valid JSON: {exc}") from exc

    corpus = None
    if raw.get("corpus") is not None:
        c = dict(raw["corpus"])
        c["scenarios"] = frozenset(int(s) for s in c.get("scenarios", (1,)))
        if "start_date" in c:
            c["start_date"] = dt.date.fromisoformat(c["start_date"])
        corpus = CorpusSpec(**c)

    a = dict(raw.get("augmenter") or {})
    augmenter = AugmenterSpec(method=a.get("method", "NONE"),
                              ratio=a.get("ratio", 1.0),
                              seed=a.get("seed", 0),
                              params=a.get("params", {}))
    detector = dict(raw.get("detector") or {})
    attacks = tuple(AttackConfig(**at) for at in raw.get("attacks", ()))

    grid = None
    if raw.get("grid"):
        g = raw["grid"]
        specs = []
        for entry in g.get("augmenters", ()):
            if isinstance(entry, str):
                entry = {"method": entry}
            e = dict(entry)
            specs.append(AugmenterSpec(
                method=e["method"], ratio=e.get("ratio", augmenter.ratio),
                seed=e.get("seed", augmenter.seed),
                params=e.get("params", {})))
        grid = (tuple(specs), tuple(g.get("detectors", ())))

    cfg = ExperimentConfig(
        corpus=corpus, cert_dir=raw.get("cert_dir"),
        split=SplitSpec(**(raw.get("split") or {})), augmenter=augmenter,
        detector=detector, attacks=attacks,
        output_dir=raw.get("output_dir", "spcagan-out"),
        select_threshold=float(raw.get("select_threshold", 0.95)), grid=grid)
    if seed_override is not None:
        cfg = _override_seeds(cfg, int(seed_override))
    if out_override is not None:
        cfg = replace(cfg, output_dir=str(out_override))
    return cfg


def _override_seeds(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    corpus = replace(cfg.corpus, seed=seed) if cfg.corpus else None
    detector = dict(cfg.detector)
    detector["seed"] = seed
    grid = None
    if cfg.grid:
        grid = (tuple(replace(s, seed=seed) for s in cfg.grid[0]),
                cfg.grid[1])
    return replace(cfg, corpus=corpus, split=replace(cfg.split, seed=seed),
                   augmenter=replace(cfg.augmenter, seed=seed),
                   detector=detector,
                   attacks=tuple(replace(at, seed=seed)
                                 for at in cfg.attacks),
                   grid=grid)


def config_dict(cfg: ExperimentConfig) -> dict:
    corpus = None
    if cfg.corpus is not None:
        corpus = {"n_users": cfg.corpus.n_users,
                  "n_days": cfg.corpus.n_days,
                  "n_insiders": cfg.corpus.n_insiders,
                  "scenarios": sorted(cfg.corpus.scenarios),
                  "seed": cfg.corpus.seed,
                  "start_date": cfg.corpus.start_date.isoformat()}
    grid = None
    if cfg.grid:
        grid = {"augmenters": [{"method": s.method, "ratio": s.ratio,
                                "seed": s.seed, "params": dict(s.params)}
                               for s in cfg.grid[0]],
                "detectors": list(cfg.grid[1])}
    return {"corpus": corpus, "cert_dir": cfg.cert_dir,
            "split": asdict(cfg.split),
            "augmenter": {"method": cfg.augmenter.method,
                          "ratio": cfg.augmenter.ratio,
                          "seed": cfg.augmenter.seed,
                          "params": dict(cfg.augmenter.params)},
            "detector": dict(cfg.detector),
            "attacks": [asdict(at) for at in cfg.attacks],
            "output_dir": str(cfg.output_dir),
            "select_threshold": cfg.select_threshold, "grid": grid}


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(config_dict(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _seed_map(cfg: ExperimentConfig) -> dict:
    seeds = {"split": cfg.split.seed, "augmenter": cfg.augmenter.seed,
             "detector": int(cfg.detector.get("seed", 0)),
             "attacks": [at.seed for at in cfg.attacks]}
    if cfg.corpus is not None:
        seeds["corpus"] = cfg.corpus.seed
    return seeds


def _provenance(cfg: ExperimentConfig, dataset: str, method: str) -> dict:
    h = config_hash(cfg)
    return {"config_hash": h, "seeds": _seed_map(cfg),
            "created": dt.datetime.now(dt.timezone.utc)
            .isoformat(timespec="seconds"),
            "version": f"spcagan-{__version__}-g{h[:7]}",
            "dataset": dataset, "method": method}


# ------------------------------------------------------------------- split

def _take(fm: FeatureMatrix, idx) -> FeatureMatrix:
    idx = np.asarray(idx, dtype=np.int64)
    return FeatureMatrix(values=fm.values[idx].copy(),
                         feature_names=fm.feature_names,
                         labels=fm.labels[idx].copy(),
                         user_day_index=tuple(fm.user_day_index[i]
                                              for i in idx))


def stratified_split(fm: FeatureMatrix, frac: float, seed: int):
    """Per-class proportional split, rounded by largest remainder."""
    if not 0.0 < frac < 1.0:
        raise SpecificationError("train fraction must lie in (0, 1)")
    labels = np.asarray(fm.labels)
    if labels.size == 0:
        raise InputError("empty feature matrix")
    classes, counts = np.unique(labels, return_counts=True)
    for c, n in zip(classes, counts):
        if n < 2:
            raise InputError(f"class {int(c)} has a single row; cannot split")
    total_train = int(round(frac * labels.size))
    exact = counts * frac
    base = np.clip(np.floor(exact).astype(int), 1, counts - 1)
    rem = total_train - int(base.sum())
    frac_part = exact - np.floor(exact)
    order = sorted(range(len(classes)), key=lambda i: (-frac_part[i], i))
    idx = 0
    while rem != 0 and idx < 10 * len(order):
        j = order[idx % len(order)]
        if rem > 0 and base[j] < counts[j] - 1:
            base[j] += 1
            rem -= 1
        elif rem < 0 and base[j] > 1:
            base[j] -= 1
            rem += 1
        idx += 1
    rng = np.random.default_rng(seed)
    tr, te = [], []
    for c, n_tr in zip(classes, base):
        perm = rng.permutation(np.flatnonzero(labels == c))
        tr.extend(perm[:n_tr].tolist())
        te.extend(perm[n_tr:].tolist())
    return _take(fm, np.sort(tr)), _take(fm, np.sort(te))


def _plain_split(fm: FeatureMatrix, frac: float, seed: int):
    n = len(fm.labels)
    t = int(round(frac * n))
    if t < 1 or t >= n:
        raise InputError("split would leave an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    return _take(fm, np.sort(perm[:t])), _take(fm, np.sort(perm[t:]))


# ---------------------------------------------------------------- pipeline

@contextmanager
def _stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(f"stage {name}: {exc}", stage=name) from exc


def _matrix_hash(fm: FeatureMatrix) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(fm.values).tobytes())
    h.update(np.ascontiguousarray(np.asarray(fm.labels,
                                             dtype=np.int64)).tobytes())
    return h.hexdigest()


def _dataset_name(cfg: ExperimentConfig) -> str:
    if cfg.cert_dir is not None:
        return Path(cfg.cert_dir).name
    c = cfg.corpus
    return f"gen{c.n_users}x{c.n_days}s{c.seed}"


def _load_features(cfg: ExperimentConfig):
    with _stage("corpus"):
        if cfg.corpus is not None:
            log, _ = generate_with_truth(cfg.corpus)
        else:
            log = parse_cert_csv(cfg.cert_dir).log
    with _stage("features"):
        fm = extract_features(log)
        fm, _report = select_features(fm, cfg.select_threshold)
        fm, mean_vec, std_vec = standardize(fm)
    return _dataset_name(cfg), fm, mean_vec, std_vec


def _prepare(cfg: ExperimentConfig):
    dataset, fm, _, _ = _load_features(cfg)
    with _stage("split"):
        if cfg.split.stratified:
            train, test = stratified_split(fm, cfg.split.train_frac,
                                           cfg.split.seed)
        else:
            train, test = _plain_split(fm, cfg.split.train_frac,
                                       cfg.split.seed)
    return dataset, train, test


def _augmented(train: FeatureMatrix, aug: AugmenterSpec, n_classes: int):
    """Returns (augmented train, synth values, synth labels, gan model)."""
    if aug.method == "NONE":
        return train, None, None, None
    n0 = len(train.labels)
    if aug.method in GAN_METHODS:
        gcfg = GanConfig(mode=aug.method, n_classes=n_classes,
                         feature_dim=train.values.shape[1], seed=aug.seed,
                         **dict(aug.params))
        model = gan_train(train, gcfg)
        classes, counts = np.unique(train.labels, return_counts=True)
        majority = int(counts.max())
        blocks = []
        for c, n in zip(classes, counts):
            if int(n) == majority:
                continue
            target = max(int(n), int(round(aug.ratio * majority)))
            if target > n:
                rows = gan_sample(model, int(c), target - int(n),
                                  seed=aug.seed * 100_003 + int(c))
                blocks.append((int(c), rows, aug.method))
        out = _append(train, blocks)
    else:
        plan = balance_plan(train, aug.method, seed=aug.seed,
                            ratio=aug.ratio, **dict(aug.params))
        out = apply_plan(train, plan)
        model = None
    if len(out.labels) == n0:
        return out, None, None, model
    return out, out.values[n0:], out.labels[n0:], model


def _method_label(method: str) -> str:
    return "REAL" if method == "NONE" else method


def _result_row(method, dataset, attack, rep: ClassificationReport) -> dict:
    return {"method": method, "dataset": dataset, "attack": attack,
            "P": rep.precision, "R": rep.recall, "F": rep.f1,
            "K": rep.kappa, "MCC": rep.mcc}


def run_experiment(cfg: ExperimentConfig) -> QualityReport:
    """Full pipeline; deterministic under the config's seeds."""
    out_dir = Path(cfg.output_dir)
    with _stage("setup"):
        out_dir.mkdir(parents=True, exist_ok=True)
        if not os.access(out_dir, os.W_OK):
            raise InputError(f"output_dir not writable: {out_dir}")
    dataset, train, test = _prepare(cfg)
    n_classes = int(max(train.labels.max(), test.labels.max())) + 1
    test_hash = _matrix_hash(test)

    with _stage("augment"):
        aug_train, synth_vals, synth_labels, gmodel = _augmented(
            train, cfg.augmenter, n_classes)

    fidelity = None
    if synth_vals is not None:
        with _stage("fidelity"):
            fidelity = fidelity_scores(train.values, synth_vals,
                                       real_labels=train.labels,
                                       synth_labels=synth_labels)

    with _stage("detector"):
        dparams = dict(cfg.detector)
        kind = dparams.pop("kind")
        dcfg = DetectorConfig(kind=kind, n_classes=n_classes,
                              feature_dim=train.values.shape[1], **dparams)
        model = det_fit(det_build(dcfg), aug_train)

    with _stage("evaluate"):
        if _matrix_hash(test) != test_hash:
            raise PipelineError(
                "stage evaluate: test-set leakage detected "
                "(test split changed after augmentation)", stage="evaluate")
        pred = det_predict(model, test.values, seed=dcfg.seed)
        detection = det_evaluate(pred, test.labels)

    robustness = []
    for at in cfg.attacks:
        with _stage(f"attack[{at.kind}]"):
            robustness.append(robustness_eval(model, test, at))

    prov = _provenance(cfg, dataset,
                       method=f"{_method_label(cfg.augmenter.method)}+{kind}")
    report = QualityReport(fidelity=fidelity, detection=detection,
                           robustness=robustness, provenance=prov)

    with _stage("artifacts"):
        emit_plots(report, train, synth_vals, out_dir,
                   gan_history=gmodel.epoch_history if gmodel else None)
        _atomic_write(out_dir / "report.json",
                      json.dumps(_scrub(report), indent=2, sort_keys=True)
                      + "\n")
        save_detector(model, out_dir / "detector.npz")
        meta = {"provenance": prov, "checkpoints": ["detector.npz"]}
        if gmodel is not None:
            save_gan(gmodel, out_dir / "gan.npz")
            meta["checkpoints"].append("gan.npz")
            _write_gan_history(gmodel, out_dir / "gan_history.csv", prov)
        _atomic_write(out_dir / "checkpoint.meta.json",
                      json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return report


def run_grid(cfg: ExperimentConfig, augmenters, detector_kinds):
    """One experiment per augmenter x detector cell, sharing the corpus,
    features, split, and each augmenter's synthetic output."""
    out_dir = Path(cfg.output_dir)
    with _stage("setup"):
        out_dir.mkdir(parents=True, exist_ok=True)
    dataset, train, test = _prepare(cfg)
    n_classes = int(max(train.labels.max(), test.labels.max())) + 1
    test_hash = _matrix_hash(test)
    base_params = dict(cfg.detector)
    base_params.pop("kind", None)

    rows = []
    for aug in augmenters:
        with _stage(f"augment[{aug.method}]"):
            aug_train, _sv, _sl, _gm = _augmented(train, aug, n_classes)
        for kind in detector_kinds:
            label = f"{_method_label(aug.method)}+{kind}"
            with _stage(f"cell[{label}]"):
                dcfg = DetectorConfig(kind=kind, n_classes=n_classes,
                                      feature_dim=train.values.shape[1],
                                      **base_params)
                model = det_fit(det_build(dcfg), aug_train)
                if _matrix_hash(test) != test_hash:
                    raise PipelineError(
                        f"stage cell[{label}]: test-set leakage detected",
                        stage=f"cell[{label}]")
                rep = det_evaluate(
                    det_predict(model, test.values, seed=dcfg.seed),
                    test.labels)
            rows.append(_result_row(label, dataset, "NONE", rep))
    prov = _provenance(cfg, dataset, method="grid")
    _write_csv(out_dir / "results.csv", RESULT_COLUMNS, rows, prov)
    return rows


# ---------------------------------------------------------------- emission

def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _provenance_lines(prov: dict):
    return ["# spcagan artifact",
            f"# version {prov['version']}",
            f"# config {prov['config_hash']}",
            f"# seeds {json.dumps(prov['seeds'], sort_keys=True)}",
            f"# created {prov['created']}"]


def _atomic_write(path: Path, text: str) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
    return path


def _write_csv(path, columns, rows, prov) -> Path:
    buf = io.StringIO()
    for line in _provenance_lines(prov):
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) if isinstance(row, dict) else _fmt(row[i])
                    for i, c in enumerate(columns)])
    return _atomic_write(path, buf.getvalue())


def _write_gan_history(model, path, prov) -> Path:
    cols = ("epoch", "l_source", "l_class", "l_spca", "total_g", "total_d",
            "spca_trace", "spca_skips")
    rows = [{"epoch": r.epoch, "l_source": r.losses.l_source,
             "l_class": r.losses.l_class, "l_spca": r.losses.l_spca,
             "total_g": r.losses.total_g, "total_d": r.losses.total_d,
             "spca_trace": r.spca_trace, "spca_skips": r.spca_skips}
            for r in model.epoch_history]
    return _write_csv(path, cols, rows, prov)


def _scrub(obj):
    """Dataclasses/arrays -> JSON-safe plain data; NaN becomes null."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return _scrub(asdict(obj))
    if isinstance(obj, dict):
        return {k: _scrub(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_scrub(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_scrub(v) for v in obj.tolist()]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return None if math.isnan(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _silverman(x: np.ndarray) -> float:
    sd = float(np.std(x))
    iqr = float(np.subtract(*np.percentile(x, [75, 25])))
    h = 0.9 * min(sd, iqr / 1.34 if iqr > 0 else np.inf) * len(x) ** -0.2
    return h if h > 0 else 1e-3


def emit_plots(report: QualityReport, real: FeatureMatrix, synth,
               out_dir, gan_history=None):
    """Write plot-ready CSV point files plus the results table.

    pca_scatter.csv: both row sets in the real data's top-2 PC plane.
    kde_<feature>.csv: density curves on a grid spanning min-3h..max+3h
    of the pooled values. spca_trace.csv: only when a GAN was trained.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if not os.access(out_dir, os.W_OK):
            raise InputError(f"output dir not writable: {out_dir}")
    except OSError as exc:
        raise InputError(f"cannot create output dir {out_dir}: {exc}")
    prov = report.provenance
    files = []

    rows = [_result_row(prov["method"], prov["dataset"], "NONE",
                        report.detection)]
    for rob in report.robustness:
        tag = "DF" if rob.attack.kind == "DEEPFOOL" else rob.attack.kind
        rows.append(_result_row(prov["method"], prov["dataset"], tag,
                                rob.attacked_report))
    files.append(_write_csv(out_dir / "results.csv", RESULT_COLUMNS, rows,
                            prov))

    basis = pca_fit(real.values, 2)
    scatter = [{"pc1": p[0], "pc2": p[1], "source": "real"}
               for p in basis.project(real.values)]
    if synth is not None:
        scatter += [{"pc1": p[0], "pc2": p[1], "source": "synth"}
                    for p in basis.project(np.asarray(synth, dtype=float))]
    files.append(_write_csv(out_dir / "pca_scatter.csv",
                            ("pc1", "pc2", "source"), scatter, prov))

    for j, name in enumerate(real.feature_names):
        rcol = real.values[:, j]
        pooled = (rcol if synth is None
                  else np.concatenate([rcol, np.asarray(synth)[:, j]]))
        h = _silverman(pooled)
        grid = np.linspace(pooled.min() - 3 * h, pooled.max() + 3 * h, 128)
        krows = []
        r_dens = kde_curve(rcol, grid, h)
        s_dens = (kde_curve(np.asarray(synth)[:, j], grid, h)
                  if synth is not None else None)
        for i, g in enumerate(grid):
            row = {"grid": g, "real": r_dens[i]}
            if s_dens is not None:
                row["synth"] = s_dens[i]
            krows.append(row)
        cols = ("grid", "real") + (("synth",) if s_dens is not None else ())
        files.append(_write_csv(out_dir / f"kde_{name}.csv", cols, krows,
                                prov))

    if gan_history is not None:
        trows = [{"epoch": r.epoch, "spca": r.spca_trace}
                 for r in gan_history]
        files.append(_write_csv(out_dir / "spca_trace.csv",
                                ("epoch", "spca"), trows, prov))
    return files


# --------------------------------------------------------------- commands

def _cmd_gen_corpus(cfg: ExperimentConfig):
    if cfg.corpus is None:
        raise SpecificationError(
            "gen-corpus requires a generated-corpus spec under 'corpus'")
    log, truth = generate_with_truth(cfg.corpus)
    out = Path(cfg.output_dir)
    with _stage("artifacts"):
        out.mkdir(parents=True, exist_ok=True)
        write_cert_csv(log, out / "corpus")
        prov = _provenance(cfg, _dataset_name(cfg), "gen-corpus")
        doc = {"provenance": prov,
               "insiders": {u: int(s)
                            for u, s in sorted(truth.insiders.items())},
               "malicious_days": sorted(
                   [u, d.isoformat(), int(s)]
                   for (u, d), s in truth.malicious_days.items())}
        _atomic_write(out / "truth.json",
                      json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"corpus -> {out / 'corpus'} "
          f"({len(truth.malicious_days)} malicious user-days)")


def _cmd_featurize(cfg: ExperimentConfig):
    dataset, fm, mean_vec, std_vec = _load_features(cfg)
    out = Path(cfg.output_dir)
    with _stage("artifacts"):
        out.mkdir(parents=True, exist_ok=True)
        path = save_feature_matrix(fm, out / "features.csv",
                                   mean_vec=mean_vec, std_vec=std_vec)
        prov = _provenance(cfg, dataset, "featurize")
        _atomic_write(out / "provenance.json",
                      json.dumps({"provenance": prov}, indent=2,
                                 sort_keys=True) + "\n")
    print(f"{len(fm.labels)} rows x {fm.values.shape[1]} features -> {path}")


def _cmd_augment(cfg: ExperimentConfig):
    dataset, train, test = _prepare(cfg)
    n_classes = int(max(train.labels.max(), test.labels.max())) + 1
    with _stage("augment"):
        aug_train, synth_vals, _sl, _gm = _augmented(train, cfg.augmenter,
                                                     n_classes)
    out = Path(cfg.output_dir)
    with _stage("artifacts"):
        out.mkdir(parents=True, exist_ok=True)
        save_feature_matrix(aug_train, out / "train_augmented.csv")
        prov = _provenance(cfg, dataset, cfg.augmenter.method)
        _atomic_write(out / "provenance.json",
                      json.dumps({"provenance": prov}, indent=2,
                                 sort_keys=True) + "\n")
    n_synth = 0 if synth_vals is None else len(synth_vals)
    print(f"augmented train split: {len(train.labels)} real + "
          f"{n_synth} synthetic rows -> {out / 'train_augmented.csv'}")


def _cmd_train_gan(cfg: ExperimentConfig):
    if cfg.augmenter.method not in GAN_METHODS:
        raise SpecificationError(
            f"train-gan requires augmenter.method in {GAN_METHODS}")
    dataset, train, test = _prepare(cfg)
    n_classes = int(max(train.labels.max(), test.labels.max())) + 1
    with _stage("gan"):
        _at, _sv, _sl, model = _augmented(train, cfg.augmenter, n_classes)
    out = Path(cfg.output_dir)
    with _stage("artifacts"):
        out.mkdir(parents=True, exist_ok=True)
        save_gan(model, out / "gan.npz")
        prov = _provenance(cfg, dataset, cfg.augmenter.method)
        _write_gan_history(model, out / "gan_history.csv", prov)
        _atomic_write(out / "provenance.json",
                      json.dumps({"provenance": prov}, indent=2,
                                 sort_keys=True) + "\n")
    print(f"{cfg.augmenter.method} trained "
          f"({len(model.epoch_history)} epochs) -> {out / 'gan.npz'}")


def _cmd_run(cfg: ExperimentConfig):
    if cfg.grid:
        rows = run_grid(cfg, *cfg.grid)
        print(f"grid complete: {len(rows)} cells -> "
              f"{Path(cfg.output_dir) / 'results.csv'}")
        return
    report = run_experiment(cfg)
    d = report.detection
    print(f"{report.provenance['method']}: F={d.f1:.4f} K={d.kappa:.4f} "
          f"MCC={d.mcc:.4f} -> {cfg.output_dir}")


def _cmd_train_detector(cfg: ExperimentConfig):
    _cmd_run(replace(cfg, attacks=()))


def _cmd_attack(cfg: ExperimentConfig):
    if not cfg.attacks:
        raise SpecificationError("attack requires a nonempty attacks list")
    _cmd_run(cfg)


def _csv_declared_hash(path: Path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                return None
            if line.startswith("# config "):
                return line.split("# config ", 1)[1].strip()
    return None


def _cmd_verify(cfg: ExperimentConfig):
    out = Path(cfg.output_dir)
    if not out.is_dir():
        raise InputError(f"output dir not found: {out}")
    expect = config_hash(cfg)
    checked, bad = 0, []
    for path in sorted(out.rglob("*.csv")):
        declared = _csv_declared_hash(path)
        if declared is None:
            continue  # plain data CSVs are covered by the JSON artifacts
        checked += 1
        if declared != expect:
            bad.append(path.name)
    for name in ("report.json", "provenance.json", "checkpoint.meta.json"):
        path = out / name
        if not path.is_file():
            continue
        doc = json.loads(path.read_text(encoding="utf-8"))
        declared = (doc.get("provenance") or {}).get("config_hash")
        checked += 1
        if declared != expect:
            bad.append(name)
    if checked == 0:
        raise InputError(f"no provenance-bearing artifacts under {out}")
    if bad:
        raise PipelineError(
            f"stage verify: {len(bad)} artifact(s) do not match config "
            f"{expect[:12]}: {', '.join(sorted(bad))}", stage="verify")
    print(f"verified {checked} artifacts against config {expect[:12]}")


_HANDLERS = {"gen-corpus": _cmd_gen_corpus, "featurize": _cmd_featurize,
             "augment": _cmd_augment, "train-gan": _cmd_train_gan,
             "train-detector": _cmd_train_detector, "attack": _cmd_attack,
             "report": _cmd_run, "run": _cmd_run, "verify": _cmd_verify}


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="path to the JSON experiment config")
    common.add_argument("--seed", type=int, default=None,
                        help="override every seed in the config")
    common.add_argument("--out", default=None,
                        help="override the config's output_dir")
    parser = argparse.ArgumentParser(
        prog="spcagan",
        description="GAN-based log augmentation and anomaly detection")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _HANDLERS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    seed = args.seed
    if seed is None and os.environ.get("SPCAGAN_SEED"):
        seed = int(os.environ["SPCAGAN_SEED"])
    out = args.out or os.environ.get("SPCAGAN_OUT") or None
    try:
        cfg = load_config(args.config, seed_override=seed, out_override=out)
        _HANDLERS[args.command](cfg)
    except SpcaganError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
