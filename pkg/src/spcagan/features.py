"""Per-user-per-day behavior features extracted from an ActivityLog.

Each (user, day) with any activity becomes one row of 45 named features:
10 logon, 12 email, 8 http, 5 file, 5 device, 5 psychometric. Rows are
labeled by the scenario rule sweep (0 = no rule fired). Text columns are
scored by a pluggable polarity lexicon.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import re
from dataclasses import astuple, dataclass
from pathlib import Path
from urllib.parse import urlparse

import numpy as np

from .errors import FormatError, InputError
from .loggen import (
    ActivityLog,
    CLOUD_SITES,
    HACK_SITES,
    INTERNAL_DOMAIN,
    JOB_SITES,
    detect_scenarios,
    is_after_hours,
    is_weekend,
)

DEFAULT_LEXICON = {
    "good": 1.0, "great": 1.0, "useful": 1.0, "happy": 1.0, "excellent": 1.0,
    "love": 1.0, "nice": 1.0, "fine": 1.0,
    "bad": -1.0, "angry": -1.0, "terrible": -1.0, "hate": -1.0,
    "broken": -1.0, "awful": -1.0, "furious": -1.0,
}

_TOKEN_RE = re.compile(r"[a-zA-Z']+")

FEATURE_NAMES = (
    # logon (10)
    "logon_count", "logoff_count", "ah_logon_count", "weekend_logon_count",
    "distinct_pcs", "first_logon_hour", "last_logoff_hour", "day_span_hours",
    "session_count", "ah_logon_fraction",
    # email (12)
    "email_count", "total_recipients", "max_recipients", "mean_recipients",
    "external_recipient_count", "cc_count", "attach_count", "attach_max",
    "size_total_kb", "size_mean_kb", "size_max_kb", "email_sentiment_mean",
    # http (8)
    "http_count", "distinct_domains", "ah_http_count", "weekend_http_count",
    "job_site_hits", "hack_site_hits", "cloud_site_hits",
    "http_sentiment_mean",
    # file (5)
    "file_count", "distinct_file_exts", "ah_file_count", "archive_file_count",
    "file_sentiment_mean",
    # device (5)
    "connect_count", "disconnect_count", "ah_connect_count",
    "weekend_connect_count", "device_minutes",
    # psychometric (5)
    "psych_O", "psych_C", "psych_E", "psych_A", "psych_N",
)


def sentiment_score(text: str, lexicon=None) -> float:
    """Mean polarity of lexicon-matched tokens; 0 for empty/no-match text."""
    lex = DEFAULT_LEXICON if lexicon is None else lexicon
    hits = [lex[t] for t in _TOKEN_RE.findall((text or "").lower()) if t in lex]
    return float(np.mean(hits)) if hits else 0.0


@dataclass(eq=False)
class FeatureMatrix:
    values: np.ndarray                 # N x F float64
    feature_names: tuple
    labels: np.ndarray                 # N ints, 0 = normal
    user_day_index: tuple              # N (user, datetime.date) pairs

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def f(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.feature_names.index(name)]


@dataclass(frozen=True)
class SelectionReport:
    dropped_features: tuple            # (name, correlated_with, |r|)
    kept_count: int
    threshold: float


def _domain(url: str) -> str:
    netloc = urlparse(url).netloc
    return netloc or url


def _mean_or0(xs) -> float:
    return float(np.mean(xs)) if xs else 0.0


def extract_features(log: ActivityLog, lexicon=None) -> FeatureMatrix:
    """One labeled 45-feature row per (user, day) with any activity."""
    by_day: dict = {}

    def slot(user, day):
        return by_day.setdefault((user, day), {
            "logon": [], "email": [], "http": [], "device": [], "file": []})

    for r in log.logon:
        slot(r.user, r.date.date())["logon"].append(r)
    for r in log.email:
        slot(r.user, r.date.date())["email"].append(r)
    for r in log.http:
        slot(r.user, r.date.date())["http"].append(r)
    for r in log.device:
        slot(r.user, r.date.date())["device"].append(r)
    for r in log.file:
        slot(r.user, r.date.date())["file"].append(r)
    if not by_day:
        raise InputError("no event rows to featurize")

    psych = {r.user: (r.O, r.C, r.E, r.A, r.N) for r in log.psychometric}
    fired = detect_scenarios(log)

    keys = sorted(by_day)
    rows = np.zeros((len(keys), len(FEATURE_NAMES)))
    labels = np.zeros(len(keys), dtype=np.int64)
    for i, key in enumerate(keys):
        user, day = key
        # canonical within-day order so float accumulation is input-order free
        ev = {k: sorted(v, key=astuple) for k, v in by_day[key].items()}
        rows[i] = _day_vector(ev, day, psych.get(user), lexicon)
        labels[i] = fired.get(key, 0)
    if not np.all(np.isfinite(rows)):
        raise InputError("feature extraction produced non-finite values")
    return FeatureMatrix(values=rows, feature_names=FEATURE_NAMES,
                         labels=labels, user_day_index=tuple(keys))


def _day_vector(ev, day, psych, lexicon):
    weekend = is_weekend(day)
    out = []

    logons = [r for r in ev["logon"] if r.activity == "Logon"]
    logoffs = [r for r in ev["logon"] if r.activity == "Logoff"]
    ah_logons = [r for r in logons if is_after_hours(r.date)]
    first_on = min((r.date for r in logons), default=None)
    last_off = max((r.date for r in logoffs), default=None)
    hour_of = lambda t: t.hour + t.minute / 60.0
    span = 0.0
    if first_on and last_off:
        span = max(0.0, (last_off - first_on).total_seconds() / 3600.0)
    out += [
        len(logons), len(logoffs), len(ah_logons),
        len(logons) if weekend else 0,
        len({r.pc for r in ev["logon"]}),
        hour_of(first_on) if first_on else 0.0,
        hour_of(last_off) if last_off else 0.0,
        span,
        min(len(logons), len(logoffs)),
        len(ah_logons) / len(logons) if logons else 0.0,
    ]

    emails = ev["email"]
    rcpts = [len(r.to) + len(r.cc) for r in emails]
    external = sum(1 for r in emails for a in list(r.to) + list(r.cc)
                   if not a.endswith("@" + INTERNAL_DOMAIN))
    sizes_kb = [r.size / 1024.0 for r in emails]
    attach = [r.attachments for r in emails]
    out += [
        len(emails), sum(rcpts), max(rcpts, default=0), _mean_or0(rcpts),
        external, sum(len(r.cc) for r in emails), sum(attach),
        max(attach, default=0), sum(sizes_kb), _mean_or0(sizes_kb),
        max(sizes_kb, default=0.0),
        _mean_or0([sentiment_score(r.content, lexicon) for r in emails]),
    ]

    https = ev["http"]
    hits = lambda sites: sum(1 for r in https
                             if any(s in r.url for s in sites))
    out += [
        len(https), len({_domain(r.url) for r in https}),
        sum(1 for r in https if is_after_hours(r.date)),
        len(https) if weekend else 0,
        hits(JOB_SITES), hits(HACK_SITES), hits(CLOUD_SITES),
        _mean_or0([sentiment_score(r.content, lexicon) for r in https]),
    ]

    files = ev["file"]
    ext_of = lambda name: name.rsplit(".", 1)[-1].lower() if "." in name else ""
    out += [
        len(files), len({ext_of(r.filename) for r in files}),
        sum(1 for r in files if is_after_hours(r.date)),
        sum(1 for r in files if ext_of(r.filename) == "zip"),
        _mean_or0([sentiment_score(r.content, lexicon) for r in files]),
    ]

    devs = sorted(ev["device"], key=lambda r: r.date)
    connects = [r for r in devs if r.activity == "Connect"]
    minutes, stack = 0.0, []
    for r in devs:
        if r.activity == "Connect":
            stack.append(r.date)
        elif stack:
            minutes += (r.date - stack.pop()).total_seconds() / 60.0
    out += [
        len(connects), len(devs) - len(connects),
        sum(1 for r in connects if is_after_hours(r.date)),
        len(connects) if weekend else 0, minutes,
    ]

    out += list(psych) if psych else [0] * 5
    return out


def select_features(fm: FeatureMatrix, threshold: float):
    """Greedy correlation filter in feature declaration order.

    A feature is dropped when its |Pearson r| against an already-kept
    feature reaches the threshold. Zero-variance columns correlate with
    nothing and stay, except exact duplicates of a kept constant column.
    """
    if not 0.0 < threshold < 1.0:
        raise InputError("threshold must lie in (0, 1)")
    X = fm.values
    if not np.all(np.isfinite(X)):
        raise InputError("non-finite values; clean the matrix first")
    sd = X.std(axis=0)
    kept: list = []
    dropped = []
    for j in range(X.shape[1]):
        verdict = None
        for i in kept:
            if sd[i] == 0.0 or sd[j] == 0.0:
                if sd[i] == 0.0 and sd[j] == 0.0 and np.array_equal(X[:, i], X[:, j]):
                    verdict = (i, 1.0)
                    break
                continue
            r = abs(float(np.corrcoef(X[:, i], X[:, j])[0, 1]))
            if r >= threshold:
                verdict = (i, r)
                break
        if verdict is None:
            kept.append(j)
        else:
            dropped.append((fm.feature_names[j],
                            fm.feature_names[verdict[0]],
                            float(verdict[1])))
    out = FeatureMatrix(
        values=X[:, kept].copy(),
        feature_names=tuple(fm.feature_names[j] for j in kept),
        labels=fm.labels.copy(),
        user_day_index=fm.user_day_index,
    )
    return out, SelectionReport(dropped_features=tuple(dropped),
                                kept_count=len(kept), threshold=threshold)


def standardize(fm: FeatureMatrix):
    """Z-score all columns; returns (matrix, mean_vec, std_vec) for reuse."""
    if fm.values.size == 0:
        raise InputError("empty feature matrix")
    mean = fm.values.mean(axis=0)
    std = fm.values.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)  # degenerate columns map to 0
    out = FeatureMatrix(values=(fm.values - mean) / std,
                        feature_names=fm.feature_names,
                        labels=fm.labels.copy(),
                        user_day_index=fm.user_day_index)
    return out, mean, std


def apply_standardize(values: np.ndarray, mean_vec, std_vec) -> np.ndarray:
    """Apply previously-fit z-score parameters to new rows."""
    return (np.asarray(values, dtype=float) - mean_vec) / std_vec


# ------------------------------------------------------------- persistence

def save_feature_matrix(fm: FeatureMatrix, csv_path,
                        mean_vec=None, std_vec=None) -> Path:
    """Write values+labels as CSV and the index/transform as a JSON sidecar."""
    path = Path(csv_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(fm.feature_names) + ["label"])
        for row, lab in zip(fm.values, fm.labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])
    meta = {
        "feature_names": list(fm.feature_names),
        "user_day_index": [[u, d.isoformat()] for u, d in fm.user_day_index],
        "mean_vec": None if mean_vec is None else [float(v) for v in mean_vec],
        "std_vec": None if std_vec is None else [float(v) for v in std_vec],
    }
    path.with_suffix(".meta.json").write_text(
        json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return path


def load_feature_matrix(csv_path):
    """Inverse of save_feature_matrix; returns (FeatureMatrix, meta dict)."""
    path = Path(csv_path)
    if not path.is_file():
        raise InputError(f"{path} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or rows[0][-1] != "label":
        raise FormatError(f"{path.name}: expected a trailing 'label' column")
    names = tuple(rows[0][:-1])
    try:
        values = np.array([[float(v) for v in r[:-1]] for r in rows[1:]])
        labels = np.array([int(r[-1]) for r in rows[1:]], dtype=np.int64)
    except ValueError as e:
        raise FormatError(f"{path.name}: non-numeric cell ({e})") from e
    if values.size == 0:
        values = values.reshape(0, len(names))

    meta_path = path.with_suffix(".meta.json")
    meta = {"mean_vec": None, "std_vec": None, "user_day_index": None}
    if meta_path.is_file():
        raw = json.loads(meta_path.read_text(encoding="utf-8"))
        meta["mean_vec"] = (None if raw.get("mean_vec") is None
                            else np.array(raw["mean_vec"]))
        meta["std_vec"] = (None if raw.get("std_vec") is None
                           else np.array(raw["std_vec"]))
        if raw.get("user_day_index") is not None:
            meta["user_day_index"] = tuple(
                (u, dt.date.fromisoformat(d)) for u, d in raw["user_day_index"])
    index = meta["user_day_index"] or tuple(
        ("", dt.date(1970, 1, 1)) for _ in range(values.shape[0]))
    fm = FeatureMatrix(values=values, feature_names=names,
                       labels=labels, user_day_index=index)
    return fm, meta
