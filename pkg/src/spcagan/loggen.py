"""Desk-scale activity-log corpora: generation, scenario injection, CSV I/O.

The corpus imitates the layout of enterprise monitoring dumps: one CSV per
resource (logon, email, http, device, file) plus a psychometric table.
Normal users follow per-user Poisson baselines drawn once from the seed.
Designated insiders additionally exhibit one scenario signature on a burst
of days. Signatures are explicit conjunction rules over per-user-day
aggregates so ground truth is mechanizable:

  scenario 1 (night exfiltration):  after-hours logons >= 1
                                    and device connects >= 2
                                    and file copies     >= 4
  scenario 2 (leaver theft):        device connects >= 1
                                    and file copies >= 6
                                    and job-site http hits >= 3
  scenario 3 (sabotage prep):       after-hours logons >= 1
                                    and an email with >= 8 recipients
                                    and hacking-site http hits >= 3
  scenario 4 (cloud leak):          cloud-upload http hits >= 3
                                    and file copies >= 4

A user-day matching several rules is attributed to the lowest scenario id.
Baseline traffic is calibrated to never satisfy a full conjunction: normal
users connect a device at most once per day, copy at most 3 files, mail at
most 5 recipients, and never touch the signature domains.
"""

from __future__ import annotations

import csv
import datetime as dt
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .errors import FormatError, InputError, SpecificationError

TS_FMT = "%m/%d/%Y %H:%M:%S"
WORK_START = 8   # hours outside [WORK_START, AFTER_HOURS_START) are after-hours
AFTER_HOURS_START = 18

INTERNAL_DOMAIN = "corp.local"
EXTERNAL_DOMAINS = ("partner.example.org", "mailhub.example.net", "home.example.com")
BENIGN_SITES = (
    "intranet.corp.local", "docs.corp.local", "www.news.example.com",
    "www.weather.example.com", "www.sports.example.net", "wiki.example.org",
)
JOB_SITES = ("careers.jobfinder.example", "www.jobsearch.example")
HACK_SITES = ("www.keylogger.example", "exploit-tools.example")
CLOUD_SITES = ("upload.cloudvault.example", "www.filesharing.example")

_NEUTRAL_WORDS = (
    "report", "meeting", "schedule", "project", "data", "review", "update",
    "team", "client", "budget", "draft", "quarter", "notes", "agenda", "plan",
)
_POSITIVE_WORDS = ("good", "great", "useful", "happy", "excellent")
_NEGATIVE_WORDS = ("bad", "angry", "terrible", "hate", "broken")
_FILE_EXTS = (".doc", ".pdf", ".zip", ".xls", ".txt")


def is_after_hours(t: dt.datetime) -> bool:
    return t.hour < WORK_START or t.hour >= AFTER_HOURS_START


def is_weekend(d: dt.date) -> bool:
    return d.weekday() >= 5


# --------------------------------------------------------------- row types

@dataclass(frozen=True)
class LogonRow:
    id: str
    date: dt.datetime
    user: str
    pc: str
    activity: str  # Logon | Logoff


@dataclass(frozen=True)
class EmailRow:
    date: dt.datetime
    user: str
    to: tuple
    cc: tuple
    size: int
    attachments: int
    content: str


@dataclass(frozen=True)
class HttpRow:
    date: dt.datetime
    user: str
    url: str
    content: str


@dataclass(frozen=True)
class DeviceRow:
    date: dt.datetime
    user: str
    pc: str
    activity: str  # Connect | Disconnect


@dataclass(frozen=True)
class FileRow:
    date: dt.datetime
    user: str
    filename: str
    content: str


@dataclass(frozen=True)
class PsychRow:
    user: str
    O: int
    C: int
    E: int
    A: int
    N: int


@dataclass(frozen=True)
class ActivityLog:
    logon: tuple = field(default=(), repr=False)
    email: tuple = field(default=(), repr=False)
    http: tuple = field(default=(), repr=False)
    device: tuple = field(default=(), repr=False)
    file: tuple = field(default=(), repr=False)
    psychometric: tuple = field(default=(), repr=False)

    def counts(self) -> dict:
        return {
            "logon": len(self.logon), "email": len(self.email),
            "http": len(self.http), "device": len(self.device),
            "file": len(self.file), "psychometric": len(self.psychometric),
        }

    def users(self) -> set:
        out = set()
        for rows in (self.logon, self.email, self.http, self.device, self.file):
            out.update(r.user for r in rows)
        return out


@dataclass(frozen=True)
class CorpusSpec:
    n_users: int
    n_days: int
    n_insiders: int
    scenarios: frozenset
    seed: int
    start_date: dt.date = dt.date(2023, 1, 2)  # a Monday

    def __post_init__(self):
        object.__setattr__(self, "scenarios", frozenset(self.scenarios))
        if self.n_users < 1 or self.n_days < 1:
            raise SpecificationError("n_users and n_days must be >= 1")
        if not 0 <= self.n_insiders <= self.n_users:
            raise SpecificationError(
                f"n_insiders={self.n_insiders} out of range [0, n_users={self.n_users}]")
        if not self.scenarios:
            raise SpecificationError("scenarios must be nonempty")
        bad = self.scenarios - {r.id for r in SCENARIOS}
        if bad:
            raise SpecificationError(f"unknown scenario ids {sorted(bad)}")


@dataclass(frozen=True)
class GroundTruth:
    """Which users are insiders and which of their days carry the signature."""

    insiders: Mapping[str, int]                       # user -> scenario id
    malicious_days: Mapping[tuple, int]               # (user, date) -> scenario id


# ----------------------------------------------------------- scenario rules

@dataclass(frozen=True)
class DayStats:
    """Raw-event aggregates for one (user, day); the rule vocabulary."""

    logons: int = 0
    ah_logons: int = 0
    connects: int = 0
    files: int = 0
    emails: int = 0
    max_recipients: int = 0
    http_hits: int = 0
    job_hits: int = 0
    hack_hits: int = 0
    cloud_hits: int = 0


@dataclass(frozen=True)
class ScenarioRule:
    id: int
    name: str
    requires: str
    fires: Callable[[DayStats], bool]


SCENARIOS = (
    ScenarioRule(1, "night exfiltration",
                 "ah_logons>=1 and connects>=2 and files>=4",
                 lambda s: s.ah_logons >= 1 and s.connects >= 2 and s.files >= 4),
    ScenarioRule(2, "leaver theft",
                 "connects>=1 and files>=6 and job_hits>=3",
                 lambda s: s.connects >= 1 and s.files >= 6 and s.job_hits >= 3),
    ScenarioRule(3, "sabotage prep",
                 "ah_logons>=1 and max_recipients>=8 and hack_hits>=3",
                 lambda s: s.ah_logons >= 1 and s.max_recipients >= 8
                 and s.hack_hits >= 3),
    ScenarioRule(4, "cloud leak",
                 "cloud_hits>=3 and files>=4",
                 lambda s: s.cloud_hits >= 3 and s.files >= 4),
)
SCENARIO_IDS = frozenset(r.id for r in SCENARIOS)


def _hits(url: str, sites) -> bool:
    return any(s in url for s in sites)


def aggregate_days(log: ActivityLog) -> dict:
    """Per-(user, date) DayStats over the raw rows."""
    acc: dict = {}

    def bump(user, day, **kw):
        cur = acc.setdefault((user, day), {})
        for k, v in kw.items():
            if k == "max_recipients":
                cur[k] = max(cur.get(k, 0), v)
            else:
                cur[k] = cur.get(k, 0) + v

    for r in log.logon:
        if r.activity == "Logon":
            bump(r.user, r.date.date(), logons=1,
                 ah_logons=1 if is_after_hours(r.date) else 0)
    for r in log.device:
        if r.activity == "Connect":
            bump(r.user, r.date.date(), connects=1)
    for r in log.file:
        bump(r.user, r.date.date(), files=1)
    for r in log.email:
        bump(r.user, r.date.date(), emails=1,
             max_recipients=len(r.to) + len(r.cc))
    for r in log.http:
        bump(r.user, r.date.date(), http_hits=1,
             job_hits=1 if _hits(r.url, JOB_SITES) else 0,
             hack_hits=1 if _hits(r.url, HACK_SITES) else 0,
             cloud_hits=1 if _hits(r.url, CLOUD_SITES) else 0)
    return {k: DayStats(**v) for k, v in acc.items()}


def detect_scenarios(log: ActivityLog) -> dict:
    """Rule-based sweep: (user, date) -> lowest firing scenario id."""
    out = {}
    for key, stats in aggregate_days(log).items():
        for rule in SCENARIOS:  # ascending id; first hit wins
            if rule.fires(stats):
                out[key] = rule.id
                break
    return out


# --------------------------------------------------------------- generation

@dataclass
class _Profile:
    name: str
    pc: str
    email_rate: float
    http_rate: float
    file_rate: float
    device_rate: float
    session_extra: float
    weekend_rate: float
    evening_rate: float
    mood: float
    scenario: int | None = None
    burst_days: tuple = ()


def _words(rng, prof, n, force_negative=False):
    out = []
    for _ in range(n):
        u = rng.random()
        if force_negative and u < 0.6:
            out.append(_NEGATIVE_WORDS[rng.integers(len(_NEGATIVE_WORDS))])
        elif u < 0.25:
            pool = _POSITIVE_WORDS if rng.random() < (1 + prof.mood) / 2 \
                else _NEGATIVE_WORDS
            out.append(pool[rng.integers(len(pool))])
        else:
            out.append(_NEUTRAL_WORDS[rng.integers(len(_NEUTRAL_WORDS))])
    return " ".join(out)


def _t(rng, day, hour_lo, hour_hi) -> dt.datetime:
    return dt.datetime(day.year, day.month, day.day,
                       int(rng.integers(hour_lo, hour_hi)),
                       int(rng.integers(60)), int(rng.integers(60)))


class _Builder:
    def __init__(self, rng):
        self.rng = rng
        self.logon, self.email, self.http = [], [], []
        self.device, self.file = [], []
        self._n = 0

    def _next_id(self) -> str:
        self._n += 1
        return f"{{E{self._n:07d}}}"

    def session(self, prof, day, hour_on, hour_off, pc=None):
        pc = pc or prof.pc
        on = _t(self.rng, day, hour_on, hour_on + 1)
        off = _t(self.rng, day, hour_off, hour_off + 1)
        self.logon.append(LogonRow(self._next_id(), on, prof.name, pc, "Logon"))
        self.logon.append(LogonRow(self._next_id(), off, prof.name, pc, "Logoff"))

    def device_pair(self, prof, day, hour_lo, hour_hi):
        t0 = _t(self.rng, day, hour_lo, hour_hi)
        t1 = t0 + dt.timedelta(minutes=int(self.rng.integers(5, 40)))
        self.device.append(DeviceRow(t0, prof.name, prof.pc, "Connect"))
        self.device.append(DeviceRow(t1, prof.name, prof.pc, "Disconnect"))

    def file_row(self, prof, day, hour_lo, hour_hi):
        ext = _FILE_EXTS[self.rng.integers(len(_FILE_EXTS))]
        self.file.append(FileRow(
            _t(self.rng, day, hour_lo, hour_hi), prof.name,
            f"R{self.rng.integers(10 ** 6):06d}{ext}",
            _words(self.rng, prof, 4)))

    def http_row(self, prof, day, hour_lo, hour_hi, site=None):
        site = site or BENIGN_SITES[self.rng.integers(len(BENIGN_SITES))]
        path = "/".join(_words(self.rng, prof, 2).split())
        self.http.append(HttpRow(
            _t(self.rng, day, hour_lo, hour_hi), prof.name,
            f"http://{site}/{path}", _words(self.rng, prof, 5)))

    def email_row(self, prof, day, hour_lo, hour_hi, roster,
                  n_rcpt, negative=False):
        rng = self.rng
        others = [u for u in roster if u != prof.name]
        to, cc = [], []
        for i in range(n_rcpt):
            if rng.random() < 0.15:
                dom = EXTERNAL_DOMAINS[rng.integers(len(EXTERNAL_DOMAINS))]
                addr = f"contact{rng.integers(100):02d}@{dom}"
            else:
                addr = f"{others[rng.integers(len(others))]}@{INTERNAL_DOMAIN}"
            (to if i == 0 or rng.random() < 0.7 else cc).append(addr)
        attachments = min(int(rng.poisson(0.4)), 3)
        size = int(rng.integers(1, 30)) * 1024 + attachments * int(rng.integers(40, 400)) * 1024
        self.email.append(EmailRow(
            _t(rng, day, hour_lo, hour_hi), prof.name, tuple(to), tuple(cc),
            size, attachments, _words(rng, prof, 8, force_negative=negative)))


def _baseline_day(b: _Builder, prof, day, roster, pcs):
    rng = b.rng
    weekend = is_weekend(day)
    if weekend:
        if rng.random() >= prof.weekend_rate:
            if rng.random() < prof.evening_rate:
                for _ in range(int(rng.integers(1, 4))):
                    b.http_row(prof, day, 19, 23)
            return
        b.session(prof, day, 10, 13)
        for _ in range(int(rng.poisson(prof.http_rate / 2))):
            b.http_row(prof, day, 10, 13)
        return
    pc = prof.pc
    if rng.random() < 0.05:
        pc = pcs[rng.integers(len(pcs))]
    b.session(prof, day, int(rng.integers(8, 10)), int(rng.integers(16, 18)), pc=pc)
    if rng.random() < prof.session_extra:
        b.session(prof, day, 12, 14)
    for _ in range(int(rng.poisson(prof.email_rate))):
        b.email_row(prof, day, 9, 17, roster,
                    n_rcpt=min(1 + int(rng.poisson(1.0)), 5))
    for _ in range(int(rng.poisson(prof.http_rate))):
        b.http_row(prof, day, 9, 17)
    for _ in range(min(int(rng.poisson(prof.file_rate)), 3)):
        b.file_row(prof, day, 9, 17)
    if rng.random() < prof.device_rate:
        b.device_pair(prof, day, 9, 17)
    if rng.random() < prof.evening_rate:
        for _ in range(int(rng.integers(1, 4))):
            b.http_row(prof, day, 19, 23)


def _inject_scenario(b: _Builder, prof, day, roster):
    rng = b.rng
    s = prof.scenario
    if s == 1:
        for _ in range(int(rng.integers(1, 3))):
            b.session(prof, day, int(rng.integers(19, 22)), 23)
        for _ in range(int(rng.integers(2, 4))):
            b.device_pair(prof, day, 19, 23)
        for _ in range(int(rng.integers(4, 8))):
            b.file_row(prof, day, 19, 23)
    elif s == 2:
        for _ in range(int(rng.integers(1, 3))):
            b.device_pair(prof, day, 9, 17)
        for _ in range(int(rng.integers(6, 10))):
            b.file_row(prof, day, 9, 17)
        for _ in range(int(rng.integers(3, 6))):
            b.http_row(prof, day, 9, 17,
                       site=JOB_SITES[rng.integers(len(JOB_SITES))])
    elif s == 3:
        for _ in range(int(rng.integers(1, 3))):
            b.session(prof, day, int(rng.integers(19, 22)), 23)
        b.email_row(prof, day, 19, 23, roster,
                    n_rcpt=int(rng.integers(8, 13)), negative=True)
        for _ in range(int(rng.integers(3, 6))):
            b.http_row(prof, day, 19, 23,
                       site=HACK_SITES[rng.integers(len(HACK_SITES))])
    elif s == 4:
        for _ in range(int(rng.integers(3, 6))):
            b.http_row(prof, day, 9, 17,
                       site=CLOUD_SITES[rng.integers(len(CLOUD_SITES))])
        for _ in range(int(rng.integers(4, 8))):
            b.file_row(prof, day, 9, 17)


def generate_with_truth(spec: CorpusSpec):
    """Generate a corpus plus its injection ground truth."""
    rng = np.random.default_rng(spec.seed)
    letters = string.ascii_uppercase
    profiles = []
    for i in range(spec.n_users):
        name = "".join(letters[j] for j in rng.integers(26, size=3)) + str(1000 + i)
        profiles.append(_Profile(
            name=name, pc=f"PC-{i:04d}",
            email_rate=float(rng.uniform(1.0, 4.0)),
            http_rate=float(rng.uniform(3.0, 10.0)),
            file_rate=float(rng.uniform(0.5, 2.0)),
            device_rate=float(rng.uniform(0.05, 0.3)),
            session_extra=float(rng.uniform(0.0, 0.3)),
            weekend_rate=float(rng.uniform(0.02, 0.15)),
            evening_rate=float(rng.uniform(0.01, 0.06)),
            mood=float(rng.uniform(-0.3, 0.6)),
        ))
    scen_sorted = sorted(spec.scenarios)
    insider_idx = sorted(rng.choice(spec.n_users, size=spec.n_insiders,
                                    replace=False).tolist())
    for rank, idx in enumerate(insider_idx):
        p = profiles[idx]
        p.scenario = scen_sorted[rank % len(scen_sorted)]
        # bursts scale with the window so scenario classes aren't vanishing
        n_burst = min(spec.n_days, int(rng.integers(2, 5)) + spec.n_days // 4)
        p.burst_days = tuple(sorted(
            rng.choice(spec.n_days, size=n_burst, replace=False).tolist()))

    roster = [p.name for p in profiles]
    pcs = [p.pc for p in profiles]
    b = _Builder(rng)
    truth_days = {}
    for prof in sorted(profiles, key=lambda p: p.name):
        for d in range(spec.n_days):
            day = spec.start_date + dt.timedelta(days=d)
            _baseline_day(b, prof, day, roster, pcs)
            if prof.scenario is not None and d in prof.burst_days:
                _inject_scenario(b, prof, day, roster)
                truth_days[(prof.name, day)] = prof.scenario

    psych = []
    for prof in sorted(profiles, key=lambda p: p.name):
        o, c, e, a, n = (int(rng.integers(20, 81)) for _ in range(5))
        if prof.scenario is not None:
            c = max(0, c - 15)
            n = min(100, n + 15)
        psych.append(PsychRow(prof.name, o, c, e, a, n))

    log = ActivityLog(
        logon=tuple(sorted(b.logon, key=lambda r: (r.date, r.user, r.activity))),
        email=tuple(sorted(b.email, key=lambda r: (r.date, r.user))),
        http=tuple(sorted(b.http, key=lambda r: (r.date, r.user))),
        device=tuple(sorted(b.device, key=lambda r: (r.date, r.user, r.activity))),
        file=tuple(sorted(b.file, key=lambda r: (r.date, r.user))),
        psychometric=tuple(psych),
    )
    truth = GroundTruth(
        insiders={profiles[i].name: profiles[i].scenario for i in insider_idx},
        malicious_days=truth_days,
    )
    return log, truth


def generate_corpus(spec: CorpusSpec) -> ActivityLog:
    return generate_with_truth(spec)[0]


# ------------------------------------------------------------------ CSV I/O

_HEADERS = {
    "logon": ["id", "date", "user", "pc", "activity"],
    "email": ["date", "user", "to", "cc", "size", "attachments", "content"],
    "http": ["date", "user", "url", "content"],
    "device": ["date", "user", "pc", "activity"],
    "file": ["date", "user", "filename", "content"],
    "psychometric": ["user", "O", "C", "E", "A", "N"],
}


def write_cert_csv(log: ActivityLog, dir_path) -> Path:
    """Serialize to <dir>/{logon,email,http,device,file,psychometric}.csv."""
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)

    def dump(name, rows, to_fields):
        with open(out / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(_HEADERS[name])
            for r in rows:
                w.writerow(to_fields(r))

    ts = lambda t: t.strftime(TS_FMT)
    dump("logon", log.logon, lambda r: [r.id, ts(r.date), r.user, r.pc, r.activity])
    dump("email", log.email, lambda r: [ts(r.date), r.user, ";".join(r.to),
                                        ";".join(r.cc), r.size, r.attachments,
                                        r.content])
    dump("http", log.http, lambda r: [ts(r.date), r.user, r.url, r.content])
    dump("device", log.device, lambda r: [ts(r.date), r.user, r.pc, r.activity])
    dump("file", log.file, lambda r: [ts(r.date), r.user, r.filename, r.content])
    dump("psychometric", log.psychometric,
         lambda r: [r.user, r.O, r.C, r.E, r.A, r.N])
    return out


@dataclass(frozen=True)
class ParseResult:
    log: ActivityLog
    skipped: Mapping[str, int]   # resource name -> malformed-row count

    @property
    def total_skipped(self) -> int:
        return sum(self.skipped.values())


def _read_table(path: Path, name: str):
    """Yield data rows as lists; validate the header; '#' lines are ignored."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh)
                if r and not (r[0].startswith("#"))]
    if not rows:
        raise FormatError(f"{path.name}: empty file, no header")
    header = [h.strip().lower() for h in rows[0]]
    expect = [h.lower() for h in _HEADERS[name]]
    aliases = {"user": {"user", "user_id"}} if name == "psychometric" else {}
    idx = []
    for col in expect:
        accept = aliases.get(col, {col})
        pos = next((i for i, h in enumerate(header) if h in accept), None)
        if pos is None:
            raise FormatError(
                f"{path.name}: header {rows[0]} lacks required column '{col}'")
        idx.append(pos)
    for r in rows[1:]:
        yield [r[i] if i < len(r) else None for i in idx]


def parse_cert_csv(dir_path) -> ParseResult:
    """Parse whichever resource CSVs exist under dir_path into typed rows.

    Malformed rows (bad timestamp, wrong field count, non-numeric numerics,
    unknown activity, out-of-range psychometric score) are skipped and
    counted per resource. Missing files leave the collection empty.
    """
    root = Path(dir_path)
    if not root.is_dir():
        raise InputError(f"{root} is not a directory")
    present = {n: root / f"{n}.csv" for n in _HEADERS
               if (root / f"{n}.csv").is_file()}
    if not present:
        raise InputError(f"no recognizable log CSVs in {root}")

    skipped = dict.fromkeys(_HEADERS, 0)
    collections = {n: [] for n in _HEADERS}

    def t(v):
        return dt.datetime.strptime(v, TS_FMT)

    def rcpts(v):
        return tuple(a for a in (v or "").split(";") if a)

    builders = {
        "logon": lambda f: LogonRow(f[0], t(f[1]), f[2], f[3],
                                    _enum(f[4], ("Logon", "Logoff"))),
        "email": lambda f: EmailRow(t(f[0]), f[1], rcpts(f[2]), rcpts(f[3]),
                                    int(f[4]), int(f[5]), f[6]),
        "http": lambda f: HttpRow(t(f[0]), f[1], f[2], f[3]),
        "device": lambda f: DeviceRow(t(f[0]), f[1], f[2],
                                      _enum(f[3], ("Connect", "Disconnect"))),
        "file": lambda f: FileRow(t(f[0]), f[1], f[2], f[3]),
        "psychometric": lambda f: PsychRow(f[0], *(_score(v) for v in f[1:6])),
    }
    for name, path in present.items():
        build = builders[name]
        for fields in _read_table(path, name):
            try:
                if any(v is None for v in fields):
                    raise ValueError("short row")
                collections[name].append(build(fields))
            except (ValueError, TypeError):
                skipped[name] += 1

    log = ActivityLog(**{n: tuple(collections[n]) for n in _HEADERS})
    return ParseResult(log=log, skipped=skipped)


def _enum(v, allowed):
    if v not in allowed:
        raise ValueError(f"bad activity {v!r}")
    return v


def _score(v):
    x = int(v)
    if not 0 <= x <= 100:
        raise ValueError(f"psychometric score {x} outside [0, 100]")
    return x
