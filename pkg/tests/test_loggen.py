import datetime as dt

import pytest

from spcagan.errors import FormatError, InputError, SpecificationError
from spcagan import loggen
from spcagan.loggen import (
    ActivityLog,
    CorpusSpec,
    DayStats,
    DeviceRow,
    EmailRow,
    FileRow,
    HttpRow,
    LogonRow,
    PsychRow,
    SCENARIOS,
    aggregate_days,
    detect_scenarios,
    generate_corpus,
    generate_with_truth,
    parse_cert_csv,
    write_cert_csv,
)


SPEC = CorpusSpec(n_users=12, n_days=21, n_insiders=3,
                  scenarios=frozenset({1, 2, 3, 4}), seed=7)


@pytest.fixture(scope="module")
def corpus():
    return generate_with_truth(SPEC)


# -------------------------------------------------------- oracle (independent)

def oracle_day_signatures(log):
    """From-scratch recount of the per-day signature conjunctions.

    Deliberately avoids aggregate_days/DayStats so it can catch bookkeeping
    bugs in the library's own rule sweep.
    """
    ah, conn, files, rcpt, job, hack, cloud = ({} for _ in range(7))
    for r in log.logon:
        if r.activity == "Logon" and (r.date.hour < 8 or r.date.hour >= 18):
            k = (r.user, r.date.date())
            ah[k] = ah.get(k, 0) + 1
    for r in log.device:
        if r.activity == "Connect":
            k = (r.user, r.date.date())
            conn[k] = conn.get(k, 0) + 1
    for r in log.file:
        k = (r.user, r.date.date())
        files[k] = files.get(k, 0) + 1
    for r in log.email:
        k = (r.user, r.date.date())
        rcpt[k] = max(rcpt.get(k, 0), len(r.to) + len(r.cc))
    for r in log.http:
        k = (r.user, r.date.date())
        if any(s in r.url for s in loggen.JOB_SITES):
            job[k] = job.get(k, 0) + 1
        if any(s in r.url for s in loggen.HACK_SITES):
            hack[k] = hack.get(k, 0) + 1
        if any(s in r.url for s in loggen.CLOUD_SITES):
            cloud[k] = cloud.get(k, 0) + 1

    keys = set().union(ah, conn, files, rcpt, job, hack, cloud)
    out = {}
    for k in keys:
        fired = []
        if ah.get(k, 0) >= 1 and conn.get(k, 0) >= 2 and files.get(k, 0) >= 4:
            fired.append(1)
        if conn.get(k, 0) >= 1 and files.get(k, 0) >= 6 and job.get(k, 0) >= 3:
            fired.append(2)
        if ah.get(k, 0) >= 1 and rcpt.get(k, 0) >= 8 and hack.get(k, 0) >= 3:
            fired.append(3)
        if cloud.get(k, 0) >= 3 and files.get(k, 0) >= 4:
            fired.append(4)
        if fired:
            out[k] = min(fired)
    return out


# ------------------------------------------------------------ generation

def test_insider_count_forced_by_spec(corpus):
    log, truth = corpus
    assert len(truth.insiders) == 3
    assert len({u for u, _ in truth.malicious_days}) == 3
    assert set(truth.insiders.values()) <= {1, 2, 3, 4}


def test_zero_insiders_all_normal():
    log, truth = generate_with_truth(
        CorpusSpec(n_users=6, n_days=10, n_insiders=0,
                   scenarios={1}, seed=3))
    assert truth.insiders == {}
    assert truth.malicious_days == {}
    assert detect_scenarios(log) == {}


def test_determinism_same_seed(corpus):
    log, _ = corpus
    again = generate_corpus(SPEC)
    assert again == log


def test_different_seed_differs(corpus):
    log, _ = corpus
    other = generate_corpus(CorpusSpec(n_users=12, n_days=21, n_insiders=3,
                                       scenarios={1, 2, 3, 4}, seed=8))
    assert other != log


def test_byte_identical_serialization(tmp_path, corpus):
    log, _ = corpus
    write_cert_csv(log, tmp_path / "a")
    write_cert_csv(generate_corpus(SPEC), tmp_path / "b")
    for name in ("logon", "email", "http", "device", "file", "psychometric"):
        a = (tmp_path / "a" / f"{name}.csv").read_bytes()
        b = (tmp_path / "b" / f"{name}.csv").read_bytes()
        assert a == b, name


def test_every_event_user_in_psychometric(corpus):
    log, _ = corpus
    psych_users = {r.user for r in log.psychometric}
    assert log.users() <= psych_users


def test_user_streams_time_ordered_after_sort(corpus):
    log, _ = corpus
    for rows in (log.logon, log.email, log.http, log.device, log.file):
        per_user = {}
        for r in sorted(rows, key=lambda r: r.date):
            prev = per_user.get(r.user)
            assert prev is None or r.date >= prev
            per_user[r.user] = r.date


def test_spec_validation():
    with pytest.raises(SpecificationError):
        CorpusSpec(n_users=2, n_days=5, n_insiders=3, scenarios={1}, seed=0)
    with pytest.raises(SpecificationError):
        CorpusSpec(n_users=2, n_days=5, n_insiders=0, scenarios=set(), seed=0)
    with pytest.raises(SpecificationError):
        CorpusSpec(n_users=2, n_days=5, n_insiders=0, scenarios={9}, seed=0)
    with pytest.raises(SpecificationError):
        CorpusSpec(n_users=0, n_days=5, n_insiders=0, scenarios={1}, seed=0)


# ------------------------------------------------------- scenario ground truth

def test_injected_days_carry_full_signature(corpus):
    log, truth = corpus
    sigs = oracle_day_signatures(log)
    for key, scenario in truth.malicious_days.items():
        assert sigs.get(key) == scenario, f"{key} missing its signature"
    for user in truth.insiders:
        assert any(u == user for u, _ in truth.malicious_days)


def test_no_false_fires_on_normal_days(corpus):
    log, truth = corpus
    sigs = oracle_day_signatures(log)
    assert set(sigs) == set(truth.malicious_days)


def test_detect_scenarios_matches_oracle(corpus):
    log, truth = corpus
    assert detect_scenarios(log) == oracle_day_signatures(log)


def test_each_scenario_rule_fires_somewhere():
    # big enough corpus to exercise all four rules
    log, truth = generate_with_truth(
        CorpusSpec(n_users=16, n_days=25, n_insiders=4,
                   scenarios={1, 2, 3, 4}, seed=11))
    assert set(truth.insiders.values()) == {1, 2, 3, 4}
    fired = set(detect_scenarios(log).values())
    assert fired == {1, 2, 3, 4}


def test_rule_thresholds_exact():
    s1 = SCENARIOS[0]
    assert s1.fires(DayStats(ah_logons=1, connects=2, files=4))
    assert not s1.fires(DayStats(ah_logons=0, connects=2, files=4))
    assert not s1.fires(DayStats(ah_logons=1, connects=1, files=4))
    assert not s1.fires(DayStats(ah_logons=1, connects=2, files=3))
    s4 = SCENARIOS[3]
    assert s4.fires(DayStats(cloud_hits=3, files=4))
    assert not s4.fires(DayStats(cloud_hits=2, files=4))


def test_aggregate_days_hand_example():
    day = dt.datetime(2023, 3, 6, 20, 0, 0)
    log = ActivityLog(
        logon=(LogonRow("{1}", day, "U1", "PC-0", "Logon"),
               LogonRow("{2}", day.replace(hour=9), "U1", "PC-0", "Logon"),
               LogonRow("{3}", day.replace(hour=17), "U1", "PC-0", "Logoff")),
        device=(DeviceRow(day, "U1", "PC-0", "Connect"),
                DeviceRow(day, "U1", "PC-0", "Disconnect")),
        file=(FileRow(day, "U1", "a.zip", "data"),),
        email=(EmailRow(day, "U1", ("x@corp.local", "y@corp.local"),
                        ("z@corp.local",), 1024, 0, "notes"),),
        http=(HttpRow(day, "U1", "http://upload.cloudvault.example/x", "w"),),
        psychometric=(PsychRow("U1", 50, 50, 50, 50, 50),),
    )
    stats = aggregate_days(log)[("U1", day.date())]
    assert stats.logons == 2          # logoff not counted
    assert stats.ah_logons == 1       # only the 20:00 logon
    assert stats.connects == 1        # disconnect not counted
    assert stats.files == 1
    assert stats.max_recipients == 3  # to + cc
    assert stats.cloud_hits == 1 and stats.job_hits == 0


# ------------------------------------------------------------------ CSV I/O

def test_roundtrip_equal(tmp_path, corpus):
    log, _ = corpus
    write_cert_csv(log, tmp_path)
    res = parse_cert_csv(tmp_path)
    assert res.total_skipped == 0
    assert res.log == log


def test_parse_partial_directory(tmp_path):
    (tmp_path / "logon.csv").write_text(
        "id,date,user,pc,activity\n"
        "{1},01/02/2023 08:15:00,AAA1000,PC-0000,Logon\n"
        "{2},01/02/2023 17:00:00,AAA1000,PC-0000,Logoff\n"
        "{3},01/03/2023 08:20:30,AAA1000,PC-0000,Logon\n")
    res = parse_cert_csv(tmp_path)
    assert len(res.log.logon) == 3
    assert res.log.email == () and res.log.psychometric == ()
    assert res.total_skipped == 0
    assert res.log.logon[0].date == dt.datetime(2023, 1, 2, 8, 15, 0)


def test_parse_skips_malformed_rows(tmp_path):
    (tmp_path / "logon.csv").write_text(
        "id,date,user,pc,activity\n"
        "{1},01/02/2023 08:15:00,U,P,Logon\n"
        "{2},not-a-timestamp,U,P,Logon\n"        # bad timestamp
        "{3},01/02/2023 09:00:00,U,P,Dance\n"    # bad activity
        "{4},01/02/2023 10:00:00,U\n")           # short row
    res = parse_cert_csv(tmp_path)
    assert len(res.log.logon) == 1
    assert res.skipped["logon"] == 3


def test_parse_skips_out_of_range_psychometric(tmp_path):
    (tmp_path / "psychometric.csv").write_text(
        "user,O,C,E,A,N\nU1,50,50,50,50,50\nU2,50,50,150,50,50\n")
    res = parse_cert_csv(tmp_path)
    assert len(res.log.psychometric) == 1
    assert res.skipped["psychometric"] == 1


def test_parse_accepts_user_id_alias_and_extra_columns(tmp_path):
    (tmp_path / "psychometric.csv").write_text(
        "employee_name,user_id,O,C,E,A,N\nSome Body,U1,10,20,30,40,50\n")
    res = parse_cert_csv(tmp_path)
    assert res.log.psychometric == (PsychRow("U1", 10, 20, 30, 40, 50),)


def test_parse_errors(tmp_path):
    with pytest.raises(InputError):
        parse_cert_csv(tmp_path / "missing-dir")
    with pytest.raises(InputError):
        parse_cert_csv(tmp_path)  # empty dir, no recognizable file
    (tmp_path / "logon.csv").write_text("totally,wrong,header\n")
    with pytest.raises(FormatError):
        parse_cert_csv(tmp_path)
    (tmp_path / "logon.csv").write_text("")
    with pytest.raises(FormatError):
        parse_cert_csv(tmp_path)


def test_email_recipients_roundtrip(tmp_path, corpus):
    log, _ = corpus
    write_cert_csv(log, tmp_path)
    parsed = parse_cert_csv(tmp_path).log
    multi = [r for r in log.email if len(r.to) + len(r.cc) >= 2]
    assert multi, "corpus should contain multi-recipient emails"
    assert parsed.email == log.email
