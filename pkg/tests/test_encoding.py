from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import make_trace
from pcm.encoding import (
    UNSEEN,
    EncoderSpec,
    encode,
    encode_raw,
    extract_time_features,
    fit_encoder,
)
from pcm.errors import ConfigError, ContractError, VersionError
from pcm.event_log import Event, Trace
from pcm.labeling import LabeledPrefix

SCHEMA = {"amount": "numerical", "org": "categorical"}


def prefix(case_id, steps, amounts=None, orgs=None, label=0, magnitude=0.0):
    amounts = amounts or [None] * len(steps)
    orgs = orgs or ["r1"] * len(steps)
    attrs = {i: {"amount": amounts[i], "org": orgs[i]} for i in range(len(steps))}
    t = make_trace(case_id, steps, attrs)
    return LabeledPrefix(case_id, t, len(t), label, magnitude)


def col(spec, name):
    return spec.feature_names.index(name)


def test_time_features_of_a_monday():
    ts = datetime(2024, 3, 4, 13, 5, tzinfo=timezone.utc)
    f = extract_time_features(Event("a", "c", ts))
    assert ts.strftime("%A") == "Monday"
    assert (f["month"], f["weekday"], f["hour"]) == (3.0, 0.0, 13.0)
    assert f["elapsed_since_start"] == f["elapsed_since_prev"] == 0.0


def test_elapsed_features():
    t0 = datetime(2024, 1, 1, tzinfo=timezone.utc)
    a, b, c = (Event("x", "c", t0 + timedelta(seconds=s)) for s in (0, 60, 150))
    f = extract_time_features(c, a, b)
    assert f["elapsed_since_prev"] == 90.0
    assert f["elapsed_since_start"] == 150.0


def test_activity_counts_and_unseen_slot():
    train = [prefix("p", [("A", 0), ("A", 1), ("B", 2)])]
    spec = fit_encoder(train, SCHEMA)
    assert spec.categorical_vocab["activity"] == ("A", "B")
    names = spec.feature_names
    assert names[:3] == ["activity=A", "activity=B", f"activity={UNSEEN}"]
    raw = encode_raw(train, spec)[0]
    assert raw[col(spec, "activity=A")] == 2 and raw[col(spec, "activity=B")] == 1
    raw = encode_raw([prefix("q", [("Z", 0)])], spec)[0]
    assert raw[col(spec, f"activity={UNSEEN}")] == 1
    assert raw[col(spec, "activity=A")] == 0


def test_numeric_mean_and_population_std():
    p = prefix("p", [("A", 0), ("A", 1)], amounts=[10.0, 20.0])
    spec = fit_encoder([p], SCHEMA)
    raw = encode_raw([p], spec)[0]
    assert raw[col(spec, "amount:mean")] == 15.0
    assert raw[col(spec, "amount:std")] == 5.0


def test_missing_numeric_excluded_and_absent_is_zero():
    p = prefix("p", [("A", 0), ("A", 1), ("A", 2)], amounts=[4.0, None, 8.0])
    q = prefix("q", [("A", 0)])
    spec = fit_encoder([p, q], SCHEMA)
    raw = encode_raw([p, q], spec)
    assert raw[0, col(spec, "amount:mean")] == 6.0
    assert raw[1, col(spec, "amount:mean")] == 0.0 and raw[1, col(spec, "amount:std")] == 0.0


def test_layout_shape():
    spec = fit_encoder([prefix("p", [("A", 0), ("B", 1)])], SCHEMA)
    sources = [s for _, s in spec.feature_layout]
    assert sources.count("count:activity") == 3
    assert "amount:mean" in spec.feature_names and "amount:std" in spec.feature_names
    assert spec.feature_names[-1] == "prefix_len"
    # categoricals first, alphabetical by attribute
    assert spec.feature_names.index("org=r1") > spec.feature_names.index("activity=B")


def test_last_event_time_flag():
    p = prefix("p", [("A", 0), ("B", 2)])
    spec = fit_encoder([p], SCHEMA, last_event_time=True)
    raw = encode_raw([p], spec)[0]
    assert raw[col(spec, "last:elapsed_since_start")] == 7200.0


def test_refit_is_byte_identical():
    train = [prefix("p", [("B", 0), ("A", 1)], amounts=[1.0, 3.0]), prefix("q", [("C", 0)])]
    assert fit_encoder(train, SCHEMA).dumps() == fit_encoder(train, SCHEMA).dumps()


def test_normalized_train_columns():
    rng = np.random.default_rng(0)
    train = []
    for i in range(40):
        n = int(rng.integers(1, 5))
        steps = [(str(rng.choice(["A", "B", "C"])), float(h)) for h in np.sort(rng.uniform(0, 50, n))]
        amounts = [float(x) if rng.random() < 0.8 else None for x in rng.normal(100, 30, n)]
        train.append(prefix(f"c{i}", steps, amounts, label=i % 2, magnitude=float(i % 2) * 86400))
    spec = fit_encoder(train, SCHEMA)
    m = encode(train, spec)
    constant = np.asarray(spec.constant)
    assert np.all(np.isfinite(m.values))
    assert np.all(np.abs(m.values.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(m.values[:, ~constant].std(axis=0) - 1) < 1e-9)
    assert np.all(m.values[:, constant] == 0)
    assert set(m.magnitudes) == {0.0, 1.0}


def test_encoding_test_data_leaves_spec_unchanged():
    train = [prefix("p", [("A", 0)], amounts=[1.0]), prefix("q", [("B", 0)], amounts=[3.0])]
    spec = fit_encoder(train, SCHEMA)
    before = spec.digest()
    encode([prefix("z", [("Z", 0)], amounts=[1e6], orgs=["new"])], spec)
    assert spec.digest() == before


def test_empty_train_and_unknown_attribute():
    with pytest.raises(ConfigError):
        fit_encoder([], SCHEMA)
    spec = fit_encoder([prefix("p", [("A", 0)])], SCHEMA)
    t = Trace("x", (Event("A", "x", datetime(2024, 1, 1, tzinfo=timezone.utc), {"colour": "red"}),))
    with pytest.raises(ContractError):
        encode([LabeledPrefix("x", t, 1, 0, 0.0)], spec)


def test_spec_serialization():
    spec = fit_encoder([prefix("p", [("A", 0), ("B", 1)], amounts=[0.1, 0.7])], SCHEMA)
    again = EncoderSpec.loads(spec.dumps())
    assert again == spec and again.digest() == spec.digest()
    bad = spec.to_dict()
    bad["version"] = 99
    with pytest.raises(VersionError):
        EncoderSpec.from_dict(bad)


def test_feature_matrix_text_export():
    train = [prefix("p", [("A", 0)], label=1, magnitude=43200.0)]
    m = encode(train, fit_encoder(train, SCHEMA))
    lines = m.to_text().splitlines()
    assert lines[0].startswith("case_id\tprefix_len\tlabel\tmagnitude_days\tactivity=A")
    assert lines[1].startswith("p\t1\t1\t0.5\t")


@settings(max_examples=50, deadline=None)
@given(st.permutations(list(range(5))))
def test_permutation_invariance_except_elapsed(order):
    t0 = datetime(2024, 2, 1, tzinfo=timezone.utc)
    events = [
        Event(a, "c", t0 + timedelta(hours=h), {"amount": v, "org": o})
        for a, h, v, o in [("A", 0, 1.0, "x"), ("B", 5, 2.5, "y"), ("A", 30, None, "x"),
                           ("C", 49, 7.25, "z"), ("B", 700, 0.125, "y")]
    ]
    base = LabeledPrefix("c", Trace("c", tuple(events)), 5, 0, 0.0)
    perm = LabeledPrefix("c", Trace("c", tuple(events[i] for i in order)), 5, 0, 0.0)
    spec = fit_encoder([base], SCHEMA)
    keep = [i for i, n in enumerate(spec.feature_names) if not n.startswith("elapsed")]
    a, b = encode_raw([base, perm], spec)[:, keep]
    assert np.array_equal(a, b)
