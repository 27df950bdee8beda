import csv
import io
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import make_trace
from pcm.errors import ConfigError, ContractError, ParseError
from pcm.event_log import (
    MISSING,
    Event,
    EventLog,
    LogSchema,
    Trace,
    log_to_text,
    parse_log,
    parse_timestamp,
    read_log,
    remove_incomplete_cases,
    trace_duration,
)

SCHEMA = LogSchema(attributes={"priority": "categorical", "amount": "numerical"})


def test_groups_rows_into_traces():
    text = (
        "case_id,activity,timestamp,priority,amount\n"
        "c1,receive PO,2024-01-01T10:00:00Z,high,10\n"
        "c2,receive PO,2024-01-01T11:00:00+00:00,low,\n"
        "c1,confirm order,2024-01-01T12:00:00+02:00,high,20.5\n"
    )
    log = parse_log(text.encode(), SCHEMA)
    assert [len(t) for t in log.traces] == [2, 1]
    assert log.n_events == 3
    c1 = log.traces[0]
    assert c1.activities == ["receive PO", "confirm order"]
    # +02:00 normalized to UTC
    assert c1.events[1].timestamp == datetime(2024, 1, 1, 10, 0, tzinfo=timezone.utc)
    assert c1.events[1].attributes["amount"] == 20.5
    assert log.traces[1].events[0].attributes["amount"] is None


def test_header_only_gives_empty_log():
    log = parse_log(b"case_id,activity,timestamp,priority,amount\n", SCHEMA)
    assert len(log) == 0


def test_bad_timestamp_names_the_line():
    text = "case_id,activity,timestamp,priority,amount\nc1,a,2024-01-01T00:00:00Z,x,1\nc1,b,not-a-date,x,1\n"
    with pytest.raises(ParseError, match="line 3"):
        parse_log(text, SCHEMA)


def test_wrong_column_count_names_the_line():
    text = "case_id,activity,timestamp,priority,amount\nc1,a,2024-01-01T00:00:00Z,x\n"
    with pytest.raises(ParseError) as exc:
        parse_log(text, SCHEMA)
    assert exc.value.line == 2


def test_undeclared_column_rejected():
    with pytest.raises(ParseError, match="not declared"):
        parse_log("case_id,activity,timestamp,priority,amount,colour\n", SCHEMA)


def test_unknown_attribute_type_is_config_error():
    with pytest.raises(ConfigError):
        LogSchema(attributes={"amount": "decimal"})
    with pytest.raises(ConfigError):
        LogSchema.from_text("attr.amount = decimal\n")


def test_reserved_attribute_name_rejected():
    with pytest.raises(ConfigError):
        LogSchema(attributes={"hour": "numerical"})


def test_missing_values():
    text = "case_id,activity,timestamp,priority,amount\nc1,a,2024-01-01T00:00:00Z,,nan\n"
    e = parse_log(text, SCHEMA).traces[0].events[0]
    assert e.attributes == {"priority": MISSING, "amount": None}


def test_infinite_numeric_rejected():
    text = "case_id,activity,timestamp,priority,amount\nc1,a,2024-01-01T00:00:00Z,x,inf\n"
    with pytest.raises(ParseError, match="line 2"):
        parse_log(text, SCHEMA)


def test_schema_text_round_trip_and_custom_format():
    schema = LogSchema(
        case_column="case",
        timestamp_column="time",
        timestamp_format="%d.%m.%Y %H:%M",
        delimiter="\t",
        attributes={"org": "categorical"},
    )
    again = LogSchema.from_text(schema.to_text())
    assert again == schema
    log = parse_log("case\tactivity\ttime\torg\nx\ta\t04.03.2024 13:05\tR1\n", again)
    assert log.traces[0].events[0].timestamp == datetime(2024, 3, 4, 13, 5, tzinfo=timezone.utc)


def test_stable_tie_break():
    text = (
        "case_id,activity,timestamp,priority,amount\n"
        "c,second,2024-01-01T01:00:00Z,x,\n"
        "c,first,2024-01-01T00:00:00Z,x,\n"
        "c,tie_a,2024-01-01T02:00:00Z,x,\n"
        "c,tie_b,2024-01-01T02:00:00Z,x,\n"
    )
    assert parse_log(text, SCHEMA).traces[0].activities == ["first", "second", "tie_a", "tie_b"]


def test_duplicate_case_ids_rejected():
    t = make_trace("c", [("a", 0)])
    with pytest.raises(ContractError):
        EventLog((t, t), {})


def test_event_invariants():
    ts = datetime(2024, 1, 1, tzinfo=timezone.utc)
    with pytest.raises(ContractError):
        Event("", "c", ts, {})
    with pytest.raises(ContractError):
        Event("a", "", ts, {})


def test_remove_incomplete_cases():
    traces = (
        make_trace("a", [("x", 0), ("pay invoice", 1)]),
        make_trace("b", [("x", 0)]),
        make_trace("c", [("pay invoice", 0)]),
    )
    log = EventLog(traces, {})
    assert remove_incomplete_cases(log, {"pay invoice"}).case_ids == ["a", "c"]
    assert remove_incomplete_cases(log, set()) is log
    assert len(remove_incomplete_cases(log, {"nothing"})) == 0


def test_trace_duration():
    assert trace_duration(make_trace("a", [("x", 0), ("y", 1)])) == 3600.0
    assert trace_duration(make_trace("a", [("x", 0)])) == 0.0
    # 10:00, 11:00, 09:30 in input order sorts to 09:30 .. 11:00
    assert trace_duration(make_trace("a", [("x", 1.0), ("y", 2.0), ("z", 0.5)])) == 5400.0
    with pytest.raises(ContractError):
        trace_duration(Trace("e", ()))


def test_read_log_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        read_log(tmp_path / "nope.csv", SCHEMA)


def test_parse_timestamp_naive_is_utc():
    assert parse_timestamp("2024-01-01T00:00:00") == datetime(2024, 1, 1, tzinfo=timezone.utc)


_events = st.lists(
    st.tuples(
        st.sampled_from(["c1", "c2", "c3"]),
        st.sampled_from(["a", "b", "a,b", 'q"x']),
        st.integers(0, 10**6),
        st.one_of(st.none(), st.sampled_from(["high", "low", "x y"])),
        st.one_of(st.none(), st.floats(allow_nan=False, allow_infinity=False, width=64)),
    ),
    max_size=30,
)


@settings(max_examples=60, deadline=None)
@given(_events)
def test_write_parse_round_trip(rows):
    buf = io.StringIO()
    buf.write("case_id,activity,timestamp,priority,amount\n")
    w = csv.writer(buf, lineterminator="\n")
    for case, act, sec, pri, amt in rows:
        ts = datetime.fromtimestamp(1.7e9 + sec, tz=timezone.utc).isoformat()
        w.writerow([case, act, ts, pri or "", "" if amt is None else repr(amt)])
    log = parse_log(buf.getvalue(), SCHEMA)
    again = parse_log(log_to_text(log, SCHEMA), SCHEMA)
    assert again == log
    assert sum(len(t) for t in log.traces) == len(rows)
    for t in log.traces:
        assert all(a.timestamp <= b.timestamp for a, b in zip(t.events, t.events[1:]))
        assert trace_duration(t) >= 0
