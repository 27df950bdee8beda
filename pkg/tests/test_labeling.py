import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import (
    HOUR,
    RUNNING_EXAMPLE_CONSTRAINT,
    RUNNING_EXAMPLE_EXPECTED,
    RUNNING_EXAMPLE_LOG,
    make_trace,
)
from pcm.constraint import Pattern, TemporalConstraint, ViolationKind
from pcm.errors import ConfigError, ContractError
from pcm.event_log import EventLog, LogSchema, parse_log
from pcm.labeling import (
    LabeledCase,
    generate_prefixes,
    label_case,
    label_log,
    max_prefix_length,
    write_prefix_dump,
)

SCHEMA = LogSchema(attributes={"priority": "categorical"})
C = TemporalConstraint.from_text(RUNNING_EXAMPLE_CONSTRAINT)


def running_cases():
    return label_log(parse_log(RUNNING_EXAMPLE_LOG, SCHEMA), C)


def test_running_example_labels():
    cases = running_cases()
    assert len(cases) == 4
    for case in cases:
        label, hours, cut = RUNNING_EXAMPLE_EXPECTED[case.case_id]
        assert case.label == label
        assert case.magnitude_seconds == hours * HOUR
        assert len(case.cut_trace) == cut


def test_case_invariant():
    t = make_trace("c", [("a", 0)])
    with pytest.raises(ContractError):
        LabeledCase("c", t, 1, 0.0)
    with pytest.raises(ContractError):
        LabeledCase("c", t, 0, 5.0)


def _cases_with_lengths(lengths, label=1):
    return [
        LabeledCase(f"c{i}", make_trace(f"c{i}", [("x", j) for j in range(n)]), label, 1.0 if label else 0.0)
        for i, n in enumerate(lengths)
    ]


@pytest.mark.parametrize(
    "lengths,expected", [([2, 3, 4, 5, 10], 10), ([7], 7), ([3, 3, 3], 3), ([5, 1, 4, 2, 3, 6, 8, 7, 9, 10], 9)]
)
def test_max_prefix_length(lengths, expected):
    assert max_prefix_length(_cases_with_lengths(lengths)) == expected


def test_max_prefix_length_ignores_normal_cases():
    cases = _cases_with_lengths([2, 3]) + _cases_with_lengths([50, 60], label=0)
    assert max_prefix_length(cases) == 3


def test_max_prefix_length_without_positives():
    with pytest.raises(ConfigError, match="explicitly"):
        max_prefix_length(_cases_with_lengths([3], label=0))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 30), min_size=1, max_size=40), st.integers(1, 100))
def test_max_prefix_length_matches_brute_force(lengths, pct):
    # smallest observed L with at least pct% of positives at or below it, in integers
    n = len(lengths)
    brute = min(L for L in lengths if 100 * sum(x <= L for x in lengths) >= pct * n)
    assert max_prefix_length(_cases_with_lengths(lengths), pct / 100) == brute


def test_prefix_counts():
    (case,) = _cases_with_lengths([3])
    assert [p.prefix_len for p in generate_prefixes([case], 5)] == [1, 2, 3]
    (case,) = _cases_with_lengths([10])
    assert len(generate_prefixes([case], 4)) == 4


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 12), max_size=20), st.integers(1, 8), st.integers(1, 4))
def test_prefix_count_closed_form(lengths, max_len, min_len):
    if min_len > max_len:
        min_len, max_len = max_len, min_len
    cases = _cases_with_lengths(lengths)
    prefixes = generate_prefixes(cases, max_len, min_len)
    expected = sum(min(max_len, n) - min_len + 1 for n in lengths if n >= min_len)
    assert len(prefixes) == expected
    for p in prefixes:
        assert min_len <= p.prefix_len <= max_len
        assert len(p.prefix) == p.prefix_len
        assert (p.label == 1) == (p.magnitude_seconds > 0)


def test_prefixes_inherit_labels_and_order():
    prefixes = generate_prefixes(running_cases(), 5)
    assert [(p.case_id, p.prefix_len) for p in prefixes[:3]] == [("1", 1), ("1", 2), ("2", 1)]
    assert all(p.label == 1 and p.magnitude_seconds == 29 * HOUR for p in prefixes if p.case_id == "1")


def test_bad_prefix_bounds():
    with pytest.raises(ContractError):
        generate_prefixes([], 2, 3)
    with pytest.raises(ContractError):
        generate_prefixes([], 0, 0)


def test_control_flow_case_keeps_kind():
    t = make_trace("c", [("confirm order", 0), ("x", 3)])
    case = label_case(t, C)
    assert case.violation_kind is ViolationKind.CONTROL_FLOW
    assert len(case.cut_trace) == 2


def test_prefix_dump():
    buf = io.StringIO()
    write_prefix_dump(generate_prefixes(running_cases()[:1], 5), SCHEMA, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "case_id,activity,timestamp,priority,prefix_len,label,magnitude_seconds"
    # prefixes of length 1 and 2: 1 + 2 rows
    assert len(lines) == 4
    assert lines[-1].startswith("1,confirm order,2023-05-01T09:30:00+00:00,high,2,1,104400.0")
