"""Case labeling (binary label + violation magnitude), trace cutting, prefixes."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence, TextIO

from pcm.constraint import TemporalConstraint, ViolationKind, cut_point, evaluate
from pcm.errors import ConfigError, ContractError
from pcm.event_log import EventLog, LogSchema, Trace, format_timestamp, format_value


@dataclass(frozen=True)
class LabeledCase:
    case_id: str
    cut_trace: Trace
    label: int
    magnitude_seconds: float
    violation_kind: ViolationKind = ViolationKind.NONE

    def __post_init__(self):
        if (self.label == 1) != (self.magnitude_seconds > 0):
            raise ContractError(
                f"case {self.case_id}: label {self.label} inconsistent with "
                f"magnitude {self.magnitude_seconds}"
            )

    @property
    def start_time(self):
        return self.cut_trace.events[0].timestamp


@dataclass(frozen=True)
class LabeledPrefix:
    case_id: str
    prefix: Trace
    prefix_len: int
    label: int
    magnitude_seconds: float


def label_case(trace: Trace, constraint: TemporalConstraint) -> LabeledCase:
    outcome = evaluate(constraint, trace)
    cut = cut_point(constraint, trace)
    return LabeledCase(
        trace.case_id,
        trace.head(cut),
        outcome.label,
        outcome.magnitude_seconds,
        outcome.violation_kind,
    )


def label_log(log: EventLog, constraint: TemporalConstraint) -> list[LabeledCase]:
    """One LabeledCase per trace, in log order."""
    return [label_case(t, constraint) for t in log.traces]


def max_prefix_length(cases: Sequence[LabeledCase], percentile: float = 0.90) -> int:
    """Nearest-rank percentile of the cut lengths of deviant cases."""
    if not 0 < percentile <= 1:
        raise ConfigError(f"percentile must be in (0, 1], got {percentile}")
    lengths = sorted(len(c.cut_trace) for c in cases if c.label == 1)
    if not lengths:
        raise ConfigError(
            "no deviant cases to derive the maximum prefix length from; "
            "set it explicitly (max_prefix_len / --max-prefix-len)"
        )
    # rounding first keeps e.g. 0.3 * 10 from ranking as 4
    rank = math.ceil(round(percentile * len(lengths), 9))
    return lengths[max(rank, 1) - 1]


def generate_prefixes(
    cases: Sequence[LabeledCase], max_len: int, min_len: int = 1
) -> list[LabeledPrefix]:
    """All prefixes of each cut trace with length in ``[min_len, max_len]``.

    Output order is case order, then ascending length. Every prefix carries the
    label and magnitude of its full case.
    """
    if not max_len >= min_len >= 1:
        raise ContractError(f"need max_len >= min_len >= 1, got {max_len}, {min_len}")
    out = []
    for case in cases:
        for k in range(min_len, min(max_len, len(case.cut_trace)) + 1):
            out.append(
                LabeledPrefix(
                    case.case_id, case.cut_trace.head(k), k, case.label, case.magnitude_seconds
                )
            )
    return out


def write_prefix_dump(prefixes: Sequence[LabeledPrefix], schema: LogSchema, stream: TextIO) -> None:
    """Columnar dump: the log columns of every prefix event plus label columns.

    Each prefix is written as its own block of rows; ``prefix_len`` identifies
    the block inside a case.
    """
    writer = csv.writer(stream, delimiter=schema.delimiter, lineterminator="\n")
    writer.writerow([*schema.columns, "prefix_len", "label", "magnitude_seconds"])
    for p in prefixes:
        for e in p.prefix.events:
            writer.writerow(
                [
                    e.case_id,
                    e.activity,
                    format_timestamp(e.timestamp, schema.timestamp_format),
                    *(
                        format_value(e.attributes.get(name), kind)
                        for name, kind in schema.attributes.items()
                    ),
                    p.prefix_len,
                    p.label,
                    repr(float(p.magnitude_seconds)),
                ]
            )
