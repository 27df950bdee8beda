"""Event logs: parsing delimiter-separated text, grouping into traces, filtering."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import BinaryIO, Iterator, Mapping, Sequence, TextIO

from pcm.errors import ConfigError, ContractError, ParseError
from pcm.kvfile import format_kv, parse_kv

MISSING = "⊥missing"
CATEGORICAL = "categorical"
NUMERICAL = "numerical"
ATTRIBUTE_TYPES = (CATEGORICAL, NUMERICAL)

# Names used by the encoder for derived features; user attributes may not shadow them.
RESERVED_NAMES = frozenset(
    {
        "activity",
        "month",
        "weekday",
        "hour",
        "elapsed_since_start",
        "elapsed_since_prev",
        "prefix_len",
    }
)

AttrValue = str | float | None


@dataclass(frozen=True)
class Event:
    activity: str
    case_id: str
    timestamp: datetime
    attributes: Mapping[str, AttrValue] = field(default_factory=dict)

    def __post_init__(self):
        if not self.activity:
            raise ContractError("event activity must be non-empty")
        if not self.case_id:
            raise ContractError("event case_id must be non-empty")
        if self.timestamp.tzinfo is None:
            raise ContractError("event timestamp must be timezone-aware")


@dataclass(frozen=True)
class Trace:
    """Events of one case, sorted by timestamp (stable for ties)."""

    case_id: str
    events: tuple[Event, ...]

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __getitem__(self, item):
        return self.events[item]

    @property
    def activities(self) -> list[str]:
        return [e.activity for e in self.events]

    def head(self, k: int) -> "Trace":
        """Prefix made of the first ``k`` events."""
        return Trace(self.case_id, self.events[:k])

    @classmethod
    def from_events(cls, case_id: str, events: Sequence[Event]) -> "Trace":
        for e in events:
            if e.case_id != case_id:
                raise ContractError(f"event of case {e.case_id!r} in trace {case_id!r}")
        # sorted() is stable, so equal timestamps keep input order
        return cls(case_id, tuple(sorted(events, key=lambda e: e.timestamp)))


@dataclass(frozen=True)
class EventLog:
    traces: tuple[Trace, ...]
    attribute_schema: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for t in self.traces:
            if t.case_id in seen:
                raise ContractError(f"duplicate case id {t.case_id!r}")
            seen.add(t.case_id)

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self) -> Iterator[Trace]:
        return iter(self.traces)

    @property
    def n_events(self) -> int:
        return sum(len(t) for t in self.traces)

    @property
    def case_ids(self) -> list[str]:
        return [t.case_id for t in self.traces]


@dataclass(frozen=True)
class LogSchema:
    """Column roles and types of a delimiter-separated log file.

    ``timestamp_format`` of None means ISO-8601 (a trailing ``Z`` is accepted;
    naive timestamps are read as UTC). Any other value is a ``strptime`` format.
    """

    case_column: str = "case_id"
    activity_column: str = "activity"
    timestamp_column: str = "timestamp"
    timestamp_format: str | None = None
    delimiter: str = ","
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name, kind in self.attributes.items():
            if kind not in ATTRIBUTE_TYPES:
                raise ConfigError(
                    f"attribute {name!r} has unknown type {kind!r}; "
                    f"expected one of {', '.join(ATTRIBUTE_TYPES)}"
                )
            if name in RESERVED_NAMES:
                raise ConfigError(f"attribute name {name!r} is reserved")
        roles = (self.case_column, self.activity_column, self.timestamp_column)
        if len(set(roles)) != 3:
            raise ConfigError("case, activity and timestamp columns must differ")
        if set(roles) & set(self.attributes):
            raise ConfigError("role columns cannot also be declared as attributes")
        if len(self.delimiter) != 1:
            raise ConfigError(f"delimiter must be one character, got {self.delimiter!r}")

    @property
    def columns(self) -> list[str]:
        return [self.case_column, self.activity_column, self.timestamp_column, *self.attributes]

    @classmethod
    def from_text(cls, text: str) -> "LogSchema":
        kv = parse_kv(text)
        attributes = {}
        kwargs: dict = {}
        for key, value in kv.items():
            if key.startswith("attr."):
                attributes[key[5:]] = value
            elif key == "case":
                kwargs["case_column"] = value
            elif key == "activity":
                kwargs["activity_column"] = value
            elif key == "timestamp":
                kwargs["timestamp_column"] = value
            elif key == "timestamp_format":
                kwargs["timestamp_format"] = None if value.lower() in ("", "iso8601") else value
            elif key == "delimiter":
                kwargs["delimiter"] = {"\\t": "\t", "tab": "\t"}.get(value, value)
            else:
                raise ConfigError(f"unknown schema key {key!r}")
        return cls(attributes=attributes, **kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "LogSchema":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"schema file not found: {path}")
        return cls.from_text(path.read_text(encoding="utf-8"))

    def to_text(self) -> str:
        items: dict[str, object] = {
            "case": self.case_column,
            "activity": self.activity_column,
            "timestamp": self.timestamp_column,
            "timestamp_format": self.timestamp_format or "iso8601",
            "delimiter": "\\t" if self.delimiter == "\t" else self.delimiter,
        }
        items.update({f"attr.{k}": v for k, v in self.attributes.items()})
        return format_kv(items)


def parse_timestamp(text: str, fmt: str | None = None) -> datetime:
    """Parse a timestamp and normalize it to UTC. Raises ValueError on bad input."""
    text = text.strip()
    if fmt is None:
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        ts = datetime.fromisoformat(text)
    else:
        ts = datetime.strptime(text, fmt)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime, fmt: str | None = None) -> str:
    if fmt is None:
        return ts.astimezone(timezone.utc).isoformat()
    return ts.strftime(fmt)


def _parse_value(raw: str, kind: str, lineno: int, column: str) -> AttrValue:
    if kind == CATEGORICAL:
        return raw if raw != "" else MISSING
    if raw.strip() == "":
        return None
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(f"column {column!r}: not a number: {raw!r}", line=lineno) from None
    if math.isnan(value):
        return None
    if math.isinf(value):
        raise ParseError(f"column {column!r}: infinite value", line=lineno)
    return value


def parse_log(source: BinaryIO | TextIO | bytes | str, schema: LogSchema) -> EventLog:
    """Parse a delimiter-separated log with a header row into an EventLog.

    ``source`` may be a binary or text stream, raw bytes, or already-decoded
    text. Traces appear in order of their first row; events inside a trace
    are sorted by timestamp, ties keeping input order.
    """
    if isinstance(source, bytes):
        text: TextIO = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, str):
        text = io.StringIO(source)
    elif isinstance(source, io.TextIOBase):
        text = source
    else:
        text = io.TextIOWrapper(source, encoding="utf-8", newline="")

    reader = csv.reader(text, delimiter=schema.delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input: missing header row", line=1) from None
    header = [h.strip() for h in header]
    if header and header[0].startswith("﻿"):
        header[0] = header[0][1:]
    for required in (schema.case_column, schema.activity_column, schema.timestamp_column):
        if required not in header:
            raise ParseError(f"required column {required!r} missing from header", line=1)
    for name in header:
        if name not in schema.columns:
            raise ParseError(f"column {name!r} is not declared in the schema", line=1)
    for name in schema.attributes:
        if name not in header:
            raise ParseError(f"declared attribute {name!r} missing from header", line=1)
    if len(set(header)) != len(header):
        raise ParseError("duplicate column names in header", line=1)

    index = {name: i for i, name in enumerate(header)}
    grouped: dict[str, list[Event]] = {}
    for row in reader:
        lineno = reader.line_num
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} columns, got {len(row)}", line=lineno)
        case_id = row[index[schema.case_column]]
        activity = row[index[schema.activity_column]]
        if not case_id:
            raise ParseError("empty case id", line=lineno)
        if not activity:
            raise ParseError("empty activity", line=lineno)
        raw_ts = row[index[schema.timestamp_column]]
        try:
            ts = parse_timestamp(raw_ts, schema.timestamp_format)
        except ValueError:
            raise ParseError(f"unparseable timestamp {raw_ts!r}", line=lineno) from None
        attrs = {
            name: _parse_value(row[index[name]], kind, lineno, name)
            for name, kind in schema.attributes.items()
        }
        grouped.setdefault(case_id, []).append(Event(activity, case_id, ts, attrs))

    traces = tuple(Trace.from_events(cid, evs) for cid, evs in grouped.items())
    return EventLog(traces, dict(schema.attributes))


def read_log(path: str | Path, schema: LogSchema) -> EventLog:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"log file not found: {path}")
    with open(path, "rb") as fh:
        return parse_log(fh, schema)


def format_value(value: AttrValue, kind: str) -> str:
    if kind == CATEGORICAL:
        return "" if value == MISSING or value is None else str(value)
    return "" if value is None else repr(float(value))


def write_log(log: EventLog, schema: LogSchema, stream: TextIO) -> None:
    """Serialize ``log`` in the columnar format ``parse_log`` reads back."""
    writer = csv.writer(stream, delimiter=schema.delimiter, lineterminator="\n")
    writer.writerow(schema.columns)
    for trace in log.traces:
        for e in trace.events:
            writer.writerow(
                [
                    e.case_id,
                    e.activity,
                    format_timestamp(e.timestamp, schema.timestamp_format),
                    *(
                        format_value(e.attributes.get(name), kind)
                        for name, kind in schema.attributes.items()
                    ),
                ]
            )


def log_to_text(log: EventLog, schema: LogSchema) -> str:
    buf = io.StringIO()
    write_log(log, schema, buf)
    return buf.getvalue()


def remove_incomplete_cases(log: EventLog, end_activities: set[str] | frozenset[str]) -> EventLog:
    """Keep traces whose last activity is in ``end_activities``; an empty set keeps all."""
    if not end_activities:
        return log
    kept = tuple(t for t in log.traces if len(t) and t.events[-1].activity in end_activities)
    return EventLog(kept, log.attribute_schema)


def trace_duration(trace: Trace) -> float:
    """Seconds between the first and the last event of ``trace``."""
    if len(trace) == 0:
        raise ContractError("trace_duration of an empty trace")
    return (trace.events[-1].timestamp - trace.events[0].timestamp).total_seconds()

