"""Temporal compliance constraints and their evaluation on completed traces."""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import timedelta
from enum import Enum
from pathlib import Path

from pcm.errors import ConfigError, ContractError
from pcm.event_log import Trace, trace_duration
from pcm.kvfile import format_kv, parse_kv

# Deviant cases need a strictly positive magnitude; a control-flow violation on a
# zero-duration case gets this floor (timestamps have second resolution).
MIN_MAGNITUDE_SECONDS = 1.0

_UNITS = {"s": 1.0, "m": 60.0, "h": 3600.0, "d": 86400.0}


class Pattern(str, Enum):
    MAX_DISTANCE = "max_distance"
    MIN_DISTANCE = "min_distance"


class Status(str, Enum):
    NORMAL = "normal"
    DEVIANT = "deviant"


class ViolationKind(str, Enum):
    NONE = "none"
    TEMPORAL = "temporal"
    CONTROL_FLOW = "control_flow"


def parse_duration(text: str) -> float:
    """``'24h'`` -> 86400.0. Units: s, m, h, d; a bare number means seconds."""
    m = re.fullmatch(r"\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*([smhd]?)\s*", text)
    if not m:
        raise ConfigError(f"bad duration {text!r}; expected e.g. '24h', '90m', '2d'")
    return float(m.group(1)) * _UNITS[m.group(2) or "s"]


def format_duration(seconds: float) -> str:
    for unit in ("d", "h", "m"):
        size = _UNITS[unit]
        if seconds >= size and seconds % size == 0:
            return f"{int(seconds // size)}{unit}"
    return f"{seconds:g}s"


@dataclass(frozen=True)
class TemporalConstraint:
    """Maximum or minimum distance between an anchor and a later target activity.

    Example: ship goods no later than 24h after confirm order is
    ``TemporalConstraint("o2c_1", "confirm order", "ship goods",
    Pattern.MAX_DISTANCE, 86400.0)``.
    """

    id: str
    anchor_activity: str
    target_activity: str
    pattern: Pattern
    bound_seconds: float

    def __post_init__(self):
        if not self.bound_seconds > 0:
            raise ConfigError(f"constraint bound must be > 0, got {self.bound_seconds}")
        if not self.anchor_activity or not self.target_activity:
            raise ConfigError("constraint anchor and target must be non-empty")
        object.__setattr__(self, "pattern", Pattern(self.pattern))

    @classmethod
    def from_text(cls, text: str) -> "TemporalConstraint":
        kv = parse_kv(text)
        required = ("id", "anchor", "target", "pattern", "bound")
        missing = [k for k in required if k not in kv]
        if missing:
            raise ConfigError(f"constraint file lacks keys: {', '.join(missing)}")
        unknown = set(kv) - set(required)
        if unknown:
            raise ConfigError(f"unknown constraint keys: {', '.join(sorted(unknown))}")
        try:
            pattern = Pattern(kv["pattern"])
        except ValueError:
            raise ConfigError(
                f"pattern must be max_distance or min_distance, got {kv['pattern']!r}"
            ) from None
        return cls(kv["id"], kv["anchor"], kv["target"], pattern, parse_duration(kv["bound"]))

    @classmethod
    def load(cls, path: str | Path) -> "TemporalConstraint":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"constraint file not found: {path}")
        return cls.from_text(path.read_text(encoding="utf-8"))

    def to_text(self) -> str:
        return format_kv(
            {
                "id": self.id,
                "anchor": self.anchor_activity,
                "target": self.target_activity,
                "pattern": self.pattern.value,
                "bound": format_duration(self.bound_seconds),
            }
        )


@dataclass(frozen=True)
class ComplianceOutcome:
    status: Status
    magnitude_seconds: float = 0.0
    violation_kind: ViolationKind = ViolationKind.NONE

    def __post_init__(self):
        if self.status is Status.NORMAL:
            if self.magnitude_seconds != 0 or self.violation_kind is not ViolationKind.NONE:
                raise ContractError("normal outcome must have zero magnitude and no violation")
        elif not (self.magnitude_seconds > 0 and self.violation_kind is not ViolationKind.NONE):
            raise ContractError("deviant outcome needs positive magnitude and a violation kind")

    @property
    def label(self) -> int:
        return int(self.status is Status.DEVIANT)


NORMAL = ComplianceOutcome(Status.NORMAL)


def locate(constraint: TemporalConstraint, trace: Trace) -> tuple[int | None, int | None]:
    """Indices of the first anchor and the first target strictly after it.

    Later repetitions of either activity are ignored. With anchor == target the
    target is the second occurrence.
    """
    anchor = next(
        (i for i, e in enumerate(trace.events) if e.activity == constraint.anchor_activity), None
    )
    if anchor is None:
        return None, None
    target = next(
        (
            i
            for i in range(anchor + 1, len(trace))
            if trace.events[i].activity == constraint.target_activity
        ),
        None,
    )
    return anchor, target


def evaluate(constraint: TemporalConstraint, trace: Trace) -> ComplianceOutcome:
    """Compliance status and violation magnitude of a completed trace.

    A missing anchor satisfies the constraint vacuously. A missing target after
    the anchor is a control-flow violation whose magnitude is the case duration.
    """
    anchor, target = locate(constraint, trace)
    if anchor is None:
        return NORMAL
    if target is None:
        magnitude = max(trace_duration(trace), MIN_MAGNITUDE_SECONDS)
        return ComplianceOutcome(Status.DEVIANT, magnitude, ViolationKind.CONTROL_FLOW)
    gap = (trace.events[target].timestamp - trace.events[anchor].timestamp).total_seconds()
    if constraint.pattern is Pattern.MAX_DISTANCE:
        excess = gap - constraint.bound_seconds
    else:
        excess = constraint.bound_seconds - gap
    if excess <= 0:
        return NORMAL
    return ComplianceOutcome(Status.DEVIANT, excess, ViolationKind.TEMPORAL)


def cut_point(constraint: TemporalConstraint, trace: Trace) -> int:
    """Number of leading events that can be shown without revealing the outcome.

    The cut falls right before the target's first occurrence after the anchor.
    For max-distance constraints it also falls before the first event past the
    deadline, since from then on the violation is certain. Traces without the
    anchor are kept whole.
    """
    anchor, target = locate(constraint, trace)
    if anchor is None:
        return len(trace)
    cut = len(trace) if target is None else target
    if constraint.pattern is Pattern.MAX_DISTANCE:
        deadline = trace.events[anchor].timestamp + timedelta(seconds=constraint.bound_seconds)
        for i in range(anchor + 1, cut):
            if trace.events[i].timestamp > deadline:
                cut = i
                break
    return max(cut, 1)
