"""Deterministic generator of order-to-cash event logs with a 24h shipping constraint.

Control flow: receive PO -> confirm order -> ship goods -> send invoice ->
receive payment, or receive PO -> cancel order. Whether a case ships late is
decided first (an exact share of the log), then the confirm-to-ship gap is
drawn from the class-conditional log-normal distribution. A categorical
``priority`` attribute carries a tunable amount of signal about the outcome.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from pcm.constraint import Pattern, TemporalConstraint
from pcm.errors import ConfigError, GenerationError
from pcm.event_log import Event, EventLog, LogSchema, Trace, write_log
from pcm.kvfile import format_kv

RECEIVE = "receive PO"
CONFIRM = "confirm order"
SHIP = "ship goods"
INVOICE = "send invoice"
PAYMENT = "receive payment"
CANCEL = "cancel order"

VARIANTS = (
    (RECEIVE, CONFIRM, SHIP, INVOICE, PAYMENT),
    (RECEIVE, CANCEL),
)
END_ACTIVITIES = frozenset({PAYMENT, CANCEL})

SCHEMA = LogSchema(attributes={"priority": "categorical", "amount": "numerical"})

# Draws per sample before giving up on a truncated distribution.
MAX_RETRIES = 1000


@dataclass(frozen=True)
class GenSpec:
    n_traces: int = 998
    positive_ratio: float = 0.41
    bound_seconds: float = 86400.0
    # log-normal (median seconds, sigma) of compliant confirm->ship gaps, truncated to <= bound
    compliant_gap: tuple[float, float] = (14 * 3600.0, 0.5)
    # log-normal (median seconds, sigma) of the overshoot past the bound for deviant cases
    deviant_excess: tuple[float, float] = (12 * 3600.0, 0.5)
    cancel_prob: float = 0.1
    signal_strength: float = 0.0
    seed: int = 0
    start: str = "2024-01-01T00:00:00+00:00"
    mean_interarrival_seconds: float = 2 * 3600.0

    def __post_init__(self):
        for name in ("positive_ratio", "cancel_prob", "signal_strength"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.n_traces < 1:
            raise ConfigError("n_traces must be >= 1")
        if not self.bound_seconds > 0:
            raise ConfigError("bound must be > 0")
        for name in ("compliant_gap", "deviant_excess"):
            median, sigma = getattr(self, name)
            if not (median > 0 and sigma >= 0):
                raise ConfigError(f"{name} needs median > 0 and sigma >= 0")


PRESETS = {
    # reference o2c profile: 998 cases, 41% late, no cancellations, no signal
    "table1-o2c": GenSpec(n_traces=998, positive_ratio=0.41, cancel_prob=0.0, signal_strength=0.0),
    "o2c-signal": GenSpec(n_traces=2000, positive_ratio=0.41, cancel_prob=0.1, signal_strength=1.0),
}


def preset(name: str, **overrides) -> GenSpec:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return replace(base, **overrides)


def constraint_for(spec: GenSpec) -> TemporalConstraint:
    return TemporalConstraint("o2c_1", CONFIRM, SHIP, Pattern.MAX_DISTANCE, spec.bound_seconds)


@dataclass(frozen=True)
class TruthRow:
    case_id: str
    branch: str
    deviant: int
    gap_seconds: float | None


def _lognormal_seconds(rng, median: float, sigma: float) -> float:
    return float(rng.lognormal(math.log(median), sigma))


def _compliant_gap(rng, spec: GenSpec) -> float:
    median, sigma = spec.compliant_gap
    for _ in range(MAX_RETRIES):
        gap = round(_lognormal_seconds(rng, median, sigma))
        if 1 <= gap <= spec.bound_seconds:
            return float(gap)
    raise GenerationError(
        f"compliant gap distribution (median {median}s, sigma {sigma}) cannot produce "
        f"gaps within the {spec.bound_seconds}s bound"
    )


def _deviant_gap(rng, spec: GenSpec) -> float:
    median, sigma = spec.deviant_excess
    excess = max(1, round(_lognormal_seconds(rng, median, sigma)))
    return float(math.ceil(spec.bound_seconds) + excess)


def generate_with_truth(spec: GenSpec) -> tuple[EventLog, list[TruthRow]]:
    rng = np.random.default_rng(spec.seed)
    n = spec.n_traces
    n_cancel = round(spec.cancel_prob * n)
    n_deviant = round(spec.positive_ratio * n)
    if n_deviant > n - n_cancel:
        raise GenerationError(
            f"cannot make {n_deviant} of {n} cases late when {n_cancel} are cancelled"
        )
    # exact shares keep the realized deviant fraction at positive_ratio
    order = rng.permutation(n)
    branch = np.zeros(n, dtype=int)  # 0 main, 1 cancel
    branch[order[:n_cancel]] = 1
    deviant = np.zeros(n, dtype=int)
    deviant[order[n_cancel : n_cancel + n_deviant]] = 1

    t = datetime.fromisoformat(spec.start).astimezone(timezone.utc)
    width = len(str(n))
    traces, truth = [], []
    for i in range(n):
        case_id = f"case_{i:0{width}d}"
        t += timedelta(seconds=round(rng.exponential(spec.mean_interarrival_seconds)))
        informative = rng.random() < spec.signal_strength
        if informative:
            priority = "low" if deviant[i] else "high"
        else:
            priority = "high" if rng.random() < 0.5 else "low"
        amount = round(float(rng.lognormal(math.log(500.0), 0.8)), 2)
        confirm_delay = max(60, round(_lognormal_seconds(rng, 3 * 3600.0, 0.7)))

        def ev(activity, ts, amount=None):
            return Event(activity, case_id, ts, {"priority": priority, "amount": amount})

        events = [ev(RECEIVE, t, amount=amount)]
        t_confirm = t + timedelta(seconds=confirm_delay)
        if branch[i] == 1:
            events.append(ev(CANCEL, t_confirm))
            truth.append(TruthRow(case_id, "cancel", 0, None))
        else:
            gap = _deviant_gap(rng, spec) if deviant[i] else _compliant_gap(rng, spec)
            t_ship = t_confirm + timedelta(seconds=gap)
            t_invoice = t_ship + timedelta(seconds=max(60, round(_lognormal_seconds(rng, 6 * 3600.0, 0.6))))
            t_pay = t_invoice + timedelta(seconds=max(60, round(_lognormal_seconds(rng, 5 * 86400.0, 0.5))))
            events += [
                ev(CONFIRM, t_confirm),
                ev(SHIP, t_ship),
                ev(INVOICE, t_invoice),
                ev(PAYMENT, t_pay),
            ]
            truth.append(TruthRow(case_id, "main", int(deviant[i]), gap))
        traces.append(Trace(case_id, tuple(events)))
    return EventLog(tuple(traces), dict(SCHEMA.attributes)), truth


def generate(spec: GenSpec) -> EventLog:
    """Synthetic O2C log; same spec and seed give an identical log."""
    return generate_with_truth(spec)[0]


def check_control_flow(log: EventLog) -> list[str]:
    """Case ids whose activity sequence is not one of the allowed variants."""
    return [t.case_id for t in log.traces if tuple(t.activities) not in VARIANTS]


def write_truth(rows: list[TruthRow], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "branch", "deviant", "gap_seconds"])
        for r in rows:
            w.writerow([r.case_id, r.branch, r.deviant, "" if r.gap_seconds is None else repr(r.gap_seconds)])


def write_dataset(spec: GenSpec, out_dir: str | Path, name: str = "o2c") -> dict[str, Path]:
    """Write log, schema, constraint, ground truth and an experiment manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log, truth = generate_with_truth(spec)
    paths = {
        "log": out / "log.csv",
        "schema": out / "schema.txt",
        "constraint": out / "constraint.txt",
        "truth": out / "truth.csv",
        "genspec": out / "genspec.txt",
        "manifest": out / "manifest.txt",
    }
    with open(paths["log"], "w", newline="", encoding="utf-8") as fh:
        write_log(log, SCHEMA, fh)
    paths["schema"].write_text(SCHEMA.to_text(), encoding="utf-8")
    paths["constraint"].write_text(constraint_for(spec).to_text(), encoding="utf-8")
    write_truth(truth, paths["truth"])
    paths["genspec"].write_text(format_kv(asdict(spec)), encoding="utf-8")
    paths["manifest"].write_text(
        format_kv(
            {
                "dataset": name,
                "log": "log.csv",
                "schema": "schema.txt",
                "constraint": "constraint.txt",
                "end_activities": ";".join(sorted(END_ACTIVITIES)),
                "seed": spec.seed,
                "out": "run",
            }
        ),
        encoding="utf-8",
    )
    return paths
