"""Aggregation encoding of prefixes into fixed-width, z-normalized feature vectors.

Categorical attributes (the activity included) become per-value occurrence
counts; numerical attributes and timestamp-derived features become the mean
and population standard deviation over the prefix. Vocabularies and
normalization statistics are fitted on training prefixes only.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from pcm.errors import ConfigError, ContractError, ParseError, VersionError
from pcm.event_log import CATEGORICAL, MISSING, NUMERICAL, Event
from pcm.labeling import LabeledPrefix

UNSEEN = "⊥unseen"
ACTIVITY = "activity"
TIME_FEATURES = ("month", "weekday", "hour", "elapsed_since_start", "elapsed_since_prev")
SECONDS_PER_DAY = 86400.0

ENCODER_FORMAT = "pcm-encoder"
ENCODER_VERSION = 1

# Columns whose training std is below this (relative to scale) are treated as constant.
_CONSTANT_TOL = 1e-12


def extract_time_features(
    event: Event, case_start: Event | None = None, previous: Event | None = None
) -> dict[str, float]:
    """Calendar features of ``event`` plus elapsed seconds within its case.

    Weekday follows ``datetime.weekday`` (Monday = 0). Without ``case_start`` /
    ``previous`` (first event of a case) the elapsed features are 0.
    """
    ts = event.timestamp
    since_start = (ts - case_start.timestamp).total_seconds() if case_start is not None else 0.0
    since_prev = (ts - previous.timestamp).total_seconds() if previous is not None else 0.0
    return {
        "month": float(ts.month),
        "weekday": float(ts.weekday()),
        "hour": float(ts.hour),
        "elapsed_since_start": since_start,
        "elapsed_since_prev": since_prev,
    }


@dataclass(frozen=True)
class EncoderSpec:
    categorical_vocab: Mapping[str, tuple[str, ...]]
    numeric_attrs: tuple[str, ...]
    feature_layout: tuple[tuple[str, str], ...]
    norm_mean: tuple[float, ...]
    norm_std: tuple[float, ...]
    attribute_schema: Mapping[str, str] = field(default_factory=dict)
    last_event_time: bool = False

    @property
    def n_features(self) -> int:
        return len(self.feature_layout)

    @property
    def feature_names(self) -> list[str]:
        return [name for name, _ in self.feature_layout]

    @property
    def constant(self) -> list[bool]:
        return [
            s <= _CONSTANT_TOL * max(1.0, abs(m)) for m, s in zip(self.norm_mean, self.norm_std)
        ]

    def to_dict(self) -> dict:
        return {
            "format": ENCODER_FORMAT,
            "version": ENCODER_VERSION,
            "attribute_schema": dict(self.attribute_schema),
            "last_event_time": self.last_event_time,
            "categorical_vocab": {k: list(v) for k, v in self.categorical_vocab.items()},
            "numeric_attrs": list(self.numeric_attrs),
            "feature_layout": [list(x) for x in self.feature_layout],
            "norm_mean": list(self.norm_mean),
            "norm_std": list(self.norm_std),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EncoderSpec":
        if not isinstance(doc, dict) or doc.get("format") != ENCODER_FORMAT:
            raise ParseError("not an encoder document")
        if doc.get("version") != ENCODER_VERSION:
            raise VersionError(
                f"encoder format version {doc.get('version')!r} unsupported "
                f"(expected {ENCODER_VERSION})"
            )
        try:
            return cls(
                categorical_vocab={k: tuple(v) for k, v in doc["categorical_vocab"].items()},
                numeric_attrs=tuple(doc["numeric_attrs"]),
                feature_layout=tuple((n, s) for n, s in doc["feature_layout"]),
                norm_mean=tuple(float(x) for x in doc["norm_mean"]),
                norm_std=tuple(float(x) for x in doc["norm_std"]),
                attribute_schema=dict(doc["attribute_schema"]),
                last_event_time=bool(doc["last_event_time"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed encoder document: {exc}") from None

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, ensure_ascii=False) + "\n"

    @classmethod
    def loads(cls, text: str) -> "EncoderSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"encoder document is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class FeatureMatrix:
    values: np.ndarray
    labels: np.ndarray
    magnitudes: np.ndarray  # days
    case_ids: list[str]
    prefix_lens: np.ndarray
    feature_names: list[str]

    def __len__(self) -> int:
        return self.values.shape[0]

    def take(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=int)
        return FeatureMatrix(
            self.values[idx],
            self.labels[idx],
            self.magnitudes[idx],
            [self.case_ids[i] for i in idx],
            self.prefix_lens[idx],
            self.feature_names,
        )

    def to_text(self, delimiter: str = "\t") -> str:
        buf = io.StringIO()
        header = ["case_id", "prefix_len", "label", "magnitude_days", *self.feature_names]
        buf.write(delimiter.join(header) + "\n")
        for i in range(len(self)):
            row = [
                self.case_ids[i],
                str(int(self.prefix_lens[i])),
                str(int(self.labels[i])),
                repr(float(self.magnitudes[i])),
                *(repr(float(v)) for v in self.values[i]),
            ]
            buf.write(delimiter.join(row) + "\n")
        return buf.getvalue()


def _numeric_values(events: Sequence[Event], numeric_user: Sequence[str]) -> dict[str, list[float]]:
    values: dict[str, list[float]] = {name: [] for name in (*numeric_user, *TIME_FEATURES)}
    first = events[0]
    prev = None
    for e in events:
        for name in numeric_user:
            v = e.attributes.get(name)
            if v is not None:
                values[name].append(float(v))
        for name, v in extract_time_features(e, first if prev is not None else None, prev).items():
            values[name].append(v)
        prev = e
    return values


def _category(event: Event, name: str) -> str:
    if name == ACTIVITY:
        return event.activity
    v = event.attributes.get(name)
    return MISSING if v is None else str(v)


def _mean_std(xs: list[float]) -> tuple[float, float]:
    # fsum is correctly rounded, so the result does not depend on event order
    if not xs:
        return 0.0, 0.0
    n = len(xs)
    mean = math.fsum(xs) / n
    var = math.fsum((x - mean) ** 2 for x in xs) / n
    return mean, math.sqrt(var)


def _check_attributes(prefix: LabeledPrefix, schema: Mapping[str, str]) -> None:
    for e in prefix.prefix.events:
        for name in e.attributes:
            if name not in schema:
                raise ContractError(
                    f"case {prefix.case_id}: attribute {name!r} is not in the encoder schema"
                )


def _fit_layout(
    prefixes: Sequence[LabeledPrefix], schema: Mapping[str, str], last_event_time: bool
):
    cat_names = sorted([ACTIVITY, *(n for n, k in schema.items() if k == CATEGORICAL)])
    seen: dict[str, set[str]] = {n: set() for n in cat_names}
    for p in prefixes:
        for e in p.prefix.events:
            seen[ACTIVITY].add(e.activity)
            for n in cat_names:
                if n != ACTIVITY:
                    seen[n].add(_category(e, n))
    vocab = {n: tuple(sorted(seen[n] - {UNSEEN})) for n in cat_names}
    numeric = tuple(sorted([*(n for n, k in schema.items() if k == NUMERICAL), *TIME_FEATURES]))

    layout: list[tuple[str, str]] = []
    for n in cat_names:
        for v in (*vocab[n], UNSEEN):
            layout.append((f"{n}={v}", f"count:{n}"))
    for n in numeric:
        layout.append((f"{n}:mean", f"mean:{n}"))
        layout.append((f"{n}:std", f"std:{n}"))
    if last_event_time:
        for n in TIME_FEATURES:
            layout.append((f"last:{n}", f"last:{n}"))
    layout.append(("prefix_len", "length"))
    return vocab, numeric, tuple(layout)


def _raw_row(prefix: LabeledPrefix, vocab, numeric, schema, last_event_time, offsets) -> np.ndarray:
    events = prefix.prefix.events
    row = np.zeros(offsets["__width__"], dtype=np.float64)
    for e in events:
        for n, values in vocab.items():
            v = _category(e, n)
            base, index = offsets[n]
            row[base + index.get(v, len(values))] += 1.0
    user_numeric = [n for n in numeric if n not in TIME_FEATURES]
    numeric_values = _numeric_values(events, user_numeric)
    pos = offsets["__numeric__"]
    for n in numeric:
        mean, std = _mean_std(numeric_values[n])
        row[pos] = mean
        row[pos + 1] = std
        pos += 2
    if last_event_time:
        last = events[-1]
        feats = extract_time_features(
            last, events[0] if len(events) > 1 else None, events[-2] if len(events) > 1 else None
        )
        for n in TIME_FEATURES:
            row[pos] = feats[n]
            pos += 1
    row[pos] = float(len(events))
    return row


def _offsets(vocab, numeric, layout) -> dict:
    offsets: dict = {}
    base = 0
    for n, values in vocab.items():
        offsets[n] = (base, {v: i for i, v in enumerate(values)})
        base += len(values) + 1
    offsets["__numeric__"] = base
    offsets["__width__"] = len(layout)
    return offsets


def _raw_matrix(prefixes, vocab, numeric, layout, schema, last_event_time) -> np.ndarray:
    offsets = _offsets(vocab, numeric, layout)
    out = np.zeros((len(prefixes), len(layout)), dtype=np.float64)
    for i, p in enumerate(prefixes):
        out[i] = _raw_row(p, vocab, numeric, schema, last_event_time, offsets)
    return out


def fit_encoder(
    train_prefixes: Sequence[LabeledPrefix],
    schema: Mapping[str, str],
    last_event_time: bool = False,
) -> EncoderSpec:
    """Fit vocabularies, feature layout and normalization statistics.

    Layout: per categorical value a count column (attribute names and values in
    lexicographic order, each attribute closed by an unseen-value slot), then a
    mean and a std column per numerical attribute, then ``prefix_len``.
    """
    if not train_prefixes:
        raise ConfigError("cannot fit an encoder on zero training prefixes")
    for p in train_prefixes:
        _check_attributes(p, schema)
    vocab, numeric, layout = _fit_layout(train_prefixes, schema, last_event_time)
    raw = _raw_matrix(train_prefixes, vocab, numeric, layout, schema, last_event_time)
    return EncoderSpec(
        categorical_vocab=vocab,
        numeric_attrs=numeric,
        feature_layout=layout,
        norm_mean=tuple(float(x) for x in raw.mean(axis=0)),
        norm_std=tuple(float(x) for x in raw.std(axis=0)),
        attribute_schema=dict(schema),
        last_event_time=last_event_time,
    )


def encode_raw(prefixes: Sequence[LabeledPrefix], spec: EncoderSpec) -> np.ndarray:
    """Un-normalized aggregation features, one row per prefix."""
    for p in prefixes:
        _check_attributes(p, spec.attribute_schema)
    return _raw_matrix(
        prefixes,
        spec.categorical_vocab,
        spec.numeric_attrs,
        spec.feature_layout,
        spec.attribute_schema,
        spec.last_event_time,
    )


def normalize(raw: np.ndarray, spec: EncoderSpec) -> np.ndarray:
    mean = np.asarray(spec.norm_mean)
    std = np.asarray(spec.norm_std)
    constant = np.asarray(spec.constant, dtype=bool)
    safe_std = np.where(constant, 1.0, std)
    out = (raw - mean) / safe_std
    out[:, constant] = 0.0
    return out


def encode(prefixes: Sequence[LabeledPrefix], spec: EncoderSpec) -> FeatureMatrix:
    """Encode and z-normalize prefixes; magnitudes are converted to days."""
    raw = encode_raw(prefixes, spec)
    values = normalize(raw, spec) if len(prefixes) else raw
    if not np.all(np.isfinite(values)):
        raise ContractError("encoding produced non-finite values")
    return FeatureMatrix(
        values=values,
        labels=np.array([p.label for p in prefixes], dtype=np.int64),
        magnitudes=np.array([p.magnitude_seconds for p in prefixes], dtype=np.float64)
        / SECONDS_PER_DAY,
        case_ids=[p.case_id for p in prefixes],
        prefix_lens=np.array([p.prefix_len for p in prefixes], dtype=np.int64),
        feature_names=spec.feature_names,
    )
