"""Experiment orchestration: label, cut, split, encode, search, train, evaluate."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from pcm.constraint import TemporalConstraint
from pcm.encoding import EncoderSpec, FeatureMatrix, encode, fit_encoder
from pcm.errors import ConfigError, PcmError, SearchError, UndefinedMetricError
from pcm.evaluation import EvalReport, auc, evaluate_run, format_columns, format_table, mae
from pcm.event_log import EventLog, LogSchema, read_log, remove_incomplete_cases
from pcm.kvfile import format_kv, read_kv
from pcm.labeling import LabeledCase, generate_prefixes, label_log, max_prefix_length
from pcm.model import ModelBundle, Mode, MtlModel, TrainConfig, load_model, save_model, train

log = logging.getLogger(__name__)

ALL_MODES = (Mode.BASELINE, Mode.HYBRID, Mode.MTL)

# Random-search space. Learning rate is sampled log-uniformly.
SEARCH_HIDDEN = ((16,), (32,), (32, 16), (64, 32))
SEARCH_LR = (1e-4, 1e-2)
SEARCH_DROPOUT = (0.0, 0.1, 0.2)
SEARCH_BATCH = (32, 64, 128)


@contextmanager
def stage(name: str):
    """Prefix errors raised inside the block with the pipeline stage name."""
    try:
        yield
    except PcmError as exc:
        if not str(exc).startswith("stage "):
            exc.args = (f"stage {name}: {exc}", *exc.args[1:])
        raise


def parse_modes(text: str) -> tuple[Mode, ...]:
    names = [t.strip() for t in text.split(",") if t.strip()]
    if not names or names == ["all"]:
        return ALL_MODES
    aliases = {"multi-task": "mtl", "multitask": "mtl"}
    try:
        return tuple(Mode(aliases.get(n, n)) for n in names)
    except ValueError:
        raise ConfigError(f"unknown approach in {text!r}; use baseline, hybrid, mtl or all") from None


@dataclass(frozen=True)
class ExperimentConfig:
    log_path: Path
    schema_path: Path
    constraint_path: Path
    out_dir: Path = Path("run")
    dataset: str = ""
    approaches: tuple[Mode, ...] = ALL_MODES
    end_activities: frozenset[str] = frozenset()
    split_fraction: float = 0.8
    split_method: str = "temporal"
    folds: int = 3
    budget: int = 0
    seed: int = 0
    percentile: float = 0.90
    max_prefix_len: int | None = None
    min_prefix_len: int = 1
    last_event_time: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    jobs: int = 1

    def __post_init__(self):
        if not 0 < self.split_fraction < 1:
            raise ConfigError(f"split fraction must be in (0, 1), got {self.split_fraction}")
        if self.split_method not in ("temporal", "random"):
            raise ConfigError(f"split method must be temporal or random, got {self.split_method!r}")
        if self.budget < 0:
            raise ConfigError("search budget must be >= 0")
        if self.budget > 0 and self.folds < 2:
            raise ConfigError("cross-validation needs folds >= 2")
        if self.min_prefix_len < 1:
            raise ConfigError("min_prefix_len must be >= 1")
        if self.max_prefix_len is not None and self.max_prefix_len < self.min_prefix_len:
            raise ConfigError("max_prefix_len must be >= min_prefix_len")

    def check_inputs(self) -> None:
        """Fail fast on missing input files."""
        for what, p in (("log", self.log_path), ("schema", self.schema_path),
                        ("constraint", self.constraint_path)):
            if not Path(p).is_file():
                raise ConfigError(f"{what} file not found: {p}")

    def to_kv(self) -> dict[str, object]:
        t = self.train
        return {
            "dataset": self.dataset,
            "log": self.log_path,
            "schema": self.schema_path,
            "constraint": self.constraint_path,
            "out": self.out_dir,
            "approaches": ",".join(m.value for m in self.approaches),
            "end_activities": ";".join(sorted(self.end_activities)),
            "split": self.split_fraction,
            "split_method": self.split_method,
            "folds": self.folds,
            "budget": self.budget,
            "seed": self.seed,
            "percentile": self.percentile,
            "max_prefix_len": "" if self.max_prefix_len is None else self.max_prefix_len,
            "min_prefix_len": self.min_prefix_len,
            "last_event_time": str(self.last_event_time).lower(),
            "hidden": ",".join(str(h) for h in t.hidden),
            "activation": t.activation,
            "learning_rate": t.learning_rate,
            "batch_size": t.batch_size,
            "epochs": t.epochs,
            "dropout": t.dropout,
            "patience": t.patience,
            "jobs": self.jobs,
        }

    def digest(self) -> str:
        items = {k: str(v) for k, v in self.to_kv().items() if k not in ("out", "jobs")}
        return hashlib.sha256(json.dumps(items, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_kv(cls, kv: dict[str, str], base_dir: Path = Path(".")) -> "ExperimentConfig":
        kv = dict(kv)
        known = set(cls(Path(), Path(), Path()).to_kv())
        unknown = set(kv) - known
        if unknown:
            raise ConfigError(f"unknown manifest keys: {', '.join(sorted(unknown))}")
        for key in ("log", "schema", "constraint"):
            if not kv.get(key):
                raise ConfigError(f"manifest lacks {key!r}")

        def path(key, default=None):
            value = kv.get(key) or default
            p = Path(value)
            return p if p.is_absolute() else base_dir / p

        def num(key, conv, default):
            if kv.get(key, "") == "":
                return default
            try:
                return conv(kv[key])
            except ValueError:
                raise ConfigError(f"manifest key {key!r}: bad value {kv[key]!r}") from None

        seed = num("seed", int, 0)
        defaults = TrainConfig()
        hidden = defaults.hidden
        if kv.get("hidden", "") != "":
            try:
                hidden = tuple(int(h) for h in kv["hidden"].split(",") if h.strip())
            except ValueError:
                raise ConfigError(f"bad hidden sizes {kv['hidden']!r}") from None
        train_cfg = TrainConfig(
            hidden=hidden,
            activation=kv.get("activation") or defaults.activation,
            learning_rate=num("learning_rate", float, defaults.learning_rate),
            batch_size=num("batch_size", int, defaults.batch_size),
            epochs=num("epochs", int, defaults.epochs),
            dropout=num("dropout", float, defaults.dropout),
            patience=num("patience", int, defaults.patience),
            seed=seed,
        )
        ends = kv.get("end_activities", "")
        return cls(
            log_path=path("log"),
            schema_path=path("schema"),
            constraint_path=path("constraint"),
            out_dir=path("out", "run"),
            dataset=kv.get("dataset", ""),
            approaches=parse_modes(kv.get("approaches", "all")),
            end_activities=frozenset(a.strip() for a in ends.split(";") if a.strip()),
            split_fraction=num("split", float, 0.8),
            split_method=kv.get("split_method") or "temporal",
            folds=num("folds", int, 3),
            budget=num("budget", int, 0),
            seed=seed,
            percentile=num("percentile", float, 0.90),
            max_prefix_len=num("max_prefix_len", int, None),
            min_prefix_len=num("min_prefix_len", int, 1),
            last_event_time=kv.get("last_event_time", "false").lower() in ("1", "true", "yes"),
            train=train_cfg,
            jobs=num("jobs", int, 1),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_kv(read_kv(path), path.parent)


# -- splitting ------------------------------------------------------------------


def split_log(
    cases: Sequence[LabeledCase], fraction: float = 0.8, seed: int = 0, method: str = "temporal"
) -> tuple[list[LabeledCase], list[LabeledCase]]:
    """Case-level train/test split.

    ``temporal``: cases ordered by first-event time (ties by case id), the
    earliest ``floor(fraction * n)`` go to train. ``random``: seeded shuffle.
    """
    n = len(cases)
    if n < 2:
        raise ConfigError(f"need at least 2 cases to split, got {n}")
    n_train = math.floor(fraction * n)
    if n_train == 0 or n_train == n:
        raise ConfigError(f"split fraction {fraction} leaves one side empty for {n} cases")
    if method == "temporal":
        ordered = sorted(cases, key=lambda c: (c.start_time, c.case_id))
    elif method == "random":
        perm = np.random.default_rng(seed).permutation(n)
        ordered = [cases[i] for i in perm]
    else:
        raise ConfigError(f"unknown split method {method!r}")
    return list(ordered[:n_train]), list(ordered[n_train:])


def temporal_order(cases: Sequence[LabeledCase]) -> list[LabeledCase]:
    return sorted(cases, key=lambda c: (c.start_time, c.case_id))


# -- training helpers -------------------------------------------------------------


def fit_model(mode: Mode, matrix: FeatureMatrix, config: TrainConfig) -> MtlModel:
    model = MtlModel.from_config(matrix.values.shape[1], mode, config)
    train(model, matrix.values, matrix.labels, matrix.magnitudes, config)
    return model


def validation_metric(mode: Mode, model: MtlModel, matrix: FeatureMatrix) -> float:
    """AUC (higher is better) for baseline/mtl, MAE in days (lower) for hybrid."""
    pred = model.predict(matrix.values)
    if mode is Mode.HYBRID:
        return mae(matrix.magnitudes, pred.magnitude)
    return auc(matrix.labels, pred.prob)


def higher_is_better(mode: Mode) -> bool:
    return mode is not Mode.HYBRID


@dataclass
class CVResult:
    mean: float
    folds: list[float | None]


def cross_validate(
    train_cases: Sequence[LabeledCase],
    schema: dict[str, str],
    mode: Mode,
    trial: TrainConfig,
    max_len: int,
    folds: int = 3,
    min_len: int = 1,
    last_event_time: bool = False,
) -> CVResult:
    """Mean validation metric over contiguous temporal folds of the training cases.

    Folds whose validation part has a single class yield no AUC and are skipped.
    """
    if folds < 2:
        raise ConfigError("cross-validation needs folds >= 2")
    ordered = temporal_order(train_cases)
    if len(ordered) < folds:
        raise ConfigError(f"{len(ordered)} cases cannot fill {folds} folds")
    blocks = np.array_split(np.arange(len(ordered)), folds)
    scores: list[float | None] = []
    for k, block in enumerate(blocks):
        held = set(block.tolist())
        fit_cases = [c for i, c in enumerate(ordered) if i not in held]
        val_cases = [ordered[i] for i in block]
        fit_prefixes = generate_prefixes(fit_cases, max_len, min_len)
        val_prefixes = generate_prefixes(val_cases, max_len, min_len)
        if not fit_prefixes or not val_prefixes:
            scores.append(None)
            continue
        spec = fit_encoder(fit_prefixes, schema, last_event_time)
        fit_matrix = encode(fit_prefixes, spec)
        val_matrix = encode(val_prefixes, spec)
        model = fit_model(mode, fit_matrix, trial)
        try:
            scores.append(validation_metric(mode, model, val_matrix))
        except UndefinedMetricError:
            scores.append(None)
    valid = [s for s in scores if s is not None]
    if not valid:
        raise SearchError("every cross-validation fold had an undefined metric")
    return CVResult(float(np.mean(valid)), scores)


def sample_trial(seed: int, index: int, base: TrainConfig) -> TrainConfig:
    """Trial ``index`` of the search stream; depends only on (seed, index)."""
    rng = np.random.default_rng([seed, index])
    hidden = SEARCH_HIDDEN[int(rng.integers(len(SEARCH_HIDDEN)))]
    lo, hi = np.log(SEARCH_LR[0]), np.log(SEARCH_LR[1])
    lr = float(np.exp(rng.uniform(lo, hi)))
    dropout = SEARCH_DROPOUT[int(rng.integers(len(SEARCH_DROPOUT)))]
    batch = SEARCH_BATCH[int(rng.integers(len(SEARCH_BATCH)))]
    trial_seed = int(rng.integers(2**31 - 1))
    return replace(base, hidden=hidden, learning_rate=lr, dropout=dropout,
                   batch_size=batch, seed=trial_seed)


@dataclass
class TrialResult:
    index: int
    config: TrainConfig
    metric: float | None
    folds: list[float | None]
    error: str | None = None

    def to_line(self, mode: Mode) -> str:
        return json.dumps(
            {
                "approach": mode.value,
                "trial": self.index,
                "metric": self.metric,
                "folds": self.folds,
                "error": self.error,
                "config": self.config.to_dict(),
            },
            sort_keys=True,
        )


@dataclass
class SearchResult:
    best: TrainConfig
    best_index: int
    best_metric: float
    trials: list[TrialResult]


def _run_trial(args) -> TrialResult:
    index, trial, train_cases, schema, mode, max_len, folds, min_len, last_event_time = args
    try:
        cv = cross_validate(train_cases, schema, mode, trial, max_len, folds, min_len,
                            last_event_time)
        return TrialResult(index, trial, cv.mean, cv.folds)
    except SearchError as exc:
        return TrialResult(index, trial, None, [], str(exc))


def random_search(
    train_cases: Sequence[LabeledCase],
    schema: dict[str, str],
    mode: Mode,
    max_len: int,
    budget: int,
    seed: int = 0,
    folds: int = 3,
    base: TrainConfig | None = None,
    min_len: int = 1,
    last_event_time: bool = False,
    jobs: int = 1,
) -> SearchResult:
    """Seeded random search; returns the trial with the best cross-validated metric.

    Ties go to the earlier trial, so a larger budget with the same seed never
    selects a worse metric.
    """
    if budget < 1:
        raise ConfigError("search budget must be >= 1")
    base = base or TrainConfig()
    jobs_args = [
        (i, sample_trial(seed, i, base), list(train_cases), dict(schema), mode, max_len, folds,
         min_len, last_event_time)
        for i in range(budget)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trials = list(pool.map(_run_trial, jobs_args))
    else:
        trials = [_run_trial(a) for a in jobs_args]
    best: TrialResult | None = None
    sign = 1.0 if higher_is_better(mode) else -1.0
    for t in trials:
        if t.metric is None:
            continue
        if best is None or sign * t.metric > sign * best.metric:
            best = t
    if best is None:
        raise SearchError(f"no search trial for {mode.value} produced a metric")
    return SearchResult(best.config, best.index, best.metric, trials)


# -- end-to-end -----------------------------------------------------------------


@dataclass
class Prepared:
    schema: LogSchema
    constraint: TemporalConstraint
    log: EventLog
    cases: list[LabeledCase]
    train_cases: list[LabeledCase]
    test_cases: list[LabeledCase]
    max_len: int


def prepare(config: ExperimentConfig) -> Prepared:
    """Load, filter and label the log, split it, and fix the prefix-length cap."""
    config.check_inputs()
    with stage("load"):
        schema = LogSchema.load(config.schema_path)
        constraint = TemporalConstraint.load(config.constraint_path)
        event_log = read_log(config.log_path, schema)
        event_log = remove_incomplete_cases(event_log, config.end_activities)
    with stage("label"):
        cases = label_log(event_log, constraint)
    with stage("split"):
        train_cases, test_cases = split_log(
            cases, config.split_fraction, config.seed, config.split_method
        )
    with stage("prefix-cap"):
        if config.max_prefix_len is not None:
            max_len = config.max_prefix_len
        else:
            max_len = max_prefix_length(train_cases, config.percentile)
        max_len = max(max_len, config.min_prefix_len)
    return Prepared(schema, constraint, event_log, cases, train_cases, test_cases, max_len)


def train_approaches(config: ExperimentConfig, prepared: Prepared | None = None,
                     approaches: Sequence[Mode] | None = None) -> dict[Mode, ModelBundle]:
    """Search (if budgeted), train on all training prefixes, write model files."""
    prepared = prepared or prepare(config)
    approaches = tuple(approaches or config.approaches)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    attrs = dict(prepared.schema.attributes)
    with stage("encode"):
        train_prefixes = generate_prefixes(prepared.train_cases, prepared.max_len,
                                           config.min_prefix_len)
        encoder = fit_encoder(train_prefixes, attrs, config.last_event_time)
        train_matrix = encode(train_prefixes, encoder)
    bundles: dict[Mode, ModelBundle] = {}
    trial_lines: list[str] = []
    for mode in approaches:
        trial_cfg = config.train
        if config.budget > 0:
            with stage(f"search[{mode.value}]"):
                result = random_search(
                    prepared.train_cases, attrs, mode, prepared.max_len, config.budget,
                    config.seed, config.folds, config.train, config.min_prefix_len,
                    config.last_event_time, config.jobs,
                )
            trial_lines += [t.to_line(mode) for t in result.trials]
            trial_cfg = result.best
            log.info("%s: best trial %d metric %.4f", mode.value, result.best_index,
                     result.best_metric)
        with stage(f"train[{mode.value}]"):
            model = fit_model(mode, train_matrix, trial_cfg)
        bundle = ModelBundle(model, encoder, trial_cfg, prepared.max_len)
        save_model(out / f"model.{mode.value}", bundle)
        (out / f"encoder.{mode.value}").write_text(encoder.dumps(), encoding="utf-8")
        bundles[mode] = bundle
    (out / "trials.log").write_text("".join(line + "\n" for line in trial_lines), encoding="utf-8")
    _write_split(out / "split.cols", prepared)
    _write_manifest(out / "manifest", config, prepared, encoder)
    return bundles


def _write_split(path: Path, prepared: Prepared) -> None:
    lines = ["case_id\tside\tlabel\tmagnitude_seconds\tcut_len"]
    for side, cases in (("train", prepared.train_cases), ("test", prepared.test_cases)):
        for c in cases:
            lines.append(f"{c.case_id}\t{side}\t{c.label}\t{c.magnitude_seconds!r}\t{len(c.cut_trace)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_manifest(path: Path, config: ExperimentConfig, prepared: Prepared,
                    encoder: EncoderSpec) -> None:
    items = dict(config.to_kv())
    items.update(
        {
            "config_digest": config.digest(),
            "encoder_digest": encoder.digest(),
            "max_prefix_len_used": prepared.max_len,
            "n_train_cases": len(prepared.train_cases),
            "n_test_cases": len(prepared.test_cases),
        }
    )
    path.write_text(format_kv(items), encoding="utf-8")


def evaluate_approaches(config: ExperimentConfig, prepared: Prepared | None = None,
                        bundles: dict[Mode, ModelBundle] | None = None) -> list[EvalReport]:
    """Evaluate trained models on the test prefixes and write the reports."""
    prepared = prepared or prepare(config)
    out = Path(config.out_dir)
    if bundles is None:
        bundles = {}
        for mode in ALL_MODES:
            path = out / f"model.{mode.value}"
            if path.is_file():
                bundles[mode] = load_model(path)
        if not bundles:
            raise ConfigError(f"no trained models (model.<approach>) in {out}")
    reports = []
    for mode in ALL_MODES:
        if mode not in bundles:
            continue
        bundle = bundles[mode]
        with stage(f"evaluate[{mode.value}]"):
            max_len = bundle.max_prefix_len or prepared.max_len
            test_prefixes = generate_prefixes(prepared.test_cases, max_len, config.min_prefix_len)
            test_matrix = encode(test_prefixes, bundle.encoder)
            report = evaluate_run(bundle.model, test_matrix)
        (out / f"audit.{mode.value}").write_text(report.audit_text(), encoding="utf-8")
        reports.append(report)
    (out / "report.txt").write_text(format_table(reports, config.dataset), encoding="utf-8")
    (out / "report.cols").write_text(format_columns(reports, config.dataset), encoding="utf-8")
    return reports


@dataclass
class ExperimentResult:
    reports: list[EvalReport]
    out_dir: Path
    prepared: Prepared


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Full pipeline; writes models, encoders, reports, trial log and manifest."""
    prepared = prepare(config)
    bundles = train_approaches(config, prepared)
    reports = evaluate_approaches(config, prepared, bundles)
    return ExperimentResult(reports, Path(config.out_dir), prepared)
