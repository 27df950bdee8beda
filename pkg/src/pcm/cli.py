"""Command-line interface: ``pcm <subcommand> --help`` for details.

Exit codes: 0 success, 1 user or configuration error, 2 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path


from pcm import synthgen
from pcm.constraint import TemporalConstraint
from pcm.encoding import encode, fit_encoder
from pcm.errors import (
    ConfigError,
    ContractError,
    GenerationError,
    ParseError,
    PcmError,
)
from pcm.evaluation import format_table
from pcm.event_log import LogSchema, read_log, remove_incomplete_cases
from pcm.harness import (
    ExperimentConfig,
    evaluate_approaches,
    parse_modes,
    prepare,
    run_experiment,
    train_approaches,
)
from pcm.labeling import (
    LabeledPrefix,
    generate_prefixes,
    label_log,
    max_prefix_length,
    write_prefix_dump,
)
from pcm.model import gradient_check, load_model, random_gradcheck_problem

log = logging.getLogger("pcm")

USER_ERRORS = (ConfigError, ParseError, ContractError, GenerationError)


class UsageError(ConfigError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _experiment_config(args) -> ExperimentConfig:
    if args.manifest:
        path = Path(args.manifest)
    elif args.data:
        path = Path(args.data) / "manifest.txt"
    else:
        raise UsageError("give --manifest FILE or --data DIR (containing manifest.txt)")
    if not path.is_file():
        raise ConfigError(f"manifest not found: {path}")
    config = ExperimentConfig.load(path)
    changes = {}
    if getattr(args, "out", None):
        changes["out_dir"] = Path(args.out)
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
        changes["train"] = replace(config.train, seed=args.seed)
    if getattr(args, "approach", None):
        changes["approaches"] = parse_modes(args.approach)
    if getattr(args, "budget", None) is not None:
        changes["budget"] = args.budget
    if getattr(args, "jobs", None) is not None:
        changes["jobs"] = args.jobs
    if getattr(args, "split", None) is not None:
        changes["split_method"] = args.split
    return replace(config, **changes) if changes else config


def _add_experiment_args(p, out_help="output directory (default: manifest 'out')"):
    p.add_argument("--manifest", help="experiment manifest (key = value file)")
    p.add_argument("--data", help="directory holding manifest.txt, e.g. from 'generate'")
    p.add_argument("--out", help=out_help)
    p.add_argument("--seed", type=int, help="override the manifest seed")


def cmd_generate(args) -> int:
    overrides = {"seed": args.seed}
    if args.n_traces is not None:
        overrides["n_traces"] = args.n_traces
    if args.signal is not None:
        overrides["signal_strength"] = args.signal
    if args.positive_ratio is not None:
        overrides["positive_ratio"] = args.positive_ratio
    if args.cancel_prob is not None:
        overrides["cancel_prob"] = args.cancel_prob
    spec = synthgen.preset(args.preset, **overrides)
    paths = synthgen.write_dataset(spec, args.out, name=args.name or args.preset)
    print(f"wrote {paths['log']} ({spec.n_traces} traces) and manifest {paths['manifest']}")
    return 0


def cmd_label(args) -> int:
    if args.log:
        for flag in ("schema", "constraint"):
            if not getattr(args, flag):
                raise UsageError(f"--log needs --{flag}")
        schema = LogSchema.load(args.schema)
        constraint = TemporalConstraint.load(args.constraint)
        ends = frozenset(a for a in (args.end_activities or "").split(";") if a)
        event_log = remove_incomplete_cases(read_log(args.log, schema), ends)
        cases = label_log(event_log, constraint)
        max_len = args.max_prefix_len or max_prefix_length(cases, args.percentile)
    else:
        config = _experiment_config(args)
        prepared = prepare(config)
        schema, cases = prepared.schema, prepared.cases
        max_len = args.max_prefix_len or prepared.max_len
    if not args.out:
        raise UsageError("label needs --out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prefixes = generate_prefixes(cases, max_len)
    with open(out / "labeled.cols", "w", newline="", encoding="utf-8") as fh:
        write_prefix_dump(prefixes, schema, fh)
    with open(out / "cases.cols", "w", encoding="utf-8") as fh:
        fh.write("case_id\tlabel\tmagnitude_seconds\tviolation_kind\tcut_len\n")
        for c in cases:
            fh.write(f"{c.case_id}\t{c.label}\t{c.magnitude_seconds!r}\t"
                     f"{c.violation_kind.value}\t{len(c.cut_trace)}\n")
    n_pos = sum(c.label for c in cases)
    print(f"{len(cases)} cases ({n_pos} deviant), {len(prefixes)} prefixes, max_len {max_len}")
    return 0


def cmd_encode(args) -> int:
    config = _experiment_config(args)
    prepared = prepare(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_prefixes = generate_prefixes(prepared.train_cases, prepared.max_len, config.min_prefix_len)
    test_prefixes = generate_prefixes(prepared.test_cases, prepared.max_len, config.min_prefix_len)
    spec = fit_encoder(train_prefixes, dict(prepared.schema.attributes), config.last_event_time)
    (out / "encoder.json").write_text(spec.dumps(), encoding="utf-8")
    (out / "features.train.cols").write_text(encode(train_prefixes, spec).to_text(), encoding="utf-8")
    (out / "features.test.cols").write_text(encode(test_prefixes, spec).to_text(), encoding="utf-8")
    print(f"{spec.n_features} features; encoder digest {spec.digest()[:16]}")
    return 0


def cmd_train(args) -> int:
    config = _experiment_config(args)
    bundles = train_approaches(config)
    for mode in bundles:
        print(f"trained {mode.value} -> {Path(config.out_dir) / f'model.{mode.value}'}")
    return 0


def cmd_evaluate(args) -> int:
    config = _experiment_config(args)
    reports = evaluate_approaches(config)
    sys.stdout.write(format_table(reports, config.dataset))
    return 0


def cmd_run(args) -> int:
    config = _experiment_config(args)
    result = run_experiment(config)
    sys.stdout.write(format_table(result.reports, config.dataset))
    return 0


def cmd_predict(args) -> int:
    bundle = load_model(args.model)
    if bundle.encoder is None:
        raise ConfigError(f"model {args.model} has no embedded encoder")
    schema = LogSchema.load(args.schema)
    partial = read_log(args.log, schema)
    prefixes = [
        LabeledPrefix(t.case_id, t, len(t), 0, 0.0) for t in partial.traces if len(t) > 0
    ]
    lines = ["case_id\tprobability\tmagnitude_days\tdecision"]
    if prefixes:
        matrix = encode(prefixes, bundle.encoder)
        pred = bundle.model.predict(matrix.values)
        for i, p in enumerate(prefixes):
            lines.append(
                f"{p.case_id}\t{pred.prob[i]:.6f}\t{pred.magnitude[i]:.6f}\t{int(pred.decision[i])}"
            )
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "predictions.cols").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    modes = parse_modes(args.mode)
    worst = 0.0
    chunks = []
    for mode in modes:
        for k in range(args.repeats):
            model, X, y, m = random_gradcheck_problem(args.seed + k, mode, rows=args.rows)
            report = gradient_check(model, X, y, m, tolerance=args.tolerance, h=args.h)
            worst = max(worst, report.worst)
            chunks.append(f"# mode {mode.value}, seed {args.seed + k}\n{report.to_text()}")
    text = "".join(chunks) + f"max relative error {worst:.3e}\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    if worst >= args.tolerance:
        print(f"gradient check failed: {worst:.3e} >= {args.tolerance:g}", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = Parser(prog="pcm", description="Predictive compliance monitoring for temporal constraints.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=Parser, required=True)

    p = sub.add_parser("generate", help="write a synthetic order-to-cash dataset")
    p.add_argument("--preset", default="table1-o2c", choices=sorted(synthgen.PRESETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--name", help="dataset name used in reports (default: preset)")
    p.add_argument("--n-traces", type=int)
    p.add_argument("--signal", type=float, help="signal strength in [0, 1]")
    p.add_argument("--positive-ratio", type=float)
    p.add_argument("--cancel-prob", type=float)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("label", help="label cases, cut traces and dump prefixes")
    _add_experiment_args(p, "output directory (required)")
    p.add_argument("--log", help="log file (instead of a manifest)")
    p.add_argument("--schema")
    p.add_argument("--constraint")
    p.add_argument("--end-activities", help="';'-separated end activities for completeness filtering")
    p.add_argument("--percentile", type=float, default=0.90)
    p.add_argument("--max-prefix-len", type=int)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("encode", help="fit the encoder on training prefixes and export features")
    _add_experiment_args(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train models (with optional random search)")
    _add_experiment_args(p)
    p.add_argument("--approach", help="baseline, hybrid, mtl, comma list, or all (default: manifest)")
    p.add_argument("--budget", type=int, help="random-search trials per approach (0 = no search)")
    p.add_argument("--jobs", type=int, help="parallel search trials")
    p.add_argument("--split", choices=("temporal", "random"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate trained models on the test split")
    _add_experiment_args(p, "run directory holding model.<approach> (default: manifest 'out')")
    p.add_argument("--split", choices=("temporal", "random"))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="full experiment: train and evaluate")
    _add_experiment_args(p)
    p.add_argument("--approach")
    p.add_argument("--budget", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--split", choices=("temporal", "random"))
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("predict", help="predict compliance of running (partial) cases")
    p.add_argument("--model", required=True, help="model file written by train")
    p.add_argument("--log", required=True, help="partial traces in the columnar log format")
    p.add_argument("--schema", required=True)
    p.add_argument("--out", help="also write predictions.cols here")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="verify analytic gradients by finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", default="all")
    p.add_argument("--repeats", type=int, default=1, help="consecutive seeds per mode")
    p.add_argument("--rows", type=int, default=32)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PcmError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - exit-code contract
        log.exception("unexpected failure")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
