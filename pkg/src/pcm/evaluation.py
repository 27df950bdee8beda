"""Metrics (AUC, MAE, baseline MAE), hybrid decisions and comparison reports."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from pcm.encoding import FeatureMatrix
from pcm.errors import ContractError, UndefinedMetricError
from pcm.model import Mode, MtlModel

APPROACH_NAMES = {Mode.BASELINE: "baseline", Mode.HYBRID: "hybrid", Mode.MTL: "multi-task"}

HYBRID_AUC_NOTE = (
    "hybrid AUC ranks prefixes by the raw (unclamped) regression output; "
    "its decisions are raw output > 0"
)


def _check_binary(labels: np.ndarray) -> tuple[int, int]:
    if not np.all((labels == 0) | (labels == 1)):
        raise ContractError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    return n_pos, n_neg


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_x[1:] != sorted_x[:-1]])
    ends = np.r_[starts[1:], sorted_x.size]
    run_rank = (starts + 1 + ends) / 2.0  # mean of ranks starts+1 .. ends
    ranks = np.empty(x.size, dtype=np.float64)
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def auc(labels, scores) -> float:
    """Area under the ROC curve via the rank-sum statistic, O(n log n).

    Equals the fraction of positive/negative pairs where the positive scores
    higher, counting ties as one half.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape:
        raise ContractError(f"length mismatch: {labels.shape} vs {scores.shape}")
    n_pos, n_neg = _check_binary(labels)
    ranks = average_ranks(scores)
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_pairwise(labels, scores) -> float:
    """Brute-force AUC over all positive/negative pairs (O(n^2) memory and time)."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos, n_neg = _check_binary(labels)
    sp = scores[labels == 1][:, None]
    sn = scores[labels == 0][None, :]
    wins = int(np.count_nonzero(sp > sn))
    ties = int(np.count_nonzero(sp == sn))
    return (wins + 0.5 * ties) / (n_pos * n_neg)


def mae(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ContractError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ContractError("mae of an empty vector")
    return float(np.mean(np.abs(y - y_hat)))


def mae_baseline(y) -> float:
    """MAE of the trivial predictor that always outputs the mean of ``y``."""
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise ContractError("mae_baseline of an empty vector")
    return float(np.mean(np.abs(y - y.mean())))


def hybrid_decision(raw_magnitude):
    """1 (deviant) where the raw regression output is strictly positive, else 0."""
    if np.ndim(raw_magnitude) == 0:
        return int(raw_magnitude > 0)
    return (np.asarray(raw_magnitude) > 0).astype(np.int64)


@dataclass
class EvalReport:
    approach: str
    auc: float | None
    mae_days: float
    mae_baseline_days: float
    n_test_prefixes: int
    predictions: list[dict] = field(default_factory=list)
    auc_score: str = "probability"

    def audit_text(self, delimiter: str = "\t") -> str:
        cols = ["case_id", "prefix_len", "label", "target_days", "score", "prob",
                "magnitude_days", "decision"]
        buf = io.StringIO()
        buf.write(delimiter.join(cols) + "\n")
        for row in self.predictions:
            buf.write(delimiter.join(_cell(row[c]) for c in cols) + "\n")
        return buf.getvalue()


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def evaluate_run(model: MtlModel, test: FeatureMatrix) -> EvalReport:
    """AUC and MAE (days) of ``model`` on encoded test prefixes.

    Ranking scores: class probability for baseline and multi-task, raw
    regression output for hybrid. The baseline has no magnitude output, so its
    MAE is that of the mean predictor.
    """
    if len(test) == 0:
        raise ContractError("evaluate_run on an empty test matrix")
    if test.values.shape[1] != model.n_features:
        raise ContractError("test matrix width does not match the model")
    pred = model.predict(test.values)
    if model.mode is Mode.HYBRID:
        scores = pred.raw_magnitude
        decisions = hybrid_decision(pred.raw_magnitude)
        score_kind = "raw_magnitude"
    else:
        scores = pred.prob
        decisions = pred.decision
        score_kind = "probability"
    try:
        auc_value: float | None = auc(test.labels, scores)
    except UndefinedMetricError:
        auc_value = None
    baseline = mae_baseline(test.magnitudes)
    magnitude = pred.magnitude if model.has_reg else np.full(len(test), test.magnitudes.mean())
    mae_value = mae(test.magnitudes, magnitude) if model.has_reg else baseline
    rows = [
        {
            "case_id": test.case_ids[i],
            "prefix_len": int(test.prefix_lens[i]),
            "label": int(test.labels[i]),
            "target_days": float(test.magnitudes[i]),
            "score": float(scores[i]),
            "prob": float(pred.prob[i]),
            "magnitude_days": float(magnitude[i]),
            "decision": int(decisions[i]),
        }
        for i in range(len(test))
    ]
    return EvalReport(
        approach=APPROACH_NAMES[model.mode],
        auc=auc_value,
        mae_days=mae_value,
        mae_baseline_days=baseline,
        n_test_prefixes=len(test),
        predictions=rows,
        auc_score=score_kind,
    )


def _fmt(v: float | None, digits: int = 2) -> str:
    return "n/a" if v is None else f"{v:.{digits}f}"


def format_table(reports: Sequence[EvalReport], dataset: str = "", digits: int = 2) -> str:
    """Aligned text table: one row per approach with AUC and MAE in days."""
    header = ["dataset", "approach", "AUC", "MAE", "MAE_baseline", "n_test_prefixes"]
    rows = [
        [dataset, r.approach, _fmt(r.auc, digits), _fmt(r.mae_days, digits),
         _fmt(r.mae_baseline_days, digits), str(r.n_test_prefixes)]
        for r in reports
    ]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    lines.append("")
    lines.append("MAE in days over all test prefixes (normal targets are 0).")
    if any(r.approach == APPROACH_NAMES[Mode.HYBRID] for r in reports):
        lines.append(f"Note: {HYBRID_AUC_NOTE}.")
    return "\n".join(lines) + "\n"


def format_columns(reports: Sequence[EvalReport], dataset: str = "", delimiter: str = "\t") -> str:
    """Machine-readable report, full precision."""
    cols = ["dataset", "approach", "auc", "mae_days", "mae_baseline_days",
            "n_test_prefixes", "auc_score"]
    out = [delimiter.join(cols)]
    for r in reports:
        out.append(
            delimiter.join(
                [dataset, r.approach, "n/a" if r.auc is None else repr(r.auc), repr(r.mae_days),
                 repr(r.mae_baseline_days), str(r.n_test_prefixes), r.auc_score]
            )
        )
    return "\n".join(out) + "\n"
