"""Model performance measurement and model-vs-model comparison.

Performance is estimated with an out-of-sample bootstrap: fit on a
with-replacement sample (knots re-estimated per sample), score the held-out
rows, repeat. Per-iteration random generators are derived from the master
seed and the iteration number, so parallel and serial runs agree bit for bit.
"""

from __future__ import annotations

import csv
import json
import logging
from bisect import bisect_left, bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, FitError
from .splinefit import FittedModel, ModelSpec, fit_model, predict_matrix, respec_knots

log = logging.getLogger(__name__)

MEASURES = ("auc", "brier", "precision", "recall", "f_measure")

#: Conventional absolute cut points for Cliff's delta magnitude labels.
CLIFFS_DELTA_BOUNDS = ((0.147, "negligible"), (0.33, "small"), (0.474, "medium"))

_MAX_REDRAWS_PER_ITERATION = 100


def auc(scores, labels) -> float:
    """Probability that a responder outscores a non-responder (ties half)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise DataError("auc needs both outcome classes")
    ranks = rankdata(scores)
    u = float(np.sum(ranks[labels == 1])) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def brier(scores, labels) -> float:
    """Mean squared error of predicted probabilities."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    return float(np.mean((scores - labels) ** 2))


def prf(scores, labels, threshold: float = 0.5) -> tuple[float, float, float]:
    """Precision, recall, and their harmonic mean at a score threshold."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    predicted = scores >= threshold
    tp = float(np.sum(predicted & (labels == 1)))
    fp = float(np.sum(predicted & (labels == 0)))
    fn = float(np.sum(~predicted & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f_measure = (2 * precision * recall / (precision + recall)
                 if precision + recall > 0 else 0.0)
    return precision, recall, f_measure


def negative_predictive_value(scores, labels, threshold: float = 0.5) -> float:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    predicted_negative = scores < threshold
    total = int(np.sum(predicted_negative))
    if total == 0:
        raise DataError("no instance predicted as not responding")
    tn = float(np.sum(predicted_negative & (labels == 0)))
    return tn / total


def improvement(p_proposed: float, p_baseline: float) -> float:
    """Signed relative change of a measure against the baseline value."""
    if p_baseline == 0:
        raise DataError("improvement undefined for a zero baseline value")
    return (p_proposed - p_baseline) / p_baseline


def cliffs_delta(a, b) -> tuple[float, str]:
    """Dominance of sample a over sample b, with a conventional size label."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise DataError("cliffs_delta requires two non-empty samples")
    sorted_b = np.sort(b)
    greater = sum(bisect_left(sorted_b, v) for v in a.tolist())
    less = sum(sorted_b.size - bisect_right(sorted_b, v) for v in a.tolist())
    delta = (greater - less) / (a.size * b.size)
    magnitude = "large"
    for bound, label in CLIFFS_DELTA_BOUNDS:
        if abs(delta) < bound:
            magnitude = label
            break
    return float(delta), magnitude


def topk_accuracy(groups, k: int) -> float:
    """Share of changes whose top-k scored invitees include a responder.

    `groups` holds one (reviewer, score, outcome) list per change. Score ties
    break by reviewer id so the measure is deterministic.
    """
    if not groups:
        raise DataError("topk_accuracy requires at least one change")
    if k < 1:
        raise DataError("k must be >= 1")
    hits = 0
    for group in groups:
        if not group:
            raise DataError("every change needs at least one invited reviewer")
        ordered = sorted(group, key=lambda item: (-item[1], item[0]))
        if any(outcome for _, _, outcome in ordered[:k]):
            hits += 1
    return hits / len(groups)


# ---------------------------------------------------------------------------
# Out-of-sample bootstrap

@dataclass
class BootstrapReport:
    measures: dict[str, np.ndarray]
    iterations: int
    seed: int
    threshold: float
    redraws: int = 0
    spec: ModelSpec | None = None

    def mean(self, name: str) -> float:
        return float(np.mean(self.measures[name]))

    def sd(self, name: str) -> float:
        values = self.measures[name]
        return float(np.std(values, ddof=1)) if values.size > 1 else 0.0

    def summary(self) -> dict[str, dict[str, float]]:
        return {name: {"mean": self.mean(name), "sd": self.sd(name)}
                for name in MEASURES}


def _iteration_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def _one_iteration(X: np.ndarray, names, y: np.ndarray, spec: ModelSpec,
                   seed: int, index: int, threshold: float) -> tuple[dict, int]:
    rng = _iteration_rng(seed, index)
    n = X.shape[0]
    for redraw in range(_MAX_REDRAWS_PER_ITERATION):
        idx = rng.integers(0, n, size=n)
        mask = np.ones(n, dtype=bool)
        mask[idx] = False
        if not mask.any():
            continue
        y_train = y[idx]
        y_test = y[mask]
        if y_train.min() == y_train.max() or y_test.min() == y_test.max():
            continue
        X_train = X[idx]
        sample_spec = respec_knots(spec, X_train, names)
        try:
            model = fit_model(X_train, names, y_train, sample_spec)
        except FitError:
            continue
        scores = predict_matrix(model, X[mask], names)
        precision, recall, f_measure = prf(scores, y_test, threshold)
        return ({
            "auc": auc(scores, y_test),
            "brier": brier(scores, y_test),
            "precision": precision,
            "recall": recall,
            "f_measure": f_measure,
        }, redraw)
    raise DataError(
        f"bootstrap iteration {index} failed {_MAX_REDRAWS_PER_ITERATION} redraws")


def out_of_sample_bootstrap(X: np.ndarray, names, y: np.ndarray, spec: ModelSpec,
                            iterations: int = 1000, seed: int = 0,
                            threshold: float = 0.5, jobs: int = 1) -> BootstrapReport:
    """Estimate the five performance measures over bootstrap resamples."""
    if iterations < 1:
        raise DataError("iterations must be >= 1")
    y = np.asarray(y, dtype=float)
    if y.min() == y.max():
        raise DataError("bootstrap needs both outcome classes")
    names = list(names)
    results: list[dict | None] = [None] * iterations
    redraws = [0] * iterations

    def run(i: int):
        results[i], redraws[i] = _one_iteration(X, names, y, spec, seed, i, threshold)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(run, range(iterations)))
    else:
        for i in range(iterations):
            run(i)

    total_redraws = sum(redraws)
    if total_redraws:
        log.info("bootstrap redrew %d degenerate samples", total_redraws)
    measures = {name: np.array([res[name] for res in results]) for name in MEASURES}
    return BootstrapReport(measures=measures, iterations=iterations, seed=seed,
                           threshold=threshold, redraws=total_redraws, spec=spec)


def groups_for_topk(instances, model: FittedModel, names) -> list[list[tuple[str, float, bool]]]:
    """Group scored invitations per change for ranking measures."""
    from .metrics import instances_to_matrix

    X, _ = instances_to_matrix(instances, names)
    scores = predict_matrix(model, X, names)
    grouped: dict[str, list[tuple[str, float, bool]]] = {}
    for inst, score in zip(instances, scores):
        grouped.setdefault(inst.change_id, []).append(
            (inst.reviewer, float(score), inst.outcome))
    return [grouped[cid] for cid in sorted(grouped)]


# ---------------------------------------------------------------------------
# Artifacts

def spec_hash(spec: ModelSpec) -> str:
    import hashlib

    doc = {
        "variables": list(spec.variables),
        "dof": {k: int(v) for k, v in spec.dof.items()},
        "knots": {k: list(v) for k, v in spec.knots.items()},
        "outcome": spec.outcome,
        "seed": spec.seed,
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def report_to_json(report: BootstrapReport) -> dict:
    doc = {
        "measures": {
            name: {
                "mean": report.mean(name),
                "sd": report.sd(name),
                "values": [float(v) for v in report.measures[name]],
            }
            for name in MEASURES
        },
        "iterations": report.iterations,
        "seed": report.seed,
        "threshold": report.threshold,
        "redraws": report.redraws,
    }
    if report.spec is not None:
        doc["spec_hash"] = spec_hash(report.spec)
    return doc


def save_evaluation(report: BootstrapReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report_to_json(report), sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def save_comparison(proposed: BootstrapReport, baseline: BootstrapReport,
                    path: str | Path) -> None:
    """Write the per-measure proposed-vs-baseline table with relative change."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["measure", "proposed_mean", "proposed_sd",
                         "baseline_mean", "baseline_sd", "improvement_pct"])
        for name in MEASURES:
            p_mean = proposed.mean(name)
            b_mean = baseline.mean(name)
            pct = improvement(p_mean, b_mean) * 100.0 if b_mean != 0 else float("nan")
            writer.writerow([
                name,
                "%.9g" % p_mean, "%.9g" % proposed.sd(name),
                "%.9g" % b_mean, "%.9g" % baseline.sd(name),
                "%.9g" % pct,
            ])
