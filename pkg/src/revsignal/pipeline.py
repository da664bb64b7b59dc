"""Pipeline stages behind the service and CLI.

Every stage is a pure function of (files on disk, RunConfig): rereading the
same inputs with the same config and seed reproduces each artifact byte for
byte. Stages communicate only through files in the output directory, so they
can run in separate invocations or processes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import describe as describe_mod
from . import evaluate as evaluate_mod
from . import explain as explain_mod
from .errors import DataError, FitError
from .ingest import IngestConfig, fetch_to_jsonl, load_dataset, save_dataset
from .metrics import (
    BASELINE_METRICS,
    METRIC_NAMES,
    ReviewInstance,
    build_index,
    build_instances,
    instances_to_matrix,
    load_instances,
    save_instances,
)
from .prepare import (
    DEFAULT_BOT_MATCH_RATIO,
    DEFAULT_BOT_MIN_MATCHES,
    load_bots,
    load_labels,
    run_preparation,
    save_bots,
    save_labels,
)
from .records import Dataset, format_instant, parse_instant
from .splinefit import (
    FittedModel,
    build_model_spec,
    fit_model,
    load_model,
    predict_one,
    save_model,
)

MODEL_SETS = ("both", "proposed", "baseline")

_BOOL_KEYS = frozenset()
_INT_KEYS = frozenset({"seed", "jobs", "iterations", "page_size", "grid_size",
                       "bot_min_matches", "budget", "spline_dof"})
_FLOAT_KEYS = frozenset({"threshold", "cluster_threshold", "r2_threshold",
                         "high_ratio", "bot_match_ratio", "hexbin_width",
                         "rate_limit", "min_prob"})


@dataclass
class RunConfig:
    dataset: str | None = None
    out: str = "out"
    seed: int | None = None
    jobs: int = 1
    subsystem_rule: str = "project"
    bots_file: str | None = None
    bot_min_matches: int = DEFAULT_BOT_MIN_MATCHES
    bot_match_ratio: float = DEFAULT_BOT_MATCH_RATIO
    cluster_threshold: float = 0.7
    r2_threshold: float = 0.9
    high_ratio: float = 0.3
    spline_dof: int = 3
    budget: int | None = None
    iterations: int = 1000
    threshold: float = 0.5
    hexbin_width: float = 1.0
    grid_size: int = 100
    model_set: str = "both"
    where: str | None = None
    gerrit_url: str | None = None
    gerrit_query: str | None = None
    page_size: int = 500
    rate_limit: float = 4.0

    def __post_init__(self):
        if self.model_set not in MODEL_SETS:
            raise DataError(f"model_set must be one of {', '.join(MODEL_SETS)}")
        if self.jobs < 1:
            raise DataError("jobs must be >= 1")

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def require_seed(self) -> int:
        if self.seed is None:
            raise DataError("a seed is required for this stage (set seed= or --seed)")
        return self.seed


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Read a flat key=value config file; # starts a comment line."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise DataError(f"config line {lineno}: expected key=value")
        key, _, value = stripped.partition("=")
        values[key.strip()] = value.strip()
    return values


def build_run_config(file_values: dict[str, str] | None = None,
                     overrides: dict | None = None) -> RunConfig:
    """Merge config-file values with flag overrides into a typed RunConfig."""
    known = {f.name for f in dataclasses.fields(RunConfig)}
    merged: dict = {}
    for key, raw in (file_values or {}).items():
        if key not in known:
            raise DataError(f"unknown config key: {key}")
        merged[key] = _coerce(key, raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in known:
            raise DataError(f"unknown config key: {key}")
        merged[key] = _coerce(key, value) if isinstance(value, str) else value
    return RunConfig(**merged)


def _coerce(key: str, raw: str):
    if key in _INT_KEYS:
        try:
            return int(raw)
        except ValueError:
            raise DataError(f"config key {key} expects an integer, got {raw!r}") from None
    if key in _FLOAT_KEYS:
        try:
            return float(raw)
        except ValueError:
            raise DataError(f"config key {key} expects a number, got {raw!r}") from None
    return raw


#: Settings that change computed values given the same input files. Paths,
#: worker counts, and transport settings are deliberately left out so that
#: relocated or parallelized reruns stay byte-identical.
_HASHED_SETTINGS = (
    "seed", "subsystem_rule", "bot_min_matches", "bot_match_ratio",
    "cluster_threshold", "r2_threshold", "high_ratio", "spline_dof", "budget",
    "iterations", "threshold", "hexbin_width", "grid_size", "model_set", "where",
)


def config_hash(config: RunConfig) -> str:
    doc = {key: getattr(config, key) for key in _HASHED_SETTINGS}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# Stage helpers

def _dataset_path(config: RunConfig) -> Path:
    if not config.dataset:
        raise DataError("no dataset configured (set dataset= or --dataset)")
    return Path(config.dataset)


def _load_full_dataset(config: RunConfig) -> Dataset:
    return load_dataset(_dataset_path(config))


def _write_manifest(config: RunConfig, stage: str, outputs: list[Path]) -> None:
    out_dir = config.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "run_manifest.json"
    manifest = {}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    manifest.setdefault("stages", {})[stage] = {
        "config_hash": config_hash(config),
        "outputs": sorted(p.name for p in outputs),
    }
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                             encoding="utf-8")


def _apply_where(instances: list[ReviewInstance], where: str | None) -> list[ReviewInstance]:
    if not where:
        return instances
    if "=" not in where:
        raise DataError("where filter must look like metric=value")
    key, _, raw = where.partition("=")
    key = key.strip()
    raw = raw.strip().lower()
    if key not in METRIC_NAMES:
        raise DataError(f"where filter references unknown metric: {key}")
    if raw in ("true", "false"):
        wanted = raw == "true"
        kept = [inst for inst in instances if bool(getattr(inst, key)) == wanted]
    else:
        try:
            value = float(raw)
        except ValueError:
            raise DataError(f"where filter value must be boolean or numeric: {raw!r}") from None
        kept = [inst for inst in instances if float(getattr(inst, key)) == value]
    if not kept:
        raise DataError(f"where filter {where!r} matches no instances")
    return kept


# ---------------------------------------------------------------------------
# Stages

def stage_ingest(config: RunConfig) -> dict:
    """Fetch changes from a code-review server into a canonical JSONL dump."""
    if not config.gerrit_url or not config.gerrit_query:
        raise DataError("ingest needs gerrit_url and gerrit_query")
    out_path = config.out_dir / "dataset.jsonl"
    ingest_config = IngestConfig(
        base_url=config.gerrit_url, query=config.gerrit_query,
        page_size=config.page_size, rate_limit=config.rate_limit)
    dataset = fetch_to_jsonl(ingest_config, out_path)
    _write_manifest(config, "ingest", [out_path])
    return {"changes": len(dataset.changes), "dataset": str(out_path)}


def stage_prepare(config: RunConfig) -> dict:
    """Run bot detection, relevance selection, and participation labeling."""
    dataset = _load_full_dataset(config)
    known = load_bots(config.bots_file) if config.bots_file else set()
    bots, relevant, labels, counts = run_preparation(
        dataset, known, config.bot_min_matches, config.bot_match_ratio)
    if not relevant:
        raise DataError("no relevant changes after filtering")
    out_dir = config.out_dir
    bots_path = out_dir / "bots.txt"
    labels_path = out_dir / "labels.csv"
    relevant_path = out_dir / "relevant.jsonl"
    save_bots(bots, bots_path)
    save_labels(labels, labels_path)
    save_dataset(Dataset(changes=tuple(relevant), accounts=dataset.accounts),
                 relevant_path)
    _write_manifest(config, "prepare", [bots_path, labels_path, relevant_path])
    return counts.as_dict()


def stage_metrics(config: RunConfig) -> dict:
    """Compute all metric values for every labeled invitation."""
    dataset = _load_full_dataset(config)
    out_dir = config.out_dir
    bots = load_bots(out_dir / "bots.txt")
    labels = load_labels(out_dir / "labels.csv")
    index = build_index(dataset.changes, bots, config.subsystem_rule)
    instances = build_instances(dataset.changes, labels, index)
    instances_path = out_dir / "instances.csv"
    save_instances(instances, instances_path)
    _write_manifest(config, "metrics", [instances_path])
    return {"instances": len(instances), "path": str(instances_path)}


def _model_inputs(config: RunConfig) -> tuple[list[ReviewInstance], np.ndarray, np.ndarray]:
    instances = load_instances(config.out_dir / "instances.csv")
    instances = _apply_where(instances, config.where)
    X, y = instances_to_matrix(instances)
    return instances, X, y


def stage_fit(config: RunConfig) -> dict:
    """Screen variables, allocate spline budgets, and fit both models."""
    seed = config.require_seed()
    _, X, y = _model_inputs(config)
    out_dir = config.out_dir
    outputs: list[Path] = []
    summary: dict = {"instances": int(y.size)}
    screening: dict = {"config_hash": config_hash(config)}

    jobs = []
    if config.model_set in ("both", "proposed"):
        jobs.append(("proposed", list(METRIC_NAMES)))
    if config.model_set in ("both", "baseline"):
        jobs.append(("baseline", list(BASELINE_METRICS)))
    for kind, names in jobs:
        cols = [METRIC_NAMES.index(n) for n in names]
        spec, report = build_model_spec(
            X[:, cols], names, y, seed=seed,
            cluster_threshold=config.cluster_threshold,
            r2_threshold=config.r2_threshold,
            high_ratio=config.high_ratio,
            spline_dof=config.spline_dof,
            priority=list(METRIC_NAMES),
            budget=config.budget,
        )
        model = fit_model(X[:, cols], names, y, spec)
        path = out_dir / f"model_{kind}.json"
        save_model(model, path)
        outputs.append(path)
        report["dof_table"] = [
            {"variable": name, "dof": spec.dof.get(name, 1),
             "knots": list(spec.knots.get(name, ()))}
            for name in spec.variables
        ]
        screening[kind] = report
        summary[kind] = {
            "variables": list(spec.variables),
            "budget": report["budget"],
            "deviance": model.deviance,
            "separation": model.separation,
        }
    screening_path = out_dir / "screening.json"
    screening_path.write_text(json.dumps(screening, sort_keys=True, indent=2) + "\n",
                              encoding="utf-8")
    outputs.append(screening_path)
    _write_manifest(config, "fit", outputs)
    return summary


def _load_model_for(config: RunConfig, kind: str) -> FittedModel:
    path = config.out_dir / f"model_{kind}.json"
    if not path.exists():
        raise DataError(f"model artifact not found: {path}")
    return load_model(path)


def stage_evaluate(config: RunConfig) -> dict:
    """Bootstrap the performance measures; compare proposed to baseline."""
    seed = config.require_seed()
    _, X, y = _model_inputs(config)
    out_dir = config.out_dir
    outputs: list[Path] = []
    reports: dict[str, evaluate_mod.BootstrapReport] = {}

    kinds = (["proposed", "baseline"] if config.model_set == "both"
             else [config.model_set])
    for kind in kinds:
        model = _load_model_for(config, kind)
        names = list(model.spec.variables)
        cols = [METRIC_NAMES.index(n) for n in names]
        reports[kind] = evaluate_mod.out_of_sample_bootstrap(
            X[:, cols], names, y, model.spec,
            iterations=config.iterations, seed=seed,
            threshold=config.threshold, jobs=config.jobs)

    primary = "proposed" if "proposed" in reports else "baseline"
    evaluation_path = out_dir / "evaluation.json"
    doc = evaluate_mod.report_to_json(reports[primary])
    doc["model"] = primary
    doc["config_hash"] = config_hash(config)
    evaluation_path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                               encoding="utf-8")
    outputs.append(evaluation_path)

    comparison_path = out_dir / "comparison.csv"
    if len(reports) == 2:
        evaluate_mod.save_comparison(reports["proposed"], reports["baseline"],
                                     comparison_path)
    else:
        _save_single_comparison(reports[primary], primary, comparison_path)
    outputs.append(comparison_path)
    _write_manifest(config, "evaluate", outputs)
    return {kind: report.summary() for kind, report in reports.items()}


def _save_single_comparison(report, kind: str, path: Path) -> None:
    import csv

    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["measure", "proposed_mean", "proposed_sd",
                         "baseline_mean", "baseline_sd", "improvement_pct"])
        for name in evaluate_mod.MEASURES:
            row = [name, "", "", "", "", ""]
            offset = 1 if kind == "proposed" else 3
            row[offset] = "%.9g" % report.mean(name)
            row[offset + 1] = "%.9g" % report.sd(name)
            writer.writerow(row)


def stage_explain(config: RunConfig) -> dict:
    """Rank variables by bootstrapped explanatory power; export effect curves."""
    seed = config.require_seed()
    _, X, y = _model_inputs(config)
    kind = "baseline" if config.model_set == "baseline" else "proposed"
    model = _load_model_for(config, kind)
    names = list(model.spec.variables)
    cols = [METRIC_NAMES.index(n) for n in names]
    Xm = X[:, cols]

    wald = explain_mod.bootstrap_wald(
        Xm, names, y, model.spec, iterations=config.iterations,
        seed=seed, jobs=config.jobs)
    report = explain_mod.build_rank_report(model, wald, Xm, names)
    report["model"] = kind
    report["config_hash"] = config_hash(config)

    out_dir = config.out_dir
    explain_path = out_dir / "explain.json"
    explain_mod.save_rank_report(report, explain_path)
    effects = [explain_mod.partial_effect(model, var, Xm, names,
                                          grid_size=config.grid_size)
               for var in model.spec.variables]
    effects_path = out_dir / "partial_effects.csv"
    explain_mod.save_partial_effects(effects, effects_path)
    _write_manifest(config, "explain", [explain_path, effects_path])
    ranks = {var: report["variables"][var]["rank"] for var in model.spec.variables}
    return {"model": kind, "ranks": ranks, "redraws": report["redraws"]}


def stage_describe(config: RunConfig) -> dict:
    """Descriptive statistics over labels, reviewers, and organizations."""
    dataset = _load_full_dataset(config)
    out_dir = config.out_dir
    labels = load_labels(out_dir / "labels.csv")
    bots = load_bots(out_dir / "bots.txt")

    summary = describe_mod.unresponded_summary(labels)
    tau_report, cells = describe_mod.invited_vs_unresponded(
        labels, bin_width=config.hexbin_width)

    index = build_index(dataset.changes, bots, config.subsystem_rule)
    horizon = max(
        [c.created_at for c in dataset.changes]
        + [c.closed_at for c in dataset.changes if c.closed_at is not None]
        + [m.timestamp for c in dataset.changes for m in c.messages]
        + [v.timestamp for c in dataset.changes for v in c.votes]
    )
    from datetime import timedelta

    rates = describe_mod.participation_rate_distribution(
        index, horizon + timedelta(seconds=1))
    org_rows = describe_mod.org_diversity(
        acc for aid, acc in sorted(dataset.accounts.items()) if aid not in bots)

    rq1_path = out_dir / "rq1_summary.json"
    violin_path = out_dir / "violin.csv"
    hexbin_path = out_dir / "hexbin.csv"
    org_path = out_dir / "org.csv"
    describe_mod.save_rq1_summary(summary, tau_report, rates, rq1_path)
    describe_mod.save_violin(summary, violin_path)
    describe_mod.save_hexbin(cells, hexbin_path)
    describe_mod.save_org(org_rows, org_path)
    _write_manifest(config, "describe",
                    [rq1_path, violin_path, hexbin_path, org_path])
    out = summary.as_dict()
    out["kendall"] = tau_report
    return out


# ---------------------------------------------------------------------------
# Recommendation

def recommend(config: RunConfig, change: dict, candidates: list[str],
              as_of: str, model_path: str | None = None,
              min_prob: float | None = None) -> list[dict]:
    """Rank candidate reviewers by estimated participation likelihood."""
    if not candidates:
        raise DataError("recommend needs at least one candidate")
    dataset = _load_full_dataset(config)
    bots = load_bots(config.out_dir / "bots.txt") if (
        config.out_dir / "bots.txt").exists() else set()
    index = build_index(dataset.changes, bots, config.subsystem_rule)
    path = Path(model_path) if model_path else config.out_dir / "model_proposed.json"
    model = load_model(path)
    t = parse_instant(as_of)

    author = change.get("author", "")
    if not author:
        raise DataError("change description needs an author")
    modules = list(change.get("modules") or [])
    if not modules:
        raise DataError("change description needs at least one module")
    if config.subsystem_rule == "project":
        subsystem = change.get("subsystem") or change.get("project", "")
    else:
        subsystem = change.get("subsystem", "")
    if not subsystem:
        raise DataError("change description needs a project or subsystem")
    size = int(change.get("patch_size", 0))

    a_auth, a_rev = index.experience(author, modules, t)
    rows = []
    for reviewer in candidates:
        concurrent, remaining = index.workload(reviewer, t)
        r_auth, r_rev = index.experience(reviewer, modules, t)
        values = {
            "concurrent_reviews": float(concurrent),
            "remaining_reviews": float(remaining),
            "familiarity": float(index.familiarity(reviewer, author, t)),
            "median_comments": index.median_comments(reviewer, subsystem, t),
            "participation_rate": index.participation_rate(reviewer, subsystem, t),
            "received_invitations": float(index.received_invitations(reviewer, t)),
            "core_member": 1.0 if index.core_member(reviewer, t) else 0.0,
            "reviewer_authoring_exp": r_auth,
            "reviewer_reviewing_exp": r_rev,
            "patch_size": float(size),
            "author_authoring_exp": a_auth,
            "author_reviewing_exp": a_rev,
        }
        probability = predict_one(model, values)
        entry = {
            "reviewer": reviewer,
            "probability": probability,
            "cold_start": not index.knows(reviewer),
        }
        if min_prob is not None:
            entry["recommended"] = probability >= min_prob
        rows.append(entry)
    rows.sort(key=lambda row: (-row["probability"], row["reviewer"]))
    return rows
