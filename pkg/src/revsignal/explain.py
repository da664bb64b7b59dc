"""Explanatory analysis: which variables drive the participation decision.

Joint Wald chi-square statistics are bootstrapped to get a distribution per
variable, the distributions are grouped into statistically distinct ranks,
and per-variable effect shapes are exported as partial-effect curves and
interquartile odds ratios.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit
from scipy.stats import chi2 as chi2_dist

from .errors import DataError, FitError
from .evaluate import _iteration_rng, spec_hash
from .splinefit import (
    FittedModel,
    ModelSpec,
    build_design,
    fit_model,
    respec_knots,
    wald_joint,
)

log = logging.getLogger(__name__)

SIGNIFICANCE_P = 0.001
SIGNIFICANCE_SHARE = 0.9


# ---------------------------------------------------------------------------
# Bootstrap Wald distributions

@dataclass
class BootstrapWald:
    chi2: dict[str, np.ndarray]
    pvalues: dict[str, np.ndarray]
    iterations: int
    seed: int
    redraws: int

    def significance_fraction(self, variable: str) -> float:
        return float(np.mean(self.pvalues[variable] < SIGNIFICANCE_P))


def bootstrap_wald(X: np.ndarray, names, y: np.ndarray, spec: ModelSpec,
                   iterations: int = 1000, seed: int = 0, jobs: int = 1,
                   max_redraw_share: float = 0.05) -> BootstrapWald:
    """Joint Wald chi-square per variable over with-replacement refits."""
    if iterations < 1:
        raise DataError("iterations must be >= 1")
    names = list(names)
    y = np.asarray(y, dtype=float)
    variables = list(spec.variables)
    results: list[dict | None] = [None] * iterations
    redraws = [0] * iterations

    def run(i: int):
        rng = _iteration_rng(seed, i)
        n = X.shape[0]
        budget = max(3, int(math.ceil(iterations * max_redraw_share)) + 2)
        for attempt in range(budget):
            idx = rng.integers(0, n, size=n)
            y_s = y[idx]
            if y_s.min() == y_s.max():
                continue
            X_s = X[idx]
            try:
                sample_spec = respec_knots(spec, X_s, names)
                model = fit_model(X_s, names, y_s, sample_spec)
                stats = {}
                for var in variables:
                    chi2, dof, p, _, _ = wald_joint(model, var)
                    stats[var] = (chi2, p)
            except FitError:
                continue
            results[i] = stats
            redraws[i] = attempt
            return
        raise FitError(f"bootstrap iteration {i} kept failing after {budget} redraws")

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(run, range(iterations)))
    else:
        for i in range(iterations):
            run(i)

    total_redraws = sum(redraws)
    if total_redraws > max_redraw_share * iterations:
        raise FitError(
            f"{total_redraws} redraws over {iterations} iterations exceeds the "
            f"{max_redraw_share:.0%} budget; data too unstable for this model")
    if total_redraws:
        log.info("wald bootstrap redrew %d degenerate samples", total_redraws)
    chi2 = {var: np.array([res[var][0] for res in results]) for var in variables}
    pvalues = {var: np.array([res[var][1] for res in results]) for var in variables}
    return BootstrapWald(chi2=chi2, pvalues=pvalues, iterations=iterations,
                         seed=seed, redraws=total_redraws)


# ---------------------------------------------------------------------------
# Scott-Knott ESD ranking

_SK_LAMBDA = math.pi / (2.0 * (math.pi - 2.0))
_SK_DOF = 1.0 / (math.pi - 2.0)


def scott_knott_esd(distributions: dict[str, np.ndarray], alpha: float = 0.05,
                    negligible_d: float = 0.2) -> dict[str, int]:
    """Group distributions into ranks of statistically indistinct means.

    Values are log1p-transformed, names are ordered by decreasing mean, and
    the ordered list is split recursively wherever the between-group sum of
    squares is significant. Adjacent groups whose difference has a negligible
    effect size are merged back. Rank 1 holds the largest means.
    """
    if not distributions:
        return {}
    samples = {}
    for name, values in distributions.items():
        arr = np.asarray(values, dtype=float)
        if arr.size < 2:
            raise DataError(f"distribution {name!r} needs at least 2 values")
        samples[name] = np.log1p(arr)
    ordered = sorted(samples, key=lambda nm: (-float(np.mean(samples[nm])), nm))

    groups: list[list[str]] = []
    _split(ordered, samples, alpha, groups)
    groups = _merge_negligible(groups, samples, negligible_d)

    ranks = {}
    for rank, members in enumerate(groups, start=1):
        for name in members:
            ranks[name] = rank
    return ranks


def _split(ordered: list[str], samples: dict[str, np.ndarray], alpha: float,
           out: list[list[str]]) -> None:
    k = len(ordered)
    if k < 2:
        out.append(list(ordered))
        return
    means = np.array([float(np.mean(samples[nm])) for nm in ordered])
    grand = float(np.mean(means))
    best_b0 = -1.0
    best_cut = None
    for cut in range(1, k):
        left, right = means[:cut], means[cut:]
        b0 = (left.size * (left.mean() - grand) ** 2
              + right.size * (right.mean() - grand) ** 2)
        if b0 > best_b0:
            best_b0 = b0
            best_cut = cut

    # Variance estimate pooled over the member distributions.
    n_total = 0
    ss_within = 0.0
    for nm in ordered:
        arr = samples[nm]
        n_total += arr.size
        ss_within += float(np.sum((arr - arr.mean()) ** 2))
    nu = max(n_total - k, 1)
    mse = ss_within / nu
    reps = n_total / k
    s2_mean = mse / reps if reps > 0 else 0.0
    sigma2 = (float(np.sum((means - grand) ** 2)) + nu * s2_mean) / (k + nu)

    if sigma2 <= 1e-300:
        significant = best_b0 > 1e-300
    else:
        lam = _SK_LAMBDA * best_b0 / sigma2
        dof = _SK_DOF * k
        significant = lam > chi2_dist.ppf(1.0 - alpha, dof)

    if not significant or best_cut is None:
        out.append(list(ordered))
        return
    _split(ordered[:best_cut], samples, alpha, out)
    _split(ordered[best_cut:], samples, alpha, out)


def _merge_negligible(groups: list[list[str]], samples: dict[str, np.ndarray],
                      negligible_d: float) -> list[list[str]]:
    merged = [list(groups[0])] if groups else []
    for group in groups[1:]:
        prev = np.concatenate([samples[nm] for nm in merged[-1]])
        cur = np.concatenate([samples[nm] for nm in group])
        if _cohens_d(prev, cur) < negligible_d:
            merged[-1].extend(group)
        else:
            merged.append(list(group))
    return merged


def _cohens_d(a: np.ndarray, b: np.ndarray) -> float:
    n1, n2 = a.size, b.size
    if n1 + n2 <= 2:
        return math.inf
    var1 = float(np.var(a, ddof=1)) if n1 > 1 else 0.0
    var2 = float(np.var(b, ddof=1)) if n2 > 1 else 0.0
    pooled = ((n1 - 1) * var1 + (n2 - 1) * var2) / (n1 + n2 - 2)
    diff = abs(float(np.mean(a)) - float(np.mean(b)))
    if pooled <= 0:
        return 0.0 if diff == 0 else math.inf
    return diff / math.sqrt(pooled)


# ---------------------------------------------------------------------------
# Partial effects and odds ratios

@dataclass
class PartialEffect:
    variable: str
    grid: np.ndarray
    probability: np.ndarray
    band_low: np.ndarray
    band_high: np.ndarray
    fixed: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class OddsRatioEntry:
    variable: str
    q1: float
    q3: float
    odds_ratio: float
    percent: float
    degenerate: bool = False


def _fixed_values(X: np.ndarray, names) -> dict[str, float]:
    """Medians for numeric columns, modes for binary ones."""
    fixed = {}
    for i, name in enumerate(names):
        col = X[:, i]
        values, counts = np.unique(col, return_counts=True)
        if values.size <= 2:
            fixed[name] = float(values[int(np.argmax(counts))])
        else:
            fixed[name] = float(np.median(col))
    return fixed


def _eta_and_var(model: FittedModel, rows: np.ndarray, names) -> tuple[np.ndarray, np.ndarray]:
    design, _, _ = build_design(rows, names, model.spec)
    eta = design @ model.coefficients
    var = np.einsum("ij,jk,ik->i", design, model.covariance, design)
    return eta, np.maximum(var, 0.0)


def partial_effect(model: FittedModel, variable: str, X: np.ndarray, names,
                   grid_size: int = 100) -> PartialEffect:
    """Response curve over one variable with the others held fixed."""
    names = list(names)
    if variable not in model.spec.variables:
        raise DataError(f"variable {variable!r} is not in the model")
    col = X[:, names.index(variable)]
    low, high = np.percentile(col, [1.0, 99.0])
    if low == high:
        grid = np.array([low])
    else:
        grid = np.linspace(low, high, grid_size)
    fixed = _fixed_values(X, names)
    rows = np.empty((grid.size, len(names)))
    for j, name in enumerate(names):
        rows[:, j] = grid if name == variable else fixed[name]
    eta, var = _eta_and_var(model, rows, names)
    half_width = 1.96 * np.sqrt(var)
    return PartialEffect(
        variable=variable,
        grid=grid,
        probability=expit(eta),
        band_low=expit(eta - half_width),
        band_high=expit(eta + half_width),
        fixed={k: v for k, v in fixed.items() if k != variable},
    )


def odds_ratio_iqr(model: FittedModel, X: np.ndarray, names, variable: str) -> OddsRatioEntry:
    """Odds change when the variable shifts from its first to third quartile."""
    names = list(names)
    if variable not in model.spec.variables:
        raise DataError(f"variable {variable!r} is not in the model")
    col = X[:, names.index(variable)]
    values = np.unique(col)
    if values.size <= 2:
        q1, q3 = float(values[0]), float(values[-1])
    else:
        q1, q3 = (float(q) for q in np.percentile(col, [25.0, 75.0]))
    if q1 == q3:
        return OddsRatioEntry(variable, q1, q3, 1.0, 0.0, degenerate=True)
    fixed = _fixed_values(X, names)
    rows = np.empty((2, len(names)))
    for j, name in enumerate(names):
        rows[:, j] = (q1, q3) if name == variable else fixed[name]
    eta, _ = _eta_and_var(model, rows, names)
    ratio = float(np.exp(eta[1] - eta[0]))
    return OddsRatioEntry(variable, q1, q3, ratio, (ratio - 1.0) * 100.0)


# ---------------------------------------------------------------------------
# Report assembly and artifacts

def build_rank_report(model: FittedModel, wald: BootstrapWald,
                      X: np.ndarray, names) -> dict:
    """Full-data Wald shares, bootstrap ranks, and odds ratios per variable."""
    ranks = scott_knott_esd(wald.chi2)
    entries = {}
    for var in model.spec.variables:
        chi2, dof, p, proportion, nl_chi2 = wald_joint(model, var)
        total = chi2 / proportion if proportion > 0 else 0.0
        orr = odds_ratio_iqr(model, X, names, var)
        entries[var] = {
            "chi2": chi2,
            "dof": dof,
            "p": p,
            "proportion_chi2": proportion,
            "nonlinear_chi2": nl_chi2,
            "nonlinear_proportion": (nl_chi2 / total) if total > 0 else 0.0,
            "rank": ranks[var],
            "significance_fraction": wald.significance_fraction(var),
            "significant": wald.significance_fraction(var) > SIGNIFICANCE_SHARE,
            "chi2_mean": float(np.mean(wald.chi2[var])),
            "odds_ratio": {
                "q1": orr.q1,
                "q3": orr.q3,
                "value": orr.odds_ratio,
                "percent": orr.percent,
                "degenerate": orr.degenerate,
            },
        }
    return {
        "variables": entries,
        "iterations": wald.iterations,
        "seed": wald.seed,
        "redraws": wald.redraws,
        "spec_hash": spec_hash(model.spec),
    }


def save_rank_report(report: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def save_partial_effects(effects: list[PartialEffect], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable", "x", "p", "low", "high"])
        for effect in effects:
            for x, p, lo, hi in zip(effect.grid, effect.probability,
                                    effect.band_low, effect.band_high):
                writer.writerow([effect.variable, "%.9g" % x, "%.9g" % p,
                                 "%.9g" % lo, "%.9g" % hi])
