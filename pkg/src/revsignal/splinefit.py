"""Statistical engine: variable screening, spline expansion, logistic fits.

Screening removes collinear and redundant variables, a degrees-of-freedom
budget decides which survivors get a nonlinear (restricted cubic spline)
expansion, and the model is fit by iteratively reweighted least squares.
Everything here is pure and deterministic given its inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata, spearmanr
from scipy.stats import chi2 as chi2_dist

from .errors import DataError, FitError

#: Quantile positions for restricted-cubic-spline knots, by knot count.
KNOT_QUANTILES = {
    3: (0.10, 0.50, 0.90),
    4: (0.05, 0.35, 0.65, 0.95),
    5: (0.05, 0.275, 0.50, 0.725, 0.95),
    6: (0.05, 0.23, 0.41, 0.59, 0.77, 0.95),
}

MAX_IRLS_ITERATIONS = 25
DEVIANCE_TOLERANCE = 1e-8
WEIGHT_FLOOR = 1e-10
SEPARATION_BETA = 15.0


# ---------------------------------------------------------------------------
# Correlation and redundancy screening

def spearman_rho(x, y) -> float:
    """Rank correlation (mid-ranks for ties). Constant input is an error."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 2:
        raise DataError("spearman_rho requires two equal-length vectors of size >= 2")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DataError("spearman_rho undefined for a constant vector")
    rho = spearmanr(x, y).statistic
    if math.isnan(rho):
        raise DataError("spearman_rho undefined (zero rank variance)")
    return float(rho)


def variable_clustering(X: np.ndarray, names, threshold: float = 0.7,
                        priority=None) -> tuple[list[str], list[dict]]:
    """Drop all but one of each group of mutually rank-correlated variables.

    Groups are found by complete-linkage clustering on distance 1 - |rho|, so
    a cluster only forms when every pair inside it exceeds the threshold. The
    surviving member is the earliest in `priority` (default: input order).
    The pass repeats on the survivors until no pair exceeds the threshold.
    """
    names = list(names)
    if len(names) < 2:
        return names, []
    priority = list(priority) if priority is not None else list(names)
    rank_of = {name: priority.index(name) if name in priority else len(priority)
               for name in names}
    columns = {name: X[:, i] for i, name in enumerate(names)}

    survivors = list(names)
    report: list[dict] = []
    while True:
        k = len(survivors)
        if k < 2:
            break
        absrho = np.zeros((k, k))
        for i in range(k):
            for j in range(i + 1, k):
                rho = abs(spearman_rho(columns[survivors[i]], columns[survivors[j]]))
                absrho[i, j] = absrho[j, i] = rho
        clusters = _complete_linkage(1.0 - absrho, 1.0 - threshold)
        dropped_any = False
        for members in clusters:
            if len(members) < 2:
                continue
            group = [survivors[i] for i in members]
            keep = min(group, key=lambda nm: rank_of[nm])
            pairs = [(survivors[i], survivors[j], absrho[i, j])
                     for ai, i in enumerate(members) for j in members[ai + 1:]]
            report.append({
                "members": sorted(group),
                "representative": keep,
                "max_abs_rho": float(max(p[2] for p in pairs)),
            })
            for name in group:
                if name != keep:
                    survivors.remove(name)
                    dropped_any = True
        if not dropped_any:
            break
    return survivors, report


def _complete_linkage(dist: np.ndarray, cut: float) -> list[list[int]]:
    """Agglomerate while the farthest pair across two clusters is < cut."""
    n = dist.shape[0]
    clusters = [[i] for i in range(n)]
    while len(clusters) > 1:
        best = None
        best_d = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                d = max(dist[a, b] for a in clusters[i] for b in clusters[j])
                if best_d is None or d < best_d:
                    best_d = d
                    best = (i, j)
        if best_d is None or best_d >= cut:
            break
        i, j = best
        merged = clusters[i] + clusters[j]
        clusters = [c for k, c in enumerate(clusters) if k not in (i, j)]
        clusters.append(sorted(merged))
    return [sorted(c) for c in clusters]


def redundancy_filter(X: np.ndarray, names, r2_threshold: float = 0.9) -> list[str]:
    """Drop variables explainable from the others (linear R^2 above threshold)."""
    survivors = list(names)
    columns = {name: X[:, i] for i, name in enumerate(names)}
    while len(survivors) > 1:
        worst_name = None
        worst_r2 = -1.0
        for name in survivors:
            target = columns[name]
            others = np.column_stack(
                [np.ones(target.size)] + [columns[o] for o in survivors if o != name])
            r2 = _ols_r2(others, target)
            if r2 > worst_r2:
                worst_r2 = r2
                worst_name = name
        if worst_r2 > r2_threshold:
            survivors.remove(worst_name)
        else:
            break
    return survivors


def _ols_r2(design: np.ndarray, target: np.ndarray) -> float:
    sst = float(np.sum((target - target.mean()) ** 2))
    if sst == 0.0:
        return 1.0  # constant target: perfectly (vacuously) predictable
    coef, _, _, _ = np.linalg.lstsq(design, target, rcond=None)
    resid = target - design @ coef
    ssr = float(np.sum(resid ** 2))
    r2 = 1.0 - ssr / sst
    return min(max(r2, 0.0), 1.0)


# ---------------------------------------------------------------------------
# Degrees-of-freedom budgeting

def dof_budget(true_count: int, false_count: int) -> int:
    if true_count < 0 or false_count < 0:
        raise DataError("class counts must be non-negative")
    return min(true_count, false_count) // 15


def spearman_multiple_rho2(x, y) -> float:
    """R^2 of regressing the outcome on rank(x) and rank(x)^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 3:
        raise DataError("spearman_multiple_rho2 requires vectors of size >= 3")
    if np.all(x == x[0]):
        return 0.0
    r = rankdata(x)
    design = np.column_stack([np.ones(r.size), r, r * r])
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        return 0.0
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    ssr = float(np.sum((y - design @ coef) ** 2))
    return min(max(1.0 - ssr / sst, 0.0), 1.0)


def allocate_dof(rho2: dict[str, float], budget: int, binary: set[str] = frozenset(),
                 high_ratio: float = 0.3, spline_dof: int = 3) -> dict[str, int]:
    """Give high-signal continuous variables a spline budget, the rest 1 d.f.

    Demotes the weakest splined variables back to linear if the total would
    exceed the budget; errors out when even all-linear cannot fit.
    """
    if budget < len(rho2):
        raise FitError(
            f"degrees-of-freedom budget {budget} cannot support {len(rho2)} variables")
    if not rho2:
        return {}
    top = max(rho2.values())
    alloc = {}
    for name, value in rho2.items():
        if name in binary:
            alloc[name] = 1
        elif value >= high_ratio * top:
            alloc[name] = spline_dof
        else:
            alloc[name] = 1
    splined = sorted((name for name, d in alloc.items() if d > 1),
                     key=lambda nm: (rho2[nm], nm))
    while sum(alloc.values()) > budget and splined:
        alloc[splined.pop(0)] = 1
    return alloc


# ---------------------------------------------------------------------------
# Restricted cubic splines

def rcs_knots(x, d: int) -> tuple[float, ...] | None:
    """Quantile knots supporting d degrees of freedom, or None for linear.

    Wants k = d + 1 knots; collapses to fewer when quantiles coincide, and
    signals a linear fallback (None) when not even 3 distinct knots exist.
    """
    if d < 2:
        raise DataError("rcs_knots requires d >= 2")
    x = np.asarray(x, dtype=float)
    k = min(d + 1, max(KNOT_QUANTILES))
    while k >= 3:
        quantiles = KNOT_QUANTILES[k]
        knots = tuple(float(np.quantile(x, q)) for q in quantiles)
        if all(b > a for a, b in zip(knots, knots[1:])):
            return knots
        k -= 1
    return None


def rcs_basis(x, knots) -> np.ndarray:
    """Restricted-cubic-spline basis: linear term plus k-2 curvature terms.

    Tails beyond the outermost knots stay linear by construction.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.asarray(knots, dtype=float)
    k = t.size
    if k < 3:
        raise DataError("rcs_basis requires at least 3 knots")
    out = np.empty((x.size, k - 1))
    out[:, 0] = x
    scale = (t[-1] - t[0]) ** 2
    denom = t[-1] - t[-2]
    for j in range(k - 2):
        term = (_pos_cube(x - t[j])
                - _pos_cube(x - t[-2]) * (t[-1] - t[j]) / denom
                + _pos_cube(x - t[-1]) * (t[-2] - t[j]) / denom)
        out[:, j + 1] = term / scale
    return out


def _pos_cube(u: np.ndarray) -> np.ndarray:
    return np.maximum(u, 0.0) ** 3


# ---------------------------------------------------------------------------
# Model specification and design matrices

@dataclass(frozen=True)
class ModelSpec:
    """Which variables enter the model and how each one is expanded."""

    variables: tuple[str, ...]
    dof: dict[str, int]
    knots: dict[str, tuple[float, ...]]
    outcome: str = "outcome"
    seed: int = 0

    def __post_init__(self):
        for name in self.variables:
            d = self.dof.get(name, 1)
            if d < 1:
                raise DataError(f"variable {name}: degrees of freedom must be >= 1")
            ks = self.knots.get(name, ())
            if d >= 2:
                if len(ks) != d + 1:
                    raise DataError(f"variable {name}: d={d} needs {d + 1} knots")
                if any(b <= a for a, b in zip(ks, ks[1:])):
                    raise DataError(f"variable {name}: knots must strictly increase")

    def term_count(self, name: str) -> int:
        return self.dof.get(name, 1)


def build_model_spec(X: np.ndarray, names, y: np.ndarray, seed: int,
                     cluster_threshold: float = 0.7, r2_threshold: float = 0.9,
                     high_ratio: float = 0.3, spline_dof: int = 3,
                     priority=None, budget: int | None = None,
                     ) -> tuple[ModelSpec, dict]:
    """Run the full screening pipeline and return a fit-ready ModelSpec."""
    names = list(names)
    col = {name: X[:, i] for i, name in enumerate(names)}
    constant = [name for name in names if np.all(col[name] == col[name][0])]
    screened = [name for name in names if name not in constant]
    if not screened:
        raise FitError("every candidate variable is constant")

    Xs = np.column_stack([col[n] for n in screened])
    survivors, clusters = variable_clustering(
        Xs, screened, threshold=cluster_threshold,
        priority=priority if priority is not None else names)
    Xr = np.column_stack([col[n] for n in survivors])
    survivors = redundancy_filter(Xr, survivors, r2_threshold=r2_threshold)

    true_count = int(np.sum(y == 1))
    false_count = int(np.sum(y == 0))
    total_budget = dof_budget(true_count, false_count) if budget is None else budget

    binary = {n for n in survivors if np.unique(col[n]).size <= 2}
    rho2 = {n: (0.0 if n in binary and np.unique(col[n]).size < 2
                else spearman_multiple_rho2(col[n], y)) for n in survivors}
    alloc = allocate_dof(rho2, total_budget, binary=binary,
                         high_ratio=high_ratio, spline_dof=spline_dof)

    knots: dict[str, tuple[float, ...]] = {}
    for name in survivors:
        if alloc[name] >= 2:
            ks = rcs_knots(col[name], alloc[name])
            if ks is None:
                alloc[name] = 1
            else:
                if len(ks) != alloc[name] + 1:
                    alloc[name] = len(ks) - 1  # collapsed to fewer knots
                knots[name] = ks

    spec = ModelSpec(variables=tuple(survivors), dof=alloc, knots=knots, seed=seed)
    report = {
        "constant_dropped": constant,
        "clusters": clusters,
        "survivors": survivors,
        "budget": total_budget,
        "true_count": true_count,
        "false_count": false_count,
        "rho2": rho2,
        "dof": dict(alloc),
    }
    return spec, report


def respec_knots(spec: ModelSpec, X: np.ndarray, names) -> ModelSpec:
    """Re-estimate knot locations on new data, keeping the d.f. allocation.

    Variables whose knots collapse on this data fall back to linear terms.
    """
    names = list(names)
    col = {name: X[:, i] for i, name in enumerate(names)}
    dof = dict(spec.dof)
    knots: dict[str, tuple[float, ...]] = {}
    for name in spec.variables:
        if dof.get(name, 1) >= 2:
            ks = rcs_knots(col[name], dof[name])
            if ks is None:
                dof[name] = 1
            else:
                dof[name] = len(ks) - 1
                knots[name] = ks
    return ModelSpec(variables=spec.variables, dof=dof, knots=knots,
                     outcome=spec.outcome, seed=spec.seed)


def build_design(X: np.ndarray, names, spec: ModelSpec,
                 ) -> tuple[np.ndarray, dict[str, dict], list[str]]:
    """Expand raw metric columns into the model design matrix.

    Returns the matrix (leading intercept column), a per-variable term map
    with overall and nonlinear column indices, and printable column names.
    """
    names = list(names)
    index_of = {name: i for i, name in enumerate(names)}
    missing = [v for v in spec.variables if v not in index_of]
    if missing:
        raise DataError(f"design data lacks model variables: {', '.join(missing)}")
    n = X.shape[0]
    blocks = [np.ones((n, 1))]
    column_names = ["intercept"]
    term_map: dict[str, dict] = {}
    cursor = 1
    for name in spec.variables:
        x = X[:, index_of[name]]
        d = spec.dof.get(name, 1)
        if d == 1:
            blocks.append(x.reshape(n, 1))
            term_map[name] = {"columns": [cursor], "nonlinear": []}
            column_names.append(name)
            cursor += 1
        else:
            basis = rcs_basis(x, spec.knots[name])
            blocks.append(basis)
            cols = list(range(cursor, cursor + basis.shape[1]))
            term_map[name] = {"columns": cols, "nonlinear": cols[1:]}
            column_names.append(name)
            column_names.extend(name + "'" * j for j in range(1, basis.shape[1]))
            cursor += basis.shape[1]
    design = np.hstack(blocks)
    return design, term_map, column_names


# ---------------------------------------------------------------------------
# Logistic regression by IRLS

@dataclass
class FittedModel:
    spec: ModelSpec
    coefficients: np.ndarray
    covariance: np.ndarray
    deviance: float
    n: int
    term_map: dict[str, dict] = field(default_factory=dict)
    column_names: list[str] = field(default_factory=list)
    converged: bool = True
    separation: bool = False
    iterations: int = 0

    @property
    def seed(self) -> int:
        return self.spec.seed


def fit_logistic(design: np.ndarray, y: np.ndarray, spec: ModelSpec,
                 term_map: dict[str, dict] | None = None,
                 column_names: list[str] | None = None) -> FittedModel:
    """Maximum-likelihood logistic fit via IRLS with step halving."""
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = design.shape
    if n <= p:
        raise FitError(f"need more instances ({n}) than design columns ({p})")
    positives = float(np.sum(y))
    if positives == 0 or positives == n:
        raise FitError("outcome has a single class; nothing to fit")
    column_names = column_names or [f"col{j}" for j in range(p)]

    beta = np.zeros(p)
    eta = design @ beta
    prob = expit(eta)
    deviance = _deviance(y, prob)
    info = None
    iterations = 0
    for iterations in range(1, MAX_IRLS_ITERATIONS + 1):
        w = np.maximum(prob * (1.0 - prob), WEIGHT_FLOOR)
        z = eta + (y - prob) / w
        wd = design * w[:, None]
        info = design.T @ wd
        rhs = wd.T @ z
        try:
            new_beta = np.linalg.solve(info, rhs)
        except np.linalg.LinAlgError:
            raise FitError(_singular_message(design, column_names)) from None
        step = new_beta - beta
        # Step halving: back off when a full update increases the deviance.
        factor = 1.0
        for _ in range(12):
            candidate = beta + factor * step
            cand_eta = design @ candidate
            cand_prob = expit(cand_eta)
            cand_dev = _deviance(y, cand_prob)
            if cand_dev <= deviance + 1e-12:
                break
            factor *= 0.5
        beta, eta, prob = candidate, cand_eta, cand_prob
        delta = deviance - cand_dev
        deviance = cand_dev
        if abs(delta) < DEVIANCE_TOLERANCE:
            break

    w = np.maximum(prob * (1.0 - prob), WEIGHT_FLOOR)
    info = design.T @ (design * w[:, None])
    if np.linalg.matrix_rank(info) < p:
        raise FitError(_singular_message(design, column_names))
    covariance = np.linalg.inv(info)
    covariance = (covariance + covariance.T) / 2.0

    separation = bool(np.max(np.abs(beta)) > SEPARATION_BETA and deviance < 1e-3)
    return FittedModel(
        spec=spec, coefficients=beta, covariance=covariance,
        deviance=float(deviance), n=n,
        term_map=term_map or {}, column_names=list(column_names),
        converged=iterations < MAX_IRLS_ITERATIONS or separation,
        separation=separation, iterations=iterations)


def _deviance(y: np.ndarray, prob: np.ndarray) -> float:
    p = np.clip(prob, 1e-12, 1.0 - 1e-12)
    return float(-2.0 * np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def _singular_message(design: np.ndarray, column_names: list[str]) -> str:
    from scipy.linalg import qr

    _, _, pivots = qr(design, mode="economic", pivoting=True)
    rank = int(np.linalg.matrix_rank(design))
    bad = sorted(column_names[j] for j in pivots[rank:])
    listing = ", ".join(bad) if bad else "unknown"
    return f"singular information matrix; dependent columns: {listing}"


def fit_model(X: np.ndarray, names, y: np.ndarray, spec: ModelSpec) -> FittedModel:
    """Convenience wrapper: expand the design for `spec` and fit it."""
    design, term_map, column_names = build_design(X, names, spec)
    return fit_logistic(design, y, spec, term_map, column_names)


# ---------------------------------------------------------------------------
# Prediction

def predict_matrix(model: FittedModel, X: np.ndarray, names) -> np.ndarray:
    """Predicted response probabilities for rows of raw metric columns."""
    design, _, _ = build_design(X, names, model.spec)
    prob = expit(design @ model.coefficients)
    tiny = np.finfo(float).tiny
    return np.clip(prob, tiny, 1.0 - 1e-16)


def predict_one(model: FittedModel, values: dict[str, float]) -> float:
    missing = [v for v in model.spec.variables if v not in values]
    if missing:
        raise DataError(f"prediction input lacks variables: {', '.join(missing)}")
    row = np.array([[float(values[v]) for v in model.spec.variables]])
    return float(predict_matrix(model, row, list(model.spec.variables))[0])


# ---------------------------------------------------------------------------
# Wald statistics

def wald_joint(model: FittedModel, variable: str) -> tuple[float, int, float, float, float]:
    """Joint chi-square for one variable's terms within the fitted model.

    Returns (chi2, dof, p, share of the total chi2 over all variables,
    chi2 of the nonlinear terms alone; 0 when the variable is linear).
    """
    if variable not in model.term_map:
        raise DataError(f"unknown model variable: {variable}")
    all_chi2 = {name: _term_chi2(model, info["columns"])
                for name, info in model.term_map.items()}
    total = sum(all_chi2.values())
    cols = model.term_map[variable]["columns"]
    nonlinear_cols = model.term_map[variable]["nonlinear"]
    chi2 = all_chi2[variable]
    dof = len(cols)
    p = float(chi2_dist.sf(chi2, dof)) if chi2 > 0 else 1.0
    proportion = chi2 / total if total > 0 else 0.0
    nl_chi2 = _term_chi2(model, nonlinear_cols) if nonlinear_cols else 0.0
    return chi2, dof, p, proportion, nl_chi2


def _term_chi2(model: FittedModel, cols) -> float:
    if not cols:
        return 0.0
    idx = np.asarray(cols, dtype=int)
    b = model.coefficients[idx]
    V = model.covariance[np.ix_(idx, idx)]
    try:
        solved = np.linalg.solve(V, b)
    except np.linalg.LinAlgError:
        raise FitError("singular covariance submatrix in joint test") from None
    return float(b @ solved)


# ---------------------------------------------------------------------------
# Serialization

FORMAT_VERSION = 1


def model_to_json(model: FittedModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "spec": {
            "variables": list(model.spec.variables),
            "dof": {k: int(v) for k, v in model.spec.dof.items()},
            "knots": {k: list(v) for k, v in model.spec.knots.items()},
            "outcome": model.spec.outcome,
            "seed": model.spec.seed,
        },
        "variables": list(model.spec.variables),
        "knots": {k: list(v) for k, v in model.spec.knots.items()},
        "coefficients": [float(b) for b in model.coefficients],
        "covariance": [float(v) for v in model.covariance.ravel()],
        "deviance": model.deviance,
        "n": model.n,
        "seed": model.spec.seed,
        "converged": model.converged,
        "separation": model.separation,
    }


def model_from_json(doc: dict) -> FittedModel:
    try:
        spec_doc = doc["spec"]
        spec = ModelSpec(
            variables=tuple(spec_doc["variables"]),
            dof={k: int(v) for k, v in spec_doc["dof"].items()},
            knots={k: tuple(v) for k, v in spec_doc["knots"].items()},
            outcome=spec_doc.get("outcome", "outcome"),
            seed=int(spec_doc.get("seed", 0)),
        )
        coefficients = np.asarray(doc["coefficients"], dtype=float)
        p = coefficients.size
        covariance = np.asarray(doc["covariance"], dtype=float).reshape(p, p)
        deviance = float(doc["deviance"])
        n = int(doc["n"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed model document: {exc}") from None
    term_map, column_names = _rebuild_terms(spec)
    return FittedModel(
        spec=spec, coefficients=coefficients, covariance=covariance,
        deviance=deviance, n=n, term_map=term_map, column_names=column_names,
        converged=bool(doc.get("converged", True)),
        separation=bool(doc.get("separation", False)))


def _rebuild_terms(spec: ModelSpec) -> tuple[dict[str, dict], list[str]]:
    term_map: dict[str, dict] = {}
    column_names = ["intercept"]
    cursor = 1
    for name in spec.variables:
        d = spec.dof.get(name, 1)
        cols = list(range(cursor, cursor + d))
        term_map[name] = {"columns": cols, "nonlinear": cols[1:] if d > 1 else []}
        column_names.append(name)
        column_names.extend(name + "'" * j for j in range(1, d))
        cursor += d
    return term_map, column_names


def save_model(model: FittedModel, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_json(model), sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def load_model(path: str | Path) -> FittedModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    return model_from_json(json.loads(path.read_text(encoding="utf-8")))
