"""Summary-statistic engineering.

* ``boost`` augments a table with all squares and pairwise products of its
  statistics, exposing nonlinear information to the linear methods.
* Box-Cox normalization per statistic: values are first mapped affinely
  into [1, 2] using the observed range, then power-transformed with a
  profile-likelihood lambda, then standardized.
* Partial least squares (NIPALS, multi-response) finds linear combinations
  of the normalized statistics that covary with the parameters; the
  component count is chosen from a cross-validated prediction-error curve.
* A definition file stores, per statistic, the six Box-Cox numbers
  (max, min, lambda, geometric mean, mean, sd) followed by one loading per
  component; ``transform`` applies such a definition to tables or observed
  statistics.
* A greedy search ranks statistic subsets by their power to discriminate
  between models, measured by model-choice cross-validation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .errors import NumericalError, TableFormatError
from .tableio import ObservedStats, SimulationTable, format_value
from .validation import ModelChoiceSettings, model_choice_validate

log = logging.getLogger(__name__)

__all__ = [
    "BoxCoxSpec", "LinearCombDef", "SubsetResult", "boost", "boost_observed",
    "fit_boxcox", "fit_pls", "transform", "greedy_search", "subset_power",
]

LAMBDA_GRID = np.round(np.arange(-2.0, 2.0 + 1e-9, 0.1), 10)
LAMBDA_SNAP = 0.05
COMPONENT_PREFIX = "LinearCombination"


# ---------------------------------------------------------------------------
# boosting


def _product_names(names):
    out = []
    for a in range(len(names)):
        for b in range(a, len(names)):
            out.append(f"{names[a]}_X_{names[b]}")
    return out


def boost(table: SimulationTable) -> SimulationTable:
    """Append all squares and pairwise products of the statistics."""
    names = table.stat_names
    if not names:
        raise TableFormatError("table has no statistics to boost")
    stats = table.stats
    cols = [stats[:, a] * stats[:, b]
            for a in range(len(names)) for b in range(a, len(names))]
    new_names = table.names + tuple(_product_names(names))
    values = np.column_stack([table.values] + cols)
    stat_idx = table.stat_idx + tuple(range(len(table.names), len(new_names)))
    return SimulationTable(new_names, values, table.param_idx, stat_idx)


def boost_observed(obs: ObservedStats) -> ObservedStats:
    names = obs.names
    v = obs.values
    prods = [v[a] * v[b] for a in range(len(names)) for b in range(a, len(names))]
    return ObservedStats(names + tuple(_product_names(names)),
                         np.concatenate([v, prods]))


# ---------------------------------------------------------------------------
# Box-Cox normalization


@dataclass(frozen=True)
class BoxCoxSpec:
    """Normalization of one statistic: shift into [1, 2] by the observed
    range, power-transform, standardize."""

    vmax: float
    vmin: float
    lamb: float
    gm: float
    mean: float
    sd: float

    def shift(self, x, name="statistic"):
        span = self.vmax - self.vmin
        if span <= 0:
            raise NumericalError(f"{name}: degenerate range in the transform")
        y = 1.0 + (np.asarray(x, dtype=float) - self.vmin) / span
        bad = np.nonzero(y <= 0)[0]
        if bad.size:
            raise TableFormatError(
                f"{name}: value {np.asarray(x).ravel()[bad[0]]} at row "
                f"{bad[0] + 1} outside the transform domain")
        return y

    def apply(self, x, name="statistic"):
        y = self.shift(x, name)
        if self.lamb == 0:
            bc = np.log(y) * self.gm
        else:
            bc = (y**self.lamb - 1.0) / (self.lamb * self.gm**(self.lamb - 1.0))
        return (bc - self.mean) / self.sd


def fit_boxcox(values, name="statistic") -> BoxCoxSpec:
    """Fit the transform to observed values: lambda maximizes the normal
    profile log-likelihood on a grid over [-2, 2] (snapped to 0, the log
    transform, when small)."""
    x = np.asarray(values, dtype=float)
    vmin, vmax = float(x.min()), float(x.max())
    if vmax <= vmin:
        raise NumericalError(f"{name}: constant statistic, cannot transform")
    y = 1.0 + (x - vmin) / (vmax - vmin)
    lls = [sps.boxcox_llf(l, y) for l in LAMBDA_GRID]
    lamb = float(LAMBDA_GRID[int(np.argmax(lls))])
    if abs(lamb) < LAMBDA_SNAP:
        lamb = 0.0
    gm = float(np.exp(np.log(y).mean()))
    if lamb == 0:
        bc = np.log(y) * gm
    else:
        bc = (y**lamb - 1.0) / (lamb * gm**(lamb - 1.0))
    sd = float(bc.std(ddof=0))
    if sd == 0:
        raise NumericalError(f"{name}: constant statistic after transform")
    return BoxCoxSpec(vmax, vmin, lamb, gm, float(bc.mean()), sd)


# ---------------------------------------------------------------------------
# linear-combination definitions


@dataclass(frozen=True)
class LinearCombDef:
    """Per-statistic Box-Cox numbers plus a loading matrix
    (statistics x components); row order defines the file order."""

    stat_names: tuple[str, ...]
    boxcox: tuple[BoxCoxSpec, ...]
    loadings: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "loadings",
                           np.atleast_2d(np.asarray(self.loadings, dtype=float)))
        if self.loadings.shape[0] != len(self.stat_names):
            raise TableFormatError("one loading row per statistic required")
        if self.loadings.shape[1] < 1:
            raise TableFormatError("need at least one component")

    @property
    def n_components(self) -> int:
        return self.loadings.shape[1]

    def normalized(self, stats: np.ndarray, apply_boxcox: bool = True) -> np.ndarray:
        stats = np.atleast_2d(stats)
        if not apply_boxcox:
            return stats
        cols = [bc.apply(stats[:, j], self.stat_names[j])
                for j, bc in enumerate(self.boxcox)]
        return np.column_stack(cols)

    def scores(self, stats: np.ndarray, n_components=None,
               apply_boxcox: bool = True) -> np.ndarray:
        k = self.n_components if n_components is None else int(n_components)
        if not 1 <= k <= self.n_components:
            raise ValueError(f"have {self.n_components} components, asked for {k}")
        return self.normalized(stats, apply_boxcox) @ self.loadings[:, :k]

    def save(self, path) -> Path:
        path = Path(path)
        with open(path, "w") as fh:
            for j, name in enumerate(self.stat_names):
                bc = self.boxcox[j]
                nums = [bc.vmax, bc.vmin, bc.lamb, bc.gm, bc.mean, bc.sd,
                        *self.loadings[j]]
                fh.write(" ".join([name] + [format(v, ".12g") for v in nums]) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "LinearCombDef":
        names, specs, rows = [], [], []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) < 8:
                raise TableFormatError(
                    "definition rows need a name, six transform numbers and "
                    "at least one loading", path=path, line=lineno)
            try:
                nums = [float(v) for v in fields[1:]]
            except ValueError:
                raise TableFormatError("non-numeric field", path=path,
                                       line=lineno) from None
            names.append(fields[0])
            specs.append(BoxCoxSpec(*nums[:6]))
            rows.append(nums[6:])
        if not rows:
            raise TableFormatError("empty definition file", path=path)
        k = len(rows[0])
        if any(len(r) != k for r in rows):
            raise TableFormatError("inconsistent component counts", path=path)
        return cls(tuple(names), tuple(specs), np.array(rows))


def transform(data, comb: LinearCombDef, n_components=None,
              apply_boxcox: bool = True):
    """Apply a linear-combination definition.

    Columns named in the definition are replaced by
    ``LinearCombination_1..k``; every other column (parameters included)
    passes through untouched.  Works on simulation tables or observed
    statistics; the map is row-wise, so it commutes with row selection.
    """
    k = comb.n_components if n_components is None else int(n_components)
    comp_names = [f"{COMPONENT_PREFIX}_{i + 1}" for i in range(k)]
    if isinstance(data, ObservedStats):
        lookup = dict(zip(data.names, data.values))
        missing = [n for n in comb.stat_names if n not in lookup]
        if missing:
            raise TableFormatError(
                f"statistics missing from observation: {', '.join(missing)}")
        vec = np.array([[lookup[n] for n in comb.stat_names]])
        scores = comb.scores(vec, k, apply_boxcox)[0]
        passthrough = [(n, v) for n, v in zip(data.names, data.values)
                       if n not in set(comb.stat_names)]
        names = [n for n, _ in passthrough] + comp_names
        values = [v for _, v in passthrough] + list(scores)
        return ObservedStats(tuple(names), np.array(values))

    table: SimulationTable = data
    present = set(table.names)
    missing = [n for n in comb.stat_names if n not in present]
    if missing:
        raise TableFormatError(
            f"statistics missing from table: {', '.join(missing)}")
    col_of = {n: i for i, n in enumerate(table.names)}
    stats = table.values[:, [col_of[n] for n in comb.stat_names]]
    scores = comb.scores(stats, k, apply_boxcox)
    used = set(comb.stat_names)
    keep = [i for i, n in enumerate(table.names) if n not in used]
    names = tuple(table.names[i] for i in keep) + tuple(comp_names)
    values = np.column_stack([table.values[:, keep], scores])
    old_pos = {i: j for j, i in enumerate(keep)}
    param_idx = tuple(old_pos[i] for i in table.param_idx if i in old_pos)
    stat_idx = tuple(old_pos[i] for i in table.stat_idx if i in old_pos)
    stat_idx += tuple(range(len(keep), len(names)))
    return SimulationTable(names, values, param_idx, stat_idx)


# ---------------------------------------------------------------------------
# partial least squares (NIPALS)


def _nipals(x: np.ndarray, y: np.ndarray, k: int, tol=1e-12, max_iter=1000):
    """Multi-response NIPALS with regression deflation.

    Returns weights W, x-loadings P, y-loadings Q and scores T; the
    projection reproducing the scores from centered data is
    ``R = W (P'W)^-1``.
    """
    x = x.copy()
    y = y.copy()
    n, m = x.shape
    p = y.shape[1]
    w_all = np.zeros((m, k))
    p_all = np.zeros((m, k))
    q_all = np.zeros((p, k))
    t_all = np.zeros((n, k))
    for c in range(k):
        yvar = y.var(axis=0)
        u = y[:, int(np.argmax(yvar))].copy()
        if not u.any():
            u = x[:, int(np.argmax(x.var(axis=0)))].copy()
        w = np.zeros(m)
        t = np.zeros(n)
        for _ in range(max_iter):
            w = x.T @ u
            nw = np.linalg.norm(w)
            if nw == 0:
                raise NumericalError("statistics fully deflated before "
                                     f"component {c + 1}")
            w /= nw
            t_new = x @ w
            q = y.T @ t_new / (t_new @ t_new)
            if np.linalg.norm(q) > 0:
                u = y @ q / (q @ q)
            if np.linalg.norm(t_new - t) <= tol * max(np.linalg.norm(t_new), 1e-300):
                t = t_new
                break
            t = t_new
        pv = x.T @ t / (t @ t)
        q = y.T @ t / (t @ t)
        x -= np.outer(t, pv)
        y -= np.outer(t, q)
        w_all[:, c] = w
        p_all[:, c] = pv
        q_all[:, c] = q
        t_all[:, c] = t
    return w_all, p_all, q_all, t_all


def _rotation(w: np.ndarray, p: np.ndarray) -> np.ndarray:
    return w @ np.linalg.inv(p.T @ w)


def _fix_signs(r, t, q):
    for c in range(r.shape[1]):
        j = int(np.argmax(np.abs(r[:, c])))
        if r[j, c] < 0:
            r[:, c] *= -1
            t[:, c] *= -1
            q[:, c] *= -1
    return r, t, q


@dataclass(frozen=True)
class PlsResult:
    definition: LinearCombDef
    scores: np.ndarray          # training scores, one column per component
    rmsep: np.ndarray           # (k_max, n_params), original parameter scale
    recommended: int
    param_names: tuple[str, ...]


def fit_pls(table: SimulationTable, k_max: int, cv_folds: int = 10,
            rng=None) -> PlsResult:
    """Fit Box-Cox plus PLS components to a simulation table.

    Statistics are Box-Cox normalized first, then NIPALS extracts up to
    ``k_max`` components; the root-mean-square error of prediction per
    parameter and component count comes from ``cv_folds``-fold
    cross-validation.  The recommended count is the smallest whose error is
    within 1% of the curve minimum for every parameter.
    """
    rng = np.random.default_rng(rng)
    n = table.n_rows
    if n <= k_max + cv_folds:
        raise ValueError(f"need more than {k_max + cv_folds} rows, have {n}")
    if k_max > len(table.stat_names):
        raise ValueError("more components than statistics requested")
    specs = tuple(fit_boxcox(table.stats[:, j], name)
                  for j, name in enumerate(table.stat_names))
    z = np.column_stack([specs[j].apply(table.stats[:, j], name)
                         for j, name in enumerate(table.stat_names)])
    y_raw = table.params
    y_mean, y_sd = y_raw.mean(axis=0), y_raw.std(axis=0, ddof=0)
    if np.any(y_sd == 0):
        raise NumericalError("constant parameter; nothing to predict")
    y = (y_raw - y_mean) / y_sd

    w, p, q, t = _nipals(z - z.mean(axis=0), y - y.mean(axis=0), k_max)
    r = _rotation(w, p)
    r, t, q = _fix_signs(r, t, q)
    definition = LinearCombDef(table.stat_names, specs, r)

    folds = np.array_split(rng.permutation(n), cv_folds)
    sq_err = np.zeros((k_max, y.shape[1]))
    for fold in folds:
        mask = np.ones(n, dtype=bool)
        mask[fold] = False
        zc = z[mask] - z[mask].mean(axis=0)
        yc = y[mask] - y[mask].mean(axis=0)
        wf, pf, qf, _ = _nipals(zc, yc, k_max)
        rf = _rotation(wf, pf)
        z_test = z[fold] - z[mask].mean(axis=0)
        for k in range(1, k_max + 1):
            beta = rf[:, :k] @ qf[:, :k].T
            pred = y[mask].mean(axis=0) + z_test @ beta
            sq_err[k - 1] += ((y[fold] - pred) ** 2).sum(axis=0)
    rmsep = np.sqrt(sq_err / n) * y_sd

    best = rmsep.min(axis=0)
    ok = np.all(rmsep <= 1.01 * best, axis=1)
    recommended = int(np.nonzero(ok)[0][0]) + 1
    return PlsResult(definition, t, rmsep, recommended, table.param_names)


# ---------------------------------------------------------------------------
# greedy statistic search for model choice


@dataclass(frozen=True)
class SubsetResult:
    names: tuple[str, ...]
    power: float
    max_pair_cor: float
    on_path: bool

    @property
    def size(self) -> int:
        return len(self.names)


def subset_power(tables, names, n_val: int,
                 settings: ModelChoiceSettings | None = None, rng=None) -> float:
    """Discriminating power of a statistic subset: overall accuracy of
    model-choice cross-validation restricted to those statistics."""
    restricted = [t.with_stats(names) for t in tables]
    cm, _ = model_choice_validate(restricted, n_val, settings, rng)
    return cm.overall_accuracy


def _abs_correlations(tables, names):
    pooled = np.vstack([t.stat_matrix(names) for t in tables])
    sd = pooled.std(axis=0)
    sd[sd == 0] = 1.0
    c = np.corrcoef(pooled, rowvar=False)
    return np.abs(np.nan_to_num(np.atleast_2d(c)))


def greedy_search(tables, n_val: int, settings: ModelChoiceSettings | None = None,
                  max_cor: float = 1.0, rng=None, min_gain: float = 0.005
                  ) -> list[SubsetResult]:
    """Greedy forward search for the statistic subset that best separates
    the models.

    Every single statistic is scored first; statistics are then added to
    the best subset one at a time, skipping candidates whose absolute
    correlation with an included statistic exceeds ``max_cor``, until the
    best addition improves the power by less than ``min_gain``.  Every
    evaluated subset is returned, ranked by power and then by size (the
    smallest of equally powerful sets first).
    """
    rng = np.random.default_rng(rng)
    names = list(tables[0].stat_names)
    corr = _abs_correlations(tables, names)
    idx_of = {n: i for i, n in enumerate(names)}

    def pair_cor(subset):
        if len(subset) < 2:
            return 0.0
        ids = [idx_of[n] for n in subset]
        return float(max(corr[a, b] for i, a in enumerate(ids)
                         for b in ids[i + 1:]))

    evaluated: dict[tuple[str, ...], float] = {}

    def power(subset):
        key = tuple(subset)
        if key not in evaluated:
            evaluated[key] = subset_power(tables, subset, n_val, settings, rng)
        return evaluated[key]

    on_path: set[tuple[str, ...]] = set()
    singles = sorted(names, key=lambda n: -power((n,)))
    current = (singles[0],)
    on_path.add(current)
    while True:
        candidates = []
        for n in names:
            if n in current:
                continue
            if any(corr[idx_of[n], idx_of[m]] > max_cor for m in current):
                continue
            candidates.append(tuple(list(current) + [n]))
        if not candidates:
            break
        best = max(candidates, key=power)
        if power(best) - power(current) < min_gain:
            break
        current = best
        on_path.add(current)

    results = [SubsetResult(subset, pw, pair_cor(subset), subset in on_path)
               for subset, pw in evaluated.items()]
    results.sort(key=lambda r: (-r.power, r.size))
    return results


def greedy_search_table(results: list[SubsetResult]):
    header = ["rank", "power", "largestPairwiseCorrelation", "nStatistics",
              "statistics"]
    rows = [[rank, r.power, r.max_pair_cor, r.size, ",".join(r.names)]
            for rank, r in enumerate(results, start=1)]
    return header, rows
