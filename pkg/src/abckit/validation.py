"""Diagnostics for estimations and model choice.

Model fit is probed with two statistics of the observation relative to the
retained cloud: its marginal density under the fitted likelihood model,
and its Tukey (halfspace) depth, each turned into a P-value by ranking the
observation among retained simulations.  Estimation accuracy and bias are
probed by leave-one-out cross-validation on pseudo-observed data sets,
recording point estimates, the posterior quantile of the true value, and
the smallest credible level containing it.  Model choice is validated the
same way, yielding a confusion matrix and the raw posterior probabilities
used for calibration curves.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from . import adjust
from .errors import AbckitError
from .modelchoice import ModelChoiceResult, glm_model_choice, rejection_model_choice
from .rejection import RetainedSet, retain
from .tableio import ObservedStats, SimulationTable

log = logging.getLogger(__name__)

__all__ = [
    "FitPValues", "ValidationRow", "ConfusionMatrix", "GlmSettings",
    "ModelChoiceSettings", "marginal_density_pvalue", "tukey_depth",
    "tukey_pvalue", "fit_pvalues", "cross_validate", "coverage_tests",
    "model_choice_validate", "calibration_curve",
]


# ---------------------------------------------------------------------------
# model-fit P-values


@dataclass(frozen=True)
class FitPValues:
    marginal_density: float
    log_marginal_density: float
    marginal_pvalue: float
    tukey_depth: float
    tukey_pvalue: float
    n_checked: int


def marginal_density_pvalue(fit, retained: RetainedSet, obs=None,
                            n_check=None,
                            dirac_peak_width=adjust.DEFAULT_PEAK_WIDTH):
    """Fraction of retained simulations whose marginal density is at most
    the observation's.  Returns ``(pvalue, log_density_obs)``."""
    n_check = retained.n if n_check is None else int(n_check)
    if n_check > retained.n:
        raise ValueError(f"cannot check {n_check} of {retained.n} retained rows")
    obs_ld = adjust.glm_log_marginal_density(fit, retained, obs,
                                             dirac_peak_width)
    sim_ld = adjust.glm_log_marginal_densities(
        fit, retained, retained.stats[:n_check], dirac_peak_width)
    return float((sim_ld <= obs_ld).mean()), obs_ld


def _unit_directions(dim: int, n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=(n, dim))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return v / norms


def tukey_depth(points: np.ndarray, queries: np.ndarray,
                directions: np.ndarray) -> np.ndarray:
    """Random-projection halfspace depth of each query in the point cloud.

    For every direction the depth contribution is the smaller of the
    fractions of points projecting at or below / at or above the query; the
    depth is the minimum over directions.  Points of the cloud itself
    therefore have depth >= 1/n, while a query outside the convex hull has
    depth 0.  Adding directions can only lower the value (it is an upper
    bound on the exact depth).
    """
    points = np.atleast_2d(points)
    queries = np.atleast_2d(queries)
    n = len(points)
    proj = points @ directions.T                  # (n, k)
    qproj = queries @ directions.T                # (m, k)
    depth = np.full(len(queries), np.inf)
    for j in range(directions.shape[0]):
        col = np.sort(proj[:, j])
        le = np.searchsorted(col, qproj[:, j], side="right")
        ge = n - np.searchsorted(col, qproj[:, j], side="left")
        depth = np.minimum(depth, np.minimum(le, ge))
    return np.minimum(depth / n, 0.5)


def tukey_pvalue(points: np.ndarray, obs: np.ndarray, n_check=None,
                 n_projections: int = 1000, rng=None):
    """Fraction of checked cloud points with depth at most the
    observation's.  Returns ``(pvalue, depth_obs)``."""
    rng = np.random.default_rng(rng)
    points = np.atleast_2d(points)
    if len(points) < 10:
        raise ValueError("need at least 10 points for a depth P-value")
    n_check = len(points) if n_check is None else int(n_check)
    dirs = _unit_directions(points.shape[1], n_projections, rng)
    obs_depth = float(tukey_depth(points, np.atleast_2d(obs), dirs)[0])
    sim_depth = tukey_depth(points, points[:n_check], dirs)
    return float((sim_depth <= obs_depth).mean()), obs_depth


def fit_pvalues(fit, retained: RetainedSet, obs=None, n_marginal=None,
                n_tukey=None, n_projections: int = 1000, rng=None,
                dirac_peak_width=adjust.DEFAULT_PEAK_WIDTH) -> FitPValues:
    """Both model-fit tests against one retained set."""
    marg_p, obs_ld = marginal_density_pvalue(fit, retained, obs, n_marginal,
                                             dirac_peak_width)
    n_tukey = retained.n if n_tukey is None else int(n_tukey)
    tuk_p, depth = tukey_pvalue(retained.stats_std,
                                _obs_std_vector(retained, obs),
                                n_tukey, n_projections, rng)
    return FitPValues(math.exp(obs_ld) if obs_ld < 700 else math.inf,
                      obs_ld, marg_p, depth, tuk_p,
                      max(n_tukey, n_marginal or retained.n))


def _obs_std_vector(retained: RetainedSet, obs):
    if obs is None:
        return retained.obs_std
    if isinstance(obs, ObservedStats):
        return retained.standardizer.transform(obs.vector(retained.stat_names))
    return retained.standardizer.transform(np.asarray(obs, dtype=float))


# ---------------------------------------------------------------------------
# cross-validation of parameter estimates


@dataclass(frozen=True)
class GlmSettings:
    """Settings shared by estimation runs (retention size and posterior
    grid resolution)."""

    num_retained: int = 1000
    n_points: int = adjust.DEFAULT_GRID_POINTS
    dirac_peak_width: float = adjust.DEFAULT_PEAK_WIDTH
    standardize: bool = True


@dataclass
class ValidationRow:
    truth: dict[str, float]
    mode: dict[str, float] = field(default_factory=dict)
    mean: dict[str, float] = field(default_factory=dict)
    median: dict[str, float] = field(default_factory=dict)
    quantile: dict[str, float] = field(default_factory=dict)
    hdi: dict[str, float] = field(default_factory=dict)
    error: str | None = None


def _glm_estimator(table: SimulationTable, pseudo: ObservedStats,
                   settings: GlmSettings) -> adjust.GridPosterior:
    r = retain(table, pseudo, count=settings.num_retained,
               standardize=settings.standardize)
    fit = adjust.glm_fit(r)
    post, _ = adjust.glm_posterior(fit, r, n_points=settings.n_points,
                                   dirac_peak_width=settings.dirac_peak_width)
    return post


def cross_validate(table: SimulationTable, mode: str, n_val: int,
                   settings: GlmSettings | None = None, rng=None,
                   obs: ObservedStats | None = None, estimator=None
                   ) -> list[ValidationRow]:
    """Leave-one-out validation on ``n_val`` pseudo-observed simulations.

    ``mode`` is ``"random"`` (pseudo-observations drawn from the whole
    table, i.e. from the prior) or ``"retained"`` (drawn among the
    simulations retained for the actual observation, which must then be
    given).  Each chosen row is removed, the posterior is estimated from
    the remainder, and the point estimates plus the posterior quantile and
    smallest credible level of the true value are recorded.  Estimator
    failures are recorded per row rather than aborting the run.
    """
    rng = np.random.default_rng(rng)
    settings = settings or GlmSettings()
    estimator = estimator or (lambda t, p: _glm_estimator(t, p, settings))
    if n_val >= table.n_rows:
        raise ValueError(f"n_val must be below the table size {table.n_rows}")
    if mode == "random":
        pool = np.arange(table.n_rows)
    elif mode == "retained":
        if obs is None:
            raise ValueError("retained validation needs the actual observation")
        kept = retain(table, obs, count=settings.num_retained,
                      standardize=settings.standardize)
        pool = np.asarray(kept.indices)
    else:
        raise ValueError(f"unknown validation mode {mode!r}")
    chosen = rng.choice(pool, size=min(n_val, len(pool)), replace=False)

    pnames = table.param_names
    snames = table.stat_names
    rows: list[ValidationRow] = []
    for i in chosen:
        truth = dict(zip(pnames, table.params[i]))
        pseudo = ObservedStats(snames, table.stats[i])
        row = ValidationRow(truth)
        try:
            post = estimator(table.drop_row(int(i)), pseudo)
            for name in pnames:
                ch = post.characteristics(name)
                row.mode[name] = ch.mode
                row.mean[name] = ch.mean
                row.median[name] = ch.median
                row.quantile[name] = post.quantile_of(name, truth[name])
                row.hdi[name] = post.hdi_level_of(name, truth[name])
        except AbckitError as exc:
            row.error = str(exc)
            log.warning("validation replicate failed: %s", exc)
        rows.append(row)
    return rows


def validation_table(rows: list[ValidationRow], param_names):
    """Arrange validation rows for the tagged output file."""
    header = []
    for p in param_names:
        header += [p, f"{p}_mode", f"{p}_mean", f"{p}_median",
                   f"{p}_quantile", f"{p}_HDI"]
    out = []
    for row in rows:
        if row.error is not None:
            continue
        rec = []
        for p in param_names:
            rec += [row.truth[p], row.mode[p], row.mean[p], row.median[p],
                    row.quantile[p], row.hdi[p]]
        out.append(rec)
    return header, out


def coverage_tests(rows: list[ValidationRow]) -> dict[str, dict[str, float]]:
    """Kolmogorov-Smirnov uniformity tests of the posterior-quantile and
    credible-level columns, per parameter.

    Under unbiased posteriors both are uniform on [0, 1].
    """
    ok = [r for r in rows if r.error is None]
    if len(ok) < 20:
        raise ValueError(f"need at least 20 successful rows, have {len(ok)}")
    out = {}
    for name in ok[0].truth:
        q = np.array([r.quantile[name] for r in ok])
        h = np.array([r.hdi[name] for r in ok])
        ks_q = sps.kstest(q, "uniform")
        ks_h = sps.kstest(h, "uniform")
        out[name] = {"quantile_ks": float(ks_q.statistic),
                     "quantile_p": float(ks_q.pvalue),
                     "hdi_ks": float(ks_h.statistic),
                     "hdi_p": float(ks_h.pvalue)}
    return out


# ---------------------------------------------------------------------------
# model-choice validation


@dataclass(frozen=True)
class ModelChoiceSettings:
    method: str = "glm"            # glm | rejection
    num_retained: int = 1000
    tol: float | None = None
    dirac_peak_width: float = adjust.DEFAULT_PEAK_WIDTH


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray            # [true, chosen]

    @property
    def per_model_accuracy(self) -> np.ndarray:
        totals = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore"):
            return np.where(totals > 0, np.diag(self.counts) / totals, np.nan)

    @property
    def overall_accuracy(self) -> float:
        return float(np.trace(self.counts) / self.counts.sum())


def _choose(tables, pseudo, settings: ModelChoiceSettings) -> ModelChoiceResult:
    if settings.method == "rejection":
        if settings.tol is not None:
            return rejection_model_choice(tables, pseudo, tol=settings.tol)
        return rejection_model_choice(tables, pseudo, count=settings.num_retained)
    return glm_model_choice(tables, pseudo, settings.num_retained,
                            settings.dirac_peak_width)


def model_choice_validate(tables, n_val: int,
                          settings: ModelChoiceSettings | None = None,
                          rng=None):
    """Cross-validate model choice with ``n_val`` pseudo-observations drawn
    from each model.

    Each drawn simulation is removed from its source table, model choice is
    run on the remainder, and the preferred model recorded.  Returns the
    confusion matrix and the raw rows ``(true_model, probabilities)`` for
    calibration analysis.
    """
    rng = np.random.default_rng(rng)
    settings = settings or ModelChoiceSettings()
    n_models = len(tables)
    if n_val > min(t.n_rows for t in tables):
        raise ValueError("n_val exceeds the smallest table")
    counts = np.zeros((n_models, n_models), dtype=int)
    raw: list[tuple[int, np.ndarray]] = []
    for m, table in enumerate(tables):
        chosen = rng.choice(table.n_rows, size=n_val, replace=False)
        for i in chosen:
            pseudo = ObservedStats(table.stat_names, table.stats[i])
            trimmed = list(tables)
            trimmed[m] = table.drop_row(int(i))
            result = _choose(trimmed, pseudo, settings)
            counts[m, result.best_model] += 1
            raw.append((m, result.probabilities))
    return ConfusionMatrix(counts), raw


def calibration_curve(raw, focal_model: int = 0, n_bins: int = 10):
    """Bin pseudo-observations by their posterior probability for the focal
    model and compare with the empirical frequency of that model.

    Returns one row per bin: (bin_low, bin_high, mean_probability,
    empirical_probability, count); empty bins carry count 0 and NaN.
    """
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    p = np.array([probs[focal_model] for _, probs in raw])
    true = np.array([t for t, _ in raw])
    which = np.clip(np.digitize(p, edges[1:-1]), 0, n_bins - 1)
    out = []
    for b in range(n_bins):
        mask = which == b
        k = int(mask.sum())
        if k == 0:
            out.append((edges[b], edges[b + 1], math.nan, math.nan, 0))
        else:
            out.append((edges[b], edges[b + 1], float(p[mask].mean()),
                        float((true[mask] == focal_model).mean()), k))
    return out


def confusion_table(cm: ConfusionMatrix):
    n = cm.counts.shape[0]
    header = ["trueModel"] + [f"chosen{j}" for j in range(n)] + \
             [f"fraction{j}" for j in range(n)] + ["accuracy"]
    rows = []
    totals = cm.counts.sum(axis=1)
    for m in range(n):
        frac = cm.counts[m] / totals[m] if totals[m] else np.zeros(n)
        rows.append([m, *cm.counts[m].tolist(), *frac.tolist(),
                     cm.per_model_accuracy[m]])
    return header, rows


def raw_choice_table(raw):
    n_models = len(raw[0][1]) if raw else 0
    header = ["trueModel"] + [f"pABCmodel{j}" for j in range(n_models)]
    rows = [[t, *probs.tolist()] for t, probs in raw]
    return header, rows
