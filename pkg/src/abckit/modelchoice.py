"""Posterior model probabilities and Bayes factors from several simulation
tables that share the same statistics.

Two estimators are provided.  The rejection path pools all simulations,
retains the closest fraction, and counts which model they came from.  The
likelihood path retains per model, fits the local Gaussian likelihood, and
compares the resulting marginal densities.  Both standardize with a single
transform fitted to the pooled statistics so the models live on one scale.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import adjust
from .errors import TableFormatError
from .rejection import RetainedSet, Standardizer, retain
from .tableio import ObservedStats, OutputTag, SimulationTable, write_tagged

log = logging.getLogger(__name__)

__all__ = ["ModelChoiceResult", "rejection_model_choice", "glm_model_choice",
           "write_model_fit"]


@dataclass(frozen=True)
class ModelChoiceResult:
    """Per-model evidence and the derived probabilities.

    ``densities`` holds marginal densities (likelihood path) or per-model
    acceptance rates (rejection path); ``log_densities`` is the stable
    representation actually used for the probabilities and Bayes factors.
    """

    method: str
    densities: np.ndarray
    log_densities: np.ndarray
    probabilities: np.ndarray
    retained: tuple[RetainedSet, ...] = ()
    fits: tuple = ()

    @property
    def n_models(self) -> int:
        return len(self.probabilities)

    @property
    def bayes_factors(self) -> np.ndarray:
        """Matrix with entry (i, j) = evidence_i / evidence_j."""
        ld = self.log_densities
        with np.errstate(over="ignore"):
            return np.exp(ld[:, None] - ld[None, :])

    @property
    def best_model(self) -> int:
        return int(np.argmax(self.probabilities))


def _common_stats(tables) -> list[str]:
    if len(tables) < 2:
        raise ValueError("model choice needs at least two simulation tables")
    first = tables[0].stat_names
    for i, t in enumerate(tables[1:], start=1):
        if set(t.stat_names) != set(first):
            extra = set(t.stat_names) ^ set(first)
            raise TableFormatError(
                f"model {i} does not expose the same statistics as model 0 "
                f"(mismatch: {', '.join(sorted(extra))})")
    return list(first)


def _model_log_prior(n_models: int, prior_weights) -> np.ndarray:
    if prior_weights is None:
        return np.zeros(n_models)
    w = np.asarray(prior_weights, dtype=float)
    if w.size != n_models or np.any(w <= 0):
        raise ValueError("need one positive prior weight per model")
    return np.log(w / w.sum())


def _pooled_standardizer(tables, names) -> Standardizer:
    pooled = np.vstack([t.stat_matrix(names) for t in tables])
    return Standardizer.fit(pooled, names)


def rejection_model_choice(tables, obs: ObservedStats, tol=None, count=None,
                           prior_weights=None) -> ModelChoiceResult:
    """Model probabilities from the share of retained pooled simulations.

    All rows are pooled, standardized jointly, and the closest
    ``ceil(tol * total)`` (or ``count``) kept; each model's evidence is its
    acceptance rate, which corrects for unequal table sizes.
    """
    names = _common_stats(tables)
    sizes = np.array([t.n_rows for t in tables])
    if len(set(sizes)) > 1 and prior_weights is None:
        log.warning("tables have unequal sizes (%s); correcting acceptance "
                    "rates accordingly", ", ".join(map(str, sizes)))
    pooled_values = np.vstack([t.stat_matrix(names) for t in tables])
    pooled = SimulationTable(tuple(names), pooled_values, (),
                             tuple(range(len(names))))
    origin = np.repeat(np.arange(len(tables)), sizes)

    kept = retain(pooled, obs, count=count, tol=tol)
    counts = np.bincount(origin[kept.indices], minlength=len(tables))
    rates = counts / sizes
    log_prior = _model_log_prior(len(tables), prior_weights)
    with np.errstate(divide="ignore"):
        log_rates = np.where(rates > 0, np.log(np.where(rates > 0, rates, 1.0)),
                             -np.inf)
    log_post = log_rates + log_prior
    if np.all(np.isinf(log_post)):
        raise ValueError("no simulations retained from any model")
    probs = np.exp(log_post - logsumexp(log_post[np.isfinite(log_post)]))
    probs = np.where(np.isfinite(log_post), probs, 0.0)
    return ModelChoiceResult("rejection", rates, log_rates, probs)


def glm_model_choice(tables, obs: ObservedStats, count,
                     dirac_peak_width: float = adjust.DEFAULT_PEAK_WIDTH,
                     prior_weights=None) -> ModelChoiceResult:
    """Model probabilities from the fitted local-likelihood marginal
    densities, one model at a time, on the pooled standardization."""
    names = _common_stats(tables)
    pooled_std = _pooled_standardizer(tables, names)
    retained, fits, log_dens = [], [], []
    for t in tables:
        r = retain(t, obs, count=count, standardizer=pooled_std)
        fit = adjust.glm_fit(r)
        log_dens.append(adjust.glm_log_marginal_density(
            fit, r, dirac_peak_width=dirac_peak_width))
        retained.append(r)
        fits.append(fit)
    log_dens = np.array(log_dens)
    log_post = log_dens + _model_log_prior(len(tables), prior_weights)
    probs = np.exp(log_post - logsumexp(log_post))
    with np.errstate(over="ignore"):
        dens = np.array([math.exp(v) if v < 700 else math.inf for v in log_dens])
    return ModelChoiceResult("glm", dens, log_dens, probs,
                             tuple(retained), tuple(fits))


def write_model_fit(result: ModelChoiceResult, prefix: str, obs_index=0,
                    directory="."):
    """Write the model-fit file: one row per model with its marginal
    density, posterior probability, and Bayes factor against model 0."""
    bf0 = result.bayes_factors[:, 0]
    header = ["model", "marginalDensity", "posteriorProbability", "BFvsModel0"]
    rows = [[m, result.densities[m], result.probabilities[m], bf0[m]]
            for m in range(result.n_models)]
    return write_tagged(prefix, OutputTag.MODEL_FIT, (header, rows),
                        obs_index=obs_index, directory=directory)
