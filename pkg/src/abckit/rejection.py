"""The basic rejection step: standardize statistics, rank simulations by
distance to the observed statistics, keep the closest.

Distances are Euclidean over statistics standardized by the mean and
standard deviation of the full simulation set; the observation is mapped
through the same transform.  Ties at the retention cutoff are broken by
row order, so results are deterministic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, TableFormatError
from .tableio import ObservedStats, SimulationTable

log = logging.getLogger(__name__)

__all__ = ["Standardizer", "RetainedSet", "prune_correlated", "retain"]


@dataclass(frozen=True)
class Standardizer:
    """Per-statistic center (mean) and scale (standard deviation)."""

    names: tuple[str, ...]
    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, matrix: np.ndarray, names) -> "Standardizer":
        matrix = np.asarray(matrix, dtype=float)
        return cls(tuple(names), matrix.mean(axis=0), matrix.std(axis=0, ddof=0))

    @classmethod
    def identity(cls, names) -> "Standardizer":
        k = len(names)
        return cls(tuple(names), np.zeros(k), np.ones(k))

    def transform(self, x: np.ndarray) -> np.ndarray:
        scale = np.where(self.scale > 0, self.scale, 1.0)
        return (np.asarray(x, dtype=float) - self.center) / scale

    def subset(self, names) -> "Standardizer":
        idx = [self.names.index(n) for n in names]
        return Standardizer(tuple(names), self.center[idx], self.scale[idx])


@dataclass(frozen=True)
class RetainedSet:
    """The retained simulations, ordered by ascending distance.

    Carries the pieces every downstream method needs: the source table,
    the matched statistic names, the standardizer that defined the
    distance, and the (standardized) observed vector.
    """

    table: SimulationTable
    indices: np.ndarray
    distances: np.ndarray
    stat_names: tuple[str, ...]
    standardizer: Standardizer
    obs: np.ndarray          # raw observed values for stat_names

    @property
    def epsilon(self) -> float:
        return float(self.distances[-1])

    @property
    def n(self) -> int:
        return len(self.indices)

    @property
    def params(self) -> np.ndarray:
        return self.table.params[self.indices]

    @property
    def param_names(self) -> tuple[str, ...]:
        return self.table.param_names

    @property
    def stats(self) -> np.ndarray:
        return self.table.stat_matrix(self.stat_names)[self.indices]

    @property
    def stats_std(self) -> np.ndarray:
        return self.standardizer.transform(self.stats)

    @property
    def obs_std(self) -> np.ndarray:
        return self.standardizer.transform(self.obs)


def prune_correlated(table: SimulationTable, max_cor: float):
    """Greedily drop statistics too correlated with an already kept one.

    Walks the statistic columns in order and drops any whose absolute
    Pearson correlation with a kept statistic exceeds ``max_cor``
    (``max_cor = 1.0`` keeps everything).  Returns ``(table, dropped)``.
    """
    if not 0 < max_cor <= 1:
        raise ValueError(f"max_cor must be in (0, 1], got {max_cor}")
    if table.n_rows < 2:
        raise TableFormatError("need at least 2 rows to measure correlations")
    stats = table.stats
    names = table.stat_names
    sd = stats.std(axis=0)
    centered = stats - stats.mean(axis=0)
    kept: list[int] = []
    dropped: list[str] = []
    for j in range(len(names)):
        too_close = False
        for k in kept:
            denom = sd[j] * sd[k] * table.n_rows
            if denom == 0:
                continue
            r = abs(float(centered[:, j] @ centered[:, k]) / denom)
            if r > max_cor:
                too_close = True
                break
        if too_close:
            dropped.append(names[j])
        else:
            kept.append(j)
    if dropped:
        log.warning("pruned %d correlated statistic(s): %s",
                    len(dropped), ", ".join(dropped))
        return table.with_stats([names[j] for j in kept]), dropped
    return table, dropped


def _resolve_count(n_rows: int, count, tol) -> int:
    if (count is None) == (tol is None):
        raise ValueError("give exactly one of count and tol")
    if tol is not None:
        if not 0 < tol <= 1:
            raise ValueError(f"tolerance fraction must be in (0, 1], got {tol}")
        count = math.ceil(tol * n_rows)
    count = int(count)
    if count <= 0:
        raise ValueError("retention count must be positive")
    if count > n_rows:
        raise ValueError(f"cannot retain {count} of {n_rows} rows")
    return count


def retain(table: SimulationTable, obs: ObservedStats, count=None, tol=None,
           standardize: bool = True, standardizer: Standardizer | None = None
           ) -> RetainedSet:
    """Retain the simulations closest to the observation.

    Statistics are matched by exact name (order-independent); every
    observed statistic must be present in the table.  Either an absolute
    ``count`` or a fraction ``tol`` (count = ceil(tol * rows)) must be
    given.  A pre-fitted ``standardizer`` may be supplied (e.g. pooled over
    several models); otherwise one is fitted to the full table.

    A zero-variance statistic is excluded from the distance with a warning
    when it matches the observed value exactly, and is a hard error when it
    contradicts it (the model cannot produce the data).
    """
    if table.n_rows == 0:
        raise NumericalError("cannot retain from an empty table")
    matched = [n for n in obs.names if n in table.stat_names]
    unmatched = [n for n in obs.names if n not in table.stat_names]
    if not matched:
        raise TableFormatError("no statistic names shared between table and "
                               "observation")
    if unmatched:
        raise TableFormatError(
            f"observed statistics missing from table: {', '.join(unmatched)}")
    count = _resolve_count(table.n_rows, count, tol)

    sims = table.stat_matrix(matched)
    obs_vec = obs.vector(matched)
    if standardizer is not None:
        std = standardizer.subset(matched)
    elif standardize:
        std = Standardizer.fit(sims, matched)
    else:
        std = Standardizer.identity(matched)

    keep = []
    for j, name in enumerate(matched):
        if std.scale[j] > 0:
            keep.append(j)
        elif np.isclose(sims[0, j], obs_vec[j]):
            log.warning("statistic %s is constant and matches the observation; "
                        "excluded from the distance", name)
        else:
            raise NumericalError(
                f"statistic {name} is constant at {sims[0, j]} but observed "
                f"{obs_vec[j]}; the model cannot reproduce the data")
    if not keep:
        raise NumericalError("no usable statistics left for the distance")
    matched = [matched[j] for j in keep]
    std = std.subset(matched)
    diff = std.transform(sims[:, keep]) - std.transform(obs_vec[keep])
    dist = np.sqrt((diff**2).sum(axis=1))

    order = np.argsort(dist, kind="stable")[:count]
    return RetainedSet(table, order, dist[order], tuple(matched), std,
                       obs_vec[keep])
