"""Post-sampling adjustments of retained simulations.

Two families are provided:

* weighted local-linear regression (and a ridge variant) that projects the
  retained parameter values onto the observed statistics, giving a weighted
  posterior sample;
* a local Gaussian likelihood model ``S = c + B theta + eps``,
  ``eps ~ N(0, Sigma)``, fitted to the retained (standardized) statistics
  by least squares.  Combined with a prior represented as a Gaussian
  mixture with one narrow peak per retained parameter vector, everything
  downstream is closed form: grid posteriors, joint posteriors with
  credible levels, and the model marginal density used for model choice.

Parameters are mapped linearly onto [0, 1] internally (using the retained
range) for numerical stability; all reported quantities are on the
original scale.  The peak width of the prior mixture is a fraction of the
retained range per parameter (default 0.01).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg as sla
from scipy.special import logsumexp
from scipy.stats import gaussian_kde

from .errors import CollinearityError, NumericalError
from .rejection import RetainedSet
from .tableio import ObservedStats

log = logging.getLogger(__name__)

__all__ = [
    "AdjustedSample", "GlmFit", "GridPosterior", "JointGridPosterior",
    "PosteriorCharacteristics", "loclinear_adjust", "ridge_adjust",
    "glm_fit", "glm_posterior", "joint_posterior", "glm_marginal_density",
    "glm_log_marginal_density", "weighted_density",
]

DEFAULT_PEAK_WIDTH = 0.01
DEFAULT_GRID_POINTS = 100
GRID_PADDING = 0.1
QUANTILE_LEVELS = (0.025, 0.25, 0.5, 0.75, 0.975)


# ---------------------------------------------------------------------------
# local-linear and ridge adjustment


@dataclass(frozen=True)
class AdjustedSample:
    """Projected parameter values with their regression weights."""

    param_names: tuple[str, ...]
    adjusted: np.ndarray      # (n, p)
    weights: np.ndarray       # nonnegative, sums to 1
    unadjusted: np.ndarray    # (n, p)


def _epanechnikov(distances: np.ndarray, epsilon: float) -> np.ndarray:
    if epsilon == 0:
        return np.ones_like(distances)
    w = 1.0 - (distances / epsilon) ** 2
    return np.clip(w, 0.0, None)


def _regression_inputs(retained: RetainedSet):
    theta = retained.params
    n, p = theta.shape
    d = len(retained.stat_names)
    if n <= d + 1:
        raise NumericalError(
            f"need more retained simulations ({n}) than statistics + 1 ({d + 1})")
    x = retained.stats_std - retained.obs_std
    w = _epanechnikov(retained.distances, retained.epsilon)
    if w.sum() <= 0:
        log.warning("all regression weights vanished (equidistant retained set); "
                    "falling back to uniform weights")
        w = np.ones_like(w)
    return theta, x, w


def loclinear_adjust(retained: RetainedSet) -> AdjustedSample:
    """Local-linear regression adjustment.

    Each parameter is regressed on the standardized statistic offsets with
    Epanechnikov weights on the rejection distance; the fitted slope is
    used to project every retained value onto the observation.  A singular
    design (collinear statistics) raises :class:`CollinearityError`;
    statistic columns with no variation relative to the observation are
    harmless and receive a zero coefficient.
    """
    theta, x, w = _regression_inputs(retained)
    live = np.abs(x).max(axis=0) > 0
    sw = np.sqrt(w)[:, None]
    design = np.column_stack([np.ones(len(x)), x[:, live]])
    wd = sw * design
    if np.linalg.matrix_rank(wd) < design.shape[1]:
        raise CollinearityError(
            "collinear design matrix in the local-linear adjustment; "
            "use the ridge variant")
    coef, *_ = np.linalg.lstsq(wd, sw * theta, rcond=None)
    beta = np.zeros((x.shape[1], theta.shape[1]))
    beta[live] = coef[1:]
    adjusted = theta - x @ beta
    return AdjustedSample(retained.param_names, adjusted, w / w.sum(), theta)


def ridge_adjust(retained: RetainedSet, ridge_lambda: float = 1e-4) -> AdjustedSample:
    """Ridge-regularized variant of :func:`loclinear_adjust`.

    Adds ``ridge_lambda`` (on the standardized scale) to the slope block of
    the normal equations, so collinear or duplicated statistics stay
    finite.  With a small lambda on a well-conditioned problem this matches
    the plain adjustment.
    """
    theta, x, w = _regression_inputs(retained)
    design = np.column_stack([np.ones(len(x)), x])
    a = design.T @ (w[:, None] * design)
    a[1:, 1:] += ridge_lambda * np.eye(x.shape[1])
    b = design.T @ (w[:, None] * theta)
    coef = np.linalg.solve(a, b)
    adjusted = theta - x @ coef[1:]
    return AdjustedSample(retained.param_names, adjusted, w / w.sum(), theta)


def weighted_density(samples, weights=None, n_grid: int = 512, bounds=None):
    """Gaussian kernel density of a weighted sample on a padded grid.

    Bandwidth follows Silverman's rule (weight-aware).  Returns
    ``(grid, density)``.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    lo, hi = samples.min(), samples.max()
    if hi == lo:
        raise NumericalError("cannot estimate a density from a degenerate sample")
    pad = GRID_PADDING * (hi - lo)
    glo, ghi = lo - pad, hi + pad
    if bounds is not None:
        glo = max(glo, bounds[0])
        ghi = min(ghi, bounds[1])
    grid = np.linspace(glo, ghi, n_grid)
    kde = gaussian_kde(samples, weights=weights, bw_method="silverman")
    return grid, kde(grid)


# ---------------------------------------------------------------------------
# the Gaussian local-likelihood model


@dataclass(frozen=True)
class GlmFit:
    """Fitted local likelihood ``S_std = c + B u + eps`` with
    ``u = (theta - lo) / (hi - lo)`` the internally rescaled parameters."""

    param_names: tuple[str, ...]
    stat_names: tuple[str, ...]
    intercept: np.ndarray     # (d,)
    coeff: np.ndarray         # (d, p), internal scale
    sigma: np.ndarray         # (d, d) residual covariance
    lo: np.ndarray            # (p,) parameter range mapped to 0
    hi: np.ndarray            # (p,) parameter range mapped to 1

    @property
    def coeff_raw(self) -> np.ndarray:
        """Coefficients against the original parameter scale."""
        return self.coeff / (self.hi - self.lo)

    @property
    def intercept_raw(self) -> np.ndarray:
        return self.intercept - self.coeff_raw @ self.lo

    def to_internal(self, theta: np.ndarray) -> np.ndarray:
        return (theta - self.lo) / (self.hi - self.lo)

    def to_raw(self, u: np.ndarray) -> np.ndarray:
        return self.lo + u * (self.hi - self.lo)


def glm_fit(retained: RetainedSet) -> GlmFit:
    """Least-squares fit of the standardized statistics on the retained
    parameters, with a small ridge floor on the residual covariance."""
    theta = retained.params
    z = retained.stats_std
    n, p = theta.shape
    if n <= p + 1:
        raise NumericalError(
            f"need more retained simulations ({n}) than parameters + 1 ({p + 1})")
    lo = theta.min(axis=0)
    hi = theta.max(axis=0)
    if np.any(hi <= lo):
        flat = [retained.param_names[j] for j in np.nonzero(hi <= lo)[0]]
        raise NumericalError(
            f"parameter(s) constant among retained simulations: {', '.join(flat)}")
    u = (theta - lo) / (hi - lo)
    design = np.column_stack([np.ones(n), u])
    if np.linalg.matrix_rank(design) < p + 1:
        raise NumericalError("rank-deficient parameter design")
    coef, *_ = np.linalg.lstsq(design, z, rcond=None)
    resid = z - design @ coef
    dof = max(n - p - 1, 1)
    sigma = resid.T @ resid / dof + 1e-8 * np.eye(z.shape[1])
    return GlmFit(retained.param_names, retained.stat_names,
                  coef[0], coef[1:].T, sigma, lo, hi)


def _obs_std(fit: GlmFit, retained: RetainedSet, obs) -> np.ndarray:
    if obs is None:
        return retained.obs_std
    if isinstance(obs, ObservedStats):
        vec = obs.vector(fit.stat_names)
    else:
        vec = np.asarray(obs, dtype=float).ravel()
        if vec.size != len(fit.stat_names):
            raise ValueError(f"expected {len(fit.stat_names)} statistics, "
                             f"got {vec.size}")
    return retained.standardizer.transform(vec)


@dataclass(frozen=True)
class _Mixture:
    """Posterior as a Gaussian mixture: one component per retained draw."""

    log_weights: np.ndarray   # (n,) unnormalized: component evidences
    means: np.ndarray         # (n, p) internal scale
    cov: np.ndarray           # (p, p) shared, internal scale
    tau: float

    @property
    def log_marginal(self) -> float:
        return float(logsumexp(self.log_weights) - math.log(len(self.log_weights)))

    @property
    def weights(self) -> np.ndarray:
        w = self.log_weights - self.log_weights.max()
        w = np.exp(w)
        return w / w.sum()


def _glm_mixture(fit: GlmFit, retained: RetainedSet, obs,
                 dirac_peak_width: float) -> _Mixture:
    """Combine the fitted likelihood at the observation with the
    peak-mixture prior; all Gaussian algebra is closed form.

    Each prior peak ``N(u_j, tau^2 I)`` contributes evidence
    ``N(z_obs; c + B u_j, Sigma + tau^2 B B^T)`` and a posterior component
    with precision ``Q = B' Sigma^-1 B + I / tau^2``.
    """
    tau = float(dirac_peak_width)
    if tau <= 0:
        raise ValueError("dirac peak width must be positive")
    z = _obs_std(fit, retained, obs)
    b = fit.coeff
    d, p = b.shape
    u = fit.to_internal(retained.params)

    m = fit.sigma + tau**2 * (b @ b.T)
    try:
        cf = sla.cho_factor(m, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"likelihood covariance not positive definite: {exc}")
    logdet = 2.0 * np.log(np.diag(cf[0])).sum()
    resid = z - fit.intercept - u @ b.T              # (n, d)
    y = sla.cho_solve(cf, resid.T)                   # (d, n)
    quad = np.einsum("dn,dn->n", resid.T, y)
    log_w = -0.5 * (d * math.log(2 * math.pi) + logdet + quad)

    sig_cf = sla.cho_factor(fit.sigma, lower=True)
    sig_inv_b = sla.cho_solve(sig_cf, b)             # (d, p)
    q = b.T @ sig_inv_b + np.eye(p) / tau**2
    cov = np.linalg.inv(q)
    base = b.T @ sla.cho_solve(sig_cf, z - fit.intercept)
    means = (cov @ (base[:, None] + u.T / tau**2)).T
    return _Mixture(log_w, means, cov, tau)


def glm_log_marginal_density(fit: GlmFit, retained: RetainedSet, obs=None,
                             dirac_peak_width: float = DEFAULT_PEAK_WIDTH) -> float:
    """Log of the prior-weighted likelihood integral at the observation."""
    return _glm_mixture(fit, retained, obs, dirac_peak_width).log_marginal


def glm_marginal_density(fit: GlmFit, retained: RetainedSet, obs=None,
                         dirac_peak_width: float = DEFAULT_PEAK_WIDTH) -> float:
    """Prior-weighted likelihood integral at the observation (the model
    marginal density; may underflow to 0 for hopeless models)."""
    lm = glm_log_marginal_density(fit, retained, obs, dirac_peak_width)
    try:
        return math.exp(lm)
    except OverflowError:
        return math.inf


def glm_log_marginal_densities(fit: GlmFit, retained: RetainedSet,
                               stats: np.ndarray,
                               dirac_peak_width: float = DEFAULT_PEAK_WIDTH
                               ) -> np.ndarray:
    """Log marginal density of many pseudo-observations at once.

    ``stats`` is an (m, d) matrix of raw statistic vectors in
    ``fit.stat_names`` order; rows are standardized with the retained set's
    transform.  Vectorized equivalent of calling
    :func:`glm_log_marginal_density` per row.
    """
    tau = float(dirac_peak_width)
    z = retained.standardizer.transform(np.atleast_2d(stats))
    b = fit.coeff
    d = b.shape[0]
    u = fit.to_internal(retained.params)
    centers = fit.intercept + u @ b.T                # (n, d)
    m = fit.sigma + tau**2 * (b @ b.T)
    cf = sla.cho_factor(m, lower=True)
    logdet = 2.0 * np.log(np.diag(cf[0])).sum()
    const = -0.5 * (d * math.log(2 * math.pi) + logdet) - math.log(len(centers))
    out = np.empty(len(z))
    chunk = max(1, int(2e6 / max(len(centers), 1)))
    for start in range(0, len(z), chunk):
        diff = z[start:start + chunk, None, :] - centers[None, :, :]
        flat = diff.reshape(-1, d)
        y = sla.cho_solve(cf, flat.T)
        quad = np.einsum("dn,dn->n", flat.T, y).reshape(diff.shape[:2])
        out[start:start + chunk] = logsumexp(-0.5 * quad, axis=1) + const
    return out


# ---------------------------------------------------------------------------
# grid posteriors


@dataclass(frozen=True)
class PosteriorCharacteristics:
    param: str
    mode: float
    mean: float
    median: float
    quantiles: dict[float, float]
    hdi50: tuple[float, float]
    hdi95: tuple[float, float]


@dataclass(frozen=True)
class GridPosterior:
    """Marginal posterior densities on per-parameter grids, each normalized
    to integrate to one (trapezoid rule)."""

    param_names: tuple[str, ...]
    grids: tuple[np.ndarray, ...]
    densities: tuple[np.ndarray, ...]

    def _index(self, param: str) -> int:
        return self.param_names.index(param)

    def density(self, param: str):
        i = self._index(param)
        return self.grids[i], self.densities[i]

    def mean(self, param: str) -> float:
        g, f = self.density(param)
        return float(np.trapezoid(g * f, g))

    def sd(self, param: str) -> float:
        g, f = self.density(param)
        m = self.mean(param)
        return float(math.sqrt(max(np.trapezoid((g - m) ** 2 * f, g), 0.0)))

    def _cdf(self, param: str):
        g, f = self.density(param)
        cdf = np.concatenate([[0.0], np.cumsum(np.diff(g) * (f[1:] + f[:-1]) / 2)])
        if cdf[-1] > 0:
            cdf = cdf / cdf[-1]
        return g, cdf

    def quantile(self, param: str, q) -> np.ndarray:
        g, cdf = self._cdf(param)
        return np.interp(q, cdf, g)

    def quantile_of(self, param: str, value: float) -> float:
        """Posterior mass below ``value`` (the probability integral
        transform of a known true value)."""
        g, cdf = self._cdf(param)
        return float(np.interp(value, g, cdf, left=0.0, right=1.0))

    def hdi_level_of(self, param: str, value: float) -> float:
        """Smallest highest-density credible level containing ``value``."""
        g, f = self.density(param)
        fv = float(np.interp(value, g, f, left=0.0, right=0.0))
        mass = _cell_masses(g, f)
        return float(mass[f >= fv].sum())

    def hdi_bounds(self, param: str, level: float) -> tuple[float, float]:
        g, f = self.density(param)
        mass = _cell_masses(g, f)
        order = np.argsort(f)[::-1]
        cum = np.cumsum(mass[order])
        k = int(np.searchsorted(cum, level))
        thresh = f[order[min(k, len(g) - 1)]]
        inside = g[f >= thresh]
        return float(inside.min()), float(inside.max())

    def characteristics(self, param: str) -> PosteriorCharacteristics:
        g, f = self.density(param)
        mode = float(g[int(np.argmax(f))])
        qs = {q: float(self.quantile(param, q)) for q in QUANTILE_LEVELS}
        return PosteriorCharacteristics(
            param, mode, self.mean(param), qs[0.5], qs,
            self.hdi_bounds(param, 0.5), self.hdi_bounds(param, 0.95))


def _cell_masses(grid: np.ndarray, density: np.ndarray) -> np.ndarray:
    # trapezoid mass attributed to each grid point
    w = np.zeros_like(grid)
    d = np.diff(grid)
    w[:-1] += d / 2
    w[1:] += d / 2
    m = density * w
    total = m.sum()
    return m / total if total > 0 else m


@dataclass(frozen=True)
class JointGridPosterior:
    """Joint posterior on a tensor grid with, at every grid point, the
    smallest highest-density credible level containing that point."""

    param_names: tuple[str, ...]
    grids: tuple[np.ndarray, ...]
    density: np.ndarray   # shape (len(g1), len(g2), ...), sums to 1/cell_volume
    hdi: np.ndarray       # same shape, in [0, 1]
    cell_volume: float

    def rows(self):
        """Iterate grid points as (coords..., density, hdi), first
        parameter varying fastest."""
        shape = self.density.shape
        idx = np.indices(shape).reshape(len(shape), -1, order="F").T
        for ind in idx:
            coords = [self.grids[k][ind[k]] for k in range(len(shape))]
            yield (*coords, float(self.density[tuple(ind)]),
                   float(self.hdi[tuple(ind)]))


def _param_grid(fit: GlmFit, k: int, n_points: int, bounds) -> np.ndarray:
    lo_u, hi_u = -GRID_PADDING, 1.0 + GRID_PADDING
    if bounds is not None and bounds[k] is not None:
        b_lo, b_hi = bounds[k]
        span = fit.hi[k] - fit.lo[k]
        lo_u = max(lo_u, (b_lo - fit.lo[k]) / span)
        hi_u = min(hi_u, (b_hi - fit.lo[k]) / span)
    return np.linspace(lo_u, hi_u, n_points)


def glm_posterior(fit: GlmFit, retained: RetainedSet, obs=None,
                  n_points: int = DEFAULT_GRID_POINTS,
                  dirac_peak_width: float = DEFAULT_PEAK_WIDTH,
                  bounds=None):
    """Marginal posterior densities and their characteristics.

    The grid per parameter spans the retained range padded by 10% (clipped
    to ``bounds`` when the prior support is known).  Returns
    ``(GridPosterior, {param: PosteriorCharacteristics})``.
    """
    mix = _glm_mixture(fit, retained, obs, dirac_peak_width)
    w = mix.weights
    p = len(fit.param_names)
    grids, densities = [], []
    for k in range(p):
        ug = _param_grid(fit, k, n_points, bounds)
        spacing = ug[1] - ug[0]
        # floor keeps posteriors narrower than the grid representable
        s = max(math.sqrt(mix.cov[k, k]), spacing / 2)
        z = (ug[None, :] - mix.means[:, k][:, None]) / s
        f_u = (w[:, None] * np.exp(-0.5 * z**2)).sum(axis=0) / (s * math.sqrt(2 * math.pi))
        span = fit.hi[k] - fit.lo[k]
        g = fit.lo[k] + ug * span
        f = f_u / span
        total = np.trapezoid(f, g)
        if not total > 0:
            raise NumericalError(
                f"posterior mass for {fit.param_names[k]} fell outside the grid")
        grids.append(g)
        densities.append(f / total)
    post = GridPosterior(fit.param_names, tuple(grids), tuple(densities))
    chars = {name: post.characteristics(name) for name in fit.param_names}
    return post, chars


def joint_posterior(fit: GlmFit, retained: RetainedSet, obs=None,
                    params=None, n_points: int = DEFAULT_GRID_POINTS,
                    dirac_peak_width: float = DEFAULT_PEAK_WIDTH,
                    bounds=None) -> JointGridPosterior:
    """Joint posterior of 2 to 4 parameters on a tensor grid.

    The credible level at each grid point is the smallest posterior mass of
    the density super-level set containing it, found by ranking grid cells
    by density and accumulating their mass.
    """
    params = list(params) if params is not None else list(fit.param_names)
    if not 2 <= len(params) <= 4:
        raise ValueError("joint grids support 2 to 4 parameters "
                         f"(got {len(params)}); use sampling beyond that")
    sel = [fit.param_names.index(name) for name in params]
    mix = _glm_mixture(fit, retained, obs, dirac_peak_width)
    w = mix.weights
    cov = mix.cov[np.ix_(sel, sel)].copy()

    ugrids = [_param_grid(fit, k, n_points, bounds) for k in sel]
    for j, ug in enumerate(ugrids):
        floor = ((ug[1] - ug[0]) / 2) ** 2
        if cov[j, j] < floor:
            cov[j, j] = floor
    mesh = np.meshgrid(*ugrids, indexing="ij")
    pts = np.column_stack([m.ravel(order="F") for m in mesh])
    prec = np.linalg.inv(cov)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise NumericalError("joint posterior covariance not positive definite")
    norm = math.exp(-0.5 * (len(sel) * math.log(2 * math.pi) + logdet))

    dens = np.zeros(pts.shape[0])
    mu = mix.means[:, sel]
    chunk = max(1, int(2e6 / max(pts.shape[0], 1)))
    for start in range(0, len(w), chunk):
        m = mu[start:start + chunk]
        diff = pts[:, None, :] - m[None, :, :]
        quad = np.einsum("gjp,pq,gjq->gj", diff, prec, diff)
        dens += np.exp(-0.5 * quad) @ w[start:start + chunk]
    dens *= norm

    spans = np.array([fit.hi[k] - fit.lo[k] for k in sel])
    cell_u = np.prod([ug[1] - ug[0] for ug in ugrids])
    total = dens.sum() * cell_u
    if not total > 0:
        raise NumericalError("joint posterior mass fell outside the grid")
    dens /= total
    cell_volume = cell_u * float(np.prod(spans))
    dens_raw = dens / np.prod(spans)

    hdi = _hdi_levels(dens_raw, cell_volume)
    shape = tuple(len(g) for g in ugrids)
    grids = tuple(fit.lo[k] + ugrids[j] * spans[j] for j, k in enumerate(sel))
    return JointGridPosterior(
        tuple(params), grids,
        dens_raw.reshape(shape, order="F"),
        hdi.reshape(shape, order="F"),
        cell_volume)


def _hdi_levels(density: np.ndarray, cell_volume: float) -> np.ndarray:
    """Credible level of each cell: total mass of cells at least as dense
    (equal densities share one level)."""
    mass = density * cell_volume
    uniq, inverse = np.unique(density, return_inverse=True)
    mass_per = np.bincount(inverse, weights=mass)
    cum_from_top = np.cumsum(mass_per[::-1])[::-1]
    return cum_from_top[inverse]
