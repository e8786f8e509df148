"""Driving simulators: prior (standard) sampling and a likelihood-free
MCMC sampler with a calibration phase.

A :class:`SimulatorBinding` describes how one simulation is produced:

* ``builtin``: an in-process model registered in :mod:`abckit.models`;
* ``exec-args``: an executable whose command line contains parameter-name
  tokens that are replaced by the drawn values;
* ``exec-files``: like exec-args, but a template input file is additionally
  rendered (parameter tokens substituted) and saved next to the run; the
  token ``SIMINPUTNAME`` refers to the rendered file, whose name is the
  template name with ``-temp`` inserted before the extension;
* ``easyabc``: an executable that reads a file ``input`` (one parameter
  value per line) and writes a file ``output`` (statistic values only).

An optional post-processor runs after every simulation, e.g. to turn raw
simulator output into a statistics file.  Statistics are read from a
header + values file (default ``summary_stats-temp.txt``).  Each run works
inside a private scratch directory so fixed filenames cannot collide.
"""

from __future__ import annotations

import logging
import math
import os
import re
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import statselect
from .errors import NumericalError, SimulatorError
from .models import BUILTIN_MODELS
from .priors import EstModel, ParamDraw, eval_expr, log_prior_density, sample
from .rejection import RetainedSet, retain
from .statselect import LinearCombDef
from .tableio import ObservedStats, SimulationTable

log = logging.getLogger(__name__)

__all__ = [
    "SimulatorBinding", "SimulationRun", "McmcConfig", "Calibration",
    "McmcRun", "run_standard", "calibrate", "run_mcmc",
]

SIMINPUT_TOKEN = "SIMINPUTNAME"
DEFAULT_STATS_FILE = "summary_stats-temp.txt"


def _fmt_param(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return format(float(v), ".12g")


def _substitute(text: str, values: dict[str, str]) -> str:
    if not values:
        return text
    names = sorted(values, key=len, reverse=True)
    pattern = re.compile("|".join(re.escape(n) for n in names))
    return pattern.sub(lambda m: values[m.group(0)], text)


@dataclass(frozen=True)
class SimulatorBinding:
    """How to produce one simulation and collect its statistics."""

    mode: str                      # builtin | exec-args | exec-files | easyabc
    program: str = ""
    sim_args: str = ""
    input_template: str | None = None
    sum_stat_program: str | None = None
    sum_stat_args: str = ""
    stats_file: str = DEFAULT_STATS_FILE
    stat_names: tuple[str, ...] | None = None   # for headerless output
    timeout: float = 300.0

    @classmethod
    def builtin(cls, name: str) -> "SimulatorBinding":
        if name not in BUILTIN_MODELS:
            raise SimulatorError(
                f"no builtin model {name!r}; available: "
                + ", ".join(sorted(BUILTIN_MODELS)))
        return cls("builtin", program=name)

    @classmethod
    def exec_args(cls, program, sim_args="", **kw) -> "SimulatorBinding":
        return cls("exec-args", program=str(program), sim_args=sim_args, **kw)

    @classmethod
    def exec_files(cls, program, input_template, sim_args="", **kw) -> "SimulatorBinding":
        return cls("exec-files", program=str(program), sim_args=sim_args,
                   input_template=str(input_template), **kw)

    @classmethod
    def easyabc(cls, program, stat_names=None) -> "SimulatorBinding":
        return cls("easyabc", program=str(program),
                   stat_names=tuple(stat_names) if stat_names else None)

    def validate(self) -> None:
        if self.mode == "builtin":
            if self.program not in BUILTIN_MODELS:
                raise SimulatorError(f"unknown builtin model {self.program!r}")
            return
        prog = Path(self.program)
        if not prog.exists() or not os.access(prog, os.X_OK):
            raise SimulatorError(f"simulator {self.program!r} is not an "
                                 "executable file")
        if self.mode == "exec-files":
            if not self.input_template or not Path(self.input_template).exists():
                raise SimulatorError(
                    f"input template {self.input_template!r} not found")
        if self.sum_stat_program is not None:
            p = Path(self.sum_stat_program)
            if not p.exists() or not os.access(p, os.X_OK):
                raise SimulatorError(
                    f"post-processor {self.sum_stat_program!r} is not an "
                    "executable file")


def _rendered_input_name(template: str) -> str:
    t = Path(template)
    return t.stem + "-temp" + t.suffix


class _Runner:
    """Executes a binding inside one scratch directory."""

    def __init__(self, binding: SimulatorBinding):
        binding.validate()
        self.binding = binding
        self.scratch = None
        self.template_text = None
        if binding.mode != "builtin":
            self.scratch = Path(tempfile.mkdtemp(prefix="abck-sim-"))
            self.program = str(Path(binding.program).resolve())
            if binding.sum_stat_program:
                self.post = str(Path(binding.sum_stat_program).resolve())
            else:
                self.post = None
            if binding.mode == "exec-files":
                self.template_text = Path(binding.input_template).read_text()
                self.rendered_name = _rendered_input_name(binding.input_template)

    def close(self):
        if self.scratch is not None:
            shutil.rmtree(self.scratch, ignore_errors=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _run(self, argv):
        try:
            proc = subprocess.run(argv, cwd=self.scratch, capture_output=True,
                                  text=True, timeout=self.binding.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise SimulatorError(f"failed to run {argv[0]}: {exc}") from None
        if proc.returncode != 0:
            tail = (proc.stderr or proc.stdout or "").strip().splitlines()[-3:]
            raise SimulatorError(
                f"{argv[0]} exited with {proc.returncode}: " + " | ".join(tail))

    def _read_stats(self, path: Path):
        if not path.exists():
            raise SimulatorError(f"statistics file {path.name} was not produced")
        lines = [l.split() for l in path.read_text().splitlines() if l.strip()]
        binding = self.binding
        try:
            if binding.mode == "easyabc":
                values = [float(v) for v in lines[0]]
                names = binding.stat_names or tuple(
                    f"stat_{i + 1}" for i in range(len(values)))
            else:
                if len(lines) < 2:
                    raise SimulatorError(
                        f"statistics file {path.name} needs a header and a "
                        "value line")
                names = tuple(lines[0])
                values = [float(v) for v in lines[1]]
        except ValueError as exc:
            raise SimulatorError(
                f"non-numeric statistic in {path.name}: {exc}") from None
        if len(names) != len(values):
            raise SimulatorError(
                f"{path.name}: {len(names)} names but {len(values)} values")
        return tuple(names), np.array(values)

    def simulate(self, draw: ParamDraw, rng) -> tuple[tuple[str, ...], np.ndarray]:
        binding = self.binding
        if binding.mode == "builtin":
            names, values = BUILTIN_MODELS[binding.program](draw, rng)
            values = np.asarray(values, dtype=float)
            if not np.isfinite(values).all():
                raise SimulatorError(
                    f"builtin model {binding.program} produced non-finite "
                    "statistics")
            return tuple(names), values

        subs = {name: _fmt_param(v) for name, v in draw.values.items()}
        if binding.mode == "exec-files":
            rendered = _substitute(self.template_text, subs)
            (self.scratch / self.rendered_name).write_text(rendered)
            subs[SIMINPUT_TOKEN] = self.rendered_name
        if binding.mode == "easyabc":
            lines = [_fmt_param(v) for v in draw.values.values()]
            (self.scratch / "input").write_text("\n".join(lines) + "\n")
            argv = [self.program]
        else:
            argv = [self.program] + [
                _substitute(tok, subs) for tok in binding.sim_args.split()]
        self._run(argv)
        if self.post is not None:
            post_argv = [self.post] + [
                _substitute(tok, subs) for tok in binding.sum_stat_args.split()]
            self._run(post_argv)
        stats_name = "output" if binding.mode == "easyabc" else binding.stats_file
        return self._read_stats(self.scratch / stats_name)


@dataclass(frozen=True)
class SimulationRun:
    """Outcome of a standard sampling run; ``table.n_rows + failures``
    equals ``attempts``."""

    table: SimulationTable
    attempts: int
    failures: int


def run_standard(est: EstModel, binding: SimulatorBinding, n_sims: int,
                 rng=None, record: str = "output") -> SimulationRun:
    """Simulate ``n_sims`` draws from the prior.

    Each failed simulation is retried once with the same parameters, then
    logged and skipped.  ``record`` selects which parameters become table
    columns: the output-flagged ones (default) or ``"all"`` declared names.
    """
    rng = np.random.default_rng(rng)
    if n_sims <= 0:
        raise ValueError("n_sims must be positive")
    param_names = est.all_names if record == "all" else est.output_names
    rows = []
    stat_names = None
    failures = 0
    with _Runner(binding) as runner:
        for _ in range(n_sims):
            draw = sample(est, rng)
            try:
                names, values = runner.simulate(draw, rng)
            except SimulatorError as exc:
                log.debug("simulation failed, retrying once: %s", exc)
                try:
                    names, values = runner.simulate(draw, rng)
                except SimulatorError as exc2:
                    log.warning("simulation failed twice, skipping draw: %s", exc2)
                    failures += 1
                    continue
            if stat_names is None:
                stat_names = names
            elif names != stat_names:
                raise SimulatorError(
                    "statistics header changed between simulations "
                    f"({stat_names} -> {names})")
            pvals = [draw.values[n] for n in param_names]
            rows.append(np.concatenate([pvals, values]))
    if stat_names is None:
        raise SimulatorError("every simulation failed; nothing to report")
    log.info("performed %d simulation(s), %d failure(s)", len(rows), failures)
    names = tuple(param_names) + stat_names
    table = SimulationTable(names, np.array(rows),
                            tuple(range(len(param_names))),
                            tuple(range(len(param_names), len(names))))
    return SimulationRun(table, n_sims, failures)


# ---------------------------------------------------------------------------
# MCMC with calibration


@dataclass(frozen=True)
class McmcConfig:
    n_calibration: int = 1000
    threshold_prop: float = 0.1
    range_prop: float = 1.0
    starting_point: str = "best"      # best | random
    chain_length: int = 10_000
    sampling_interval: int = 1
    burn_in_frac: float = 0.1
    lincomb: LinearCombDef | None = None
    do_boxcox: bool = True
    do_boosting: bool = False

    def __post_init__(self):
        if self.n_calibration < 100:
            raise ValueError("need at least 100 calibration simulations")
        if not 0 < self.threshold_prop < 1:
            raise ValueError("threshold_prop must be in (0, 1)")
        if math.ceil(self.threshold_prop * self.n_calibration) < 10:
            raise ValueError("calibration would retain fewer than 10 points")
        if self.range_prop <= 0:
            raise ValueError("range_prop must be positive")
        if self.starting_point not in ("best", "random"):
            raise ValueError("starting_point must be 'best' or 'random'")
        if self.sampling_interval < 1 or self.chain_length < 1:
            raise ValueError("chain length and sampling interval must be >= 1")


@dataclass(frozen=True)
class Calibration:
    """Tuning derived from prior simulations: the distance threshold,
    per-parameter proposal widths, the starting state, and the statistic
    transform/standardization fixed for the chain."""

    epsilon: float
    widths: np.ndarray                   # per raw prior parameter
    start_raw: dict[str, float]
    start_stats: np.ndarray              # raw simulator statistics
    start_distance: float
    retained: RetainedSet
    sim_stat_names: tuple[str, ...]
    obs_std: np.ndarray
    lincomb: LinearCombDef | None
    do_boxcox: bool
    do_boosting: bool
    table: SimulationTable

    def distance(self, stat_names, values) -> float:
        """Distance of one simulated statistics vector to the observation,
        through the same transform chain used in calibration."""
        obs = ObservedStats(tuple(stat_names), np.asarray(values, dtype=float))
        if self.do_boosting:
            obs = statselect.boost_observed(obs)
        if self.lincomb is not None:
            obs = statselect.transform(obs, self.lincomb,
                                       apply_boxcox=self.do_boxcox)
        vec = obs.vector(self.retained.stat_names)
        z = self.retained.standardizer.transform(vec)
        return float(np.linalg.norm(z - self.obs_std))


def _transformed(table, obs, cfg: McmcConfig):
    if cfg.do_boosting:
        table = statselect.boost(table)
        obs = statselect.boost_observed(obs)
    if cfg.lincomb is not None:
        table = statselect.transform(table, cfg.lincomb,
                                     apply_boxcox=cfg.do_boxcox)
        obs = statselect.transform(obs, cfg.lincomb,
                                   apply_boxcox=cfg.do_boxcox)
    return table, obs


def calibrate(est: EstModel, binding: SimulatorBinding, obs: ObservedStats,
              cfg: McmcConfig, rng=None) -> Calibration:
    """Prior pre-simulation phase: fixes the tolerance (the distance of the
    ceil(threshold_prop * n)-th nearest calibration point), the proposal
    widths (range_prop times the retained parameter standard deviations),
    and the starting state (nearest retained point, or a random one)."""
    rng = np.random.default_rng(rng)
    run = run_standard(est, binding, cfg.n_calibration, rng, record="all")
    if run.failures:
        log.warning("%d calibration simulation(s) failed", run.failures)
    table = run.table
    sim_stat_names = table.stat_names
    ttable, tobs = _transformed(table, obs, cfg)
    k = math.ceil(cfg.threshold_prop * ttable.n_rows)
    retained = retain(ttable, tobs, count=k)
    epsilon = retained.epsilon

    prior_names = est.prior_names
    kept_params = ttable.params[retained.indices]
    col = {n: j for j, n in enumerate(ttable.param_names)}
    widths = np.array([cfg.range_prop * kept_params[:, col[n]].std(ddof=0)
                       for n in prior_names])

    strict = np.nonzero(retained.distances < epsilon)[0]
    if strict.size == 0:
        raise NumericalError("all retained calibration points sit exactly at "
                             "the tolerance; cannot pick a starting state")
    if cfg.starting_point == "best":
        pick = int(retained.indices[0])
    else:
        pick = int(retained.indices[rng.choice(strict)])
    start_raw = {n: float(table.values[pick, col[n]]) for n in prior_names}
    start_stats = table.stat_matrix(sim_stat_names)[pick]
    start_distance = float(retained.distances[
        list(retained.indices).index(pick)])
    return Calibration(epsilon, widths, start_raw, start_stats, start_distance,
                       retained, sim_stat_names,
                       retained.obs_std, cfg.lincomb, cfg.do_boxcox,
                       cfg.do_boosting, table)


def _reflect(x: float, lo: float, hi: float) -> float:
    span = hi - lo
    if span <= 0:
        return lo
    t = (x - lo) % (2.0 * span)
    if t > span:
        t = 2.0 * span - t
    return lo + t


@dataclass(frozen=True)
class McmcRun:
    table: SimulationTable
    acceptance_rate: float
    epsilon: float
    steps: int
    calibration: Calibration


def run_mcmc(est: EstModel, binding: SimulatorBinding, obs: ObservedStats,
             cfg: McmcConfig, rng=None, calibration: Calibration | None = None
             ) -> McmcRun:
    """Likelihood-free MCMC: a classic random walk whose likelihood ratio
    is replaced by the indicator of the simulated statistics landing within
    the calibrated tolerance of the observation.

    Proposals perturb each raw parameter by a uniform step reflected at the
    prior bounds (symmetric, so only the prior ratio enters the acceptance
    test); draws violating a rule are rejected outright.  The chain state
    is recorded every ``sampling_interval`` steps; the first
    ``burn_in_frac`` of the records is discarded.
    """
    rng = np.random.default_rng(rng)
    cal = calibration if calibration is not None else calibrate(
        est, binding, obs, cfg, rng)
    prior_names = est.prior_names

    def full_draw(raw: dict[str, float]) -> ParamDraw:
        values = dict(raw)
        for cp in est.complex_params:
            x = eval_expr(cp.expression, values)
            if cp.integer:
                x = float(math.trunc(x))
            values[cp.name] = x
        return ParamDraw(values, est.output_names)

    raw = dict(cal.start_raw)
    stats = np.asarray(cal.start_stats, dtype=float)
    dist = cal.start_distance
    log_prior = log_prior_density(est, raw)

    records = []
    accepted = 0
    checked_early = False
    with _Runner(binding) as runner:
        for step in range(1, cfg.chain_length + 1):
            proposal = {}
            for j, name in enumerate(prior_names):
                spec = est.priors[j]
                lo, hi = spec.bounds
                w = cal.widths[j]
                x = raw[name]
                if w > 0 and hi > lo:
                    x = _reflect(x + rng.uniform(-w, w), lo, hi)
                if spec.integer:
                    x = float(math.trunc(x))
                proposal[name] = x
            if all(rule.holds(proposal) for rule in est.rules):
                draw = full_draw(proposal)
                try:
                    names, values = runner.simulate(draw, rng)
                except SimulatorError as exc:
                    log.debug("proposal simulation failed, retrying: %s", exc)
                    try:
                        names, values = runner.simulate(draw, rng)
                    except SimulatorError as exc2:
                        log.warning("proposal simulation failed twice, "
                                    "treating as rejection: %s", exc2)
                        names, values = None, None
                if names is not None:
                    if tuple(names) != cal.sim_stat_names:
                        raise SimulatorError(
                            "statistics header changed during the chain")
                    new_dist = cal.distance(names, values)
                    new_log_prior = log_prior_density(est, proposal)
                    if (new_dist < cal.epsilon
                            and math.log(rng.uniform()) < new_log_prior - log_prior):
                        raw, stats, dist = proposal, values, new_dist
                        log_prior = new_log_prior
                        accepted += 1
            if step % cfg.sampling_interval == 0:
                draw_now = full_draw(raw)
                records.append(np.concatenate([
                    draw_now.output_values(), stats, [dist]]))
            if not checked_early and step >= min(1000, cfg.chain_length):
                checked_early = True
                if accepted / step < 0.001:
                    raise NumericalError(
                        f"acceptance rate {accepted}/{step} below 0.1% over "
                        "the first steps; recalibrate with a larger tolerance")

    burn = int(len(records) * cfg.burn_in_frac)
    kept = records[burn:]
    if not kept:
        raise NumericalError("no recorded samples after burn-in")
    names = est.output_names + cal.sim_stat_names + ("distance",)
    table = SimulationTable(names, np.array(kept),
                            tuple(range(len(est.output_names))),
                            tuple(range(len(est.output_names),
                                        len(names) - 1)))
    return McmcRun(table, accepted / cfg.chain_length, cal.epsilon,
                   cfg.chain_length, cal)
