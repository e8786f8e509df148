"""Simulation-based (likelihood-free) Bayesian inference toolkit.

The pieces mirror a typical analysis: simulate from priors
(:mod:`abckit.orchestrate`, :mod:`abckit.priors`, :mod:`abckit.models`),
retain the simulations closest to the observed statistics
(:mod:`abckit.rejection`), adjust and summarize posteriors
(:mod:`abckit.adjust`), compare models (:mod:`abckit.modelchoice`),
validate everything (:mod:`abckit.validation`), and engineer the summary
statistics themselves (:mod:`abckit.statselect`).  File formats live in
:mod:`abckit.tableio`; ``abckit.cli`` exposes the same pipeline as a
command line tool.
"""

__version__ = "0.1.0"

from .adjust import (AdjustedSample, GlmFit, GridPosterior,
                     JointGridPosterior, PosteriorCharacteristics, glm_fit,
                     glm_marginal_density, glm_posterior, joint_posterior,
                     loclinear_adjust, ridge_adjust, weighted_density)
from .errors import (AbckitError, CollinearityError, ConfigError, EstParseError,
                     EvalError, NumericalError, SimulatorError,
                     TableFormatError)
from .modelchoice import (ModelChoiceResult, glm_model_choice,
                          rejection_model_choice)
from .models import (SFS_STAT_NAMES, TOY_STAT_NAMES, Sfs, ToyParams,
                     sfs_stats, simulate_toy, tau_to_generations, toy_stats)
from .orchestrate import (Calibration, McmcConfig, SimulatorBinding,
                          calibrate, run_mcmc, run_standard)
from .priors import EstModel, ParamDraw, eval_expr, parse_est, sample
from .rejection import RetainedSet, Standardizer, prune_correlated, retain
from .statselect import (BoxCoxSpec, LinearCombDef, boost, fit_boxcox,
                         fit_pls, greedy_search, transform)
from .tableio import (ObservedStats, OutputTag, SimulationTable,
                      read_observed, read_table, write_tagged)
from .validation import (ConfusionMatrix, GlmSettings, ModelChoiceSettings,
                         calibration_curve, coverage_tests, cross_validate,
                         fit_pvalues, marginal_density_pvalue,
                         model_choice_validate, tukey_depth, tukey_pvalue)

__all__ = [name for name in dir() if not name.startswith("_")]
