import numpy as np
import pytest

from abckit.models import TOY_STAT_NAMES, toy_stats_matrix, uniform_bounds
from abckit.tableio import ObservedStats, SimulationTable

# the fixed observation used throughout (statistics of a standard-normal
# sample of size 100)
TOY_OBS_VALUES = (0.102, 1.14, 0.0788, -2.02, 3.16, 5.18, -0.598, 0.799)

N_SIMS = 10_000
SAMPLE_SIZE = 100
SEED_NORMAL = 20260810
SEED_UNIFORM = 20260811


def make_toy_table(model: str, n_sims: int, seed: int,
                   sample_size: int = SAMPLE_SIZE) -> SimulationTable:
    """Simulate the toy model directly (vectorized), with the priors
    mu ~ U[-1, 1] and sigma2 ~ U[0.1, 4]."""
    rng = np.random.default_rng(seed)
    mu = rng.uniform(-1.0, 1.0, n_sims)
    sigma2 = rng.uniform(0.1, 4.0, n_sims)
    if model == "normal":
        samples = rng.normal(mu[:, None], np.sqrt(sigma2)[:, None],
                             (n_sims, sample_size))
    else:
        a, b = uniform_bounds(mu, sigma2)
        samples = rng.uniform(a[:, None], b[:, None], (n_sims, sample_size))
    stats = toy_stats_matrix(samples)
    names = ("mu", "sigma2") + TOY_STAT_NAMES
    return SimulationTable(names, np.column_stack([mu, sigma2, stats]),
                           (0, 1), tuple(range(2, 10)))


@pytest.fixture(scope="session")
def toy_obs() -> ObservedStats:
    return ObservedStats(TOY_STAT_NAMES, np.array(TOY_OBS_VALUES))


@pytest.fixture(scope="session")
def norm_table() -> SimulationTable:
    return make_toy_table("normal", N_SIMS, SEED_NORMAL)


@pytest.fixture(scope="session")
def unif_table() -> SimulationTable:
    return make_toy_table("uniform", N_SIMS, SEED_UNIFORM)
