import numpy as np
import pytest

from abckit.errors import NumericalError, TableFormatError
from abckit.rejection import Standardizer, prune_correlated, retain
from abckit.tableio import ObservedStats, SimulationTable


def random_table(rng, n_rows=100, n_stats=5, n_params=2):
    names = tuple(f"p{i}" for i in range(n_params)) + tuple(
        f"s{i}" for i in range(n_stats))
    values = rng.normal(size=(n_rows, n_params + n_stats)) * rng.uniform(
        0.5, 5.0, n_params + n_stats)
    return SimulationTable(names, values, tuple(range(n_params)),
                           tuple(range(n_params, n_params + n_stats)))


def brute_force_order(table, obs):
    """Standardize by hand, sort by Euclidean distance, stable."""
    stats = table.stat_matrix(obs.names)
    mean = stats.mean(axis=0)
    sd = stats.std(axis=0)
    z = (stats - mean) / sd
    zo = (obs.values - mean) / sd
    d = np.sqrt(((z - zo) ** 2).sum(axis=1))
    order = sorted(range(len(d)), key=lambda i: (d[i], i))
    return np.array(order), d


class TestRetain:
    def test_matches_brute_force_sort(self):
        rng = np.random.default_rng(11)
        table = random_table(rng)
        obs = ObservedStats(table.stat_names, rng.normal(size=5))
        want_order, want_d = brute_force_order(table, obs)
        r = retain(table, obs, count=30)
        np.testing.assert_array_equal(r.indices, want_order[:30])
        np.testing.assert_allclose(r.distances, want_d[want_order[:30]])
        assert r.epsilon == pytest.approx(want_d[want_order[29]])

    def test_tolerance_fraction(self, norm_table, toy_obs):
        r = retain(norm_table, toy_obs, tol=0.01)
        assert r.n == 100

    def test_observation_equal_to_row(self):
        rng = np.random.default_rng(12)
        table = random_table(rng, n_rows=50)
        obs = ObservedStats(table.stat_names, table.stats[17])
        r = retain(table, obs, count=5)
        assert r.indices[0] == 17
        assert r.distances[0] == 0.0

    def test_affine_invariance(self):
        rng = np.random.default_rng(13)
        table = random_table(rng)
        obs = ObservedStats(table.stat_names, rng.normal(size=5))
        base = retain(table, obs, count=20)
        # scale one raw statistic column by 10: standardization absorbs it
        values = table.values.copy()
        values[:, 3] *= 10.0
        scaled = SimulationTable(table.names, values, table.param_idx,
                                 table.stat_idx)
        obs2 = ObservedStats(obs.names,
                             obs.values * np.array([1, 10, 1, 1, 1.0]))
        again = retain(scaled, obs2, count=20)
        np.testing.assert_array_equal(base.indices, again.indices)
        np.testing.assert_allclose(base.distances, again.distances)

    def test_retain_everything(self):
        rng = np.random.default_rng(14)
        table = random_table(rng, n_rows=40)
        obs = ObservedStats(table.stat_names, rng.normal(size=5))
        r = retain(table, obs, count=40)
        assert r.n == 40
        _, d = brute_force_order(table, obs)
        assert r.epsilon == pytest.approx(d.max())

    def test_prefix_monotonicity(self):
        rng = np.random.default_rng(15)
        table = random_table(rng)
        obs = ObservedStats(table.stat_names, rng.normal(size=5))
        small = retain(table, obs, count=10)
        large = retain(table, obs, count=25)
        np.testing.assert_array_equal(large.indices[:10], small.indices)

    def test_stable_ties(self):
        values = np.array([[0.0, 1.0], [0.0, -1.0], [0.0, 1.0], [0.0, 0.0]])
        table = SimulationTable(("p", "s"), values, (0,), (1,))
        obs = ObservedStats(("s",), np.array([0.0]))
        r = retain(table, obs, count=2)
        # rows 0 and 1 tie at the cutoff; row order wins
        assert r.indices.tolist() == [3, 0]

    def test_no_shared_names(self):
        rng = np.random.default_rng(16)
        table = random_table(rng)
        obs = ObservedStats(("other",), np.array([1.0]))
        with pytest.raises(TableFormatError, match="no statistic"):
            retain(table, obs, count=5)

    def test_missing_observed_statistic(self):
        rng = np.random.default_rng(17)
        table = random_table(rng)
        obs = ObservedStats(("s0", "nope"), np.array([0.0, 1.0]))
        with pytest.raises(TableFormatError, match="nope"):
            retain(table, obs, count=5)

    def test_zero_count(self):
        rng = np.random.default_rng(18)
        table = random_table(rng)
        obs = ObservedStats(table.stat_names, np.zeros(5))
        with pytest.raises(ValueError):
            retain(table, obs, count=0)
        with pytest.raises(ValueError):
            retain(table, obs, count=101)

    def test_needs_count_or_tol(self):
        rng = np.random.default_rng(19)
        table = random_table(rng)
        obs = ObservedStats(table.stat_names, np.zeros(5))
        with pytest.raises(ValueError):
            retain(table, obs)

    def test_constant_stat_matching_obs_excluded(self, caplog):
        values = np.column_stack([np.arange(10.0), np.full(10, 3.0),
                                  np.arange(10.0)])
        table = SimulationTable(("p", "c", "s"), values, (0,), (1, 2))
        obs = ObservedStats(("c", "s"), np.array([3.0, 0.0]))
        r = retain(table, obs, count=3)
        assert r.stat_names == ("s",)

    def test_constant_stat_contradicting_obs_is_error(self):
        values = np.column_stack([np.arange(10.0), np.full(10, 3.0),
                                  np.arange(10.0)])
        table = SimulationTable(("p", "c", "s"), values, (0,), (1, 2))
        obs = ObservedStats(("c", "s"), np.array([4.0, 0.0]))
        with pytest.raises(NumericalError, match="cannot reproduce"):
            retain(table, obs, count=3)

    def test_unstandardized_distances(self):
        values = np.array([[0.0, 0.0], [0.0, 2.0], [0.0, 5.0]])
        table = SimulationTable(("p", "s"), values, (0,), (1,))
        obs = ObservedStats(("s",), np.array([0.0]))
        r = retain(table, obs, count=3, standardize=False)
        np.testing.assert_allclose(r.distances, [0.0, 2.0, 5.0])

    def test_external_standardizer(self):
        rng = np.random.default_rng(20)
        table = random_table(rng)
        obs = ObservedStats(table.stat_names, rng.normal(size=5))
        std = Standardizer(table.stat_names, np.zeros(5), np.ones(5))
        r = retain(table, obs, count=10, standardizer=std)
        raw = retain(table, obs, count=10, standardize=False)
        np.testing.assert_array_equal(r.indices, raw.indices)


class TestPruneCorrelated:
    def test_keep_all_at_one(self):
        rng = np.random.default_rng(21)
        table = random_table(rng)
        pruned, dropped = prune_correlated(table, 1.0)
        assert dropped == []
        assert pruned.stat_names == table.stat_names

    def test_duplicate_column_dropped(self):
        rng = np.random.default_rng(22)
        base = rng.normal(size=20)
        values = np.column_stack([np.arange(20.0), base, base,
                                  rng.normal(size=20)])
        table = SimulationTable(("p", "a", "b", "c"), values, (0,), (1, 2, 3))
        pruned, dropped = prune_correlated(table, 0.99)
        assert dropped == ["b"]
        assert pruned.stat_names == ("a", "c")

    def test_matches_brute_force_scan(self, norm_table):
        threshold = 0.95
        stats = norm_table.stats
        names = norm_table.stat_names
        corr = np.abs(np.corrcoef(stats, rowvar=False))
        kept = []
        for j in range(len(names)):
            if all(corr[j, k] <= threshold for k in kept):
                kept.append(j)
        pruned, _ = prune_correlated(norm_table, threshold)
        assert pruned.stat_names == tuple(names[j] for j in kept)
        # the toy statistics contain near-duplicates, so something must go
        assert len(pruned.stat_names) < len(names)

    def test_bad_threshold(self):
        rng = np.random.default_rng(23)
        with pytest.raises(ValueError):
            prune_correlated(random_table(rng), 0.0)

    def test_needs_rows(self):
        table = SimulationTable(("p", "s"), np.zeros((1, 2)), (0,), (1,))
        with pytest.raises(TableFormatError):
            prune_correlated(table, 0.9)
