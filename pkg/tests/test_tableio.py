import numpy as np
import pytest

from abckit.errors import TableFormatError
from abckit.tableio import (ObservedStats, OutputTag, SimulationTable,
                            format_value, parse_param_spec, read_observed,
                            read_table, tagged_filename, write_observed,
                            write_tagged, write_table)

SIM_TEXT = """mu sigma2 mean var median min max range Q1 Q3
0.5 1.0 0.48 0.97 0.51 -2.1 2.9 5.0 -0.2 1.1
-0.1 2.0 -0.12 2.05 -0.15 -3.5 3.1 6.6 -1.0 0.9
0.0 0.5 0.02 0.49 0.01 -1.6 1.7 3.3 -0.4 0.5
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestParamSpec:
    def test_range(self):
        assert parse_param_spec("1-2") == (0, 1)

    def test_mixed(self):
        assert parse_param_spec("1,3-4") == (0, 2, 3)

    def test_empty_is_error(self):
        with pytest.raises(TableFormatError):
            parse_param_spec("")

    def test_reversed_range_is_error(self):
        with pytest.raises(TableFormatError):
            parse_param_spec("4-2")


class TestReadTable:
    def test_layout(self, tmp_path):
        t = read_table(write(tmp_path, "sim.txt", SIM_TEXT), "1-2")
        assert t.param_idx == (0, 1)
        assert len(t.stat_names) == 8
        assert t.n_rows == 3
        assert t.param_names == ("mu", "sigma2")

    def test_empty_body_is_valid(self, tmp_path):
        t = read_table(write(tmp_path, "e.txt", "a b c\n"), "1")
        assert t.n_rows == 0

    def test_max_rows(self, tmp_path):
        t = read_table(write(tmp_path, "sim.txt", SIM_TEXT), "1-2", max_rows=2)
        assert t.n_rows == 2

    def test_ragged_row_reports_line(self, tmp_path):
        p = write(tmp_path, "bad.txt", "a b\n1 2\n1 2 3\n")
        with pytest.raises(TableFormatError, match="3"):
            read_table(p, "1")

    def test_non_numeric_cell(self, tmp_path):
        p = write(tmp_path, "bad.txt", "a b\n1 x\n")
        with pytest.raises(TableFormatError, match="non-numeric"):
            read_table(p, "1")

    def test_nonfinite_rows_dropped_with_count(self, tmp_path):
        p = write(tmp_path, "nan.txt", "a b\n1 2\nnan 3\n4 inf\n5 6\n")
        t = read_table(p, "1")
        assert t.n_rows == 2
        assert t.dropped_rows == 2

    def test_out_of_range_param_column(self, tmp_path):
        p = write(tmp_path, "sim.txt", SIM_TEXT)
        with pytest.raises(TableFormatError):
            read_table(p, "11")

    def test_two_models_same_arity(self, tmp_path):
        p = write(tmp_path, "sim.txt", SIM_TEXT)
        a = read_table(p, "1-2")
        b = read_table(p, "1-2")
        assert a.param_names == b.param_names


class TestReadObserved:
    def test_single(self, tmp_path):
        p = write(tmp_path, "normal.obs",
                  "mean var median min max range Q1 Q3\n"
                  "0.102 1.14 0.0788 -2.02 3.16 5.18 -0.598 0.799\n")
        obs = read_observed(p)
        assert len(obs) == 1
        np.testing.assert_allclose(
            obs[0].values,
            [0.102, 1.14, 0.0788, -2.02, 3.16, 5.18, -0.598, 0.799])

    def test_two_value_lines(self, tmp_path):
        p = write(tmp_path, "o.obs", "a b\n1 2\n3 4\n")
        assert len(read_observed(p)) == 2

    def test_header_only_is_error(self, tmp_path):
        p = write(tmp_path, "o.obs", "a b\n")
        with pytest.raises(TableFormatError):
            read_observed(p)

    def test_arity_mismatch(self, tmp_path):
        p = write(tmp_path, "o.obs", "a b\n1 2 3\n")
        with pytest.raises(TableFormatError):
            read_observed(p)


class TestFormat:
    def test_six_significant_digits(self):
        assert format_value(1.2345678) == "1.23457"

    def test_scientific_small(self):
        assert format_value(9.79e-13) == "9.79000e-13"

    def test_scientific_large(self):
        assert "e+06" in format_value(1.5e6)

    def test_plain_in_window(self):
        assert format_value(0.000123456) == "0.000123456"
        assert format_value(123456.7) == "123457"

    def test_zero(self):
        assert format_value(0.0) == "0"


class TestTaggedFiles:
    def test_best_sims_name(self):
        assert (tagged_filename("ABC_GLM", OutputTag.BEST_SIMS, 0, 0)
                == "ABC_GLM_model0_BestSimsParamStats_Obs0.txt")

    def test_random_validation_drops_obs(self):
        assert (tagged_filename("ABC_GLM", OutputTag.RANDOM_VALIDATION, 0, 0)
                == "ABC_GLM_model0_RandomValidation.txt")

    def test_retained_validation_keeps_obs(self):
        assert (tagged_filename("ABC_GLM", OutputTag.RETAINED_VALIDATION, 0, 1)
                == "ABC_GLM_model0_RetainedValidation_Obs1.txt")

    def test_joint_posterior_indices(self):
        assert (tagged_filename("ABC_GLM", OutputTag.JOINT_POSTERIOR, 0, 0,
                                joint_params=(1, 2))
                == "ABC_GLM_model0_jointPosterior_1_2_Obs0.txt")

    def test_model_fit_spans_models(self):
        assert (tagged_filename("ABC_GLM", OutputTag.MODEL_FIT, 0, 0)
                == "ABC_GLM_modelFit_Obs0.txt")

    def test_tag_verbatim(self):
        for tag in OutputTag:
            assert tag.value in tagged_filename("p", tag, 0, 0)

    def test_empty_payload_rejected(self, tmp_path):
        with pytest.raises(TableFormatError):
            write_tagged("p", OutputTag.MODEL_FIT, (["a"], []),
                         directory=tmp_path)


class TestRoundTrip:
    def test_write_then_read_six_digits(self, tmp_path):
        rng = np.random.default_rng(7)
        values = rng.normal(size=(20, 4)) * 10.0 ** rng.integers(-8, 8, (20, 4))
        t = SimulationTable(("p1", "s1", "s2", "s3"), values, (0,), (1, 2, 3))
        path = write_tagged("roundtrip", OutputTag.BEST_SIMS, t,
                            model_index=0, obs_index=0, directory=tmp_path)
        back = read_table(path, "1")
        assert back.names == t.names
        np.testing.assert_allclose(back.values, t.values, rtol=1e-5)

    def test_permuted_observation_matches_by_name(self, tmp_path):
        obs = ObservedStats(("b", "a"), np.array([2.0, 1.0]))
        p = write_observed(tmp_path / "o.obs", obs)
        back = read_observed(p)[0]
        assert back.vector(["a", "b"]).tolist() == [1.0, 2.0]

    def test_write_table_plain(self, tmp_path):
        t = SimulationTable(("a", "b"), np.array([[1.0, 2.0]]), (0,), (1,))
        path = write_table(tmp_path / "t.txt", t)
        assert read_table(path, "1").values.tolist() == [[1.0, 2.0]]


class TestInvariants:
    def test_duplicate_names_rejected(self):
        with pytest.raises(TableFormatError):
            SimulationTable(("a", "a"), np.zeros((1, 2)), (0,), (1,))

    def test_param_stat_overlap_rejected(self):
        with pytest.raises(TableFormatError):
            SimulationTable(("a", "b"), np.zeros((1, 2)), (0,), (0, 1))

    def test_values_locked(self):
        t = SimulationTable(("a", "b"), np.zeros((1, 2)), (0,), (1,))
        with pytest.raises(ValueError):
            t.values[0, 0] = 1.0

    def test_obs_name_value_mismatch(self):
        with pytest.raises(TableFormatError):
            ObservedStats(("a",), np.array([1.0, 2.0]))
