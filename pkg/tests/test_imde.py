import numpy as np
import pytest

from odelearn.errors import ConfigError
from odelearn.fields import FuncField, LinearField
from odelearn.imde import (
    ImdeSeries,
    linear_imde_implicit_euler,
    linear_imde_series,
    linear_imde_solve,
    nonlinear_imde_terms,
    numeric_imde,
    richardson_series_terms,
    scheme_series_coefficients,
)
from odelearn.metrics import fit_loglog_slope
from odelearn.steppers import mode_from_config
from odelearn.systems import LINEAR_EXPERIMENT_SETTINGS, builtin
from odelearn.tape import matrix_exp


# modified-equation coefficient sets of the five linear benchmarks, written as
# per-equation rows [w1, w2, offset] (four published decimals)
REFERENCE_LINEAR_IMDE = {
    "saddle": [[1.1035, 1.0033, -2.1068], [1.0033, -0.9032, -0.1002]],
    "center": [[0.9609, 1.9568, 0.0], [-4.8920, -0.9959, 0.0]],
    "improper_node": [[0.8270, -3.7771, 0.0], [3.7771, -6.7272, 0.0]],
    "spiral": [[-0.9729, -1.0504, -0.8954], [2.1008, -0.9729, 5.1745]],
    "nodal_sink": [[-2.3366, 1.2741, -2.3366], [1.2741, -2.3366, 1.2741]],
}


def _mode_for(name):
    cfg = LINEAR_EXPERIMENT_SETTINGS[name]
    return cfg, mode_from_config(cfg["mode"], cfg["iterations"])


class TestImplicitEulerClosedForm:
    def test_zero_matrix(self):
        out = linear_imde_implicit_euler(np.zeros((2, 2)), None, h=0.3, order=5)
        assert np.all(out.a_h == 0.0) and np.all(out.c_h == 0.0)

    def test_order_zero_is_truth(self, rng):
        a = rng.normal(size=(3, 3))
        out = linear_imde_implicit_euler(a, None, h=0.2, order=0)
        assert np.allclose(out.a_h, a)

    def test_scalar_converged_value(self):
        out = linear_imde_implicit_euler(np.array([[1.0]]), None, h=0.1)
        assert out.a_h[0, 0] == pytest.approx((1 - np.exp(-0.1)) / 0.1, abs=1e-14)

    def test_series_approaches_closed_form(self):
        a = np.array([[-2.0, 1.0], [1.0, -2.0]])
        converged = linear_imde_implicit_euler(a, None, h=0.1)
        truncated = linear_imde_implicit_euler(a, None, h=0.1, order=25)
        assert np.abs(converged.a_h - truncated.a_h).max() < 1e-14

    def test_singular_with_offset_rejected(self):
        with pytest.raises(ConfigError):
            linear_imde_implicit_euler(np.zeros((2, 2)), [1.0, 0.0], h=0.1)


class TestLinearSolve:
    def test_saddle_forward_euler_row(self):
        cfg, mode = _mode_for("saddle")
        sys_ = builtin("saddle")
        out = linear_imde_solve(
            sys_.field.a, sys_.field.c, h=cfg["dt"], tableau=cfg["tableau"],
            mode=mode,
        )
        got = np.hstack([out.a_h, out.c_h[:, None]])
        assert np.abs(got - REFERENCE_LINEAR_IMDE["saddle"]).max() < 5e-4

    def test_spiral_fixed_point_row(self):
        cfg, mode = _mode_for("spiral")
        sys_ = builtin("spiral")
        out = linear_imde_solve(
            sys_.field.a, sys_.field.c, h=cfg["dt"], tableau=cfg["tableau"],
            mode=mode,
        )
        got = np.hstack([out.a_h, out.c_h[:, None]])
        assert np.abs(got - REFERENCE_LINEAR_IMDE["spiral"]).max() < 5e-4

    def test_nodal_sink_newton_matches_closed_form(self):
        # a single Newton iteration solves the linear stage equations, so
        # the scheme-consistent solve must equal the implicit Euler series
        cfg, mode = _mode_for("nodal_sink")
        sys_ = builtin("nodal_sink")
        solved = linear_imde_solve(
            sys_.field.a, sys_.field.c, h=cfg["dt"], tableau=cfg["tableau"],
            mode=mode,
        )
        closed = linear_imde_implicit_euler(sys_.field.a, sys_.field.c, h=cfg["dt"])
        assert np.abs(solved.a_h - closed.a_h).max() < 1e-9
        assert np.abs(solved.c_h - closed.c_h).max() < 1e-9
        got = np.hstack([solved.a_h, solved.c_h[:, None]])
        assert np.abs(got - REFERENCE_LINEAR_IMDE["nodal_sink"]).max() < 5e-4

    def test_scheme_consistency_residual(self, rng):
        from odelearn.imde import scheme_linear_map

        a = rng.normal(size=(2, 2))
        mode = mode_from_config("fixed_point", 2)
        out = linear_imde_solve(a, None, h=0.05, tableau="implicit_midpoint",
                                mode=mode)
        recovered = scheme_linear_map("implicit_midpoint", mode, 0.05, out.a_h)
        assert np.abs(recovered - matrix_exp(a, 0.05)).max() <= 1e-10


class TestLinearSeries:
    @pytest.mark.parametrize("name", sorted(REFERENCE_LINEAR_IMDE))
    def test_reference_rows_at_order3(self, name):
        cfg, mode = _mode_for(name)
        sys_ = builtin(name)
        out = linear_imde_series(
            sys_.field.a, sys_.field.c, h=cfg["dt"], tableau=cfg["tableau"],
            mode=mode, order=3,
        )
        got = np.hstack([out.a_h, out.c_h[:, None]])
        assert np.abs(got - REFERENCE_LINEAR_IMDE[name]).max() < 5e-4

    def test_series_matches_implicit_euler_closed_form(self, rng):
        a = rng.normal(size=(2, 2))
        series = linear_imde_series(
            a, None, h=0.06, tableau="implicit_euler",
            mode=mode_from_config("exact"), order=6,
        )
        closed = linear_imde_implicit_euler(a, None, h=0.06, order=6)
        assert np.abs(series.a_h - closed.a_h).max() < 1e-12

    def test_step_map_probe_coefficients(self):
        # fixed-point implicit Euler truncates the geometric series
        c = scheme_series_coefficients(
            "implicit_euler", mode_from_config("fixed_point", 3), 3
        )
        assert np.allclose(c, np.ones(5))
        # trapezoidal with one substitution: quadratic truncation
        c = scheme_series_coefficients(
            "implicit_trapezoidal", mode_from_config("fixed_point", 1), 3
        )
        assert np.allclose(c, [1.0, 1.0, 0.5, 0.0, 0.0])


class TestTheorem32Gaps:
    """The unrolled scheme's linear IMDE approaches the exact scheme's as
    h shrinks, at order L+1 (fixed point) or 2^{L+1}-1 (Newton)."""

    A = np.array([[1.0, 1.0], [1.0, -1.0]])

    def _gap(self, mode, h, tableau="implicit_euler"):
        unrolled = linear_imde_solve(self.A, None, h=h, tableau=tableau, mode=mode)
        exact = linear_imde_solve(
            self.A, None, h=h, tableau=tableau, mode=mode_from_config("exact")
        )
        return np.abs(unrolled.a_h - exact.a_h).max()

    @pytest.mark.parametrize("iterations", [0, 1, 2])
    def test_fixed_point_gap_order(self, iterations):
        hs = [0.1, 0.05, 0.025, 0.0125]
        gaps = [self._gap(mode_from_config("fixed_point", iterations), h) for h in hs]
        slope = fit_loglog_slope(hs, gaps)
        assert abs(slope - (iterations + 1)) <= 0.25, slope

    def test_newton_l0_gap_order(self):
        hs = [0.1, 0.05, 0.025, 0.0125]
        gaps = [self._gap(mode_from_config("newton", 0), h) for h in hs]
        slope = fit_loglog_slope(hs, gaps)
        assert abs(slope - 1) <= 0.35, slope

    def test_newton_l1_exact_on_linear(self):
        # 2^{L+1}-1 = 3 is vacuous here: one Newton iteration already
        # solves the linear stage system, so the gap sits at solver noise
        assert self._gap(mode_from_config("newton", 1), 0.1) < 1e-9


class TestLemmaOrderP:
    @pytest.mark.parametrize(
        "tableau,p",
        [("implicit_euler", 1), ("implicit_midpoint", 2),
         ("implicit_trapezoidal", 2)],
    )
    def test_exact_scheme_imde_leading_order(self, tableau, p):
        a = np.array([[-1.0, -1.0], [2.0, -1.0]])
        hs = [0.1, 0.05, 0.025, 0.0125]
        gaps = []
        for h in hs:
            out = linear_imde_solve(
                a, None, h=h, tableau=tableau, mode=mode_from_config("exact")
            )
            gaps.append(np.abs(out.a_h - a).max())
        slope = fit_loglog_slope(hs, gaps)
        assert abs(slope - p) <= 0.25, slope


class TestNonlinearClosedForms:
    def test_linear_field_reduces_to_matrix_powers(self, rng):
        a = rng.normal(size=(2, 2))
        field = LinearField(a)
        y = rng.normal(size=2)
        for variant in ("implicit_euler_newton_L1", "implicit_euler_fp_L2"):
            series = nonlinear_imde_terms(field, variant)
            assert np.allclose(series.terms[1](y), -0.5 * a @ a @ y, atol=1e-12)
            assert np.allclose(
                series.terms[2](y), (a @ a @ a @ y) / 6.0, atol=1e-12
            )
            assert np.allclose(
                series.terms[3](y), -(a @ a @ a @ a @ y) / 24.0, atol=1e-12
            )

    def test_constant_field_has_no_corrections(self):
        field = FuncField(lambda y: y * 0.0 + np.array([2.0, -1.0]), 2)
        series = nonlinear_imde_terms(field, "implicit_euler_fp_L2")
        y = np.array([0.4, 0.8])
        for k in (1, 2, 3):
            assert np.allclose(series.terms[k](y), 0.0, atol=1e-14)

    def test_variants_share_low_orders_and_differ_at_three(self, pendulum_field):
        newt = nonlinear_imde_terms(pendulum_field, "implicit_euler_newton_L1")
        fp = nonlinear_imde_terms(pendulum_field, "implicit_euler_fp_L2")
        y = np.array([-0.8, -2.1])
        assert np.allclose(newt.terms[1](y), fp.terms[1](y), atol=1e-14)
        assert np.allclose(newt.terms[2](y), fp.terms[2](y), atol=1e-14)
        assert np.abs(newt.terms[3](y) - fp.terms[3](y)).max() > 1e-3

    def test_unknown_variant(self, pendulum_field):
        with pytest.raises(ConfigError):
            nonlinear_imde_terms(pendulum_field, "implicit_euler_fp_L9")

    def test_series_evaluation(self, pendulum_field):
        series = nonlinear_imde_terms(pendulum_field, "implicit_euler_fp_L2", h=0.05)
        y = np.array([-1.0, -2.0])
        manual = sum(0.05**k * series.terms[k](y) for k in range(4))
        assert np.allclose(series(y), manual, atol=1e-14)
        assert isinstance(series, ImdeSeries)


class TestNumericOracle:
    def test_depth_zero_returns_field(self, pendulum_field):
        g = numeric_imde(pendulum_field, "implicit_euler",
                         mode_from_config("fixed_point", 2), 0.05, depth=0)
        assert g is pendulum_field

    def test_depth_cap(self, pendulum_field):
        with pytest.raises(ConfigError):
            numeric_imde(pendulum_field, "implicit_euler",
                         mode_from_config("fixed_point", 2), 0.05, depth=5)

    def test_linear_agrees_with_series_truncation(self, rng):
        a = np.array([[-1.0, 2.0], [-2.0, -1.0]])
        field = LinearField(a)
        mode = mode_from_config("exact")
        pts = rng.normal(size=(4, 2))
        errs = []
        hs = [0.08, 0.04]
        for h in hs:
            g = numeric_imde(field, "implicit_euler", mode, h, depth=3)
            closed = linear_imde_implicit_euler(a, None, h=h, order=3).as_field()
            errs.append(np.abs(np.asarray(g(pts)) - closed(pts)).max())
        # agreement through h^3 terms: the residual drops at fourth order
        ratio = errs[0] / errs[1]
        assert 2.0**3.4 < ratio < 2.0**4.6

    def test_pendulum_agrees_with_closed_forms(self, pendulum_field):
        mode = mode_from_config("newton", 1)
        series = nonlinear_imde_terms(pendulum_field, "implicit_euler_newton_L1")
        x = np.array([-0.9, -1.7])
        errs = []
        hs = [0.04, 0.02]
        for h in hs:
            g = numeric_imde(pendulum_field, "implicit_euler", mode, h, depth=3)
            errs.append(np.abs(np.asarray(g(x)) - series(x, h=h)).max())
        ratio = errs[0] / errs[1]
        assert 2.0**3.4 < ratio < 2.0**4.6

    def test_f0_equals_field_at_h_zero_limit(self, pendulum_field, rng):
        # every oracle's leading term is the field itself
        x = rng.uniform(-1, 0, size=2)
        mode = mode_from_config("fixed_point", 2)
        vals = []
        for h in (0.02, 0.01):
            g = numeric_imde(pendulum_field, "implicit_euler", mode, h, depth=2)
            vals.append(np.asarray(g(x)))
        f0 = pendulum_field(x)
        # linear-in-h extrapolation to h=0 lands on f
        extrapolated = 2 * vals[1] - vals[0]
        assert np.abs(extrapolated - f0).max() < 5e-3
        series = nonlinear_imde_terms(pendulum_field, "implicit_euler_fp_L2")
        assert np.all(series.terms[0](x) == f0)


class TestRichardsonExtraction:
    @pytest.mark.parametrize(
        "variant,mode_spec",
        [
            ("implicit_euler_newton_L1", ("newton", 1)),
            ("implicit_euler_fp_L2", ("fixed_point", 2)),
        ],
    )
    def test_closed_forms_match_numeric_oracle(self, pendulum_field, variant,
                                               mode_spec):
        mode = mode_from_config(*mode_spec)
        series = nonlinear_imde_terms(pendulum_field, variant)
        rng = np.random.default_rng(5)
        pts = rng.uniform([-1.5, -4.0], [0.0, 0.0], size=(3, 2))
        for x in pts:
            coeffs = richardson_series_terms(
                lambda h: numeric_imde(pendulum_field, "implicit_euler", mode,
                                       h, depth=3),
                pendulum_field, x, h0=0.02,
            )
            for k in (1, 2, 3):
                closed = series.terms[k](x)
                rel = np.abs(closed - coeffs[k - 1]).max() / max(
                    1.0, np.abs(closed).max()
                )
                assert rel <= 1e-3, (variant, k, rel)
