import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polyfractal.analysis import (
    FitError,
    FitResult,
    MissingSegmentError,
    NoLinearWindowError,
    NoPlateauError,
    WindowTooShortError,
    collapse_distance,
    collapse_transform,
    crossover_time,
    fit_report,
    log_slope,
    plateau_height,
    power_law_fit,
    ramp_rate,
    segment_relaxation,
)
from polyfractal.drive import NoiseModel, ProtocolSpec
from polyfractal.evolve import ExperimentConfig, RelaxationCurve, run_fibonacci_experiment


def grid(lo, hi, per_decade=40):
    return np.logspace(math.log10(lo), math.log10(hi), int(per_decade * math.log10(hi / lo)) + 1)


def broken_curve(t, gamma, tau, plateau=0.0):
    """Linear excess up to tau, logarithmic afterwards, continuous at tau."""
    E = np.where(t <= tau, gamma * t, gamma * tau * (1 + np.log(np.maximum(t / tau, 1.0))))
    return plateau + (1 - plateau) * E


class TestPlateau:
    def test_constant(self):
        t = grid(1, 1e4)
        c, T0 = 0.8, 0.04
        res = plateau_height((t, np.full_like(t, c * T0**2)))
        assert res.value == c * T0**2
        assert res.stderr == 0
        assert 10 <= res.window[0] <= res.window[1] <= 100

    def test_rising_curve_rejected(self):
        t = grid(1, 1e4)
        with pytest.raises(NoPlateauError):
            plateau_height((t, 1e-3 * t**0.5))

    def test_small_slope_accepted(self):
        t = grid(1, 1e4)
        plateau_height((t, 0.01 * t**0.03))

    def test_empty_window(self):
        with pytest.raises(NoPlateauError):
            plateau_height((np.array([1.0, 2.0]), np.array([0.1, 0.1])))


class TestRamp:
    def test_linear_synthetic(self):
        t = grid(1, 2e5)
        res = ramp_rate((t, 3e-6 * t), plateau=0.0)
        assert abs(res.value - 3e-6) < 1e-8
        assert res.stderr >= 0
        assert t[0] <= res.window[0] < res.window[1] <= t[-1]

    def test_on_top_of_plateau(self):
        t = grid(1, 1e6)
        p = 0.05
        R = broken_curve(t, 2e-5, 3e3, p)
        res = ramp_rate((t, R), plateau=p)
        assert res.value == pytest.approx(2e-5, rel=0.01)

    def test_no_window(self):
        t = grid(1, 1e4)
        with pytest.raises(NoLinearWindowError):
            ramp_rate((t, np.full_like(t, 0.01)), plateau=0.01)

    def test_all_fit_errors_share_base(self):
        for exc in (NoPlateauError, NoLinearWindowError, MissingSegmentError, WindowTooShortError):
            assert issubclass(exc, FitError) and issubclass(exc, ValueError)


class TestCrossover:
    def test_synthetic_break(self):
        t = grid(1, 1e6)
        res = crossover_time((t, broken_curve(t, 1e-5, 1e3)), plateau=0.0)
        assert 800 <= res.value <= 1250
        assert res.diagnostics["gamma"] == pytest.approx(1e-5, rel=0.01)

    def test_pure_ramp_has_no_log_segment(self):
        t = grid(1, 1e4)
        R = np.minimum(1e-4 * t, 1.0)
        with pytest.raises(MissingSegmentError, match="missing log segment"):
            crossover_time((t, R), plateau=0.0)

    def test_saturating_random_like_curve(self):
        t = grid(1, 1e5)
        R = 1 - np.exp(-2e-4 * t)
        with pytest.raises(MissingSegmentError):
            crossover_time((t, R), plateau=0.0)


class TestLogSlope:
    def test_explicit_window(self):
        t = grid(10, 1e8)
        res = log_slope((t, 0.2 + 0.01 * np.log(t)), window=(1e3, 1e8))
        assert res.value == pytest.approx(0.01, rel=0.05)

    def test_tail_of_broken_curve(self):
        t = grid(1, 1e7)
        res = log_slope((t, broken_curve(t, 1e-5, 1e3)), plateau=0.0)
        assert res.value == pytest.approx(0.01, rel=0.01)

    def test_window_too_short(self):
        t = grid(10, 1e8)
        with pytest.raises(WindowTooShortError):
            log_slope((t, 0.2 + 0.01 * np.log(t)), window=(1e3, 3e3))


class TestEquivarianceAndRecovery:
    @settings(max_examples=20, deadline=None)
    @given(st.floats(-3, 3), st.floats(2.5, 4.0), st.floats(-5.5, -3.5))
    def test_time_rescaling(self, log_lam, log_tau, log_gamma):
        lam, tau, gamma = 10**log_lam, 10**log_tau, 10**log_gamma
        # keep the whole log tail below the excess cap of 0.3
        gamma = min(gamma, 0.015 / tau)
        t = grid(1, 1e8)
        R = broken_curve(t, gamma, tau)
        a = crossover_time((t, R), plateau=0.0)
        b = crossover_time((lam * t, R), plateau=0.0)
        assert b.value == pytest.approx(lam * a.value, rel=1e-6)
        assert b.diagnostics["gamma"] == pytest.approx(a.diagnostics["gamma"] / lam, rel=1e-6)
        # noiseless recovery
        assert a.value == pytest.approx(tau, rel=0.01)
        assert a.diagnostics["gamma"] == pytest.approx(gamma, rel=0.01)

    def test_value_rescaling(self):
        t = grid(1, 1e5)
        a = ramp_rate((t, 1e-6 * t), plateau=0.0)
        b = ramp_rate((t, 2e-6 * t), plateau=0.0)
        assert b.value == pytest.approx(2 * a.value, rel=1e-9)

    def test_deterministic(self):
        t = grid(1, 1e6)
        R = broken_curve(t, 1e-5, 1e3) + 1e-5 * np.sin(np.arange(len(t)))
        a, b = crossover_time((t, R), plateau=0.0), crossover_time((t, R), plateau=0.0)
        assert a == b

    def test_segmentation_fields(self):
        t = grid(1, 1e6)
        seg = segment_relaxation((t, broken_curve(t, 1e-5, 1e3)), plateau=0.0)
        assert seg.tau_estimate == pytest.approx(1e3, rel=0.05)
        assert seg.ramp.stop <= seg.tail.start + 1


class TestPowerLaw:
    def test_exact(self):
        x = np.array([0.02, 0.04, 0.08, 0.16])
        res = power_law_fit(x, 3 * x**2)
        assert res.value == pytest.approx(2, abs=1e-12)
        assert res.diagnostics["prefactor"] == pytest.approx(3)

    def test_rejects_nonpositive(self):
        with pytest.raises(FitError):
            power_law_fit([1, 2], [1, 0])


class TestCollapse:
    def test_plateau_mode(self):
        t = grid(1, 100)
        curves = [(t, np.full_like(t, 0.7 * T0**2)) for T0 in (0.02, 0.08)]
        out = collapse_transform(curves, "plateau", 2.0, params=[(0, 0.02), (0, 0.08)])
        assert np.allclose(out[0].y, 0.7) and np.allclose(out[1].y, 0.7)
        assert np.nanmax(collapse_distance(out)) == pytest.approx(0)

    def test_identity(self):
        t = grid(1, 100)
        R = 1e-3 * t
        (p,) = collapse_transform([(t, R)], "plateau", 0.0, params=[(0.3, 0.7)])
        (r,) = collapse_transform([(t, R)], "ramp", params=[(1.0, 1.0)])
        assert np.array_equal(p.x, t) and np.array_equal(p.y, R)
        assert np.array_equal(r.x, t) and np.array_equal(r.y, R)

    def test_ramp_mode_collapses_scaling_family(self):
        t = grid(1, 1e9)
        params = [(0.01, 0.04), (0.04, 0.04), (0.02, 0.16)]
        curves = [(t, broken_curve(t, 200 * (e * T) ** 2, 0.5 / (e * T))) for e, T in params]
        out = collapse_transform(curves, "ramp", params=params)
        assert np.nanmax(collapse_distance(out, [(1e-3, 10)] * 3)) < 1e-2

    def test_metadata_params(self):
        cfg = ExperimentConfig(L=4, proto=ProtocolSpec(1, 1, 0.1), noise=NoiseModel("fibonacci", 0.05), max_depth=10)
        (c,) = collapse_transform([run_fibonacci_experiment(cfg)], "ramp")
        assert c.label == "eps=0.05,T0=0.1"
        with pytest.raises(ValueError):
            collapse_transform([(np.ones(3), np.ones(3))], "ramp")
        with pytest.raises(ValueError):
            collapse_transform([], "sideways")

    def test_disjoint_windows_are_nan(self):
        t = grid(1, 100)
        out = collapse_transform([(t, t), (t, t)], "plateau", 0.0, params=[(0, 1), (0, 1)])
        assert np.isnan(collapse_distance(out, [(1, 2), (3, 4)])[0, 1])


class TestReport:
    def test_json(self):
        ok = FitResult(1.5, 0.1, (1.0, 2.0), {"n_points": 3})
        text = fit_report({"gamma": ok, "tau": MissingSegmentError("missing log segment")}, config_hash="abc")
        data = json.loads(text)
        assert data["gamma"]["value"] == 1.5
        assert "missing log segment" in data["tau"]["error"]
        assert data["config_hash"] == "abc"

    def test_negative_stderr_rejected(self):
        with pytest.raises(ValueError):
            FitResult(1.0, -1.0, (0, 1))

    def test_relaxation_curve_input(self):
        curve = RelaxationCurve(times=grid(1, 1e3), values={"R_X1": np.full(121, 0.02)})
        assert plateau_height(curve).value == 0.02
