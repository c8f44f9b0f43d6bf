"""Interval critical values, empirical coverage, and the calibration score."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from thermorom.calibration import (
    CalibrationReport,
    IntervalSet,
    calibration_error,
    critical_value,
    empirical_coverage,
    interval_bounds,
)


def inverse_erf_oracle(pi):
    # independent numerical inverse of the error function
    return float(np.sqrt(2.0) * special.erfinv(pi))


def test_critical_value_zero_interval():
    assert critical_value(0.0) == 0.0


def test_critical_value_95_matches_inverse_erf_oracle():
    z = critical_value(0.95)
    assert abs(z - inverse_erf_oracle(0.95)) < 1e-9
    assert z == pytest.approx(1.9599639845400514, abs=1e-9)


def test_critical_value_one_sigma_coverage():
    # 0.6826895 is the +/-1 sigma coverage of a standard normal
    assert critical_value(0.6826895) == pytest.approx(1.0, abs=1e-6)


def test_critical_value_rejects_out_of_range():
    for bad in (1.0, 1.5, -0.01):
        with pytest.raises(ValueError, match="prediction interval"):
            critical_value(bad)


def test_critical_value_inverts_erf_over_grid():
    for pi in np.linspace(0.0, 0.999, 41):
        z = critical_value(pi)
        assert abs(math.erf(z / math.sqrt(2.0)) - pi) < 1e-9


def test_interval_bounds_degenerate_sigma_collapse():
    lo, hi = interval_bounds(3.5, 0.0, 0.95)
    assert lo == hi == 3.5


def test_interval_bounds_standard_normal():
    lo, hi = interval_bounds(0.0, 1.0, 0.95)
    assert hi == pytest.approx(1.95996, abs=1e-5)
    assert lo == pytest.approx(-1.95996, abs=1e-5)


def test_interval_bounds_widen_monotonically_and_stay_symmetric():
    mu, sigma = 1.25, 0.7
    widths = []
    for pi in IntervalSet().levels:
        lo, hi = interval_bounds(mu, sigma, pi)
        assert (lo + hi) / 2 == pytest.approx(mu, abs=1e-12)
        widths.append(hi - lo)
    assert np.all(np.diff(widths) > 0)


def test_interval_bounds_reject_negative_sigma():
    with pytest.raises(ValueError, match="non-negative"):
        interval_bounds(0.0, -1.0, 0.5)


def test_empirical_coverage_all_inside():
    truths = np.array([0.0, 0.5, -0.5])
    assert empirical_coverage(truths, truths - 1.0, truths + 1.0) == 1.0


def test_empirical_coverage_bound_ties_not_counted():
    # strict inequalities: a truth sitting exactly on a bound is outside
    truths = np.array([1.0, 0.0])
    lower = np.array([0.0, -1.0])
    upper = np.array([1.0, 1.0])
    assert empirical_coverage(truths, lower, upper) == 0.5


def test_empirical_coverage_standard_normal_binomial(rng):
    n = 100_000
    truths = rng.standard_normal(n)
    z = critical_value(0.95)
    covered = empirical_coverage(truths, np.full(n, -z), np.full(n, z))
    se = np.sqrt(0.95 * 0.05 / n)
    assert abs(covered - 0.95) < 3 * se


def test_empirical_coverage_rejects_empty_and_misaligned():
    with pytest.raises(ValueError, match="at least one"):
        empirical_coverage(np.array([]), np.array([]), np.array([]))
    with pytest.raises(ValueError, match="align"):
        empirical_coverage(np.zeros(3), np.zeros(2), np.zeros(3))


def test_score_is_sum_of_absolute_coverage_gaps(rng):
    n, r = 400, 3
    mu = rng.standard_normal((n, r))
    sigma = rng.uniform(0.5, 2.0, (n, r))
    truths = mu + 1.3 * sigma * rng.standard_normal((n, r))
    report = calibration_error(mu, sigma, truths)
    gaps = np.abs(report.observed - report.expected[None, :])
    np.testing.assert_allclose(report.per_output_score, gaps.sum(axis=1), atol=1e-12)
    assert report.score == pytest.approx(gaps.sum(), abs=1e-12)
    # recompute one cell by hand
    z = critical_value(report.expected[3])
    inside = (mu[:, 1] - z * sigma[:, 1] < truths[:, 1]) & (
        truths[:, 1] < mu[:, 1] + z * sigma[:, 1]
    )
    assert report.observed[1, 3] == pytest.approx(inside.mean(), abs=1e-12)


def test_degenerate_sigma_scores_exactly_104_9():
    # sigma = 0 and strict bounds: zero coverage everywhere, so the score is
    # r * sum(levels) = 10 * 10.49 = 104.9 for the default interval set
    n, r = 50, 10
    mu = np.zeros((n, r))
    truths = np.ones((n, r))
    report = calibration_error(mu, np.zeros((n, r)), truths)
    assert np.all(report.observed == 0.0)
    assert report.score == pytest.approx(104.9, abs=1e-9)


def test_exact_gaussian_predictor_scores_below_035(rng):
    # truths drawn from the predicted distributions; binomial fluctuation
    # at n=1e5 keeps the 10-output score well under 0.35
    n, r = 100_000, 10
    mu = rng.standard_normal((n, r))
    sigma = rng.uniform(0.2, 3.0, (n, r))
    truths = mu + sigma * rng.standard_normal((n, r))
    report = calibration_error(mu, sigma, truths)
    assert report.score < 0.35


@settings(deadline=None, max_examples=25)
@given(scale=st.floats(min_value=1.0, max_value=5.0))
def test_sigma_scaling_weakly_increases_coverage(scale):
    rng = np.random.default_rng(7)
    n, r = 600, 2
    mu = rng.standard_normal((n, r))
    sigma = rng.uniform(0.3, 1.5, (n, r))
    truths = mu + sigma * rng.standard_normal((n, r))
    base = calibration_error(mu, sigma, truths)
    wider = calibration_error(mu, scale * sigma, truths)
    assert np.all(wider.observed >= base.observed)


def test_report_validation():
    levels = IntervalSet().levels
    with pytest.raises(ValueError, match="outputs, levels"):
        CalibrationReport(levels, np.zeros(20), np.zeros(1), 0.0)
    with pytest.raises(ValueError, match="lie in"):
        CalibrationReport(levels, np.full((1, 20), 1.5), np.zeros(1), 0.0)


def test_calibration_error_rejects_bad_inputs(rng):
    mu = rng.standard_normal((10, 2))
    with pytest.raises(ValueError, match="share shape"):
        calibration_error(mu, np.ones((10, 2)), np.zeros((10, 3)))
    with pytest.raises(ValueError, match="non-negative"):
        calibration_error(mu, -np.ones((10, 2)), np.zeros((10, 2)))


def test_interval_set_defaults_and_validation():
    levels = IntervalSet().levels
    assert len(levels) == 20
    np.testing.assert_allclose(levels[:19], np.arange(1, 20) * 0.05, atol=1e-12)
    assert levels[-1] == 0.99
    with pytest.raises(ValueError, match="ascending"):
        IntervalSet(np.array([0.5, 0.3]))
    with pytest.raises(ValueError, match="inside"):
        IntervalSet(np.array([0.0, 0.5]))
    with pytest.raises(ValueError, match="inside"):
        IntervalSet(np.array([0.5, 1.0]))


def test_curve_csv_round_trip(tmp_path, rng):
    n, r = 300, 4
    mu = rng.standard_normal((n, r))
    sigma = rng.uniform(0.5, 2.0, (n, r))
    truths = mu + sigma * rng.standard_normal((n, r))
    report = calibration_error(mu, sigma, truths)
    path = tmp_path / "curve.csv"
    report.save_curve_csv(path, {"config_hash": "abc123"})
    loaded, annotations = CalibrationReport.load_curve_csv(path)
    assert annotations["config_hash"] == "abc123"
    np.testing.assert_allclose(loaded.expected, report.expected, atol=1e-12)
    np.testing.assert_allclose(loaded.observed, report.observed, atol=1e-12)
    assert loaded.score == pytest.approx(report.score, abs=1e-9)


def test_summary_reports_score_and_worst_level(rng):
    mu = np.zeros((200, 2))
    sigma = np.ones((200, 2))
    truths = rng.standard_normal((200, 2))
    report = calibration_error(mu, sigma, truths)
    text = report.summary()
    assert f"{report.score:.4f}" in text
    assert "output 1" in text and "output 2" in text
    assert "worst level" in text
