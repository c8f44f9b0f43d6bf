"""Loss values against independent oracles, plus analytic-gradient checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from thermorom.losses import (
    SIGMA_FLOOR,
    crps,
    mc_batch_stats,
    mse,
    nlpd,
    replica_loss,
)

finite_floats = st.floats(-20.0, 20.0)
sigmas = st.floats(0.05, 8.0)


def crps_quadrature(y, mu, sigma):
    """Numeric ∫ (F(t) - step(t - y))^2 dt oracle for the closed form."""

    def integrand(t):
        return (stats.norm.cdf(t, mu, sigma) - (t >= y)) ** 2

    lo = min(mu - 14 * sigma, y - 14 * sigma)
    hi = max(mu + 14 * sigma, y + 14 * sigma)
    value, _ = integrate.quad(integrand, lo, hi, points=[y], limit=300)
    return value


# ---------------------------------------------------------------- known values


def test_mse_known_values():
    assert mse([1.0, -2.0], [1.0, -2.0]).total == 0.0
    out = mse([0.0], [2.0])
    assert out.total == 4.0
    assert out.grads["yhat"][0] == 4.0


def test_nlpd_known_values():
    assert nlpd([0.0], [0.0], [1.0]).total == pytest.approx(
        0.9189385332046727, abs=1e-12
    )
    assert nlpd([1.0], [0.0], [1.0]).total == pytest.approx(
        1.4189385332046727, abs=1e-12
    )


def test_crps_known_values():
    assert crps([0.0], [0.0], [1.0]).total == pytest.approx(
        0.23369497725510913, abs=1e-12
    )
    # far-tail asymptote: |y - mu| - sigma/sqrt(pi)
    assert crps([10.0], [0.0], [1.0]).total == pytest.approx(
        10.0 - 1.0 / np.sqrt(np.pi), rel=1e-12
    )


# ---------------------------------------------------------------- oracles


def test_nlpd_matches_logpdf_substitution():
    rng = np.random.default_rng(11)
    y = rng.normal(0, 3, 300)
    mu = rng.normal(0, 3, 300)
    sigma = rng.uniform(0.05, 5.0, 300)
    expected = -stats.norm.logpdf(y, mu, sigma)
    got = nlpd(y.reshape(-1, 1), mu.reshape(-1, 1), sigma.reshape(-1, 1))
    np.testing.assert_allclose(got.per_output * 300, expected.sum(), rtol=1e-10)
    for yi, mi, si, ei in zip(y[:50], mu[:50], sigma[:50], expected[:50]):
        assert nlpd([yi], [mi], [si]).total == pytest.approx(ei, rel=1e-10)


def test_crps_matches_quadrature_oracle():
    rng = np.random.default_rng(12)
    for _ in range(40):
        y = rng.normal(0, 3)
        mu = rng.normal(0, 3)
        sigma = rng.uniform(0.1, 4.0)
        expected = crps_quadrature(y, mu, sigma)
        assert crps([y], [mu], [sigma]).total == pytest.approx(expected, abs=1e-8)


# ---------------------------------------------------------------- gradients


def central_diff(f, x, eps):
    return (f(x + eps) - f(x - eps)) / (2 * eps)


@pytest.mark.parametrize("loss_fn", [nlpd, crps])
def test_distribution_loss_gradients_match_finite_differences(loss_fn):
    rng = np.random.default_rng(13)
    for _ in range(60):
        y = rng.normal(0, 2, (3, 2))
        mu = rng.normal(0, 2, (3, 2))
        sigma = rng.uniform(0.2, 3.0, (3, 2))
        out = loss_fn(y, mu, sigma)
        i, j = rng.integers(0, 3), rng.integers(0, 2)
        eps = 1e-6

        def bump_mu(v):
            m = mu.copy()
            m[i, j] = v
            return loss_fn(y, m, sigma).total

        def bump_sigma(v):
            s = sigma.copy()
            s[i, j] = v
            return loss_fn(y, mu, s).total

        fd_mu = central_diff(bump_mu, mu[i, j], eps)
        fd_sigma = central_diff(bump_sigma, sigma[i, j], eps)
        assert out.grads["mu"][i, j] == pytest.approx(fd_mu, rel=1e-6, abs=1e-10)
        assert out.grads["sigma"][i, j] == pytest.approx(fd_sigma, rel=1e-6, abs=1e-10)


def test_mse_gradient_matches_finite_differences():
    rng = np.random.default_rng(14)
    y = rng.normal(size=(4, 3))
    yhat = rng.normal(size=(4, 3))
    out = mse(y, yhat)
    eps = 1e-7
    for i, j in [(0, 0), (2, 1), (3, 2)]:
        bumped = yhat.copy()
        bumped[i, j] += eps
        fd = (mse(y, bumped).total - out.total) / eps
        assert out.grads["yhat"][i, j] == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("kind", ["nlpd", "crps"])
def test_replica_gradients_match_directional_finite_differences(kind):
    rng = np.random.default_rng(15)
    for _ in range(20):
        samples = rng.normal(0, 1.5, (4, 6, 3))  # (batch, k, outputs)
        y = rng.normal(0, 1.5, (4, 3))
        out = replica_loss(kind, y, samples)
        direction = rng.normal(size=samples.shape)
        eps = 1e-6
        plus = replica_loss(kind, y, samples + eps * direction).total
        minus = replica_loss(kind, y, samples - eps * direction).total
        fd = (plus - minus) / (2 * eps)
        analytic = float(np.sum(out.grads["samples"] * direction))
        assert analytic == pytest.approx(fd, rel=1e-5, abs=1e-10)


# ---------------------------------------------------------------- replica stats


def test_mc_batch_stats_two_replicas():
    mu, sigma = mc_batch_stats(np.array([[0.0], [2.0]]))
    assert mu[0] == 1.0
    assert sigma[0] == pytest.approx(np.sqrt(2.0), rel=1e-15)


def test_mc_batch_stats_converges_to_population_moments():
    rng = np.random.default_rng(16)
    samples = rng.normal(3.0, 4.0, (200_000, 1))
    mu, sigma = mc_batch_stats(samples)
    assert mu[0] == pytest.approx(3.0, abs=0.05)
    assert sigma[0] == pytest.approx(4.0, rel=0.02)


def test_identical_replicas_hit_sigma_floor():
    samples = np.full((1, 5, 2), 3.25)
    y = np.full((1, 2), 3.25) + 1e-7
    out = replica_loss("nlpd", y, samples)
    expected = nlpd(y, np.full((1, 2), 3.25), np.full((1, 2), SIGMA_FLOOR))
    assert out.total == pytest.approx(expected.total, rel=1e-12)
    # clamped sigma path carries no gradient: only the uniform mu path remains
    grads = out.grads["samples"]
    assert np.any(grads != 0.0)
    np.testing.assert_allclose(grads - grads[:, :1, :], 0.0, atol=1e-24)


def test_replica_loss_rejects_single_replica():
    with pytest.raises(ValueError, match="k >= 2"):
        replica_loss("nlpd", np.zeros((1, 2)), np.zeros((1, 1, 2)))
    with pytest.raises(ValueError):
        mc_batch_stats(np.zeros((1, 1, 2)))


def test_replica_loss_shape_check():
    with pytest.raises(ValueError, match="align"):
        replica_loss("crps", np.zeros((2, 3)), np.zeros((2, 4, 2)))


# ---------------------------------------------------------------- guards


def test_sigma_below_floor_rejected():
    with pytest.raises(ValueError, match="floor"):
        nlpd([0.0], [0.0], [0.0])
    with pytest.raises(ValueError, match="floor"):
        crps([0.0], [0.0], [SIGMA_FLOOR / 2])


def test_non_finite_inputs_rejected():
    with pytest.raises(ValueError, match="non-finite"):
        mse([np.nan], [0.0])
    with pytest.raises(ValueError, match="non-finite"):
        nlpd([0.0], [np.inf], [1.0])


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shape mismatch"):
        mse(np.zeros(3), np.zeros(4))


# ---------------------------------------------------------------- properties


@given(finite_floats, finite_floats, sigmas)
def test_crps_is_non_negative(y, mu, sigma):
    assert crps([y], [mu], [sigma]).total >= 0.0


@given(finite_floats, finite_floats, sigmas, st.floats(-10.0, 10.0))
def test_nlpd_is_translation_invariant(y, mu, sigma, shift):
    a = nlpd([y], [mu], [sigma]).total
    b = nlpd([y + shift], [mu + shift], [sigma]).total
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


@given(finite_floats, finite_floats, sigmas, st.floats(0.5, 4.0))
@settings(max_examples=60)
def test_crps_scales_linearly(y, mu, sigma, c):
    base = crps([y], [mu], [sigma]).total
    scaled = crps([c * y], [c * mu], [c * sigma]).total
    assert scaled == pytest.approx(c * base, rel=1e-9, abs=1e-9)


def test_per_output_breakdown_averages_to_total():
    rng = np.random.default_rng(17)
    y = rng.normal(size=(8, 5))
    mu = rng.normal(size=(8, 5))
    sigma = rng.uniform(0.2, 2.0, (8, 5))
    out = nlpd(y, mu, sigma)
    assert out.per_output.shape == (5,)
    assert out.total == pytest.approx(out.per_output.mean(), rel=1e-12)
