"""Training losses with analytic gradients: MSE, NLPD, and Gaussian CRPS.

NLPD and CRPS act on a predictive Gaussian summarized by (mu, sigma).
During Monte-Carlo-dropout training those summaries are the sample mean and
sample standard deviation (k-1 denominator) over k stochastic replicas of
the same input, so the chain rule into each replica output is

    d mu / d yhat_j    = 1 / k
    d sigma / d yhat_j = (yhat_j - mu) / ((k - 1) sigma)

Sigma is clamped from below at SIGMA_FLOOR inside the losses; where the
clamp is active the sigma path carries no gradient.  All reductions are
the arithmetic mean over examples and outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

SIGMA_FLOOR = 1e-6

_LOG_2PI = float(np.log(2.0 * np.pi))
_SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))
_INV_SQRT_PI = float(1.0 / np.sqrt(np.pi))

LOSS_KINDS = ("mse", "nlpd", "crps")


@dataclass(frozen=True)
class LossValue:
    """Reduced loss with per-output breakdown and named input gradients.

    ``grads`` holds partials of ``total`` (reduction included): key
    ``yhat`` for MSE, ``mu``/``sigma`` for NLPD and CRPS, ``samples`` for
    the replica form.
    """

    total: float
    per_output: np.ndarray
    grads: dict[str, np.ndarray]


def _check_finite(**named):
    for name, arr in named.items():
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} contains non-finite values")


def _as_batch(*arrays):
    """Broadcast-check equal shapes and view each as (batch, outputs)."""
    shaped = [np.asarray(a, dtype=float) for a in arrays]
    shape = shaped[0].shape
    for a in shaped[1:]:
        if a.shape != shape:
            raise ValueError(f"shape mismatch: {a.shape} != {shape}")
    flat = [np.atleast_1d(a).reshape(-1, np.atleast_1d(a).shape[-1]) for a in shaped]
    return flat, shape


def _reduce(terms_2d: np.ndarray):
    total = float(terms_2d.mean())
    return total, terms_2d.mean(axis=0)


def mse(y, yhat) -> LossValue:
    """Mean squared error; gradient 2(yhat - y)/n."""
    (y2, yhat2), _ = _as_batch(y, yhat)
    _check_finite(y=y2, yhat=yhat2)
    resid = yhat2 - y2
    total, per_output = _reduce(resid * resid)
    grad = (2.0 / resid.size) * resid
    return LossValue(total, per_output, {"yhat": grad.reshape(np.shape(yhat))})


def nlpd_terms(y, mu, sigma):
    """Elementwise NLPD and its partials in mu and sigma (natural log)."""
    resid = y - mu
    var = sigma * sigma
    value = resid * resid / (2.0 * var) + 0.5 * np.log(var) + 0.5 * _LOG_2PI
    dmu = (mu - y) / var
    dsigma = 1.0 / sigma - resid * resid / (var * sigma)
    return value, dmu, dsigma


def crps_terms(y, mu, sigma):
    """Elementwise Gaussian CRPS and its partials in mu and sigma."""
    u = (y - mu) / sigma
    erf_term = special.erf(u / np.sqrt(2.0))
    gauss = _SQRT_2_OVER_PI * np.exp(-0.5 * u * u)
    value = sigma * (u * erf_term + gauss - _INV_SQRT_PI)
    dmu = -erf_term
    dsigma = gauss - _INV_SQRT_PI
    return value, dmu, dsigma


_TERMS = {"nlpd": nlpd_terms, "crps": crps_terms}


def _distribution_loss(kind: str, y, mu, sigma) -> LossValue:
    (y2, mu2, sigma2), _ = _as_batch(y, mu, sigma)
    _check_finite(y=y2, mu=mu2, sigma=sigma2)
    if np.any(sigma2 < SIGMA_FLOOR):
        raise ValueError(f"sigma below floor {SIGMA_FLOOR}; clamp upstream")
    value, dmu, dsigma = _TERMS[kind](y2, mu2, sigma2)
    total, per_output = _reduce(value)
    scale = 1.0 / value.size
    return LossValue(
        total,
        per_output,
        {
            "mu": (scale * dmu).reshape(np.shape(mu)),
            "sigma": (scale * dsigma).reshape(np.shape(sigma)),
        },
    )


def nlpd(y, mu, sigma) -> LossValue:
    """Negative log predictive density of a Gaussian, natural logarithm."""
    return _distribution_loss("nlpd", y, mu, sigma)


def crps(y, mu, sigma) -> LossValue:
    """Closed-form continuous ranked probability score of a Gaussian."""
    return _distribution_loss("crps", y, mu, sigma)


def mc_batch_stats(samples: np.ndarray):
    """Per-output mean and clamped sample std over the replica axis.

    ``samples`` is (..., k, r) with k >= 2; the statistics drop that axis.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim < 2:
        raise ValueError("samples must be at least (k, r)")
    k = samples.shape[-2]
    if k < 2:
        raise ValueError("need k >= 2 replicas for a standard deviation")
    mu = samples.mean(axis=-2)
    sigma = np.maximum(samples.std(axis=-2, ddof=1), SIGMA_FLOOR)
    return mu, sigma


def replica_loss(kind: str, y, samples: np.ndarray) -> LossValue:
    """NLPD or CRPS through the replica statistics, with sample gradients.

    ``samples`` is (..., k, r) stochastic outputs for the same inputs;
    ``y`` is (..., r).  The returned ``grads['samples']`` matches the
    samples shape and includes the mean reduction, so
    total(theta + eps*d) - total(theta) ~= eps * <grads, d>.
    """
    samples = np.asarray(samples, dtype=float)
    y = np.asarray(y, dtype=float)
    if samples.ndim < 2 or y.shape != samples.shape[:-2] + samples.shape[-1:]:
        raise ValueError(
            f"samples {samples.shape} and truths {y.shape} do not align"
        )
    _check_finite(y=y, samples=samples)
    k = samples.shape[-2]
    if k < 2:
        raise ValueError("need k >= 2 replicas")
    mu = samples.mean(axis=-2)
    raw_sigma = samples.std(axis=-2, ddof=1)
    sigma = np.maximum(raw_sigma, SIGMA_FLOOR)

    value, dmu, dsigma = _TERMS[kind](y, mu, sigma)
    total, per_output = _reduce(value.reshape(-1, value.shape[-1]))
    scale = 1.0 / value.size

    deviation = samples - mu[..., None, :]
    # sigma path is flat where the floor clamp is active
    sigma_active = raw_sigma >= SIGMA_FLOOR
    dsigma_dsample = np.where(
        sigma_active[..., None, :],
        deviation / ((k - 1) * sigma[..., None, :]),
        0.0,
    )
    sample_grads = scale * (
        dmu[..., None, :] / k + dsigma[..., None, :] * dsigma_dsample
    )
    return LossValue(total, per_output, {"samples": sample_grads})
