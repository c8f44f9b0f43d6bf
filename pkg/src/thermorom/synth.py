"""Synthetic driver histories and density grids for end-to-end testing.

The real assimilative density archive is access-gated, so this generator
produces structurally similar data: a slow solar cycle with 27-day rotation
ripple on F10 (S10/M10/Y10 as noisy linear functions of it), Poisson storm
injections on the ap ladder with Dst anti-correlated during storms, and a
density field driven by those histories.

The density formula is deliberately learnable from the lagged feature sets:
its storm response follows an exponentially filtered ap history (default
12 h time constant), so models seeing only instantaneous ap/Dst face an
irreducible error that the lagged sets can remove.  The log-density of a
cell is

    log10 rho = b(t) - (alt - alt_floor) * k(t, lon, lat)
    b = BASE_LEVEL + BASE_SOLAR * f + BASE_STORM * s
    k = K_BASE * (1 - K_SOLAR * f - K_DIURNAL * bulge - K_ANNUAL * season
                  - K_STORM * s * sin(lat)^2),  clipped at K_MIN_FACTOR
    f = clip((F10 - 65) / 200, 0, 1)
    s = clip(A / 300, 0, 1),  A = exponential filter of ap, tau = decay
    bulge = (1 + cos(2 pi (lst - 14) / 24)) / 2,  lst = ut + lon / 15
    season = sin(2 pi doy / 365.25) * sin(lat)

plus zero-mean Gaussian noise built from NOISE_RANK fixed random spatial
patterns over (lon, lat), shared along altitude so columns stay strictly
decreasing.  Per epoch, each pattern gets an independent amplitude with
std noise_level * (1 + NOISE_STORM_FACTOR * s): storms widen the
irreducible spread, giving the probabilistic losses a heteroskedastic
target whose scale is itself a learnable function of the drivers.
Keeping the noise low-rank matters: a truncated basis of modest order can
then span the noise directions, so the temporal coefficients carry the
full irreducible spread instead of leaving part of it orthogonal to every
mode where no coefficient-space model could ever express it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .drivers import AP_LADDER, DriverSeries, day_of_year, snap_to_ap_ladder, utc_hours
from .grid import GridSeries, GridSpec
from .storage import stream

HOUR = 3600

# density-formula constants (documented in the module docstring)
BASE_LEVEL = -11.4
BASE_SOLAR = 0.6
BASE_STORM = 0.2
K_BASE = 0.0085
K_SOLAR = 0.35
K_DIURNAL = 0.12
K_ANNUAL = 0.08
K_STORM = 0.15
K_MIN_FACTOR = 0.2
NOISE_STORM_FACTOR = 4.0  # noise std multiplier slope in the storm index
STORM_NORM = 300.0
F10_FLOOR = 65.0
F10_SPAN = 200.0
NOISE_RANK = 5  # independent spatial noise patterns per epoch

# rng stream tags
_TAG_F10 = 1
_TAG_PROXIES = 2
_TAG_STORMS = 3
_TAG_AP = 4
_TAG_DST = 5
_TAG_DENSITY = 6


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic generator; defaults give a desk-scale run."""

    n_epochs: int = 20480
    cadence_s: int = 3 * HOUR
    start_epoch: int = 946684800  # 2000-01-01T00:00:00 UTC
    seed: int = 0
    solar_cycles: float = 1.0  # full F10 cycles over the series span
    f10_mid: float = 130.0
    f10_amplitude: float = 60.0
    f10_rotation_amplitude: float = 12.0  # 27-day ripple, sfu
    storms_per_day: float = 0.08
    storm_scale: float = 120.0  # mean storm magnitude, ap units
    storm_decay_hours: float = 12.0
    noise_level: float = 0.02  # log10-density noise std, quiet conditions
    driver_noise: float = 1.0  # scales all driver noise terms

    def __post_init__(self):
        if self.n_epochs < 2 or self.cadence_s <= 0:
            raise ValueError("need n_epochs >= 2 and a positive cadence")
        if self.cadence_s % HOUR != 0:
            raise ValueError("cadence must be a whole number of hours")
        if self.f10_mid - self.f10_amplitude < 0:
            raise ValueError("F10 cycle dips below zero")
        if min(
            self.storms_per_day,
            self.storm_scale,
            self.storm_decay_hours,
            self.noise_level,
            self.driver_noise,
        ) < 0:
            raise ValueError("rates, scales, and noise levels must be non-negative")


def _storm_profile(times_s, onsets_s, magnitudes, decay_hours: float):
    """Sum of exponentially decaying storm pulses, zero before each onset."""
    times = np.asarray(times_s, dtype=float)
    out = np.zeros_like(times)
    tau = decay_hours * HOUR
    for onset, mag in zip(onsets_s, magnitudes):
        dt = times - onset
        live = dt >= 0
        out[live] += mag * np.exp(-dt[live] / tau)
    return out


def _centered_average(values: np.ndarray, half_window: int) -> np.ndarray:
    """Mean over [i - half_window, i + half_window], clipped to the ends."""
    cum = np.concatenate(([0.0], np.cumsum(values)))
    n = values.size
    lo = np.maximum(np.arange(n) - half_window, 0)
    hi = np.minimum(np.arange(n) + half_window, n - 1)
    return (cum[hi + 1] - cum[lo]) / (hi + 1 - lo)


def exp_filtered_ap(ap: np.ndarray, cadence_s: float, decay_hours: float):
    """Recursive exponential smoothing of the tabulated ap history.

    A[i] = A[i-1] * d + ap[i] * (1 - d) with d = exp(-cadence / tau) and
    A[0] = ap[0]; this is the storm memory the density field responds to.
    """
    ap = np.asarray(ap, dtype=float)
    d = float(np.exp(-cadence_s / (decay_hours * HOUR)))
    out = np.empty_like(ap)
    out[0] = ap[0]
    for i in range(1, ap.size):
        out[i] = out[i - 1] * d + ap[i] * (1.0 - d)
    return out


def gen_drivers(cfg: SynthConfig) -> DriverSeries:
    """Synthetic 3-hourly driver table plus an hourly Dst supplement."""
    n = cfg.n_epochs
    epochs = cfg.start_epoch + cfg.cadence_s * np.arange(n, dtype=np.int64)
    t = (epochs - epochs[0]).astype(float)
    span = float(t[-1]) if t[-1] > 0 else 1.0

    f10_rng = stream(cfg.seed, _TAG_F10)
    proxy_rng = stream(cfg.seed, _TAG_PROXIES)
    storm_rng = stream(cfg.seed, _TAG_STORMS)
    ap_rng = stream(cfg.seed, _TAG_AP)
    dst_rng = stream(cfg.seed, _TAG_DST)

    cycle = cfg.f10_mid + cfg.f10_amplitude * np.sin(
        2.0 * np.pi * cfg.solar_cycles * t / span
    )
    rotation = cfg.f10_rotation_amplitude * np.sin(2.0 * np.pi * t / (27 * 86400.0))
    f10 = np.clip(
        cycle + rotation + cfg.driver_noise * 2.0 * f10_rng.standard_normal(n),
        F10_FLOOR,
        None,
    )
    proxies = {
        "S10": 0.9 * f10 + 5.0 + cfg.driver_noise * proxy_rng.standard_normal(n),
        "M10": 0.8 * f10 + 12.0 + cfg.driver_noise * proxy_rng.standard_normal(n),
        "Y10": 0.7 * f10 + 20.0 + cfg.driver_noise * proxy_rng.standard_normal(n),
    }

    # 81-day centered averages of the final (noisy, clipped) series
    half = int(round(40.5 * 86400.0 / cfg.cadence_s))
    averages = {
        "F81c": _centered_average(f10, half),
        "S81c": _centered_average(proxies["S10"], half),
        "M81c": _centered_average(proxies["M10"], half),
        "Y81c": _centered_average(proxies["Y10"], half),
    }

    span_days = span / 86400.0
    n_storms = storm_rng.poisson(cfg.storms_per_day * span_days)
    onsets = np.sort(storm_rng.uniform(0.0, span, size=n_storms))
    magnitudes = 30.0 + storm_rng.exponential(cfg.storm_scale, size=n_storms)

    storm_ap = _storm_profile(t, onsets, magnitudes, cfg.storm_decay_hours)
    quiet_ap = np.abs(cfg.driver_noise * 4.0 * ap_rng.standard_normal(n))
    ap = snap_to_ap_ladder(np.minimum(quiet_ap + storm_ap, 400.0))

    # Dst is generated hourly; the 3-hourly column is its aligned subsample
    hourly_epochs = np.arange(epochs[0], epochs[-1] + 1, HOUR, dtype=np.int64)
    hourly_t = (hourly_epochs - epochs[0]).astype(float)
    hourly_storm = _storm_profile(hourly_t, onsets, magnitudes, cfg.storm_decay_hours)
    hourly_dst = -1.1 * hourly_storm + cfg.driver_noise * 2.5 * dst_rng.standard_normal(
        hourly_epochs.size
    )
    stride = cfg.cadence_s // HOUR
    dst = hourly_dst[::stride].copy() if stride >= 1 else hourly_dst.copy()

    columns = {"F10": f10, "ap": ap, "Dst": dst}
    columns.update(proxies)
    columns.update(averages)
    return DriverSeries(
        epochs=epochs, columns=columns, hourly_dst=(hourly_epochs, hourly_dst)
    )


def solar_fraction(f10) -> np.ndarray:
    return np.clip((np.asarray(f10, dtype=float) - F10_FLOOR) / F10_SPAN, 0.0, 1.0)


def storm_fraction(filtered_ap) -> np.ndarray:
    return np.clip(np.asarray(filtered_ap, dtype=float) / STORM_NORM, 0.0, 1.0)


def gen_density(
    drivers: DriverSeries, spec: GridSpec, cfg: SynthConfig
) -> GridSeries:
    """Density grid series following the documented closed form."""
    epochs = drivers.epochs
    steps = np.diff(epochs)
    if steps.size and np.any(steps != steps[0]):
        raise ValueError("driver epochs must be uniformly spaced")
    cadence = float(steps[0]) if steps.size else float(cfg.cadence_s)

    f = solar_fraction(drivers.columns["F10"])
    filtered = exp_filtered_ap(drivers.columns["ap"], cadence, cfg.storm_decay_hours)
    s = storm_fraction(filtered)
    doy = day_of_year(epochs)
    ut = utc_hours(epochs)

    lon = spec.longitudes
    lat_rad = np.deg2rad(spec.latitudes)
    alt_rise = spec.altitudes - spec.altitudes[0]
    sin_lat = np.sin(lat_rad)
    sin2_lat = sin_lat * sin_lat
    n_alt, n_lat, n_lon = spec.shape

    noise_rng = stream(cfg.seed, _TAG_DENSITY)
    # fixed spatial patterns, unit RMS over cells; amplitudes vary per epoch
    patterns = noise_rng.standard_normal((NOISE_RANK, n_lat, n_lon))
    patterns /= np.sqrt((patterns**2).mean(axis=(1, 2), keepdims=True))
    m = epochs.size
    states = np.empty((m, spec.n_cells), dtype=float)
    chunk = max(1, min(m, 512))
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        c = stop - start
        f_c = f[start:stop].reshape(c, 1, 1, 1)
        s_c = s[start:stop].reshape(c, 1, 1, 1)
        lst_phase = (
            2.0
            * np.pi
            * (ut[start:stop].reshape(c, 1, 1, 1) + lon.reshape(1, 1, 1, n_lon) / 15.0 - 14.0)
            / 24.0
        )
        bulge = 0.5 * (1.0 + np.cos(lst_phase))
        season = np.sin(2.0 * np.pi * doy[start:stop] / 365.25).reshape(
            c, 1, 1, 1
        ) * sin_lat.reshape(1, 1, n_lat, 1)
        factor = (
            1.0
            - K_SOLAR * f_c
            - K_DIURNAL * bulge
            - K_ANNUAL * season
            - K_STORM * s_c * sin2_lat.reshape(1, 1, n_lat, 1)
        )
        k = K_BASE * np.maximum(factor, K_MIN_FACTOR)
        base = BASE_LEVEL + BASE_SOLAR * f_c + BASE_STORM * s_c
        block = base - alt_rise.reshape(1, n_alt, 1, 1) * k
        # amplitudes are always drawn so the stream position does not
        # depend on the noise level
        amplitudes = noise_rng.standard_normal((c, NOISE_RANK))
        if cfg.noise_level > 0:
            sigma = cfg.noise_level * (1.0 + NOISE_STORM_FACTOR * s[start:stop])
            scaled = sigma[:, None] * amplitudes / np.sqrt(NOISE_RANK)
            field = np.einsum("cq,qjl->cjl", scaled, patterns)
            block = block + field[:, None, :, :]
        states[start:stop] = block.reshape(c, spec.n_cells)
    return GridSeries(spec=spec, epochs=epochs, states=states)


def compact_grid_spec() -> GridSpec:
    """Reduced grid (12 x 10 x 14 = 1,680 cells) for desk-scale runs."""
    return GridSpec(
        longitudes=np.arange(12) * 30.0,
        latitudes=-90.0 + np.arange(10) * 20.0,
        altitudes=175.0 + np.arange(14) * 50.0,
    )
