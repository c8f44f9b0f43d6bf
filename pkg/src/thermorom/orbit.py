"""Model evaluation along satellite tracks and orbit-averaged summaries.

For each 3-hour prediction window the model is run k times on that
window's feature row, giving k coefficient vectors.  Because decoding and
trilinear interpolation are both linear in log space, the k full grids are
never materialized: the basis mean and modes are interpolated once per
track position (8-cell neighborhoods) and combined with the coefficient
draws, then the antilog produces k density samples per position.  Grids are
held constant within their window.

Orbit averages use the circular-orbit period T = 2 pi sqrt((R_E + h)^3 /
mu) at the window's mean altitude; each consecutive window of length T
yields one orbit row with a 95% band taken across the k Monte Carlo
variations of the orbit-averaged density.  A trailing partial orbit is
dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import CalibrationReport, IntervalSet, calibration_error, critical_value
from .drivers import DriverSeries, feature_matrix
from .grid import GridSeries, GridSpec, interpolation_weights
from .network import Network, mc_predict
from .pca import PcaBasis
from .storage import epoch_to_iso, iso_to_epoch, read_csv, stream, write_csv

EARTH_RADIUS_KM = 6378.137
EARTH_MU_KM3_S2 = 398600.4418

_TAG_TRACK = 21

GRID_WINDOW_S = 3 * 3600


def orbital_period_s(mean_altitude_km: float) -> float:
    """Circular-orbit period at the given altitude above the mean radius."""
    a = EARTH_RADIUS_KM + float(mean_altitude_km)
    if a <= 0:
        raise ValueError("orbit radius must be positive")
    return float(2.0 * np.pi * np.sqrt(a**3 / EARTH_MU_KM3_S2))


def planned_evaluations(n_windows: int, k: int) -> int:
    """Bookkeeping: model evaluations for a track study."""
    return int(n_windows) * int(k)


@dataclass(frozen=True)
class Ephemeris:
    """Satellite positions at a fixed cadence."""

    epochs: np.ndarray  # int64 Unix seconds, strictly increasing
    longitudes: np.ndarray  # degrees [0, 360)
    latitudes: np.ndarray  # degrees [-90, 90]
    altitudes: np.ndarray  # km
    cadence_s: int

    def __post_init__(self):
        epochs = np.asarray(self.epochs, dtype=np.int64)
        lons = np.asarray(self.longitudes, dtype=float)
        lats = np.asarray(self.latitudes, dtype=float)
        alts = np.asarray(self.altitudes, dtype=float)
        if not (epochs.shape == lons.shape == lats.shape == alts.shape):
            raise ValueError("ephemeris arrays must share one shape")
        if epochs.ndim != 1 or epochs.size == 0:
            raise ValueError("ephemeris must be non-empty and 1-d")
        if epochs.size > 1 and np.any(np.diff(epochs) <= 0):
            raise ValueError("ephemeris epochs must be strictly increasing")
        if np.any(lons < 0) or np.any(lons >= 360):
            raise ValueError("longitudes must lie in [0, 360)")
        if np.any(np.abs(lats) > 90):
            raise ValueError("latitudes must lie in [-90, 90]")
        if self.cadence_s <= 0:
            raise ValueError("cadence must be positive")
        for arr in (epochs, lons, lats, alts):
            arr.flags.writeable = False
        object.__setattr__(self, "epochs", epochs)
        object.__setattr__(self, "longitudes", lons)
        object.__setattr__(self, "latitudes", lats)
        object.__setattr__(self, "altitudes", alts)

    def __len__(self) -> int:
        return self.epochs.size

    def slice_time(self, start_epoch: int, stop_epoch: int) -> "Ephemeris":
        keep = (self.epochs >= start_epoch) & (self.epochs < stop_epoch)
        if not np.any(keep):
            raise ValueError("no ephemeris points in the requested span")
        return Ephemeris(
            epochs=self.epochs[keep],
            longitudes=self.longitudes[keep],
            latitudes=self.latitudes[keep],
            altitudes=self.altitudes[keep],
            cadence_s=self.cadence_s,
        )

    def save_csv(self, path, annotations: dict | None = None) -> None:
        ann = {"cadence_s": self.cadence_s}
        ann.update(annotations or {})
        rows = (
            (epoch_to_iso(int(e)), lon, lat, alt)
            for e, lon, lat, alt in zip(
                self.epochs, self.longitudes, self.latitudes, self.altitudes
            )
        )
        write_csv(path, ("iso_epoch", "lon_deg", "lat_deg", "alt_km"), rows, ann)

    @classmethod
    def load_csv(cls, path) -> "Ephemeris":
        annotations, columns, rows = read_csv(path)
        if columns != ["iso_epoch", "lon_deg", "lat_deg", "alt_km"]:
            raise ValueError(f"unexpected ephemeris CSV columns: {columns}")
        if "cadence_s" not in annotations:
            raise ValueError("ephemeris CSV must carry a cadence_s annotation")
        return cls(
            epochs=np.array([iso_to_epoch(r[0]) for r in rows], dtype=np.int64),
            longitudes=np.array([float(r[1]) for r in rows]),
            latitudes=np.array([float(r[2]) for r in rows]),
            altitudes=np.array([float(r[3]) for r in rows]),
            cadence_s=int(annotations["cadence_s"]),
        )


def circular_orbit_ephemeris(
    start_epoch: int,
    duration_s: int,
    cadence_s: int,
    altitude_km: float,
    inclination_deg: float = 87.0,
    lon0_deg: float = 0.0,
) -> Ephemeris:
    """Analytic circular-orbit ground track (rotating Earth, sidereal day)."""
    n = int(duration_s // cadence_s)
    t = cadence_s * np.arange(n, dtype=float)
    period = orbital_period_s(altitude_km)
    u = 2.0 * np.pi * t / period
    inc = np.deg2rad(inclination_deg)
    lat = np.rad2deg(np.arcsin(np.sin(inc) * np.sin(u)))
    node_relative = np.rad2deg(np.arctan2(np.cos(inc) * np.sin(u), np.cos(u)))
    earth_rotation = 360.0 * t / 86164.0905
    lon = np.mod(lon0_deg + node_relative - earth_rotation, 360.0)
    return Ephemeris(
        epochs=start_epoch + cadence_s * np.arange(n, dtype=np.int64),
        longitudes=lon,
        latitudes=lat,
        altitudes=np.full(n, float(altitude_km)),
        cadence_s=cadence_s,
    )


@dataclass(frozen=True)
class TrackEvaluation:
    """k MC density samples at each sampled track position."""

    epochs: np.ndarray  # (n,) int64
    position_index: np.ndarray  # (n,) indices into the source ephemeris
    altitudes: np.ndarray  # (n,) km
    window_epochs: np.ndarray  # (n,) int64 grid window of each position
    samples: np.ndarray  # (n, k) density in kg/m^3
    skipped_windows: tuple[int, ...]  # gap windows, reported not evaluated
    uncovered_positions: int  # sampled positions outside driver coverage

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[0] != self.epochs.size:
            raise ValueError("samples must be (n_positions, k)")

    @property
    def k(self) -> int:
        return self.samples.shape[1]

    @property
    def density_mean(self) -> np.ndarray:
        return self.samples.mean(axis=1)

    @property
    def density_std(self) -> np.ndarray:
        if self.k < 2:
            raise ValueError("need k >= 2 for a standard deviation")
        return self.samples.std(axis=1, ddof=1)

    @property
    def n_evaluations(self) -> int:
        return planned_evaluations(np.unique(self.window_epochs).size, self.k)


def eval_along_track(
    net: Network,
    basis: PcaBasis,
    spec: GridSpec,
    drivers: DriverSeries,
    eph: Ephemeris,
    k: int = 1000,
    stride: int = 1,
    seed: int = 0,
    window_s: int = GRID_WINDOW_S,
) -> TrackEvaluation:
    """MC density samples at every stride-th track position.

    Each position uses the grid of the most recent prediction window; the
    window's k coefficient draws are decoded lazily through interpolated
    basis neighborhoods.  Windows whose driver history has gaps are skipped
    and reported in ``skipped_windows``.
    """
    if basis.n_cells != spec.n_cells:
        raise ValueError("basis and grid spec disagree on cell count")
    if basis.grid_hash is not None and basis.grid_hash != spec.content_hash():
        raise ValueError("basis was fitted on a different grid")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if net.set_id is None:
        raise ValueError("network does not record its input set")

    sampled = np.arange(0, len(eph), stride, dtype=np.int64)
    pos_epochs = eph.epochs[sampled]

    win_idx = np.searchsorted(drivers.epochs, pos_epochs, side="right") - 1
    in_range = (win_idx >= 0) & (
        pos_epochs < drivers.epochs[np.clip(win_idx, 0, None)] + window_s
    )
    used_windows = np.unique(win_idx[in_range])
    window_epochs = drivers.epochs[used_windows]
    features, ok = feature_matrix(drivers, net.set_id, window_epochs)
    skipped = [int(e) for e in window_epochs[~ok]]

    chunks_epochs, chunks_pos, chunks_alt, chunks_win, chunks_samples = (
        [],
        [],
        [],
        [],
        [],
    )
    for w_pos, w_idx in enumerate(used_windows):
        if not ok[w_pos]:
            continue
        members = in_range & (win_idx == w_idx)
        if not np.any(members):
            continue
        sel = sampled[members]
        rng = stream(seed, _TAG_TRACK, int(drivers.epochs[w_idx]))
        draws = mc_predict(net, features[w_pos], k, rng).samples  # (k, r)

        idx, wts = interpolation_weights(
            spec, eph.longitudes[sel], eph.latitudes[sel], eph.altitudes[sel]
        )
        mean_at = np.einsum("pc,pc->p", basis.mean[idx], wts)
        modes_at = np.einsum("pcr,pc->pr", basis.modes[idx], wts)
        log_samples = mean_at[:, None] + modes_at @ draws.T  # (p, k)
        chunks_samples.append(10.0**log_samples)
        chunks_epochs.append(eph.epochs[sel])
        chunks_pos.append(sel)
        chunks_alt.append(eph.altitudes[sel])
        chunks_win.append(
            np.full(sel.size, drivers.epochs[w_idx], dtype=np.int64)
        )
    if not chunks_samples:
        raise ValueError("no track positions could be evaluated")
    return TrackEvaluation(
        epochs=np.concatenate(chunks_epochs),
        position_index=np.concatenate(chunks_pos),
        altitudes=np.concatenate(chunks_alt),
        window_epochs=np.concatenate(chunks_win),
        samples=np.vstack(chunks_samples),
        skipped_windows=tuple(sorted(set(skipped))),
        uncovered_positions=int(np.sum(~in_range)),
    )


def reference_track_density(
    series: GridSeries,
    eph: Ephemeris,
    position_index: np.ndarray,
    window_s: int = GRID_WINDOW_S,
) -> np.ndarray:
    """Reference density at the given positions from held-out truth grids.

    Positions whose window is missing from the series get NaN.
    """
    sel = np.asarray(position_index, dtype=np.int64)
    pos_epochs = eph.epochs[sel]
    win = np.searchsorted(series.epochs, pos_epochs, side="right") - 1
    covered = (win >= 0) & (
        pos_epochs < series.epochs[np.clip(win, 0, None)] + window_s
    )
    idx, wts = interpolation_weights(
        series.spec, eph.longitudes[sel], eph.latitudes[sel], eph.altitudes[sel]
    )
    out = np.full(sel.size, np.nan)
    for w in np.unique(win[covered]):
        members = covered & (win == w)
        log_vals = np.einsum(
            "pc,pc->p", series.states[w][idx[members]], wts[members]
        )
        out[members] = 10.0**log_vals
    return out


@dataclass(frozen=True)
class OrbitSeries:
    """Orbit-averaged density with a 95% MC band and optional annotations."""

    epochs: np.ndarray  # (n_orbits,) mean epoch per orbit
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    reference: np.ndarray  # NaN when absent
    minus_dst: np.ndarray  # NaN when absent

    def __post_init__(self):
        n = self.epochs.size
        for name in ("mean", "lower", "upper", "reference", "minus_dst"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have one value per orbit")
        if np.any(self.lower > self.mean) or np.any(self.mean > self.upper):
            raise ValueError("orbit bands must satisfy lower <= mean <= upper")

    def __len__(self) -> int:
        return self.epochs.size

    def save_csv(self, path, annotations: dict | None = None) -> None:
        def cell(v):
            return "" if not np.isfinite(v) else v

        rows = (
            (
                epoch_to_iso(int(e)),
                self.mean[i],
                self.lower[i],
                self.upper[i],
                cell(self.reference[i]),
                cell(self.minus_dst[i]),
            )
            for i, e in enumerate(self.epochs)
        )
        write_csv(
            path,
            ("iso_epoch", "mean", "lo95", "hi95", "reference", "minus_dst"),
            rows,
            annotations,
        )


def orbit_average(
    track: TrackEvaluation,
    reference: np.ndarray | None = None,
    minus_dst_source: DriverSeries | None = None,
) -> OrbitSeries:
    """Average the track samples over consecutive orbital periods.

    The period of each orbit comes from the mean altitude of a provisional
    window (one period at the first sample's altitude), then the window is
    re-cut at the refined period.  The 95% band is computed across the k
    per-draw orbit averages.
    """
    t = track.epochs.astype(float)
    if t.size < 2:
        raise ValueError("track too short to average")
    z95 = critical_value(0.95)

    starts, stops, periods = [], [], []
    i = 0
    n = t.size
    while i < n:
        provisional = orbital_period_s(track.altitudes[i])
        j = int(np.searchsorted(t, t[i] + provisional, side="left"))
        j = max(j, i + 1)
        h_mean = float(track.altitudes[i:j].mean())
        period = orbital_period_s(h_mean)
        j = max(int(np.searchsorted(t, t[i] + period, side="left")), i + 1)
        if t[i] + period > t[-1] + 1e-9:
            break  # trailing partial orbit dropped
        starts.append(i)
        stops.append(j)
        periods.append(period)
        i = j
    if not starts:
        raise ValueError("track is shorter than one orbital period")

    n_orbits = len(starts)
    epochs = np.empty(n_orbits, dtype=np.int64)
    mean = np.empty(n_orbits)
    lower = np.empty(n_orbits)
    upper = np.empty(n_orbits)
    ref_avg = np.full(n_orbits, np.nan)
    for o, (i0, j0) in enumerate(zip(starts, stops)):
        per_draw = track.samples[i0:j0].mean(axis=0)  # (k,)
        mu = float(per_draw.mean())
        sigma = float(per_draw.std(ddof=1)) if per_draw.size > 1 else 0.0
        epochs[o] = int(round(track.epochs[i0:j0].mean()))
        mean[o] = mu
        lower[o] = mu - z95 * sigma
        upper[o] = mu + z95 * sigma
        if reference is not None:
            window_ref = np.asarray(reference, dtype=float)[i0:j0]
            if np.all(np.isfinite(window_ref)):
                ref_avg[o] = window_ref.mean()
    minus_dst = np.full(n_orbits, np.nan)
    if minus_dst_source is not None:
        minus_dst = -minus_dst_source.step_sample("Dst", epochs)
    return OrbitSeries(
        epochs=epochs,
        mean=mean,
        lower=lower,
        upper=upper,
        reference=ref_avg,
        minus_dst=minus_dst,
    )


def storm_window_eval(
    net: Network,
    basis: PcaBasis,
    spec: GridSpec,
    drivers: DriverSeries,
    eph: Ephemeris,
    reference_series: GridSeries,
    start_epoch: int | None = None,
    days: float = 6.0,
    k: int = 1000,
    stride: int = 1,
    seed: int = 0,
    intervals: IntervalSet | None = None,
):
    """Six-day storm study: orbit-averaged series + density-space calibration.

    Returns ``(OrbitSeries, CalibrationReport, TrackEvaluation)``.  The
    calibration compares per-position predictive (mean, std) in density
    space against the reference grids, at all interval levels.
    """
    start = int(eph.epochs[0] if start_epoch is None else start_epoch)
    stop = start + int(round(days * 86400))
    window = eph.slice_time(start, stop)
    track = eval_along_track(
        net, basis, spec, drivers, window, k=k, stride=stride, seed=seed
    )
    reference = reference_track_density(reference_series, window, track.position_index)
    covered = np.isfinite(reference)
    report = calibration_error(
        track.density_mean[covered][:, None],
        track.density_std[covered][:, None],
        reference[covered][:, None],
        intervals,
    )
    series = orbit_average(track, reference, minus_dst_source=drivers)
    return series, report, track
