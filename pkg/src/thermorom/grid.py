"""Gridded log-density state: transforms, flattening, trilinear interpolation.

The grid is regular in longitude, latitude, and altitude.  Field values are
stored and interpolated as log10 of mass density in kg/m^3: density varies
near-exponentially with altitude, so the logarithm is the numerically stable
space for linear operations.  Consumers that need kg/m^3 apply
:func:`inverse_transform` after interpolating.

Flattened state vectors are altitude-major: cell index
``i_alt * (n_lat * n_lon) + i_lat * n_lon + i_lon``.  The longitude axis is
periodic (the cell between the last node and 360 == 0 wraps); latitude and
altitude are not, and altitudes outside the grid span are refused rather
than extrapolated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .storage import (
    blob_content_hash,
    epoch_to_iso,
    iso_to_epoch,
    read_blob,
    read_csv,
    write_blob,
    write_csv,
)

GRID_MAGIC = b"TROMGRD1"
GRID_VERSION = 1

# fractional positions this close to a node snap onto it
_NODE_SNAP = 1e-12


class AltitudeRangeError(ValueError):
    """Requested altitude lies outside the grid span (no extrapolation)."""


def _axis(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError("axis needs at least two values")
    steps = np.diff(arr)
    if np.any(steps <= 0):
        raise ValueError("axis values must be strictly increasing")
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-9):
        raise ValueError("axis spacing must be uniform")
    arr.flags.writeable = False
    return arr


def _default_longitudes() -> np.ndarray:
    return _axis(np.arange(24) * 15.0)


def _default_latitudes() -> np.ndarray:
    return _axis(-90.0 + np.arange(19) * 10.0)


def _default_altitudes() -> np.ndarray:
    return _axis(175.0 + np.arange(27) * 25.0)


@dataclass(frozen=True)
class GridSpec:
    """Axes of the regular lon/lat/alt grid (degrees, degrees, km)."""

    longitudes: np.ndarray = field(default_factory=_default_longitudes)
    latitudes: np.ndarray = field(default_factory=_default_latitudes)
    altitudes: np.ndarray = field(default_factory=_default_altitudes)

    def __post_init__(self):
        object.__setattr__(self, "longitudes", _axis(self.longitudes))
        object.__setattr__(self, "latitudes", _axis(self.latitudes))
        object.__setattr__(self, "altitudes", _axis(self.altitudes))
        lon = self.longitudes
        lon_step = lon[1] - lon[0]
        if not np.isclose(lon[0] + 360.0, lon[-1] + lon_step, rtol=0, atol=1e-9):
            raise ValueError("longitude axis must cover the full circle")
        if lon[0] != 0.0:
            raise ValueError("longitude axis must start at 0")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.altitudes.size, self.latitudes.size, self.longitudes.size)

    @property
    def n_cells(self) -> int:
        n_alt, n_lat, n_lon = self.shape
        return n_alt * n_lat * n_lon

    def content_hash(self) -> str:
        return blob_content_hash(
            {"kind": "grid_spec"},
            {"lon": self.longitudes, "lat": self.latitudes, "alt": self.altitudes},
        )

    def cell_coordinates(self):
        """(lon, lat, alt) arrays of length n_cells in flattening order."""
        alt, lat, lon = np.meshgrid(
            self.altitudes, self.latitudes, self.longitudes, indexing="ij"
        )
        return lon.ravel(), lat.ravel(), alt.ravel()


@dataclass(frozen=True)
class GridSnapshot:
    """One epoch of log10 density on the grid, shaped (n_alt, n_lat, n_lon)."""

    epoch: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 3:
            raise ValueError("snapshot values must be a 3-d (alt, lat, lon) array")
        if not np.all(np.isfinite(values)):
            raise ValueError("snapshot values must all be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "epoch", int(self.epoch))


@dataclass(frozen=True)
class Position:
    """A lookup point: longitude [0, 360), latitude [-90, 90], altitude km."""

    longitude: float
    latitude: float
    altitude: float

    def __post_init__(self):
        if not 0.0 <= self.longitude < 360.0:
            raise ValueError(f"longitude {self.longitude} outside [0, 360)")
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} outside [-90, 90]")


def log_transform(density):
    """log10 of density in kg/m^3.  Rejects non-positive input."""
    arr = np.asarray(density, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("density must be strictly positive")
    out = np.log10(arr)
    return float(out) if np.isscalar(density) else out


def inverse_transform(log_density):
    """10**y, the antilog back to kg/m^3.  Rejects non-finite input."""
    arr = np.asarray(log_density, dtype=float)
    if np.any(~np.isfinite(arr)):
        raise ValueError("log density must be finite")
    out = np.power(10.0, arr)
    return float(out) if np.isscalar(log_density) else out


def flatten(snapshot: GridSnapshot, spec: GridSpec) -> np.ndarray:
    """Snapshot -> state vector in altitude-major order."""
    if snapshot.values.shape != spec.shape:
        raise ValueError(
            f"snapshot shape {snapshot.values.shape} != grid shape {spec.shape}"
        )
    return snapshot.values.ravel(order="C").copy()


def unflatten(state: np.ndarray, spec: GridSpec, epoch: int = 0) -> GridSnapshot:
    """State vector -> snapshot; exact inverse of :func:`flatten`."""
    state = np.asarray(state, dtype=float)
    if state.shape != (spec.n_cells,):
        raise ValueError(f"state length {state.size} != cell count {spec.n_cells}")
    return GridSnapshot(epoch=epoch, values=state.reshape(spec.shape))


def _axis_bracket(axis, x, periodic: bool):
    """Bracketing indices and fractional offset along one axis (vectorized).

    Positions within 1e-12 cells of a node snap onto it so that node lookups
    reproduce stored values exactly.
    """
    x = np.asarray(x, dtype=float)
    step = axis[1] - axis[0]
    n = axis.size
    if periodic:
        rel = np.mod(x - axis[0], 360.0) / step
        near = np.rint(rel)
        rel = np.mod(np.where(np.abs(rel - near) < _NODE_SNAP, near, rel), float(n))
        i0 = np.floor(rel).astype(np.int64)
        frac = rel - i0
        i1 = (i0 + 1) % n
    else:
        rel = (x - axis[0]) / step
        near = np.rint(rel)
        rel = np.where(np.abs(rel - near) < _NODE_SNAP, near, rel)
        rel = np.clip(rel, 0.0, float(n - 1))
        i0 = np.clip(np.floor(rel).astype(np.int64), 0, n - 2)
        frac = rel - i0
        i1 = i0 + 1
    return i0, i1, frac


def interpolation_weights(spec: GridSpec, lons, lats, alts):
    """Trilinear stencil for arbitrary positions.

    Returns ``(indices, weights)`` with shape (n, 8) each: flat cell indices
    and convex weights (sum to 1).  Longitude wraps; latitude must lie in
    [-90, 90]; altitudes outside the grid span raise AltitudeRangeError.
    """
    lons = np.atleast_1d(np.asarray(lons, dtype=float))
    lats = np.atleast_1d(np.asarray(lats, dtype=float))
    alts = np.atleast_1d(np.asarray(alts, dtype=float))
    if np.any(lats < spec.latitudes[0] - 1e-9) or np.any(
        lats > spec.latitudes[-1] + 1e-9
    ):
        raise ValueError("latitude outside grid span")
    if np.any(alts < spec.altitudes[0] - 1e-9) or np.any(
        alts > spec.altitudes[-1] + 1e-9
    ):
        raise AltitudeRangeError(
            f"altitude outside [{spec.altitudes[0]}, {spec.altitudes[-1]}] km"
        )
    io0, io1, fo = _axis_bracket(spec.longitudes, lons, periodic=True)
    il0, il1, fl = _axis_bracket(spec.latitudes, lats, periodic=False)
    ia0, ia1, fa = _axis_bracket(spec.altitudes, alts, periodic=False)

    n_alt, n_lat, n_lon = spec.shape
    n = lons.size
    indices = np.empty((n, 8), dtype=np.int64)
    weights = np.empty((n, 8), dtype=float)
    corner = 0
    for ia, wa in ((ia0, 1.0 - fa), (ia1, fa)):
        for il, wl in ((il0, 1.0 - fl), (il1, fl)):
            for io, wo in ((io0, 1.0 - fo), (io1, fo)):
                indices[:, corner] = (ia * n_lat + il) * n_lon + io
                weights[:, corner] = wa * wl * wo
                corner += 1
    return indices, weights


def interpolate(snapshot: GridSnapshot, spec: GridSpec, pos: Position) -> float:
    """Trilinear interpolation of log10 density at one position."""
    if snapshot.values.shape != spec.shape:
        raise ValueError("snapshot does not match grid spec")
    indices, weights = interpolation_weights(
        spec, pos.longitude, pos.latitude, pos.altitude
    )
    flat = snapshot.values.ravel(order="C")
    return float(flat[indices[0]] @ weights[0])


def interpolate_states(states: np.ndarray, spec: GridSpec, lons, lats, alts):
    """Interpolate one or many flattened states at many positions.

    ``states`` is (n_cells,) or (m, n_cells); returns (n,) or (m, n).
    """
    indices, weights = interpolation_weights(spec, lons, lats, alts)
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        return np.einsum("pc,pc->p", states[indices], weights)
    return np.einsum("mpc,pc->mp", states[:, indices], weights)


@dataclass(frozen=True)
class GridSeries:
    """Time-ordered flattened log10-density states on one grid."""

    spec: GridSpec
    epochs: np.ndarray  # int64 seconds since 1970-01-01T00:00:00 UTC
    states: np.ndarray  # (m, n_cells) float64 log10 density

    def __post_init__(self):
        epochs = np.asarray(self.epochs, dtype=np.int64)
        states = np.asarray(self.states, dtype=float)
        if epochs.ndim != 1 or states.ndim != 2:
            raise ValueError("epochs must be 1-d and states 2-d")
        if states.shape != (epochs.size, self.spec.n_cells):
            raise ValueError(
                f"states shape {states.shape} != "
                f"({epochs.size}, {self.spec.n_cells})"
            )
        if epochs.size > 1 and np.any(np.diff(epochs) <= 0):
            raise ValueError("epochs must be strictly increasing")
        if not np.all(np.isfinite(states)):
            raise ValueError("states must all be finite")
        epochs.flags.writeable = False
        states.flags.writeable = False
        object.__setattr__(self, "epochs", epochs)
        object.__setattr__(self, "states", states)

    def __len__(self) -> int:
        return self.epochs.size

    def snapshot(self, i: int) -> GridSnapshot:
        return GridSnapshot(
            epoch=int(self.epochs[i]), values=self.states[i].reshape(self.spec.shape)
        )

    def save(self, path, meta: dict | None = None) -> None:
        meta = dict(meta or {})
        meta["kind"] = "grid_series"
        write_blob(
            path,
            GRID_MAGIC,
            GRID_VERSION,
            meta,
            {
                "longitudes": self.spec.longitudes,
                "latitudes": self.spec.latitudes,
                "altitudes": self.spec.altitudes,
                "epochs": self.epochs,
                "states": self.states,
            },
        )

    @classmethod
    def load(cls, path):
        """Returns ``(series, meta)``."""
        _, meta, arrays = read_blob(path, GRID_MAGIC)
        spec = GridSpec(
            longitudes=arrays["longitudes"],
            latitudes=arrays["latitudes"],
            altitudes=arrays["altitudes"],
        )
        series = cls(spec=spec, epochs=arrays["epochs"], states=arrays["states"])
        return series, meta

    def to_debug_csv(self, path, annotations: dict | None = None) -> None:
        """Long-form CSV (epoch, lon, lat, alt, log10_rho); debug use only."""
        lon, lat, alt = self.spec.cell_coordinates()

        def rows():
            for i, epoch in enumerate(self.epochs):
                iso = epoch_to_iso(int(epoch))
                for c in range(self.spec.n_cells):
                    yield (iso, lon[c], lat[c], alt[c], self.states[i, c])

        write_csv(
            path,
            ("epoch", "lon_deg", "lat_deg", "alt_km", "log10_rho"),
            rows(),
            annotations,
        )


def grid_series_from_debug_csv(path, spec: GridSpec) -> GridSeries:
    """Rebuild a series from its debug CSV (assumes full grids per epoch)."""
    _, columns, rows = read_csv(path)
    if columns != ["epoch", "lon_deg", "lat_deg", "alt_km", "log10_rho"]:
        raise ValueError(f"unexpected debug CSV columns: {columns}")
    n = spec.n_cells
    if len(rows) % n != 0:
        raise ValueError("row count is not a multiple of the grid cell count")
    m = len(rows) // n
    epochs = np.empty(m, dtype=np.int64)
    states = np.empty((m, n), dtype=float)
    for i in range(m):
        chunk = rows[i * n : (i + 1) * n]
        epochs[i] = iso_to_epoch(chunk[0][0])
        states[i] = [float(r[4]) for r in chunk]
    return GridSeries(spec=spec, epochs=epochs, states=states)
