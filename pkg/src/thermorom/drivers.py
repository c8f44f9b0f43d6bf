"""Space-weather driver series, engineered input features, splits, and bins.

A driver series carries ten columns at a 3-hour cadence: four solar indices
(F10, S10, M10, Y10 in sfu), their 81-day centered averages (F81c..Y81c),
the planetary geomagnetic index ap (units of 2 nT, one of 28 discrete
ladder values capped at 400), and the storm-time index Dst (nT).  An
optional hourly Dst supplement refines the Dst lag features.

Each column is treated as a right-continuous step function of time: the
value at time t is the entry at the greatest tabulated epoch <= t.  Lagged
features sample that step function at integer hour offsets before the
epoch, so window averages do not depend on how finely the same history is
tabulated.  A record whose history window reaches past the table start, or
touches a missing entry, is a gap and raises :class:`GapError`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .storage import epoch_to_iso, iso_to_epoch, read_csv, write_csv

HOUR = 3600
CADENCE = 3 * HOUR

SOLAR_COLUMNS = ("F10", "S10", "M10", "Y10", "F81c", "S81c", "M81c", "Y81c")
DRIVER_COLUMNS = SOLAR_COLUMNS + ("ap", "Dst")

# the 28 admissible ap values, capped at 400
AP_LADDER = (
    0.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 9.0, 12.0, 15.0, 18.0, 22.0, 27.0,
    32.0, 39.0, 48.0, 56.0, 67.0, 80.0, 94.0, 111.0, 132.0, 154.0, 179.0,
    207.0, 236.0, 300.0, 400.0,
)

F10_BIN_EDGES = (75.0, 150.0, 190.0)
F10_BIN_LABELS = ("F10<=75", "75<F10<=150", "150<F10<=190", "F10>190")
AP_BIN_EDGES = (10.0, 50.0)
AP_BIN_LABELS = ("ap<=10", "10<ap<=50", "ap>50")


class GapError(ValueError):
    """Feature window reaches missing or uncovered driver history."""


def snap_to_ap_ladder(values):
    """Round arbitrary non-negative values onto the nearest ladder entry."""
    ladder = np.asarray(AP_LADDER)
    values = np.atleast_1d(np.asarray(values, dtype=float))
    idx = np.argmin(np.abs(values[:, None] - ladder[None, :]), axis=1)
    return ladder[idx]


def on_ap_ladder(values) -> bool:
    ladder = np.asarray(AP_LADDER)
    values = np.atleast_1d(np.asarray(values, dtype=float))
    values = values[np.isfinite(values)]
    return bool(np.all(np.min(np.abs(values[:, None] - ladder[None, :]), axis=1) < 1e-9))


def day_of_year(epochs) -> np.ndarray:
    """Fractional day of year in [0, 366), 0 at Jan 1 00:00 UTC."""
    dt = np.atleast_1d(np.asarray(epochs, dtype="int64")).astype("datetime64[s]")
    return (dt - dt.astype("datetime64[Y]")) / np.timedelta64(1, "D")


def utc_hours(epochs) -> np.ndarray:
    """Hours since UTC midnight in [0, 24)."""
    ep = np.atleast_1d(np.asarray(epochs, dtype="int64"))
    return np.mod(ep, 86400) / HOUR


def temporal_features(doy, ut):
    """Annual and diurnal sin/cos pairs: unit circle in each pair."""
    doy = np.asarray(doy, dtype=float)
    ut = np.asarray(ut, dtype=float)
    ang_year = 2.0 * np.pi * doy / 365.25
    ang_day = 2.0 * np.pi * ut / 24.0
    return np.sin(ang_year), np.cos(ang_year), np.sin(ang_day), np.cos(ang_day)


@dataclass(frozen=True)
class DriverRecord:
    """One 3-hour epoch of drivers plus derived time-of-year/day fields."""

    epoch: int
    F10: float
    S10: float
    M10: float
    Y10: float
    F81c: float
    S81c: float
    M81c: float
    Y81c: float
    ap: float
    Dst: float

    def __post_init__(self):
        if not on_ap_ladder([self.ap]) or self.ap > 400.0:
            raise ValueError(f"ap={self.ap} is not one of the 28 ladder values")

    @property
    def doy(self) -> float:
        return float(day_of_year(self.epoch)[0])

    @property
    def ut(self) -> float:
        return float(utc_hours(self.epoch)[0])


@dataclass(frozen=True)
class DriverSeries:
    """Tabulated driver history: 3-hourly columns + optional hourly Dst."""

    epochs: np.ndarray  # int64 Unix seconds, strictly increasing
    columns: dict[str, np.ndarray]  # name -> float values (NaN = missing)
    hourly_dst: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        epochs = np.asarray(self.epochs, dtype=np.int64)
        if epochs.ndim != 1 or epochs.size == 0:
            raise ValueError("epochs must be a non-empty 1-d array")
        if np.any(np.diff(epochs) <= 0):
            raise ValueError("epochs must be strictly increasing")
        cols = {}
        for name in DRIVER_COLUMNS:
            if name not in self.columns:
                raise ValueError(f"missing driver column {name}")
            col = np.asarray(self.columns[name], dtype=float)
            if col.shape != epochs.shape:
                raise ValueError(f"column {name} length != epoch count")
            col.flags.writeable = False
            cols[name] = col
        finite_ap = cols["ap"][np.isfinite(cols["ap"])]
        if finite_ap.size and not on_ap_ladder(finite_ap):
            raise ValueError("ap column contains off-ladder values")
        epochs.flags.writeable = False
        object.__setattr__(self, "epochs", epochs)
        object.__setattr__(self, "columns", cols)
        if self.hourly_dst is not None:
            h_ep = np.asarray(self.hourly_dst[0], dtype=np.int64)
            h_val = np.asarray(self.hourly_dst[1], dtype=float)
            if h_ep.shape != h_val.shape or h_ep.ndim != 1:
                raise ValueError("hourly Dst epochs/values must align")
            if h_ep.size and np.any(np.diff(h_ep) <= 0):
                raise ValueError("hourly Dst epochs must be strictly increasing")
            h_ep.flags.writeable = False
            h_val.flags.writeable = False
            object.__setattr__(self, "hourly_dst", (h_ep, h_val))

    def __len__(self) -> int:
        return self.epochs.size

    def record(self, i: int) -> DriverRecord:
        vals = {name: float(self.columns[name][i]) for name in DRIVER_COLUMNS}
        if any(not np.isfinite(v) for v in vals.values()):
            raise GapError(f"record {i} has missing driver values")
        return DriverRecord(epoch=int(self.epochs[i]), **vals)

    def _source(self, name: str):
        """(epochs, values) backing the step function for one column."""
        if name == "Dst" and self.hourly_dst is not None:
            return self.hourly_dst
        return self.epochs, self.columns[name]

    def step_sample(self, name: str, query_epochs) -> np.ndarray:
        """Right-continuous sample of one column at arbitrary epochs.

        Epochs before the first tabulated entry yield NaN (a gap).
        """
        src_epochs, src_values = self._source(name)
        query = np.atleast_1d(np.asarray(query_epochs, dtype=np.int64))
        idx = np.searchsorted(src_epochs, query, side="right") - 1
        out = src_values[np.clip(idx, 0, None)].astype(float)
        out[idx < 0] = np.nan
        return out

    def save_csv(self, path, annotations: dict | None = None) -> None:
        def rows():
            for i in range(len(self)):
                vals = [self.columns[c][i] for c in DRIVER_COLUMNS]
                yield [epoch_to_iso(int(self.epochs[i]))] + [
                    "" if not np.isfinite(v) else v for v in vals
                ]

        write_csv(path, ("iso_epoch",) + DRIVER_COLUMNS, rows(), annotations)

    def save_hourly_dst_csv(self, path, annotations: dict | None = None) -> None:
        if self.hourly_dst is None:
            raise ValueError("series has no hourly Dst supplement")
        h_ep, h_val = self.hourly_dst
        rows = (
            (epoch_to_iso(int(e)), "" if not np.isfinite(v) else v)
            for e, v in zip(h_ep, h_val)
        )
        write_csv(path, ("iso_epoch", "Dst"), rows, annotations)


def load_driver_csv(path, hourly_dst_path=None) -> DriverSeries:
    """Read the 3-hourly driver CSV (and optional hourly Dst supplement)."""
    _, columns, rows = read_csv(path)
    expected = ["iso_epoch"] + list(DRIVER_COLUMNS)
    if columns != expected:
        raise ValueError(f"driver CSV columns {columns} != {expected}")
    epochs = np.array([iso_to_epoch(r[0]) for r in rows], dtype=np.int64)
    data = {
        name: np.array(
            [float(r[j + 1]) if r[j + 1] != "" else np.nan for r in rows]
        )
        for j, name in enumerate(DRIVER_COLUMNS)
    }
    hourly = None
    if hourly_dst_path is not None:
        _, h_cols, h_rows = read_csv(hourly_dst_path)
        if h_cols != ["iso_epoch", "Dst"]:
            raise ValueError(f"hourly Dst CSV columns {h_cols}")
        h_ep = np.array([iso_to_epoch(r[0]) for r in h_rows], dtype=np.int64)
        h_val = np.array([float(r[1]) if r[1] != "" else np.nan for r in h_rows])
        hourly = (h_ep, h_val)
    return DriverSeries(epochs=epochs, columns=data, hourly_dst=hourly)


@dataclass(frozen=True)
class Feature:
    """One engineered input: a driver lag average or a temporal term.

    ``lags_h`` lists the integer hour offsets whose step samples are
    averaged; a single 0 is the instantaneous value.  Temporal features
    have ``source=None`` and compute from the epoch alone.
    """

    name: str
    source: str | None
    lags_h: tuple[int, ...] = ()


_TEMPORAL = tuple(
    Feature(name, None) for name in ("doy_sin", "doy_cos", "ut_sin", "ut_cos")
)
_SOLAR = tuple(Feature(name, name, (0,)) for name in SOLAR_COLUMNS)

# historical geomagnetic blocks: daily average, instantaneous, short lags,
# then the 12-33 h and 36-57 h windows for ap-structured sources
_AP_STRUCTURE = (
    ("day", tuple(range(24))),
    ("", (0,)),
    ("3h", (3,)),
    ("6h", (6,)),
    ("9h", (9,)),
    ("12_33h", tuple(range(12, 34))),
    ("36_57h", tuple(range(36, 58))),
)
_DST_STRUCTURE = (
    ("day", tuple(range(24))),
    ("", (0,)),
    ("3h", (3,)),
    ("6h", (6,)),
    ("9h", (9,)),
    ("12h", (12,)),
    ("15h", (15,)),
    ("18h", (18,)),
    ("21h", (21,)),
)


def _block(source: str, structure) -> tuple[Feature, ...]:
    feats = []
    for suffix, lags in structure:
        name = source.lower() if suffix == "" else f"{source.lower()}_{suffix}"
        feats.append(Feature(name, source, lags))
    return tuple(feats)


FEATURE_SET_IDS = ("jb", "jbh", "jbh0")

_FEATURE_SETS = {
    "jb": _SOLAR
    + (Feature("ap", "ap", (0,)), Feature("dst", "Dst", (0,)))
    + _TEMPORAL,
    "jbh": _SOLAR + _block("ap", _AP_STRUCTURE) + _block("Dst", _DST_STRUCTURE)
    + _TEMPORAL,
    "jbh0": _SOLAR + _block("ap", _AP_STRUCTURE) + _block("Dst", _AP_STRUCTURE)
    + _TEMPORAL,
}


def normalize_set_id(set_id: str) -> str:
    key = set_id.strip().lower().replace("-", "_")
    key = {"jb": "jb", "jb_h": "jbh", "jbh": "jbh", "jb_h0": "jbh0", "jbh0": "jbh0"}.get(
        key
    )
    if key is None:
        raise ValueError(f"unknown input set {set_id!r}; expected jb, jbh, or jbh0")
    return key


def feature_set(set_id: str) -> tuple[Feature, ...]:
    return _FEATURE_SETS[normalize_set_id(set_id)]


def feature_names(set_id: str) -> tuple[str, ...]:
    return tuple(f.name for f in feature_set(set_id))


def max_lag_hours(set_id: str) -> int:
    return max((max(f.lags_h) for f in feature_set(set_id) if f.lags_h), default=0)


@dataclass(frozen=True)
class FeatureVector:
    """Inputs for one epoch in the frozen order of its feature set."""

    set_id: str
    values: np.ndarray

    def __post_init__(self):
        set_id = normalize_set_id(self.set_id)
        values = np.asarray(self.values, dtype=float)
        expected = len(_FEATURE_SETS[set_id])
        if values.shape != (expected,):
            raise ValueError(
                f"{set_id} feature vector needs {expected} values, got {values.shape}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "set_id", set_id)
        object.__setattr__(self, "values", values)

    @property
    def names(self) -> tuple[str, ...]:
        return feature_names(self.set_id)


def feature_matrix(series: DriverSeries, set_id: str, epochs):
    """Features for many epochs at once.

    Returns ``(X, ok)``: X is (n, d); ok flags rows whose entire history
    window is covered.  Rows with gaps contain NaN and ok=False.
    """
    set_id = normalize_set_id(set_id)
    feats = _FEATURE_SETS[set_id]
    epochs = np.atleast_1d(np.asarray(epochs, dtype=np.int64))
    n = epochs.size

    lags_by_source: dict[str, set[int]] = {}
    for f in feats:
        if f.source is not None:
            lags_by_source.setdefault(f.source, set()).update(f.lags_h)
    samples: dict[str, dict[int, np.ndarray]] = {}
    for source, lags in lags_by_source.items():
        lag_list = sorted(lags)
        query = epochs[:, None] - HOUR * np.asarray(lag_list, dtype=np.int64)[None, :]
        sampled = series.step_sample(source, query.ravel()).reshape(n, len(lag_list))
        samples[source] = {lag: sampled[:, j] for j, lag in enumerate(lag_list)}

    t1, t2, t3, t4 = temporal_features(day_of_year(epochs), utc_hours(epochs))
    temporal = {"doy_sin": t1, "doy_cos": t2, "ut_sin": t3, "ut_cos": t4}

    X = np.empty((n, len(feats)), dtype=float)
    for j, f in enumerate(feats):
        if f.source is None:
            X[:, j] = temporal[f.name]
        else:
            cols = samples[f.source]
            X[:, j] = np.mean([cols[lag] for lag in f.lags_h], axis=0)
    ok = np.all(np.isfinite(X), axis=1)
    return X, ok


def build_features(series: DriverSeries, set_id: str, epoch: int) -> FeatureVector:
    """Features for one epoch; raises GapError when history is incomplete."""
    X, ok = feature_matrix(series, set_id, [int(epoch)])
    if not ok[0]:
        raise GapError(
            f"epoch {epoch_to_iso(int(epoch))} lacks "
            f"{max_lag_hours(set_id)} h of driver history"
        )
    return FeatureVector(set_id=set_id, values=X[0])


def fit_scaler(X: np.ndarray):
    """Per-feature (mean, std) from training rows; std 0 treated as 1."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a 2-d matrix with at least two rows")
    mean = X.mean(axis=0)
    std = X.std(axis=0, ddof=1)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def apply_scaler(X: np.ndarray, mean, std) -> np.ndarray:
    return (np.asarray(X, dtype=float) - mean) / std


@dataclass(frozen=True)
class SplitLayout:
    """Ordered contiguous blocks: (role, weight) pairs laid out in time.

    Each role's total count follows the requested fractions; the role's
    count is spread over its blocks proportionally to the block weights.
    The default interleaves two train/validation/test rounds, echoing a
    chronological multi-year block assignment.
    """

    blocks: tuple[tuple[str, float], ...] = (
        ("train", 1.0),
        ("validation", 1.0),
        ("test", 1.0),
        ("train", 1.0),
        ("validation", 1.0),
        ("test", 1.0),
    )

    def __post_init__(self):
        roles = {b[0] for b in self.blocks}
        if not roles <= {"train", "validation", "test"}:
            raise ValueError(f"unknown roles in layout: {roles}")
        if roles != {"train", "validation", "test"}:
            raise ValueError("layout must mention all three roles")
        if any(w <= 0 for _, w in self.blocks):
            raise ValueError("block weights must be positive")


@dataclass(frozen=True)
class SplitIndex:
    """Disjoint covering train/validation/test index arrays."""

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "validation", "test"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        parts = (self.train, self.validation, self.test)
        combined = np.concatenate(parts)
        if combined.size != np.unique(combined).size:
            raise ValueError("split roles overlap")

    @property
    def n_total(self) -> int:
        return self.train.size + self.validation.size + self.test.size

    def role_of(self) -> np.ndarray:
        """Array of role labels indexed by epoch position."""
        out = np.empty(self.n_total, dtype=object)
        out[self.train] = "train"
        out[self.validation] = "validation"
        out[self.test] = "test"
        return out


def _apportion(total: int, weights) -> list[int]:
    """Largest-remainder rounding of total into len(weights) parts."""
    weights = np.asarray(weights, dtype=float)
    raw = total * weights / weights.sum()
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts.tolist()


def split_dataset(
    n_epochs: int,
    fractions=(0.6, 0.2, 0.2),
    layout: SplitLayout | None = None,
) -> SplitIndex:
    """Deterministic contiguous-block split over n_epochs indices."""
    if n_epochs <= 0:
        raise ValueError("n_epochs must be positive")
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError("need three non-negative fractions")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    layout = layout or SplitLayout()

    role_totals = dict(
        zip(("train", "validation", "test"), _apportion(n_epochs, fractions))
    )
    block_counts = []
    for role in ("train", "validation", "test"):
        weights = [w for r, w in layout.blocks if r == role]
        block_counts.append(iter(_apportion(role_totals[role], weights)))
    per_role = dict(zip(("train", "validation", "test"), block_counts))

    cursor = 0
    indices: dict[str, list[np.ndarray]] = {"train": [], "validation": [], "test": []}
    for role, _ in layout.blocks:
        count = next(per_role[role])
        indices[role].append(np.arange(cursor, cursor + count, dtype=np.int64))
        cursor += count
    return SplitIndex(
        train=np.concatenate(indices["train"]),
        validation=np.concatenate(indices["validation"]),
        test=np.concatenate(indices["test"]),
    )


def bin_conditions(F10, ap):
    """(f10_bin, ap_bin) index pairs; upper edges inclusive."""
    F10 = np.atleast_1d(np.asarray(F10, dtype=float))
    ap = np.atleast_1d(np.asarray(ap, dtype=float))
    if not (np.all(np.isfinite(F10)) and np.all(np.isfinite(ap))):
        raise ValueError("bin inputs must be finite")
    f10_bin = np.searchsorted(F10_BIN_EDGES, F10, side="left")
    ap_bin = np.searchsorted(AP_BIN_EDGES, ap, side="left")
    return f10_bin, ap_bin
