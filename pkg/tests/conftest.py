import numpy as np
import pytest

from thermorom.drivers import DRIVER_COLUMNS, DriverSeries
from thermorom.grid import GridSpec

HOUR = 3600


def make_drivers(
    n: int = 200,
    cadence_s: int = 3 * HOUR,
    start: int = 946684800,
    seed: int = 0,
    hourly_dst: bool = True,
) -> DriverSeries:
    """Small synthetic-ish driver series with valid ladder ap values."""
    rng = np.random.default_rng(seed)
    epochs = start + cadence_s * np.arange(n, dtype=np.int64)
    f10 = 130.0 + 25.0 * np.sin(np.arange(n) / 40.0) + rng.normal(0, 2, n)
    columns = {
        "F10": f10,
        "S10": 0.9 * f10 + 5.0,
        "M10": 0.8 * f10 + 12.0,
        "Y10": 0.7 * f10 + 20.0,
        "F81c": np.full(n, 130.0),
        "S81c": np.full(n, 122.0),
        "M81c": np.full(n, 116.0),
        "Y81c": np.full(n, 111.0),
        "ap": rng.choice([0.0, 2.0, 4.0, 7.0, 15.0, 48.0, 132.0], n),
        "Dst": rng.normal(-10.0, 5.0, n),
    }
    assert set(columns) == set(DRIVER_COLUMNS)
    dst_hourly = None
    if hourly_dst:
        hours = (epochs[-1] - epochs[0]) // HOUR + 1
        h_epochs = epochs[0] + HOUR * np.arange(hours, dtype=np.int64)
        dst_hourly = (h_epochs, np.interp(h_epochs, epochs, columns["Dst"]))
    return DriverSeries(epochs=epochs, columns=columns, hourly_dst=dst_hourly)


@pytest.fixture
def toy_spec() -> GridSpec:
    return GridSpec(
        longitudes=np.arange(4) * 90.0,
        latitudes=np.array([-90.0, -30.0, 30.0, 90.0]),
        altitudes=np.array([200.0, 300.0, 400.0]),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)
