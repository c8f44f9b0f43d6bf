"""Probabilistic reduced-order modeling of thermospheric density.

A gridded log-density archive is compressed with a truncated principal
component basis; a dropout neural network maps space-weather driver
features to the temporal coefficients; Monte-Carlo sampling of the
dropout masks turns each prediction into a distribution whose interval
coverage is scored by the calibration module and propagated to density
along orbit tracks.
"""

__version__ = "0.1.0"

from . import (  # noqa: E402  (version must precede cli import)
    calibration,
    cli,
    config,
    drivers,
    grid,
    losses,
    network,
    orbit,
    pca,
    report,
    storage,
    synth,
    tuner,
)
from .config import RunConfig  # noqa: E402

__all__ = [
    "RunConfig",
    "__version__",
    "calibration",
    "cli",
    "config",
    "drivers",
    "grid",
    "losses",
    "network",
    "orbit",
    "pca",
    "report",
    "storage",
    "synth",
    "tuner",
]
