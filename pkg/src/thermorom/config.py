"""Run configuration: a sectioned JSON file checked against a schema.

Every pipeline stage reads the same file, so a run is pinned by one
document.  Unknown sections or keys are rejected outright instead of
being ignored: a typo like ``dropuot_p`` must fail loudly, not silently
train the default.  ``dataset_hash`` covers only the sections that
define the dataset (seed, grid, synth, split, pca), so models trained
with different losses or input sets on the same data share a hash and
can be combined in one report; the evaluation protocol is hashed
separately by ``eval_hash``.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .calibration import IntervalSet
from .drivers import FEATURE_SET_IDS, SplitLayout, normalize_set_id
from .grid import GridSpec
from .network import ACTIVATIONS, LayerSpec, LossConfig, OptConfig
from .losses import LOSS_KINDS
from .storage import config_hash
from .synth import SynthConfig
from .tuner import SearchBudget, SearchSpace

ENV_PREFIX = "THERMOROM_"


class ConfigError(ValueError):
    """Configuration file is malformed or violates the schema."""


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("run.workers must be >= 1")


@dataclass(frozen=True)
class GridSection:
    """Axes are derived: lon spans the circle, lat spans pole to pole."""

    n_lon: int = 12
    n_lat: int = 10
    n_alt: int = 14
    alt_start_km: float = 175.0
    alt_step_km: float = 50.0

    def __post_init__(self):
        if min(self.n_lon, self.n_lat) < 2 or self.n_alt < 2:
            raise ConfigError("grid needs at least two nodes per axis")
        if self.alt_step_km <= 0:
            raise ConfigError("grid.alt_step_km must be positive")


@dataclass(frozen=True)
class SynthSection:
    n_epochs: int = 20480
    cadence_s: int = 10800
    start_epoch: int = 946684800
    solar_cycles: float = 1.0
    f10_mid: float = 130.0
    f10_amplitude: float = 60.0
    f10_rotation_amplitude: float = 12.0
    storms_per_day: float = 0.08
    storm_scale: float = 120.0
    storm_decay_hours: float = 12.0
    noise_level: float = 0.02
    driver_noise: float = 1.0


@dataclass(frozen=True)
class SplitSection:
    train: float = 0.6
    validation: float = 0.2
    test: float = 0.2
    # finer interleaving keeps every solar-cycle phase represented in all
    # three roles, so held-out segments are interpolation, not extrapolation
    rounds: int = 4

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("split.rounds must be >= 1")


@dataclass(frozen=True)
class PcaSection:
    order: int = 10
    method: str = "auto"
    fit_on: str = "train"  # "train" avoids leaking validation/test epochs

    def __post_init__(self):
        if self.order < 1:
            raise ConfigError("pca.order must be >= 1")
        if self.method not in ("auto", "dense", "subspace"):
            raise ConfigError(f"unknown pca.method {self.method!r}")
        if self.fit_on not in ("train", "all"):
            raise ConfigError(f"unknown pca.fit_on {self.fit_on!r}")


@dataclass(frozen=True)
class FeaturesSection:
    set_id: str = "jbh"

    def __post_init__(self):
        object.__setattr__(self, "set_id", normalize_set_id(self.set_id))
        if self.set_id not in FEATURE_SET_IDS:
            raise ConfigError(f"unknown features.set_id {self.set_id!r}")


@dataclass(frozen=True)
class TrainSection:
    loss: str = "nlpd"
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 1e-3
    k_train: int = 16
    hidden_layers: int = 2
    width: int = 64
    activation: str = "tanh"
    dropout_p: float = 0.1
    # second stage at more replicas and a lower rate: the replica-averaged
    # spread gradient is far less noisy, which settles the predicted sigmas
    refine_epochs: int = 40
    refine_k: int = 96
    refine_learning_rate: float = 3e-4

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown train.loss {self.loss!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown train.activation {self.activation!r}")
        if self.k_train < 2:
            raise ConfigError("train.k_train must be >= 2")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("train.dropout_p must lie in [0, 1)")
        if min(self.epochs, self.batch_size, self.hidden_layers, self.width) < 1:
            raise ConfigError("train counts must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("train.learning_rate must be positive")
        if self.refine_epochs < 0 or self.refine_k < 2:
            raise ConfigError("train.refine_epochs must be >= 0 and refine_k >= 2")
        if self.refine_learning_rate <= 0:
            raise ConfigError("train.refine_learning_rate must be positive")


@dataclass(frozen=True)
class TunerSection:
    trials: int = 100
    random: int = 25
    epochs: int = 100
    replicates: int = 3
    keep_top: int = 10
    hidden_layers: tuple[int, int] = (1, 6)
    widths: tuple[int, ...] = (64, 128, 256, 512)
    activations: tuple[str, ...] = ("tanh", "relu", "sigmoid")
    dropout: tuple[float, float] = (0.05, 0.5)
    learning_rate: tuple[float, float] = (1e-4, 1e-2)

    def __post_init__(self):
        if self.keep_top < 1:
            raise ConfigError("tuner.keep_top must be >= 1")


@dataclass(frozen=True)
class EvalSection:
    k: int = 256
    levels: tuple[float, ...] | None = None  # None = the standard 20 levels

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError("eval.k must be >= 2")


@dataclass(frozen=True)
class OrbitSection:
    altitude_km: float = 450.0
    inclination_deg: float = 87.0
    cadence_s: int = 60
    duration_days: float = 365.0
    stride: int = 10
    k: int = 100
    storm_days: float = 6.0

    def __post_init__(self):
        if self.cadence_s < 1 or self.stride < 1 or self.k < 2:
            raise ConfigError("orbit cadence/stride/k must be positive")
        if self.duration_days <= 0 or self.storm_days <= 0:
            raise ConfigError("orbit durations must be positive")


_SECTIONS = {
    "run": RunSection,
    "grid": GridSection,
    "synth": SynthSection,
    "split": SplitSection,
    "pca": PcaSection,
    "features": FeaturesSection,
    "train": TrainSection,
    "tuner": TunerSection,
    "eval": EvalSection,
    "orbit": OrbitSection,
}

# sections whose values define the dataset itself
_DATASET_SECTIONS = ("run", "grid", "synth", "split", "pca")


def _convert(where: str, value, annot: str):
    """Coerce a JSON value to the annotated field type, or refuse."""
    try:
        if annot == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError
            return value
        if annot == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError
            return float(value)
        if annot == "str":
            if not isinstance(value, str):
                raise TypeError
            return value
        if annot.startswith("tuple[") and isinstance(value, (list, tuple)):
            inner = annot[len("tuple[") : annot.index("]")]
            parts = [p.strip() for p in inner.split(",")]
            if parts[-1] == "...":
                elems = tuple(_convert(where, v, parts[0]) for v in value)
            else:
                if len(value) != len(parts):
                    raise TypeError
                elems = tuple(
                    _convert(where, v, p) for v, p in zip(value, parts)
                )
            return elems
        if annot.endswith("| None"):
            if value is None:
                return None
            return _convert(where, value, annot[: annot.index("|")].strip())
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected {annot}, got {value!r}") from None
    raise ConfigError(f"{where}: expected {annot}, got {value!r}")


def _build_section(name: str, cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {', '.join(unknown)}")
    kwargs = {
        key: _convert(f"{name}.{key}", value, known[key].type)
        for key, value in data.items()
    }
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    grid: GridSection = field(default_factory=GridSection)
    synth: SynthSection = field(default_factory=SynthSection)
    split: SplitSection = field(default_factory=SplitSection)
    pca: PcaSection = field(default_factory=PcaSection)
    features: FeaturesSection = field(default_factory=FeaturesSection)
    train: TrainSection = field(default_factory=TrainSection)
    tuner: TunerSection = field(default_factory=TunerSection)
    eval: EvalSection = field(default_factory=EvalSection)
    orbit: OrbitSection = field(default_factory=OrbitSection)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        unknown = sorted(set(data) - set(_SECTIONS))
        if unknown:
            raise ConfigError(f"unknown sections: {', '.join(unknown)}")
        sections = {
            name: _build_section(name, section_cls, data.get(name, {}))
            for name, section_cls in _SECTIONS.items()
        }
        return cls(**sections)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS
        }

    def dataset_hash(self) -> str:
        doc = self.to_dict()
        return config_hash({name: doc[name] for name in _DATASET_SECTIONS})

    def eval_hash(self) -> str:
        """Hash of the evaluation protocol (MC draws, interval levels)."""
        return config_hash(dataclasses.asdict(self.eval))

    # ---- adapters to the module-level config objects ----

    def grid_spec(self) -> GridSpec:
        g = self.grid
        return GridSpec(
            longitudes=np.arange(g.n_lon) * (360.0 / g.n_lon),
            latitudes=-90.0 + np.arange(g.n_lat) * (180.0 / (g.n_lat - 1)),
            altitudes=g.alt_start_km + np.arange(g.n_alt) * g.alt_step_km,
        )

    def synth_config(self) -> SynthConfig:
        return SynthConfig(seed=self.run.seed, **dataclasses.asdict(self.synth))

    def split_fractions(self) -> tuple[float, float, float]:
        s = self.split
        return (s.train, s.validation, s.test)

    def split_layout(self) -> SplitLayout:
        round_ = (("train", 1.0), ("validation", 1.0), ("test", 1.0))
        return SplitLayout(blocks=round_ * self.split.rounds)

    def interval_set(self) -> IntervalSet:
        if self.eval.levels is None:
            return IntervalSet()
        return IntervalSet(levels=np.asarray(self.eval.levels, dtype=float))

    def loss_config(self, loss: str | None = None) -> LossConfig:
        return LossConfig(kind=loss or self.train.loss, k_train=self.train.k_train)

    def opt_config(self) -> OptConfig:
        t = self.train
        return OptConfig(
            learning_rate=t.learning_rate,
            batch_size=t.batch_size,
            epochs=t.epochs,
        )

    def refine_loss_config(self, loss: str | None = None) -> LossConfig:
        kind = loss or self.train.loss
        # mse ignores the predictive spread, so replicas add nothing there
        k = self.train.refine_k if kind != "mse" else 2
        return LossConfig(kind=kind, k_train=k)

    def refine_opt_config(self) -> OptConfig:
        t = self.train
        return OptConfig(
            learning_rate=t.refine_learning_rate,
            batch_size=t.batch_size,
            epochs=t.refine_epochs,
        )

    def hidden_layers(self) -> tuple[LayerSpec, ...]:
        t = self.train
        return tuple(
            LayerSpec(t.width, t.activation, t.dropout_p)
            for _ in range(t.hidden_layers)
        )

    def search_space(self) -> SearchSpace:
        t = self.tuner
        return SearchSpace(
            hidden_layers=t.hidden_layers,
            widths=t.widths,
            activations=t.activations,
            dropout_range=t.dropout,
            learning_rate_range=t.learning_rate,
        )

    def search_budget(self) -> SearchBudget:
        t = self.tuner
        return SearchBudget(
            n_trials=t.trials,
            n_random=t.random,
            epochs=t.epochs,
            replicates=t.replicates,
        )


def apply_env_overrides(data: dict, environ=None) -> dict:
    """Overlay THERMOROM_<SECTION>_<KEY> environment variables.

    Values are parsed as JSON when possible (numbers, lists, null) and
    fall back to plain strings.  Returns a new nested dict.
    """
    environ = os.environ if environ is None else environ
    merged = {k: dict(v) for k, v in data.items() if isinstance(v, dict)}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX) :].lower()
        section, _, key = rest.partition("_")
        if section not in _SECTIONS or not key:
            raise ConfigError(f"unrecognized override variable {name}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        merged.setdefault(section, {})[key] = value
    return merged
