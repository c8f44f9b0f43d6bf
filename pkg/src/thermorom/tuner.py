"""Architecture search: random exploration, then GP-guided exploitation.

Each trial trains several identically configured models with different
seeds and keeps the minimum final validation loss.  After the random
phase, a Gaussian-process surrogate with a squared-exponential kernel is
fitted over the encoded configurations (min-max scaled continuous
dimensions, one-hot choices) and the next trial maximizes expected
improvement over a pool of randomly sampled candidates.  Failed trials
stay in the surrogate at twice the worst finite loss so the acquisition
remains defined everywhere.

The search itself is deterministic given its seed; the objective is
pluggable so simulation studies can replace training with a closed-form
function.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from . import network
from .network import LayerSpec, LossConfig, Network, OptConfig
from .storage import format_value, stream

_TAG_TUNER = 31
_TAG_REPLICATE = 32

EI_CANDIDATES = 1024

_GP_LENGTH = 1.0
_GP_NOISE = 1e-2


@dataclass(frozen=True)
class SearchSpace:
    """Ranges and choices for the tunable hyperparameters."""

    hidden_layers: tuple[int, int] = (1, 6)  # inclusive bounds
    widths: tuple[int, ...] = (64, 128, 256, 512)
    activations: tuple[str, ...] = ("tanh", "relu", "sigmoid")
    dropout_range: tuple[float, float] = (0.05, 0.5)
    learning_rate_range: tuple[float, float] = (1e-4, 1e-2)  # log-uniform

    def __post_init__(self):
        if self.hidden_layers[0] < 1 or self.hidden_layers[1] < self.hidden_layers[0]:
            raise ValueError("hidden layer range must be non-empty and >= 1")
        if not self.widths or not self.activations:
            raise ValueError("need at least one width and activation choice")
        lo, hi = self.dropout_range
        if not 0.0 <= lo <= hi < 1.0:
            raise ValueError("dropout range must lie inside [0, 1)")
        lo, hi = self.learning_rate_range
        if not 0.0 < lo <= hi:
            raise ValueError("learning rate range must be positive")


@dataclass(frozen=True)
class TrialConfig:
    """One sampled point: uniform-width hidden stack plus optimizer rate."""

    n_hidden: int
    width: int
    activation: str
    dropout_p: float
    learning_rate: float


@dataclass(frozen=True)
class SearchBudget:
    n_trials: int = 100
    n_random: int = 25
    epochs: int = 100
    replicates: int = 3

    def __post_init__(self):
        if self.n_trials < 1 or self.replicates < 1 or self.epochs < 1:
            raise ValueError("budget counts must be positive")
        if not 1 <= self.n_random <= self.n_trials:
            raise ValueError("need 1 <= n_random <= n_trials")


@dataclass(frozen=True)
class Trial:
    trial_id: int
    config: TrialConfig
    replicate_losses: tuple[float, ...]
    replicate_seeds: tuple[int, ...]
    val_loss: float  # min over finite replicate losses; NaN when all failed
    best_replicate: int  # -1 when all failed
    model: Network | None
    wall_time_s: float

    @property
    def failed(self) -> bool:
        return not np.isfinite(self.val_loss)


def sample_config(space: SearchSpace, rng: np.random.Generator) -> TrialConfig:
    lo, hi = space.hidden_layers
    d_lo, d_hi = space.dropout_range
    l_lo, l_hi = space.learning_rate_range
    return TrialConfig(
        n_hidden=int(rng.integers(lo, hi + 1)),
        width=int(space.widths[rng.integers(len(space.widths))]),
        activation=str(space.activations[rng.integers(len(space.activations))]),
        dropout_p=float(rng.uniform(d_lo, d_hi)),
        learning_rate=float(np.exp(rng.uniform(np.log(l_lo), np.log(l_hi)))),
    )


def config_in_space(space: SearchSpace, cfg: TrialConfig) -> bool:
    lo, hi = space.hidden_layers
    d_lo, d_hi = space.dropout_range
    l_lo, l_hi = space.learning_rate_range
    return (
        lo <= cfg.n_hidden <= hi
        and cfg.width in space.widths
        and cfg.activation in space.activations
        and d_lo <= cfg.dropout_p <= d_hi
        and l_lo <= cfg.learning_rate <= l_hi
    )


def encode_config(space: SearchSpace, cfg: TrialConfig) -> np.ndarray:
    """Min-max continuous dimensions plus one-hot choices."""

    def minmax(v, lo, hi):
        return 0.5 if hi == lo else (v - lo) / (hi - lo)

    lo, hi = space.hidden_layers
    d_lo, d_hi = space.dropout_range
    l_lo, l_hi = space.learning_rate_range
    parts = [
        minmax(cfg.n_hidden, lo, hi),
        minmax(cfg.dropout_p, d_lo, d_hi),
        minmax(np.log(cfg.learning_rate), np.log(l_lo), np.log(l_hi)),
    ]
    parts.extend(1.0 if cfg.width == w else 0.0 for w in space.widths)
    parts.extend(1.0 if cfg.activation == a else 0.0 for a in space.activations)
    return np.asarray(parts, dtype=float)


def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * A @ B.T
    )


def _expected_improvement(X, y, candidates):
    """EI for minimization under a fixed-hyperparameter GP surrogate."""
    y = np.asarray(y, dtype=float)
    y_mean = y.mean()
    y_std = y.std()
    y_std = y_std if y_std > 0 else 1.0
    yn = (y - y_mean) / y_std

    K = np.exp(-0.5 * np.maximum(_sq_dists(X, X), 0.0) / _GP_LENGTH**2)
    K[np.diag_indices_from(K)] += _GP_NOISE
    L = np.linalg.cholesky(K)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, yn))

    Ks = np.exp(-0.5 * np.maximum(_sq_dists(X, candidates), 0.0) / _GP_LENGTH**2)
    mu = Ks.T @ alpha
    v = np.linalg.solve(L, Ks)
    var = np.clip(1.0 + _GP_NOISE - np.sum(v * v, axis=0), 1e-12, None)
    sd = np.sqrt(var)

    best = yn.min()
    z = (best - mu) / sd
    cdf = 0.5 * (1.0 + special.erf(z / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
    return (best - mu) * cdf + sd * pdf


def _propose(space, trials, rng) -> TrialConfig:
    encoded = np.array([encode_config(space, t.config) for t in trials])
    losses = np.array([t.val_loss for t in trials], dtype=float)
    finite = np.isfinite(losses)
    if not np.any(finite):
        return sample_config(space, rng)
    penalty = 2.0 * losses[finite].max()
    losses = np.where(finite, losses, penalty)

    candidates = [sample_config(space, rng) for _ in range(EI_CANDIDATES)]
    cand_enc = np.array([encode_config(space, c) for c in candidates])
    ei = _expected_improvement(encoded, losses, cand_enc)
    return candidates[int(np.argmax(ei))]


def replicate_seed(master_seed: int, trial_id: int, rep: int) -> int:
    seq = np.random.SeedSequence([int(master_seed), _TAG_REPLICATE, trial_id, rep])
    return int(seq.generate_state(1)[0])


def make_training_objective(
    X_train,
    y_train,
    X_val,
    y_val,
    loss_cfg: LossConfig,
    scaler,
    set_id: str | None = None,
    basis_hash: str | None = None,
    batch_size: int = 256,
):
    """Objective that trains a network per the trial config.

    Returns ``objective(config, rep_seed, epochs) -> (val_loss, model)``
    where val_loss is the final epoch's validation loss.
    """
    X_train = np.asarray(X_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    input_dim = X_train.shape[1]
    output_dim = y_train.shape[1]

    def objective(config: TrialConfig, rep_seed: int, epochs: int):
        hidden = tuple(
            LayerSpec(config.width, config.activation, config.dropout_p)
            for _ in range(config.n_hidden)
        )
        net = network.init(
            hidden,
            input_dim,
            output_dim,
            seed=rep_seed,
            scaler=scaler,
            set_id=set_id,
            basis_hash=basis_hash,
        )
        opt = OptConfig(
            learning_rate=config.learning_rate, batch_size=batch_size, epochs=epochs
        )
        net, history = network.train(
            net, X_train, y_train, X_val, y_val, loss_cfg, opt, seed=rep_seed
        )
        return history[-1][2], net

    return objective


class TunerLedger:
    """Append-only CSV of trial outcomes."""

    def __init__(self, path, replicates: int):
        self.path = path
        self.replicates = replicates
        self.columns = (
            ("trial_id", "n_hidden", "width", "activation", "dropout_p", "learning_rate")
            + tuple(f"rep_loss_{i + 1}" for i in range(replicates))
            + ("min_val_loss", "wall_time_s")
        )
        with open(path, "a") as fh:
            if fh.tell() == 0:
                fh.write(",".join(self.columns) + "\n")

    def append(self, trial: Trial) -> None:
        cfg = trial.config
        row = [
            trial.trial_id,
            cfg.n_hidden,
            cfg.width,
            cfg.activation,
            cfg.dropout_p,
            cfg.learning_rate,
        ]
        row.extend(
            "" if not np.isfinite(l) else l for l in trial.replicate_losses
        )
        row.append("" if trial.failed else trial.val_loss)
        row.append(round(trial.wall_time_s, 3))
        with open(self.path, "a") as fh:
            fh.write(",".join(format_value(v) for v in row) + "\n")


def search(
    space: SearchSpace,
    budget: SearchBudget,
    objective,
    seed: int = 0,
    keep_top: int = 10,
    ledger: TunerLedger | None = None,
) -> list[Trial]:
    """Run the staged search; returns trials ranked by ascending val_loss.

    Models are retained only on the ``keep_top`` best trials.  Raises when
    every trial fails, carrying per-trial diagnostics.
    """
    rng = stream(seed, _TAG_TUNER)
    trials: list[Trial] = []
    for trial_id in range(budget.n_trials):
        if trial_id < budget.n_random:
            config = sample_config(space, rng)
        else:
            config = _propose(space, trials, rng)
        if not config_in_space(space, config):
            raise RuntimeError(f"proposed config escaped the space: {config}")

        t0 = time.perf_counter()
        rep_losses: list[float] = []
        rep_seeds: list[int] = []
        best_loss = np.inf
        best_rep = -1
        best_model = None
        for rep in range(budget.replicates):
            rs = replicate_seed(seed, trial_id, rep)
            rep_seeds.append(rs)
            try:
                val, model = objective(config, rs, budget.epochs)
                val = float(val)
            except (RuntimeError, FloatingPointError, ValueError):
                val, model = np.nan, None
            rep_losses.append(val)
            if np.isfinite(val) and val < best_loss:
                best_loss, best_rep, best_model = val, rep, model
        trial = Trial(
            trial_id=trial_id,
            config=config,
            replicate_losses=tuple(rep_losses),
            replicate_seeds=tuple(rep_seeds),
            val_loss=best_loss if np.isfinite(best_loss) else np.nan,
            best_replicate=best_rep,
            model=best_model,
            wall_time_s=time.perf_counter() - t0,
        )
        trials.append(trial)
        if ledger is not None:
            ledger.append(trial)

    if all(t.failed for t in trials):
        detail = "; ".join(
            f"trial {t.trial_id}: losses {t.replicate_losses}" for t in trials
        )
        raise RuntimeError(f"every tuner trial failed: {detail}")

    ranked = sorted(
        trials, key=lambda t: (np.isnan(t.val_loss), t.val_loss, t.trial_id)
    )
    return [
        t if i < keep_top else replace(t, model=None) for i, t in enumerate(ranked)
    ]
