"""Feed-forward network with per-node Bernoulli dropout and manual backprop.

Stochastic forward passes use inverted dropout: each retained activation is
divided by (1 - p), so the deterministic pass needs no rescaling and equals
the stochastic expectation.  Masks are returned with the forward cache and
replayed exactly during backpropagation.

Training with the NLPD/CRPS losses repeats every example k_train times
inside the batch with independent masks and feeds the per-example replica
statistics to the loss; that is algebraically the repeated-axis stacking of
inputs and outputs, without materializing the full stacked dataset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses
from .storage import read_blob, stream, write_blob

MODEL_MAGIC = b"TROMMDL1"
MODEL_VERSION = 1

ACTIVATIONS = ("tanh", "sigmoid", "relu", "linear")

# rng stream tags so every consumer derives independent, reconstructible streams
_STREAM_SHUFFLE = 11
_STREAM_DROPOUT = 12
_STREAM_VAL = 13


@dataclass(frozen=True)
class LayerSpec:
    """Width, activation, and dropout probability of one layer."""

    width: int
    activation: str = "tanh"
    dropout_p: float = 0.0

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("layer width must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout probability must lie in [0, 1)")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "relu":
        return (z > 0).astype(float)
    return np.ones_like(z)


@dataclass
class Network:
    """Dense layers ending in a linear, dropout-free output layer.

    ``layers`` includes the output layer.  The feature scaler (training
    split mean/std) is part of the model: forward passes take raw feature
    rows and standardize internally.
    """

    layers: tuple[LayerSpec, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_dim: int
    scaler_mean: np.ndarray
    scaler_std: np.ndarray
    set_id: str | None = None
    basis_hash: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("need at least the output layer")
        out = self.layers[-1]
        if out.activation != "linear" or out.dropout_p != 0.0:
            raise ValueError("output layer must be linear with dropout 0")
        fan_in = self.input_dim
        for spec, w, b in zip(self.layers, self.weights, self.biases):
            if w.shape != (fan_in, spec.width) or b.shape != (spec.width,):
                raise ValueError("parameter shapes do not match layer specs")
            fan_in = spec.width
        self.scaler_mean = np.asarray(self.scaler_mean, dtype=float)
        self.scaler_std = np.asarray(self.scaler_std, dtype=float)
        if self.scaler_mean.shape != (self.input_dim,) or self.scaler_std.shape != (
            self.input_dim,
        ):
            raise ValueError("scaler shape does not match input_dim")
        if np.any(self.scaler_std <= 0):
            raise ValueError("scaler std must be positive")

    @property
    def output_dim(self) -> int:
        return self.layers[-1].width

    def scale(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.scaler_mean) / self.scaler_std

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = dict(self.meta)
        meta.update(extra_meta or {})
        meta.update(
            {
                "kind": "model",
                "layers": [
                    {
                        "width": s.width,
                        "activation": s.activation,
                        "dropout_p": s.dropout_p,
                    }
                    for s in self.layers
                ],
                "input_dim": self.input_dim,
                "set_id": self.set_id,
                "basis_hash": self.basis_hash,
            }
        )
        arrays = {"scaler_mean": self.scaler_mean, "scaler_std": self.scaler_std}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"w{i}"] = w
            arrays[f"b{i}"] = b
        write_blob(path, MODEL_MAGIC, MODEL_VERSION, meta, arrays)

    @classmethod
    def load(cls, path) -> "Network":
        _, meta, arrays = read_blob(path, MODEL_MAGIC)
        specs = tuple(
            LayerSpec(l["width"], l["activation"], l["dropout_p"])
            for l in meta["layers"]
        )
        weights = [arrays[f"w{i}"] for i in range(len(specs))]
        biases = [arrays[f"b{i}"] for i in range(len(specs))]
        return cls(
            layers=specs,
            weights=weights,
            biases=biases,
            input_dim=int(meta["input_dim"]),
            scaler_mean=arrays["scaler_mean"],
            scaler_std=arrays["scaler_std"],
            set_id=meta.get("set_id"),
            basis_hash=meta.get("basis_hash"),
            meta=meta,
        )


def init(
    hidden: tuple[LayerSpec, ...] | list[LayerSpec],
    input_dim: int,
    output_dim: int,
    seed: int,
    zero_weights: bool = False,
    scaler=None,
    set_id: str | None = None,
    basis_hash: str | None = None,
) -> Network:
    """Build a network with scaled-uniform fan-in initialization.

    Weights are U(-1/sqrt(fan_in), +1/sqrt(fan_in)) from the seeded
    generator; biases start at zero.  ``zero_weights`` zeroes the weights
    instead (biases stay directly settable), for closed-form tests.
    """
    specs = tuple(hidden) + (LayerSpec(output_dim, "linear", 0.0),)
    rng = stream(seed)
    weights, biases = [], []
    fan_in = input_dim
    for spec in specs:
        bound = 1.0 / np.sqrt(fan_in)
        if zero_weights:
            w = np.zeros((fan_in, spec.width))
        else:
            w = rng.uniform(-bound, bound, size=(fan_in, spec.width))
        weights.append(w)
        biases.append(np.zeros(spec.width))
        fan_in = spec.width
    if scaler is None:
        scaler = (np.zeros(input_dim), np.ones(input_dim))
    return Network(
        layers=specs,
        weights=weights,
        biases=biases,
        input_dim=input_dim,
        scaler_mean=scaler[0],
        scaler_std=scaler[1],
        set_id=set_id,
        basis_hash=basis_hash,
    )


def forward_batch(
    net: Network,
    X: np.ndarray,
    mode: str = "deterministic",
    rng: np.random.Generator | None = None,
    keep_cache: bool = False,
):
    """Forward pass over raw feature rows.

    Returns ``(Y, cache)``; cache is None unless requested and holds the
    layer inputs, pre-activations, activations, and dropout masks needed to
    replay the exact pass in :func:`backward`.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ValueError(f"X must be (n, {net.input_dim})")
    if mode not in ("deterministic", "stochastic"):
        raise ValueError("mode must be deterministic or stochastic")
    if mode == "stochastic" and rng is None:
        raise ValueError("stochastic mode needs an rng")

    h = net.scale(X)
    inputs, pres, acts, masks = [], [], [], []
    for spec, w, b in zip(net.layers, net.weights, net.biases):
        inputs.append(h)
        z = h @ w + b
        a = _act(spec.activation, z)
        if mode == "stochastic" and spec.dropout_p > 0.0:
            keep = rng.random(a.shape) >= spec.dropout_p
            mask = keep / (1.0 - spec.dropout_p)
            h = a * mask
        else:
            mask = None
            h = a
        pres.append(z)
        acts.append(a)
        masks.append(mask)
    cache = None
    if keep_cache:
        cache = {"inputs": inputs, "pres": pres, "acts": acts, "masks": masks}
    return h, cache


def forward(net: Network, x: np.ndarray, mode: str = "deterministic", rng=None):
    """Single-example forward; returns ``(output, masks)``."""
    y, cache = forward_batch(net, np.asarray(x, float)[None, :], mode, rng, True)
    return y[0], cache["masks"]


def backward(net: Network, cache: dict, upstream: np.ndarray):
    """Backpropagate d(loss)/d(output) through a cached forward pass.

    Returns ``(weight_grads, bias_grads)`` aligned with net.weights/biases.
    """
    g = np.asarray(upstream, dtype=float)
    n_layers = len(net.layers)
    if g.shape != cache["acts"][-1].shape:
        raise ValueError("upstream gradient shape does not match the cached pass")
    w_grads = [None] * n_layers
    b_grads = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        spec = net.layers[l]
        if cache["masks"][l] is not None:
            g = g * cache["masks"][l]
        g = g * _act_grad(spec.activation, cache["pres"][l], cache["acts"][l])
        w_grads[l] = cache["inputs"][l].T @ g
        b_grads[l] = g.sum(axis=0)
        if l > 0:
            g = g @ net.weights[l].T
    return w_grads, b_grads


@dataclass(frozen=True)
class PredictiveDistribution:
    """k stochastic outputs with per-output sample mean and std (ddof=1)."""

    samples: np.ndarray  # (k, r)
    mu: np.ndarray  # (r,)
    sigma: np.ndarray  # (r,)

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[0] < 2:
            raise ValueError("need a (k, r) sample matrix with k >= 2")
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be non-negative")


def mc_predict(net: Network, x, k: int, rng: np.random.Generator):
    """k stochastic forwards of one input; raw (unclamped) sigma."""
    if k < 2:
        raise ValueError("need k >= 2 for predictive statistics")
    x = np.asarray(x, dtype=float)
    samples_mu, samples_sigma, samples = _mc_over_rows(
        net, x[None, :], k, rng, keep_samples=True
    )
    return PredictiveDistribution(
        samples=samples[:, 0, :], mu=samples_mu[0], sigma=samples_sigma[0]
    )


def mc_predict_stats(
    net: Network,
    X: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_rows: int = 16384,
):
    """Streaming per-row MC statistics: (mu, sigma raw) for (n, d) inputs.

    Replicas are processed in groups sized to keep the tiled forward pass
    under ``max_rows`` rows, so memory stays flat in k.
    """
    if k < 2:
        raise ValueError("need k >= 2 for predictive statistics")
    mu, sigma, _ = _mc_over_rows(net, np.asarray(X, float), k, rng, max_rows=max_rows)
    return mu, sigma


def _mc_over_rows(net, X, k, rng, keep_samples=False, max_rows=16384):
    n = X.shape[0]
    group = max(1, min(k, max_rows // max(n, 1)))
    first = None
    sum_dev = None
    sumsq_dev = None
    kept = [] if keep_samples else None
    done = 0
    while done < k:
        g = min(group, k - done)
        tiled = np.tile(X, (g, 1))
        out, _ = forward_batch(net, tiled, "stochastic", rng)
        out = out.reshape(g, n, net.output_dim)
        if keep_samples:
            kept.append(out.copy())
        if first is None:
            # accumulate deviations from the first replica to keep the
            # variance computation well-conditioned
            first = out[0].copy()
            sum_dev = np.zeros_like(first)
            sumsq_dev = np.zeros_like(first)
        dev = out - first
        sum_dev += dev.sum(axis=0)
        sumsq_dev += (dev * dev).sum(axis=0)
        done += g
    mu = first + sum_dev / k
    var = np.maximum(sumsq_dev - sum_dev * sum_dev / k, 0.0) / (k - 1)
    sigma = np.sqrt(var)
    samples = np.concatenate(kept, axis=0) if keep_samples else None
    return mu, sigma, samples


@dataclass(frozen=True)
class LossConfig:
    kind: str = "nlpd"
    k_train: int = 32

    def __post_init__(self):
        if self.kind not in losses.LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {losses.LOSS_KINDS}")
        if self.kind != "mse" and self.k_train < 2:
            raise ValueError("NLPD/CRPS training needs k_train >= 2")


@dataclass(frozen=True)
class OptConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("invalid optimizer configuration")


def validation_loss(
    net: Network,
    X: np.ndarray,
    y: np.ndarray,
    loss_cfg: LossConfig,
    base_seed: int,
    epoch: int,
) -> float:
    """Validation loss as computed inside train() at the given epoch.

    MSE uses the deterministic forward pass; NLPD/CRPS draw k_train
    replicas from a generator derived from (base_seed, epoch), so a
    reloaded model reproduces its recorded value exactly.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if loss_cfg.kind == "mse":
        out, _ = forward_batch(net, X, "deterministic")
        return losses.mse(y, out).total
    rng = stream(base_seed, _STREAM_VAL, epoch)
    k = loss_cfg.k_train
    tiled = np.repeat(X, k, axis=0)
    out, _ = forward_batch(net, tiled, "stochastic", rng)
    samples = out.reshape(X.shape[0], k, net.output_dim)
    return losses.replica_loss(loss_cfg.kind, y, samples).total


def train(
    net: Network,
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_val: np.ndarray,
    y_val: np.ndarray,
    loss_cfg: LossConfig,
    opt_cfg: OptConfig,
    seed: int,
):
    """Mini-batch Adam training; mutates net and returns the loss history.

    History rows are (epoch, train_loss, val_loss) with train_loss the
    example-weighted mean over the epoch's batches.
    """
    X_train = np.asarray(X_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    if X_train.shape[0] != y_train.shape[0]:
        raise ValueError("feature/label row counts differ")
    if y_train.ndim != 2 or y_train.shape[1] != net.output_dim:
        raise ValueError(f"labels must be (n, {net.output_dim})")

    shuffle_rng = stream(seed, _STREAM_SHUFFLE)
    dropout_rng = stream(seed, _STREAM_DROPOUT)
    n = X_train.shape[0]
    k = loss_cfg.k_train

    m_w = [np.zeros_like(w) for w in net.weights]
    v_w = [np.zeros_like(w) for w in net.weights]
    m_b = [np.zeros_like(b) for b in net.biases]
    v_b = [np.zeros_like(b) for b in net.biases]
    step = 0
    history = []

    for epoch in range(opt_cfg.epochs):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        term_count = 0
        for start in range(0, n, opt_cfg.batch_size):
            idx = order[start : start + opt_cfg.batch_size]
            Xb, yb = X_train[idx], y_train[idx]
            if loss_cfg.kind == "mse":
                out, cache = forward_batch(net, Xb, "stochastic", dropout_rng, True)
                lv = losses.mse(yb, out)
                upstream = lv.grads["yhat"]
            else:
                tiled = np.repeat(Xb, k, axis=0)
                out, cache = forward_batch(net, tiled, "stochastic", dropout_rng, True)
                samples = out.reshape(len(idx), k, net.output_dim)
                lv = losses.replica_loss(loss_cfg.kind, yb, samples)
                upstream = lv.grads["samples"].reshape(out.shape)
            if not np.isfinite(lv.total):
                raise RuntimeError(
                    f"non-finite {loss_cfg.kind} loss at epoch {epoch}, "
                    f"batch row {start}: {lv.total}"
                )
            w_grads, b_grads = backward(net, cache, upstream)

            step += 1
            lr_t = opt_cfg.learning_rate
            c1 = 1.0 - opt_cfg.beta1**step
            c2 = 1.0 - opt_cfg.beta2**step
            for l in range(len(net.weights)):
                for par, grad, m_s, v_s in (
                    (net.weights[l], w_grads[l], m_w, v_w),
                    (net.biases[l], b_grads[l], m_b, v_b),
                ):
                    m_s[l] *= opt_cfg.beta1
                    m_s[l] += (1.0 - opt_cfg.beta1) * grad
                    v_s[l] *= opt_cfg.beta2
                    v_s[l] += (1.0 - opt_cfg.beta2) * grad * grad
                    par -= lr_t * (m_s[l] / c1) / (np.sqrt(v_s[l] / c2) + opt_cfg.eps)

            loss_sum += lv.total * len(idx)
            term_count += len(idx)
        val = validation_loss(net, X_val, y_val, loss_cfg, seed, epoch)
        history.append((epoch, loss_sum / max(term_count, 1), val))
    return net, history
