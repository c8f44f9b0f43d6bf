"""Reduced-order basis: truncated PCA of mean-centered log-density states.

``fit`` centers the (epochs x cells) state matrix by the per-cell temporal
mean and keeps the leading r singular triplets.  Spatial modes live in the
basis; temporal coefficients (one r-vector per epoch) are what the
regression models predict.  ``decode`` returns density in kg/m^3 (antilog
applied); ``decode_log`` stops in log10 space for consumers that still need
to interpolate linearly.

Small problems use a dense SVD.  Larger ones use blocked subspace
iteration with a fixed internal seed, so results are reproducible and the
dense path can serve as an oracle against the iterative one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .storage import epoch_to_iso, iso_to_epoch, read_blob, read_csv, write_blob, write_csv

BASIS_MAGIC = b"TROMPCA1"
BASIS_VERSION = 1

DEFAULT_ORDER = 10

# dense SVD below this size; also the oracle for the iterative path
DENSE_LIMIT = 512

_SUBSPACE_SEED = 0x5EED


@dataclass(frozen=True)
class PcaBasis:
    """Per-cell mean, orthonormal spatial modes, singular values."""

    mean: np.ndarray  # (n_cells,)
    modes: np.ndarray  # (n_cells, r), columns orthonormal
    singular_values: np.ndarray  # (r,) descending, >= 0
    total_energy: float  # squared Frobenius norm of the centered matrix
    train_recon_mae: float  # worst per-epoch density reconstruction MAE, percent
    grid_hash: str | None = None

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        modes = np.asarray(self.modes, dtype=float)
        sv = np.asarray(self.singular_values, dtype=float)
        if mean.ndim != 1 or modes.ndim != 2 or sv.ndim != 1:
            raise ValueError("bad basis array ranks")
        n, r = modes.shape
        if mean.shape != (n,) or sv.shape != (r,):
            raise ValueError("basis array shapes disagree")
        if np.any(sv < 0) or np.any(np.diff(sv) > 0):
            raise ValueError("singular values must be non-negative and descending")
        gram = modes.T @ modes
        if np.max(np.abs(gram - np.eye(r))) > 1e-10:
            raise ValueError("modes are not orthonormal to 1e-10")
        for arr in (mean, modes, sv):
            arr.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "singular_values", sv)

    @property
    def order(self) -> int:
        return self.modes.shape[1]

    @property
    def n_cells(self) -> int:
        return self.mean.size

    def save(self, path, meta: dict | None = None) -> None:
        meta = dict(meta or {})
        meta.update(
            {
                "kind": "pca_basis",
                "order": self.order,
                "total_energy": self.total_energy,
                "train_recon_mae": self.train_recon_mae,
                "grid_hash": self.grid_hash,
            }
        )
        write_blob(
            path,
            BASIS_MAGIC,
            BASIS_VERSION,
            meta,
            {
                "mean": self.mean,
                "modes": self.modes,
                "singular_values": self.singular_values,
            },
        )

    @classmethod
    def load(cls, path):
        """Returns ``(basis, meta)``."""
        _, meta, arrays = read_blob(path, BASIS_MAGIC)
        basis = cls(
            mean=arrays["mean"],
            modes=arrays["modes"],
            singular_values=arrays["singular_values"],
            total_energy=float(meta["total_energy"]),
            train_recon_mae=float(meta["train_recon_mae"]),
            grid_hash=meta.get("grid_hash"),
        )
        return basis, meta


@dataclass(frozen=True)
class CoefficientSeries:
    """Temporal coefficients, one row per epoch."""

    epochs: np.ndarray  # int64 Unix seconds
    alphas: np.ndarray  # (m, r)

    def __post_init__(self):
        epochs = np.asarray(self.epochs, dtype=np.int64)
        alphas = np.asarray(self.alphas, dtype=float)
        if epochs.ndim != 1 or alphas.ndim != 2:
            raise ValueError("epochs must be 1-d, alphas 2-d")
        if alphas.shape[0] != epochs.size:
            raise ValueError("row count != epoch count")
        epochs.flags.writeable = False
        alphas.flags.writeable = False
        object.__setattr__(self, "epochs", epochs)
        object.__setattr__(self, "alphas", alphas)

    @property
    def order(self) -> int:
        return self.alphas.shape[1]

    def __len__(self) -> int:
        return self.epochs.size

    def save_csv(self, path, annotations: dict | None = None) -> None:
        names = tuple(f"coef_{i + 1}" for i in range(self.order))
        rows = (
            (epoch_to_iso(int(e)),) + tuple(row)
            for e, row in zip(self.epochs, self.alphas)
        )
        write_csv(path, ("iso_epoch",) + names, rows, annotations)

    @classmethod
    def load_csv(cls, path):
        annotations, columns, rows = read_csv(path)
        if columns[0] != "iso_epoch" or len(columns) < 2:
            raise ValueError(f"unexpected coefficient CSV columns: {columns}")
        epochs = np.array([iso_to_epoch(r[0]) for r in rows], dtype=np.int64)
        alphas = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float)
        return cls(epochs=epochs, alphas=alphas), annotations


def _svd_dense(centered: np.ndarray, order: int):
    left, sv, right_t = np.linalg.svd(centered, full_matrices=False)
    return left[:, :order], sv[:order], right_t[:order]


def _svd_subspace(
    centered: np.ndarray,
    order: int,
    tol: float = 1e-10,
    max_iter: int = 200,
    oversample: int = 10,
):
    """Randomized blocked subspace iteration with fixed seed.

    Power steps repeat until the leading singular values stabilize to
    ``tol`` relative or the iteration cap is hit.
    """
    m, n = centered.shape
    block = min(order + oversample, min(m, n))
    rng = np.random.default_rng(_SUBSPACE_SEED)
    basis_q = np.linalg.qr(centered @ rng.standard_normal((n, block)))[0]
    prev = None
    for _ in range(max_iter):
        proj = np.linalg.qr(centered.T @ basis_q)[0]
        basis_q = np.linalg.qr(centered @ proj)[0]
        small = basis_q.T @ centered
        sv = np.linalg.svd(small, compute_uv=False)[:order]
        if prev is not None and np.all(np.abs(sv - prev) <= tol * max(sv[0], 1e-300)):
            break
        prev = sv
    small = basis_q.T @ centered
    left_s, sv, right_t = np.linalg.svd(small, full_matrices=False)
    return (basis_q @ left_s)[:, :order], sv[:order], right_t[:order]


def _fix_mode_signs(left, sv, right_t):
    """Largest-magnitude entry of each spatial mode made positive."""
    for j in range(right_t.shape[0]):
        pivot = np.argmax(np.abs(right_t[j]))
        if right_t[j, pivot] < 0:
            right_t[j] *= -1.0
            left[:, j] *= -1.0
    return left, sv, right_t


def fit(
    states: np.ndarray,
    order: int = DEFAULT_ORDER,
    epochs=None,
    method: str = "auto",
    grid_hash: str | None = None,
):
    """Fit the truncated basis on (epochs x cells) log-density states.

    Returns ``(PcaBasis, CoefficientSeries)``.  ``method`` is ``auto``
    (dense for min(m, n) <= 512, iterative above), ``dense``, or
    ``subspace``.
    """
    states = np.asarray(states, dtype=float)
    if states.ndim != 2:
        raise ValueError("states must be a 2-d (epochs x cells) matrix")
    m, n = states.shape
    if not 1 <= order <= min(m, n):
        raise ValueError(f"order {order} outside [1, {min(m, n)}]")
    if not np.all(np.isfinite(states)):
        raise ValueError("states must be finite")
    if epochs is None:
        epochs = np.arange(m, dtype=np.int64)

    mean = states.mean(axis=0)
    centered = states - mean
    total_energy = float(np.einsum("ij,ij->", centered, centered))

    if method == "auto":
        method = "dense" if min(m, n) <= DENSE_LIMIT else "subspace"
    if method == "dense":
        left, sv, right_t = _svd_dense(centered, order)
    elif method == "subspace":
        left, sv, right_t = _svd_subspace(centered, order)
    else:
        raise ValueError(f"unknown method {method!r}")
    left, sv, right_t = _fix_mode_signs(left, sv, right_t)

    modes = np.ascontiguousarray(right_t.T)
    alphas = left * sv

    recon_mae = 0.0
    for start in range(0, m, 1024):
        stop = min(start + 1024, m)
        recon = 10.0 ** (mean + alphas[start:stop] @ modes.T)
        truth = 10.0 ** states[start:stop]
        rel = np.abs(recon - truth) / truth
        recon_mae = max(recon_mae, float(rel.mean(axis=1).max()) * 100.0)

    basis = PcaBasis(
        mean=mean,
        modes=modes,
        singular_values=sv,
        total_energy=total_energy,
        train_recon_mae=recon_mae,
        grid_hash=grid_hash,
    )
    return basis, CoefficientSeries(epochs=epochs, alphas=alphas)


def encode(basis: PcaBasis, state: np.ndarray) -> np.ndarray:
    """Project state(s) onto the modes: (n,) -> (r,) or (m, n) -> (m, r)."""
    state = np.asarray(state, dtype=float)
    if state.shape[-1] != basis.n_cells:
        raise ValueError(f"state length {state.shape[-1]} != {basis.n_cells} cells")
    return (state - basis.mean) @ basis.modes


def decode_log(basis: PcaBasis, alpha: np.ndarray) -> np.ndarray:
    """Coefficients -> log10-density state(s)."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape[-1] != basis.order:
        raise ValueError(f"alpha length {alpha.shape[-1]} != order {basis.order}")
    return basis.mean + alpha @ basis.modes.T


def decode(basis: PcaBasis, alpha: np.ndarray) -> np.ndarray:
    """Coefficients -> density in kg/m^3 (strictly positive)."""
    return 10.0 ** decode_log(basis, alpha)


def explained_variance(basis: PcaBasis, total_energy: float | None = None):
    """Energy fraction captured by each kept mode."""
    total = basis.total_energy if total_energy is None else float(total_energy)
    if total <= 0:
        raise ValueError("total energy must be positive")
    return basis.singular_values**2 / total
