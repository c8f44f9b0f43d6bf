"""Density-space error metrics and the binned / per-model summary tables.

Errors are mean absolute percent errors relative to the truth density,
aggregated per space-weather condition bin (the F10 x ap grid of the data
description) with "All" margins pooled over the underlying samples rather
than averaged over cells.  Score tables collect one number per (loss,
input set) pair for a split, in a fixed ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .drivers import AP_BIN_LABELS, F10_BIN_LABELS, bin_conditions
from .storage import read_csv, write_csv

LOSS_ORDER = ("mse", "nlpd", "crps")
SET_ORDER = ("jb", "jbh", "jbh0")


def mae_density(pred, truth) -> float:
    """Mean absolute percent error, |pred - truth| / truth * 100."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} != {truth.shape}")
    if np.any(truth <= 0):
        raise ValueError("truth density must be strictly positive")
    return float(np.mean(np.abs(pred - truth) / truth) * 100.0)


@dataclass(frozen=True)
class ErrorTable:
    """MAE%% per (ap bin, F10 bin) cell with pooled "All" margins.

    ``mae`` and ``n_epochs`` are (n_ap + 1, n_f10 + 1); the last row and
    column are the margins.  Empty cells hold NaN and a zero count.
    """

    mae: np.ndarray
    n_epochs: np.ndarray

    row_labels = AP_BIN_LABELS + ("All ap",)
    col_labels = F10_BIN_LABELS + ("All F10",)

    def __post_init__(self):
        expected = (len(AP_BIN_LABELS) + 1, len(F10_BIN_LABELS) + 1)
        if self.mae.shape != expected or self.n_epochs.shape != expected:
            raise ValueError(f"tables must be shaped {expected}")

    @property
    def overall(self) -> float:
        return float(self.mae[-1, -1])

    def save_csv(self, path, annotations: dict | None = None) -> None:
        rows = []
        for i, row_label in enumerate(self.row_labels):
            for j, col_label in enumerate(self.col_labels):
                if self.n_epochs[i, j] == 0:
                    continue
                rows.append(
                    (row_label, col_label, self.mae[i, j], int(self.n_epochs[i, j]))
                )
        write_csv(
            path, ("ap_bin", "f10_bin", "mae_percent", "n_epochs"), rows, annotations
        )

    def to_text(self) -> str:
        width = max(len(l) for l in self.row_labels + self.col_labels) + 2
        header = "".join(l.rjust(width) for l in ("",) + self.col_labels)
        lines = [header]
        for i, row_label in enumerate(self.row_labels):
            cells = [row_label.rjust(width)]
            for j in range(len(self.col_labels)):
                if self.n_epochs[i, j] == 0:
                    cells.append("-".rjust(width))
                else:
                    cells.append(f"{self.mae[i, j]:.2f}%".rjust(width))
            lines.append("".join(cells))
        return "\n".join(lines)


def binned_error_table(pred, truth, f10, ap) -> ErrorTable:
    """Per-condition-bin MAE%% for epoch-aligned density grids.

    ``pred``/``truth`` are (epochs, cells); ``f10``/``ap`` give each
    epoch's conditions.
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise ValueError("pred and truth must be matching (epochs, cells) arrays")
    f10 = np.asarray(f10, dtype=float)
    ap = np.asarray(ap, dtype=float)
    if f10.shape != (pred.shape[0],) or ap.shape != (pred.shape[0],):
        raise ValueError("need one F10 and ap value per epoch")
    if np.any(truth <= 0):
        raise ValueError("truth density must be strictly positive")

    f10_bin, ap_bin = bin_conditions(f10, ap)
    n_ap, n_f10 = len(AP_BIN_LABELS), len(F10_BIN_LABELS)
    err_sums = np.zeros((n_ap + 1, n_f10 + 1))
    sample_counts = np.zeros((n_ap + 1, n_f10 + 1), dtype=np.int64)
    epoch_counts = np.zeros((n_ap + 1, n_f10 + 1), dtype=np.int64)
    rel = np.abs(pred - truth) / truth
    per_epoch_sum = rel.sum(axis=1)
    cells = pred.shape[1]
    for i in range(n_ap):
        for j in range(n_f10):
            members = (ap_bin == i) & (f10_bin == j)
            err_sums[i, j] = per_epoch_sum[members].sum()
            sample_counts[i, j] = members.sum() * cells
            epoch_counts[i, j] = members.sum()
    # margins pool the underlying samples
    err_sums[-1, :-1] = err_sums[:-1, :-1].sum(axis=0)
    err_sums[:-1, -1] = err_sums[:-1, :-1].sum(axis=1)
    err_sums[-1, -1] = err_sums[:-1, :-1].sum()
    for table in (sample_counts, epoch_counts):
        table[-1, :-1] = table[:-1, :-1].sum(axis=0)
        table[:-1, -1] = table[:-1, :-1].sum(axis=1)
        table[-1, -1] = table[:-1, :-1].sum()
    with np.errstate(invalid="ignore"):
        mae = np.where(
            sample_counts > 0, 100.0 * err_sums / np.maximum(sample_counts, 1), np.nan
        )
    return ErrorTable(mae=mae, n_epochs=epoch_counts)


@dataclass(frozen=True)
class ScoreTable:
    """One metric per (loss, input set) for a split; NaN marks absent."""

    split: str
    metric: str
    values: np.ndarray  # (len(LOSS_ORDER), len(SET_ORDER))

    def __post_init__(self):
        if self.values.shape != (len(LOSS_ORDER), len(SET_ORDER)):
            raise ValueError(
                f"values must be {(len(LOSS_ORDER), len(SET_ORDER))}"
            )

    def cell(self, loss: str, set_id: str) -> float:
        return float(
            self.values[LOSS_ORDER.index(loss), SET_ORDER.index(set_id)]
        )

    def to_text(self) -> str:
        width = 12
        lines = [f"{self.metric} ({self.split} split)"]
        lines.append(
            "".join(l.rjust(width) for l in ("loss",) + SET_ORDER)
        )
        for i, loss in enumerate(LOSS_ORDER):
            cells = [loss.rjust(width)]
            for j in range(len(SET_ORDER)):
                v = self.values[i, j]
                cells.append(("-" if not np.isfinite(v) else f"{v:.4f}").rjust(width))
            lines.append("".join(cells))
        return "\n".join(lines)


def make_score_table(split: str, metric: str, cells: dict) -> ScoreTable:
    """Build a table from a {(loss, set_id): value} mapping."""
    values = np.full((len(LOSS_ORDER), len(SET_ORDER)), np.nan)
    for (loss, set_id), value in cells.items():
        if loss not in LOSS_ORDER or set_id not in SET_ORDER:
            raise ValueError(f"unknown table cell ({loss}, {set_id})")
        values[LOSS_ORDER.index(loss), SET_ORDER.index(set_id)] = value
    return ScoreTable(split=split, metric=metric, values=values)


def save_score_tables_csv(path, tables, annotations: dict | None = None) -> None:
    rows = []
    for table in tables:
        for i, loss in enumerate(LOSS_ORDER):
            row = [table.split, table.metric, loss]
            for j in range(len(SET_ORDER)):
                v = table.values[i, j]
                row.append("" if not np.isfinite(v) else v)
            rows.append(row)
    write_csv(path, ("split", "metric", "loss") + SET_ORDER, rows, annotations)


def load_score_tables_csv(path):
    annotations, columns, rows = read_csv(path)
    if columns != ["split", "metric", "loss"] + list(SET_ORDER):
        raise ValueError(f"unexpected score CSV columns: {columns}")
    grouped: dict[tuple[str, str], dict] = {}
    for row in rows:
        key = (row[0], row[1])
        cells = grouped.setdefault(key, {})
        for j, set_id in enumerate(SET_ORDER):
            if row[3 + j] != "":
                cells[(row[2], set_id)] = float(row[3 + j])
    tables = [
        make_score_table(split, metric, cells)
        for (split, metric), cells in grouped.items()
    ]
    return tables, annotations
