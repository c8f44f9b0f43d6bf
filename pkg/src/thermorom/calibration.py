"""Prediction-interval calibration: critical values, coverage, error score.

A symmetric Gaussian prediction interval at probability PI spans
mu +/- z*sigma with z = sqrt(2) * erfinv(PI).  The critical value is found
by a bracketed root-find on erf itself, so the inverse stays consistent
with the forward function; tests compare it against an independent
numerical inverse.

Empirical coverage counts truths strictly inside the bounds.  Ties on a
bound are therefore not covered, which matters for degenerate sigma = 0
predictions: these yield zero coverage at every level and the maximal
score (for the default 20 levels and 10 outputs, exactly 104.9).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .storage import read_csv, write_csv


def _default_levels() -> np.ndarray:
    return np.append(np.arange(1, 20) * 0.05, 0.99)


@dataclass(frozen=True)
class IntervalSet:
    """Ascending interval probabilities; default 5%..95% step 5% plus 99%."""

    levels: np.ndarray = field(default_factory=_default_levels)

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        if levels.ndim != 1 or levels.size == 0:
            raise ValueError("levels must be a non-empty 1-d array")
        if np.any(levels <= 0) or np.any(levels >= 1):
            raise ValueError("levels must lie strictly inside (0, 1)")
        if np.any(np.diff(levels) <= 0):
            raise ValueError("levels must be strictly ascending")
        levels.flags.writeable = False
        object.__setattr__(self, "levels", levels)

    def __len__(self) -> int:
        return self.levels.size


def critical_value(pi: float) -> float:
    """z with erf(z / sqrt(2)) = pi, by bracketed root-find to 1e-10."""
    pi = float(pi)
    if not 0.0 <= pi < 1.0:
        raise ValueError("prediction interval must lie in [0, 1)")
    if pi == 0.0:
        return 0.0
    hi = 1.0
    while special.erf(hi / np.sqrt(2.0)) <= pi:
        hi *= 2.0
    return float(
        optimize.brentq(
            lambda z: special.erf(z / np.sqrt(2.0)) - pi, 0.0, hi, xtol=1e-12
        )
    )


def interval_bounds(mu, sigma, pi: float):
    """Symmetric bounds mu +/- z*sigma for one interval probability."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be non-negative")
    z = critical_value(pi)
    return mu - z * sigma, mu + z * sigma


def empirical_coverage(truths, lower, upper) -> float:
    """Fraction of truths strictly inside their bounds."""
    truths = np.asarray(truths, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if truths.size == 0:
        raise ValueError("need at least one sample")
    if truths.shape != lower.shape or truths.shape != upper.shape:
        raise ValueError("truths and bounds must align")
    return float(np.mean((lower < truths) & (truths < upper)))


@dataclass(frozen=True)
class CalibrationReport:
    """Expected vs observed coverage per output, plus the scalar score."""

    expected: np.ndarray  # (m,)
    observed: np.ndarray  # (r, m)
    per_output_score: np.ndarray  # (r,)
    score: float

    def __post_init__(self):
        expected = np.asarray(self.expected, dtype=float)
        observed = np.asarray(self.observed, dtype=float)
        if observed.ndim != 2 or observed.shape[1] != expected.size:
            raise ValueError("observed must be (outputs, levels)")
        if np.any(observed < 0) or np.any(observed > 1):
            raise ValueError("observed coverages must lie in [0, 1]")
        expected.flags.writeable = False
        observed.flags.writeable = False
        object.__setattr__(self, "expected", expected)
        object.__setattr__(self, "observed", observed)

    @property
    def n_outputs(self) -> int:
        return self.observed.shape[0]

    def save_curve_csv(self, path, annotations: dict | None = None) -> None:
        """Calibration-curve points: one row per (output, level)."""
        rows = (
            (i + 1, self.expected[j], self.observed[i, j])
            for i in range(self.n_outputs)
            for j in range(self.expected.size)
        )
        write_csv(path, ("output_index", "expected", "observed"), rows, annotations)

    @classmethod
    def load_curve_csv(cls, path):
        annotations, columns, rows = read_csv(path)
        if columns != ["output_index", "expected", "observed"]:
            raise ValueError(f"unexpected curve CSV columns: {columns}")
        outputs = sorted({int(r[0]) for r in rows})
        expected = np.array(
            [float(r[1]) for r in rows if int(r[0]) == outputs[0]]
        )
        observed = np.array(
            [
                [float(r[2]) for r in rows if int(r[0]) == out]
                for out in outputs
            ]
        )
        per_output = np.sum(np.abs(observed - expected), axis=1)
        report = cls(
            expected=expected,
            observed=observed,
            per_output_score=per_output,
            score=float(per_output.sum()),
        )
        return report, annotations

    def summary(self) -> str:
        lines = [f"calibration score (sum |expected-observed|): {self.score:.4f}"]
        for i, s in enumerate(self.per_output_score):
            worst = int(np.argmax(np.abs(self.observed[i] - self.expected)))
            lines.append(
                f"  output {i + 1}: score {s:.4f}, worst level "
                f"{self.expected[worst]:.2f} -> observed {self.observed[i, worst]:.4f}"
            )
        return "\n".join(lines)


def calibration_error(
    mu: np.ndarray,
    sigma: np.ndarray,
    truths: np.ndarray,
    intervals: IntervalSet | None = None,
) -> CalibrationReport:
    """Summed |expected - observed| coverage over outputs and levels.

    ``mu``, ``sigma``, ``truths`` are (n, r): n samples of r outputs.
    """
    intervals = intervals or IntervalSet()
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    truths = np.atleast_2d(np.asarray(truths, dtype=float))
    if mu.shape != sigma.shape or mu.shape != truths.shape:
        raise ValueError("mu, sigma, truths must share shape (n, r)")
    if np.any(sigma < 0):
        raise ValueError("sigma must be non-negative")

    n, r = mu.shape
    m = len(intervals)
    observed = np.empty((r, m), dtype=float)
    for j, pi in enumerate(intervals.levels):
        z = critical_value(pi)
        inside = (mu - z * sigma < truths) & (truths < mu + z * sigma)
        observed[:, j] = inside.mean(axis=0)
    gaps = np.abs(observed - intervals.levels[None, :])
    per_output = gaps.sum(axis=1)
    return CalibrationReport(
        expected=intervals.levels.copy(),
        observed=observed,
        per_output_score=per_output,
        score=float(per_output.sum()),
    )
