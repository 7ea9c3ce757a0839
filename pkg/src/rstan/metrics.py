"""Evaluation metrics and pulse analysis (smoothing, peaks, inter-beat intervals)."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import find_peaks
from scipy.stats import rankdata

from .errors import ContractError, DegenerateSignalError, DimensionError, UndefinedMetricError


@dataclass
class Signal:
    samples: np.ndarray
    sample_rate: float = 1.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ContractError("sample_rate must be positive")

    def __len__(self):
        return len(self.samples)


@dataclass
class IbiSeries:
    peak_indices: np.ndarray
    sample_rate: float
    intervals: np.ndarray = field(init=False)

    def __post_init__(self):
        self.peak_indices = np.asarray(self.peak_indices, dtype=np.int64)
        if np.any(np.diff(self.peak_indices) <= 0):
            raise ContractError("peak indices must be strictly ascending")
        self.intervals = np.diff(self.peak_indices) / float(self.sample_rate)


def _samples(x) -> np.ndarray:
    if isinstance(x, Signal):
        return x.samples
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def accuracy(preds, labels) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape or preds.size == 0:
        raise DimensionError(f"accuracy: {preds.shape} predictions vs {labels.shape} labels")
    return float(np.mean(preds == labels))


def auc(scores, labels, exact: bool = False):
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted 1/2.

    With ``exact=True`` the value is returned as a :class:`fractions.Fraction`.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise DimensionError(f"auc: scores {s.shape} vs labels {y.shape}")
    if not set(np.unique(y).tolist()) <= {0, 1}:
        raise ContractError("auc labels must be binary 0/1")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative examples")
    # average ranks are multiples of 1/2, so twice the rank sum is an exact integer
    twice_rank_sum = int(round(2 * rankdata(s)[y == 1].sum()))
    twice_u = twice_rank_sum - n_pos * (n_pos + 1)
    value = Fraction(twice_u, 2 * n_pos * n_neg)
    return value if exact else float(value)


def pearson_metric(x, y) -> float:
    """Pearson correlation in [-1, 1]; raises on zero-variance input."""
    x, y = _samples(x), _samples(y)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise DimensionError(f"pearson_metric needs equal-length 1-D signals, got {x.shape} and {y.shape}")
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx <= 1e-24 * max(float(x @ x), 1e-300) or syy <= 1e-24 * max(float(y @ y), 1e-300):
        raise DegenerateSignalError("Pearson correlation undefined for a zero-variance signal")
    return float(np.clip(xc @ yc / np.sqrt(sxx * syy), -1.0, 1.0))


def smooth(x, window: int) -> np.ndarray:
    """Centered moving average with edge replication; length preserved."""
    x = _samples(x)
    if window < 1 or window % 2 == 0:
        raise ContractError(f"smoothing window must be a positive odd integer, got {window}")
    if window > x.size:
        raise ContractError(f"smoothing window {window} longer than signal ({x.size})")
    half = window // 2
    xp = np.pad(x, half, mode="edge")
    return np.convolve(xp, np.full(window, 1.0 / window), mode="valid")


def detect_peaks(x, min_distance: int = 1, min_prominence: float | None = None,
                 sample_rate: float | None = None) -> IbiSeries:
    """Local maxima with prominence >= ``min_prominence`` (default 0.1 x
    peak-to-peak), then thinned greedily from the tallest down so that kept
    peaks are at least ``min_distance`` samples apart."""
    if min_distance < 1:
        raise ContractError("min_distance must be >= 1")
    rate = sample_rate if sample_rate is not None else getattr(x, "sample_rate", 1.0)
    x = _samples(x)
    if min_prominence is None:
        min_prominence = 0.1 * float(np.ptp(x)) if x.size else 0.0
    cand, _ = find_peaks(x, prominence=max(min_prominence, np.finfo(float).tiny))
    keep = np.ones(cand.size, dtype=bool)
    for i in np.argsort(-x[cand], kind="stable"):
        if not keep[i]:
            continue
        close = np.abs(cand - cand[i]) < min_distance
        close[i] = False
        keep &= ~close
    return IbiSeries(cand[keep], rate)


METRIC_COLUMNS = ("run_id", "stage", "epoch", "split", "fold", "metric", "value")


def write_metric_rows(path, rows, append: bool = True) -> None:
    """Append metric rows (dicts with METRIC_COLUMNS keys) to a CSV file."""
    path = Path(path)
    new = not path.exists() or not append
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        if new:
            w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in METRIC_COLUMNS})


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def read_metric_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
