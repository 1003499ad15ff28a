"""Forecast error metrics: MAPE, RMSPE, R^2, MAE/MSE and absolute-percentage-error statistics."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np


class MetricError(ValueError):
    """Raised when a metric is undefined for the given inputs."""


@dataclass(frozen=True)
class MetricReport:
    mape: float
    rmspe: float
    r2: float
    mae: float
    mse: float
    n_used: int
    n_excluded_near_zero: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ApeStats:
    max: float
    min: float
    median: float
    std_dev: float

    def to_dict(self) -> dict:
        return asdict(self)


def _pair(actual, predicted):
    y = np.asarray(actual, dtype=np.float64).reshape(-1)
    yhat = np.asarray(predicted, dtype=np.float64).reshape(-1)
    if y.shape != yhat.shape:
        raise MetricError(f"length mismatch: {y.size} actual vs {yhat.size} predicted")
    return y, yhat


def near_zero_mask(actual, threshold: float = 0.0) -> np.ndarray:
    """True where a sample is excluded from percentage metrics.

    Samples are excluded when ``|actual| < threshold`` or ``actual == 0``.
    """
    y = np.asarray(actual, dtype=np.float64).reshape(-1)
    return (np.abs(y) < threshold) | (y == 0)


def relative_threshold(actual, fraction: float = 0.01) -> float:
    """``fraction`` of the mean absolute actual value."""
    return fraction * float(np.mean(np.abs(actual)))


def _ratios(actual, predicted, threshold: float) -> np.ndarray:
    y, yhat = _pair(actual, predicted)
    keep = ~near_zero_mask(y, threshold)
    if not keep.any():
        raise MetricError("every sample was excluded by the near-zero threshold")
    return (y[keep] - yhat[keep]) / y[keep]


def ape(actual, predicted, threshold: float = 0.0) -> np.ndarray:
    """Absolute percentage errors of the samples that survive the threshold."""
    return np.abs(_ratios(actual, predicted, threshold)) * 100.0


def mape(actual, predicted, threshold: float = 0.0) -> float:
    return float(np.mean(np.abs(_ratios(actual, predicted, threshold))) * 100.0)


def rmspe(actual, predicted, threshold: float = 0.0) -> float:
    r = _ratios(actual, predicted, threshold)
    return float(np.sqrt(np.mean(r * r)) * 100.0)


def r2_score(actual, predicted) -> float:
    """Coefficient of determination; negative for fits worse than the mean."""
    y, yhat = _pair(actual, predicted)
    if y.size < 2:
        raise MetricError("R^2 needs at least two samples")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise MetricError("R^2 is undefined for a constant actual series")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def mae_mse(actual, predicted) -> tuple[float, float]:
    y, yhat = _pair(actual, predicted)
    if y.size == 0:
        raise MetricError("empty input")
    e = y - yhat
    return float(np.mean(np.abs(e))), float(np.mean(e * e))


def ape_stats(actual, predicted, threshold: float = 0.0, median: str = "lower") -> ApeStats:
    """Max, min, median and population standard deviation of APEs.

    ``median="lower"`` takes the lower of the two middle values for even
    counts; ``"midpoint"`` averages them.
    """
    a = np.sort(ape(actual, predicted, threshold))
    if median == "lower":
        mid = float(a[(a.size - 1) // 2])
    elif median == "midpoint":
        mid = float(np.median(a))
    else:
        raise ValueError(f"median must be 'lower' or 'midpoint', got {median!r}")
    return ApeStats(max=float(a[-1]), min=float(a[0]), median=mid, std_dev=float(np.std(a)))


def metric_report(actual, predicted, threshold: float = 0.0) -> MetricReport:
    y, yhat = _pair(actual, predicted)
    excluded = int(near_zero_mask(y, threshold).sum())
    mae, mse = mae_mse(y, yhat)
    return MetricReport(mape=mape(y, yhat, threshold), rmspe=rmspe(y, yhat, threshold),
                        r2=r2_score(y, yhat), mae=mae, mse=mse,
                        n_used=y.size - excluded, n_excluded_near_zero=excluded)
