"""Error measures and correlation statistics for glucose estimates.

All error measures compare an estimated series against a reference series
in mg/dl.  Note the two relative measures use different denominators:
mARD divides by the reference value, AvgE by the estimate.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np


class MetricsError(ValueError):
    pass


def _check(ref, est, min_n: int = 1):
    ref = np.asarray(ref, dtype=float)
    est = np.asarray(est, dtype=float)
    if ref.shape != est.shape or ref.ndim != 1:
        raise MetricsError(f"shape mismatch: {ref.shape} vs {est.shape}")
    if ref.size < min_n:
        raise MetricsError(f"need at least {min_n} points, got {ref.size}")
    return ref, est


def mad(ref, est) -> float:
    """Mean absolute deviation, mg/dl."""
    ref, est = _check(ref, est)
    return float(np.mean(np.abs(est - ref)))


def mard(ref, est) -> float:
    """Mean absolute relative difference, percent of the reference value."""
    ref, est = _check(ref, est)
    if np.any(ref == 0):
        raise MetricsError("zero reference entry")
    return float(100.0 * np.mean(np.abs(est - ref) / np.abs(ref)))


def rmse(ref, est) -> float:
    """Root mean square error, mg/dl."""
    ref, est = _check(ref, est)
    return float(np.sqrt(np.mean((ref - est) ** 2)))


def avge(ref, est) -> float:
    """Mean absolute error in percent of the estimated value."""
    ref, est = _check(ref, est)
    if np.any(est == 0):
        raise MetricsError("zero estimate entry")
    return float(100.0 * np.mean(np.abs(est - ref) / np.abs(est)))


def pearson_r(ref, est) -> float:
    ref, est = _check(ref, est, min_n=2)
    dr = ref - ref.mean()
    de = est - est.mean()
    denom = np.sqrt(np.sum(dr * dr) * np.sum(de * de))
    if denom == 0:
        raise MetricsError("zero variance")
    return float(np.clip(np.sum(dr * de) / denom, -1.0, 1.0))


def r_squared(ref, est) -> float:
    """Coefficient of determination 1 - SSE/SST.

    This is not pearson_r**2 in general: on a validation set the two can
    differ, and r_squared can be negative for a fit worse than the mean.
    """
    ref, est = _check(ref, est, min_n=2)
    sst = float(np.sum((ref - ref.mean()) ** 2))
    if sst == 0:
        raise MetricsError("zero variance in reference")
    sse = float(np.sum((ref - est) ** 2))
    return 1.0 - sse / sst


@dataclass(frozen=True)
class MetricsReport:
    n: int
    mad: float
    mard: float
    rmse: float
    avge: float
    pearson_r: float
    r_squared: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def row(self, label: str) -> str:
        return (f"{label:<16}{self.r_squared:>8.2f}{self.mard:>9.2f}"
                f"{self.avge:>9.2f}{self.mad:>10.2f}{self.rmse:>10.2f}")

    @staticmethod
    def header() -> str:
        return (f"{'Model':<16}{'R2':>8}{'mARD%':>9}{'AvgE%':>9}"
                f"{'MAD':>10}{'RMSE':>10}")


def report_dict(ref, est) -> dict:
    """Tolerant report for logging training metrics: error measures always,
    correlation fields None when undefined (n < 2 or zero variance)."""
    out = {"n": int(np.asarray(ref).size),
           "mad": mad(ref, est), "mard": mard(ref, est),
           "rmse": rmse(ref, est), "avge": avge(ref, est)}
    for name, fn in (("pearson_r", pearson_r), ("r_squared", r_squared)):
        try:
            out[name] = fn(ref, est)
        except MetricsError:
            out[name] = None
    return out


def full_report(ref, est) -> MetricsReport:
    ref, est = _check(ref, est, min_n=2)
    return MetricsReport(
        n=int(ref.size),
        mad=mad(ref, est),
        mard=mard(ref, est),
        rmse=rmse(ref, est),
        avge=avge(ref, est),
        pearson_r=pearson_r(ref, est),
        r_squared=r_squared(ref, est),
    )
