"""Alignment and discriminability estimators and the dynamic balance factor."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

LDA_EPS = 1e-5
MAX_CONDITION = 1e15


class SingularScatterError(ArithmeticError):
    """Regularized within-class scatter is numerically singular."""


def mmd(source: np.ndarray, target: np.ndarray) -> float:
    """Linear MMD: squared Euclidean distance between the domain feature means."""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.ndim != 2 or target.ndim != 2 or len(source) == 0 or len(target) == 0:
        raise ValueError(f"mmd needs two non-empty matrices, got {source.shape} and {target.shape}")
    if source.shape[1] != target.shape[1]:
        raise ValueError(f"mmd width mismatch: {source.shape[1]} vs {target.shape[1]}")
    diff = source.mean(axis=0) - target.mean(axis=0)
    return float(diff @ diff)


@dataclass(frozen=True)
class ScatterPair:
    between: np.ndarray
    within: np.ndarray
    class_counts: np.ndarray


def scatter(features: np.ndarray, labels: np.ndarray, num_classes: int | None = None) -> ScatterPair:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError(f"scatter needs a non-empty matrix, got shape {x.shape}")
    if y.shape != (len(x),):
        raise ValueError(f"labels shape {y.shape} does not match {len(x)} rows")
    if y.min() < 0 or (num_classes is not None and y.max() >= num_classes):
        raise ValueError("labels out of range")
    k = int(y.max()) + 1 if num_classes is None else num_classes
    d = x.shape[1]
    mu = x.mean(axis=0)
    s_w = np.zeros((d, d))
    s_b = np.zeros((d, d))
    counts = np.bincount(y, minlength=k)
    for c in range(k):
        xc = x[y == c]
        if len(xc) == 0:
            continue
        mc = xc.mean(axis=0)
        dev = xc - mc
        s_w += dev.T @ dev
        gap = (mc - mu)[:, None]
        s_b += len(xc) * (gap @ gap.T)
    return ScatterPair(between=s_b, within=s_w, class_counts=counts)


def lda_criterion(pair: ScatterPair, eps: float = LDA_EPS) -> float:
    """Ratio-trace discriminability ``tr((S_w + eps I)^-1 S_b)``."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    d = pair.within.shape[0]
    reg = pair.within + eps * np.eye(d)
    cond = np.linalg.cond(reg)
    if not cond < MAX_CONDITION:
        raise SingularScatterError(f"regularized within-class scatter has condition {cond:.3g}")
    value = float(np.trace(np.linalg.solve(reg, pair.between)))
    # S_b is PSD so the exact value is >= 0; clip solver round-off
    return max(value, 0.0)


def balance_factor(mmd_norm: float | None, j_norm: float | None) -> float:
    """``m / (m + 1 - j)`` with 0.5 whenever it is undefined."""
    if mmd_norm is None or j_norm is None:
        return 0.5
    denom = mmd_norm + (1.0 - j_norm)
    if denom <= 0.0:
        return 0.5
    return min(max(mmd_norm / denom, 0.0), 1.0)


@dataclass(frozen=True)
class BalanceState:
    """Running extrema of the two estimators and the current balance factor.

    Extrema are ``nan`` until the first observation.
    """

    mmd_min: float = math.nan
    mmd_max: float = math.nan
    j_min: float = math.nan
    j_max: float = math.nan
    count: int = 0
    mmd_norm: float | None = None
    j_norm: float | None = None
    tau: float = 0.5


def _minmax(value: float, lo: float, hi: float) -> tuple[float, float, float | None]:
    lo = value if math.isnan(lo) else min(lo, value)
    hi = value if math.isnan(hi) else max(hi, value)
    if hi > lo:
        return lo, hi, min(max((value - lo) / (hi - lo), 0.0), 1.0)
    return lo, hi, None


def update_and_balance(state: BalanceState, mmd_value: float, j_value: float) -> BalanceState:
    """Fold one observation into the extrema and recompute tau."""
    if not (math.isfinite(mmd_value) and math.isfinite(j_value)):
        raise ValueError(f"non-finite estimator values: mmd={mmd_value}, j={j_value}")
    if mmd_value < 0 or j_value < 0:
        raise ValueError(f"estimator values must be >= 0: mmd={mmd_value}, j={j_value}")
    mmd_lo, mmd_hi, m_norm = _minmax(mmd_value, state.mmd_min, state.mmd_max)
    j_lo, j_hi, j_norm = _minmax(j_value, state.j_min, state.j_max)
    return replace(state, mmd_min=mmd_lo, mmd_max=mmd_hi, j_min=j_lo, j_max=j_hi,
                   count=state.count + 1, mmd_norm=m_norm, j_norm=j_norm,
                   tau=balance_factor(m_norm, j_norm))
