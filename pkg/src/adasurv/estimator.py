"""Sequential effect-curve estimation and inference.

Running pseudo-outcome averages per horizon, the matching variance
estimate, fixed-time normal intervals, anytime-valid confidence
sequences with the near-optimal tuning rate, the direct plug-in
estimate, and average survival-curve estimation per arm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .core import survival_path


@dataclass(frozen=True)
class BatchConfig:
    """Batching of policy and nuisance updates.

    ``batch_size`` rounds share one frozen policy function and nuisance
    snapshot; ``burn_in`` rounds are assigned with ``initial_policy``
    before any adaptation starts.
    """

    batch_size: int = 100
    burn_in: int = 0
    initial_policy: float = 0.5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.burn_in < 0:
            raise ValueError("burn-in cannot be negative")
        if not 0.0 < self.initial_policy < 1.0:
            raise ValueError("initial policy must be strictly interior")


class AseState:
    """Streaming per-horizon mean and dispersion of pseudo-outcome vectors.

    Welford-style accumulation: the point estimate and the 1/R variance
    are exact functions of (count, running mean, running squared
    deviations), so streaming and batch recomputation agree to rounding
    and a constant stream reports exactly zero variance.
    """

    __slots__ = ("count", "mean", "m2")

    def __init__(self, horizon_len: int):
        self.count = 0
        self.mean = np.zeros(horizon_len)
        self.m2 = np.zeros(horizon_len)

    def update(self, phi: np.ndarray) -> "AseState":
        phi = np.asarray(phi, dtype=float)
        if not np.all(np.isfinite(phi)):
            raise ValueError("pseudo-outcome vector must be finite")
        self.count += 1
        delta = phi - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (phi - self.mean)
        return self

    def estimate(self) -> np.ndarray:
        if self.count < 1:
            raise ValueError("no rounds accumulated yet")
        return self.mean.copy()

    @property
    def sum_phi(self) -> np.ndarray:
        return self.mean * self.count

    @property
    def sum_sq(self) -> np.ndarray:
        return self.m2 + self.count * self.mean * self.mean


def ase_update(state: AseState, phi: np.ndarray) -> AseState:
    return state.update(phi)


def variance_estimate(state: AseState) -> np.ndarray:
    """Per-horizon pseudo-outcome variance with the 1/R normalization."""
    if state.count < 2:
        raise ValueError("variance needs at least two rounds")
    return np.maximum(state.m2 / state.count, 0.0)


@dataclass(frozen=True)
class ConfidenceOutput:
    point: np.ndarray
    half_width: np.ndarray
    kind: str                  # FIXED_TIME or ASYMP_CS
    alpha: float
    rho: float | None = None

    @property
    def lower(self) -> np.ndarray:
        return self.point - self.half_width

    @property
    def upper(self) -> np.ndarray:
        return self.point + self.half_width


def normal_quantile(p: float) -> float:
    """Standard normal inverse CDF (z_{0.975} = 1.959964 to 6 digits)."""
    if not 0.0 < p < 1.0:
        raise ValueError("quantile level must be interior")
    return float(ndtri(p))


def fixed_time_ci(state: AseState, alpha: float) -> ConfidenceOutput:
    """Pointwise normal interval: estimate +- z * sqrt(Vhat / R)."""
    z = normal_quantile(1.0 - alpha / 2.0)
    v = variance_estimate(state)
    hw = z * np.sqrt(v / state.count)
    return ConfidenceOutput(state.estimate(), hw, "FIXED_TIME", alpha)


def cs_half_width(n: int, variance, rho: float, alpha: float) -> np.ndarray:
    """Radius of the asymptotic confidence sequence at sample size n."""
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    if n < 1:
        raise ValueError("need at least one round")
    v = np.asarray(variance, dtype=float)
    core = n * v * rho * rho + 1.0
    return np.sqrt(2.0 * core / (n * n * rho * rho) * np.log(np.sqrt(core) / alpha))


def asymp_cs(state: AseState, alpha: float, rho: float) -> ConfidenceOutput:
    """Time-uniform interval valid at any data-dependent stopping round."""
    v = variance_estimate(state) if state.count >= 2 else np.zeros_like(state.sum_phi)
    hw = cs_half_width(state.count, v, rho, alpha)
    return ConfidenceOutput(state.estimate(), hw, "ASYMP_CS", alpha, rho=rho)


def optimal_cs_rho(n: int, alpha: float) -> float:
    """Tuning rate that approximately minimizes the sequence width at n.

    sqrt((-2 log(alpha) + log(-2 log(alpha) + 1)) / n); the width at this
    value is within a fraction of a percent of the grid minimum on the
    unit-variance scale.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be interior")
    if n < 1:
        raise ValueError("n must be positive")
    a = -2.0 * math.log(alpha)
    return math.sqrt((a + math.log(a + 1.0)) / n)


def plugin_estimate(history, fitted, weights=None) -> np.ndarray:
    """Direct identification estimate: average survival contrast.

    Mean over enrolled covariates (or an explicit weighting) of
    ``S_t(x, 1) - S_t(x, 0)`` under one fitted nuisance model.
    """
    history = list(history)
    if not history:
        raise ValueError("empty history")
    diffs = []
    for obs in history:
        nu0, nu1 = fitted.predict_pair(obs.x)
        diffs.append(survival_path(nu1) - survival_path(nu0))
    diffs = np.asarray(diffs)
    if weights is None:
        return diffs.mean(axis=0)
    weights = np.asarray(weights, dtype=float)
    return weights @ diffs / weights.sum()


def apo_curve_estimate(records) -> tuple[np.ndarray, np.ndarray]:
    """Average survival curves per arm from logged per-arm pseudo-outcomes.

    ``records`` yields (phi_arm1, phi_arm0) vectors; the two running
    means are the treated and control curve estimates, and their
    difference reproduces the effect-curve estimate built from the same
    decomposition.
    """
    sum1 = None
    sum0 = None
    n = 0
    for phi1, phi0 in records:
        if sum1 is None:
            sum1 = np.zeros_like(np.asarray(phi1, dtype=float))
            sum0 = np.zeros_like(sum1)
        sum1 += phi1
        sum0 += phi0
        n += 1
    if n == 0:
        raise ValueError("no records")
    return sum1 / n, sum0 / n
