"""Variance targets and treatment-allocation policies.

The closed-form trace-optimal rule with truncation, the censoring-agnostic
Neyman baseline, the policy-dependent efficiency matrix on a covariate
grid, and fixed-point solvers for the determinant and largest-eigenvalue
design criteria.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import NuisanceAtArm, TieConvention, censoring_path_before, survival_path

DESIGN_CRITERIA = ("A_OPT", "D_OPT", "E_OPT", "NEYMAN_NAIVE", "UNIFORM")

# Tikhonov term added before inverting the efficiency matrix; nearly
# perfectly correlated horizons make it numerically singular.
EFF_MATRIX_RIDGE = 1e-10


@dataclass(frozen=True)
class TruncationSchedule:
    """Clipping of assignment probabilities into [1/k_r, 1 - 1/k_r].

    CONSTANT_CLIP uses a fixed k = 1 / alpha_clip. GROWING uses
    k_r = min(k_cap, k0 + r^exponent), which is nondecreasing and grows
    like o(r^{1/4}) while the cap is not binding.
    """

    mode: str = "CONSTANT_CLIP"
    alpha_clip: float = 0.05
    k0: float = 2.0
    exponent: float = 0.2
    k_cap: float = 100.0

    def __post_init__(self):
        if self.mode not in ("CONSTANT_CLIP", "GROWING"):
            raise ValueError(f"unknown truncation mode {self.mode!r}")
        if self.mode == "CONSTANT_CLIP" and not 0.0 < self.alpha_clip < 0.5:
            raise ValueError("alpha_clip must lie in (0, 0.5)")
        if self.mode == "GROWING":
            if self.k0 < 2.0:
                raise ValueError("k0 must be at least 2")
            if not 0.0 < self.exponent < 0.25:
                raise ValueError("growth exponent must lie in (0, 0.25)")

    def k_at(self, r: int) -> float:
        if self.mode == "CONSTANT_CLIP":
            return 1.0 / self.alpha_clip
        return min(self.k_cap, self.k0 + float(r) ** self.exponent)


@dataclass(frozen=True)
class PolicyEvaluation:
    raw: float
    truncated: float
    k_r: float


def truncate(raw: float, r: int, sched: TruncationSchedule) -> PolicyEvaluation:
    """Clamp a raw assignment probability into the round-r interior band."""
    if not 0.0 <= raw <= 1.0:
        raise ValueError(f"raw probability {raw} outside [0, 1]")
    k = sched.k_at(r)
    lo = 1.0 / k
    return PolicyEvaluation(raw=raw, truncated=min(1.0 - lo, max(lo, raw)), k_r=k)


def variance_target(
    nu0: NuisanceAtArm, nu1: NuisanceAtArm, conv: TieConvention
) -> tuple[float, float]:
    """Closed-form per-arm variance targets.

    For each arm, sum over horizons of
    ``S_t^2 * sum_{i<=t} lam_s_i / (S_i * G_{i-1})``, the trace of the
    score covariance matrix. Censoring inflates the target through the
    inverse censoring-survival weights.
    """
    out = []
    for nu in (nu0, nu1):
        s = survival_path(nu)
        g = censoring_path_before(nu, conv)
        cum = np.cumsum(nu.lam_s / (s * g))
        out.append(float(np.sum(s * s * cum)))
    return out[0], out[1]


def neyman_naive_target(nu: NuisanceAtArm) -> float:
    """Censoring-agnostic target: sum of binary-outcome variances S_t(1-S_t)."""
    s = survival_path(nu)
    return float(np.sum(s * (1.0 - s)))


def a_optimal_prob(v0: float, v1: float) -> float:
    """Treated-arm probability sqrt(V1) / (sqrt(V1) + sqrt(V0)).

    Scale invariant in (V0, V1); the degenerate all-zero case falls back
    to one half.
    """
    v0 = max(float(v0), 0.0)
    v1 = max(float(v1), 0.0)
    if v0 == 0.0 and v1 == 0.0:
        return 0.5
    r1 = np.sqrt(v1)
    return float(r1 / (r1 + np.sqrt(v0)))


def censoring_ratio_closed_form(kappa: float, g: float) -> float:
    """Optimal treated share under a time-invariant censoring-survival ratio.

    With G(x, 0) = g * G(x, 1) at every weighted index and kappa the
    event-information ratio between the arms, the trace-optimal rule is
    sqrt(g) / (sqrt(kappa) + sqrt(g)).
    """
    if kappa <= 0.0 or g <= 0.0:
        raise ValueError("kappa and g must be positive")
    root_g = np.sqrt(g)
    return float(root_g / (np.sqrt(kappa) + root_g))


# ---------------------------------------------------------------------------
# grid designs and matrix criteria
# ---------------------------------------------------------------------------


@dataclass
class GridDesign:
    """Covariate grid with weights and per-point oracle quantities."""

    x: np.ndarray
    w: np.ndarray
    sigma0: np.ndarray   # (n, T, T)
    sigma1: np.ndarray
    s1: np.ndarray       # (n, T)
    s0: np.ndarray
    tau: np.ndarray      # (T,)

    def __post_init__(self):
        if not np.isclose(self.w.sum(), 1.0, atol=1e-8):
            raise ValueError("grid weights must sum to one")

    @property
    def horizon(self) -> int:
        return self.tau.size

    @classmethod
    def from_ground_truth(cls, gt) -> "GridDesign":
        return cls(
            x=gt.x, w=gt.w, sigma0=gt.sigma0, sigma1=gt.sigma1,
            s1=gt.s1, s0=gt.s0, tau=gt.tau,
        )


def sigma_eff(pi, design: GridDesign) -> np.ndarray:
    """Policy-dependent efficiency matrix on the design grid.

    ``E[Sigma_1(X)/pi(X) + Sigma_0(X)/(1-pi(X))] + E[b(X) b(X)^T]`` with
    ``b(X)`` the centered survival contrast.
    """
    pi = np.broadcast_to(np.asarray(pi, dtype=float), design.x.shape)
    if np.any(pi <= 0.0) or np.any(pi >= 1.0):
        raise ValueError("policy must be strictly interior on the grid")
    b = design.s1 - design.s0 - design.tau
    mat = np.einsum("n,ntu->tu", design.w / pi, design.sigma1)
    mat += np.einsum("n,ntu->tu", design.w / (1.0 - pi), design.sigma0)
    mat += np.einsum("n,nt,nu->tu", design.w, b, b)
    return mat


def trace_criterion(pi, design: GridDesign) -> float:
    return float(np.trace(sigma_eff(pi, design)))


def logdet_criterion(pi, design: GridDesign) -> float:
    sign, val = np.linalg.slogdet(sigma_eff(pi, design))
    if sign <= 0:
        raise np.linalg.LinAlgError("efficiency matrix is not positive definite")
    return float(val)


def max_eigenvalue_criterion(pi, design: GridDesign) -> float:
    return float(np.linalg.eigvalsh(sigma_eff(pi, design))[-1])


def a_optimal_policy(design: GridDesign, alpha: float) -> np.ndarray:
    """Pointwise closed-form trace-optimal policy, clipped to [alpha, 1-alpha]."""
    v1 = np.trace(design.sigma1, axis1=1, axis2=2)
    v0 = np.trace(design.sigma0, axis1=1, axis2=2)
    raw = np.array([a_optimal_prob(a, b) for a, b in zip(v0, v1)])
    return np.clip(raw, alpha, 1.0 - alpha)


def leading_eigenvector(mat: np.ndarray, tol: float = 1e-10, max_iters: int = 20000):
    """Power iteration for the top unit eigenvector of a symmetric PSD matrix."""
    v = np.ones(mat.shape[0]) / np.sqrt(mat.shape[0])
    for _ in range(max_iters):
        nxt = mat @ v
        norm = np.linalg.norm(nxt)
        if norm == 0.0:
            return v
        nxt /= norm
        if nxt @ v < 0:
            nxt = -nxt
        if np.max(np.abs(nxt - v)) < tol:
            return nxt
        v = nxt
    return v


class FixedPointResult(dict):
    """Solver outcome: policy plus residual/iteration diagnostics."""

    @property
    def policy(self) -> np.ndarray:
        return self["policy"]


def _fixed_point_policy(design, alpha, weight_fn, max_iters, tol):
    """Damped clip-projected fixed-point iteration shared by D and E solvers."""
    pi = a_optimal_policy(design, alpha)
    prev_residual = np.inf
    damped = False
    residual = np.inf
    for iteration in range(1, max_iters + 1):
        q1, q0 = weight_fn(pi)
        root1 = np.sqrt(np.maximum(q1, 0.0))
        root0 = np.sqrt(np.maximum(q0, 0.0))
        denom = root1 + root0
        raw = np.where(denom > 0.0, root1 / np.where(denom > 0.0, denom, 1.0), 0.5)
        update = np.clip(raw, alpha, 1.0 - alpha)
        residual = float(np.max(np.abs(update - pi)))
        if residual <= tol:
            pi = update
            break
        if residual > prev_residual and not damped:
            damped = True
        prev_residual = residual
        pi = 0.5 * (pi + update) if damped else update
    return FixedPointResult(
        policy=pi, residual=residual, iterations=iteration, converged=residual <= tol,
        damped=damped,
    )


def d_optimal_policy(
    design: GridDesign,
    alpha: float,
    max_iters: int = 500,
    tol: float = 1e-10,
) -> FixedPointResult:
    """Determinant-criterion policy via fixed-point iteration.

    Pointwise weights are the precision-weighted traces
    ``tr(Sigma_eff(pi)^{-1} Sigma_a(x))``; the iteration starts from the
    closed-form trace-optimal policy and damps itself if it oscillates.
    """
    ridge = EFF_MATRIX_RIDGE * np.eye(design.horizon)

    def weights(pi):
        inv = np.linalg.inv(sigma_eff(pi, design) + ridge)
        q1 = np.einsum("tu,nut->n", inv, design.sigma1)
        q0 = np.einsum("tu,nut->n", inv, design.sigma0)
        return q1, q0

    return _fixed_point_policy(design, alpha, weights, max_iters, tol)


def e_optimal_policy(
    design: GridDesign,
    alpha: float,
    max_iters: int = 500,
    tol: float = 1e-10,
) -> FixedPointResult:
    """Largest-eigenvalue-criterion policy via fixed-point iteration.

    Pointwise weights are the worst-case directional variances
    ``v*' Sigma_a(x) v*`` along the leading eigenvector of the current
    efficiency matrix.
    """

    def weights(pi):
        v = leading_eigenvector(sigma_eff(pi, design))
        q1 = np.einsum("t,ntu,u->n", v, design.sigma1, v)
        q0 = np.einsum("t,ntu,u->n", v, design.sigma0, v)
        return q1, q0

    return _fixed_point_policy(design, alpha, weights, max_iters, tol)


def fixed_point_residual(pi, design: GridDesign, alpha: float, criterion: str) -> float:
    """Sup-norm gap between a policy and its own fixed-point update."""
    ridge = EFF_MATRIX_RIDGE * np.eye(design.horizon)
    if criterion == "D_OPT":
        inv = np.linalg.inv(sigma_eff(pi, design) + ridge)
        q1 = np.einsum("tu,nut->n", inv, design.sigma1)
        q0 = np.einsum("tu,nut->n", inv, design.sigma0)
    elif criterion == "E_OPT":
        v = leading_eigenvector(sigma_eff(pi, design))
        q1 = np.einsum("t,ntu,u->n", v, design.sigma1, v)
        q0 = np.einsum("t,ntu,u->n", v, design.sigma0, v)
    else:
        raise ValueError(f"no fixed-point form for criterion {criterion!r}")
    update = np.clip(np.sqrt(q1) / (np.sqrt(q1) + np.sqrt(q0)), alpha, 1.0 - alpha)
    return float(np.max(np.abs(update - pi)))
