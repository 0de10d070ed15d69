"""Exact discrete-time survival algebra under right censoring.

Hazard pairs, survival products, censoring survival under two tie
conventions, IPCW martingale scores, influence-function pseudo-outcomes,
and exact enumeration of the observed-outcome law at a fixed covariate
and arm.

Everything here is a pure function of small arrays and is computed in
linear probability space. That is numerically safe for the horizons this
package targets (products of at most ``t_max + 1`` factors in ``[0, 1]``,
``t_max`` up to roughly 20); longer horizons would want log-space
accumulation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# Observed-time sentinel for units that are still event- and censor-free
# after the last grid time.
PAST_HORIZON = -1


class TieConvention(enum.Enum):
    """How simultaneous event and censoring times are handled.

    TIES: the event indicator is "event at or before censoring"; the two
    hazards are observed sub-hazards of disjoint exits, and the censoring
    survival divides out the event mass period by period.

    NO_TIES: event and censoring hazards parameterize independent latent
    clocks and within a period the event resolves first, so ties never
    occur in the observed data and the censoring survival depends on the
    censoring hazard alone.
    """

    TIES = "ties"
    NO_TIES = "no_ties"


class OverlapError(ValueError):
    """A survival or censoring product hit zero (positivity failure)."""

    def __init__(self, message: str, time_index: int):
        super().__init__(f"{message} at time index {time_index}")
        self.time_index = time_index


class HazardPair(NamedTuple):
    """Event and censoring hazard at a single grid time."""

    lambda_s: float
    lambda_g: float


@dataclass(frozen=True)
class Observation:
    """One enrolled unit: covariate, arm, observed time, event indicator.

    ``t_tilde == PAST_HORIZON`` encodes a unit that neither failed nor was
    censored by ``t_max``; such units carry no indicator and count as
    at risk at every grid time.
    """

    x: float
    a: int
    t_tilde: int
    delta: int | None
    round: int = 0

    def __post_init__(self):
        if self.a not in (0, 1):
            raise ValueError(f"arm must be 0 or 1, got {self.a}")
        if self.t_tilde == PAST_HORIZON:
            if self.delta is not None:
                raise ValueError("past-horizon units carry no event indicator")
        else:
            if self.t_tilde < 0:
                raise ValueError(f"invalid observed time {self.t_tilde}")
            if self.delta not in (0, 1):
                raise ValueError("observed units need delta in {0, 1}")


@dataclass(frozen=True)
class OutcomeAtom:
    """One (observed time, indicator) pair with its exact probability."""

    t_tilde: int
    delta: int | None
    prob: float


class NuisanceAtArm:
    """Per-time event and censoring hazards at a fixed covariate and arm.

    Validated on construction: both hazard arrays share the time grid,
    every entry is a probability, and the per-period exit mass
    ``lambda_s + lambda_g`` never exceeds one.
    """

    __slots__ = ("lam_s", "lam_g")

    def __init__(self, lam_s, lam_g, validate: bool = True):
        self.lam_s = np.asarray(lam_s, dtype=float)
        self.lam_g = np.asarray(lam_g, dtype=float)
        if validate:
            self._check()

    def _check(self):
        if self.lam_s.ndim != 1 or self.lam_s.shape != self.lam_g.shape:
            raise ValueError("hazard arrays must be 1-d and equally long")
        if self.lam_s.size == 0:
            raise ValueError("empty time grid")
        for name, arr in (("event", self.lam_s), ("censoring", self.lam_g)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite {name} hazard")
            if np.any(arr < 0.0) or np.any(arr > 1.0):
                raise ValueError(f"{name} hazard outside [0, 1]")
        excess = self.lam_s + self.lam_g - 1.0
        if np.any(excess > 1e-9):
            i = int(np.argmax(excess))
            raise ValueError(
                f"per-period exit mass exceeds one at time {i}: "
                f"{self.lam_s[i]:.6f} + {self.lam_g[i]:.6f}"
            )

    @property
    def t_max(self) -> int:
        return self.lam_s.size - 1

    def hazard_at(self, t: int) -> HazardPair:
        return HazardPair(float(self.lam_s[t]), float(self.lam_g[t]))

    def __repr__(self):
        return f"NuisanceAtArm(lam_s={self.lam_s!r}, lam_g={self.lam_g!r})"


# ---------------------------------------------------------------------------
# survival and censoring products
# ---------------------------------------------------------------------------


def survival_path(nu: NuisanceAtArm) -> np.ndarray:
    """S_t for t = 0..t_max, the running product of (1 - event hazard)."""
    return np.cumprod(1.0 - nu.lam_s)


def event_survival(nu: NuisanceAtArm, t: int) -> float:
    """Probability the event has not occurred by time t; t = -1 gives 1."""
    if t == -1:
        return 1.0
    if not 0 <= t <= nu.t_max:
        raise ValueError(f"time {t} outside grid [-1, {nu.t_max}]")
    return float(survival_path(nu)[t])


def censoring_factors(
    nu: NuisanceAtArm, conv: TieConvention, check_through: int | None = None
) -> np.ndarray:
    """Per-period continuation probabilities of the censoring clock.

    Under TIES the conditional per-period censoring probability is
    ``lam_g / (1 - lam_s)`` because the observed censoring hazard shares
    the period with the event exit; under NO_TIES it is ``lam_g`` itself.
    Positivity is enforced through ``check_through`` (default: the whole
    grid); factors past the last index a caller multiplies may sit at the
    boundary without tripping an overlap error.
    """
    if conv is TieConvention.TIES:
        denom = 1.0 - nu.lam_s
        with np.errstate(divide="ignore", invalid="ignore"):
            factors = np.where(
                denom > 0.0, 1.0 - nu.lam_g / np.where(denom > 0.0, denom, 1.0), -np.inf
            )
    else:
        factors = 1.0 - nu.lam_g
    last = nu.t_max if check_through is None else check_through
    if last >= 0:
        bad = factors[: last + 1] <= 0.0
        if np.any(bad):
            raise OverlapError(
                "censoring survival factor is nonpositive", int(np.argmax(bad))
            )
    return factors


def censoring_path_before(nu: NuisanceAtArm, conv: TieConvention) -> np.ndarray:
    """G_{t-1} for t = 0..t_max: uncensored probability strictly before t."""
    factors = censoring_factors(nu, conv, check_through=nu.t_max - 1)
    out = np.empty(nu.t_max + 1)
    out[0] = 1.0
    np.cumprod(factors[:-1], out=out[1:])
    return out


def censoring_path(nu: NuisanceAtArm, conv: TieConvention) -> np.ndarray:
    """G_t for t = 0..t_max."""
    return np.cumprod(censoring_factors(nu, conv))


def censoring_survival(nu: NuisanceAtArm, t: int, conv: TieConvention) -> float:
    """G_{t-1}: probability of being uncensored strictly before time t."""
    if not 0 <= t <= nu.t_max:
        raise ValueError(f"time {t} outside grid [0, {nu.t_max}]")
    factors = censoring_factors(nu, conv, check_through=t - 1)
    return float(np.prod(factors[:t]))


# ---------------------------------------------------------------------------
# IPCW martingale score
# ---------------------------------------------------------------------------


def _risk_and_event(t_tilde: int, delta: int | None, t_max: int):
    """At-risk and observed-event indicator arrays over the time grid."""
    i = np.arange(t_max + 1)
    if t_tilde == PAST_HORIZON:
        at_risk = np.ones(t_max + 1)
        event_at = np.zeros(t_max + 1)
    else:
        at_risk = (i <= t_tilde).astype(float)
        event_at = ((i == t_tilde) & (delta == 1)).astype(float)
    return at_risk, event_at


def ipcw_score_path(
    t_tilde: int, delta: int | None, nu: NuisanceAtArm, conv: TieConvention
) -> np.ndarray:
    """Cumulative inverse-probability-of-censoring-weighted score.

    Entry t is the sum over i <= t of
    ``[1(Ttilde = i, event) - 1(Ttilde >= i) * lam_s_i] / (S_i * G_{i-1})``.
    The increments have conditional mean zero under the observed-outcome
    law of the same nuisance, which is what makes the pseudo-outcomes
    below unbiased.
    """
    s = survival_path(nu)
    g_before = censoring_path_before(nu, conv)
    denom = s * g_before
    bad = denom <= 0.0
    if np.any(bad):
        raise OverlapError("zero survival-censoring product", int(np.argmax(bad)))
    at_risk, event_at = _risk_and_event(t_tilde, delta, nu.t_max)
    increments = (event_at - at_risk * nu.lam_s) / denom
    return np.cumsum(increments)


def ipcw_score(obs: Observation, nu: NuisanceAtArm, t: int, conv: TieConvention) -> float:
    """The IPCW score of one observation at horizon t."""
    if not 0 <= t <= nu.t_max:
        raise ValueError(f"horizon {t} outside grid [0, {nu.t_max}]")
    return float(ipcw_score_path(obs.t_tilde, obs.delta, nu, conv)[t])


# ---------------------------------------------------------------------------
# exact observed-outcome law
# ---------------------------------------------------------------------------


def outcome_atoms(nu: NuisanceAtArm, conv: TieConvention) -> list[OutcomeAtom]:
    """Exact law of (observed time, indicator) given the hazards.

    Under TIES the hazards are the observed sub-hazards, so at each period
    the at-risk mass splits as ``lam_s`` (event), ``lam_g`` (censor),
    remainder continues. Under NO_TIES the event clock resolves first
    within a period: event with ``lam_s``, censoring with
    ``(1 - lam_s) * lam_g``, remainder ``(1 - lam_s)(1 - lam_g)``. One
    trailing atom collects units that outlive the grid. Atom count is
    always ``2 * (t_max + 1) + 1`` and the probabilities sum to one.
    """
    atoms: list[OutcomeAtom] = []
    at_risk = 1.0
    for i in range(nu.t_max + 1):
        ls = float(nu.lam_s[i])
        lg = float(nu.lam_g[i])
        if conv is TieConvention.TIES:
            p_event = ls * at_risk
            p_cens = lg * at_risk
            cont = 1.0 - ls - lg
        else:
            p_event = ls * at_risk
            p_cens = (1.0 - ls) * lg * at_risk
            cont = (1.0 - ls) * (1.0 - lg)
        atoms.append(OutcomeAtom(i, 1, p_event))
        atoms.append(OutcomeAtom(i, 0, p_cens))
        at_risk *= cont
    atoms.append(OutcomeAtom(PAST_HORIZON, None, at_risk))
    return atoms


def atom_probs(nu: NuisanceAtArm, conv: TieConvention) -> np.ndarray:
    """Atom probabilities in the fixed (event 0, censor 0, ..., past) order."""
    return np.array([atom.prob for atom in outcome_atoms(nu, conv)])


def outcome_from_uniform(nu: NuisanceAtArm, conv: TieConvention, u: float):
    """Inverse-CDF draw over the outcome atoms; returns (t_tilde, delta)."""
    atoms = outcome_atoms(nu, conv)
    acc = 0.0
    for atom in atoms:
        acc += atom.prob
        if u < acc:
            return atom.t_tilde, atom.delta
    return PAST_HORIZON, None


# ---------------------------------------------------------------------------
# pseudo-outcomes
# ---------------------------------------------------------------------------


def _check_prob_interior(p: float, name: str):
    if not 0.0 < p < 1.0:
        raise ValueError(f"{name} must lie strictly inside (0, 1), got {p}")


def apo_pseudo_outcome_values(
    t_tilde: int,
    delta: int | None,
    obs_arm: int,
    a: int,
    pi_a: float,
    nu: NuisanceAtArm,
    conv: TieConvention,
) -> np.ndarray:
    """Per-horizon pseudo-outcome for the arm-a average survival curve.

    ``S_t(x, a) * (1 - 1(A = a) / pi_a * xi_t)``, whose exact mean over
    the treatment draw and the outcome atoms is ``S_t(x, a)``. When the
    observed arm differs from ``a`` the correction vanishes.
    """
    _check_prob_interior(pi_a, "arm probability")
    s = survival_path(nu)
    if obs_arm != a:
        return s.copy()
    xi = ipcw_score_path(t_tilde, delta, nu, conv)
    return s * (1.0 - xi / pi_a)


def apo_pseudo_outcome(
    obs: Observation, a: int, pi_a: float, nu: NuisanceAtArm, conv: TieConvention
) -> np.ndarray:
    return apo_pseudo_outcome_values(obs.t_tilde, obs.delta, obs.a, a, pi_a, nu, conv)


def eif_pseudo_outcome_values(
    t_tilde: int,
    delta: int | None,
    obs_arm: int,
    pi_x: float,
    nu0: NuisanceAtArm,
    nu1: NuisanceAtArm,
    conv: TieConvention,
) -> np.ndarray:
    """Per-horizon influence-function pseudo-outcome for the effect curve.

    ``S_t(x,1) - S_t(x,0) - (A - pi) / (pi (1 - pi)) * xi_t * S_t(x,A)``
    with the score evaluated under the assigned arm's nuisance. With
    exact nuisances its conditional mean is the survival contrast at
    every horizon, for any interior assignment probability.
    """
    _check_prob_interior(pi_x, "assignment probability")
    s1 = survival_path(nu1)
    s0 = survival_path(nu0)
    nu_a = nu1 if obs_arm == 1 else nu0
    s_a = s1 if obs_arm == 1 else s0
    xi = ipcw_score_path(t_tilde, delta, nu_a, conv)
    w = (obs_arm - pi_x) / (pi_x * (1.0 - pi_x))
    return s1 - s0 - w * xi * s_a


def eif_pseudo_outcome(
    obs: Observation,
    pi_x: float,
    nu0: NuisanceAtArm,
    nu1: NuisanceAtArm,
    conv: TieConvention,
) -> np.ndarray:
    return eif_pseudo_outcome_values(obs.t_tilde, obs.delta, obs.a, pi_x, nu0, nu1, conv)


def eif_bound(pi_x: float, t: int, s_floor: float, g_floor: float) -> float:
    """Crude envelope on |phi_t|: 1 + (t+1) / (min(pi,1-pi) * s * g)."""
    k = 1.0 / min(pi_x, 1.0 - pi_x)
    return 1.0 + k * (t + 1) / (s_floor * g_floor)
