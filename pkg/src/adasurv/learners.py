"""Sequential hazard learners and two-fold temporal cross-fitting.

Learners turn an accumulated history into per-(covariate, arm) hazard
predictions via the standard person-period expansion: a unit observed at
time t contributes one at-risk row for every grid time up to t, labelled
by whether its event or its censoring fired there. Units that outlive
the grid contribute a full set of unlabelled at-risk rows.

Predicted hazard pairs are sanitized before use so that downstream
survival and censoring products stay strictly positive: per-cell
probabilities are kept inside Laplace-style bounds, pairs whose exit
mass exceeds one are rescaled proportionally, and at interior times the
implied per-period censoring ratio is capped. Without the cap, an empty
cell's smoothed pair (0.5, 0.5) carries zero censoring survival and the
influence-function weights blow up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import PAST_HORIZON, NuisanceAtArm, Observation, TieConvention

LEARNER_KINDS = ("ORACLE", "BINNED", "LOGISTIC", "CONSTANT_CENSORING_MS", "CORRUPTED")

# Upper bound on the implied per-period censoring ratio lam_g / (1 - lam_s)
# at times that feed a later censoring-survival factor.
CENSOR_RATIO_CAP = 2.0 / 3.0


@dataclass(frozen=True)
class HazardLearnerSpec:
    """Configuration of a hazard learner.

    ``corrupt_event`` and ``corrupt_censor`` are additive logit shifts
    applied to the oracle hazards by the CORRUPTED kind; keeping them as
    two separate fields lets robustness experiments corrupt one nuisance
    block at a time. ``event_base`` names the learner that supplies the
    event block of CONSTANT_CENSORING_MS, whose censoring block is a
    pooled marginal.
    """

    kind: str = "LOGISTIC"
    bins: int = 20
    smoothing: float = 0.5
    corrupt_event: float = 0.0
    corrupt_censor: float = 0.0
    event_base: str = "LOGISTIC"

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.bins < 1:
            raise ValueError("bins must be at least 1")
        if self.smoothing <= 0.0:
            raise ValueError("smoothing pseudo-count must be positive")
        if self.event_base not in ("ORACLE", "BINNED", "LOGISTIC"):
            raise ValueError(f"unsupported event base {self.event_base!r}")

    def needs_dgp(self) -> bool:
        return self.kind in ("ORACLE", "CORRUPTED") or (
            self.kind == "CONSTANT_CENSORING_MS" and self.event_base == "ORACLE"
        )


def person_period_rows(history, t_max: int):
    """Expand observations into (x, a, time, event label, censor label) rows."""
    n = len(history)
    if n == 0:
        empty = np.empty(0)
        return empty, empty.astype(int), empty.astype(int), empty, empty
    x_unit = np.fromiter((obs.x for obs in history), dtype=float, count=n)
    a_unit = np.fromiter((obs.a for obs in history), dtype=int, count=n)
    t_unit = np.fromiter((obs.t_tilde for obs in history), dtype=int, count=n)
    d_unit = np.fromiter(
        (obs.delta if obs.delta is not None else -1 for obs in history), dtype=int, count=n
    )
    lasts = np.where(t_unit == PAST_HORIZON, t_max, np.minimum(t_unit, t_max))
    lens = lasts + 1
    total = int(lens.sum())
    starts = np.repeat(np.cumsum(lens) - lens, lens)
    times = np.arange(total) - starts
    xs = np.repeat(x_unit, lens)
    arms = np.repeat(a_unit, lens)
    exit_here = times == np.repeat(t_unit, lens)
    deltas = np.repeat(d_unit, lens)
    ev = (exit_here & (deltas == 1)).astype(float)
    ce = (exit_here & (deltas == 0)).astype(float)
    return xs, arms, times, ev, ce


def sanitize_batch(lam_s, lam_g, n_at_risk, smoothing, t_max, n_censor=None):
    """Force predicted hazard paths to satisfy the pair invariants.

    ``lam_s`` and ``lam_g`` are (n, t_max + 1); ``n_at_risk`` carries the
    at-risk counts behind the predictions, broadcastable to the same
    shape, and drives the Laplace-style bounds ``[s/(n+2s), 1 - s/(n+2s)]``.
    ``n_censor`` overrides the censoring block's counts when the two
    blocks rest on different information (oracle events, say).
    """
    lam_s = np.array(lam_s, dtype=float)
    lam_g = np.array(lam_g, dtype=float)

    def bound_for(counts):
        counts = np.maximum(np.broadcast_to(counts, lam_s.shape), 0.0)
        return smoothing / (counts + 2.0 * smoothing)

    bound = bound_for(n_at_risk)
    bound_g = bound if n_censor is None else bound_for(n_censor)
    lam_s = np.minimum(np.maximum(lam_s, bound), 1.0 - bound)
    lam_g = np.minimum(np.maximum(lam_g, bound_g), 1.0 - bound_g)
    # keep censoring survival factors bounded away from zero at times that
    # feed a later denominator
    cap = CENSOR_RATIO_CAP * (1.0 - lam_s[..., :t_max])
    lam_g[..., :t_max] = np.minimum(lam_g[..., :t_max], cap)
    total = lam_s + lam_g
    over = total > 1.0
    if np.any(over):
        scale = (1.0 - 1e-6) / total[over]
        lam_s[over] *= scale
        lam_g[over] *= scale
    return lam_s, lam_g


def sanitize_pair(lam_s, lam_g, n_at_risk, smoothing, t_max):
    """Single-path version of :func:`sanitize_batch`."""
    s, g = sanitize_batch(
        np.asarray(lam_s, dtype=float)[None, :],
        np.asarray(lam_g, dtype=float)[None, :],
        np.asarray(n_at_risk, dtype=float),
        smoothing,
        t_max,
    )
    return s[0], g[0]


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


class FittedNuisance:
    """A fitted hazard predictor.

    ``predict(x, a)`` returns a sanitized NuisanceAtArm; ``fold_id`` is 0,
    1, or "FULL"; ``fitted_on_rounds`` counts the training observations.
    Predictions are deterministic functions of the training set.
    """

    def __init__(self, impl, fold_id, fitted_on_rounds: int):
        self._impl = impl
        self.fold_id = fold_id
        self.fitted_on_rounds = fitted_on_rounds

    def predict(self, x: float, a: int) -> NuisanceAtArm:
        lam_s, lam_g = self._impl.predict(float(x), int(a))
        return NuisanceAtArm(lam_s, lam_g, validate=False)

    def predict_pair(self, x: float):
        return self.predict(x, 0), self.predict(x, 1)

    def predict_batch(self, xs, a: int):
        """Hazard arrays of shape (len(xs), t_max + 1) for one arm."""
        return self._impl.predict_batch(np.asarray(xs, dtype=float), int(a))

    def raw_tables(self):
        """Unsanitized internals, exposed for inspection and tests."""
        return getattr(self._impl, "raw_tables", lambda: None)()


class _OracleImpl:
    def __init__(self, dgp):
        self.dgp = dgp

    def predict(self, x, a):
        nu = self.dgp.hazards(x, a)
        return nu.lam_s, nu.lam_g

    def predict_batch(self, xs, a):
        return self.dgp.hazard_arrays(xs, a)


class _CorruptedImpl:
    """Oracle hazards with fixed per-block logit shifts, then sanitized."""

    def __init__(self, dgp, shift_event, shift_censor, smoothing):
        self.dgp = dgp
        self.shift_event = shift_event
        self.shift_censor = shift_censor
        self.smoothing = smoothing

    def predict_batch(self, xs, a):
        lam_s, lam_g = self.dgp.hazard_arrays(xs, a)
        lam_s = _logit_shift(lam_s, self.shift_event)
        lam_g = _logit_shift(lam_g, self.shift_censor)
        return sanitize_batch(lam_s, lam_g, 1e12, self.smoothing, self.dgp.t_max)

    def predict(self, x, a):
        lam_s, lam_g = self.predict_batch(np.array([x]), a)
        return lam_s[0], lam_g[0]


def _logit_shift(p, shift):
    if shift == 0.0:
        return np.array(p, dtype=float)
    return expit(np.log(p) - np.log1p(-p) + shift)


class _BinnedImpl:
    """Per-(bin, arm, time) empirical hazards with Laplace smoothing."""

    def __init__(self, n_bins, smoothing, t_max):
        self.n_bins = n_bins
        self.smoothing = smoothing
        self.t_max = t_max
        shape = (n_bins, 2, t_max + 1)
        self.at_risk = np.zeros(shape)
        self.events = np.zeros(shape)
        self.censors = np.zeros(shape)

    def _bins(self, xs):
        b = (np.asarray(xs, dtype=float) * self.n_bins).astype(int)
        return np.minimum(np.maximum(b, 0), self.n_bins - 1)

    def fit(self, history):
        xs, arms, times, ev, ce = person_period_rows(history, self.t_max)
        if xs.size:
            bins = self._bins(xs)
            np.add.at(self.at_risk, (bins, arms, times), 1.0)
            np.add.at(self.events, (bins, arms, times), ev)
            np.add.at(self.censors, (bins, arms, times), ce)
        return self

    def predict(self, x, a):
        b = int(self._bins(np.array([x]))[0])
        n = self.at_risk[b, a]
        s = self.smoothing
        lam_s = (self.events[b, a] + s) / (n + 2.0 * s)
        lam_g = (self.censors[b, a] + s) / (n + 2.0 * s)
        return sanitize_pair(lam_s, lam_g, n, s, self.t_max)

    def predict_batch(self, xs, a):
        bins = self._bins(xs)
        n = self.at_risk[bins, a]
        s = self.smoothing
        lam_s = (self.events[bins, a] + s) / (n + 2.0 * s)
        lam_g = (self.censors[bins, a] + s) / (n + 2.0 * s)
        return sanitize_batch(lam_s, lam_g, n, s, self.t_max)

    def raw_tables(self):
        return {"at_risk": self.at_risk, "events": self.events, "censors": self.censors}


class _LogisticImpl:
    """Per-(arm, time) logistic regressions of each exit label on x.

    Plain Newton iterations with step halving, run to gradient norm 1e-8
    or a generous iteration cap; degenerate cells (too few rows or a
    constant label) fall back to the smoothed marginal rate. Predictions
    are clipped to the cell's Laplace bounds before pairing, which keeps
    separated fits from emitting saturated probabilities.
    """

    MIN_ROWS = 4

    def __init__(self, smoothing, t_max):
        self.smoothing = smoothing
        self.t_max = t_max
        t_len = t_max + 1
        # blocks: 0 event, 1 censoring
        self.intercept = np.zeros((2, 2, t_len))
        self.slope = np.zeros((2, 2, t_len))
        self.use_marginal = np.ones((2, 2, t_len), dtype=bool)
        self.marginal = np.full((2, 2, t_len), 0.5)
        self.at_risk = np.zeros((2, t_len))

    def fit(self, history):
        xs, arms, times, ev, ce = person_period_rows(history, self.t_max)
        counts = np.zeros((2, 2, self.t_max + 1))
        for a in (0, 1):
            arm_mask = arms == a
            for i in range(self.t_max + 1):
                mask = arm_mask & (times == i)
                self.at_risk[a, i] = float(mask.sum())
                x_cell = xs[mask]
                for block, labels in ((0, ev[mask]), (1, ce[mask])):
                    counts[block, a, i] = labels.sum()
                    beta = _newton_logistic(x_cell, labels, self.MIN_ROWS)
                    if beta is None:
                        self.use_marginal[block, a, i] = True
                    else:
                        self.use_marginal[block, a, i] = False
                        self.intercept[block, a, i] = beta[0]
                        self.slope[block, a, i] = beta[1]
        # degenerate cells score with per-time rates shrunk toward the
        # pooled-over-time rate; a flat one-half prior is far off for the
        # rare exit labels and would leak into the inverse weights
        s, k = self.smoothing, _ShrunkMarginalImpl.PRIOR_ROWS
        for block in (0, 1):
            for a in (0, 1):
                pooled = (counts[block, a].sum() + s) / (self.at_risk[a].sum() + 2.0 * s)
                self.marginal[block, a] = (counts[block, a] + k * pooled) / (
                    self.at_risk[a] + k
                )
        return self

    def _block_batch(self, block, a, xs):
        z = self.intercept[block, a][None, :] + self.slope[block, a][None, :] * xs[:, None]
        vals = expit(z)
        marg = self.use_marginal[block, a]
        if marg.any():
            vals[:, marg] = self.marginal[block, a][marg]
        return vals

    def predict_batch(self, xs, a):
        lam_s = self._block_batch(0, a, xs)
        lam_g = self._block_batch(1, a, xs)
        return sanitize_batch(lam_s, lam_g, self.at_risk[a], self.smoothing, self.t_max)

    def predict(self, x, a):
        lam_s, lam_g = self.predict_batch(np.array([x]), a)
        return lam_s[0], lam_g[0]

    def raw_tables(self):
        return {
            "intercept": self.intercept, "slope": self.slope,
            "use_marginal": self.use_marginal, "marginal": self.marginal,
            "at_risk": self.at_risk,
        }


def _newton_logistic(x, y, min_rows, min_label=8, tol=1e-8, max_iters=100):
    """Two-parameter logistic fit; None signals a degenerate cell.

    Cells where either label class has fewer than ``min_label`` rows keep
    the marginal rate: a slope fitted through one or two exits swings the
    predictions at the covariate extremes, and via the inverse censoring
    weights that noise is exactly what destabilizes the downstream
    scores.
    """
    n = y.size
    pos = float(y.sum())
    if n < min_rows or pos < min_label or n - pos < min_label:
        return None
    design = np.column_stack([np.ones(n), x])
    pbar = y.mean()
    beta = np.array([np.log(pbar / (1.0 - pbar)), 0.0])

    def nll(b):
        z = design @ b
        return float(np.sum(np.logaddexp(0.0, z)) - y @ z)

    current = nll(beta)
    for _ in range(max_iters):
        p = expit(design @ beta)
        grad = design.T @ (y - p)
        if np.linalg.norm(grad) <= tol:
            break
        w = np.maximum(p * (1.0 - p), 1e-12)
        hess = design.T @ (design * w[:, None])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        # halve until the objective stops increasing
        for _ in range(30):
            cand = beta + step
            cand_nll = nll(cand)
            if cand_nll <= current + 1e-12:
                beta, current = cand, cand_nll
                break
            step *= 0.5
        else:
            break
    return beta


class _ShrunkMarginalImpl:
    """Covariate-free per-time rates shrunk toward the time-pooled rate.

    The pre-model fallback. Plain per-(arm, time) Laplace rates center
    empty late-time cells at one half, which is a terrible prior for rare
    censoring exits and inflates the inverse weights during the first
    rounds; shrinking toward the pooled-over-time rate (a few pseudo
    rows' worth) keeps early predictions near the observed exit
    frequencies instead.
    """

    PRIOR_ROWS = 2.0

    def __init__(self, smoothing, t_max):
        self.smoothing = smoothing
        self.t_max = t_max
        self.at_risk = np.zeros((2, t_max + 1))
        self.events = np.zeros((2, t_max + 1))
        self.censors = np.zeros((2, t_max + 1))

    def fit(self, history):
        xs, arms, times, ev, ce = person_period_rows(history, self.t_max)
        if xs.size:
            np.add.at(self.at_risk, (arms, times), 1.0)
            np.add.at(self.events, (arms, times), ev)
            np.add.at(self.censors, (arms, times), ce)
        return self

    def _rates(self, counts, a):
        s = self.smoothing
        pooled = (counts[a].sum() + s) / (self.at_risk[a].sum() + 2.0 * s)
        k = self.PRIOR_ROWS
        return (counts[a] + k * pooled) / (self.at_risk[a] + k)

    def predict_batch(self, xs, a):
        lam_s = np.broadcast_to(self._rates(self.events, a), (xs.size, self.t_max + 1))
        lam_g = np.broadcast_to(self._rates(self.censors, a), (xs.size, self.t_max + 1))
        n = np.broadcast_to(self.at_risk[a] + self.PRIOR_ROWS, lam_s.shape)
        return sanitize_batch(lam_s, lam_g, n, self.smoothing, self.t_max)

    def predict(self, x, a):
        lam_s, lam_g = self.predict_batch(np.array([x]), a)
        return lam_s[0], lam_g[0]


class _MarginalCensorImpl:
    """Event block from a base learner, censoring block pooled over x and arm.

    The censoring hazards are deliberately coarse: a single smoothed
    marginal rate per time index, the usual stand-in for a misspecified
    censoring model.
    """

    def __init__(self, event_impl, smoothing, t_max):
        self.event_impl = event_impl
        self.smoothing = smoothing
        self.t_max = t_max
        self.at_risk = np.zeros(t_max + 1)
        self.censors = np.zeros(t_max + 1)

    def fit(self, history):
        if hasattr(self.event_impl, "fit"):
            self.event_impl.fit(history)
        _, _, times, _, ce = person_period_rows(history, self.t_max)
        if times.size:
            np.add.at(self.at_risk, times, 1.0)
            np.add.at(self.censors, times, ce)
        return self

    def _censor_rates(self):
        s = self.smoothing
        return (self.censors + s) / (self.at_risk + 2.0 * s)

    def predict_batch(self, xs, a):
        lam_s, _ = self.event_impl.predict_batch(xs, a)
        lam_g = np.broadcast_to(self._censor_rates(), lam_s.shape)
        n_event = 1e12 if isinstance(self.event_impl, _OracleImpl) else self.at_risk
        return sanitize_batch(
            lam_s, lam_g, n_event, self.smoothing, self.t_max, n_censor=self.at_risk
        )

    def predict(self, x, a):
        lam_s, lam_g = self.predict_batch(np.array([x]), a)
        return lam_s[0], lam_g[0]


def fit_hazards(
    spec: HazardLearnerSpec,
    history,
    t_max: int,
    dgp=None,
    fold_id="FULL",
) -> FittedNuisance:
    """Fit one hazard model on a history snapshot."""
    if spec.needs_dgp() and dgp is None:
        raise ValueError(f"{spec.kind} learner needs the generating process")
    history = list(history)
    if spec.kind == "ORACLE":
        impl = _OracleImpl(dgp)
    elif spec.kind == "CORRUPTED":
        impl = _CorruptedImpl(dgp, spec.corrupt_event, spec.corrupt_censor, spec.smoothing)
    elif spec.kind == "BINNED":
        impl = _BinnedImpl(spec.bins, spec.smoothing, t_max).fit(history)
    elif spec.kind == "LOGISTIC":
        impl = _LogisticImpl(spec.smoothing, t_max).fit(history)
    else:  # CONSTANT_CENSORING_MS
        if spec.event_base == "ORACLE":
            event_impl = _OracleImpl(dgp)
        elif spec.event_base == "BINNED":
            event_impl = _BinnedImpl(spec.bins, spec.smoothing, t_max)
        else:
            event_impl = _LogisticImpl(spec.smoothing, t_max)
        impl = _MarginalCensorImpl(event_impl, spec.smoothing, t_max).fit(history)
    return FittedNuisance(impl, fold_id, len(history))


def fit_fallback(
    spec: HazardLearnerSpec, history, t_max: int, dgp=None, fold_id="FULL"
) -> FittedNuisance:
    """The smoothed-marginal model used before a fold's first proper fit.

    Data-free learner kinds stay themselves; a misspecified-censoring
    learner with an oracle event block keeps that block; everything else
    scores with the time-pooled shrunk marginal.
    """
    history = list(history)
    if spec.kind in ("ORACLE", "CORRUPTED"):
        return fit_hazards(spec, history, t_max, dgp=dgp, fold_id=fold_id)
    if spec.kind == "CONSTANT_CENSORING_MS" and spec.event_base == "ORACLE":
        impl = _MarginalCensorImpl(_OracleImpl(dgp), spec.smoothing, t_max).fit(history)
        return FittedNuisance(impl, fold_id, len(history))
    impl = _ShrunkMarginalImpl(spec.smoothing, t_max).fit(history)
    return FittedNuisance(impl, fold_id, len(history))


# ---------------------------------------------------------------------------
# sequential cross-fitting
# ---------------------------------------------------------------------------


class PreModelError(RuntimeError):
    """Prediction requested before the opposite fold has a fitted model."""


def fold_of(round_index: int) -> int:
    return round_index % 2


class CrossFitState:
    """Two temporal folds with opposite-fold scoring.

    Unit r joins fold ``r mod 2`` and is always scored by the model
    trained on the other fold, so its prediction never depends on any
    observation sharing its fold. Models are refit once the owning fold
    has grown by ``refit_batch`` rounds since the previous fit. Before a
    fold's first fit, ``predict_or_fallback`` scores with a smoothed
    single-bin marginal fit to the opposite fold so far.
    """

    def __init__(self, spec: HazardLearnerSpec, t_max: int, refit_batch: int = 100, dgp=None):
        if refit_batch < 1:
            raise ValueError("refit batch must be at least 1")
        self.spec = spec
        self.t_max = t_max
        self.refit_batch = refit_batch
        self.dgp = dgp
        self.folds: tuple[list, list] = ([], [])
        self.models: list[FittedNuisance | None] = [None, None]
        self._fitted_sizes = [0, 0]
        self._last_round = 0
        self._fallback: list[tuple[int, FittedNuisance] | None] = [None, None]
        if spec.kind in ("ORACLE", "CORRUPTED"):
            # data-free predictors exist from the start
            for j in (0, 1):
                self.models[j] = fit_hazards(spec, [], t_max, dgp=dgp, fold_id=j)

    def update(self, obs: Observation) -> None:
        if obs.round != self._last_round + 1:
            raise ValueError(
                f"out-of-order round {obs.round}; expected {self._last_round + 1}"
            )
        self._last_round = obs.round
        j = fold_of(obs.round)
        self.folds[j].append(obs)
        if (
            self.spec.kind not in ("ORACLE", "CORRUPTED")
            and len(self.folds[j]) - self._fitted_sizes[j] >= self.refit_batch
        ):
            self.models[j] = fit_hazards(
                self.spec, self.folds[j], self.t_max, dgp=self.dgp, fold_id=j
            )
            self._fitted_sizes[j] = len(self.folds[j])

    def model_for_round(self, r: int) -> FittedNuisance | None:
        return self.models[1 - fold_of(r)]

    def predict_for_unit(self, r: int, x: float):
        """Opposite-fold predictions for both arms; rejects if no model yet."""
        if r <= self._last_round:
            raise ValueError(f"round {r} is already part of the history")
        model = self.model_for_round(r)
        if model is None:
            raise PreModelError(f"no model fitted yet on fold {1 - fold_of(r)}")
        return model.predict_pair(x)

    def predict_or_fallback(self, r: int, x: float):
        model = self.model_for_round(r)
        if model is not None:
            return model.predict_pair(x)
        return self._fallback_model(1 - fold_of(r)).predict_pair(x)

    def _fallback_model(self, fold_j: int) -> FittedNuisance:
        size = len(self.folds[fold_j])
        cached = self._fallback[fold_j]
        if cached is not None and cached[0] == size:
            return cached[1]
        model = fit_fallback(
            self.spec, self.folds[fold_j], self.t_max, dgp=self.dgp, fold_id=fold_j
        )
        self._fallback[fold_j] = (size, model)
        return model
