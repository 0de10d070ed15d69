"""Experiment orchestration: configs, the sequential loop, metrics, presets.

One seed of an experiment walks rounds 1..R: draw a covariate, let every
active estimator variant pick an arm under its own allocation rule, draw
the outcome from the generating process, and push the resulting
pseudo-outcome through that variant's running estimator. Variants share
the covariate stream and a per-round outcome uniform (common random
numbers: variants that assign the same arm in a round see the same
outcome), while each owns an independent assignment stream.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import allocation as alloc
from .core import (
    PAST_HORIZON,
    NuisanceAtArm,
    Observation,
    TieConvention,
    ipcw_score_path,
    outcome_from_uniform,
    survival_path,
)
from .dgp import (
    SyntheticDgp,
    TwinsDgp,
    TwinsDgpParams,
    calibrate_intercepts,
    compute_ground_truth,
    default_censoring_targets,
    default_survival_targets,
    default_synthetic_dgp,
)
from .estimator import cs_half_width, normal_quantile, optimal_cs_rho
from .learners import CrossFitState, HazardLearnerSpec, fit_fallback, fit_hazards

VARIANTS = (
    "ASE", "ASE_NA", "ASE_MS", "PLUGIN", "PLUGIN_NA", "A2IPW_NAIVE", "ORACLE", "ORACLE_NA",
)

FIGURE_PRESETS = ("SYN_FIG3", "TWINS_FIG7", "POLICY_FIG2", "RATIO_FIG5", "CURVES_FIG6")

_CSV_HEADER = (
    "round", "horizon", "tau_hat", "ci_lo", "ci_hi", "cs_lo", "cs_hi", "pi_realized", "arm",
)


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DgpConfig:
    kind: str = "SYNTHETIC"
    t_max: int | None = None
    p1: float = 0.5

    def __post_init__(self):
        if self.kind not in ("SYNTHETIC", "TWINS"):
            raise ConfigError(f"unknown dgp kind {self.kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    dgp: DgpConfig = field(default_factory=DgpConfig)
    rounds: int = 2000
    burn_in: int = 1000
    batch: int = 100
    convention: str = "TIES"
    learner: HazardLearnerSpec = field(default_factory=HazardLearnerSpec)
    criterion: str = "A_OPT"
    truncation: alloc.TruncationSchedule = field(default_factory=alloc.TruncationSchedule)
    variants: tuple[str, ...] = VARIANTS
    seeds: tuple[int, ...] = tuple(range(1, 51))
    alpha: float = 0.05
    cs_rho: float | None = None
    initial_policy: float = 0.5

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be positive")
        if not 0 <= self.burn_in <= self.rounds:
            raise ConfigError("burn-in must lie in [0, rounds]")
        if self.batch < 1:
            raise ConfigError("batch must be positive")
        if self.convention not in ("TIES", "NO_TIES"):
            raise ConfigError(f"unknown tie convention {self.convention!r}")
        if self.criterion not in alloc.DESIGN_CRITERIA:
            raise ConfigError(f"unknown design criterion {self.criterion!r}")
        if self.criterion in ("D_OPT", "E_OPT"):
            raise ConfigError(
                "the determinant and eigenvalue criteria are grid solvers; "
                "use the policy table, not the sequential loop"
            )
        if not self.variants:
            raise ConfigError("variant roster is empty")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must be interior")
        if not 0.0 < self.initial_policy < 1.0:
            raise ConfigError("initial policy must be interior")

    @property
    def tie_convention(self) -> TieConvention:
        return TieConvention.TIES if self.convention == "TIES" else TieConvention.NO_TIES

    def resolved_cs_rho(self) -> float:
        if self.cs_rho is not None:
            return self.cs_rho
        return optimal_cs_rho(self.rounds, self.alpha)


_CONFIG_KEYS = {
    "dgp", "rounds", "burn_in", "batch", "convention", "learner", "criterion",
    "truncation", "variants", "seeds", "alpha", "cs_rho", "initial_policy",
}
_DGP_KEYS = {"kind", "t_max", "p1"}
_LEARNER_KEYS = {"kind", "bins", "smoothing", "corrupt_event", "corrupt_censor", "event_base"}
_TRUNCATION_KEYS = {"mode", "alpha_clip", "k0", "exponent", "k_cap"}
_SEED_KEYS = {"count", "base"}


def _reject_unknown(mapping: dict, allowed: set, where: str):
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Parse and validate an experiment config mapping; unknown keys reject."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown(raw, _CONFIG_KEYS, "config")
    kwargs: dict = {}
    if "dgp" in raw:
        _reject_unknown(raw["dgp"], _DGP_KEYS, "dgp")
        kwargs["dgp"] = DgpConfig(**raw["dgp"])
    if "learner" in raw:
        _reject_unknown(raw["learner"], _LEARNER_KEYS, "learner")
        try:
            kwargs["learner"] = HazardLearnerSpec(**raw["learner"])
        except ValueError as err:
            raise ConfigError(str(err)) from err
    if "truncation" in raw:
        _reject_unknown(raw["truncation"], _TRUNCATION_KEYS, "truncation")
        try:
            kwargs["truncation"] = alloc.TruncationSchedule(**raw["truncation"])
        except ValueError as err:
            raise ConfigError(str(err)) from err
    if "seeds" in raw:
        seeds = raw["seeds"]
        if isinstance(seeds, dict):
            _reject_unknown(seeds, _SEED_KEYS, "seeds")
            base = int(seeds.get("base", 1))
            kwargs["seeds"] = tuple(range(base, base + int(seeds["count"])))
        else:
            kwargs["seeds"] = tuple(int(s) for s in seeds)
    if "variants" in raw:
        kwargs["variants"] = tuple(raw["variants"])
    for key in ("rounds", "burn_in", "batch", "convention", "criterion", "alpha",
                "cs_rho", "initial_policy"):
        if key in raw:
            kwargs[key] = raw[key]
    return ExperimentConfig(**kwargs)


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"invalid JSON: {err}") from err
    return config_from_dict(raw)


def config_to_dict(config: ExperimentConfig) -> dict:
    out = asdict(config)
    out["variants"] = list(config.variants)
    out["seeds"] = list(config.seeds)
    return out


def default_synthetic_config(**overrides) -> ExperimentConfig:
    """Desk-scale synthetic preset: 2000 rounds, 1000 burn-in, 50 seeds."""
    base = dict(
        dgp=DgpConfig(kind="SYNTHETIC"),
        rounds=2000,
        burn_in=1000,
        batch=100,
        learner=HazardLearnerSpec(kind="LOGISTIC"),
        seeds=tuple(range(1, 51)),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def default_twins_config(**overrides) -> ExperimentConfig:
    base = dict(
        dgp=DgpConfig(kind="TWINS"),
        rounds=2000,
        burn_in=1000,
        batch=100,
        learner=HazardLearnerSpec(kind="LOGISTIC"),
        seeds=tuple(range(1, 51)),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


_SYNTH_CACHE: dict[tuple, SyntheticDgp] = {}


def build_dgp(config: ExperimentConfig):
    conv = config.tie_convention
    if config.dgp.kind == "TWINS":
        t_max = config.dgp.t_max if config.dgp.t_max is not None else 3
        return TwinsDgp(TwinsDgpParams(p1=config.dgp.p1, t_max=t_max), conv)
    t_max = config.dgp.t_max if config.dgp.t_max is not None else 4
    if t_max == 4:
        return default_synthetic_dgp(conv)
    key = (conv.value, t_max)
    if key not in _SYNTH_CACHE:
        params = calibrate_intercepts(
            default_survival_targets(t_max), default_censoring_targets(t_max), conv
        )
        _SYNTH_CACHE[key] = SyntheticDgp(params, conv)
    return _SYNTH_CACHE[key]


# ---------------------------------------------------------------------------
# variant plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _VariantPlan:
    name: str
    allocation: str        # ADAPTIVE, UNIFORM, NEYMAN_NAIVE
    estimation: str        # EIF, PLUGIN, NAIVE
    oracle_nuisance: bool
    misspecified_censoring: bool = False


def _plan_for(name: str, config: ExperimentConfig) -> _VariantPlan:
    table = {
        "ASE": ("ADAPTIVE", "EIF", False, False),
        "ASE_NA": ("UNIFORM", "EIF", False, False),
        "ASE_MS": ("ADAPTIVE", "EIF", False, True),
        "PLUGIN": ("ADAPTIVE", "PLUGIN", False, False),
        "PLUGIN_NA": ("UNIFORM", "PLUGIN", False, False),
        "A2IPW_NAIVE": ("NEYMAN_NAIVE", "NAIVE", False, False),
        "ORACLE": ("ADAPTIVE", "EIF", True, False),
        "ORACLE_NA": ("UNIFORM", "EIF", True, False),
    }
    allocation, estimation, oracle, ms = table[name]
    return _VariantPlan(name, allocation, estimation, oracle, ms)


def _ms_learner_spec(learner: HazardLearnerSpec) -> HazardLearnerSpec:
    """Same event block as the configured learner, pooled-marginal censoring."""
    base = learner.kind if learner.kind in ("ORACLE", "BINNED", "LOGISTIC") else "LOGISTIC"
    return HazardLearnerSpec(
        kind="CONSTANT_CENSORING_MS",
        bins=learner.bins,
        smoothing=learner.smoothing,
        event_base=base,
    )


class _PluginTracker:
    """Running direct-identification estimate under a periodically refit model.

    Between refits the model is frozen, so new units extend the running
    sums exactly; at each refit, past units' survival contrasts are
    recomputed in one vectorized pass.
    """

    def __init__(self, spec, t_max, batch, dgp):
        self.spec = spec
        self.t_max = t_max
        self.batch = batch
        self.dgp = dgp
        self.history: list[Observation] = []
        self.model = None
        self._fitted_size = 0
        self._marginal = None
        self.sum_vals = np.zeros(t_max + 1)
        self.sum_sq = np.zeros(t_max + 1)
        if spec.kind in ("ORACLE", "CORRUPTED"):
            self.model = fit_hazards(spec, [], t_max, dgp=dgp)

    def _diff_at(self, model, x):
        nu0, nu1 = model.predict_pair(x)
        return survival_path(nu1) - survival_path(nu0)

    def _active_model(self):
        if self.model is not None:
            return self.model
        size = len(self.history)
        if self._marginal is None or self._marginal[0] != size:
            fallback = fit_fallback(self.spec, self.history, self.t_max, dgp=self.dgp)
            self._marginal = (size, fallback)
        return self._marginal[1]

    def add(self, obs: Observation):
        d = self._diff_at(self._active_model(), obs.x)
        self.sum_vals += d
        self.sum_sq += d * d
        self.history.append(obs)
        if (
            self.spec.kind not in ("ORACLE", "CORRUPTED")
            and len(self.history) - self._fitted_size >= self.batch
        ):
            self.model = fit_hazards(self.spec, self.history, self.t_max, dgp=self.dgp)
            self._fitted_size = len(self.history)
            self._recompute()

    def _recompute(self):
        xs = np.array([obs.x for obs in self.history])
        lam_s0, _ = self.model.predict_batch(xs, 0)
        lam_s1, _ = self.model.predict_batch(xs, 1)
        vals = np.cumprod(1.0 - lam_s1, axis=1) - np.cumprod(1.0 - lam_s0, axis=1)
        self.sum_vals = vals.sum(axis=0)
        self.sum_sq = (vals * vals).sum(axis=0)

    def estimate(self):
        n = len(self.history)
        return self.sum_vals / n

    def variance(self):
        n = len(self.history)
        mean = self.sum_vals / n
        return np.maximum(self.sum_sq / n - mean * mean, 0.0)


class _VariantRunner:
    def __init__(self, plan, config, dgp, tau_true, rng, track_curves=False):
        self.plan = plan
        self.config = config
        self.dgp = dgp
        self.conv = config.tie_convention
        self.tau_true = tau_true
        self.rng = rng
        self.track_curves = track_curves
        t_len = dgp.t_max + 1
        r_len = config.rounds
        self.n = 0
        self.sum_phi = np.zeros(t_len)
        self.sum_sq = np.zeros(t_len)
        self.sum_phi1 = np.zeros(t_len)
        self.sum_phi0 = np.zeros(t_len)
        self.curve_snapshots: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.tau_hat = np.full((r_len, t_len), np.nan)
        self.ci_hw = np.full((r_len, t_len), np.nan)
        self.cs_hw = np.full((r_len, t_len), np.nan)
        self.pi_log = np.full(r_len, np.nan)
        self.arm_log = np.zeros(r_len, dtype=np.int8)
        self.obs_t_tilde = np.zeros(r_len, dtype=np.int16)
        self.obs_delta = np.full(r_len, -1, dtype=np.int8)
        self._z = normal_quantile(1.0 - config.alpha / 2.0)
        self._rho = config.resolved_cs_rho()
        self._pending = None

        spec = _ms_learner_spec(config.learner) if plan.misspecified_censoring else config.learner
        self.crossfit = None
        self.plugin = None
        if plan.estimation == "PLUGIN":
            self.plugin = _PluginTracker(spec, dgp.t_max, config.batch, dgp)
        if not plan.oracle_nuisance and (
            plan.estimation in ("EIF", "NAIVE") or plan.allocation in ("ADAPTIVE", "NEYMAN_NAIVE")
        ):
            self.crossfit = CrossFitState(spec, dgp.t_max, config.batch, dgp=dgp)

    # -- allocation ---------------------------------------------------------

    def _predicted_pair(self, r, x, truth_pair):
        if self.plan.oracle_nuisance:
            return truth_pair
        return self.crossfit.predict_or_fallback(r, x)

    def policy(self, r: int, x: float, truth_pair) -> float:
        mode = self.plan.allocation
        if mode == "ADAPTIVE":
            # the config's design criterion steers the trunk variants
            if self.config.criterion == "NEYMAN_NAIVE":
                mode = "NEYMAN_NAIVE"
            elif self.config.criterion == "UNIFORM":
                mode = "UNIFORM"
        if mode == "UNIFORM" or r <= self.config.burn_in:
            return self.config.initial_policy
        nu0, nu1 = self._predicted_pair(r, x, truth_pair)
        self._pending = (r, nu0, nu1)
        if mode == "NEYMAN_NAIVE":
            v0 = alloc.neyman_naive_target(nu0)
            v1 = alloc.neyman_naive_target(nu1)
        else:
            v0, v1 = alloc.variance_target(nu0, nu1, self.conv)
        raw = alloc.a_optimal_prob(v0, v1)
        return alloc.truncate(raw, r, self.config.truncation).truncated

    # -- estimation ---------------------------------------------------------

    def record(self, r, x, arm, t_tilde, delta, pi, truth_pair):
        obs = Observation(x=x, a=arm, t_tilde=t_tilde, delta=delta, round=r)
        self.obs_t_tilde[r - 1] = t_tilde
        self.obs_delta[r - 1] = -1 if delta is None else delta
        if self.plan.estimation == "PLUGIN":
            self.plugin.add(obs)
            if self.crossfit is not None:
                self.crossfit.update(obs)
            self._pending = None
            self._log_metrics(r, pi, arm, from_plugin=True)
            return

        if self.plan.oracle_nuisance:
            nu0, nu1 = truth_pair
        elif self._pending is not None and self._pending[0] == r:
            nu0, nu1 = self._pending[1], self._pending[2]
        else:
            nu0, nu1 = self.crossfit.predict_or_fallback(r, x)
        self._pending = None

        s1 = survival_path(nu1)
        s0 = survival_path(nu0)
        if self.plan.estimation == "EIF":
            nu_a, s_a = (nu1, s1) if arm == 1 else (nu0, s0)
            xi_sa = ipcw_score_path(t_tilde, delta, nu_a, self.conv) * s_a
            if arm == 1:
                phi1 = s1 - xi_sa / pi
                phi0 = s0
            else:
                phi1 = s1
                phi0 = s0 - xi_sa / (1.0 - pi)
            phi = phi1 - phi0
            if self.track_curves:
                self.sum_phi1 += phi1
                self.sum_phi0 += phi0
        else:
            # NAIVE: censoring-agnostic augmented IPW of the observed
            # survival indicator. Units censored by t count as failures,
            # which is exactly the censoring bias this baseline carries.
            if t_tilde == PAST_HORIZON:
                y = np.ones_like(s1)
            else:
                y = (np.arange(self.dgp.t_max + 1) < t_tilde).astype(float)
            s_a = s1 if arm == 1 else s0
            w = (arm - pi) / (pi * (1.0 - pi))
            phi = s1 - s0 + w * (y - s_a)

        self.n += 1
        self.sum_phi += phi
        self.sum_sq += phi * phi
        if self.crossfit is not None:
            self.crossfit.update(obs)
        self._log_metrics(r, pi, arm)

    def _log_metrics(self, r, pi, arm, from_plugin=False):
        i = r - 1
        self.pi_log[i] = pi
        self.arm_log[i] = arm
        if from_plugin:
            n = len(self.plugin.history)
            point = self.plugin.estimate()
            var = self.plugin.variance() if n >= 2 else None
        else:
            n = self.n
            point = self.sum_phi / n
            if n >= 2:
                var = np.maximum(self.sum_sq / n - point * point, 0.0)
            else:
                var = None
        self.tau_hat[i] = point
        if var is not None:
            self.ci_hw[i] = self._z * np.sqrt(var / n)
            self.cs_hw[i] = cs_half_width(n, var, self._rho, self.config.alpha)
        if self.track_curves and r in self._curve_rounds:
            self.curve_snapshots[r] = (
                self.sum_phi1 / max(self.n, 1),
                self.sum_phi0 / max(self.n, 1),
            )

    _curve_rounds: frozenset = frozenset()


# ---------------------------------------------------------------------------
# single-seed run
# ---------------------------------------------------------------------------


@dataclass
class SeedResult:
    seed: int
    tau_true: np.ndarray
    mse: dict
    coverage: dict
    cs_uniform_hit: dict
    cs_dominates: dict
    arm1_count: dict
    final_tau: dict
    trace: dict | None = None
    curves: dict | None = None
    covariates: np.ndarray | None = None


def _stream_rngs(seed: int, variants):
    cov = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    out = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    assign = {
        name: np.random.default_rng(np.random.SeedSequence((seed, 2, k)))
        for k, name in enumerate(variants)
    }
    return cov, out, assign


def run_single(
    config: ExperimentConfig,
    seed: int,
    keep_trace: bool = False,
    curve_rounds=(),
    tau_true: np.ndarray | None = None,
    dgp=None,
) -> SeedResult:
    """One deterministic experiment replication.

    Returns compact per-variant metric curves; with ``keep_trace`` the
    full per-round log needed for CSV emission is attached. ``dgp``
    overrides the config-built generating process (custom hazard
    studies).
    """
    if dgp is None:
        dgp = build_dgp(config)
    conv = config.tie_convention
    if tau_true is None:
        tau_true = compute_ground_truth(dgp).tau
    cov_rng, out_rng, assign_rngs = _stream_rngs(seed, config.variants)
    runners = {}
    for name in config.variants:
        runner = _VariantRunner(
            _plan_for(name, config), config, dgp, tau_true, assign_rngs[name],
            track_curves=bool(curve_rounds) and name in ("ASE", "ORACLE"),
        )
        runner._curve_rounds = frozenset(curve_rounds)
        runners[name] = runner

    covariate_log: list[float] = []
    for r in range(1, config.rounds + 1):
        x = dgp.sample_covariate(cov_rng)
        if keep_trace:
            covariate_log.append(x)
        u = float(out_rng.random())
        truth_pair = (dgp.hazards(x, 0), dgp.hazards(x, 1))
        outcome_cache: dict[int, tuple] = {}
        for name in config.variants:
            runner = runners[name]
            pi = runner.policy(r, x, truth_pair)
            arm = 1 if runner.rng.random() < pi else 0
            if arm not in outcome_cache:
                outcome_cache[arm] = outcome_from_uniform(truth_pair[arm], conv, u)
            t_tilde, delta = outcome_cache[arm]
            runner.record(r, x, arm, t_tilde, delta, pi, truth_pair)

    window_lo = max(500, 2)
    result = SeedResult(
        seed=seed, tau_true=tau_true, mse={}, coverage={}, cs_uniform_hit={},
        cs_dominates={}, arm1_count={}, final_tau={},
        trace={} if keep_trace else None,
        curves={} if curve_rounds else None,
    )
    if keep_trace:
        result.covariates = np.array(covariate_log)
    for name, runner in runners.items():
        err = runner.tau_hat - tau_true
        result.mse[name] = np.mean(err * err, axis=1)
        valid_ci = np.isfinite(runner.ci_hw)
        with np.errstate(invalid="ignore"):
            hits = ((np.abs(err) <= runner.ci_hw) & valid_ci).sum(axis=1).astype(float)
        counts = valid_ci.sum(axis=1)
        coverage = np.full(hits.shape, np.nan)
        has = counts > 0
        coverage[has] = hits[has] / counts[has]
        result.coverage[name] = coverage
        cs_ok = np.abs(err) <= runner.cs_hw
        lo = min(window_lo, config.rounds) - 1
        result.cs_uniform_hit[name] = np.all(cs_ok[lo:], axis=0)
        valid = ~np.isnan(runner.ci_hw)
        result.cs_dominates[name] = bool(
            np.all(runner.cs_hw[valid] >= runner.ci_hw[valid] - 1e-12)
        )
        result.final_tau[name] = runner.tau_hat[-1].copy()
        result.arm1_count[name] = int(runner.arm_log.sum())
        if keep_trace:
            result.trace[name] = {
                "tau_hat": runner.tau_hat, "ci_hw": runner.ci_hw, "cs_hw": runner.cs_hw,
                "pi": runner.pi_log, "arm": runner.arm_log,
                "t_tilde": runner.obs_t_tilde, "delta": runner.obs_delta,
            }
        if curve_rounds and runner.track_curves:
            result.curves[name] = dict(runner.curve_snapshots)
    return result


# ---------------------------------------------------------------------------
# aggregation over seeds
# ---------------------------------------------------------------------------


@dataclass
class SummaryMetrics:
    config: ExperimentConfig
    tau_true: np.ndarray
    seeds: tuple[int, ...]
    mse: dict            # variant -> (n_seeds, R)
    coverage: dict
    cs_uniform_hit: dict  # variant -> (n_seeds, T) bool
    cs_dominates: dict    # variant -> (n_seeds,) bool
    arm1_count: dict      # variant -> (n_seeds,)
    final_tau: dict       # variant -> (n_seeds, T)

    def mse_mean(self, variant: str) -> np.ndarray:
        return self.mse[variant].mean(axis=0)

    def mse_se(self, variant: str) -> np.ndarray:
        m = self.mse[variant]
        if m.shape[0] < 2:
            return np.full(m.shape[1], np.nan)
        return m.std(axis=0, ddof=1) / math.sqrt(m.shape[0])

    def relative_mse(self, variant: str) -> np.ndarray:
        if "ORACLE" not in self.mse:
            raise ConfigError("relative MSE needs the ORACLE variant in the roster")
        return self.mse_mean(variant) / self.mse_mean("ORACLE")

    def coverage_mean(self, variant: str) -> np.ndarray:
        cov = self.coverage[variant]
        valid = np.isfinite(cov)
        total = np.where(valid, cov, 0.0).sum(axis=0)
        counts = valid.sum(axis=0)
        out = np.full(cov.shape[1], np.nan)
        has = counts > 0
        out[has] = total[has] / counts[has]
        return out

    def cs_uniform_rate(self, variant: str) -> float:
        return float(self.cs_uniform_hit[variant].mean())

    def final_round_table(self) -> dict:
        r = self.config.rounds - 1
        out = {}
        for v in self.config.variants:
            row = {
                "mse": float(self.mse_mean(v)[r]),
                "mse_se": float(self.mse_se(v)[r]),
                "coverage": float(self.coverage_mean(v)[r]),
            }
            if "ORACLE" in self.mse:
                row["relative_mse"] = float(self.relative_mse(v)[r])
            out[v] = row
        return out


def _seed_worker(args):
    config, seed, tau_true = args
    return run_single(config, seed, tau_true=tau_true)


def run_many(config: ExperimentConfig, threads: int = 1) -> SummaryMetrics:
    """Replicate over the config's seed list, optionally in parallel.

    Aggregation is a deterministic reduction over the sorted seed list,
    independent of worker completion order.
    """
    dgp = build_dgp(config)
    tau_true = compute_ground_truth(dgp).tau
    jobs = [(config, seed, tau_true) for seed in config.seeds]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_seed_worker, jobs, chunksize=1))
    else:
        results = [_seed_worker(job) for job in jobs]
    results.sort(key=lambda r: config.seeds.index(r.seed))

    def stack(getter):
        return {
            v: np.stack([getter(res)[v] for res in results]) for v in config.variants
        }

    return SummaryMetrics(
        config=config,
        tau_true=tau_true,
        seeds=config.seeds,
        mse=stack(lambda r: r.mse),
        coverage=stack(lambda r: r.coverage),
        cs_uniform_hit=stack(lambda r: r.cs_uniform_hit),
        cs_dominates=stack(lambda r: r.cs_dominates),
        arm1_count={
            v: np.array([res.arm1_count[v] for res in results]) for v in config.variants
        },
        final_tau=stack(lambda r: r.final_tau),
    )


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _fmt(value: float) -> str:
    return "%.12g" % value


def trace_csv_rows(trace: dict, t_len: int):
    tau_hat, ci_hw, cs_hw = trace["tau_hat"], trace["ci_hw"], trace["cs_hw"]
    pi, arm = trace["pi"], trace["arm"]
    for i in range(tau_hat.shape[0]):
        for t in range(t_len):
            point = tau_hat[i, t]
            ci = ci_hw[i, t]
            cs = cs_hw[i, t]
            yield (
                str(i + 1), str(t), _fmt(point),
                _fmt(point - ci) if np.isfinite(ci) else "",
                _fmt(point + ci) if np.isfinite(ci) else "",
                _fmt(point - cs) if np.isfinite(cs) else "",
                _fmt(point + cs) if np.isfinite(cs) else "",
                _fmt(pi[i]), str(int(arm[i])),
            )


def write_seed_csvs(result: SeedResult, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    t_len = result.tau_true.size
    for variant, trace in result.trace.items():
        path = os.path.join(out_dir, f"{variant}_seed{result.seed}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_CSV_HEADER)
            writer.writerows(trace_csv_rows(trace, t_len))


def write_summary_json(summary: SummaryMetrics, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    payload = {
        "config": config_to_dict(summary.config),
        "tau_true": [float(v) for v in summary.tau_true],
        "final_round": summary.final_round_table(),
        "cs_uniform_rate": {
            v: summary.cs_uniform_rate(v) for v in summary.config.variants
        },
        "mean_arm1_count": {
            v: float(summary.arm1_count[v].mean()) for v in summary.config.variants
        },
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def simulate(config: ExperimentConfig, out_dir: str | None, threads: int = 1) -> SummaryMetrics:
    """Run the config's seeds, write per-seed traces and the summary."""
    summary = run_many(config, threads=threads)
    if out_dir is not None:
        for seed in config.seeds:
            result = run_single(config, seed, keep_trace=True, tau_true=summary.tau_true)
            write_seed_csvs(result, out_dir)
        write_summary_json(summary, out_dir)
    return summary


# ---------------------------------------------------------------------------
# policy tables and figure presets
# ---------------------------------------------------------------------------


def policy_table(dgp_kind: str, criterion: str, grid_n: int, alpha: float = 0.05,
                 convention: str = "TIES"):
    """Allocation policy over a covariate grid under oracle nuisances."""
    config = ExperimentConfig(dgp=DgpConfig(kind=dgp_kind), convention=convention)
    dgp = build_dgp(config)
    gt = compute_ground_truth(dgp)
    design = alloc.GridDesign.from_ground_truth(gt)
    if criterion == "A_OPT":
        pi = alloc.a_optimal_policy(design, alpha)
    elif criterion in ("D_OPT", "E_OPT"):
        solver = alloc.d_optimal_policy if criterion == "D_OPT" else alloc.e_optimal_policy
        res = solver(design, alpha)
        if not res["converged"]:
            raise NumericalFailure(
                f"{criterion} fixed point did not converge; last residual {res['residual']:.2e}"
            )
        pi = res.policy
    elif criterion == "NEYMAN_NAIVE":
        v1 = np.array([alloc.neyman_naive_target(dgp.hazards(float(x), 1)) for x in gt.x])
        v0 = np.array([alloc.neyman_naive_target(dgp.hazards(float(x), 0)) for x in gt.x])
        pi = np.clip(np.sqrt(v1) / (np.sqrt(v1) + np.sqrt(v0)), alpha, 1.0 - alpha)
    elif criterion == "UNIFORM":
        pi = np.full(gt.x.size, 0.5)
    else:
        raise ConfigError(f"unknown criterion {criterion!r}")
    if dgp.kind == "TWINS":
        return gt.x, pi
    xs = np.linspace(0.0, 1.0, grid_n)
    return xs, np.interp(xs, gt.x, pi)


def shared_censoring_sweep(
    n_points: int = 20,
    lam_g_max: float = 0.4,
    lam_s_control: float = 0.15,
    lam_s_treated: float = 0.5,
    t_max: int = 4,
):
    """Optimal treated share as a shared censoring hazard grows.

    Both arms share one constant censoring hazard while their event
    hazards stay fixed and asymmetric; the first column is the hazard
    grid, then the censoring-aware optimum, then the censoring-agnostic
    Neyman share (constant over the sweep).
    """
    ones = np.ones(t_max + 1)
    nu0_free = NuisanceAtArm(lam_s_control * ones, 0.0 * ones)
    nu1_free = NuisanceAtArm(lam_s_treated * ones, 0.0 * ones)
    neyman = alloc.a_optimal_prob(
        alloc.neyman_naive_target(nu0_free), alloc.neyman_naive_target(nu1_free)
    )
    grid = np.linspace(0.0, lam_g_max, n_points)
    pis = []
    for lam_g in grid:
        nu0 = NuisanceAtArm(lam_s_control * ones, lam_g * ones)
        nu1 = NuisanceAtArm(lam_s_treated * ones, lam_g * ones)
        v0, v1 = alloc.variance_target(nu0, nu1, TieConvention.TIES)
        pis.append(alloc.a_optimal_prob(v0, v1))
    return grid, np.asarray(pis), neyman


def arm_censoring_ratio_construction(g: float, t_max: int = 3):
    """A hazard pair whose censoring survivals keep an exact ratio g.

    The first-period event hazard is zero in both arms so every weighted
    score index sees the ratio; later censoring continuation factors are
    shared across arms, and the treated arm's first-period censoring
    level anchors the ratio. Returns (nu0, nu1, kappa) with kappa the
    event-information ratio entering the closed form.
    """
    if not 0.05 <= 0.2 * g <= 0.95:
        raise ValueError("ratio outside the feasible construction range")
    lam_s0 = np.array([0.0, 0.25, 0.30, 0.35])[: t_max + 1]
    lam_s1 = np.array([0.0, 0.15, 0.20, 0.25])[: t_max + 1]
    base_cont = np.array([0.20, 0.88, 0.92, 0.95])[: t_max + 1]  # arm-1 censor continuation
    cont1 = base_cont.copy()
    cont0 = base_cont.copy()
    cont0[0] = g * base_cont[0]
    nus = []
    for lam_s, cont in ((lam_s0, cont0), (lam_s1, cont1)):
        lam_c = 1.0 - cont
        lam_g = lam_c * (1.0 - lam_s)  # observed-hazard parameterization
        nus.append(NuisanceAtArm(lam_s, lam_g))
    g1_before = np.concatenate([[1.0], np.cumprod(cont1)[:-1]])

    def info(lam_s):
        s = np.cumprod(1.0 - lam_s)
        terms = np.where(lam_s > 0.0, lam_s / np.where(s > 0, s, 1.0) / g1_before, 0.0)
        return float(np.sum(s * s * np.cumsum(terms)))

    kappa = info(lam_s0) / info(lam_s1)
    return nus[0], nus[1], kappa


def reproduce_figures(preset: str, out_dir: str, threads: int = 1, seeds=None):
    """Emit plot-ready CSV series for one of the named figure presets."""
    if preset not in FIGURE_PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {FIGURE_PRESETS}")
    os.makedirs(out_dir, exist_ok=True)

    if preset == "POLICY_FIG2":
        grid, pis, neyman = shared_censoring_sweep()
        path = os.path.join(out_dir, "policy_vs_censoring.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lambda_g", "pi_star", "pi_neyman"])
            for lam_g, pi in zip(grid, pis):
                writer.writerow([_fmt(lam_g), _fmt(pi), _fmt(neyman)])
        return [path]

    if preset == "RATIO_FIG5":
        from .dgp import score_covariance

        gs = np.exp(np.linspace(np.log(0.25), np.log(4.0), 25))
        path = os.path.join(out_dir, "policy_vs_censoring_ratio.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["g", "pi_enumeration", "pi_closed_form"])
            for g in gs:
                nu0, nu1, kappa = arm_censoring_ratio_construction(float(g))
                v0 = float(np.trace(score_covariance(nu0, TieConvention.TIES)))
                v1 = float(np.trace(score_covariance(nu1, TieConvention.TIES)))
                pi_enum = alloc.a_optimal_prob(v0, v1)
                pi_closed = alloc.censoring_ratio_closed_form(kappa, float(g))
                writer.writerow([_fmt(g), _fmt(pi_enum), _fmt(pi_closed)])
        return [path]

    if preset in ("SYN_FIG3", "TWINS_FIG7"):
        maker = default_synthetic_config if preset == "SYN_FIG3" else default_twins_config
        config = maker() if seeds is None else maker(seeds=tuple(seeds))
        summary = run_many(config, threads=threads)
        stem = "synthetic" if preset == "SYN_FIG3" else "twins"
        paths = []
        series = {
            "relative_mse": lambda v: summary.relative_mse(v),
            "mse": lambda v: summary.mse_mean(v),
            "coverage": lambda v: summary.coverage_mean(v),
        }
        for label, getter in series.items():
            path = os.path.join(out_dir, f"{stem}_{label}.csv")
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["round"] + [f"{v}" for v in config.variants]
                                + [f"{v}_se" for v in config.variants])
                values = {v: getter(v) for v in config.variants}
                ses = {v: summary.mse_se(v) for v in config.variants}
                for i in range(config.rounds):
                    row = [str(i + 1)]
                    row += [_fmt(values[v][i]) for v in config.variants]
                    row += [_fmt(ses[v][i]) for v in config.variants]
                    writer.writerow(row)
            paths.append(path)
        write_summary_json(summary, out_dir)
        paths.append(os.path.join(out_dir, "summary.json"))
        return paths

    # CURVES_FIG6: average survival curves per arm at a few sample sizes
    config = default_synthetic_config(
        variants=("ASE", "ORACLE"),
        seeds=tuple(range(1, 21)) if seeds is None else tuple(seeds),
    )
    checkpoints = (1000, 1500, 2000)
    dgp = build_dgp(config)
    gt = compute_ground_truth(dgp)
    s1_true = gt.w @ gt.s1
    s0_true = gt.w @ gt.s0
    snapshots = {r: [] for r in checkpoints}
    for seed in config.seeds:
        res = run_single(config, seed, curve_rounds=checkpoints, tau_true=gt.tau)
        for r in checkpoints:
            snapshots[r].append(res.curves["ASE"][r])
    path = os.path.join(out_dir, "survival_curves.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["n", "horizon", "s1_hat", "s1_se", "s0_hat", "s0_se", "s1_true", "s0_true"]
        )
        for r in checkpoints:
            s1_hat = np.stack([snap[0] for snap in snapshots[r]])
            s0_hat = np.stack([snap[1] for snap in snapshots[r]])
            n_seeds = s1_hat.shape[0]
            for t in range(dgp.t_max + 1):
                writer.writerow([
                    str(r), str(t),
                    _fmt(s1_hat[:, t].mean()), _fmt(s1_hat[:, t].std(ddof=1) / math.sqrt(n_seeds)),
                    _fmt(s0_hat[:, t].mean()), _fmt(s0_hat[:, t].std(ddof=1) / math.sqrt(n_seeds)),
                    _fmt(s1_true[t]), _fmt(s0_true[t]),
                ])
    return [path]
