import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adasurv.core import (
    PAST_HORIZON,
    NuisanceAtArm,
    Observation,
    OverlapError,
    TieConvention,
    apo_pseudo_outcome_values,
    censoring_survival,
    eif_bound,
    eif_pseudo_outcome_values,
    event_survival,
    ipcw_score,
    ipcw_score_path,
    outcome_atoms,
    outcome_from_uniform,
    survival_path,
)

TIES = TieConvention.TIES
NO_TIES = TieConvention.NO_TIES


def nu_const(lam_s, lam_g, t_max=4):
    n = t_max + 1
    return NuisanceAtArm(np.full(n, lam_s), np.full(n, lam_g))


def obs(t_tilde, delta, a=0, x=0.5):
    return Observation(x=x, a=a, t_tilde=t_tilde, delta=delta, round=1)


# -- hazard-pair strategy: TIES-valid with interior censoring ratios --------

@st.composite
def nuisances(draw, t_max=4):
    n = t_max + 1
    lam_s = np.array(draw(st.lists(
        st.floats(0.0, 0.85), min_size=n, max_size=n)))
    frac = np.array(draw(st.lists(
        st.floats(0.0, 0.9), min_size=n, max_size=n)))
    lam_g = frac * (1.0 - lam_s) * 0.9
    return NuisanceAtArm(lam_s, lam_g)


class TestSurvivalProducts:
    def test_no_event_identity(self):
        assert event_survival(nu_const(0.0, 0.0), 3) == 1.0

    def test_half_hazard(self):
        assert event_survival(nu_const(0.5, 0.0), 1) == 0.25

    def test_before_grid_is_one(self):
        assert event_survival(nu_const(0.3, 0.1), -1) == 1.0

    def test_calibrated_endpoint_near_marginal(self, syn_dgp):
        # the calibrated target is a marginal over X; at the central x the
        # pointwise value sits close to the endpoint 0.02
        s4 = event_survival(syn_dgp.hazards(0.5, 0), 4)
        assert abs(s4 - 0.02) < 1e-3

    def test_no_censoring_identity(self):
        nu = nu_const(0.4, 0.0)
        for t in range(5):
            assert censoring_survival(nu, t, TIES) == 1.0
            assert censoring_survival(nu, t, NO_TIES) == 1.0

    def test_single_factor_arithmetic(self):
        nu = nu_const(0.5, 0.25, t_max=1)
        assert censoring_survival(nu, 1, TIES) == pytest.approx(0.5, abs=1e-15)
        assert censoring_survival(nu, 1, NO_TIES) == pytest.approx(0.75, abs=1e-15)

    def test_overlap_violation_names_index(self):
        lam_s = np.array([0.1, 0.6, 0.1])
        lam_g = np.array([0.1, 0.4, 0.1])  # ratio 0.4 / 0.4 = 1 at index 1
        with pytest.raises(OverlapError) as err:
            censoring_survival(NuisanceAtArm(lam_s, lam_g), 2, TIES)
        assert err.value.time_index == 1

    @settings(max_examples=50, deadline=None)
    @given(nuisances())
    def test_event_survival_nonincreasing(self, nu):
        s = survival_path(nu)
        assert np.all(np.diff(s) <= 1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.0, 0.9), min_size=3, max_size=6))
    def test_conventions_coincide_without_events(self, lam_g):
        nu = NuisanceAtArm(np.zeros(len(lam_g)), np.array(lam_g) * 0.9)
        for t in range(nu.t_max + 1):
            assert censoring_survival(nu, t, TIES) == pytest.approx(
                censoring_survival(nu, t, NO_TIES), abs=1e-15
            )


class TestIpcwScore:
    def test_censored_at_zero(self):
        nu = nu_const(0.2, 0.0, t_max=0)
        assert ipcw_score(obs(0, 0), nu, 0, TIES) == pytest.approx(-0.25, abs=1e-15)

    def test_event_at_zero(self):
        nu = nu_const(0.2, 0.0, t_max=0)
        assert ipcw_score(obs(0, 1), nu, 0, TIES) == pytest.approx(1.0, abs=1e-15)

    def test_past_horizon_counts_at_risk_everywhere(self):
        nu = nu_const(0.3, 0.1)
        s = survival_path(nu)
        g = np.array([censoring_survival(nu, t, TIES) for t in range(5)])
        expected = np.cumsum(-nu.lam_s / (s * g))
        got = ipcw_score_path(PAST_HORIZON, None, nu, TIES)
        np.testing.assert_allclose(got, expected, atol=1e-14)

    @pytest.mark.parametrize("conv", [TIES, NO_TIES])
    def test_mean_zero_over_atoms_synthetic(self, syn_dgp, syn_grid, conv):
        for x in syn_grid[::4]:
            for a in (0, 1):
                nu = syn_dgp.hazards(float(x), a)
                for t in range(nu.t_max + 1):
                    total = sum(
                        atom.prob * ipcw_score_path(atom.t_tilde, atom.delta, nu, conv)[t]
                        for atom in outcome_atoms(nu, conv)
                    )
                    assert abs(total) <= 1e-12

    @settings(max_examples=40, deadline=None)
    @given(nuisances(t_max=3))
    def test_mean_zero_property(self, nu):
        for conv in (TIES, NO_TIES):
            atoms = outcome_atoms(nu, conv)
            paths = [
                (atom.prob, ipcw_score_path(atom.t_tilde, atom.delta, nu, conv))
                for atom in atoms
            ]
            scale = max(1.0, max(np.max(np.abs(p)) for _, p in paths))
            total = sum(prob * path for prob, path in paths)
            assert np.max(np.abs(total)) <= 1e-9 * scale


class TestOutcomeAtoms:
    def test_degenerate_is_past_horizon(self):
        atoms = outcome_atoms(nu_const(0.0, 0.0, t_max=2), TIES)
        probs = {(a.t_tilde, a.delta): a.prob for a in atoms}
        assert probs[(PAST_HORIZON, None)] == 1.0
        assert sum(a.prob for a in atoms) == 1.0

    def test_single_period_unrolled(self):
        atoms = outcome_atoms(nu_const(0.2, 0.3, t_max=0), TIES)
        table = {(a.t_tilde, a.delta): a.prob for a in atoms}
        assert table[(0, 1)] == pytest.approx(0.2)
        assert table[(0, 0)] == pytest.approx(0.3)
        assert table[(PAST_HORIZON, None)] == pytest.approx(0.5)

    def test_no_ties_event_resolves_first(self):
        atoms = outcome_atoms(nu_const(0.2, 0.3, t_max=0), NO_TIES)
        table = {(a.t_tilde, a.delta): a.prob for a in atoms}
        assert table[(0, 1)] == pytest.approx(0.2)
        assert table[(0, 0)] == pytest.approx(0.8 * 0.3)
        assert table[(PAST_HORIZON, None)] == pytest.approx(0.8 * 0.7)

    @pytest.mark.parametrize("conv", [TIES, NO_TIES])
    def test_completeness(self, syn_dgp, conv):
        for x in (0.1, 0.5, 0.9):
            for a in (0, 1):
                nu = syn_dgp.hazards(x, a)
                atoms = outcome_atoms(nu, conv)
                assert len(atoms) == 2 * (nu.t_max + 1) + 1
                assert all(0.0 <= atom.prob <= 1.0 for atom in atoms)
                assert abs(sum(a_.prob for a_ in atoms) - 1.0) <= 1e-12

    def test_event_mass_matches_monte_carlo(self, syn_dgp):
        # cumulative event-atom mass through t vs frequencies from 1e6 draws
        nu = syn_dgp.hazards(0.4, 0)
        atoms = outcome_atoms(nu, TIES)
        probs = np.array([a.prob for a in atoms])
        cdf = np.cumsum(probs)
        rng = np.random.default_rng(123)
        n = 1_000_000
        draws = np.searchsorted(cdf, rng.random(n), side="right")
        for t in range(nu.t_max + 1):
            event_idx = [2 * i for i in range(t + 1)]
            p = probs[event_idx].sum()
            freq = np.isin(draws, event_idx).mean()
            se = math.sqrt(p * (1 - p) / n)
            assert abs(freq - p) <= 3 * se

    def test_inverse_cdf_matches_atom_order(self):
        nu = nu_const(0.2, 0.3, t_max=0)
        assert outcome_from_uniform(nu, TIES, 0.1) == (0, 1)
        assert outcome_from_uniform(nu, TIES, 0.25) == (0, 0)
        assert outcome_from_uniform(nu, TIES, 0.95) == (PAST_HORIZON, None)


class TestEifPseudoOutcome:
    def test_zero_correction_case(self):
        nu0 = nu_const(0.0, 0.0)
        nu1 = nu_const(0.0, 0.0)
        phi = eif_pseudo_outcome_values(PAST_HORIZON, None, 1, 0.5, nu0, nu1, TIES)
        np.testing.assert_allclose(phi, np.zeros(5), atol=1e-15)

    def test_unobserved_event_reduces_to_hazard_sum(self, syn_dgp):
        # no censoring, unit still at risk past t: the correction collapses
        # to the running -lam/S sum scaled by the assigned-arm survival
        nu0 = nu_const(0.3, 0.0)
        nu1 = nu_const(0.45, 0.0)
        pi = 0.3
        phi = eif_pseudo_outcome_values(PAST_HORIZON, None, 1, pi, nu0, nu1, TIES)
        s0, s1 = survival_path(nu0), survival_path(nu1)
        w = (1 - pi) / (pi * (1 - pi))
        hand = s1 - s0 - w * s1 * np.cumsum(-nu1.lam_s / s1)
        np.testing.assert_allclose(phi, hand, atol=1e-13)

    @pytest.mark.parametrize("pi", [0.2, 0.5, 0.8])
    def test_exact_mean_recovery(self, syn_dgp, pi):
        for x in (0.0, 0.35, 0.6, 1.0):
            nu0 = syn_dgp.hazards(x, 0)
            nu1 = syn_dgp.hazards(x, 1)
            total = np.zeros(5)
            for a, p_arm, nu in ((0, 1 - pi, nu0), (1, pi, nu1)):
                for atom in outcome_atoms(nu, TIES):
                    phi = eif_pseudo_outcome_values(
                        atom.t_tilde, atom.delta, a, pi, nu0, nu1, TIES
                    )
                    total += p_arm * atom.prob * phi
            truth = survival_path(nu1) - survival_path(nu0)
            assert np.max(np.abs(total - truth)) <= 1e-12

    def test_degenerate_assignment_rejected(self):
        nu = nu_const(0.2, 0.1)
        for pi in (0.0, 1.0):
            with pytest.raises(ValueError):
                eif_pseudo_outcome_values(0, 1, 1, pi, nu, nu, TIES)

    @settings(max_examples=40, deadline=None)
    @given(nuisances(t_max=3), st.floats(0.05, 0.95),
           st.integers(-1, 3), st.integers(0, 1), st.integers(0, 1))
    def test_boundedness(self, nu, pi, t_tilde, delta, arm):
        if t_tilde == PAST_HORIZON:
            delta = None
        phi = eif_pseudo_outcome_values(t_tilde, delta, arm, pi, nu, nu, TIES)
        s = survival_path(nu)
        g = np.array([censoring_survival(nu, t, TIES) for t in range(nu.t_max + 1)])
        for t in range(nu.t_max + 1):
            bound = eif_bound(pi, t, float(s[: t + 1].min()), float(g[: t + 1].min()))
            assert abs(phi[t]) <= bound + 1e-9


class TestApoPseudoOutcome:
    def test_other_arm_kills_correction(self):
        nu = nu_const(0.3, 0.1)
        phi = apo_pseudo_outcome_values(2, 1, 0, 1, 0.4, nu, TIES)
        np.testing.assert_allclose(phi, survival_path(nu), atol=1e-15)

    def test_eventless_world_is_one(self):
        nu = nu_const(0.0, 0.0)
        phi = apo_pseudo_outcome_values(PAST_HORIZON, None, 1, 1, 0.5, nu, TIES)
        np.testing.assert_allclose(phi, np.ones(5), atol=1e-15)

    def test_exact_mean_recovery_twins(self, twins_dgp):
        pi = 0.35
        for x in (0.0, 1.0):
            for a in (0, 1):
                nu = twins_dgp.hazards(x, a)
                pi_a = pi if a == 1 else 1.0 - pi
                total = np.zeros(4)
                for arm, p_arm in ((0, 1 - pi), (1, pi)):
                    nu_arm = twins_dgp.hazards(x, arm)
                    for atom in outcome_atoms(nu_arm, TIES):
                        total += p_arm * atom.prob * apo_pseudo_outcome_values(
                            atom.t_tilde, atom.delta, arm, a, pi_a, nu, TIES
                        )
                assert np.max(np.abs(total - survival_path(nu))) <= 1e-12

    def test_arm_decomposition_matches_eif(self, syn_dgp):
        # phi_eif = phi_apo(arm 1) - phi_apo(arm 0), built from one score
        nu0 = syn_dgp.hazards(0.3, 0)
        nu1 = syn_dgp.hazards(0.3, 1)
        pi = 0.4
        for t_tilde, delta, arm in ((1, 1, 1), (2, 0, 0), (PAST_HORIZON, None, 1)):
            phi = eif_pseudo_outcome_values(t_tilde, delta, arm, pi, nu0, nu1, TIES)
            phi1 = apo_pseudo_outcome_values(t_tilde, delta, arm, 1, pi, nu1, TIES)
            phi0 = apo_pseudo_outcome_values(t_tilde, delta, arm, 0, 1 - pi, nu0, TIES)
            np.testing.assert_allclose(phi, phi1 - phi0, atol=1e-13)


class TestObservationValidation:
    def test_past_horizon_carries_no_indicator(self):
        with pytest.raises(ValueError):
            Observation(x=0.5, a=0, t_tilde=PAST_HORIZON, delta=1)

    def test_observed_needs_indicator(self):
        with pytest.raises(ValueError):
            Observation(x=0.5, a=0, t_tilde=2, delta=None)

    def test_bad_arm(self):
        with pytest.raises(ValueError):
            Observation(x=0.5, a=2, t_tilde=1, delta=1)


class TestNuisanceValidation:
    def test_excess_exit_mass_rejected(self):
        with pytest.raises(ValueError):
            NuisanceAtArm(np.array([0.7]), np.array([0.5]))

    def test_negative_hazard_rejected(self):
        with pytest.raises(ValueError):
            NuisanceAtArm(np.array([-0.1]), np.array([0.1]))
