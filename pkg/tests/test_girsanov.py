"""Exponential-weight bookkeeping and the martingale diagnostics.

The statistical anchors here run at desk scale with 3-SE bands; the
heavy-tailed t=1 Revuz-Yor diagnostics live in the acceptance suite with
their pinned path counts.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from filterlab.girsanov import (
    Estimate,
    MAXIMAL_CONST,
    WeightTrajectory,
    diagnostics_report,
    energy_identity_check,
    ensemble_from_model,
    ensemble_independent_h,
    ensemble_revuz_yor,
    gronwall_bound_check,
    independent_h_identity_check,
    log_weight_increment,
    martingale_mean_check,
    mean_se,
    revuz_yor_base_stats,
    revuz_yor_closed_form,
    revuz_yor_transformed_estimates,
    transformed_energy_estimate,
    zlogz_estimate,
    zlogz_identity_gap,
    zstar_bound_check,
)
from filterlab.models import linear_model, make_model, point_mass_initial
from filterlab.rng import substream
from filterlab.simulate import TimeGrid

GRID_HALF = TimeGrid(horizon=0.5, dt=1e-3)


class TestLogWeightIncrement:
    def test_zero_h_gives_zero(self):
        assert log_weight_increment(np.zeros(3), np.array([0.1, -0.2, 0.4]), 0.01) == 0.0

    def test_scalar_arithmetic(self):
        assert log_weight_increment(np.array([1.0]), np.array([0.1]), 0.01) == pytest.approx(0.095)

    def test_vector_arithmetic(self):
        val = log_weight_increment(np.array([1.0, -1.0]), np.array([0.2, 0.1]), 0.1)
        assert val == pytest.approx(0.0)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            log_weight_increment(np.array([np.inf]), np.array([0.1]), 0.01)
        with pytest.raises(ValueError):
            log_weight_increment(np.array([1.0]), np.array([0.1]), 0.0)

    @given(
        h=st.floats(-5, 5),
        dy1=st.floats(-1, 1),
        dy2=st.floats(-1, 1),
        dt=st.floats(1e-4, 0.5),
    )
    @settings(max_examples=200, deadline=None)
    def test_linear_in_dy(self, h, dy1, dy2, dt):
        hv = np.array([h])
        lhs = log_weight_increment(hv, np.array([dy1 + dy2]), dt)
        rhs = (
            log_weight_increment(hv, np.array([dy1]), dt)
            + log_weight_increment(hv, np.array([dy2]), dt)
            + 0.5 * h * h * dt
        )
        assert lhs == pytest.approx(rhs, abs=1e-9)


class TestWeightTrajectory:
    def test_must_start_at_zero(self):
        grid = TimeGrid(0.1, 0.05)
        with pytest.raises(ValueError):
            WeightTrajectory(grid=grid, log_z=np.array([0.1, 0.0, 0.0]), energy_integrand=np.zeros(2))

    def test_telescoping_matches_one_pass(self):
        # exp(sum of increments) equals the single-pass weight to 1e-12 rel
        rng = substream(3)
        h = rng.standard_normal(200)
        dy = rng.standard_normal(200) * 0.1
        dt = 5e-3
        incs = np.array([log_weight_increment(np.array([h[k]]), np.array([dy[k]]), dt) for k in range(200)])
        one_pass = np.exp(np.sum(incs))
        stepwise = 1.0
        for inc in incs:
            stepwise *= np.exp(inc)
        assert stepwise == pytest.approx(one_pass, rel=1e-12)


class TestRevuzYorEstimators:
    def test_closed_form_values(self):
        assert revuz_yor_closed_form(1.0, 1.0) == pytest.approx(0.25 * (math.e**2 - 3.0))
        assert revuz_yor_closed_form(0.5, 2.0) == pytest.approx(0.25 * (math.e**2 - 3.0))
        assert revuz_yor_closed_form(1.0, 0.0) == 0.0

    def test_transformed_energy_hits_closed_form(self):
        grid = TimeGrid(1.0, 1e-3)
        energy, zlogz, gap = revuz_yor_transformed_estimates(1.0, grid, 4000, seed=7)
        closed = revuz_yor_closed_form(1.0, 1.0)
        assert abs(energy.value - closed) < 3 * energy.se
        assert abs(zlogz.value - closed / 2) < 3 * zlogz.se
        assert abs(gap.value) < 3 * gap.se

    def test_base_measure_energy_light_horizon(self):
        # t = 0.5 keeps Z light-tailed enough for the plain estimator
        ens = ensemble_revuz_yor(1.0, GRID_HALF, 8000, seed=11)
        est = transformed_energy_estimate(ens)
        closed = revuz_yor_closed_form(1.0, 0.5)
        assert abs(est.value - closed) < 3 * est.se

    def test_zlogz_identity_on_base_paths(self):
        ens = ensemble_revuz_yor(1.0, GRID_HALF, 8000, seed=13)
        gap = zlogz_identity_gap(ens)
        assert abs(gap.value) < 3 * gap.se
        # the two sides are individually near the closed form too
        closed = revuz_yor_closed_form(1.0, 0.5)
        zz = zlogz_estimate(ens)
        assert abs(zz.value - closed / 2) < 3 * zz.se + 0.02 * closed

    def test_martingale_mean_flat_at_one(self):
        ens = ensemble_revuz_yor(1.0, GRID_HALF, 8000, seed=17)
        checks, traj = martingale_mean_check(ens, [0.25, 0.5])
        for t, est in checks.items():
            assert abs(est.value - 1.0) < 3 * est.se, f"E[Z_{t}] = {est}"
        assert traj[0] == 1.0

    def test_streaming_base_stats_match_ensemble(self):
        ens = ensemble_revuz_yor(1.0, GRID_HALF, 2000, seed=19)
        checks, zstar_stream = revuz_yor_base_stats(1.0, GRID_HALF, 2000, 19, [0.25, 0.5])
        dense, _ = martingale_mean_check(ens, [0.25, 0.5])
        for t in (0.25, 0.5):
            assert checks[t].value == pytest.approx(dense[t].value, rel=1e-12)
        zstar_dense = mean_se(np.exp(ens.log_z).max(axis=1))
        assert zstar_stream.value == pytest.approx(zstar_dense.value, rel=1e-12)

    def test_zstar_bound(self):
        ens = ensemble_revuz_yor(1.0, GRID_HALF, 8000, seed=23)
        lhs, rhs, ok = zstar_bound_check(ens)
        assert ok, f"maximal bound violated: {lhs} vs {rhs}"

    def test_energy_identity(self):
        ens = ensemble_revuz_yor(1.0, GRID_HALF, 8000, seed=29)
        lhs, rhs, ok = energy_identity_check(ens)
        assert ok, f"{lhs} vs {rhs}"


class TestDegenerateAndModelEnsembles:
    def test_h_zero_weight_is_identically_one(self):
        m = linear_model("silent", h_scale=0.0)
        ens = ensemble_from_model(m, TimeGrid(0.2, 0.01), 500, seed=3)
        assert np.all(ens.log_z == 0.0)
        assert transformed_energy_estimate(ens).value == 0.0
        assert zlogz_estimate(ens).value == 0.0
        lhs, rhs, ok = zstar_bound_check(ens)
        assert lhs.value == 1.0 and rhs == pytest.approx(MAXIMAL_CONST) and ok

    def test_jump_ou_martingale_mean(self):
        ens = ensemble_from_model(make_model("jump_ou"), TimeGrid(1.0, 2e-3), 4000, seed=31)
        checks, _ = martingale_mean_check(ens, [0.25, 0.5, 1.0])
        for t, est in checks.items():
            assert abs(est.value - 1.0) < 3 * est.se, f"E[Z_{t}] = {est}"

    def test_independent_h_identity(self):
        ens = ensemble_independent_h(TimeGrid(1.0, 2e-3), 8000, seed=37)
        lhs, rhs, ok = independent_h_identity_check(ens)
        assert ok, f"transformed {lhs} vs plain {rhs}"

    def test_gronwall_trivial_model(self):
        # all coefficients zero from X_0 = 0: E[Z_t U_t] = 1 <= e^{2ct}
        m = linear_model("nil", a_x=0.0, sigma_v=0.0, sigma_bar=0.0, h_scale=0.0)
        object.__setattr__(m, "initial_law", point_mass_initial([0.0]))
        ens = ensemble_from_model(m, TimeGrid(0.5, 0.01), 100, seed=1)
        traj, ses, bound, ok = gronwall_bound_check(ens, rate=1.0)
        assert ok
        np.testing.assert_array_equal(traj, np.ones_like(traj))

    def test_gronwall_jump_ou(self):
        m = make_model("jump_ou")
        ens = ensemble_from_model(m, TimeGrid(1.0, 2e-3), 2000, seed=41)
        traj, ses, bound, ok = gronwall_bound_check(ens, m.gronwall_rate)
        assert ok
        assert bound[-1] == pytest.approx(math.exp(4.0) * ens.u[:, 0].mean())

    def test_ensemble_requires_u_for_gronwall(self):
        ens = ensemble_revuz_yor(1.0, GRID_HALF, 100, seed=2)
        with pytest.raises(ValueError):
            gronwall_bound_check(ens, 1.0)


class TestDeterminism:
    def test_estimators_are_seed_deterministic(self):
        a = diagnostics_report(ensemble_revuz_yor(1.0, GRID_HALF, 1000, seed=5))
        b = diagnostics_report(ensemble_revuz_yor(1.0, GRID_HALF, 1000, seed=5))
        assert a.transformed_energy == b.transformed_energy
        assert a.e_z == b.e_z
        assert a.z_star == b.z_star

    def test_report_serialisation(self):
        rep = diagnostics_report(ensemble_revuz_yor(1.0, TimeGrid(0.1, 0.01), 200, seed=5))
        kv = rep.to_kv()
        assert "transformed_energy" in kv and "n_paths 200" in kv
        rows = rep.to_csv_rows(seed=5)
        assert len(rows) == 5 and rows[0][0] == rep.label


def test_mean_se_requires_two_samples():
    with pytest.raises(ValueError):
        mean_se(np.array([1.0]))


def test_estimate_within_helper():
    est = Estimate(1.0, 0.1)
    assert est.within(1.25) and not est.within(1.5)
    assert est.within(1.5, extra=0.3)
