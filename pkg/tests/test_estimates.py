import json
import math

import numpy as np
import pytest

from lib.gmnse_integration.dynamics import GmnseParams
from lib.gmnse_integration.errors import EstimateError
from lib.gmnse_integration.simple_solver import SimpleGmnseSolver, evolve
from lib.gmnse_integration.spectral_core import SpectralVelocityField, TorusDomain, norms, random_field
from lib.models.estimates_model import (
    EstimatesModel,
    MonitorReport,
    absorbing_radii,
    fit_enstrophy_constant,
    fit_minimal_constant,
    monitor_absorbing,
    monitor_difference_enstrophy,
    monitor_energy,
    monitor_enstrophy,
    monitor_enstrophy_integral,
    monitor_gronwall,
    monitor_lipschitz,
    monitor_smoothing,
    monitor_stokes_integral,
    monitor_time_derivative,
    monitor_time_regularity,
    verify_modulation_factor,
)

FIRST_SHELL_2D_FORCING_SQ = (2 * np.pi) ** 2


def embed(u, domain):
    """Same coefficients on a finer grid of the same box"""
    coeffs = np.zeros(domain.coeff_shape, dtype=complex)
    n = u.domain.integer_wavenumbers
    for idx in zip(*np.nonzero(np.any(u.coeffs != 0, axis=0))):
        wavevector = [int(n[(axis,) + idx]) for axis in range(u.domain.dimension)]
        coeffs[(slice(None),) + domain.index_of(wavevector)] = u.coeffs[(slice(None),) + idx]
    return SpectralVelocityField(domain, coeffs)


@pytest.fixture(scope="module")
def burned():
    """Forced 2D state well inside the absorbing balls, with its params"""
    from tests.conftest import small_config

    p = small_config().build_params()
    u0 = random_field(p.domain, np.random.default_rng(0), h_norm=1.0)
    return p, SimpleGmnseSolver(p).advance(u0, 2.0)


class TestAbsorbingRadii:
    def test_formulas(self, forced2d):
        radii = absorbing_radii(forced2d, fitted_c=0.5)
        f_sq = FIRST_SHELL_2D_FORCING_SQ
        assert forced2d.forcing_norm ** 2 == pytest.approx(f_sq)
        assert radii.rho_h_sq == pytest.approx(2 * f_sq)
        assert radii.enstrophy_int_bound == pytest.approx(3 * f_sq)
        assert radii.rho_v_sq_formula == pytest.approx(2 * f_sq + (0.5 * 1e4 + 1) * 3 * f_sq)
        assert radii.fitted_c == 0.5

    def test_uniform_radius_overflows_to_inf(self, forced2d):
        assert absorbing_radii(forced2d, fitted_c=1.0).rho_v_sq_uniform == math.inf
        finite = absorbing_radii(forced2d, fitted_c=0.0).rho_v_sq_uniform
        assert finite == pytest.approx(5 * FIRST_SHELL_2D_FORCING_SQ)

    def test_unforced_radii_vanish(self, unforced2d):
        radii = absorbing_radii(unforced2d, fitted_c=2.0)
        assert radii.rho_h_sq == radii.rho_v_sq_formula == radii.rho_v_sq_uniform == 0.0

    def test_negative_constant_rejected(self, forced2d):
        with pytest.raises(ValueError):
            absorbing_radii(forced2d, fitted_c=-1.0)

    def test_entry_bound(self, forced2d):
        radii = absorbing_radii(forced2d)
        rho = radii.rho_h_sq
        assert radii.gronwall_entry_bound(0.1 * rho) == 0.0
        assert radii.gronwall_entry_bound(100 * rho) == pytest.approx(math.log(200.0))
        assert radii.gronwall_entry_bound(100 * rho, ball_sq=0.4 * rho) == math.inf

    def test_rho3_grows_with_span(self, forced2d):
        radii = absorbing_radii(forced2d, fitted_c=1e-3)
        assert 0 < radii.rho3(0.0) < radii.rho3(0.5) < radii.rho3(1.0)

    def test_rho3_uses_derivative_constant(self, forced2d):
        radii = absorbing_radii(forced2d, fitted_c=1e-3)
        assert radii.rho3(0.5, derivative_c=1e-3) == radii.rho3(0.5)
        assert radii.rho3(0.5, derivative_c=1.0) > radii.rho3(0.5)


class TestFitMinimalConstant:
    def test_examples(self):
        assert fit_minimal_constant([1.0, 2.0, -1.0], [1.0, 1.0, 1.0]) == 2.0
        assert fit_minimal_constant([-1.0, -2.0], [1.0, 3.0]) == 0.0
        assert fit_minimal_constant([5.0], [0.0]) == 0.0
        assert fit_minimal_constant([3.0, 1.0], [2.0, 4.0]) == 1.5

    def test_monotone_in_data(self, rng):
        excess, weight = rng.normal(size=50), rng.uniform(0.1, 2.0, size=50)
        subset = fit_minimal_constant(excess[:25], weight[:25])
        assert subset <= fit_minimal_constant(excess, weight)


class TestMonitorReport:
    def test_tolerance_rule(self):
        report = MonitorReport.build("x", [0, 1, 2], [0.0, 0.5, 2.0], [100.0, 100.0, 100.0])
        assert report.violation_fraction == pytest.approx(1 / 3)

    def test_length_mismatch(self):
        with pytest.raises(EstimateError, match="lengths"):
            MonitorReport.build("x", [0, 1], [0.0, 1.0], [1.0])

    def test_to_dict_is_json(self, forced2d, field2d):
        report = monitor_energy(evolve(field2d, forced2d, 0.02), forced2d)
        payload = json.loads(json.dumps(report.to_dict()))
        assert payload["inequality_id"] == "energy"
        assert payload["tolerance"] == {"absolute": 1e-8, "relative": 1e-2}


class TestEnergyMonitors:
    def test_energy_holds_on_forced_run(self, forced2d, field2d):
        record = evolve(field2d, forced2d, 2.0, record_every=5)
        report = monitor_energy(record, forced2d)
        assert report.violation_fraction == 0.0
        assert report.fitted_c is None

    def test_unforced_decay(self, unforced2d, domain2d):
        u0 = random_field(domain2d, np.random.default_rng(4), h_norm=3.0)
        record = evolve(u0, unforced2d, 5.0, record_every=50)
        report = monitor_gronwall(record, unforced2d, rel_tol=0.05)
        assert report.violation_fraction == 0.0
        assert monitor_energy(record, unforced2d).violation_fraction == 0.0

    def test_needs_two_samples(self, forced2d, field2d):
        with pytest.raises(EstimateError, match="at least 2"):
            monitor_energy(evolve(field2d, forced2d, 0.0), forced2d)

    def test_violations_do_not_grow_when_dt_halves(self, forced2d, domain2d):
        u0 = random_field(domain2d, np.random.default_rng(8), h_norm=10.0)
        fractions = []
        for dt in (4e-3, 2e-3, 1e-3):
            p = forced2d.with_dt(dt)
            fractions.append(monitor_energy(evolve(u0, p, 1.0), p).violation_fraction)
        assert fractions == sorted(fractions, reverse=True)
        assert fractions[-1] == 0.0


class TestEnstrophyMonitors:
    def test_fitted_constant_removes_violations(self, forced2d, field2d):
        record = evolve(field2d, forced2d, 1.0, record_every=5)
        report = monitor_enstrophy(record, forced2d)
        assert report.fitted_c >= 0.0
        assert report.violation_fraction == 0.0

    def test_family_constant_is_the_largest(self, forced2d, domain2d):
        records = [
            evolve(random_field(domain2d, np.random.default_rng(s), h_norm=5.0), forced2d, 0.5, record_every=5)
            for s in range(3)
        ]
        family = fit_enstrophy_constant(records, forced2d)
        assert family == max(monitor_enstrophy(r, forced2d).fitted_c for r in records)
        assert fit_enstrophy_constant([], forced2d) == 0.0

    @pytest.mark.slow
    def test_constant_stable_under_resolution_doubling(self):
        coarse = TorusDomain(8, 3)
        u0 = random_field(coarse, np.random.default_rng(21), h_norm=5.0)
        constants = []
        for domain in (coarse, TorusDomain(16, 3)):
            p = GmnseParams.unforced(domain, nu=0.1, n_cap=1e3, dt=1e-3)
            constants.append(monitor_enstrophy(evolve(embed(u0, domain), p, 0.2), p).fitted_c)
        assert constants[0] > 0.0
        assert constants[0] == pytest.approx(constants[1], rel=0.5)

    def test_enstrophy_integral_after_entry(self, burned):
        p, state = burned
        record = evolve(state, p, 2.0, record_every=5)
        report = monitor_enstrophy_integral(record, absorbing_radii(p))
        assert report.violation_fraction == 0.0
        assert report.times[-1] <= 1.0 + 1e-9

    def test_enstrophy_integral_needs_a_window(self, burned):
        p, state = burned
        with pytest.raises(EstimateError, match="window"):
            monitor_enstrophy_integral(evolve(state, p, 0.5), absorbing_radii(p))

    def test_stokes_integral(self, burned):
        p, state = burned
        record = evolve(state, p, 1.0, record_every=5)
        assert monitor_stokes_integral(record, p, absorbing_radii(p)).violation_fraction == 0.0


class TestAbsorbing:
    def test_large_data_enter_and_remain(self, forced2d, domain2d):
        radii = absorbing_radii(forced2d)
        solver = SimpleGmnseSolver(forced2d.with_dt(2e-3))
        for seed in (1, 2):
            h0 = math.sqrt(100 * radii.rho_h_sq)
            u0 = random_field(domain2d, np.random.default_rng(seed), h_norm=h0)
            report = monitor_absorbing(solver.evolve(u0, 8.0, record_every=5), radii, slack=0.05)
            details = report.details
            assert details["h_entry_time"] is not None
            assert details["h_remains_inside"]
            assert details["h_entry_time"] <= details["entry_time_bound"]
            assert report.violation_fraction == 0.0

    @pytest.mark.slow
    def test_eight_large_data_enter_and_remain(self, forced2d, domain2d):
        radii = absorbing_radii(forced2d)
        solver = SimpleGmnseSolver(forced2d.with_dt(2e-3))
        for seed, factor in enumerate(np.geomspace(2.0, 100.0, 8)):
            u0 = random_field(domain2d, np.random.default_rng(30 + seed), h_norm=math.sqrt(factor * radii.rho_h_sq))
            details = monitor_absorbing(solver.evolve(u0, 8.0, record_every=5), radii, slack=0.05).details
            assert details["h_entry_time"] is not None
            assert details["h_remains_inside"]
            assert details["h_entry_time"] <= details["entry_time_bound"]

    def test_never_entering(self, unforced2d, field2d):
        report = monitor_absorbing(evolve(field2d, unforced2d, 0.1), absorbing_radii(unforced2d))
        assert report.details["h_entry_time"] is None
        assert report.violation_fraction == 1.0

    def test_floor_replaces_zero_ball(self, unforced2d, field2d):
        report = monitor_absorbing(evolve(field2d, unforced2d, 0.1), absorbing_radii(unforced2d), floor=4.0)
        assert report.details["h_entry_time"] == 0.0


class TestPairMonitors:
    def test_identical_data(self, burned):
        p, state = burned
        report = monitor_lipschitz(state, state, p, 0.2)
        assert report.fitted_c == 0.0
        with pytest.raises(EstimateError, match="identical"):
            monitor_smoothing(state, state, p, 0.2)

    @pytest.mark.slow
    def test_constants_agree_across_perturbation_sizes(self, burned):
        p, state = burned
        direction = random_field(p.domain, np.random.default_rng(99), h_norm=1.0)
        lipschitz, smoothing = [], []
        for size in (1e-2, 1e-4):
            other = state + direction * size
            lipschitz.append(monitor_lipschitz(state, other, p, 1.0, record_every=5).fitted_c)
            smoothing.append(monitor_smoothing(state, other, p, 1.0, record_every=5))
        assert lipschitz[0] == pytest.approx(lipschitz[1], rel=0.2, abs=1e-12)
        for report in smoothing:
            assert math.isfinite(report.details["rho1"]) and math.isfinite(report.details["rho2"])
            assert report.details["v_norm_finite"]
        rho1 = [r.details["rho1"] for r in smoothing]
        rho2 = [r.details["rho2"] for r in smoothing]
        assert rho1[0] == pytest.approx(rho1[1], rel=0.5)
        assert rho2[0] == pytest.approx(rho2[1], rel=0.5, abs=1e-12)

    def test_smoothing_needs_samples_past_t_min(self, burned):
        p, state = burned
        other = state + random_field(p.domain, np.random.default_rng(5), h_norm=1e-3)
        with pytest.raises(EstimateError, match="fewer than 2"):
            monitor_smoothing(state, other, p, 0.05, t_min=0.1)

    def test_difference_enstrophy_fit(self, burned):
        p, state = burned
        other = state + random_field(p.domain, np.random.default_rng(6), h_norm=1e-3)
        report = monitor_difference_enstrophy(state, other, p, 0.2)
        assert report.fitted_c >= 0.0
        assert report.violation_fraction == 0.0


class TestTimeMonitors:
    def test_time_derivative(self, burned):
        p, state = burned
        record = evolve(state, p, 0.5, record_every=10, checkpoint_every=50)
        report = monitor_time_derivative(record, p)
        assert len(report.times) == 11
        assert report.violation_fraction == 0.0

    def test_time_derivative_needs_checkpoints(self, burned):
        p, state = burned
        with pytest.raises(EstimateError, match="checkpoints"):
            monitor_time_derivative(evolve(state, p, 0.1), p)

    def test_time_regularity_pairs(self, burned):
        p, state = burned
        record = evolve(state, p, 0.4, record_every=10, checkpoint_every=100)
        report = monitor_time_regularity(record, p, absorbing_radii(p))
        assert report.details["pairs"] == 10
        assert np.all(np.diff(report.times) >= 0)
        assert math.isfinite(report.fitted_c) and report.fitted_c > 0

    def test_time_regularity_reports_both_constants(self, burned):
        p, state = burned
        record = evolve(state, p, 0.4, record_every=10, checkpoint_every=100)
        radii = absorbing_radii(p)
        derivative = monitor_time_derivative(record, p).fitted_c
        report = monitor_time_regularity(record, p, radii, derivative)
        assert report.details["derivative_constant"] == derivative
        assert report.details["enstrophy_constant"] == radii.fitted_c
        expected = [radii.rho3(span, derivative) for span in report.times]
        np.testing.assert_allclose(report.rhs_series, expected, rtol=1e-12)

    def test_time_regularity_stable_under_dt_halving(self, burned):
        p, state = burned
        estimates = []
        for refinement in (1, 2):
            fine = p.with_dt(p.dt / refinement)
            record = evolve(state, fine, 0.4, record_every=10, checkpoint_every=100 * refinement)
            estimates.append(monitor_time_regularity(record, fine, absorbing_radii(fine)).fitted_c)
        assert estimates[0] == pytest.approx(estimates[1], rel=0.2)


class TestModulationFactorChecks:
    def test_both_properties_hold(self):
        bound, lipschitz = verify_modulation_factor(n_samples=200_000, seed=3)
        assert bound.relative_tolerance == np.finfo(float).eps
        assert bound.violation_fraction == 0.0
        assert lipschitz.violation_fraction == 0.0
        assert bound.details["min_product"] >= 0.0

    @pytest.mark.slow
    def test_million_samples(self):
        bound, lipschitz = verify_modulation_factor()
        assert bound.residual_series.size == 1_000_000
        assert bound.violation_fraction == 0.0
        assert lipschitz.violation_fraction == 0.0


class TestBurnIn:
    def test_certifies_forced_run(self, forced2d, field2d):
        model = EstimatesModel(forced2d)
        state, record, report = model.burn_in(field2d, 10.0, model.radii(), record_every=10)
        assert report.details["certified"]
        assert record.times[-1] <= 10.0 + 1e-9
        assert norms(state).h_norm ** 2 <= model.radii().h_ball_sq(0.05)

    def test_exhaustion_raises(self, unforced2d, field2d):
        model = EstimatesModel(unforced2d)
        with pytest.raises(EstimateError, match="burn_in_max"):
            model.burn_in(field2d, 1.0, model.radii(), record_every=10)
