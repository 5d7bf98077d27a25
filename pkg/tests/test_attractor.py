import math

import numpy as np
import pytest

from lib.gmnse_integration.dynamics import GmnseParams
from lib.gmnse_integration.errors import AttractorError, BlowUpError, FitError, ResolutionMismatchError
from lib.gmnse_integration.simple_solver import SimpleGmnseSolver
from lib.gmnse_integration.spectral_core import SpectralVelocityField, TorusDomain, norms, random_field, single_mode
from lib.models.attractor_model import (
    UNFORCED_FLOOR_FRACTION,
    AttractorModel,
    EnsembleLabel,
    EnsembleState,
    approximate_attractor,
    box_count_points,
    box_counting_dimension,
    check_v_boundedness,
    evolve_ensemble,
    fit_attraction_rate,
    fit_box_counts,
    hausdorff_semidistance,
    projected_coordinates,
    regularity_gap,
    sampling_convergence,
)
from lib.models.estimates_model import absorbing_radii


def random_ensemble(domain, seed, size, h_norm=1.0):
    rng = np.random.default_rng(seed)
    return EnsembleState(tuple(random_field(domain, rng, h_norm) for _ in range(size)))


@pytest.fixture
def zero_set(domain2d):
    return EnsembleState((SpectralVelocityField.zeros(domain2d),), EnsembleLabel.EXP_ATTRACTOR_CANDIDATE)


@pytest.fixture
def fast_decay(domain2d):
    """Unforced, nu=2, dt=2e-3"""
    return GmnseParams.unforced(domain2d, nu=2.0, n_cap=10.0, dt=2e-3)


class TestEnsembleState:
    def test_empty_rejected(self):
        with pytest.raises(AttractorError, match="at least one"):
            EnsembleState(())

    def test_mixed_domains_rejected(self, field2d):
        other = SpectralVelocityField.zeros(TorusDomain(8, 2))
        with pytest.raises(ResolutionMismatchError):
            EnsembleState((field2d, other))

    def test_label_from_string(self, field2d):
        assert EnsembleState((field2d,), "attractor-approx").label is EnsembleLabel.ATTRACTOR_APPROX

    def test_embedding_norms(self, domain2d):
        e = random_ensemble(domain2d, 0, 3, h_norm=2.0)
        for row, member in zip(e.embedding("H"), e):
            assert np.linalg.norm(row) == pytest.approx(norms(member).h_norm)
        for row, member in zip(e.embedding("V"), e):
            assert np.linalg.norm(row) == pytest.approx(norms(member).v_norm)

    def test_unknown_norm(self, field2d):
        with pytest.raises(ValueError, match="norm"):
            EnsembleState((field2d,)).embedding("L4")


class TestHausdorffSemidistance:
    def test_self_distance_is_zero(self, domain2d):
        e = random_ensemble(domain2d, 1, 4)
        assert hausdorff_semidistance(e, e) == 0.0

    def test_subset_and_asymmetry(self, domain2d):
        e = random_ensemble(domain2d, 2, 4)
        part = e.subset([0, 2])
        assert hausdorff_semidistance(part, e) == 0.0
        assert hausdorff_semidistance(e, part) > 0.0

    @pytest.mark.parametrize("norm,index", [("H", 0), ("V", 1)])
    def test_singletons(self, domain2d, norm, index):
        a, b = random_ensemble(domain2d, 3, 2)
        expected = norms(a - b)[index]
        distance = hausdorff_semidistance(EnsembleState((a,)), EnsembleState((b,)), norm)
        assert distance == pytest.approx(expected, rel=1e-12)

    def test_triangle_inequality(self, domain2d):
        a, b, c = (random_ensemble(domain2d, seed, 3) for seed in (4, 5, 6))
        assert hausdorff_semidistance(a, c) <= hausdorff_semidistance(a, b) + hausdorff_semidistance(b, c) + 1e-12

    def test_domains_must_match(self, field2d):
        other = EnsembleState((SpectralVelocityField.zeros(TorusDomain(8, 2)),))
        with pytest.raises(ResolutionMismatchError):
            hausdorff_semidistance(EnsembleState((field2d,)), other)

    def test_regularity_gap_ordering(self, domain2d):
        a, b = random_ensemble(domain2d, 7, 3), random_ensemble(domain2d, 8, 2)
        dist_h, scaled_v = regularity_gap(a, b)
        assert dist_h <= scaled_v + 1e-12


class TestEvolveEnsemble:
    def test_zero_time_is_identity(self, forced2d, domain2d):
        e = random_ensemble(domain2d, 9, 3)
        out = evolve_ensemble(e, forced2d, 0.0)
        assert all(np.array_equal(a.coeffs, b.coeffs) for a, b in zip(e, out))

    def test_members_evolve_independently_in_order(self, forced2d, domain2d):
        e = random_ensemble(domain2d, 10, 3)
        out = evolve_ensemble(e, forced2d, 0.05, threads=2)
        solver = SimpleGmnseSolver(forced2d)
        assert len(out) == len(e)
        for member, evolved in zip(e, out):
            assert np.array_equal(solver.advance(member, 0.05).coeffs, evolved.coeffs)

    def test_blow_up_names_member(self, forced2d, domain2d):
        bad = np.zeros(domain2d.coeff_shape, dtype=complex)
        bad[0, 1, 1] = np.nan
        e = EnsembleState((SpectralVelocityField.zeros(domain2d), SpectralVelocityField(domain2d, bad)))
        with pytest.raises(BlowUpError) as info:
            evolve_ensemble(e, forced2d, 0.01)
        assert info.value.member == 1

    @pytest.mark.slow
    def test_long_run_enters_absorbing_ball(self, forced2d, domain2d):
        radii = absorbing_radii(forced2d)
        e = random_ensemble(domain2d, 11, 8, h_norm=math.sqrt(20 * radii.rho_h_sq))
        out = evolve_ensemble(e, forced2d.with_dt(2e-3), 8.0, threads=4)
        assert all(norms(u).h_norm ** 2 <= radii.h_ball_sq(0.05) for u in out)


class TestApproximateAttractor:
    def test_unforced_collapses_to_zero(self, fast_decay, domain2d):
        seed_set = random_ensemble(domain2d, 12, 2)
        ensemble = approximate_attractor(seed_set, fast_decay, 5.0, 0.2, 3, radius_floor=1e-6, record_every=10)
        assert ensemble.label is EnsembleLabel.ATTRACTOR_APPROX
        assert len(ensemble) == 6
        assert all(norms(u).h_norm <= 1e-3 for u in ensemble)
        assert ensemble.metadata["source_member"] == [0, 0, 0, 1, 1, 1]
        assert ensemble.metadata["snapshot_times"][:3] == pytest.approx([5.0, 5.1, 5.2])

    def test_short_transient_is_refused(self, fast_decay, domain2d):
        seed_set = random_ensemble(domain2d, 13, 2)
        with pytest.raises(AttractorError, match="extend t_transient"):
            approximate_attractor(seed_set, fast_decay, 0.1, 0.1, 2, radius_floor=1e-6)

    def test_forced_snapshots_are_v_bounded(self, forced2d, domain2d):
        model = AttractorModel(forced2d, threads=2)
        seed_set = model.initial_set(seed=0, size=2, h_norm=1.0)
        ensemble = model.approximate(seed_set, 1.0, 0.5, 4, record_every=10)
        report = check_v_boundedness(ensemble, absorbing_radii(forced2d))
        assert report.violation_fraction == 0.0
        forward, backward = sampling_convergence(ensemble)
        assert backward == 0.0
        assert forward >= 0.0
        assert model.invariance_gap(ensemble, 0.1) < max(norms(u).h_norm for u in ensemble)

    def test_unforced_default_floor(self, unforced2d, domain2d):
        seed_set = random_ensemble(domain2d, 19, 2)
        ensemble = approximate_attractor(seed_set, unforced2d, 5.0, 0.2, 3, record_every=10)
        assert ensemble.metadata["radius_floor"] == pytest.approx(UNFORCED_FLOOR_FRACTION)
        assert all(norms(u).h_norm ** 2 <= UNFORCED_FLOOR_FRACTION for u in ensemble)
        floor = ensemble.metadata["v_radius_floor"]
        report = check_v_boundedness(ensemble, absorbing_radii(unforced2d), floor=floor)
        assert report.violation_fraction == 0.0

    def test_zero_ball_names_radius_floor(self, forced2d, unforced2d, domain2d):
        seed_set = random_ensemble(domain2d, 20, 1)
        with pytest.raises(AttractorError, match="radius_floor"):
            approximate_attractor(seed_set, forced2d, 1.0, 0.5, 4, radii=absorbing_radii(unforced2d))

    def test_sampling_window_too_short(self, unforced2d, domain2d):
        seed_set = random_ensemble(domain2d, 21, 1)
        with pytest.raises(AttractorError, match="extend t_sample"):
            approximate_attractor(seed_set, unforced2d, 6.0, 0.005, 16, radius_floor=1e-2)

    def test_doubling_snapshots_refines_sampling(self, forced2d):
        model = AttractorModel(forced2d)
        seed_set = model.initial_set(seed=1, size=2, h_norm=1.0)
        coarse, medium, fine = (model.approximate(seed_set, 1.0, 0.4, n, record_every=10) for n in (3, 5, 9))
        assert len(fine) == 18
        assert hausdorff_semidistance(coarse, medium) == 0.0
        assert hausdorff_semidistance(medium, fine) == 0.0
        assert 0.0 < hausdorff_semidistance(fine, medium) < hausdorff_semidistance(medium, coarse)

    @pytest.mark.slow
    def test_dimension_stable_across_projections(self, forced2d):
        model = AttractorModel(forced2d, threads=4)
        seed_set = model.initial_set(seed=2, size=8, h_norm=1.0)
        ensemble = model.approximate(seed_set, 1.0, 2.0, 16, record_every=10)
        assert len(ensemble) == 128
        low, high = model.dimension(ensemble, [6, 12])
        assert math.isfinite(low.slope) and math.isfinite(high.slope)
        assert abs(low.slope - high.slope) <= 0.5


class TestFitAttractionRate:
    def test_already_converged(self, fast_decay, zero_set):
        fit = fit_attraction_rate(zero_set, zero_set, fast_decay, [0.1, 0.2, 0.3])
        assert fit.converged
        assert fit.rate == math.inf
        assert math.isnan(fit.goodness)

    def test_unforced_rate(self, unforced2d, domain2d, zero_set):
        b = random_ensemble(domain2d, 14, 3)
        times = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0]
        fit = fit_attraction_rate(b, zero_set, unforced2d, times, threads=2)
        reference = unforced2d.nu * unforced2d.lambda1
        assert fit.rate >= 0.8 * reference
        assert fit.goodness >= 0.95
        assert fit.accepted
        assert [t for t, _ in fit.samples] == times

    def test_distances_match_max_norm(self, unforced2d, domain2d, zero_set):
        b = random_ensemble(domain2d, 15, 2)
        fit = fit_attraction_rate(b, zero_set, unforced2d, [0.0, 0.1, 0.2])
        assert fit.samples[0][1] == pytest.approx(max(norms(u).h_norm for u in b))

    def test_too_few_samples(self, unforced2d, domain2d, zero_set):
        with pytest.raises(FitError, match="at least 3"):
            fit_attraction_rate(random_ensemble(domain2d, 16, 1), zero_set, unforced2d, [0.1, 0.2])

    def test_times_must_increase(self, unforced2d, zero_set):
        with pytest.raises(ValueError, match="increasing"):
            fit_attraction_rate(zero_set, zero_set, unforced2d, [0.2, 0.1, 0.3])


class TestBoxCounting:
    def test_line_segment(self):
        points = np.zeros((1024, 4))
        points[:, 2] = np.linspace(0.0, 1.0, 1024, endpoint=False)
        estimate = fit_box_counts(points)
        assert estimate.slope == pytest.approx(1.0, abs=0.2)

    def test_square_patch(self):
        axis = np.linspace(0.0, 1.0, 64, endpoint=False)
        x, y = np.meshgrid(axis, axis)
        points = np.column_stack([x.ravel(), y.ravel(), np.zeros(x.size)])
        estimate = fit_box_counts(points)
        assert estimate.slope == pytest.approx(2.0, abs=0.3)

    def test_counts_monotone(self, rng):
        points = rng.uniform(size=(500, 3))
        scales = [0.5, 0.25, 0.125, 0.0625]
        counts = box_count_points(points, scales)
        assert np.all(np.diff(counts) >= 0)

    def test_rotation_invariance(self, rng):
        t = rng.uniform(size=2000)
        line = np.column_stack([t, np.zeros_like(t)])
        angle = 0.7
        rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        scales = 0.5 ** np.arange(1, 7)
        flat, turned = fit_box_counts(line, scales), fit_box_counts(line @ rotation.T, scales)
        assert flat.slope == pytest.approx(turned.slope, abs=0.3)

    def test_identical_members_give_zero(self, field2d, caplog):
        e = EnsembleState((field2d,) * 5)
        with caplog.at_level("WARNING", logger="gmnse"):
            estimate = box_counting_dimension(e, projection_dim=6)
        assert estimate.slope == 0.0
        assert "fewer than 100" in caplog.text

    def test_projection_keeps_norm_when_complete(self, domain2d):
        e = random_ensemble(domain2d, 17, 3)
        coords = projected_coordinates(e, projection_dim=10_000)
        for row, member in zip(coords, e):
            assert np.linalg.norm(row) == pytest.approx(norms(member).h_norm)

    def test_projection_picks_energetic_coordinates(self, domain2d):
        e = random_ensemble(domain2d, 18, 4)
        coords = projected_coordinates(e, projection_dim=6)
        assert coords.shape == (4, 6)
        energy = np.mean(coords ** 2, axis=0)
        assert np.all(np.diff(energy) <= 1e-15)

    def test_projection_dim_counts_real_coordinates(self, domain2d):
        mode = single_mode(domain2d, (1, 0), (0, 1 + 1j))
        e = EnsembleState((mode, mode * 2.0, mode * 3.0))
        coords = projected_coordinates(e, projection_dim=2)
        assert coords.shape == (3, 2)
        for row, member in zip(coords, e):
            assert np.linalg.norm(row) == pytest.approx(norms(member).h_norm)
        assert np.count_nonzero(projected_coordinates(e, projection_dim=1)[0]) == 1

    def test_rejects_bad_scale(self):
        with pytest.raises(ValueError, match="positive"):
            box_count_points(np.zeros((3, 2)), [0.0])
