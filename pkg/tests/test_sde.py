"""
Unit Tests for the SDE Layer (exit engine, seeding, Gaussian samplers, tracking)
"""

import pytest
import numpy as np
from pathlib import Path

# Add project root to path
import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.model.domain import BoxDomain
from src.model.system import linear_system, shear_system
from src.predict.exponents import limit_covariance
from src.sde.diagnostics import flow_tracking_diagnostic
from src.sde.gaussian_limit import sample_duhamel_exits, simulate_gaussian_limit
from src.sde.rng import (
    DUHAMEL_STREAM, EXIT_STREAM, GAUSSIAN_STREAM, TRACKING_STREAM,
    TrajectoryNoise, block_generator, block_ranges, ladder_stream, trajectory_generator,
)
from src.sde.simulator import ExitSimulator, SimConfig, simulate_exits
from src.utils.errors import ValidationError

MU_PLANAR = np.sqrt(2.0 / np.pi)


@pytest.fixture
def planar():
    return linear_system([2.0, 1.0])


@pytest.fixture
def unit_box():
    return BoxDomain(2, 1.0)


class TestSimConfig:
    """Defaults and validation of a run."""

    def test_defaults(self, planar):
        sim = SimConfig.default_for(planar, 0.1, 10, 1)
        assert sim.dt == pytest.approx(1e-3)
        assert sim.max_time == pytest.approx(8.0 * np.log(10.0))
        sim.validate(planar)

    def test_config_overrides_defaults(self, planar):
        sim = SimConfig.default_for(planar, 0.1, 10, 1, {'simulation': {'max_dt': 5e-4}})
        assert sim.dt == pytest.approx(5e-4)
        assert SimConfig.default_for(planar, 0.1, 10, 1, dt=2e-4).dt == 2e-4

    def test_stability_guard(self, planar):
        with pytest.raises(ValidationError):
            SimConfig(epsilon=0.1, dt=0.1, max_time=50.0, seed=0, n_trajectories=1).validate(planar)

    def test_horizon_floor(self, planar):
        with pytest.raises(ValidationError):
            SimConfig(epsilon=0.1, dt=1e-3, max_time=1.0, seed=0, n_trajectories=1).validate(planar)

    def test_negative_seed(self, planar):
        with pytest.raises(ValidationError):
            SimConfig(epsilon=0.1, dt=1e-3, max_time=50.0, seed=-1, n_trajectories=1).validate(planar)


class TestExitSimulator:
    """Euler-Maruyama exits."""

    def test_thread_count_does_not_change_results(self, planar, unit_box):
        simulator = ExitSimulator(planar, unit_box, {'simulation': {'block_size': 64}})
        sim = SimConfig.default_for(planar, 0.2, 300, 7)
        one = simulator.simulate_exits(sim, threads=1)
        many = simulator.simulate_exits(sim, threads=4)
        assert np.array_equal(one.trajectory_ids, many.trajectory_ids)
        assert np.array_equal(one.times, many.times)
        assert np.array_equal(one.locations, many.locations)
        assert np.array_equal(one.face_axis, many.face_axis)

    def test_block_size_does_not_change_results(self, planar, unit_box):
        """Noise is keyed per trajectory, so the work split is invisible."""
        sim = SimConfig.default_for(planar, 0.2, 200, 7)
        small = ExitSimulator(planar, unit_box, {'simulation': {'block_size': 64}}).simulate_exits(sim)
        large = ExitSimulator(planar, unit_box, {'simulation': {'block_size': 8192}}).simulate_exits(sim)
        assert np.array_equal(small.trajectory_ids, large.trajectory_ids)
        assert np.array_equal(small.times, large.times)
        assert np.array_equal(small.locations, large.locations)

    def test_replay_single_trajectory(self, planar, unit_box):
        simulator = ExitSimulator(planar, unit_box, {'simulation': {'block_size': 32}})
        sim = SimConfig.default_for(planar, 0.2, 150, 7)
        batch = simulator.simulate_exits(sim)
        row = int(np.nonzero(batch.trajectory_ids == 100)[0][0])
        again = simulator.replay(sim, 100)
        assert again.trajectory_ids.tolist() == [100]
        assert again.times[0] == batch.times[row]
        assert np.array_equal(again.locations[0], batch.locations[row])
        assert again.paths[100][1][-1].tolist() == batch.locations[row].tolist()
        with pytest.raises(ValidationError):
            simulator.replay(sim, 150)

    def test_exit_times_never_pass_the_horizon(self, planar, unit_box):
        """Euler from (0.5, 0.1) with dt = 1e-3 crosses x₁ = 1 during step 347."""
        start = np.array([[0.5, 0.1]])
        short = SimConfig(epsilon=0.0, dt=1e-3, max_time=0.3462, seed=0, n_trajectories=1)
        batch = simulate_exits(planar, unit_box, short, initial_points=start)
        assert batch.n_exited == 0 and batch.nonexit_ids.tolist() == [0]

        longer = SimConfig(epsilon=0.0, dt=1e-3, max_time=0.3475, seed=0, n_trajectories=1)
        batch = simulate_exits(planar, unit_box, longer, initial_points=start)
        assert batch.n_exited == 1
        assert 0.346 < batch.times[0] <= 0.3475

    def test_halving_dt_keeps_face_probabilities(self, planar, unit_box):
        n = 20000
        fractions, errors = [], []
        for dt in (1e-3, 5e-4):
            sim = SimConfig.default_for(planar, 0.3, n, 21, dt=dt)
            batch = simulate_exits(planar, unit_box, sim)
            assert batch.n_nonexit == 0
            p = np.count_nonzero(batch.face_axis == 2) / n
            fractions.append(p)
            errors.append(np.sqrt(p * (1.0 - p) / n))
        assert abs(fractions[0] - fractions[1]) < 2.0 * (errors[0] + errors[1])

    def test_seed_controls_noise(self, planar, unit_box):
        sim = SimConfig.default_for(planar, 0.2, 50, 7)
        a = simulate_exits(planar, unit_box, sim)
        b = simulate_exits(planar, unit_box, sim)
        c = simulate_exits(planar, unit_box, SimConfig.default_for(planar, 0.2, 50, 8))
        assert np.array_equal(a.locations, b.locations)
        assert not np.array_equal(a.locations, c.locations)

    def test_exits_lie_on_the_boundary(self, planar, unit_box):
        batch = simulate_exits(planar, unit_box, SimConfig.default_for(planar, 0.2, 200, 3))
        assert batch.n_exited + batch.n_nonexit == 200
        assert np.max(np.abs(unit_box.level(batch.locations))) < 1e-12
        rows = np.arange(batch.n_exited)
        on_face = batch.locations[rows, batch.face_axis - 1]
        np.testing.assert_allclose(on_face, batch.face_sign.astype(float))

    def test_one_dimensional_symmetry(self):
        """d = 1: the two endpoints are hit with probability 1/2 each."""
        system = linear_system([1.0])
        batch = simulate_exits(system, BoxDomain(1, 1.0), SimConfig.default_for(system, 0.1, 4000, 11))
        assert batch.n_nonexit == 0
        plus = np.count_nonzero(batch.face_sign == 1) / batch.n_exited
        assert abs(plus - 0.5) < 4 * np.sqrt(0.25 / batch.n_exited)

    def test_noiseless_origin_never_exits(self, planar, unit_box):
        sim = SimConfig(epsilon=0.0, dt=1e-3, max_time=0.5, seed=0, n_trajectories=5)
        batch = simulate_exits(planar, unit_box, sim)
        assert batch.n_exited == 0
        assert batch.nonexit_fraction == 1.0
        assert batch.nonexit_ids.tolist() == [0, 1, 2, 3, 4]

    def test_noiseless_path_follows_flow(self, planar, unit_box):
        sim = SimConfig(epsilon=0.0, dt=1e-4, max_time=2.0, seed=0, n_trajectories=1, record_paths=True)
        batch = simulate_exits(planar, unit_box, sim, initial_points=np.array([[0.5, 0.1]]))
        assert batch.times[0] == pytest.approx(np.log(2.0) / 2.0, abs=1e-3)
        np.testing.assert_allclose(batch.locations[0], [1.0, 0.1 * np.sqrt(2.0)], atol=1e-3)
        times, points = batch.paths[0]
        assert times[-1] == batch.times[0]
        np.testing.assert_allclose(points[0], [0.5, 0.1])
        np.testing.assert_allclose(points[-1], batch.locations[0])

    def test_initial_point_shape(self, planar, unit_box):
        sim = SimConfig.default_for(planar, 0.1, 3, 0)
        with pytest.raises(ValidationError):
            simulate_exits(planar, unit_box, sim, initial_points=np.zeros((2, 2)))

    def test_start_outside_domain(self, unit_box):
        system = linear_system([2.0, 1.0], xi0=[20.0, 0.0])
        with pytest.raises(ValidationError):
            simulate_exits(system, unit_box, SimConfig.default_for(system, 0.1, 3, 0))

    def test_invalid_system_rejected(self, unit_box):
        with pytest.raises(ValidationError):
            ExitSimulator(linear_system([1.0, 1.0]), unit_box)

    def test_select_and_samples(self, planar, unit_box):
        batch = simulate_exits(planar, unit_box, SimConfig.default_for(planar, 0.2, 40, 5))
        top = batch.select(batch.face_axis == 2)
        assert np.all(top.face_axis == 2)
        records = [s.to_record() for s in top.samples()]
        assert len(records) == top.n_exited
        assert all(r['face'][0] == 2 for r in records)


class TestSeeding:
    """Counter-based streams per block and per trajectory."""

    def test_same_key_same_draws(self):
        a = block_generator(1, EXIT_STREAM, 3).standard_normal(5)
        b = block_generator(1, EXIT_STREAM, 3).standard_normal(5)
        assert np.array_equal(a, b)

    def test_keys_are_independent(self):
        base = block_generator(1, EXIT_STREAM, 0).standard_normal(5)
        assert not np.array_equal(base, block_generator(1, EXIT_STREAM, 1).standard_normal(5))
        assert not np.array_equal(base, block_generator(1, TRACKING_STREAM, 0).standard_normal(5))

    def test_negative_seed(self):
        with pytest.raises(ValueError):
            block_generator(-1, EXIT_STREAM, 0)

    def test_block_ranges(self):
        assert list(block_ranges(10, 4)) == [(0, 0, 4), (1, 4, 8), (2, 8, 10)]
        assert list(block_ranges(0, 4)) == []

    def test_trajectory_streams(self):
        a = trajectory_generator(4, EXIT_STREAM, 12).standard_normal(6)
        assert np.array_equal(a, trajectory_generator(4, EXIT_STREAM, 12).standard_normal(6))
        assert not np.array_equal(a, trajectory_generator(4, EXIT_STREAM, 13).standard_normal(6))
        assert not np.array_equal(a, trajectory_generator(4, TRACKING_STREAM, 12).standard_normal(6))
        assert not np.array_equal(a, trajectory_generator(5, EXIT_STREAM, 12).standard_normal(6))
        with pytest.raises(ValueError):
            trajectory_generator(4, EXIT_STREAM, -1)

    def test_noise_rows_follow_their_own_stream(self):
        """Row r at step s is the s-th draw of trajectory ids[r], even as rows drop out."""
        ids = [3, 40, 41]
        steps = 2 * TrajectoryNoise.CHUNK + 5
        noise = TrajectoryNoise(9, EXIT_STREAM, ids, 2)
        expected = {k: trajectory_generator(9, EXIT_STREAM, k).standard_normal((3 * TrajectoryNoise.CHUNK, 2))
                    for k in ids}
        rows = np.arange(3)
        for step in range(steps):
            if step == TrajectoryNoise.CHUNK + 7:
                rows = np.array([0, 2])
            draws = noise.draw(rows, step)
            for r, draw in zip(rows, draws):
                assert np.array_equal(draw, expected[ids[r]][step])

    def test_ladder_streams_do_not_collide(self):
        fixed = {EXIT_STREAM, TRACKING_STREAM, GAUSSIAN_STREAM, DUHAMEL_STREAM}
        rungs = {ladder_stream(k) for k in range(8)}
        assert len(rungs) == 8
        assert not rungs & fixed


class TestGaussianLimit:
    """Stochastic convolution and the Gaussian exit sampler."""

    def test_covariance_matches_limit(self, planar):
        z = simulate_gaussian_limit(planar, T=20.0, n=40000, seed=3)
        np.testing.assert_allclose(np.cov(z.T), np.diag([0.25, 0.5]), atol=0.02)
        assert np.all(np.abs(z.mean(axis=0)) < 0.02)

    def test_random_sigma_covariance_within_three_standard_errors(self):
        """10⁶ samples of Z_T for a random full-rank 2×3 σ(0) against the closed form."""
        sigma = np.random.default_rng(2024).standard_normal((2, 3))
        system = linear_system([1.5, 0.5], sigma=sigma)
        n = 1_000_000
        z = simulate_gaussian_limit(system, T=40.0, n=n, seed=17)
        C = limit_covariance(sigma, [1.5, 0.5]).matrix
        standard_errors = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C ** 2) / n)
        assert np.all(np.abs(np.cov(z.T) - C) < 3.0 * standard_errors)
        assert np.all(np.abs(z.mean(axis=0)) < 3.0 * np.sqrt(np.diag(C) / n))

    def test_horizon_too_short(self, planar):
        with pytest.raises(ValidationError):
            simulate_gaussian_limit(planar, T=5.0, n=10, seed=0)

    def test_face_probability_scales_with_epsilon(self, planar, unit_box):
        """P(exit through the x₂ faces) ≈ μ ε for small ε."""
        eps = 0.02
        exits = sample_duhamel_exits(planar, unit_box, eps, 200000, seed=9)
        probabilities = exits.face_probabilities()
        assert sum(probabilities.values()) == pytest.approx(1.0)
        assert probabilities[2] / eps == pytest.approx(MU_PLANAR, rel=0.1)

    def test_exit_points_on_faces(self, planar, unit_box):
        exits = sample_duhamel_exits(planar, unit_box, 0.1, 1000, seed=1)
        rows = np.arange(1000)
        np.testing.assert_allclose(np.abs(exits.locations[rows, exits.face_axis - 1]), 1.0)
        assert np.all(np.abs(exits.locations) <= 1.0)

    def test_needs_linear_box(self, unit_box):
        with pytest.raises(ValidationError):
            sample_duhamel_exits(shear_system([2.0, 1.0]), unit_box, 0.1, 10, seed=0)
        with pytest.raises(ValidationError):
            sample_duhamel_exits(linear_system([2.0, 1.0]), unit_box, 1.5, 10, seed=0)


class TestFlowTracking:
    """Noisy versus deterministic paths from the chart box to ∂D."""

    def test_noiseless_tracking_is_discretization_error(self, planar, unit_box):
        summary = flow_tracking_diagnostic(planar, unit_box, 0.25, 0.0, 20, seed=1)
        assert summary.n == 20
        assert summary.maximum < 5e-3

    def test_small_noise_tracks_the_flow(self, planar, unit_box):
        summary = flow_tracking_diagnostic(planar, unit_box, 0.25, 0.01, 200, seed=2)
        assert summary.quantiles[0.5] < 0.15
        assert set(summary.to_dict()['quantiles']) == {'q50', 'q90', 'q99'}

    def test_deviation_shrinks_with_noise(self, planar, unit_box):
        coarse = flow_tracking_diagnostic(planar, unit_box, 0.25, 0.02, 200, seed=4)
        fine = flow_tracking_diagnostic(planar, unit_box, 0.25, 0.01, 200, seed=4)
        assert fine.quantiles[0.99] < coarse.quantiles[0.99]


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
