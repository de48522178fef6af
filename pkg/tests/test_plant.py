"""Synthetic plant tests: response law, viscoelastic memory, disturbances,
observation, and the config/log interfaces."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softarm import plant as pl


SPEC = pl.SegmentSpec()
SPEC0 = pl.SegmentSpec(memory_coeff=0.0)


def cmd2(rows):
    return pl.PressureCommand(np.asarray(rows, dtype=float))


class TestResponseLaw:
    def test_zero_pressures_rest(self):
        k, l = pl.response_2d(SPEC, 0.0, 0.0)
        assert k == 0.0
        assert l == SPEC.rest_length

    def test_symmetric_pressures_pure_elongation(self):
        k, l = pl.response_2d(SPEC, 0.2, 0.2)
        assert k == 0.0
        assert l > SPEC.rest_length

    def test_tanh_law_values(self):
        p_l, p_r = 0.05, 0.25
        k, l = pl.response_2d(SPEC, p_l, p_r)
        k_ref = 0.025 * np.tanh(1.2 * (p_r - p_l) / 0.3)
        l_ref = 50.0 + 50.0 * (p_l + p_r) / (2.0 * 0.3)
        assert abs(k - k_ref) < 1e-15
        assert abs(l - l_ref) < 1e-12

    def test_monotone_in_differential_pressure(self):
        ks = [pl.response_2d(SPEC, 0.1, pr)[0]
              for pr in np.linspace(0.1, 0.3, 9)]
        assert all(b > a for a, b in zip(ks, ks[1:]))

    def test_3d_pure_elongation(self):
        kx, ky, l = pl.response_3d(SPEC, np.array([0.1, 0.1, 0.1, 0.1]))
        assert kx == 0.0 and ky == 0.0
        assert l > SPEC.rest_length

    def test_3d_bend_magnitude(self):
        quad, = [np.array([0.0, 0.2, 0.0, 0.2])]
        kx, ky, l = pl.response_3d(SPEC, quad)
        psx = -quad[0] + quad[1] - quad[2] + quad[3]
        theta_ref = 0.025 * 50.0 * np.tanh(1.2 * psx / (2.0 * 0.3))
        assert abs(kx * l - theta_ref) < 1e-12
        assert abs(ky) < 1e-15

    def test_3d_elongation_preserves_bend_angle(self):
        # adding pressure to all four airbags stretches the arc without
        # changing its total bend angle
        base = np.array([0.0, 0.2, 0.0, 0.2])
        angles = []
        for boost in (0.0, 0.03, 0.06):
            kx, ky, l = pl.response_3d(SPEC, base + boost)
            angles.append(np.hypot(kx, ky) * l)
        assert np.allclose(angles, angles[0], atol=1e-12)
        lengths = [pl.response_3d(SPEC, base + b)[2] for b in (0.0, 0.03)]
        assert lengths[1] > lengths[0]


class TestStep:
    def test_rest_equilibrium(self):
        state = pl.PlantState.at_rest([SPEC0] * 3)
        state = pl.step(state, cmd2(np.zeros((3, 2))))
        assert np.allclose(state.pose[:, 0], 0.0)
        assert np.allclose(state.pose[:, 1], SPEC0.rest_length)

    def test_memory_gap_shrinks_by_eta(self):
        # same command from two different previous poses: the realized gap
        # contracts by exactly eta per step
        command = cmd2([[0.1, 0.25]])
        a = pl.PlantState.at_rest([SPEC])
        b = pl.PlantState.at_rest([SPEC])
        b.pose = np.array([[0.01, 80.0]])
        gap = np.abs(a.pose - b.pose)
        for _ in range(5):
            a = pl.step(a, command)
            b = pl.step(b, command)
            new_gap = np.abs(a.pose - b.pose)
            assert np.allclose(new_gap, SPEC.memory_coeff * gap, atol=1e-12)
            gap = new_gap

    def test_no_memory_no_history_dependence(self):
        command = cmd2([[0.1, 0.25]])
        a = pl.PlantState.at_rest([SPEC0])
        b = pl.PlantState.at_rest([SPEC0])
        b.pose = np.array([[0.01, 80.0]])
        a = pl.step(a, command)
        b = pl.step(b, command)
        assert np.array_equal(a.pose, b.pose)

    def test_channel_swap_is_involution(self):
        # pre-swapping the command cancels the swap disturbance exactly
        rng = np.random.default_rng(0)
        dist = pl.Disturbance(channel_swap=1)
        a = pl.PlantState.at_rest([SPEC] * 3)
        b = pl.PlantState.at_rest([SPEC] * 3)
        for _ in range(10):
            p = rng.uniform(0.0, SPEC.pressure_max, (3, 2))
            swapped = p.copy()
            swapped[1] = swapped[1, ::-1]
            a = pl.step(a, cmd2(p))
            b = pl.step(b, cmd2(swapped), dist)
            assert np.array_equal(a.pose, b.pose)

    def test_lateral_force_adds_curvature(self):
        free = pl.step(pl.PlantState.at_rest([SPEC0]), cmd2([[0.1, 0.1]]))
        loaded = pl.step(pl.PlantState.at_rest([SPEC0]), cmd2([[0.1, 0.1]]),
                         pl.Disturbance(lateral_force=1.5))
        assert abs(loaded.pose[0, 0]
                   - (free.pose[0, 0] + SPEC.compliance * 1.5)) < 1e-15

    def test_tip_load_gram_conversion(self):
        dist = pl.Disturbance(tip_load=100.0)
        assert abs(dist.total_force - 100.0 * 9.81e-3) < 1e-15

    def test_out_of_range_pressure_rejected(self):
        state = pl.PlantState.at_rest([SPEC])
        with pytest.raises(pl.PlantError, match="pressure out of"):
            pl.step(state, cmd2([[0.0, 0.5]]))

    def test_3d_constraint_enforced(self):
        state = pl.PlantState.at_rest([SPEC], is_3d=True)
        bad = pl.PressureCommand(np.array([[0.1, 0.0, 0.0, 0.0]]))
        with pytest.raises(pl.PlantError, match="p1 \\+ p4"):
            pl.step(state, bad)

    def test_dimensionality_mismatch_rejected(self):
        state = pl.PlantState.at_rest([SPEC], is_3d=True)
        with pytest.raises(pl.PlantError):
            pl.step(state, cmd2([[0.1, 0.1]]))

    def test_swap_index_out_of_range(self):
        state = pl.PlantState.at_rest([SPEC])
        with pytest.raises(pl.PlantError):
            pl.step(state, cmd2([[0.0, 0.0]]), pl.Disturbance(channel_swap=3))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_bounds_always_hold(self, seed):
        rng = np.random.default_rng(seed)
        state = pl.PlantState.at_rest([SPEC] * 2)
        dist = pl.Disturbance(lateral_force=float(rng.uniform(0.0, 2.0)))
        for _ in range(15):
            p = rng.uniform(0.0, SPEC.pressure_max, (2, 2))
            state = pl.step(state, cmd2(p), dist)
            assert np.all(np.abs(state.pose[:, 0]) <= SPEC.max_curvature)
            assert np.all(state.pose[:, 1] >= SPEC.rest_length)
            assert np.all(state.pose[:, 1] <= SPEC.max_length)


class TestObserve:
    def test_rest_tip_three_segments(self):
        state = pl.PlantState.at_rest([SPEC] * 3)
        obs = pl.observe(state)
        assert np.allclose(obs.tips[-1], [0.0, 150.0])
        assert obs.tip_theta == 0.0

    def test_quarter_circle_tip(self):
        state = pl.PlantState.at_rest([SPEC])
        state.pose = np.array([[1.0 / 50.0, (np.pi / 2) * 50.0]])
        obs = pl.observe(state)
        assert np.allclose(obs.tips[-1], [50.0, 50.0], atol=1e-9)

    def test_noise_deterministic_per_seed(self):
        state = pl.PlantState.at_rest([SPEC] * 3)
        dist = pl.Disturbance(sensor_noise_sigma=0.5)
        a = pl.observe(state, dist, rng_seed=42)
        b = pl.observe(state, dist, rng_seed=42)
        assert np.array_equal(a.tips, b.tips)
        assert a.tip_theta == b.tip_theta

    def test_3d_observation_tip_matches_transform(self):
        state = pl.PlantState.at_rest([SPEC] * 2, is_3d=True)
        state.pose = np.array([[0.01, 0.005, 60.0], [-0.004, 0.0, 70.0]])
        obs = pl.observe(state)
        assert np.allclose(obs.tips[-1], state.tip_transform()[:3, 3])


class TestSpecValidation:
    def test_negative_disturbance_rejected(self):
        with pytest.raises(pl.PlantError):
            pl.Disturbance(lateral_force=-1.0)

    def test_memory_coeff_range(self):
        with pytest.raises(pl.PlantError):
            pl.SegmentSpec(memory_coeff=1.0)

    def test_bend_under_90_degrees(self):
        with pytest.raises(pl.PlantError):
            pl.SegmentSpec(rest_length=100.0, max_curvature=0.02)

    def test_command_shape_rejected(self):
        with pytest.raises(pl.PlantError):
            pl.PressureCommand(np.zeros((2, 3)))


class TestConfigAndLogs:
    def test_config_roundtrip(self, tmp_path):
        path = tmp_path / "plant.cfg"
        path.write_text(
            "# test plant\n"
            "segments = 2\n"
            "dimensionality = 2d\n"
            "rest_length = 40\n"
            "segment2.rest_length = 60  # override\n"
        )
        specs, is_3d = pl.load_plant_config(path)
        assert not is_3d
        assert len(specs) == 2
        assert specs[0].rest_length == 40.0
        assert specs[1].rest_length == 60.0

    def test_config_unknown_field(self, tmp_path):
        path = tmp_path / "plant.cfg"
        path.write_text("segments = 1\nbogus_field = 3\n")
        with pytest.raises(pl.PlantError, match="unknown"):
            pl.load_plant_config(path)

    def test_config_malformed_line(self, tmp_path):
        path = tmp_path / "plant.cfg"
        path.write_text("segments 1\n")
        with pytest.raises(pl.PlantError, match="key = value"):
            pl.load_plant_config(path)

    def test_trajectory_log_jsonl(self, tmp_path):
        import json
        path = tmp_path / "traj.jsonl"
        state = pl.PlantState.at_rest([SPEC])
        command = cmd2([[0.1, 0.2]])
        with pl.TrajectoryLog(path) as log:
            state = pl.step(state, command)
            log.record(command, state, pl.observe(state))
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 1
        row = json.loads(lines[0])
        assert row["pressures"] == [[0.1, 0.2]]
        assert "pose" in row and "markers" in row and "tip_theta" in row
