"""Estimated-Jacobian controller tests: actuation algebra, sparse
single-segment Jacobians, full assembly against finite differences of the
plant, the damped pseudoinverse step, and controller fixed points."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softarm import jacobian_ctrl as jc
from softarm import kinematics as kin
from softarm import plant as pl


SPECS = pl.default_specs_3d()


class TestActuationAlgebra:
    def test_airbag_to_generalized_values(self):
        assert np.allclose(jc.airbag_to_generalized([0, 0, 0, 0]), [0, 0, 0])
        assert np.allclose(jc.airbag_to_generalized([0, 2, 0, 2]), [4, 0, 4])
        assert np.allclose(jc.airbag_to_generalized([1, 1, 1, 1]), [0, 0, 4])

    def test_generalized_to_airbag_values(self):
        quad, clipped = jc.generalized_to_airbag(0.0, 0.0, 0.0)
        assert np.allclose(quad, 0.0) and not clipped
        quad, clipped = jc.generalized_to_airbag(4.0, 0.0, 4.0)
        assert np.allclose(quad, [0, 2, 0, 2]) and not clipped

    def test_constraint_satisfied_by_construction(self):
        quad, _ = jc.generalized_to_airbag(0.3, -0.2, 0.8)
        assert abs(quad[0] + quad[3] - quad[1] - quad[2]) < 1e-12

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(0.0, 2.0))
    def test_roundtrip_identity(self, psx, psy, psz):
        quad, _ = jc.generalized_to_airbag(psx, psy, psz)
        back = jc.airbag_to_generalized(quad)
        assert np.allclose(back, [psx, psy, psz], atol=1e-12)

    def test_projection_flags_out_of_range(self):
        pmax = 0.3
        quad, clipped = jc.generalized_to_airbag(2.0, 0.0, 0.4,
                                                 pressure_max=pmax)
        assert clipped
        assert np.all(quad >= 0.0) and np.all(quad <= pmax)
        # the projected command still satisfies the manifold constraint
        assert abs(quad[0] + quad[3] - quad[1] - quad[2]) < 1e-12

    def test_planar_conversions(self):
        assert np.allclose(jc.generalized_2d(0.1, 0.25), [0.15, 0.35])
        pair, clipped = jc.airbag_2d(0.15, 0.35, 0.3)
        assert np.allclose(pair, [0.1, 0.25]) and not clipped
        pair, clipped = jc.airbag_2d(0.8, 0.3, 0.3)
        assert clipped
        assert np.all(pair >= 0.0) and np.all(pair <= 0.3)


class TestSingleSegJacobians:
    def test_sparsity_structure(self):
        J = jc.SingleSegJacobian(1.0, 2.0, 3.0, 4.0, 5.0).as_matrix()
        nz = {(0, 0), (3, 0), (1, 1), (4, 1), (2, 2)}
        for i in range(5):
            for j in range(3):
                if (i, j) in nz:
                    assert J[i, j] != 0.0
                else:
                    assert J[i, j] == 0.0

    def test_identical_specs_identical_jacobians(self):
        jacs = jc.init_single_jacobians(SPECS[:2])
        assert jacs[0] == jacs[1]

    def test_entries_positive(self):
        jac = jc.init_single_jacobians(SPECS[:1])[0]
        assert jac.dtheta_x_dpx > 0
        assert jac.dx_dpx > 0
        assert jac.dtheta_y_dpy > 0
        assert jac.dy_dpy > 0
        assert jac.dz_dpz > 0

    def test_probe_near_dense_grid_maxima(self):
        jac = jc.init_single_jacobians(SPECS[:1], grid=7)[0]
        dense = jc.init_single_jacobians(SPECS[:1], grid=31)[0]
        for a, b in zip(
                [jac.dtheta_x_dpx, jac.dx_dpx, jac.dtheta_y_dpy,
                 jac.dy_dpy, jac.dz_dpz],
                [dense.dtheta_x_dpx, dense.dx_dpx, dense.dtheta_y_dpy,
                 dense.dy_dpy, dense.dz_dpz]):
            assert abs(a - b) / b < 0.10


class TestAssembleJacobian:
    def test_zero_single_jacobians_give_zero_columns(self):
        state = pl.PlantState.at_rest(SPECS, is_3d=True)
        zero = [jc.SingleSegJacobian(0, 0, 0, 0, 0)] * len(SPECS)
        J, valid = jc.assemble_jacobian(state.segment_transforms(), zero)
        assert np.allclose(J, 0.0)
        assert valid.all()

    def test_straight_chain_last_elongation_column(self):
        state = pl.PlantState.at_rest(SPECS, is_3d=True)
        jacs = jc.init_single_jacobians(SPECS)
        J, valid = jc.assemble_jacobian(state.segment_transforms(), jacs)
        col = J[:, 3 * (len(SPECS) - 1) + 2]
        assert valid[3 * (len(SPECS) - 1) + 2]
        assert abs(col[2] - jacs[-1].dz_dpz) < 1e-6
        assert np.allclose([col[0], col[1], col[3], col[4]], 0.0, atol=1e-9)

    def test_columns_positively_aligned_with_plant_oracle(self):
        # light version of the full 100-pose acceptance check
        rng = np.random.default_rng(0)
        jacs = jc.init_single_jacobians(SPECS)
        for _ in range(5):
            assert _pose_alignment_ok(rng, jacs)


def _random_inrange_gen(rng, n, pmax):
    gen = np.zeros((n, 3))
    gen[:, 2] = rng.uniform(1.0, 3.0, n) * pmax
    for i in range(n):
        # airbag pressures stay within [0, pmax] iff |psx| + |psy| fits
        # under both psz and 4 pmax - psz
        limit = min(gen[i, 2], 4.0 * pmax - gen[i, 2])
        b = rng.uniform(0.0, 0.8) * limit
        phi = rng.uniform(0.0, 2.0 * np.pi)
        cx, cy = np.cos(phi), np.sin(phi)
        gen[i, 0] = b * cx / (abs(cx) + abs(cy))
        gen[i, 1] = b * cy / (abs(cx) + abs(cy))
    return gen


def _settled_state(gen, dp_extra=None):
    n = len(gen)
    pmax = SPECS[0].pressure_max
    rows = [jc.generalized_to_airbag(*gen[i], pressure_max=pmax)[0]
            for i in range(n)]
    state = pl.PlantState.at_rest(SPECS, is_3d=True)
    cmd = pl.PressureCommand(np.array(rows))
    for _ in range(40):
        state = pl.step(state, cmd)
    return state


def _pose_alignment_ok(rng, jacs, dp=0.01):
    """Assembled columns vs plant finite-difference columns: positive
    cosine for every valid column with appreciable motion."""
    n = len(SPECS)
    pmax = SPECS[0].pressure_max
    gen = _random_inrange_gen(rng, n, pmax)
    state = _settled_state(gen)
    try:
        J, valid = jc.assemble_jacobian(state.segment_transforms(), jacs)
    except kin.KinematicsError:
        return True  # out-of-range poses are excluded by the contract
    T_tip_inv = kin.invert_transform(state.tip_transform())
    for col in range(3 * n):
        if not valid[col]:
            continue
        gen2 = gen.copy()
        gen2[col // 3, col % 3] += dp
        state2 = _settled_state(gen2)
        # finite-difference column in the same tip frame the assembly uses
        try:
            fd = kin.transform_to_vector(
                T_tip_inv @ state2.tip_transform()).as_array() / dp
        except kin.KinematicsError:
            continue
        a, b = J[:, col], fd
        if np.linalg.norm(a) < 1e-9 or np.linalg.norm(b) < 1e-9:
            continue
        cos = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
        if cos <= 0.0:
            return False
    return True


class TestGoalDeviation:
    def test_zero_at_goal(self):
        T = kin.arc_transform_3d(0.3, 0.5, 2.0)
        assert np.allclose(jc.goal_deviation(T, T).as_array(), 0.0,
                           atol=1e-12)

    def test_translation_along_tip_z(self):
        T = kin.arc_transform_3d(0.3, 0.5, 2.0)
        T_goal = T.copy()
        T_goal[:3, 3] = T[:3, 3] + 10.0 * T[:3, 2]
        dev = jc.goal_deviation(T, T_goal)
        assert np.allclose(dev.as_array(), [0, 0, 10.0, 0, 0], atol=1e-9)

    def test_matches_inverse_oracle(self):
        rng = np.random.default_rng(4)
        T_tip = kin.arc_transform_3d(rng.uniform(0, 2 * np.pi), 0.6, 2.0)
        T_goal = kin.arc_transform_3d(rng.uniform(0, 2 * np.pi), 0.4, 2.2)
        dev = jc.goal_deviation(T_tip, T_goal)
        rel = np.linalg.inv(T_tip) @ T_goal
        oracle = kin.transform_to_vector(rel)
        assert np.allclose(dev.as_array(), oracle.as_array(), atol=1e-9)


class TestFeedbackStep:
    def test_zero_error_zero_step(self):
        J = np.array([[2.0, 0.0], [0.0, 3.0], [0.0, 0.0]])
        dp = jc.feedback_step(J, np.zeros(3), jc.DampedStep())
        assert np.allclose(dp, 0.0)

    def test_orthogonal_columns_closed_form(self):
        # pseudoinverse of orthogonal columns: dp_j = a * (col_j . dx) / s_j^2
        J = np.array([[2.0, 0.0], [0.0, 3.0], [0.0, 0.0]])
        dx = np.array([0.1, -0.2, 0.5])
        step = jc.DampedStep(damping=0.5, max_delta=10.0)
        dp = jc.feedback_step(J, dx, step)
        expected = 0.5 * np.array([2.0 * 0.1 / 4.0, 3.0 * -0.2 / 9.0])
        assert np.allclose(dp, expected, atol=1e-12)

    def test_linearity_in_damping_pre_clip(self):
        J = np.array([[2.0, 0.0], [0.0, 3.0]])
        dx = np.array([0.01, 0.02])
        a = jc.feedback_step(J, dx, jc.DampedStep(damping=0.4, max_delta=1.0))
        b = jc.feedback_step(J, dx, jc.DampedStep(damping=0.8, max_delta=1.0))
        assert np.allclose(b, 2.0 * a, atol=1e-12)

    def test_trust_region_preserves_direction(self):
        J = np.array([[2.0, 0.0], [0.0, 3.0]])
        dx = np.array([10.0, 10.0])
        free = jc.feedback_step(J, dx, jc.DampedStep(max_delta=1e9))
        clipped = jc.feedback_step(J, dx, jc.DampedStep(max_delta=0.1))
        assert np.max(np.abs(clipped)) <= 0.1 + 1e-12
        cos = free @ clipped / (np.linalg.norm(free) * np.linalg.norm(clipped))
        assert cos > 1.0 - 1e-12

    def test_degenerate_jacobian_raises(self):
        with pytest.raises(jc.JacobianError):
            jc.feedback_step(np.zeros((3, 2)), np.ones(3), jc.DampedStep())

    def test_non_finite_jacobian_raises(self):
        J = np.array([[np.nan, 0.0], [0.0, 1.0]])
        with pytest.raises(jc.JacobianError):
            jc.feedback_step(J, np.ones(2), jc.DampedStep())

    def test_damping_validation(self):
        with pytest.raises(ValueError):
            jc.DampedStep(damping=0.0)


class TestRunController:
    def test_goal_at_current_pose_zero_iterations(self):
        state = pl.PlantState.at_rest(SPECS, is_3d=True)
        jacs = jc.init_single_jacobians(SPECS)
        report, _ = jc.run_controller(state, state.tip_transform(), jacs)
        assert report.converged
        assert report.iterations == 0

    def test_reaches_nearby_goal_with_positive_alignments(self):
        state = pl.PlantState.at_rest(SPECS, is_3d=True)
        jacs = jc.init_single_jacobians(SPECS)
        goal_state = pl.PlantState.at_rest(SPECS, is_3d=True)
        goal_state.pose[:, 0] = 0.004
        goal_state.pose[:, 1] = 0.002
        goal_state.pose[:, 2] = 70.0
        report, _ = jc.run_controller(state, goal_state.tip_transform(), jacs)
        assert report.converged
        assert all(a > 0.0 for a in report.step_alignments)
        # best-so-far error envelope is non-increasing
        best = np.minimum.accumulate(report.pos_errors)
        assert np.all(np.diff(best) <= 1e-12)


class TestPlanarController:
    def test_reaches_settled_target(self):
        from softarm import harness as hn
        specs = pl.default_specs_2d()
        ctrl = hn.prepare_estimated(specs)
        target = hn.sample_target_poses(specs, 1, seed=2)[0]
        state = pl.PlantState.at_rest(specs)
        report, _ = ctrl.run(state, target, max_iter=100)
        assert report.converged
        assert report.final_pos < 15.0
