"""Estimated-Jacobian closed-loop controller.

Per segment, a deliberately coarse 5x3 sparse Jacobian maps generalized
actuations (two bends, one elongation) to the five tip coordinates
(x, y, z, theta_x, theta_y). The full 5x15 Jacobian is assembled through
the transform chain by perturbing one segment at a time, and feedback
iterates a damped pseudoinverse step. A planar variant drives the 2D
plant with the same machinery for the comparative study.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kinematics as kin
from . import plant as pl

ANGLE_LEVER_MM = 100.0  # shared unit for mixing mm and rad in the task vector


class JacobianError(RuntimeError):
    pass


def airbag_to_generalized(quad) -> np.ndarray:
    p1, p2, p3, p4 = quad
    return np.array([-p1 + p2 - p3 + p4,
                     p1 + p2 - p3 - p4,
                     p1 + p2 + p3 + p4])


def generalized_to_airbag(psx: float, psy: float, psz: float,
                          pressure_max: float | None = None) -> tuple[np.ndarray, bool]:
    """Unique airbag pressures on the p1 + p4 = p2 + p3 manifold.

    The four pressures are (psz +/- psx +/- psy) / 4, so the bounds hold
    exactly when |psx| + |psy| <= min(psz, 4 p_max - psz). Out-of-range
    requests are projected back onto that region (clamp the elongation
    component, shrink the bend components) and flagged.
    """
    clipped = False
    if pressure_max is not None:
        psz_b = float(np.clip(psz, 0.0, 4.0 * pressure_max))
        clipped = abs(psz_b - psz) > 1e-12
        psz = psz_b
        limit = min(psz, 4.0 * pressure_max - psz)
        bend = abs(psx) + abs(psy)
        if bend > limit + 1e-12:
            scale = limit / bend if bend > 0.0 else 0.0
            psx *= scale
            psy *= scale
            clipped = True
    quad = np.array([(psz - psx + psy) / 4.0,
                     (psz + psx + psy) / 4.0,
                     (psz - psx - psy) / 4.0,
                     (psz + psx - psy) / 4.0])
    if pressure_max is not None:
        # remove rounding dust only; the projection above does the real work
        quad = np.clip(quad, 0.0, pressure_max)
    return quad, clipped


@dataclass
class SingleSegJacobian:
    """5x3 sparse sensitivity: exactly five structurally nonzero entries."""

    dtheta_x_dpx: float
    dx_dpx: float
    dtheta_y_dpy: float
    dy_dpy: float
    dz_dpz: float

    def as_matrix(self) -> np.ndarray:
        J = np.zeros((5, 3))
        J[3, 0] = self.dtheta_x_dpx
        J[0, 0] = self.dx_dpx
        J[4, 1] = self.dtheta_y_dpy
        J[1, 1] = self.dy_dpy
        J[2, 2] = self.dz_dpz
        return J


def _segment_tip_vector(spec: pl.SegmentSpec, quad: np.ndarray) -> np.ndarray:
    kx, ky, l = pl.response_3d(spec, quad)
    k = np.hypot(kx, ky)
    phi = np.arctan2(ky, kx) if k > 1e-15 else 0.0
    T = kin.arc_transform_3d(phi, k * l, l)
    return kin.transform_to_vector(T).as_array()


def init_single_jacobians(specs, grid: int = 7, dp: float = 0.01) -> list[SingleSegJacobian]:
    """Probe each segment's steady-state response over a coarse pressure
    grid and keep the maximum response magnitude per nonzero entry."""
    out = []
    for spec in specs:
        pmax = spec.pressure_max
        best = np.zeros(5)
        # bend probes: sweep p_sx with p_sz mid-range (p_sy symmetric by design)
        for psx in np.linspace(-1.5 * pmax, 1.5 * pmax, grid):
            for psz in np.linspace(0.5 * pmax, 3.5 * pmax, grid):
                # probes whose bend leaves the sub-90-degree projection
                # range carry no usable sensitivity; skip them
                try:
                    quad, _ = generalized_to_airbag(psx, 0.0, psz)
                    quad2, _ = generalized_to_airbag(psx + dp, 0.0, psz)
                    v1 = _segment_tip_vector(spec, quad)
                    v2 = _segment_tip_vector(spec, quad2)
                except kin.KinematicsError:
                    continue
                d = (v2 - v1) / dp
                best[0] = max(best[0], abs(d[3]))   # dtheta_x/dp_sx
                best[1] = max(best[1], abs(d[0]))   # dx/dp_sx
                try:
                    quad3, _ = generalized_to_airbag(0.0, psx, psz)
                    quad4, _ = generalized_to_airbag(0.0, psx + dp, psz)
                    v3 = _segment_tip_vector(spec, quad3)
                    v4 = _segment_tip_vector(spec, quad4)
                except kin.KinematicsError:
                    continue
                d2 = (v4 - v3) / dp
                best[2] = max(best[2], abs(d2[4]))  # dtheta_y/dp_sy
                best[3] = max(best[3], abs(d2[1]))  # dy/dp_sy
        for psz in np.linspace(0.0, 4.0 * pmax - dp, grid):
            quad, _ = generalized_to_airbag(0.0, 0.0, psz)
            quad2, _ = generalized_to_airbag(0.0, 0.0, psz + dp)
            v1 = _segment_tip_vector(spec, quad)
            v2 = _segment_tip_vector(spec, quad2)
            best[4] = max(best[4], abs((v2[2] - v1[2]) / dp))
        out.append(SingleSegJacobian(*best))
    return out


def _rebuild_segment_transform(vec: np.ndarray) -> np.ndarray:
    """Transform with PCC-consistent rotation for the perturbed projected
    angles and the perturbed position."""
    T = kin.segment_transform(vec[3], vec[4], 1.0)
    return kin.make_transform(T[:3, :3], vec[:3])


def assemble_jacobian(seg_transforms: list[np.ndarray],
                      single_jacs: list[SingleSegJacobian],
                      dp: float = 0.01) -> tuple[np.ndarray, np.ndarray]:
    """Full 5 x (3n) Jacobian in the tip frame.

    Each column perturbs one generalized actuation of one segment,
    predicts that segment's new relative transform from its sparse
    Jacobian, recomposes the chain with the other segments frozen, and
    differences the tip. Columns whose recomposition leaves the valid
    projection range are flagged invalid.
    """
    n = len(seg_transforms)
    T_tip = kin.chain_transforms(seg_transforms)
    prefix = [np.eye(4)]
    for T in seg_transforms:
        prefix.append(prefix[-1] @ T)
    suffix = [np.eye(4)] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix[i] = seg_transforms[i] @ suffix[i + 1]
    T_tip_inv = kin.invert_transform(T_tip)

    J = np.zeros((5, 3 * n))
    valid = np.ones(3 * n, dtype=bool)
    for i in range(n):
        base_vec = kin.transform_to_vector(seg_transforms[i]).as_array()
        Ji = single_jacs[i].as_matrix()
        for j in range(3):
            col = 3 * i + j
            try:
                vec = base_vec + Ji[:, j] * dp
                Ti_new = _rebuild_segment_transform(vec)
                T_new = prefix[i] @ Ti_new @ suffix[i + 1]
                dev = kin.transform_to_vector(T_tip_inv @ T_new).as_array()
            except kin.KinematicsError:
                valid[col] = False
                continue
            J[:, col] = dev / dp
    return J, valid


def goal_deviation(T_tip: np.ndarray, T_goal: np.ndarray) -> kin.TipVector5:
    """Goal pose expressed in the tip frame; requires the two z-axes to be
    within 90 degrees, else the caller must insert intermediate goals."""
    rel = kin.invert_transform(T_tip) @ T_goal
    return kin.transform_to_vector(rel)


@dataclass(frozen=True)
class DampedStep:
    damping: float = 1.0
    max_delta: float = 0.2   # MPa per step per generalized actuation
    sv_cutoff: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping ratio must be in (0, 1]")


def feedback_step(J: np.ndarray, dx: np.ndarray, step: DampedStep) -> np.ndarray:
    """Damped pseudoinverse actuation update, component-clipped."""
    if not np.all(np.isfinite(J)):
        raise JacobianError("Jacobian contains non-finite entries")
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    if s[0] <= 0.0:
        raise JacobianError("degenerate Jacobian: no motion possible")
    keep = s > step.sv_cutoff * s[0]
    if not np.any(keep):
        raise JacobianError("degenerate Jacobian: no motion possible")
    s_inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    dp = step.damping * (Vt.T * s_inv) @ (U.T @ dx)
    # uniform trust-region scaling keeps the step direction (and so the
    # positive projection onto the task error) intact
    peak = float(np.max(np.abs(dp))) if dp.size else 0.0
    if peak > step.max_delta:
        dp = dp * (step.max_delta / peak)
    return dp


def _weighted_task_vector(vec: kin.TipVector5) -> np.ndarray:
    v = vec.as_array()
    v[3:] *= ANGLE_LEVER_MM
    return v


def _weight_jacobian(J: np.ndarray) -> np.ndarray:
    Jw = J.copy()
    Jw[3:, :] *= ANGLE_LEVER_MM
    return Jw


@dataclass
class ControllerParams:
    step: DampedStep = field(default_factory=DampedStep)
    tol_pos: float = 5.0        # mm
    max_iter: int = 100
    use_true_mid_markers: bool = True
    interp_per_segment: bool = True
    max_chase: float = 100.0    # mm of goal deviation chased per iteration
    psz_floor_ratio: float = 1.0  # min p_sz in units of p_max; keeps the
                                  # bend budget |p_sx|+|p_sy| from collapsing
    settle_steps: int = 3         # plant steps per command, letting the
                                  # viscoelastic transient decay


@dataclass
class RunReport:
    converged: bool
    iterations: int
    pos_errors: list[float]
    rot_errors_deg: list[float]
    step_alignments: list[float] = field(default_factory=list)

    @property
    def final_pos(self) -> float:
        return self.pos_errors[-1]


def run_controller(state: pl.PlantState, T_goal: np.ndarray,
                   single_jacs: list[SingleSegJacobian],
                   params: ControllerParams = ControllerParams(),
                   dist: pl.Disturbance = pl.NO_DISTURBANCE,
                   ) -> tuple[RunReport, pl.PlantState]:
    """Iterate observe -> assemble -> damped step -> actuate on a 3D plant."""
    n = state.n
    specs = state.specs
    pmax = specs[0].pressure_max
    gen = np.zeros((n, 3))
    gen[:, 2] = 2.0 * pmax  # start from the mid-elongation manifold point
    # settle current state estimate of generalized pressures from the pose
    pos_errors, rot_errors = [], []
    alignments = []
    converged = False
    iterations = 0
    goal_pos = T_goal[:3, 3]
    for it in range(params.max_iter):
        if params.use_true_mid_markers:
            seg_transforms = state.segment_transforms()
        else:
            T_tip_obs = state.tip_transform()
            mids = kin.interpolate_intermediate(np.eye(4), T_tip_obs, n)
            chain = [np.eye(4)] + mids + [T_tip_obs]
            seg_transforms = [
                kin.invert_transform(chain[i]) @ chain[i + 1] for i in range(n)
            ]
        T_tip = state.tip_transform()
        err_pos = float(np.linalg.norm(T_tip[:3, 3] - goal_pos))
        z_tip, z_goal = T_tip[:3, 2], T_goal[:3, 2]
        err_rot = float(np.degrees(np.arccos(np.clip(z_tip @ z_goal, -1.0, 1.0))))
        pos_errors.append(err_pos)
        rot_errors.append(err_rot)
        if err_pos < params.tol_pos:
            converged = True
            break
        iterations = it + 1
        # distant goals (or goals beyond the 90-degree projection range)
        # are chased through nearer interpolated targets; the linearized
        # step is only trustworthy for moderate deviations
        splits = max(1, int(np.ceil(err_pos / params.max_chase)))
        dev = None
        for _ in range(8):
            if splits == 1:
                T_target = T_goal
            else:
                T_target = kin.interpolate_intermediate(T_tip, T_goal, splits)[0]
            try:
                dev = goal_deviation(T_tip, T_target)
                break
            except kin.KinematicsError:
                splits *= 2
        if dev is None:
            raise JacobianError("goal unreachable by geodesic subdivision")
        try:
            J, valid = assemble_jacobian(seg_transforms, single_jacs)
        except kin.KinematicsError:
            # a loaded segment bent past the 90-degree projection range;
            # relax the bend commands and let the plant settle back
            gen[:, :2] *= 0.7
            rows = [generalized_to_airbag(*gen[i], pressure_max=pmax)[0]
                    for i in range(n)]
            cmd = pl.PressureCommand(np.array(rows))
            for _ in range(max(1, params.settle_steps)):
                state = pl.step(state, cmd, dist)
            continue
        Jw = _weight_jacobian(J[:, valid])
        dx = _weighted_task_vector(dev)
        dp = feedback_step(Jw, dx, params.step)
        alignments.append(float((Jw @ dp) @ dx))
        full_dp = np.zeros(3 * n)
        full_dp[valid] = dp
        gen = gen + full_dp.reshape(n, 3)
        # grant the demanded bend by raising p_sz rather than letting the
        # airbag projection shrink the bend pair; without this the
        # least-squares step can pin p_sz at the floor and deadlock the
        # arm in a curled pose with no bend authority left
        bend = np.abs(gen[:, 0]) + np.abs(gen[:, 1])
        over = bend > 2.0 * pmax
        if over.any():
            scale = 2.0 * pmax / bend[over]
            gen[over, 0] *= scale
            gen[over, 1] *= scale
            bend = np.abs(gen[:, 0]) + np.abs(gen[:, 1])
        floor = np.maximum(params.psz_floor_ratio * pmax, bend)
        gen[:, 2] = np.clip(gen[:, 2], floor, 4.0 * pmax - bend)
        rows = []
        for i in range(n):
            quad, clipped = generalized_to_airbag(*gen[i], pressure_max=pmax)
            if clipped:
                gen[i] = airbag_to_generalized(quad)
            rows.append(quad)
        cmd = pl.PressureCommand(np.array(rows))
        for _ in range(max(1, params.settle_steps)):
            state = pl.step(state, cmd, dist)
    report = RunReport(converged, iterations, pos_errors, rot_errors, alignments)
    return report, state


# ---------------------------------------------------------------------------
# Planar variant (comparative experiment plant is 2D)
# ---------------------------------------------------------------------------

def _wrap_pi(a: float) -> float:
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def generalized_2d(p_l: float, p_r: float) -> np.ndarray:
    """(p_bend, p_elong) = (p_r - p_l, p_l + p_r)."""
    return np.array([p_r - p_l, p_l + p_r])


def airbag_2d(p_bend: float, p_elong: float,
              pressure_max: float) -> tuple[np.ndarray, bool]:
    pair = np.array([(p_elong - p_bend) / 2.0, (p_elong + p_bend) / 2.0])
    bounded = np.clip(pair, 0.0, pressure_max)
    clipped = bool(np.any(np.abs(bounded - pair) > 1e-12))
    return bounded, clipped


def init_planar_jacobians(specs, grid: int = 9, dp: float = 0.01) -> list[np.ndarray]:
    """3x2 per-segment blocks over tip (x, y, theta); max-magnitude probe."""
    out = []
    for spec in specs:
        pmax = spec.pressure_max
        best = np.zeros(3)  # |dx/dpb|, |dtheta/dpb|, |dy/dpe|
        for pb in np.linspace(-pmax, pmax - dp, grid):
            for pe in np.linspace(0.5 * pmax, 1.5 * pmax, grid):
                pair1, _ = airbag_2d(pb, pe, pmax)
                pair2, _ = airbag_2d(pb + dp, pe, pmax)
                k1, l1 = pl.response_2d(spec, *pair1)
                k2, l2 = pl.response_2d(spec, *pair2)
                t1 = kin.tip_pose_2d(kin.ConfigurationSpace([k1], [l1]))
                t2 = kin.tip_pose_2d(kin.ConfigurationSpace([k2], [l2]))
                best[0] = max(best[0], abs((t2.x - t1.x) / dp))
                best[1] = max(best[1], abs((t2.theta - t1.theta) / dp))
        for pe in np.linspace(0.0, 2.0 * pmax - dp, grid):
            pair1, _ = airbag_2d(0.0, pe, pmax)
            pair2, _ = airbag_2d(0.0, pe + dp, pmax)
            _, l1 = pl.response_2d(spec, *pair1)
            _, l2 = pl.response_2d(spec, *pair2)
            best[2] = max(best[2], abs((l2 - l1) / dp))
        J = np.zeros((3, 2))
        J[0, 0] = best[0]   # dx/dp_bend
        J[2, 0] = best[1]   # dtheta/dp_bend
        J[1, 1] = best[2]   # dy/dp_elong
        out.append(J)
    return out


def _pose2d_matrix(x: float, y: float, theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    # columns: local x-axis (c, -s), local y-axis (s, c)
    return np.array([[c, s, x], [-s, c, y], [0.0, 0.0, 1.0]])


def _invert_pose2d(M: np.ndarray) -> np.ndarray:
    R = M[:2, :2]
    out = np.eye(3)
    out[:2, :2] = R.T
    out[:2, 2] = -R.T @ M[:2, 2]
    return out


def assemble_planar_jacobian(configs: np.ndarray,
                             single_jacs: list[np.ndarray],
                             dp: float = 0.01) -> np.ndarray:
    """3 x 2n Jacobian of the planar tip (x, y, theta) in the tip frame."""
    n = len(configs)
    mats = []
    for k, l in configs:
        tip = kin.tip_pose_2d(kin.ConfigurationSpace([k], [l]))
        mats.append(_pose2d_matrix(tip.x, tip.y, tip.theta))
    prefix = [np.eye(3)]
    for M in mats:
        prefix.append(prefix[-1] @ M)
    suffix = [np.eye(3)] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix[i] = mats[i] @ suffix[i + 1]
    T_tip = prefix[-1]
    T_tip_inv = _invert_pose2d(T_tip)
    J = np.zeros((3, 2 * n))
    for i in range(n):
        k, l = configs[i]
        tip = kin.tip_pose_2d(kin.ConfigurationSpace([k], [l]))
        base = np.array([tip.x, tip.y, tip.theta])
        for j in range(2):
            vec = base + single_jacs[i][:, j] * dp
            Mi = _pose2d_matrix(*vec)
            T_new = prefix[i] @ Mi @ suffix[i + 1]
            rel = T_tip_inv @ T_new
            dtheta = np.arctan2(rel[0, 1], rel[0, 0])
            J[:, 2 * i + j] = np.array([rel[0, 2], rel[1, 2], dtheta]) / dp
    return J


@dataclass
class PlanarJacobianController:
    """Estimated-Jacobian feedback for the 2D plant."""

    single_jacs: list[np.ndarray]
    pressure_max: float = 0.3
    step: DampedStep = field(default_factory=DampedStep)
    max_chase: float = 100.0      # mm of error chased per iteration
    max_chase_rot: float = 1.0    # rad of error chased per iteration
    settle_steps: int = 3

    def run(self, state: pl.PlantState, target, tol_pos: float = 15.0,
            tol_rot_deg: float = 15.0, max_iter: int = 100,
            dist: pl.Disturbance = pl.NO_DISTURBANCE,
            rng_seed: int = 0) -> tuple[RunReport, pl.PlantState]:
        n = state.n
        pmax = self.pressure_max
        # seed the bend pressures from the target rotation through the
        # estimated angle sensitivity; iterating from rest locks strongly
        # curled targets into an alternating-bend local trap
        # the tip angle is the accumulated bend, not a modular heading, so
        # errors are plain differences; wrapping a deep curl to the short
        # way around sends the arm toward an unreachable mirror pose
        obs0 = pl.observe(state, dist, rng_seed * 10000 + max_iter)
        theta_err0 = target.theta - obs0.tip_theta
        pairs = np.zeros((n, 2))
        for i in range(n):
            dtheta_dpb = max(self.single_jacs[i][2, 0], 1e-9)
            pb = float(np.clip(theta_err0 / (n * dtheta_dpb), -pmax, pmax))
            pairs[i] = airbag_2d(pb, max(abs(pb), pmax), pmax)[0]
        pos_errors, rot_errors = [], []
        alignments = []
        converged = False
        iterations = 0
        for it in range(max_iter):
            obs = pl.observe(state, dist, rng_seed * 10000 + it)
            tips = obs.tips
            X, Y = tips[:, 0], tips[:, 1]
            try:
                est = kin.estimate_params(X, Y, n)
                configs = np.column_stack([est.K, est.L])
            except kin.KinematicsError:
                configs = state.pose.copy()
            tip = np.array([X[-1], Y[-1], obs.tip_theta])
            e_pos = float(np.hypot(target.x - tip[0], target.y - tip[1]))
            e_theta = float(target.theta - tip[2])
            pos_errors.append(e_pos)
            rot_errors.append(float(np.degrees(abs(e_theta))))
            if e_pos < tol_pos and abs(np.degrees(e_theta)) < tol_rot_deg:
                converged = True
                break
            iterations = it + 1
            # distant or strongly rotated goals are chased through a nearer
            # interpolated pose; the linearized step is local
            splits = max(1, int(np.ceil(e_pos / self.max_chase)),
                         int(np.ceil(abs(e_theta) / self.max_chase_rot)))
            frac = 1.0 / splits
            goal = np.array([
                tip[0] + frac * (target.x - tip[0]),
                tip[1] + frac * (target.y - tip[1]),
                tip[2] + frac * e_theta,
            ])
            M_tip = _pose2d_matrix(*tip)
            M_goal = _pose2d_matrix(*goal)
            rel = _invert_pose2d(M_tip) @ M_goal
            dtheta = np.arctan2(rel[0, 1], rel[0, 0])
            dx = np.array([rel[0, 2], rel[1, 2], dtheta])
            J = assemble_planar_jacobian(configs, self.single_jacs)
            dx[2] *= ANGLE_LEVER_MM
            Jw = J.copy()
            Jw[2, :] *= ANGLE_LEVER_MM
            gen = np.array([generalized_2d(p_l, p_r) for p_l, p_r in pairs])
            dp = feedback_step(Jw, dx, self.step)
            # rail-aware re-solve: a component already at its pressure rail
            # contributes nothing when pushed further in; drop those columns
            # and re-solve so the step routes through live actuators
            flat = gen.reshape(-1)
            lo = np.tile([-pmax, 0.0], n)
            hi = np.tile([pmax, 2.0 * pmax], n)
            blocked = (((flat >= hi - 1e-9) & (dp > 0.0))
                       | ((flat <= lo + 1e-9) & (dp < 0.0)))
            if np.any(blocked) and not np.all(blocked):
                Jw2 = Jw.copy()
                Jw2[:, blocked] = 0.0
                try:
                    dp = feedback_step(Jw2, dx, self.step)
                    dp[blocked] = 0.0
                    Jw = Jw2
                except JacobianError:
                    pass
            alignments.append(float((Jw @ dp) @ dx))
            gen = gen + dp.reshape(n, 2)
            # grant the demanded bend by adjusting the elongation component
            # instead of letting the airbag projection shrink the bend
            bend = np.abs(gen[:, 0])
            over = bend > pmax
            gen[over, 0] *= pmax / bend[over]
            bend = np.abs(gen[:, 0])
            gen[:, 1] = np.clip(gen[:, 1], bend, 2.0 * pmax - bend)
            pairs = np.array(
                [airbag_2d(*gen[i], pmax)[0] for i in range(n)])
            cmd = pl.PressureCommand(pairs)
            for _ in range(max(1, self.settle_steps)):
                state = pl.step(state, cmd, dist)
        return RunReport(converged, iterations, pos_errors, rot_errors,
                         alignments), state
