"""Two-level model-based controller with an optional feedback wrapper.

Open loop: pose optimization maps the task-space target to a per-segment
(k, l) config, then the per-segment nets map that config to pressures.
Closed loop: the commanded target is translated by the observed error
each iteration; paths inherit the previous waypoint's residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import confignet as cn
from . import kinematics as kin
from . import plant as pl
from . import pose_opt as po


@dataclass(frozen=True)
class FeedbackParams:
    alpha: float = 1.0
    beta: float = 1.0
    max_iter: int = 10
    tol_pos: float = 2.0     # mm
    tol_rot: float = 0.02    # rad

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class TwoLevelController:
    """Owns the nets and tracks the previously commanded per-segment target."""

    nets: list[cn.Mlp]
    limits: po.SegmentLimits
    pressure_max: float = 0.3
    weights: po.CostWeights = field(default_factory=po.CostWeights)
    use_memory_net: bool = False
    prev_targets: np.ndarray | None = None
    _warm_tips: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.nets)

    def reset(self, rest_length: float | None = None):
        self.prev_targets = None
        self._warm_tips = None
        if rest_length is not None:
            self.prev_targets = np.column_stack(
                [np.zeros(self.n), np.full(self.n, rest_length)])

    def pressures_for_config(self, config: kin.ConfigurationSpace) -> pl.PressureCommand:
        if self.prev_targets is None:
            self.prev_targets = np.column_stack(
                [np.zeros(self.n), (self.limits.l_min) * np.ones(self.n)])
        rows = []
        for i, net in enumerate(self.nets):
            if self.use_memory_net:
                x = np.array([config.K[i], config.L[i],
                              self.prev_targets[i, 0], self.prev_targets[i, 1]])
            else:
                x = np.array([config.K[i], config.L[i]])
            rows.append(cn.predict(net, x, self.pressure_max))
        self.prev_targets = np.column_stack([config.K, config.L])
        return pl.PressureCommand(np.array(rows))

    def control_point(self, target: po.Target2D, rng_seed: int = 0) -> pl.PressureCommand:
        # a warm start from the previous solve almost always lands, so the
        # random restarts mostly pay off on the first solve of a target
        restarts = 1 if self._warm_tips is not None else 5
        config = po.optimize_pose(target, self.n, self.limits, self.weights,
                                  rng_seed=rng_seed, restarts=restarts,
                                  warm_start=self._warm_tips)
        self._warm_tips = po.middle_tips_of(config)
        return self.pressures_for_config(config)


@dataclass
class PointResult:
    errors_pos: list[float]
    errors_rot: list[float]
    iterations: int
    converged: bool
    observed: list[tuple[float, float, float]]

    @property
    def final_pos(self) -> float:
        return self.errors_pos[-1]

    @property
    def final_rot(self) -> float:
        return self.errors_rot[-1]


def _observe_pose(state: pl.PlantState, dist: pl.Disturbance,
                  rng_seed) -> tuple[float, float, float]:
    obs = pl.observe(state, dist, rng_seed)
    x, y = obs.tips[-1]
    return x, y, obs.tip_theta


def feedback_point(ctrl: TwoLevelController, state: pl.PlantState,
                   target: po.Target2D, params: FeedbackParams = FeedbackParams(),
                   dist: pl.Disturbance = pl.NO_DISTURBANCE,
                   rng_seed: int = 0) -> tuple[PointResult, pl.PlantState]:
    """Translate the commanded target by the observed error until within
    tolerance or the iteration cap. Non-convergence returns the final
    error rather than raising."""
    q_star = np.array([target.x, target.y, target.theta])
    q_des = q_star.copy()
    errors_pos, errors_rot, observed = [], [], []
    converged = False
    iterations = 0
    q_last_ok = q_star.copy()
    for it in range(params.max_iter):
        iterations = it + 1
        cmd = None
        for _ in range(4):
            try:
                cmd = ctrl.control_point(
                    po.Target2D(q_star[0], q_star[1], q_star[2],
                                target.theta_root),
                    rng_seed=rng_seed + it)
                break
            except po.UnreachableTargetError:
                # translated command drifted off the workspace; retreat
                # halfway toward the last command that solved
                q_star = 0.5 * (q_star + q_last_ok)
        if cmd is None:
            if not errors_pos:
                raise po.UnreachableTargetError(
                    "target infeasible even without feedback translation")
            iterations = it
            break
        q_last_ok = q_star.copy()
        state = pl.step(state, cmd, dist)
        q_obs = np.array(_observe_pose(state, dist, rng_seed * 1000 + it))
        observed.append(tuple(q_obs))
        e_pos = float(np.hypot(q_des[0] - q_obs[0], q_des[1] - q_obs[1]))
        e_rot = float(abs(q_des[2] - q_obs[2]))
        errors_pos.append(e_pos)
        errors_rot.append(e_rot)
        if e_pos < params.tol_pos and e_rot < params.tol_rot:
            converged = True
            break
        q_star = q_star + params.alpha * (q_des - q_obs)
    return PointResult(errors_pos, errors_rot, iterations, converged, observed), state


def open_loop_point(ctrl: TwoLevelController, state: pl.PlantState,
                    target: po.Target2D, dist: pl.Disturbance = pl.NO_DISTURBANCE,
                    rng_seed: int = 0) -> tuple[PointResult, pl.PlantState]:
    cmd = ctrl.control_point(target, rng_seed=rng_seed)
    state = pl.step(state, cmd, dist)
    q_obs = _observe_pose(state, dist, rng_seed)
    e_pos = float(np.hypot(target.x - q_obs[0], target.y - q_obs[1]))
    e_rot = float(abs(target.theta - q_obs[2]))
    result = PointResult([e_pos], [e_rot], 1, False, [q_obs])
    return result, state


def track_path(ctrl: TwoLevelController, state: pl.PlantState,
               waypoints: list[po.Target2D],
               params: FeedbackParams = FeedbackParams(),
               dist: pl.Disturbance = pl.NO_DISTURBANCE,
               rng_seed: int = 0) -> tuple[list[PointResult], pl.PlantState]:
    """Follow closely spaced waypoints, inheriting each residual error.

    With beta = 1 the update telescopes: the next command is the previous
    command plus the waypoint delta minus the observed residual.
    """
    if len(waypoints) < 2:
        raise ValueError("a path needs at least two waypoints")
    results = []
    q_star = np.array([waypoints[0].x, waypoints[0].y, waypoints[0].theta])
    q_prev_des = q_star.copy()
    q_obs = None
    cmd = None
    for i, wp in enumerate(waypoints):
        q_des = np.array([wp.x, wp.y, wp.theta])
        if i > 0:
            q_star = q_star + (q_des - q_prev_des) + params.beta * (q_prev_des - q_obs)
        try:
            cmd = ctrl.control_point(
                po.Target2D(q_star[0], q_star[1], q_star[2], wp.theta_root),
                rng_seed=rng_seed + i)
        except po.UnreachableTargetError:
            # off-workspace correction: hold the previous command instead
            if cmd is None:
                raise
        state = pl.step(state, cmd, dist)
        q_obs = np.array(_observe_pose(state, dist, rng_seed * 1000 + i))
        e_pos = float(np.hypot(q_des[0] - q_obs[0], q_des[1] - q_obs[1]))
        e_rot = float(abs(q_des[2] - q_obs[2]))
        results.append(PointResult([e_pos], [e_rot], 1,
                                   e_pos < params.tol_pos and e_rot < params.tol_rot,
                                   [tuple(q_obs)]))
        q_prev_des = q_des
    return results, state
