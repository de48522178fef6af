"""Model-free tabular Q-learning controller.

States discretize the tip-to-target vector into distance and angle
intervals; actions inflate or deflate one segment's airbag pair by a
fixed increment; reward is the distance reduction toward the target.
Training marks states once a positive-valued action is found and
propagates values to unmarked neighbors on the (distance, angle) grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from shapely.affinity import translate
from shapely.geometry import Point, Polygon

from . import kinematics as kin
from . import plant as pl

QTABLE_FORMAT_VERSION = 1


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class StatePartition:
    """m distance intervals over [0, l_max] and n angle intervals over
    [0, 2pi). Angle is measured clockwise from the negative y-axis.

    With r > 1 each (distance, angle) cell is further split into r bins
    of the tip orientation error over [-theta_span, theta_span]; errors
    beyond the span fall into the edge bins. The default r = 1 ignores
    orientation entirely."""

    m: int = 16
    n: int = 18
    l_max: float = 480.0
    r: int = 1
    theta_span: float = 1.5

    @property
    def n_states(self) -> int:
        return self.m * self.n * self.r

    def polar(self, d: np.ndarray) -> tuple[float, float]:
        l = float(np.hypot(d[0], d[1]))
        theta = float(np.arctan2(d[0], -d[1])) % (2.0 * np.pi)
        return l, theta

    def state_of(self, d) -> tuple[int, int]:
        d = np.asarray(d, dtype=float)
        l, theta = self.polar(d)
        if l > self.l_max:
            raise PartitionError(f"distance {l:.1f} outside partition range")
        i = min(int(l / self.l_max * self.m), self.m - 1)
        j = min(int(theta / (2.0 * np.pi) * self.n), self.n - 1)
        return i, j

    def orientation_bin(self, theta_err: float) -> int:
        frac = (theta_err + self.theta_span) / (2.0 * self.theta_span)
        return int(np.clip(int(frac * self.r), 0, self.r - 1))

    def state_id(self, d, theta_err: float = 0.0) -> int:
        i, j = self.state_of(d)
        return (i * self.n + j) * self.r + self.orientation_bin(theta_err)

    def decode(self, s: int) -> tuple[int, int, int]:
        ij, c = divmod(s, self.r)
        i, j = divmod(ij, self.n)
        return i, j, c

    def neighbor_ids(self, s: int):
        """Neighboring state ids: the 8-neighborhood on the (distance,
        angle) grid crossed with adjacent orientation bins."""
        i, j, c = self.decode(s)
        for ni, nj in self.neighbors(i, j):
            for nc in (c - 1, c, c + 1):
                if 0 <= nc < self.r:
                    yield (ni * self.n + nj) * self.r + nc

    def cell_bounds(self, i: int, j: int) -> tuple[float, float, float, float]:
        dl = self.l_max / self.m
        dth = 2.0 * np.pi / self.n
        return i * dl, (i + 1) * dl, j * dth, (j + 1) * dth

    def cell_polygon(self, i: int, j: int, arc_points: int = 6) -> Polygon:
        """Annular-sector cell around the partition center (the target)."""
        l0, l1, t0, t1 = self.cell_bounds(i, j)
        ts = np.linspace(t0, t1, arc_points)
        # clockwise from -y: direction (sin t, -cos t)
        outer = [(l1 * np.sin(t), -l1 * np.cos(t)) for t in ts]
        if l0 == 0.0:
            pts = outer + [(0.0, 0.0)]
        else:
            inner = [(l0 * np.sin(t), -l0 * np.cos(t)) for t in reversed(ts)]
            pts = outer + inner
        return Polygon(pts)

    def neighbors(self, i: int, j: int):
        """8-neighborhood; the angle index wraps around."""
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == 0 and dj == 0:
                    continue
                ni = i + di
                if not 0 <= ni < self.m:
                    continue
                yield ni, (j + dj) % self.n


@dataclass(frozen=True)
class ActionDef:
    segment: int
    sign_l: int
    sign_r: int

    def __post_init__(self):
        if self.sign_l not in (-1, 1) or self.sign_r not in (-1, 1):
            raise ValueError("action signs must be +/-1")


def full_action_set(n_segments: int) -> list[ActionDef]:
    pairs = [(1, 1), (-1, -1), (-1, 1), (1, -1)]
    return [ActionDef(i, sl, sr) for i in range(n_segments) for sl, sr in pairs]


def experiment_action_set(n_segments: int) -> list[ActionDef]:
    """Elongating and bending actions only (no shortening pair)."""
    pairs = [(1, 1), (-1, 1), (1, -1)]
    return [ActionDef(i, sl, sr) for i in range(n_segments) for sl, sr in pairs]


@dataclass
class QTable:
    partition: StatePartition
    n_actions: int
    values: np.ndarray = None
    marks: np.ndarray = None

    def __post_init__(self):
        if self.values is None:
            self.values = np.zeros((self.partition.n_states, self.n_actions))
        if self.marks is None:
            self.marks = np.zeros(self.partition.n_states, dtype=bool)
        if self.values.shape != (self.partition.n_states, self.n_actions):
            raise ValueError("value matrix shape mismatch")

    @property
    def marked_count(self) -> int:
        return int(self.marks.sum())


def reward(d_before, d_after) -> float:
    return float(np.linalg.norm(d_before) - np.linalg.norm(d_after))


def q_update(q: QTable, s: int, a: int, r: float, s_next: int,
             alpha: float, gamma: float) -> None:
    best_next = q.values[s_next].max()
    q.values[s, a] += alpha * (r + gamma * best_next - q.values[s, a])


def mark_and_propagate(q: QTable, s: int) -> bool:
    """Mark state s; every unmarked neighbor gets, per action, the average
    of its own marked neighbors' values. Returns True for a new mark."""
    if q.marks[s]:
        return False
    q.marks[s] = True
    part = q.partition
    for nid in part.neighbor_ids(s):
        if q.marks[nid]:
            continue
        marked_vals = [
            q.values[mid]
            for mid in part.neighbor_ids(nid)
            if q.marks[mid]
        ]
        if marked_vals:
            q.values[nid] = np.mean(marked_vals, axis=0)
    return True


def refine_states(workspace: Polygon, partition: StatePartition,
                  periphery_samples: int = 72) -> np.ndarray:
    """Available-state mask: sweep the partition center along the workspace
    periphery and record cells that intersect (or sit inside) the workspace."""
    if workspace.is_empty:
        raise PartitionError("workspace polygon is degenerate")
    available = np.zeros(partition.m * partition.n, dtype=bool)
    cells = [
        partition.cell_polygon(i, j)
        for i in range(partition.m) for j in range(partition.n)
    ]
    boundary = workspace.exterior if isinstance(workspace, Polygon) else workspace
    length = boundary.length
    if length == 0.0:
        centers = [boundary.coords[0]]
    else:
        centers = [
            boundary.interpolate(f * length, normalized=False).coords[0]
            for f in np.linspace(0.0, 1.0, periphery_samples, endpoint=False)
        ]
    for cx, cy in centers:
        shifted = translate(workspace, xoff=-cx, yoff=-cy)
        for sid, cell in enumerate(cells):
            if not available[sid] and cell.intersects(shifted):
                available[sid] = True
    # orientation bins share their cell's spatial availability
    return np.repeat(available, partition.r)


@dataclass(frozen=True)
class TrainParams:
    alpha: float = 0.5
    gamma: float = 0.9
    epsilon: float = 0.1
    patience: int = 30               # no-new-mark window T
    marked_target: float = 0.5       # P
    threshold: float = 10.0          # mm
    pressure_increment: float = 0.03 # MPa per action
    max_outer: int = 5000
    max_steps: int = 200

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")


@dataclass
class QArm:
    """Plant wrapper holding the accumulated pressure command."""

    state: pl.PlantState
    pressures: np.ndarray = None
    dist: pl.Disturbance = pl.NO_DISTURBANCE

    def __post_init__(self):
        if self.pressures is None:
            self.pressures = np.zeros((self.state.n, 2))

    def tip(self) -> np.ndarray:
        pose = kin.tip_pose_2d(self.state.config_2d())
        return np.array([pose.x, pose.y])

    def tip_theta(self) -> float:
        return kin.tip_pose_2d(self.state.config_2d()).theta

    def vent(self, settle_steps: int = 10) -> None:
        """Release all airbags and let the arm settle back to rest."""
        self.pressures[:] = 0.0
        for _ in range(settle_steps):
            self.state = pl.step(self.state, pl.PressureCommand(self.pressures),
                                 self.dist)

    def apply(self, action: ActionDef, increment: float) -> None:
        pmax = self.state.specs[action.segment].pressure_max
        p = self.pressures[action.segment]
        p[0] = np.clip(p[0] + action.sign_l * increment, 0.0, pmax)
        p[1] = np.clip(p[1] + action.sign_r * increment, 0.0, pmax)
        self.state = pl.step(self.state, pl.PressureCommand(self.pressures),
                             self.dist)


def workspace_polygon(specs, samples: int = 400, seed: int = 1234) -> Polygon:
    """Convex hull of randomly sampled reachable tip positions."""
    rng = np.random.default_rng(seed)
    pts = []
    for _ in range(samples):
        K = np.array([
            rng.uniform(-s.max_curvature, s.max_curvature) for s in specs])
        L = np.array([
            rng.uniform(s.rest_length, s.max_length) for s in specs])
        tip = kin.tip_pose_2d(kin.ConfigurationSpace(K, L))
        pts.append((tip.x, tip.y))
    from shapely.geometry import MultiPoint
    return MultiPoint(pts).convex_hull


def _select_target(workspace: Polygon, rng: np.random.Generator) -> np.ndarray:
    minx, miny, maxx, maxy = workspace.bounds
    for _ in range(10000):
        x = rng.uniform(minx, maxx)
        y = rng.uniform(miny, maxy)
        if workspace.contains(Point(x, y)):
            return np.array([x, y])
    raise PartitionError("could not sample a target inside the workspace")


def _epsilon_greedy(q: QTable, s: int, rng: np.random.Generator,
                    epsilon: float) -> int:
    if rng.random() < epsilon:
        return int(rng.integers(q.n_actions))
    return int(np.argmax(q.values[s]))


@dataclass
class TrainResult:
    q: QTable
    policy: np.ndarray
    outer_iterations: int
    available: np.ndarray
    marked_history: list[int]
    reached_target: bool


def train(arm: QArm, partition: StatePartition, actions: list[ActionDef],
          params: TrainParams = TrainParams(), seed: int = 0,
          workspace: Polygon | None = None) -> TrainResult:
    """Episodic training against random targets until the marked proportion
    of available states exceeds the target (Z grows by marking)."""
    rng = np.random.default_rng(seed)
    if workspace is None:
        workspace = workspace_polygon(arm.state.specs)
    available = refine_states(workspace, partition)
    n_avail = int(available.sum())
    q = QTable(partition, len(actions))
    marked_history = []
    outer = 0
    reached = False
    while outer < params.max_outer:
        outer += 1
        target = _select_target(workspace, rng)
        d = target - arm.tip()
        no_mark_steps = 0
        for _ in range(params.max_steps):
            if np.linalg.norm(d) <= params.threshold:
                break
            try:
                s = partition.state_id(d)
            except PartitionError:
                break
            a = _epsilon_greedy(q, s, rng, params.epsilon)
            arm.apply(actions[a], params.pressure_increment)
            d_new = target - arm.tip()
            r = reward(d, d_new)
            try:
                s_new = partition.state_id(d_new)
            except PartitionError:
                break
            q_update(q, s, a, r, s_new, params.alpha, params.gamma)
            newly_marked = False
            if q.values[s, a] > 0.0:
                newly_marked = mark_and_propagate(q, s)
            no_mark_steps = 0 if newly_marked else no_mark_steps + 1
            if no_mark_steps >= params.patience:
                break
            d = d_new
        marked_history.append(q.marked_count)
        marked_avail = int((q.marks & available).sum())
        if n_avail > 0 and marked_avail / n_avail > params.marked_target:
            reached = True
            break
    policy = np.argmax(q.values, axis=1)
    return TrainResult(q, policy, outer, available, marked_history, reached)


@dataclass
class ControlResult:
    reached: bool
    steps: int
    distances: list[float]


def control(arm: QArm, policy: np.ndarray, partition: StatePartition,
            actions: list[ActionDef], target, threshold: float = 10.0,
            max_steps: int = 200, epsilon: float = 0.0, seed: int = 0,
            pressure_increment: float = 0.03) -> ControlResult:
    """Greedy (or epsilon-greedy) action loop; no updates, no marking."""
    rng = np.random.default_rng(seed)
    target = np.asarray(target, dtype=float)
    distances = []
    d = target - arm.tip()
    distances.append(float(np.linalg.norm(d)))
    for step_i in range(max_steps):
        if distances[-1] <= threshold:
            return ControlResult(True, step_i, distances)
        try:
            s = partition.state_id(d)
        except PartitionError:
            return ControlResult(False, step_i, distances)
        if epsilon > 0.0 and rng.random() < epsilon:
            a = int(rng.integers(len(actions)))
        else:
            a = int(policy[s])
        arm.apply(actions[a], pressure_increment)
        d = target - arm.tip()
        distances.append(float(np.linalg.norm(d)))
    return ControlResult(distances[-1] <= threshold, max_steps, distances)


def online_adapt(arm: QArm, q: QTable, partition: StatePartition,
                 actions: list[ActionDef], targets,
                 params: TrainParams = TrainParams(), seed: int = 0,
                 max_steps: int = 200) -> list[ControlResult]:
    """Keep updating Q while controlling under a changed plant; one result
    per target in order."""
    rng = np.random.default_rng(seed)
    results = []
    for target in targets:
        target = np.asarray(target, dtype=float)
        distances = []
        d = target - arm.tip()
        distances.append(float(np.linalg.norm(d)))
        reached = False
        steps = 0
        for step_i in range(max_steps):
            if distances[-1] <= params.threshold:
                reached = True
                break
            steps = step_i + 1
            try:
                s = partition.state_id(d)
            except PartitionError:
                break
            a = _epsilon_greedy(q, s, rng, params.epsilon)
            arm.apply(actions[a], params.pressure_increment)
            d_new = target - arm.tip()
            r = reward(d, d_new)
            try:
                s_new = partition.state_id(d_new)
            except PartitionError:
                break
            q_update(q, s, a, r, s_new, params.alpha, params.gamma)
            if q.values[s, a] > 0.0:
                mark_and_propagate(q, s)
            d = d_new
            distances.append(float(np.linalg.norm(d)))
        results.append(ControlResult(reached, steps, distances))
    return results


def save_qtable(q: QTable, path) -> None:
    payload = {
        "format_version": QTABLE_FORMAT_VERSION,
        "partition": {"m": q.partition.m, "n": q.partition.n,
                      "l_max": q.partition.l_max, "r": q.partition.r,
                      "theta_span": q.partition.theta_span},
        "n_actions": q.n_actions,
        "values": q.values.tolist(),
        "marks": q.marks.astype(int).tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_qtable(path) -> QTable:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format_version") != QTABLE_FORMAT_VERSION:
        raise ValueError("unsupported Q-table format version")
    part = StatePartition(**payload["partition"])
    q = QTable(part, payload["n_actions"],
               values=np.array(payload["values"]),
               marks=np.array(payload["marks"], dtype=bool))
    return q
