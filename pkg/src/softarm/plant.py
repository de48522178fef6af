"""Synthetic pneumatic-arm plant the controllers are tested against.

Each segment responds quasi-statically to airbag pressures through a
smooth, monotone, saturating law and carries a single-pole viscoelastic
memory: realized pose = (1 - eta) * target + eta * previous pose.

2D segments take a (p_l, p_r) pair; 3D segments take four airbag pressures
that reduce to generalized (p_sx, p_sy, p_sz).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import kinematics as kin

GRAVITY_N_PER_G = 9.81e-3


class PlantError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentSpec:
    rest_length: float = 50.0          # mm
    max_elongation: float = 50.0       # mm
    max_curvature: float = 0.025       # 1/mm, keeps k*l below pi/2
    bend_gain: float = 1.2             # curvature fraction per unit pressure ratio
    elong_gain: float = 1.0            # elongation fraction per unit pressure ratio
    pressure_max: float = 0.3          # MPa
    memory_coeff: float = 0.2          # eta, dimensionless
    compliance: float = 2e-3           # curvature per N of lateral force

    def __post_init__(self):
        if self.bend_gain <= 0 or self.elong_gain <= 0:
            raise PlantError("gains must be positive")
        if not 0.0 <= self.memory_coeff < 1.0:
            raise PlantError("memory coefficient must be in [0, 1)")
        if self.max_curvature * self.rest_length >= np.pi / 2:
            raise PlantError("single-segment bend must stay under 90 degrees")

    @property
    def max_length(self) -> float:
        return self.rest_length + self.max_elongation


@dataclass(frozen=True)
class Disturbance:
    lateral_force: float = 0.0         # N, applied at tip in a fixed direction
    tip_load: float = 0.0              # grams, converted to lateral force
    channel_swap: int | None = None    # segment index with exchanged channels
    sensor_noise_sigma: float = 0.0    # mm

    def __post_init__(self):
        if self.lateral_force < 0 or self.tip_load < 0:
            raise PlantError("forces and loads must be non-negative")

    @property
    def total_force(self) -> float:
        return self.lateral_force + self.tip_load * GRAVITY_N_PER_G


NO_DISTURBANCE = Disturbance()


@dataclass
class PressureCommand:
    """2D: pressures shape (n, 2) as (p_l, p_r); 3D: shape (n, 4)."""

    pressures: np.ndarray

    def __post_init__(self):
        self.pressures = np.asarray(self.pressures, dtype=float)
        if self.pressures.ndim != 2 or self.pressures.shape[1] not in (2, 4):
            raise PlantError("pressures must be (n, 2) or (n, 4)")

    @property
    def is_3d(self) -> bool:
        return self.pressures.shape[1] == 4

    def validate(self, specs) -> None:
        for i, spec in enumerate(specs):
            p = self.pressures[i]
            if np.any(p < 0.0) or np.any(p > spec.pressure_max):
                raise PlantError(
                    f"segment {i}: pressure out of [0, {spec.pressure_max}] MPa: {p}"
                )
        if self.is_3d:
            bad = np.abs(
                self.pressures[:, 0] + self.pressures[:, 3]
                - self.pressures[:, 1] - self.pressures[:, 2]
            )
            if np.any(bad > 1e-9):
                raise PlantError("3D command must satisfy p1 + p4 = p2 + p3")


def response_2d(spec: SegmentSpec, p_l: float, p_r: float) -> tuple[float, float]:
    """Steady-state (k, l) a 2D segment settles to under constant pressures."""
    k = spec.max_curvature * np.tanh(spec.bend_gain * (p_r - p_l) / spec.pressure_max)
    frac = np.clip(spec.elong_gain * (p_l + p_r) / (2.0 * spec.pressure_max), 0.0, 1.0)
    l = spec.rest_length + spec.max_elongation * frac
    return k, l


def response_3d(spec: SegmentSpec, quad: np.ndarray) -> tuple[float, float, float]:
    """Steady-state (kx, ky, l) of a quad-actuated segment."""
    psx = -quad[0] + quad[1] - quad[2] + quad[3]
    psy = quad[0] + quad[1] - quad[2] - quad[3]
    psz = quad[0] + quad[1] + quad[2] + quad[3]
    r = np.hypot(psx, psy)
    # the pressure difference sets the total bend angle; inflating all
    # four airbags stretches the arc at that angle, so the curvature
    # drops as the segment lengthens
    theta = (spec.max_curvature * spec.rest_length
             * np.tanh(spec.bend_gain * r / (2.0 * spec.pressure_max)))
    frac = np.clip(spec.elong_gain * psz / (4.0 * spec.pressure_max), 0.0, 1.0)
    l = spec.rest_length + spec.max_elongation * frac
    k = theta / l
    if r < 1e-15:
        kx = ky = 0.0
    else:
        kx, ky = k * psx / r, k * psy / r
    return kx, ky, l


@dataclass
class PlantState:
    """Ground-truth arm state.

    2D rows are (k, l); 3D rows are (kx, ky, l). `prev` holds the previous
    realized rows for the viscoelastic memory.
    """

    specs: tuple[SegmentSpec, ...]
    pose: np.ndarray
    prev: np.ndarray
    is_3d: bool = False
    steps: int = 0

    @classmethod
    def at_rest(cls, specs, is_3d: bool = False) -> "PlantState":
        specs = tuple(specs)
        width = 3 if is_3d else 2
        pose = np.zeros((len(specs), width))
        pose[:, -1] = [s.rest_length for s in specs]
        return cls(specs=specs, pose=pose, prev=pose.copy(), is_3d=is_3d)

    @property
    def n(self) -> int:
        return len(self.specs)

    def config_2d(self) -> kin.ConfigurationSpace:
        if self.is_3d:
            raise PlantError("2D configuration requested from a 3D plant")
        return kin.ConfigurationSpace(self.pose[:, 0], self.pose[:, 1])

    def segment_transforms(self) -> list[np.ndarray]:
        """Per-segment tip transforms relative to each segment base (3D)."""
        if not self.is_3d:
            raise PlantError("segment transforms are a 3D view")
        out = []
        for kx, ky, l in self.pose:
            k = np.hypot(kx, ky)
            phi = np.arctan2(ky, kx) if k > 1e-15 else 0.0
            out.append(kin.arc_transform_3d(phi, k * l, l))
        return out

    def tip_transform(self) -> np.ndarray:
        return kin.chain_transforms(self.segment_transforms())


def _swap_pressures(p: np.ndarray, is_3d: bool) -> np.ndarray:
    if is_3d:
        # exchanging the two airbag groups flips the sign of p_sx
        return p[[1, 0, 3, 2]]
    return p[[1, 0]]


def step(state: PlantState, cmd: PressureCommand,
         dist: Disturbance = NO_DISTURBANCE) -> PlantState:
    """Advance the plant by one quasi-static actuation interval."""
    if cmd.is_3d != state.is_3d:
        raise PlantError("command dimensionality does not match plant")
    if cmd.pressures.shape[0] != state.n:
        raise PlantError("command must address every segment")
    if dist.channel_swap is not None and dist.channel_swap >= state.n:
        raise PlantError("channel swap index out of range")
    cmd.validate(state.specs)

    new_pose = np.empty_like(state.pose)
    force = dist.total_force
    for i, spec in enumerate(state.specs):
        p = cmd.pressures[i]
        if dist.channel_swap == i:
            p = _swap_pressures(p, state.is_3d)
        if state.is_3d:
            target = np.array(response_3d(spec, p))
            target[0] += spec.compliance * force  # force along +x
        else:
            k, l = response_2d(spec, p[0], p[1])
            target = np.array([k + spec.compliance * force, l])
        eta = spec.memory_coeff
        realized = (1.0 - eta) * target + eta * state.pose[i]
        # physical bounds always hold, force or not
        realized[:-1] = np.clip(realized[:-1], -spec.max_curvature, spec.max_curvature)
        realized[-1] = np.clip(realized[-1], spec.rest_length, spec.max_length)
        new_pose[i] = realized
    return replace(state, pose=new_pose, prev=state.pose.copy(),
                   steps=state.steps + 1)


@dataclass
class Observation:
    tips: np.ndarray          # (n, 2) in 2D or (n, 3) in 3D
    tip_theta: float | None   # 2D tangent angle at the tip
    tip_transform: np.ndarray | None  # 3D only


def observe(state: PlantState, dist: Disturbance = NO_DISTURBANCE,
            rng_seed: int | None = None) -> Observation:
    """Marker positions (per-segment tips) with optional Gaussian noise."""
    sigma = dist.sensor_noise_sigma
    rng = np.random.default_rng(rng_seed)
    if state.is_3d:
        tips = []
        T = np.eye(4)
        for Ti in state.segment_transforms():
            T = T @ Ti
            tips.append(T[:3, 3])
        tips = np.array(tips)
        if sigma > 0:
            tips = tips + rng.normal(0.0, sigma, tips.shape)
        return Observation(tips=tips, tip_theta=None, tip_transform=T)
    poses = kin.forward_2d(state.config_2d())
    tips = np.array([[p.x, p.y] for p in poses])
    theta = poses[-1].theta
    if sigma > 0:
        tips = tips + rng.normal(0.0, sigma, tips.shape)
        theta = theta + rng.normal(0.0, sigma / 100.0)
    return Observation(tips=tips, tip_theta=theta, tip_transform=None)


# ---------------------------------------------------------------------------
# Configuration files and trajectory logs
# ---------------------------------------------------------------------------

_SPEC_FIELDS = ("rest_length", "max_elongation", "max_curvature", "bend_gain",
                "elong_gain", "pressure_max", "memory_coeff", "compliance")


def load_plant_config(path) -> tuple[list[SegmentSpec], bool]:
    """Read a key/value plant description.

    Schema: `segments = N`, `dimensionality = 2d|3d`, global defaults as
    `<field> = value`, per-segment overrides as `segment<i>.<field> = value`
    (1-based). Lines starting with # are comments.
    """
    entries = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise PlantError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            entries[key] = value
    n = int(entries.pop("segments", 3))
    is_3d = entries.pop("dimensionality", "2d").lower() == "3d"
    defaults = {k: float(v) for k, v in entries.items() if "." not in k}
    specs = []
    for i in range(1, n + 1):
        fields = dict(defaults)
        prefix = f"segment{i}."
        for key, value in entries.items():
            if key.startswith(prefix):
                fields[key[len(prefix):]] = float(value)
        unknown = set(fields) - set(_SPEC_FIELDS)
        if unknown:
            raise PlantError(f"unknown plant config fields: {sorted(unknown)}")
        specs.append(SegmentSpec(**fields))
    return specs, is_3d


class TrajectoryLog:
    """JSON-lines trajectory writer: one step per line."""

    def __init__(self, path):
        self._fh = open(path, "w")

    def record(self, cmd: PressureCommand, state: PlantState, obs: Observation):
        row = {
            "pressures": cmd.pressures.tolist(),
            "pose": state.pose.tolist(),
            "markers": obs.tips.tolist(),
        }
        if obs.tip_theta is not None:
            row["tip_theta"] = obs.tip_theta
        self._fh.write(json.dumps(row) + "\n")

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def default_specs_2d(n: int = 3, eta: float = 0.2) -> list[SegmentSpec]:
    return [SegmentSpec(memory_coeff=eta) for _ in range(n)]


def default_specs_3d(n: int = 5, eta: float = 0.2) -> list[SegmentSpec]:
    return [SegmentSpec(memory_coeff=eta) for _ in range(n)]
