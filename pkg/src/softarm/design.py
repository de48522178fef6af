"""Closed-form design analysis: flexibility, load moment, buckling limits,
and the wall-thickness x groove-depth sweep with feasible-region
intersection.

The finite-element surfaces are replaced by an analytic surrogate
calibrated to reproduce the qualitative behavior of the honeycomb
design study: flexibility rises with groove depth and falls with wall
thickness, while the load surface has an interior ridge that moves to
deeper grooves as walls thicken.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class ArmGeometry:
    """Bending geometry: min bend radius R, rest/max lengths, width D."""

    R: float
    L0: float
    L1: float
    D: float

    def __post_init__(self):
        if not (self.L1 >= self.L0 > 0.0):
            raise GeometryError("lengths must satisfy L1 >= L0 > 0")
        if self.R <= self.D / 3.0:
            raise GeometryError("bend radius too small for the arm width")

    @property
    def R0(self) -> float:
        return self.R - self.D / 3.0

    @property
    def R1(self) -> float:
        return self.R + self.D / 3.0


def flexibility(geom: ArmGeometry) -> float:
    """Relative flexibility: swept reachable area over L0 squared."""
    return (1.0 / (3.0 * geom.L0 ** 2)) * (
        geom.L1 ** 3 / geom.R1 - geom.L0 ** 3 / geom.R0)


def _region_membership(px: np.ndarray, py: np.ndarray,
                       R: float, L: float) -> np.ndarray:
    """Points swept by an arm of length L bending progressively at radius R.

    The sweeping free part at bend angle t is the tangent ray from the
    arc anchor; inverting that map gives a closed-form membership test:
    the tangent length is sqrt(|p - C|^2 - R^2) with C the bend center.
    """
    dx = px - R
    dy = py
    d2 = dx * dx + dy * dy
    inside_circle = d2 <= R * R
    s = np.sqrt(np.maximum(d2 - R * R, 0.0))
    theta = (np.pi - np.arctan2(s, R)) - np.arctan2(dy, dx)
    theta = np.mod(theta, 2.0 * np.pi)
    ok = (~inside_circle) & (theta <= L / R) & (s <= L - R * theta)
    return ok


def reachable_area_mc(geom: ArmGeometry, samples: int = 100_000,
                      seed: int = 0) -> float:
    """Monte-Carlo estimate of 2 * (outer area - inner area) / L0^2."""
    if samples < 1:
        raise GeometryError("need at least one sample")
    rng = np.random.default_rng(seed)
    # bounding box from the outer sweep boundary curves
    ts = np.linspace(0.0, geom.L1 / geom.R1, 200)
    ax = geom.R1 * (1.0 - np.cos(ts))
    ay = geom.R1 * np.sin(ts)
    tipx = ax + (geom.L1 - geom.R1 * ts) * np.sin(ts)
    tipy = ay + (geom.L1 - geom.R1 * ts) * np.cos(ts)
    xs = np.concatenate([ax, tipx, [0.0]])
    ys = np.concatenate([ay, tipy, [0.0, geom.L1]])
    lo_x, hi_x = xs.min(), xs.max()
    lo_y, hi_y = ys.min(), ys.max()
    box_area = (hi_x - lo_x) * (hi_y - lo_y)
    count1 = 0
    count0 = 0
    chunk = 200_000
    remaining = samples
    while remaining > 0:
        n = min(chunk, remaining)
        remaining -= n
        px = rng.uniform(lo_x, hi_x, n)
        py = rng.uniform(lo_y, hi_y, n)
        count1 += int(_region_membership(px, py, geom.R1, geom.L1).sum())
        count0 += int(_region_membership(px, py, geom.R0, geom.L0).sum())
    return 2.0 * box_area * (count1 - count0) / samples / geom.L0 ** 2


@dataclass(frozen=True)
class SpringModel:
    """Hexagon-unit spring abstraction of the staggered honeycomb walls."""

    S: float   # airbag contact area
    p: float   # pressure
    a: float   # half edge length
    k1: float
    k2: float
    k3: float

    def __post_init__(self):
        if min(self.k1, self.k2, self.k3) < 0.0 or self.k1 + self.k2 + self.k3 <= 0.0:
            raise GeometryError("spring coefficients must be non-negative, not all zero")


def load_moment(model: SpringModel) -> float:
    ksum = model.k1 + model.k2 + model.k3
    return model.S * model.p * model.a * (
        1.0 + 2.0 * (model.k3 - model.k1) / ksum)


def euler_critical(E: float, I: float, L: float) -> float:
    """Critical compressive load of a column fixed at one end."""
    if min(E, I, L) <= 0.0:
        raise GeometryError("E, I and L must be positive")
    return np.pi ** 2 * E * I / (2.0 * L) ** 2


def flexural_torsional_critical(G: float, J: float, E_y: float, I_y: float,
                                L: float) -> float:
    """Critical end moment for combined lateral bending and twist."""
    if min(G, J, E_y, I_y, L) <= 0.0:
        raise GeometryError("all stiffness parameters must be positive")
    return np.pi * np.sqrt(G * J * E_y * I_y) / L


def solve_bending(E=None, I=None, M=None, rho=None) -> float:
    """Solve E*I = M*rho for the single missing quantity."""
    unknowns = [name for name, v in
                (("E", E), ("I", I), ("M", M), ("rho", rho)) if v is None]
    if len(unknowns) != 1:
        raise GeometryError("exactly one unknown required")
    if E is None:
        return M * rho / I
    if I is None:
        return M * rho / E
    if M is None:
        return E * I / rho
    return E * I / M


def solve_rotation(G=None, J=None, theta=None, T=None) -> float:
    """Solve G*J*theta = T for the single missing quantity."""
    unknowns = [name for name, v in
                (("G", G), ("J", J), ("theta", theta), ("T", T)) if v is None]
    if len(unknowns) != 1:
        raise GeometryError("exactly one unknown required")
    if G is None:
        return T / (J * theta)
    if J is None:
        return T / (G * theta)
    if theta is None:
        return T / (G * J)
    return G * J * theta


# ---------------------------------------------------------------------------
# Wall thickness x groove depth sweep
# ---------------------------------------------------------------------------

DEFAULT_W_GRID = np.arange(2.0, 4.51, 0.5)   # mm
DEFAULT_D_GRID = np.arange(0.0, 6.01, 1.0)   # mm


@dataclass(frozen=True)
class SurrogateParams:
    f0: float = 0.14
    c_d: float = 0.12
    c_w: float = 0.35
    m0: float = 2.9      # N*m scale of the load surface
    c1: float = 0.8
    c3: float = 0.02
    ridge_slope: float = 1.45


def surrogate_flexibility(w, d, p: SurrogateParams = SurrogateParams()):
    w = np.asarray(w, dtype=float)
    d = np.asarray(d, dtype=float)
    return p.f0 * (1.0 + p.c_d * d) / (1.0 + p.c_w * (w - 2.0))


def surrogate_load(w, d, p: SurrogateParams = SurrogateParams()):
    w = np.asarray(w, dtype=float)
    d = np.asarray(d, dtype=float)
    ridge = p.ridge_slope * (w - 2.0)
    return p.m0 * (1.0 - np.exp(-p.c1 * w)) * np.exp(-p.c3 * (d - ridge) ** 2)


@dataclass
class PerformanceSurface:
    w_grid: np.ndarray
    d_grid: np.ndarray
    flexibility: np.ndarray   # (len(w), len(d))
    load: np.ndarray          # (len(w), len(d)), N*m


def sweep(w_grid=None, d_grid=None,
          params: SurrogateParams = SurrogateParams()) -> PerformanceSurface:
    w_grid = DEFAULT_W_GRID if w_grid is None else np.asarray(w_grid, dtype=float)
    d_grid = DEFAULT_D_GRID if d_grid is None else np.asarray(d_grid, dtype=float)
    W, D = np.meshgrid(w_grid, d_grid, indexing="ij")
    return PerformanceSurface(
        w_grid=w_grid, d_grid=d_grid,
        flexibility=surrogate_flexibility(W, D, params),
        load=surrogate_load(W, D, params),
    )


def load_ridge(surface: PerformanceSurface) -> np.ndarray:
    """Per wall thickness, the groove depth maximizing the load moment."""
    idx = np.argmax(surface.load, axis=1)
    return surface.d_grid[idx]


def feasible_region(surface: PerformanceSurface, f_min: float,
                    M_min: float) -> list[tuple[float, float]]:
    """Grid points meeting both thresholds; an empty list is a valid answer."""
    mask = (surface.flexibility >= f_min) & (surface.load >= M_min)
    points = []
    for i, w in enumerate(surface.w_grid):
        for j, d in enumerate(surface.d_grid):
            if mask[i, j]:
                points.append((float(w), float(d)))
    return points
