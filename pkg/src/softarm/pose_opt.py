"""Task-space target to configuration-space pose via weighted cost descent.

The decision variables are the tip positions of the middle segments; the
final tip is pinned to the target. The combined cost penalizes infeasible
(k, l) pairs, orientation mismatch (quartic) and uneven deformation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kinematics as kin


class UnreachableTargetError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentLimits:
    k_min: float
    k_max: float
    l_min: float
    l_max: float

    def __post_init__(self):
        if not (self.k_min < self.k_max and self.l_min < self.l_max):
            raise ValueError("limits must satisfy min < max")

    @property
    def k_avg(self) -> float:
        return 0.5 * (self.k_min + self.k_max)

    @property
    def l_avg(self) -> float:
        return 0.5 * (self.l_min + self.l_max)

    @classmethod
    def from_spec(cls, spec) -> "SegmentLimits":
        return cls(k_min=-spec.max_curvature, k_max=spec.max_curvature,
                   l_min=spec.rest_length, l_max=spec.max_length)


@dataclass(frozen=True)
class CostWeights:
    alpha: float = 100.0
    beta: float = 10.0
    gamma: float = 1.0
    delta: float = 1e-3

    def __post_init__(self):
        if not self.alpha > self.beta > self.gamma > 0:
            raise ValueError("weights must satisfy alpha > beta > gamma > 0")
        if self.delta <= 0:
            raise ValueError("smoothing delta must be positive")


@dataclass(frozen=True)
class Target2D:
    x: float
    y: float
    theta: float
    theta_root: float = 0.0


def cost_feasibility(config: kin.ConfigurationSpace, limits: SegmentLimits,
                     delta: float) -> float:
    f = (np.abs(2.0 * (config.L - limits.l_avg) / (limits.l_max - limits.l_min))
         + np.abs(2.0 * (config.K - limits.k_avg) / (limits.k_max - limits.k_min))
         - 1.0)
    return float(np.sum(np.sqrt(f * f + delta * delta) + f))


def cost_orientation(config: kin.ConfigurationSpace, target: Target2D) -> float:
    theta_n = float(np.sum(config.K * config.L))
    return (target.theta - target.theta_root - theta_n) ** 4


def cost_uniformity(config: kin.ConfigurationSpace, limits: SegmentLimits) -> float:
    dl = (config.L - limits.l_avg) / (limits.l_max - limits.l_min)
    dk = (config.K - limits.k_avg) / (limits.k_max - limits.k_min)
    return float(np.sum(dl * dl + dk * dk))


_PENALTY = 1e9


def combined_cost(tips_flat: np.ndarray, target: Target2D, n: int,
                  limits: SegmentLimits, weights: CostWeights,
                  beta_scale: float = 1.0) -> float:
    """Cost of a candidate pose given the flattened middle-tip coordinates."""
    X = np.append(tips_flat[0::2], target.x)
    Y = np.append(tips_flat[1::2], target.y)
    try:
        config = kin.estimate_params(X, Y, n)
    except kin.KinematicsError:
        return _PENALTY
    return (weights.alpha * cost_feasibility(config, limits, weights.delta)
            + weights.beta * beta_scale * cost_orientation(config, target)
            + weights.gamma * cost_uniformity(config, limits))


def numeric_gradient(fun, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient."""
    g = np.empty_like(x)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (fun(xp) - fun(xm)) / (2.0 * h)
    return g


def _descend(fun, x0: np.ndarray, max_iter: int = 500,
             grad_tol: float = 1e-6, cost_tol: float = 1e-10) -> tuple[np.ndarray, float]:
    """Backtracking gradient descent; never accepts an uphill step."""
    x = x0.copy()
    cost = fun(x)
    step = 1.0
    for _ in range(max_iter):
        g = numeric_gradient(fun, x)
        gnorm = np.linalg.norm(g)
        if gnorm < grad_tol:
            break
        step = min(step * 2.0, 1e3 / max(gnorm, 1e-12))
        accepted = False
        for _ in range(40):
            cand = x - step * g
            c = fun(cand)
            if c < cost:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        if cost - c < cost_tol:
            x, cost = cand, c
            break
        x, cost = cand, c
    return x, cost


def _initial_tips(target: Target2D, n: int, limits: SegmentLimits,
                  rng: np.random.Generator) -> np.ndarray:
    """Middle tips on the chord to the target plus Gaussian jitter."""
    jitter = 0.1 * limits.l_avg
    tips = []
    for i in range(1, n):
        frac = i / n
        tips.extend([
            target.x * frac + rng.normal(0.0, jitter),
            target.y * frac + rng.normal(0.0, jitter),
        ])
    return np.array(tips)


def _arc_tips(target: Target2D, n: int, limits: SegmentLimits) -> np.ndarray:
    """Middle tips of a uniformly curled pose matching the target angle.

    Chord initializations cannot reach strongly rotated targets (the
    descent would have to pass through infeasible kinks), so this start
    distributes the full target rotation evenly over the segments."""
    total = target.theta - target.theta_root
    K = np.full(n, total / (n * limits.l_avg))
    L = np.full(n, limits.l_avg)
    poses = kin.forward_2d(kin.ConfigurationSpace(K, L))[:-1]
    return np.array([c for p in poses for c in (p.x, p.y)])


def optimize_pose(target: Target2D, n: int, limits: SegmentLimits,
                  weights: CostWeights = CostWeights(), rng_seed: int = 0,
                  restarts: int = 5, warm_start: np.ndarray | None = None,
                  ) -> kin.ConfigurationSpace:
    """Find a feasible pose whose tip sits exactly on the target.

    The quartic orientation term is too flat near its root for a single
    descent to reach tight tolerances, so after the weighted solve the
    orientation weight is continued upward and the descent re-run from
    the current point.
    """
    reach = n * limits.l_max
    if np.hypot(target.x, target.y) > reach:
        raise UnreachableTargetError(
            f"target at {np.hypot(target.x, target.y):.1f} mm exceeds reach {reach:.1f} mm"
        )
    rng = np.random.default_rng(rng_seed)
    feasibility_margin = 0.05 * n

    best = None
    inits = []
    if warm_start is not None:
        inits.append(np.asarray(warm_start, dtype=float))
    inits.append(_arc_tips(target, n, limits))
    inits.extend(_initial_tips(target, n, limits, rng) for _ in range(restarts))
    # random feasible configurations whose segment rotations sum to the
    # target angle cover alternating-bend shapes that neither the chord
    # nor the uniform arc can seed; each sampled chain is rotated and
    # scaled about the base so its tip lands on the target, otherwise
    # pinning the final tip kinks the last segment
    phi = target.theta - target.theta_root
    added = 0
    for _ in range(6 * restarts):
        if added >= restarts:
            break
        K = rng.uniform(limits.k_min, limits.k_max, n)
        L = rng.uniform(limits.l_min, limits.l_max, n)
        j = int(rng.integers(n))
        K[j] = (phi - sum(K[i] * L[i] for i in range(n) if i != j)) / L[j]
        if abs(K[j]) > 1.2 * max(abs(limits.k_min), abs(limits.k_max)):
            continue
        chain = kin.forward_2d(kin.ConfigurationSpace(K, L))
        z = np.array([complex(p.x, p.y) for p in chain])
        if abs(z[-1]) < 1e-9:
            continue
        z *= complex(target.x, target.y) / z[-1]
        inits.append(np.array([c for p in z[:-1] for c in (p.real, p.imag)]))
        added += 1

    def _solved(x) -> bool:
        """Orientation already tight and pose feasible: skip further polish."""
        X = np.append(x[0::2], target.x)
        Y = np.append(x[1::2], target.y)
        try:
            config = kin.estimate_params(X, Y, n)
        except kin.KinematicsError:
            return False
        theta_err = abs(target.theta - target.theta_root
                        - float(np.sum(config.K * config.L)))
        return (theta_err < 5e-4
                and cost_feasibility(config, limits, weights.delta)
                < feasibility_margin)

    for x0 in inits:
        x, cost = _descend(
            lambda v: combined_cost(v, target, n, limits, weights), x0)
        for scale in (1e2, 1e4, 1e6, 1e8):
            if _solved(x):
                break
            x, cost = _descend(
                lambda v, s=scale: combined_cost(v, target, n, limits, weights, s),
                x, max_iter=200)
        X = np.append(x[0::2], target.x)
        Y = np.append(x[1::2], target.y)
        try:
            config = kin.estimate_params(X, Y, n)
        except kin.KinematicsError:
            continue
        feas = cost_feasibility(config, limits, weights.delta)
        if feas < feasibility_margin:
            key = combined_cost(x, target, n, limits, weights)
            if best is None or key < best[0]:
                best = (key, config, x)
            if _solved(x):
                break  # feasible and orientation-tight; stop restarting
    if best is None:
        raise UnreachableTargetError("no feasible pose found after restarts")
    return best[1]


def middle_tips_of(config: kin.ConfigurationSpace) -> np.ndarray:
    """Flattened middle-tip vector of a config, usable as a warm start."""
    poses = kin.forward_2d(config)[:-1]
    return np.array([c for p in poses for c in (p.x, p.y)])
