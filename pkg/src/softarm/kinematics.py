"""Piecewise-constant-curvature kinematics and 3D transform algebra.

All segments are circular arcs. In the planar model the arm grows along +y
from the base, positive curvature bends toward +x, and the accumulated
bend angle theta is measured from the y-axis toward +x. In the 3D model
the arm grows along +z and each segment is parameterized internally by
(azimuth, bend, length); the projected angles (theta_x, theta_y) are a
derived view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

STRAIGHT_EPS = 1e-9


class KinematicsError(ValueError):
    pass


@dataclass
class Pose2D:
    x: float
    y: float
    theta: float


@dataclass
class ConfigurationSpace:
    """Per-segment curvature (1/mm) and arc length (mm)."""

    K: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=float)
        self.L = np.asarray(self.L, dtype=float)
        if self.K.shape != self.L.shape:
            raise KinematicsError("curvature and length vectors differ in size")

    @property
    def n(self) -> int:
        return len(self.K)

    def cumulative_angles(self) -> np.ndarray:
        return np.cumsum(self.K * self.L)


def _arc_tip_local(k: float, l: float) -> tuple[float, float]:
    """Tip of one arc in its local frame (x along bend, y along tangent)."""
    if abs(k) < STRAIGHT_EPS:
        return 0.0, l
    return (1.0 - np.cos(k * l)) / k, np.sin(k * l) / k


def forward_2d(config: ConfigurationSpace) -> list[Pose2D]:
    """Chain arcs and return the pose of every segment tip in the base frame."""
    poses = []
    x, y, theta = 0.0, 0.0, 0.0
    for k, l in zip(config.K, config.L):
        xl, yl = _arc_tip_local(k, l)
        # local frame: x-axis = (cos t, -sin t), y-axis = (sin t, cos t)
        x += np.cos(theta) * xl + np.sin(theta) * yl
        y += -np.sin(theta) * xl + np.cos(theta) * yl
        theta += k * l
        poses.append(Pose2D(x, y, theta))
    return poses


def tip_pose_2d(config: ConfigurationSpace) -> Pose2D:
    return forward_2d(config)[-1]


def estimate_params(X, Y, n: int) -> ConfigurationSpace:
    """Recover per-segment (k, l) from segment tip positions.

    Inverse of forward_2d. Each consecutive tip delta is rotated into the
    local frame of its segment; a segment whose local x is below the
    straight threshold gets k = 0, l = |delta|.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if len(X) != n or len(Y) != n:
        raise KinematicsError("tip arrays must have one entry per segment")
    K = np.empty(n)
    L = np.empty(n)
    theta = 0.0
    px, py = 0.0, 0.0
    for i in range(n):
        dx, dy = X[i] - px, Y[i] - py
        # rotate the global delta into the segment's local frame
        xl = np.cos(theta) * dx - np.sin(theta) * dy
        yl = np.sin(theta) * dx + np.cos(theta) * dy
        r2 = xl * xl + yl * yl
        if r2 == 0.0:
            raise KinematicsError(f"segment {i + 1}: coincident tips")
        if abs(xl) < STRAIGHT_EPS:
            if yl <= 0.0:
                raise KinematicsError(
                    f"segment {i + 1}: bend exceeds representable half-plane"
                )
            K[i] = 0.0
            L[i] = np.sqrt(r2)
        else:
            if yl <= 0.0:
                raise KinematicsError(
                    f"segment {i + 1}: bend exceeds representable half-plane"
                )
            k = 2.0 * xl / r2
            K[i] = k
            L[i] = 2.0 / k * np.arctan2(xl, yl)
        theta += K[i] * L[i]
        px, py = X[i], Y[i]
    return ConfigurationSpace(K, L)


# ---------------------------------------------------------------------------
# 3D transforms
# ---------------------------------------------------------------------------

def identity_transform() -> np.ndarray:
    return np.eye(4)


def make_transform(rotation: np.ndarray, position) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = rotation
    T[:3, 3] = position
    return T


def invert_transform(T: np.ndarray) -> np.ndarray:
    R = T[:3, :3]
    Ti = np.eye(4)
    Ti[:3, :3] = R.T
    Ti[:3, 3] = -R.T @ T[:3, 3]
    return Ti


def check_transform(T: np.ndarray, tol: float = 1e-9) -> None:
    R = T[:3, :3]
    if np.linalg.norm(R.T @ R - np.eye(3)) > tol:
        raise KinematicsError("rotation block is not orthonormal")
    if not np.allclose(T[3], [0.0, 0.0, 0.0, 1.0], atol=tol):
        raise KinematicsError("bottom row must be (0,0,0,1)")


def _rot_z(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(beta: float) -> np.ndarray:
    c, s = np.cos(beta), np.sin(beta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def arc_transform_3d(phi: float, beta: float, l: float) -> np.ndarray:
    """Arc of length l bending by beta in the plane at azimuth phi.

    The base tangent is +z; torsion-free, so the tip frame is
    Rz(phi) Ry(beta) Rz(-phi).
    """
    if abs(beta) < STRAIGHT_EPS:
        return make_transform(np.eye(3), [0.0, 0.0, l])
    r = l / beta
    local = np.array([r * (1.0 - np.cos(beta)), 0.0, r * np.sin(beta)])
    Rz = _rot_z(phi)
    R = Rz @ _rot_y(beta) @ _rot_z(-phi)
    return make_transform(R, Rz @ local)


def segment_transform(theta_sx: float, theta_sy: float, l: float) -> np.ndarray:
    """PCC arc transform whose tip z-axis projects to (theta_sx, theta_sy)."""
    if abs(theta_sx) >= np.pi / 2 or abs(theta_sy) >= np.pi / 2:
        raise KinematicsError("projected bend angles must stay below 90 degrees")
    tx, ty = np.tan(theta_sx), np.tan(theta_sy)
    t = np.hypot(tx, ty)
    if t < STRAIGHT_EPS:
        return arc_transform_3d(0.0, 0.0, l)
    phi = np.arctan2(ty, tx)
    beta = np.arctan(t)
    return arc_transform_3d(phi, beta, l)


def chain_transforms(transforms) -> np.ndarray:
    T = np.eye(4)
    for Ti in transforms:
        T = T @ Ti
    return T


@dataclass
class TipVector5:
    x: float
    y: float
    z: float
    theta_x: float
    theta_y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.theta_x, self.theta_y])


def transform_to_vector(T: np.ndarray) -> TipVector5:
    """Project a transform onto the (x, y, z, theta_x, theta_y) view.

    Valid only while the tip z-axis stays within 90 degrees of the base
    z-axis; beyond that the caller must interpolate intermediate targets.
    """
    zaxis = T[:3, 2]
    if zaxis[2] <= 0.0:
        raise KinematicsError("tip z-axis beyond 90 degrees of base z-axis")
    theta_x = np.arctan2(zaxis[0], zaxis[2])
    theta_y = np.arctan2(zaxis[1], zaxis[2])
    return TipVector5(T[0, 3], T[1, 3], T[2, 3], theta_x, theta_y)


def interpolate_intermediate(T_base: np.ndarray, T_tip: np.ndarray, n: int) -> list[np.ndarray]:
    """n-1 intermediate transforms between base and tip.

    Positions are linear; rotations follow the geodesic between the two
    end rotations.
    """
    if n < 1:
        raise KinematicsError("need at least one interval")
    if n == 1:
        return []
    rots = Rotation.from_matrix([T_base[:3, :3], T_tip[:3, :3]])
    slerp = Slerp([0.0, 1.0], rots)
    out = []
    for i in range(1, n):
        t = i / n
        p = (1.0 - t) * T_base[:3, 3] + t * T_tip[:3, 3]
        out.append(make_transform(slerp(t).as_matrix(), p))
    return out
