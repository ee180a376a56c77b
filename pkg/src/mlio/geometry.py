"""SE(3) / dual-quaternion algebra shared by every other module.

Conventions:
    - Quaternions are [w, x, y, z] with non-negative scalar part after
      canonicalization.
    - se(3) tangent vectors are ordered (rotation, translation).
    - Timestamps are integer nanoseconds (plain ints).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NS_PER_S = 1_000_000_000


def to_seconds(nanos: int) -> float:
    return nanos / NS_PER_S


def to_nanos(seconds: float) -> int:
    return int(round(seconds * NS_PER_S))


class DegenerateInputError(ValueError):
    """Raised when an operation hits a geometric singularity (e.g. angle pi)."""


# ---------------------------------------------------------------------------
# skew / SO(3)
# ---------------------------------------------------------------------------

def skew(v) -> np.ndarray:
    """Skew-symmetric matrix M with M @ b == cross(v, b)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(phi) -> np.ndarray:
    """Rotation matrix from a rotation vector (Rodrigues)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R) -> np.ndarray:
    """Rotation vector of R. Requires angle < pi - 1e-6."""
    R = np.asarray(R, dtype=float)
    c = (np.trace(R) - 1.0) * 0.5
    c = min(1.0, max(-1.0, c))
    theta = math.acos(c)
    if theta >= math.pi - 1e-6:
        raise DegenerateInputError("rotation angle too close to pi for log map")
    if theta < 1e-8:
        w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        return w
    return theta / (2.0 * math.sin(theta)) * np.array(
        [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]
    )


def so3_left_jacobian(phi) -> np.ndarray:
    """J_l(phi) = integral_0^1 Exp(s*phi) ds."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    a = (1.0 - math.cos(theta)) / theta**2
    b = (theta - math.sin(theta)) / theta**3
    return np.eye(3) + a * K + b * (K @ K)


def so3_left_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-6:
        return np.eye(3) - 0.5 * K + (K @ K) / 12.0
    cot_half = theta * math.cos(theta / 2.0) / (2.0 * math.sin(theta / 2.0))
    b = (1.0 - cot_half) / theta**2
    return np.eye(3) - 0.5 * K + b * (K @ K)


def so3_right_jacobian(phi) -> np.ndarray:
    return so3_left_jacobian(-np.asarray(phi, dtype=float))


def so3_right_jacobian_inv(phi) -> np.ndarray:
    return so3_left_jacobian_inv(-np.asarray(phi, dtype=float))


def so3_double_integral(phi) -> np.ndarray:
    """C(phi) = integral_0^1 integral_0^a Exp(u*phi) du da."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-4:
        return 0.5 * np.eye(3) + K / 6.0 + (K @ K) / 24.0
    a = (theta - math.sin(theta)) / theta**3
    b = (math.cos(theta) - 1.0 + theta**2 / 2.0) / theta**4
    return 0.5 * np.eye(3) + a * K + b * (K @ K)


def _project_rotation(R) -> np.ndarray:
    """Nearest rotation matrix by polar decomposition (SVD)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


# ---------------------------------------------------------------------------
# quaternions [w, x, y, z]
# ---------------------------------------------------------------------------

def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_rotmat(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
             (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s,
             (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s,
             (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
             (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    q /= np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    return q


def quat_to_rotmat(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


# ---------------------------------------------------------------------------
# Pose
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    """Rigid transform: p_out = R @ p_in + t."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        t = np.asarray(self.t, dtype=float).reshape(3)
        defect = np.linalg.norm(R @ R.T - np.eye(3))
        if defect > 1e-7:
            R = _project_rotation(R)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    @staticmethod
    def from_matrix(T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return Pose(T[:3, :3], T[:3, 3])

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.R.T + self.t


def pose_compose(a: Pose, b: Pose) -> Pose:
    return Pose(a.R @ b.R, a.R @ b.t + a.t)


def pose_inverse(a: Pose) -> Pose:
    Rt = a.R.T
    return Pose(Rt, -(Rt @ a.t))


def se3_exp(xi) -> Pose:
    """Exponential map; xi = (phi, rho) ordered rotation-first."""
    xi = np.asarray(xi, dtype=float)
    phi, rho = xi[:3], xi[3:]
    R = so3_exp(phi)
    t = so3_left_jacobian(phi) @ rho
    return Pose(R, t)


def se3_log(p: Pose) -> np.ndarray:
    phi = so3_log(p.R)
    rho = so3_left_jacobian_inv(phi) @ p.t
    return np.concatenate([phi, rho])


def _se3_Q(phi, rho) -> np.ndarray:
    """Second-order block of the SE(3) left Jacobian (Barfoot)."""
    theta = np.linalg.norm(phi)
    px = skew(phi)
    rx = skew(rho)
    px_rx = px @ rx
    rx_px = rx @ px
    px_rx_px = px_rx @ px
    if theta < 1e-4:
        c1 = 1.0 / 6.0 - theta**2 / 120.0
        c2 = 1.0 / 24.0 - theta**2 / 720.0
        c3 = 1.0 / 120.0 - theta**2 / 2520.0
    else:
        c1 = (theta - math.sin(theta)) / theta**3
        c2 = (1.0 - theta**2 / 2.0 - math.cos(theta)) / theta**4
        c3 = 0.5 * (
            c2 - 3.0 * (theta - math.sin(theta) - theta**3 / 6.0) / theta**5
        )
    Q = (
        0.5 * rx
        + c1 * (px_rx + rx_px + px_rx_px)
        - c2 * (px @ px_rx + rx_px @ px - 3.0 * px_rx_px)
        - c3 * (px_rx_px @ px + px @ px_rx_px)
    )
    return Q


def se3_left_jacobian_inv(xi) -> np.ndarray:
    """Inverse left Jacobian of SE(3) in (rot, trans) ordering."""
    xi = np.asarray(xi, dtype=float)
    phi, rho = xi[:3], xi[3:]
    Jinv = so3_left_jacobian_inv(phi)
    Q = _se3_Q(phi, rho)
    out = np.zeros((6, 6))
    out[:3, :3] = Jinv
    out[3:, 3:] = Jinv
    out[3:, :3] = -Jinv @ Q @ Jinv
    return out


@dataclass(frozen=True)
class NavState:
    """Full vehicle state: pose, world-frame velocity, body-frame angular
    rate and the accelerometer / gyro biases."""

    pose: Pose = field(default_factory=Pose.identity)
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("v", "w", "b_a", "b_g"):
            val = np.asarray(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(val)):
                raise ValueError(f"non-finite {name}")
            object.__setattr__(self, name, val)

    def retract(self, delta) -> "NavState":
        """Apply an 18-dim tangent update ordered
        (rot, trans, v, w, b_a, b_g); rotation via right perturbation,
        translation and vector blocks additive."""
        delta = np.asarray(delta, dtype=float).reshape(18)
        pose = Pose(self.pose.R @ so3_exp(delta[0:3]), self.pose.t + delta[3:6])
        return NavState(
            pose=pose,
            v=self.v + delta[6:9],
            w=self.w + delta[9:12],
            b_a=self.b_a + delta[12:15],
            b_g=self.b_g + delta[15:18],
        )

    def local(self, other: "NavState") -> np.ndarray:
        """Tangent of other relative to self (inverse of retract)."""
        return np.concatenate(
            [
                so3_log(self.pose.R.T @ other.pose.R),
                other.pose.t - self.pose.t,
                other.v - self.v,
                other.w - self.w,
                other.b_a - self.b_a,
                other.b_g - self.b_g,
            ]
        )


# ---------------------------------------------------------------------------
# dual quaternions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DualQuaternion:
    """Unit dual quaternion; real encodes rotation, dual = 0.5 * t x real."""

    real: np.ndarray
    dual: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "real", np.asarray(self.real, dtype=float))
        object.__setattr__(self, "dual", np.asarray(self.dual, dtype=float))

    @staticmethod
    def identity() -> "DualQuaternion":
        return DualQuaternion(np.array([1.0, 0, 0, 0]), np.zeros(4))


def dq_mul(a: DualQuaternion, b: DualQuaternion) -> DualQuaternion:
    real = quat_mul(a.real, b.real)
    dual = quat_mul(a.real, b.dual) + quat_mul(a.dual, b.real)
    return DualQuaternion(real, dual)


def dq_conj(q: DualQuaternion) -> DualQuaternion:
    return DualQuaternion(quat_conj(q.real), quat_conj(q.dual))


def dq_normalize(q: DualQuaternion) -> DualQuaternion:
    n = np.linalg.norm(q.real)
    real = q.real / n
    dual = q.dual / n
    dual = dual - real * float(real @ dual)
    if real[0] < 0.0:
        real, dual = -real, -dual
    return DualQuaternion(real, dual)


def dq_from_pose(p: Pose) -> DualQuaternion:
    real = quat_from_rotmat(p.R)
    tq = np.array([0.0, p.t[0], p.t[1], p.t[2]])
    dual = 0.5 * quat_mul(tq, real)
    return DualQuaternion(real, dual)


def dq_to_pose(q: DualQuaternion) -> Pose:
    q = dq_normalize(q)
    R = quat_to_rotmat(q.real)
    tq = 2.0 * quat_mul(q.dual, quat_conj(q.real))
    return Pose(R, tq[1:])


def _screw_parameters(q: DualQuaternion):
    """Screw decomposition (theta, d, axis l, moment m) of a unit DQ.

    The DQ equals cos(th/2 + eps d/2) + (l + eps m) sin(th/2 + eps d/2).
    """
    q = dq_normalize(q)
    w = min(1.0, max(-1.0, float(q.real[0])))
    theta = 2.0 * math.acos(w)
    sin_half = math.sqrt(max(0.0, 1.0 - w * w))
    if sin_half < 1e-9:
        # pure translation (or identity): axis along t, d = |t|
        t = 2.0 * quat_mul(q.dual, quat_conj(q.real))[1:]
        d = np.linalg.norm(t)
        if d < 1e-15:
            return 0.0, 0.0, np.array([0.0, 0.0, 1.0]), np.zeros(3)
        return 0.0, d, t / d, np.zeros(3)
    if theta > math.pi - 1e-9:
        raise DegenerateInputError("screw axis ambiguous at rotation angle pi")
    l = q.real[1:] / sin_half
    d = -2.0 * float(q.dual[0]) / sin_half
    cos_half = w
    m = (q.dual[1:] - l * (d / 2.0) * cos_half) / sin_half
    return theta, d, l, m


def _dq_from_screw(theta: float, d: float, l, m) -> DualQuaternion:
    ch = math.cos(theta / 2.0)
    sh = math.sin(theta / 2.0)
    real = np.concatenate([[ch], sh * np.asarray(l)])
    dual_w = -(d / 2.0) * sh
    dual_v = sh * np.asarray(m) + (d / 2.0) * ch * np.asarray(l)
    dual = np.concatenate([[dual_w], dual_v])
    return DualQuaternion(real, dual)


def dq_pow(q: DualQuaternion, eta: float) -> DualQuaternion:
    """Screw-linear interpolation kernel: constant-twist power q**eta."""
    theta, d, l, m = _screw_parameters(q)
    return _dq_from_screw(theta * eta, d * eta, l, m)


def dq_pow_many(q: DualQuaternion, etas) -> list:
    """Vectorized dq_pow for a shared base transform."""
    theta, d, l, m = _screw_parameters(q)
    return [_dq_from_screw(theta * e, d * e, l, m) for e in np.asarray(etas)]


def dq_transform_points_many(q: DualQuaternion, etas, points) -> np.ndarray:
    """Apply inverse of q**eta_i to point i (the scan-deskew kernel).

    Equivalent to stacking dq_to_pose(dq_pow(q, eta)).inverse applied per
    point, but vectorized through one screw decomposition: the screw axis
    passes through c = l x m, so q**eta maps p -> R_eta p + (I - R_eta) c
    + d eta l.
    """
    theta, d, l, m = _screw_parameters(q)
    etas = np.asarray(etas, dtype=float)
    pts = np.asarray(points, dtype=float)
    c = np.cross(l, m)
    K = skew(l)
    angles = theta * etas
    s = np.sin(angles)[:, None]
    one_c = (1.0 - np.cos(angles))[:, None]
    # forward translation of q**eta
    Kc = K @ c
    KKc = K @ Kc
    t = c - (c + s * Kc + one_c * KKc) + (d * etas)[:, None] * l
    # apply R_eta^T (p - t): Rodrigues with negated angle
    v = pts - t
    Kv = v @ K.T
    KKv = Kv @ K.T
    return v - s * Kv + one_c * KKv
