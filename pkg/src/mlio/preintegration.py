"""On-manifold IMU preintegration and gravity-aligned initialization.

Accumulates fused IMU samples between keyframes into a relative-motion
pseudo-measurement (dR, dv, dp) that is independent of the absolute start
state, with first-order bias Jacobians and a propagated 9x9 noise
covariance. Within each sample interval the measurement is held constant
and the propagation uses the exact constant-input solution (left-Jacobian
and double-integral correction terms), so the coarse-rate result matches a
fine-step integrator to the integrator's own error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    NavState,
    Pose,
    skew,
    so3_double_integral,
    so3_exp,
    so3_left_jacobian,
    so3_log,
    so3_right_jacobian,
)

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class ImuNoiseParams:
    gyro_noise_density: float = 1e-3  # rad/s/sqrt(Hz)
    acc_noise_density: float = 1e-2  # m/s^2/sqrt(Hz)
    gyro_bias_rw_density: float = 1e-5  # rad/s^2/sqrt(Hz)
    acc_bias_rw_density: float = 1e-4  # m/s^3/sqrt(Hz)


@dataclass(frozen=True)
class PreintegratedDelta:
    """Relative-motion pseudo-measurement between two keyframes.

    Covariance is over (rot, vel, pos) error; bias Jacobians are first
    order around the linearization point (b_a0, b_g0).
    """

    dR: np.ndarray = field(default_factory=lambda: np.eye(3))
    dv: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dp: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dt: float = 0.0
    J_r_bg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    J_v_ba: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    J_v_bg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    J_p_ba: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    J_p_bg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    cov: np.ndarray = field(default_factory=lambda: np.zeros((9, 9)))
    b_a0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_g0: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def corrected(self, b_a, b_g):
        """First-order bias-corrected (dR, dv, dp) at biases (b_a, b_g)."""
        dba = np.asarray(b_a, dtype=float) - self.b_a0
        dbg = np.asarray(b_g, dtype=float) - self.b_g0
        dR = self.dR @ so3_exp(self.J_r_bg @ dbg)
        dv = self.dv + self.J_v_ba @ dba + self.J_v_bg @ dbg
        dp = self.dp + self.J_p_ba @ dba + self.J_p_bg @ dbg
        return dR, dv, dp


def empty_delta(b_a0=None, b_g0=None) -> PreintegratedDelta:
    return PreintegratedDelta(
        b_a0=np.zeros(3) if b_a0 is None else np.asarray(b_a0, dtype=float),
        b_g0=np.zeros(3) if b_g0 is None else np.asarray(b_g0, dtype=float),
    )


def integrate(
    delta: PreintegratedDelta, sample, dt: float,
    noise: ImuNoiseParams = ImuNoiseParams(),
) -> PreintegratedDelta:
    """Fold one fused IMU sample (held constant over dt) into the delta."""
    if not (0.0 < dt < 0.1):
        raise ValueError(f"dt out of range: {dt}")
    w = np.asarray(sample.w, dtype=float) - delta.b_g0
    a = np.asarray(sample.f, dtype=float) - delta.b_a0
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(a))):
        raise ValueError("non-finite IMU sample")

    theta = w * dt
    A = so3_exp(theta)
    Jl = so3_left_jacobian(theta)
    C = so3_double_integral(theta)
    dR, dv, dp = delta.dR, delta.dv, delta.dp

    dp_new = dp + dv * dt + dR @ C @ a * dt**2
    dv_new = dv + dR @ Jl @ a * dt
    dR_new = dR @ A

    # first-order bias Jacobians
    Jr = so3_right_jacobian(theta)
    Jla = Jl @ a
    Ca = C @ a
    J_r_bg = A.T @ delta.J_r_bg - Jr * dt
    J_v_ba = delta.J_v_ba - dR @ Jl * dt
    J_v_bg = delta.J_v_bg - dR @ skew(Jla) @ delta.J_r_bg * dt
    J_p_ba = delta.J_p_ba + delta.J_v_ba * dt - dR @ C * dt**2
    J_p_bg = delta.J_p_bg + delta.J_v_bg * dt - dR @ skew(Ca) @ delta.J_r_bg * dt**2

    # covariance over (rot, vel, pos)
    F = np.eye(9)
    F[0:3, 0:3] = A.T
    F[3:6, 0:3] = -dR @ skew(Jla) * dt
    F[6:9, 0:3] = -dR @ skew(Ca) * dt**2
    F[6:9, 3:6] = np.eye(3) * dt
    G = np.zeros((9, 6))
    G[0:3, 0:3] = Jr * dt
    G[3:6, 3:6] = dR * dt
    G[6:9, 3:6] = 0.5 * dR * dt**2
    Qd = np.zeros((6, 6))
    Qd[:3, :3] = np.eye(3) * noise.gyro_noise_density**2 / dt
    Qd[3:, 3:] = np.eye(3) * noise.acc_noise_density**2 / dt
    cov = F @ delta.cov @ F.T + G @ Qd @ G.T

    return replace(
        delta,
        dR=dR_new, dv=dv_new, dp=dp_new, dt=delta.dt + dt,
        J_r_bg=J_r_bg, J_v_ba=J_v_ba, J_v_bg=J_v_bg,
        J_p_ba=J_p_ba, J_p_bg=J_p_bg, cov=cov,
    )


def predict(x_i: NavState, delta: PreintegratedDelta, g=GRAVITY) -> NavState:
    """Forward state prediction across the preintegrated interval."""
    dR, dv, dp = delta.corrected(x_i.b_a, x_i.b_g)
    R_i, p_i, v_i = x_i.pose.R, x_i.pose.t, x_i.v
    dt = delta.dt
    R_j = R_i @ dR
    v_j = v_i + g * dt + R_i @ dv
    p_j = p_i + v_i * dt + 0.5 * g * dt**2 + R_i @ dp
    return NavState(pose=Pose(R_j, p_j), v=v_j, w=x_i.w, b_a=x_i.b_a, b_g=x_i.b_g)


def imu_residual(
    x_i: NavState, x_j: NavState, delta: PreintegratedDelta, g=GRAVITY
) -> np.ndarray:
    """15-vector residual ordered (rot, pos, vel, b_a, b_g)."""
    dR, dv, dp = delta.corrected(x_i.b_a, x_i.b_g)
    R_i, p_i, v_i = x_i.pose.R, x_i.pose.t, x_i.v
    R_j, p_j, v_j = x_j.pose.R, x_j.pose.t, x_j.v
    dt = delta.dt
    r_rot = so3_log(dR.T @ (R_i.T @ R_j))
    r_pos = R_i.T @ (p_j - p_i - v_i * dt - 0.5 * g * dt**2) - dp
    r_vel = R_i.T @ (v_j - v_i - g * dt) - dv
    r_ba = x_j.b_a - x_i.b_a
    r_bg = x_j.b_g - x_i.b_g
    return np.concatenate([r_rot, r_pos, r_vel, r_ba, r_bg])


def imu_residual_jacobians(
    x_i: NavState, x_j: NavState, delta: PreintegratedDelta, g=GRAVITY
):
    """Analytic Jacobians of imu_residual w.r.t. the 18-dim tangents of
    x_i and x_j (ordering: rot, trans, v, w, b_a, b_g)."""
    from .geometry import so3_left_jacobian_inv

    dR, dv, dp = delta.corrected(x_i.b_a, x_i.b_g)
    R_i, p_i, v_i = x_i.pose.R, x_i.pose.t, x_i.v
    R_j, p_j, v_j = x_j.pose.R, x_j.pose.t, x_j.v
    dt = delta.dt
    E = R_i.T @ R_j
    r_rot = so3_log(dR.T @ E)
    Jr_inv = so3_left_jacobian_inv(-r_rot)  # right-Jacobian inverse at r_rot
    Jl_inv = so3_left_jacobian_inv(r_rot)
    u_p = R_i.T @ (p_j - p_i - v_i * dt - 0.5 * g * dt**2)
    u_v = R_i.T @ (v_j - v_i - g * dt)

    Ji = np.zeros((15, 18))
    Jj = np.zeros((15, 18))
    # rotation block; the bias correction enters through
    # Exp(J_r_bg (bg + d)) = Exp(u) Exp(Jr(u) J_r_bg d)
    u = delta.J_r_bg @ (x_i.b_g - delta.b_g0)
    Ji[0:3, 0:3] = -Jr_inv @ E.T
    Ji[0:3, 15:18] = -Jl_inv @ so3_right_jacobian(u) @ delta.J_r_bg
    Jj[0:3, 0:3] = Jr_inv
    # position block
    Ji[3:6, 0:3] = skew(u_p)
    Ji[3:6, 3:6] = -R_i.T
    Ji[3:6, 6:9] = -R_i.T * dt
    Ji[3:6, 12:15] = -delta.J_p_ba
    Ji[3:6, 15:18] = -delta.J_p_bg
    Jj[3:6, 3:6] = R_i.T
    # velocity block
    Ji[6:9, 0:3] = skew(u_v)
    Ji[6:9, 6:9] = -R_i.T
    Ji[6:9, 12:15] = -delta.J_v_ba
    Ji[6:9, 15:18] = -delta.J_v_bg
    Jj[6:9, 6:9] = R_i.T
    # bias random-walk blocks
    Ji[9:12, 12:15] = -np.eye(3)
    Jj[9:12, 12:15] = np.eye(3)
    Ji[12:15, 15:18] = -np.eye(3)
    Jj[12:15, 15:18] = np.eye(3)
    return Ji, Jj


def residual_covariance(
    delta: PreintegratedDelta, noise: ImuNoiseParams = ImuNoiseParams()
) -> np.ndarray:
    """15x15 covariance for the residual ordering (rot, pos, vel, ba, bg)."""
    out = np.eye(15) * 1e-12
    perm = np.array([0, 1, 2, 6, 7, 8, 3, 4, 5])  # (rot, vel, pos) -> (rot, pos, vel)
    out[:9, :9] += delta.cov[np.ix_(perm, perm)]
    dt = max(delta.dt, 1e-6)
    out[9:12, 9:12] += np.eye(3) * noise.acc_bias_rw_density**2 * dt
    out[12:15, 12:15] += np.eye(3) * noise.gyro_bias_rw_density**2 * dt
    return out


# ---------------------------------------------------------------------------
# gravity-aligned initialization
# ---------------------------------------------------------------------------

class NotStaticError(ValueError):
    pass


@dataclass(frozen=True)
class GravityInit:
    roll: float
    pitch: float
    yaw: float
    t0: np.ndarray  # world (UTM) position, m
    b_a0: np.ndarray
    b_g0: np.ndarray

    def rotation(self) -> np.ndarray:
        """World-from-base rotation Rz(yaw) Ry(pitch) Rx(roll)."""
        cr, sr = math.cos(self.roll), math.sin(self.roll)
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
        Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
        Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
        return Rz @ Ry @ Rx

    def pose(self) -> Pose:
        return Pose(self.rotation(), self.t0)


def gravity_align(static_samples, t0, yaw: float = 0.0) -> GravityInit:
    """Tilt initialization from averaged static specific force.

    roll = atan2(a_y, a_z), pitch = atan2(-a_x, sqrt(a_y^2 + a_z^2));
    yaw and the world position t0 come from GNSS.
    """
    if len(static_samples) == 0:
        raise NotStaticError("no static samples")
    F = np.stack([np.asarray(s.f, dtype=float) for s in static_samples])
    W = np.stack([np.asarray(s.w, dtype=float) for s in static_samples])
    a_bar = F.mean(axis=0)
    if abs(np.linalg.norm(a_bar) - 9.81) > 1.0:
        raise NotStaticError(
            f"mean specific force {np.linalg.norm(a_bar):.2f} m/s^2 is not 1 g"
        )
    roll = math.atan2(a_bar[1], a_bar[2])
    pitch = math.atan2(-a_bar[0], math.hypot(a_bar[1], a_bar[2]))
    init = GravityInit(
        roll=roll, pitch=pitch, yaw=yaw,
        t0=np.asarray(t0, dtype=float).reshape(3),
        b_a0=np.zeros(3), b_g0=W.mean(axis=0),
    )
    # accelerometer bias: whatever the tilt model cannot explain
    b_a0 = a_bar - init.rotation().T @ np.array([0.0, 0.0, 9.81])
    return replace(init, b_a0=b_a0)
