"""Scan deskewing, multi-lidar fusion, downsampling and direct ICP odometry.

Scans are deskewed to their start time with a constant-twist motion model
evaluated through dual-quaternion screw interpolation, fused across
sensors into the vehicle base frame, voxel-downsampled and registered
point-to-plane against the incremental local submap.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Pose, dq_from_pose, dq_transform_points_many, pose_compose, pose_inverse, skew, so3_exp
from .submap import LocalSubmap


class MissingCalibrationError(KeyError):
    pass


@dataclass(frozen=True)
class LidarScan:
    sensor_id: str
    scan_start: int  # ns
    scan_end: int  # ns
    stamps: np.ndarray  # (N,) ns, absolute
    points: np.ndarray  # (N, 3) sensor frame, m

    def __post_init__(self):
        stamps = np.asarray(self.stamps, dtype=np.int64).reshape(-1)
        points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(stamps) != len(points) or len(points) < 1:
            raise ValueError("scan needs matching, non-empty stamps and points")
        if stamps.min() < self.scan_start or stamps.max() > self.scan_end:
            raise ValueError("point stamps outside [scan_start, scan_end]")
        object.__setattr__(self, "stamps", stamps)
        object.__setattr__(self, "points", points)


@dataclass(frozen=True)
class OdomEstimate:
    stamp: int
    pose: Pose
    fitness: float  # mean squared point-to-plane distance
    iterations: int
    degenerate: bool = False
    insufficient_overlap: bool = False
    converged: bool = True


def deskew(scan: LidarScan, pose_start: Pose, pose_end: Pose) -> LidarScan:
    """Project every point to the scan-start frame under the constant-twist
    motion between the predicted start and end sensor poses."""
    span = scan.scan_end - scan.scan_start
    if span == 0:
        return replace(scan, stamps=np.full_like(scan.stamps, scan.scan_start))
    rel = pose_compose(pose_inverse(pose_start), pose_end)
    etas = (scan.stamps - scan.scan_start) / span
    # p_start = (rel^eta) p_t: the screw kernel applies the inverse of its
    # argument, so hand it the end-to-start motion
    q = dq_from_pose(pose_inverse(rel))
    pts = dq_transform_points_many(q, etas, scan.points)
    return replace(
        scan, stamps=np.full_like(scan.stamps, scan.scan_start), points=pts
    )


def fuse_to_base(scans, calib: dict) -> np.ndarray:
    """Union of scans transformed into the base frame via per-sensor
    extrinsic poses (base <- lidar)."""
    clouds = []
    for scan in scans:
        if scan.sensor_id not in calib:
            raise MissingCalibrationError(
                f"no extrinsic calibration for sensor {scan.sensor_id!r}"
            )
        clouds.append(calib[scan.sensor_id].apply(scan.points))
    return np.concatenate(clouds, axis=0)


def voxel_downsample(points, resolution: float = 0.05) -> np.ndarray:
    """One point per voxel: the centroid of the voxel's members."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        return points
    keys = np.floor(points / resolution).astype(np.int64)
    _, inverse, counts = np.unique(
        keys, axis=0, return_inverse=True, return_counts=True
    )
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, points)
    return sums / counts[:, None]


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 30
    translation_tol: float = 1e-4
    max_correspondence_dist: float = 0.5
    coarse_correspondence_dist: float = 2.0
    huber_delta: float = 0.1
    min_correspondences: int = 50
    plane_neighbors: int = 5
    degenerate_condition: float = 1e5


def icp_register(
    cloud, submap: LocalSubmap, prior: Pose, config: IcpConfig = IcpConfig(),
    stamp: int = 0,
) -> OdomEstimate:
    """Point-to-plane Gauss-Newton registration of a base-frame cloud
    against the local submap, starting from the IMU motion prior."""
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    pose = prior
    center = np.asarray(prior.t, dtype=float)  # rotation pivot
    degenerate = False
    fitness = np.inf
    last_cost = np.inf
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        # coarse-to-fine gate: early iterations accept distant pairs for
        # capture range, converged iterations keep only tight pairs to
        # avoid the bias of long in-plane correspondence offsets
        gate = max(
            config.max_correspondence_dist,
            config.coarse_correspondence_dist * 0.5 ** (iterations - 1),
        )
        world = pose.apply(cloud)
        dists, idx = submap.knn(world, k=1)
        mask = dists[:, 0] <= gate
        if mask.any():
            normals_all, valid = submap.plane_normals(
                idx[mask, 0], k=config.plane_neighbors
            )
            full = np.flatnonzero(mask)
            mask = np.zeros_like(mask)
            mask[full[valid]] = True
            normals = normals_all[valid]
        n_corr = int(mask.sum())
        if n_corr < config.min_correspondences:
            return OdomEstimate(
                stamp=stamp, pose=prior, fitness=np.inf, iterations=iterations,
                insufficient_overlap=True, degenerate=True, converged=False,
            )
        w = world[mask]
        targets = submap.points()[idx[mask, 0]]
        r = np.einsum("ij,ij->i", normals, w - targets)
        # Huber IRLS weights
        absr = np.abs(r)
        weights = np.where(absr <= config.huber_delta, 1.0, config.huber_delta / np.maximum(absr, 1e-12))
        J = np.empty((n_corr, 6))
        # rotation about the prior position keeps the lever arms at scene
        # scale, so the conditioning of N reflects the geometry alone
        J[:, :3] = np.cross(w - center, normals)
        J[:, 3:] = normals
        Jw = J * weights[:, None]
        N = J.T @ Jw
        g = Jw.T @ r
        # unit-normalize before the condition test so mixed rad/m scales
        # do not masquerade as degeneracy
        d = np.sqrt(np.maximum(N.diagonal(), 1e-30))
        Nn = N / d[:, None] / d[None, :]
        if np.linalg.cond(Nn) > config.degenerate_condition:
            degenerate = True
            Nn = Nn + np.eye(6) / config.degenerate_condition
        delta = -np.linalg.solve(Nn, g / d) / d
        cost = float(np.sum(weights * r * r))
        # step halving if the update does not reduce the robust cost
        step = 1.0
        for _ in range(6):
            cand = _apply_delta(pose, delta * step, center)
            cw = cand.apply(cloud)[mask]
            cr = np.einsum("ij,ij->i", normals, cw - targets)
            ca = np.abs(cr)
            cweights = np.where(ca <= config.huber_delta, 1.0, config.huber_delta / np.maximum(ca, 1e-12))
            ccost = float(np.sum(cweights * cr * cr))
            if ccost <= cost or np.linalg.norm(delta * step) < 1e-12:
                break
            step *= 0.5
        pose = _apply_delta(pose, delta * step, center)
        fitness = float(np.mean(r * r))
        last_cost = cost
        # only declare convergence once the gate has tightened fully
        if (
            gate <= config.max_correspondence_dist
            and np.linalg.norm(delta * step) < config.translation_tol
        ):
            return OdomEstimate(
                stamp=stamp, pose=pose, fitness=fitness, iterations=iterations,
                degenerate=degenerate, converged=True,
            )
    return OdomEstimate(
        stamp=stamp, pose=pose, fitness=fitness, iterations=iterations,
        degenerate=degenerate, converged=False,
    )


def _apply_delta(pose: Pose, delta, center=None) -> Pose:
    """World-frame perturbation rotating about `center`:
    R <- Exp(dphi) R, t <- Exp(dphi) (t - c) + c + dt."""
    dphi, dt = delta[:3], delta[3:]
    if center is None:
        center = np.zeros(3)
    Rd = so3_exp(dphi)
    return Pose(Rd @ pose.R, Rd @ (pose.t - center) + center + dt)


def map_update(submap: LocalSubmap, cloud_world, current_pose: Pose) -> None:
    """Insert registered world-frame points (voxel dedup) and slide the
    bounding box to the current pose."""
    submap.insert(cloud_world)
    submap.crop_to_box(current_pose.t)
