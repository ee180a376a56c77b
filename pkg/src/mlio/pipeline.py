"""Offline estimation pipeline.

Replays a dataset by message stamp through synchronization, MIMU
fusion, IMU preintegration, scan deskewing, multi-lidar ICP odometry
and the sliding-window factor graph, producing a keyframe trajectory
plus per-stage counters.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    NS_PER_S,
    NavState,
    Pose,
    pose_compose,
    pose_inverse,
    se3_exp,
    se3_log,
)
from .graph import (
    STATE_DIM,
    BetweenFactor,
    BiasAnchorFactor,
    FactorGraph,
    GnssFix,
    ImuFactor,
    PriorFactor,
    write_tum,
)
from .lidar import IcpConfig, deskew, voxel_downsample
from .mimu import BatchFuser, FusedImuSample, MimuArray
from .preintegration import (
    ImuNoiseParams,
    NotStaticError,
    empty_delta,
    gravity_align,
    integrate,
    predict,
)
from .submap import LocalSubmap
from .sync import POSITIONS, StampedSignal, SyncConfig, Synchronizer

GNSS_ASSOCIATION_NS = 50_000_000


class EstimatorDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class SensorMask:
    """Sensor selection in the L<n>I<n>G<n> notation: the first n
    positions of each modality (order F_L, F_R, R_L, R_R) are enabled."""

    n_lidar: int
    n_imu: int
    n_gnss: int = 0

    def __post_init__(self):
        if not (1 <= self.n_lidar <= 4 and 1 <= self.n_imu <= 4):
            raise ValueError("mask needs 1-4 lidars and 1-4 IMUs")
        if self.n_gnss not in (0, 1):
            raise ValueError("mask supports at most one GNSS receiver")

    @property
    def lidar_positions(self):
        return POSITIONS[: self.n_lidar]

    @property
    def imu_positions(self):
        return POSITIONS[: self.n_imu]

    @property
    def use_gnss(self) -> bool:
        return self.n_gnss > 0

    def __str__(self):
        s = f"L{self.n_lidar}I{self.n_imu}"
        return s + (f"G{self.n_gnss}" if self.n_gnss else "")


def parse_sensor_mask(text: str) -> SensorMask:
    m = re.fullmatch(r"L(\d)I(\d)(?:G(\d))?", text.strip())
    if not m:
        raise ValueError(f"malformed sensor mask {text!r} (expected e.g. L4I4G1)")
    return SensorMask(
        n_lidar=int(m.group(1)),
        n_imu=int(m.group(2)),
        n_gnss=int(m.group(3)) if m.group(3) else 0,
    )


@dataclass
class PipelineConfig:
    sync: SyncConfig = field(default_factory=SyncConfig)
    icp: IcpConfig = field(default_factory=IcpConfig)
    imu_noise: ImuNoiseParams = field(default_factory=ImuNoiseParams)
    keyframe_interval_s: float = 0.5
    window: int = 20
    voxel_resolution: float = 0.05
    map_extent: float = 150.0
    optimize_iters: int = 15
    init_samples: int = 30
    max_sensor_gap_s: float = 2.0
    degenerate_cov_scale: float = 100.0
    gnss_gating: bool = True


@dataclass
class RunCounters:
    imu_groups: int = 0
    lidar_groups: int = 0
    fused_samples: int = 0
    keyframes: int = 0
    icp_iterations: int = 0
    icp_degenerate: int = 0
    icp_insufficient: int = 0
    gnss_added: int = 0
    gnss_rejected: int = 0
    sensors_consumed: dict = field(default_factory=dict)


@dataclass
class RunResult:
    stamps: list  # keyframe ns
    poses: list  # optimized keyframe Pose
    fused: list  # FusedImuSample stream
    counters: RunCounters
    mask: SensorMask


# ---------------------------------------------------------------------------
# stage 1: synchronization
# ---------------------------------------------------------------------------


def replay_sync(dataset, mask: SensorMask, config: SyncConfig, counters: RunCounters):
    """Push every enabled message in stamp order, then drain ready
    groups. Returns (imu_groups, lidar_groups)."""
    sensors = [f"imu/{p}" for p in mask.imu_positions] + [
        f"lidar/{p}" for p in mask.lidar_positions
    ]
    sync = Synchronizer(sensors, config)
    events = []
    for pos in mask.imu_positions:
        sid = f"imu/{pos}"
        for s in dataset.imu.get(sid, []):
            events.append(StampedSignal(stamp=s.stamp, sensor_id=sid, payload=s))
    for pos in mask.lidar_positions:
        sid = f"lidar/{pos}"
        for scan in dataset.lidar.get(sid, []):
            events.append(
                StampedSignal(stamp=scan.scan_start, sensor_id=sid, payload=scan)
            )
    events.sort(key=lambda e: (e.stamp, e.sensor_id))
    imu_groups, lidar_groups = [], []
    for e in events:
        sync.push(e)
        counters.sensors_consumed[e.sensor_id] = (
            counters.sensors_consumed.get(e.sensor_id, 0) + 1
        )
        for group in sync.drain():
            (imu_groups if group.modality == "imu" else lidar_groups).append(group)
    # flush the tail: everything has been seen, so age out stragglers
    last = events[-1].stamp if events else 0
    horizon = last + max(config.imu_max_age, config.lidar_max_age) + 1
    sync.push(StampedSignal(stamp=horizon, sensor_id=events[0].sensor_id
                            if events else "imu/F_L", payload=None))
    for group in sync.drain():
        members = {k: v for k, v in group.members.items() if v.payload is not None}
        if members:
            (imu_groups if group.modality == "imu" else lidar_groups).append(
                type(group)(anchor_stamp=group.anchor_stamp,
                            modality=group.modality, members=members)
            )
    counters.imu_groups = len(imu_groups)
    counters.lidar_groups = len(lidar_groups)
    return imu_groups, lidar_groups


# ---------------------------------------------------------------------------
# stage 2: MIMU fusion
# ---------------------------------------------------------------------------


def fuse_imu_groups(imu_groups, imus: dict, counters: RunCounters = None):
    """Maximum-likelihood fusion of synchronized IMU groups, batched by
    channel subset so each distinct dropout pattern reuses one solver."""
    order = [p for p in POSITIONS if p in imus]
    calibs = [imus[p] for p in order]
    array = MimuArray(tuple(calibs))
    pos_index = {f"imu/{p}": i for i, p in enumerate(order)}
    buckets = {}
    for g in imu_groups:
        idx = tuple(sorted(pos_index[sid] for sid in g.members))
        buckets.setdefault(idx, []).append(g)
    fused = []
    for idx, groups in buckets.items():
        sub = array.subset(idx)
        fuser = BatchFuser(sub)
        rot = [sub.channels[i].R for i in range(sub.K)]
        T = len(groups)
        Yf = np.empty((T, 3 * sub.K))
        Yw = np.empty((T, 3 * sub.K))
        for r, g in enumerate(groups):
            for c, i in enumerate(idx):
                s = g.members[f"imu/{order[i]}"].payload
                Yf[r, 3 * c:3 * c + 3] = rot[c] @ s.f
                Yw[r, 3 * c:3 * c + 3] = rot[c] @ s.w
        F, W, Wdot = fuser.fuse(Yf, Yw)
        for g, f, w, wd in zip(groups, F, W, Wdot):
            fused.append(
                FusedImuSample(
                    stamp=g.anchor_stamp, f=f, w=w, w_dot=wd,
                    w_dot_observable=fuser.w_dot_observable,
                )
            )
    fused.sort(key=lambda s: s.stamp)
    if counters is not None:
        counters.fused_samples = len(fused)
    return fused


# ---------------------------------------------------------------------------
# stage 3: initialization
# ---------------------------------------------------------------------------


def initialize(fused, gnss, mask: SensorMask, lever, n_samples: int):
    """Anchor pose, initial biases and their prior sigmas.

    Gravity alignment gives roll/pitch; with GNSS the anchor position
    comes from the first fix and the yaw from the early course over
    ground. The course baseline scales with the fix noise so the yaw
    estimate stays usable, and the returned sigmas widen the anchor
    prior to match what the initialization actually knows."""
    head = fused[:n_samples]
    yaw = 0.0
    t0 = np.zeros(3)
    yaw_sigma = 0.01
    pos_sigma = 0.05
    if mask.use_gnss and len(gnss) >= 2:
        first = gnss[0]
        fix_sigma = float(np.sqrt(np.trace(first.cov) / 3.0))
        pos_sigma = max(pos_sigma, fix_sigma)
        baseline = max(2.0, 20.0 * fix_sigma)
        for fix in gnss[1:]:
            d = fix.t - first.t
            if np.linalg.norm(d[:2]) >= baseline:
                yaw = float(np.arctan2(d[1], d[0]))
                yaw_sigma = max(
                    yaw_sigma, math.sqrt(2.0) * fix_sigma / baseline
                )
                break
        t0 = first.t  # refined below once attitude is known
    try:
        init = gravity_align(head, t0=t0, yaw=yaw)
    except NotStaticError:
        # accelerating start: fall back to a level attitude, zero biases
        from .preintegration import GravityInit

        init = GravityInit(roll=0.0, pitch=0.0, yaw=yaw, t0=t0,
                           b_a0=np.zeros(3), b_g0=np.zeros(3))
    anchor = init.pose()
    if mask.use_gnss and len(gnss) >= 1:
        anchor = Pose(anchor.R, gnss[0].t - anchor.R @ np.asarray(lever, float))
    return anchor, init, yaw_sigma, pos_sigma


# ---------------------------------------------------------------------------
# stage 4: odometry + smoothing replay
# ---------------------------------------------------------------------------


class _Propagator:
    """IMU-mechanized pose prediction between keyframes; records the
    predicted pose at every fused sample stamp for deskewing."""

    def __init__(self, state: NavState, noise: ImuNoiseParams):
        self.reset(state)
        self.noise = noise

    def reset(self, state: NavState):
        self.state = state
        self.delta = empty_delta(b_a0=state.b_a, b_g0=state.b_g)
        self.track = [(0, state.pose)]  # (stamp, predicted base pose)
        self.last_stamp = None
        self.last_sample = None

    def advance(self, sample: FusedImuSample):
        if self.last_stamp is None:
            self.track = [(sample.stamp, self.state.pose)]
        else:
            dt = (sample.stamp - self.last_stamp) / NS_PER_S
            if dt <= 0:
                return
            dt = min(dt, 0.099)
            # trapezoidal hold: integrate the interval-average measurement
            mid = FusedImuSample(
                stamp=sample.stamp,
                f=0.5 * (self.last_sample.f + sample.f),
                w=0.5 * (self.last_sample.w + sample.w),
                w_dot=sample.w_dot,
            )
            self.delta = integrate(self.delta, mid, dt)
            pred = predict(self.state, self.delta)
            self.track.append((sample.stamp, pred.pose))
        self.last_stamp = sample.stamp
        self.last_sample = sample

    def predicted(self) -> NavState:
        return predict(self.state, self.delta)

    def pose_at(self, stamp: int) -> Pose:
        stamps = [t for t, _ in self.track]
        k = int(np.searchsorted(stamps, stamp, side="right")) - 1
        k = max(0, min(k, len(self.track) - 1))
        t_k, pose = self.track[k]
        rem = (stamp - t_k) / NS_PER_S
        if abs(rem) < 1e-12 or self.last_sample is None:
            return pose
        w = self.last_sample.w - self.state.b_g
        v_body = pose.R.T @ self.predicted().v
        return pose_compose(pose, se3_exp(np.concatenate([w, v_body]) * rem))


def run_pipeline(dataset, mask: SensorMask, config: PipelineConfig = None):
    """Full replay: returns a RunResult with the optimized keyframe
    trajectory."""
    config = config or PipelineConfig()
    counters = RunCounters()
    imus = {p: dataset.scenario.imus[p] for p in mask.imu_positions}
    mounts = {
        f"lidar/{p}": dataset.scenario.lidars[p].pose
        for p in mask.lidar_positions
    }
    gnss = list(dataset.gnss) if mask.use_gnss else []

    imu_groups, lidar_groups = replay_sync(dataset, mask, config.sync, counters)
    fused = fuse_imu_groups(imu_groups, imus, counters)
    if len(fused) < config.init_samples + 2:
        raise EstimatorDivergence("not enough fused IMU data to initialize")
    anchor, init, yaw_sigma, pos_sigma = initialize(
        fused, gnss, mask, dataset.scenario.gnss_lever, config.init_samples
    )

    state = NavState(pose=anchor, b_a=init.b_a0, b_g=init.b_g0)
    graph = FactorGraph(window=config.window)
    graph.add_node(0, state, stamp=fused[0].stamp)
    prior_cov = np.diag(
        [0.01**2, 0.01**2, yaw_sigma**2] + [pos_sigma**2] * 3 + [0.1**2] * 3
        + [0.1**2] * 3 + [0.005**2] * 3 + [0.0005**2] * 3
    )
    graph.add_factor(PriorFactor(0, anchor, init.b_a0, init.b_g0, prior_cov))

    submap = LocalSubmap(config.voxel_resolution, config.map_extent)
    est_poses = {0: state.pose}
    est_stamps = {0: fused[0].stamp}
    odom_poses = {0: state.pose}
    interval_ns = int(round(config.keyframe_interval_s * NS_PER_S))
    kf_bound = fused[0].stamp + interval_ns
    prop = _Propagator(state, config.imu_noise)
    prop.advance(fused[0])
    gnss_idx = 0
    pending_scans = []
    lidar_iter = iter(lidar_groups)
    next_lidar = next(lidar_iter, None)
    node = 0

    def seed_map(cloud_world):
        submap.insert(cloud_world)

    last_fused_stamp = fused[0].stamp
    for sample in fused[1:]:
        gap = (sample.stamp - last_fused_stamp) / NS_PER_S
        if gap > config.max_sensor_gap_s:
            raise EstimatorDivergence(
                f"inertial blackout: no fused IMU data for {gap:.1f} s "
                f"after t={last_fused_stamp / NS_PER_S:.1f} s"
            )
        last_fused_stamp = sample.stamp
        prop.advance(sample)
        # collect lidar groups whose scans have fully ended
        while next_lidar is not None and max(
            m.payload.scan_end for m in next_lidar.members.values()
        ) <= sample.stamp:
            pending_scans.extend(m.payload for m in next_lidar.members.values())
            next_lidar = next(lidar_iter, None)
        if sample.stamp < kf_bound:
            continue
        # ---- keyframe ----
        node += 1
        kf_stamp = sample.stamp
        kf_bound = kf_stamp + interval_ns
        pred = prop.predicted()
        pred = NavState(pose=pred.pose, v=pred.v, w=sample.w - state.b_g,
                        b_a=state.b_a, b_g=state.b_g)
        # deskew + fuse accumulated scans into the predicted keyframe frame
        cloud = None
        if pending_scans:
            parts = []
            for scan in pending_scans:
                mount = mounts[scan.sensor_id]
                S0 = pose_compose(prop.pose_at(scan.scan_start), mount)
                S1 = pose_compose(prop.pose_at(scan.scan_end), mount)
                flat = deskew(scan, S0, S1)
                base_rel = pose_compose(pose_inverse(pred.pose), S0)
                parts.append(base_rel.apply(flat.points))
            cloud = voxel_downsample(
                np.concatenate(parts, axis=0), config.voxel_resolution
            )
            pending_scans = []
        if node == 1 and cloud is not None:
            seed_map(pred.pose.apply(cloud))
        # ---- ICP odometry ----
        icp_pose = pred.pose
        degenerate = False
        have_odom = False
        if cloud is not None and len(submap) > 0 and node > 1:
            est = None
            from .lidar import icp_register

            est = icp_register(cloud, submap, pred.pose, config.icp,
                               stamp=kf_stamp)
            counters.icp_iterations += est.iterations
            if est.insufficient_overlap:
                counters.icp_insufficient += 1
            else:
                icp_pose = est.pose
                degenerate = est.degenerate
                have_odom = True
                if est.degenerate:
                    counters.icp_degenerate += 1
        # ---- graph update ----
        x_new = NavState(pose=icp_pose, v=pred.v, w=pred.w,
                         b_a=pred.b_a, b_g=pred.b_g)
        graph.add_node(node, x_new, stamp=kf_stamp)
        graph.add_factor(ImuFactor(node - 1, node, prop.delta, config.imu_noise))
        graph.add_factor(BiasAnchorFactor(node, init.b_a0, init.b_g0))
        if have_odom and (node - 1) in odom_poses:
            z = pose_compose(pose_inverse(odom_poses[node - 1]), icp_pose)
            cov = None
            if degenerate:
                cov = np.diag([np.radians(0.5)**2] * 3 + [0.05**2] * 3)
                cov = cov * config.degenerate_cov_scale
            graph.add_factor(BetweenFactor(node - 1, node, z, cov))
            odom_poses[node] = icp_pose
        # ---- GNSS ----
        while gnss_idx < len(gnss) and gnss[gnss_idx].stamp < kf_stamp - GNSS_ASSOCIATION_NS:
            gnss_idx += 1
        if (
            gnss_idx < len(gnss)
            and abs(gnss[gnss_idx].stamp - kf_stamp) <= GNSS_ASSOCIATION_NS
        ):
            fix = gnss[gnss_idx]
            lever = np.asarray(dataset.scenario.gnss_lever, dtype=float)
            base_fix = GnssFix(
                stamp=fix.stamp, t=fix.t - x_new.pose.R @ lever, cov=fix.cov
            )
            if config.gnss_gating:
                est_cov = graph_position_covariance(graph, node)
                if graph.maybe_add_gnss(node, est_cov, base_fix):
                    counters.gnss_added += 1
                else:
                    counters.gnss_rejected += 1
            else:
                from .graph import GnssFactor

                graph.add_factor(GnssFactor(node, base_fix))
                counters.gnss_added += 1
            gnss_idx += 1
        # ---- optimize / marginalize ----
        report = graph.optimize(max_iter=config.optimize_iters)
        if not np.isfinite(report.final_cost):
            raise EstimatorDivergence(
                f"non-finite cost at keyframe {node}: {report}"
            )
        while len(graph.nodes) > config.window:
            oldest = min(graph.nodes)
            est_poses[oldest] = graph.nodes[oldest].pose
            graph.marginalize_oldest()
        for k in graph.nodes:
            est_poses[k] = graph.nodes[k].pose
        est_stamps[node] = kf_stamp
        state = graph.nodes[node]
        # refresh the odometry anchor to the smoothed pose when ICP was
        # unavailable, so later betweens stay consistent
        if node not in odom_poses:
            odom_poses[node] = state.pose
        if cloud is not None:
            from .lidar import map_update

            map_update(submap, state.pose.apply(cloud), state.pose)
        prop.reset(state)
        prop.advance(sample)
        counters.keyframes += 1

    order = sorted(est_poses)
    return RunResult(
        stamps=[est_stamps[k] for k in order],
        poses=[est_poses[k] for k in order],
        fused=fused,
        counters=counters,
        mask=mask,
    )


def graph_position_covariance(graph: FactorGraph, idx: int) -> np.ndarray:
    """Marginal position covariance of a node from the current
    linearization (ridge-regularized for unconstrained directions)."""
    order = sorted(graph.nodes)
    J, _ = graph._linearize(dict(graph.nodes), order)
    H = J.T @ J + np.eye(J.shape[1]) * 1e-9
    cov = np.linalg.inv(H)
    k = order.index(idx) * STATE_DIM
    return cov[k + 3:k + 6, k + 3:k + 6]


def write_run_outputs(out_dir, result: RunResult) -> None:
    import os

    os.makedirs(out_dir, exist_ok=True)
    write_tum(os.path.join(out_dir, "est.tum"), result.stamps, result.poses)
    with open(os.path.join(out_dir, "fused_imu.csv"), "w") as fh:
        fh.write("t_ns,fx,fy,fz,wx,wy,wz,wdx,wdy,wdz\n")
        for s in result.fused:
            vals = ",".join(f"{v:.9e}" for v in (*s.f, *s.w, *s.w_dot))
            fh.write(f"{s.stamp},{vals}\n")
    c = result.counters
    with open(os.path.join(out_dir, "counters.txt"), "w") as fh:
        fh.write(f"mask: {result.mask}\n")
        fh.write(f"imu_groups: {c.imu_groups}\n")
        fh.write(f"lidar_groups: {c.lidar_groups}\n")
        fh.write(f"fused_samples: {c.fused_samples}\n")
        fh.write(f"keyframes: {c.keyframes}\n")
        fh.write(f"icp_iterations: {c.icp_iterations}\n")
        fh.write(f"icp_degenerate: {c.icp_degenerate}\n")
        fh.write(f"icp_insufficient: {c.icp_insufficient}\n")
        fh.write(f"gnss_added: {c.gnss_added}\n")
        fh.write(f"gnss_rejected: {c.gnss_rejected}\n")
        for sid in sorted(c.sensors_consumed):
            fh.write(f"consumed {sid}: {c.sensors_consumed[sid]}\n")
