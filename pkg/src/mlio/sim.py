"""Deterministic scenario simulator.

Generates a ground-truth trajectory from piecewise constant-twist
segments, then synthesizes per-channel IMU measurements (including the
centrifugal and Euler lever-arm terms), motion-distorted lidar scans by
ray casting planes and boxes from the continuously moving sensor, and
GNSS fixes — all reproducible from a single scenario seed.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .geometry import (
    NS_PER_S,
    NavState,
    Pose,
    pose_compose,
    pose_inverse,
    quat_from_rotmat,
    quat_to_rotmat,
    se3_exp,
    se3_log,
    skew,
    so3_exp,
    to_nanos,
)
from .graph import GnssFix
from .lidar import LidarScan
from .mimu import ImuChannelCalib, ImuSample
from .preintegration import GRAVITY

# ---------------------------------------------------------------------------
# world geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Plane:
    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float).reshape(3))
        n = np.asarray(self.normal, dtype=float).reshape(3)
        object.__setattr__(self, "normal", n / np.linalg.norm(n))

    def raycast(self, origins, dirs) -> np.ndarray:
        denom = dirs @ self.normal
        num = (self.point - origins) @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > 1e-12, num / denom, np.inf)
        return np.where(t > 1e-6, t, np.inf)


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(3)
        hi = np.asarray(self.hi, dtype=float).reshape(3)
        if np.any(hi <= lo):
            raise ValueError("box hi must exceed lo")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def raycast(self, origins, dirs) -> np.ndarray:
        # slab method, vectorized over rays
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(np.abs(dirs) > 1e-12, 1.0 / dirs, np.inf)
        t1 = (self.lo - origins) * inv
        t2 = (self.hi - origins) * inv
        tmin = np.minimum(t1, t2).max(axis=1)
        tmax = np.maximum(t1, t2).min(axis=1)
        hit = (tmax >= tmin) & (tmax > 1e-6)
        entry = np.where(tmin > 1e-6, tmin, tmax)
        return np.where(hit, entry, np.inf)


def raycast_world(world, origins, dirs) -> np.ndarray:
    """Nearest positive hit distance per ray (inf where nothing is hit)."""
    best = np.full(len(origins), np.inf)
    for surface in world:
        best = np.minimum(best, surface.raycast(origins, dirs))
    return best


# ---------------------------------------------------------------------------
# scenario definition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LidarMount:
    pose: Pose
    fov_deg: float = 360.0
    n_azimuth: int = 60
    elevations_deg: tuple = tuple(np.linspace(-15.0, 10.0, 12))


@dataclass(frozen=True)
class Rates:
    imu_hz: float = 100.0
    lidar_hz: float = 5.0
    gnss_hz: float = 5.0

    def __post_init__(self):
        if min(self.imu_hz, self.lidar_hz, self.gnss_hz) <= 0:
            raise ValueError("rates must be positive")


@dataclass(frozen=True)
class NoiseSpec:
    accel_sigma: float = 0.0
    gyro_sigma: float = 0.0
    lidar_sigma: float = 0.0
    gnss_sigma: float = 0.0


@dataclass(frozen=True)
class Dropout:
    sensor_id: str
    start: float  # s
    end: float  # s

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError("dropout end must exceed start")


@dataclass(frozen=True)
class Scenario:
    seed: int = 0
    segments: tuple = ()  # (duration_s, twist6 (rot, trans)) pairs
    ramp: float = 0.0  # twist blend time at segment boundaries, s
    world: tuple = ()
    imus: dict = field(default_factory=dict)  # position -> ImuChannelCalib
    lidars: dict = field(default_factory=dict)  # position -> LidarMount
    gnss_lever: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rates: Rates = field(default_factory=Rates)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    dropouts: tuple = ()
    max_range: float = 80.0

    def __post_init__(self):
        segs = tuple(
            (float(d), np.asarray(tw, dtype=float).reshape(6))
            for d, tw in self.segments
        )
        if any(d <= 0 for d, _ in segs):
            raise ValueError("segment durations must be positive")
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "world", tuple(self.world))
        object.__setattr__(
            self, "gnss_lever", np.asarray(self.gnss_lever, dtype=float).reshape(3)
        )
        span = self.duration
        for d in self.dropouts:
            if d.start < 0 or d.end > span:
                raise ValueError("dropout outside trajectory span")

    @property
    def duration(self) -> float:
        return sum(d for d, _ in self.segments)


def _channel_rng(seed: int, sensor_id: str) -> np.random.Generator:
    """Independent, reproducible stream per sensor: unaffected by which
    other sensors are generated."""
    digest = hashlib.sha256(f"{seed}:{sensor_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroundTruth:
    stamps: np.ndarray  # (N,) ns
    poses: tuple  # N Pose, world <- base
    v_world: np.ndarray  # (N, 3)
    w_body: np.ndarray  # (N, 3)
    a_world: np.ndarray  # (N, 3)
    w_dot: np.ndarray  # (N, 3) body

    def states(self):
        return [
            NavState(pose=p, v=v, w=w)
            for p, v, w in zip(self.poses, self.v_world, self.w_body)
        ]

    def pose_at(self, stamp_ns: int) -> Pose:
        """Pose at an arbitrary time by constant-twist interpolation
        between the two bracketing samples."""
        stamps = self.stamps
        if stamp_ns <= stamps[0]:
            return self.poses[0]
        if stamp_ns >= stamps[-1]:
            return self.poses[-1]
        k = int(np.searchsorted(stamps, stamp_ns, side="right")) - 1
        T0, T1 = self.poses[k], self.poses[k + 1]
        eta = (stamp_ns - stamps[k]) / (stamps[k + 1] - stamps[k])
        xi = se3_log(pose_compose(pose_inverse(T0), T1))
        return pose_compose(T0, se3_exp(eta * xi))


def _twist_at(scenario: Scenario, t: float):
    """Body twist and its time derivative at time t (piecewise constant
    with optional smoothstep ramps at segment boundaries, so the
    acceleration profile is continuous)."""
    starts = []
    acc = 0.0
    for d, _ in scenario.segments:
        starts.append(acc)
        acc += d
    k = 0
    for i, s in enumerate(starts):
        if t >= s:
            k = i
    xi = scenario.segments[k][1]
    dxi = np.zeros(6)
    r = scenario.ramp
    if r > 0 and k > 0 and t < starts[k] + r:
        prev = scenario.segments[k - 1][1]
        alpha = (t - starts[k]) / r
        blend = alpha * alpha * (3.0 - 2.0 * alpha)
        dxi = 6.0 * alpha * (1.0 - alpha) / r * (xi - prev)
        xi = prev + blend * (xi - prev)
    return xi, dxi


def gen_trajectory(scenario: Scenario) -> GroundTruth:
    """Integrate the piecewise constant-twist trajectory at IMU rate."""
    dt = 1.0 / scenario.rates.imu_hz
    step_ns = int(round(dt * NS_PER_S))
    end_ns = to_nanos(scenario.duration)
    stamps = np.arange(0, end_ns, step_ns, dtype=np.int64)
    # close the span exactly even when it is not a multiple of dt
    if end_ns - stamps[-1] > step_ns // 100:
        stamps = np.append(stamps, end_ns)
    else:
        stamps[-1] = end_ns
    n = len(stamps)
    poses = [Pose.identity()]
    v_world = np.zeros((n, 3))
    w_body = np.zeros((n, 3))
    a_world = np.zeros((n, 3))
    w_dot = np.zeros((n, 3))
    for k in range(n):
        t = stamps[k] / NS_PER_S
        xi, dxi = _twist_at(scenario, t)
        w, v_b = xi[:3], xi[3:]
        R = poses[k].R
        v_world[k] = R @ v_b
        w_body[k] = w
        a_world[k] = R @ (skew(w) @ v_b + dxi[3:])
        w_dot[k] = dxi[:3]
        if k + 1 < n:
            h = (stamps[k + 1] - stamps[k]) / NS_PER_S
            xi_mid, _ = _twist_at(scenario, t + h / 2.0)
            poses.append(pose_compose(poses[k], se3_exp(xi_mid * h)))
    return GroundTruth(
        stamps=stamps,
        poses=tuple(poses),
        v_world=v_world,
        w_body=w_body,
        a_world=a_world,
        w_dot=w_dot,
    )


# ---------------------------------------------------------------------------
# sensor synthesis
# ---------------------------------------------------------------------------


def synth_imu(gt: GroundTruth, imus: dict, noise: NoiseSpec, seed: int) -> dict:
    """Per-channel IMU streams keyed 'imu/<position>'.

    Each channel at lever arm t sees the base specific force plus the
    centrifugal term w x (w x t) and the Euler term wdot x t, rotated
    into its own frame.
    """
    g = np.asarray(GRAVITY)
    out = {}
    n = len(gt.stamps)
    # base-frame specific force
    f_base = np.einsum(
        "nij,nj->ni",
        np.stack([p.R.T for p in gt.poses]),
        gt.a_world - g,
    )
    for pos, calib in imus.items():
        sid = f"imu/{pos}"
        rng = _channel_rng(seed, sid)
        centrifugal = np.cross(gt.w_body, np.cross(gt.w_body, calib.t))
        euler = np.cross(gt.w_dot, calib.t)
        f = (f_base + centrifugal + euler) @ calib.R  # row-wise R^T @ v
        w = gt.w_body @ calib.R
        if noise.accel_sigma > 0:
            f = f + rng.normal(scale=noise.accel_sigma, size=(n, 3))
        if noise.gyro_sigma > 0:
            w = w + rng.normal(scale=noise.gyro_sigma, size=(n, 3))
        out[sid] = [
            ImuSample(stamp=int(s), f=fi, w=wi)
            for s, fi, wi in zip(gt.stamps, f, w)
        ]
    return out


def _scan_pattern(mount: LidarMount):
    """Unit ray directions in the sensor frame, grouped per azimuth step."""
    half = math.radians(mount.fov_deg) / 2.0
    az = np.linspace(-half, half, mount.n_azimuth, endpoint=False)
    el = np.radians(mount.elevations_deg)
    dirs = np.empty((mount.n_azimuth, len(el), 3))
    dirs[..., 0] = np.cos(el)[None, :] * np.cos(az)[:, None]
    dirs[..., 1] = np.cos(el)[None, :] * np.sin(az)[:, None]
    dirs[..., 2] = np.tile(np.sin(el), (mount.n_azimuth, 1))
    return dirs


def synth_lidar(
    gt: GroundTruth,
    world,
    mounts: dict,
    rate: float,
    noise: NoiseSpec,
    seed: int,
    max_range: float = 80.0,
) -> dict:
    """Per-sensor motion-distorted scans keyed 'lidar/<position>'.

    Rays are cast from the continuously moving sensor pose; each azimuth
    step carries its own stamp across the scan period, so motion
    distortion is present by construction.
    """
    if not world:
        raise ValueError("world must be non-empty")
    period_ns = int(round(NS_PER_S / rate))
    n_scans = int(gt.stamps[-1] // period_ns)
    out = {}
    for pos, mount in mounts.items():
        sid = f"lidar/{pos}"
        rng = _channel_rng(seed, sid)
        pattern = _scan_pattern(mount)  # (n_az, n_el, 3)
        n_az, n_el = pattern.shape[:2]
        scans = []
        for i in range(n_scans):
            start = i * period_ns
            end = start + period_ns
            # constant-twist sensor motion across the scan period
            S0 = pose_compose(gt.pose_at(start), mount.pose)
            S1 = pose_compose(gt.pose_at(end), mount.pose)
            xi = se3_log(pose_compose(pose_inverse(S0), S1))
            offsets = (np.arange(n_az) * period_ns) // n_az
            origins = np.empty((n_az, 3))
            rot = np.empty((n_az, 3, 3))
            for a in range(n_az):
                Sa = pose_compose(S0, se3_exp(xi * (offsets[a] / period_ns)))
                origins[a] = Sa.t
                rot[a] = Sa.R
            dirs_w = np.einsum("aij,aej->aei", rot, pattern)
            o_flat = np.repeat(origins, n_el, axis=0)
            d_flat = dirs_w.reshape(-1, 3)
            ranges = raycast_world(world, o_flat, d_flat)
            if noise.lidar_sigma > 0:
                ranges = ranges + rng.normal(
                    scale=noise.lidar_sigma, size=ranges.shape
                )
            hit = np.isfinite(ranges) & (ranges <= max_range)
            if hit.sum() == 0:
                continue
            pts_sensor = pattern.reshape(-1, 3)[hit] * ranges[hit, None]
            stamps = start + np.repeat(offsets, n_el)[hit]
            scans.append(
                LidarScan(
                    sensor_id=sid,
                    scan_start=start,
                    scan_end=end,
                    stamps=stamps.astype(np.int64),
                    points=pts_sensor,
                )
            )
        out[sid] = scans
    return out


def synth_gnss(
    gt: GroundTruth, rate: float, sigma: float, lever, seed: int
) -> list:
    """GNSS fixes at the antenna position (base + lever arm)."""
    lever = np.asarray(lever, dtype=float).reshape(3)
    rng = _channel_rng(seed, "gnss")
    period_ns = int(round(NS_PER_S / rate))
    var = sigma**2 if sigma > 0 else 1e-12
    fixes = []
    for stamp in range(0, int(gt.stamps[-1]), period_ns):
        T = gt.pose_at(stamp)
        p = T.t + T.R @ lever
        if sigma > 0:
            p = p + rng.normal(scale=sigma, size=3)
        fixes.append(GnssFix(stamp=stamp, t=p, cov=np.eye(3) * var))
    return fixes


def _item_stamp(item) -> int:
    return item.scan_start if isinstance(item, LidarScan) else item.stamp


def inject_dropout(streams: dict, dropouts) -> dict:
    """Remove messages whose stamp falls in a (sensor, interval) dropout;
    everything else is passed through unchanged."""
    out = {}
    for sid, items in streams.items():
        windows = [
            (to_nanos(d.start), to_nanos(d.end))
            for d in dropouts
            if d.sensor_id == sid
        ]
        if not windows:
            out[sid] = list(items)
            continue
        out[sid] = [
            it
            for it in items
            if not any(a <= _item_stamp(it) <= b for a, b in windows)
        ]
    return out


@dataclass(frozen=True)
class SimData:
    scenario: Scenario
    gt: GroundTruth
    imu: dict  # 'imu/<pos>' -> [ImuSample]
    lidar: dict  # 'lidar/<pos>' -> [LidarScan]
    gnss: list  # [GnssFix]


def simulate(scenario: Scenario) -> SimData:
    """Full deterministic generation pass, dropouts applied."""
    gt = gen_trajectory(scenario)
    imu = synth_imu(gt, scenario.imus, scenario.noise, scenario.seed)
    lidar = synth_lidar(
        gt,
        scenario.world,
        scenario.lidars,
        scenario.rates.lidar_hz,
        scenario.noise,
        scenario.seed,
        scenario.max_range,
    )
    gnss = synth_gnss(
        gt,
        scenario.rates.gnss_hz,
        scenario.noise.gnss_sigma,
        scenario.gnss_lever,
        scenario.seed,
    )
    imu = inject_dropout(imu, scenario.dropouts)
    lidar = inject_dropout(lidar, scenario.dropouts)
    gnss_streams = inject_dropout({"gnss": gnss}, scenario.dropouts)
    return SimData(
        scenario=scenario, gt=gt, imu=imu, lidar=lidar, gnss=gnss_streams["gnss"]
    )


# ---------------------------------------------------------------------------
# scenario serialization
# ---------------------------------------------------------------------------


def scenario_to_dict(s: Scenario) -> dict:
    def pose_dict(p: Pose) -> dict:
        return {
            "quat": [float(x) for x in quat_from_rotmat(p.R)],
            "t": [float(x) for x in p.t],
        }

    world = []
    for surf in s.world:
        if isinstance(surf, Plane):
            world.append(
                {
                    "type": "plane",
                    "point": [float(x) for x in surf.point],
                    "normal": [float(x) for x in surf.normal],
                }
            )
        else:
            world.append(
                {
                    "type": "box",
                    "lo": [float(x) for x in surf.lo],
                    "hi": [float(x) for x in surf.hi],
                }
            )
    return {
        "seed": int(s.seed),
        "ramp": float(s.ramp),
        "max_range": float(s.max_range),
        "segments": [
            {"duration": float(d), "twist": [float(x) for x in tw]}
            for d, tw in s.segments
        ],
        "world": world,
        "imus": {
            pos: {
                "quat": [float(x) for x in quat_from_rotmat(c.R)],
                "lever_arm": [float(x) for x in c.t],
                "acc_noise_var": [float(x) for x in c.acc_noise_var],
                "gyro_noise_var": [float(x) for x in c.gyro_noise_var],
            }
            for pos, c in s.imus.items()
        },
        "lidars": {
            pos: {
                "pose": pose_dict(m.pose),
                "fov_deg": float(m.fov_deg),
                "n_azimuth": int(m.n_azimuth),
                "elevations_deg": [float(x) for x in m.elevations_deg],
            }
            for pos, m in s.lidars.items()
        },
        "gnss_lever": [float(x) for x in s.gnss_lever],
        "rates": {
            "imu_hz": float(s.rates.imu_hz),
            "lidar_hz": float(s.rates.lidar_hz),
            "gnss_hz": float(s.rates.gnss_hz),
        },
        "noise": {
            "accel_sigma": float(s.noise.accel_sigma),
            "gyro_sigma": float(s.noise.gyro_sigma),
            "lidar_sigma": float(s.noise.lidar_sigma),
            "gnss_sigma": float(s.noise.gnss_sigma),
        },
        "dropouts": [
            {"sensor": d.sensor_id, "start": float(d.start), "end": float(d.end)}
            for d in s.dropouts
        ],
    }


def scenario_from_dict(doc: dict) -> Scenario:
    world = []
    for surf in doc.get("world", []):
        if surf["type"] == "plane":
            world.append(Plane(point=surf["point"], normal=surf["normal"]))
        elif surf["type"] == "box":
            world.append(Box(lo=surf["lo"], hi=surf["hi"]))
        else:
            raise ValueError(f"unknown surface type {surf['type']!r}")
    imus = {
        pos: ImuChannelCalib(
            R=quat_to_rotmat(np.asarray(c["quat"], dtype=float)),
            t=c["lever_arm"],
            acc_noise_var=c["acc_noise_var"],
            gyro_noise_var=c["gyro_noise_var"],
        )
        for pos, c in doc.get("imus", {}).items()
    }
    lidars = {
        pos: LidarMount(
            pose=Pose(
                quat_to_rotmat(np.asarray(m["pose"]["quat"], dtype=float)),
                m["pose"]["t"],
            ),
            fov_deg=m.get("fov_deg", 360.0),
            n_azimuth=m.get("n_azimuth", 90),
            elevations_deg=tuple(m.get("elevations_deg", (-15.0, -5.0, 0.0, 10.0))),
        )
        for pos, m in doc.get("lidars", {}).items()
    }
    rates = Rates(**doc.get("rates", {}))
    noise = NoiseSpec(**doc.get("noise", {}))
    dropouts = tuple(
        Dropout(sensor_id=d["sensor"], start=d["start"], end=d["end"])
        for d in doc.get("dropouts", [])
    )
    return Scenario(
        seed=doc.get("seed", 0),
        segments=[(seg["duration"], seg["twist"]) for seg in doc["segments"]],
        ramp=doc.get("ramp", 0.0),
        world=world,
        imus=imus,
        lidars=lidars,
        gnss_lever=doc.get("gnss_lever", [0.0, 0.0, 0.0]),
        rates=rates,
        noise=noise,
        dropouts=dropouts,
        max_range=doc.get("max_range", 80.0),
    )


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(yaml.safe_load(fh))


def save_scenario(path, scenario: Scenario) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(scenario_to_dict(scenario), fh, sort_keys=False)


# ---------------------------------------------------------------------------
# built-in scenarios
# ---------------------------------------------------------------------------


def _default_rig(accel_var=1e-4, gyro_var=1e-6):
    """Four IMUs at the rig corners and four yawed wide-FOV lidars."""
    levers = {
        "F_L": [0.5, 0.3, 0.0],
        "F_R": [0.5, -0.3, 0.0],
        "R_L": [-0.5, 0.3, 0.0],
        "R_R": [-0.5, -0.3, 0.0],
    }
    imus = {
        pos: ImuChannelCalib(
            R=np.eye(3),
            t=lever,
            acc_noise_var=[accel_var] * 3,
            gyro_noise_var=[gyro_var] * 3,
        )
        for pos, lever in levers.items()
    }
    yaws = {"F_L": 45.0, "F_R": -45.0, "R_L": 135.0, "R_R": -135.0}
    lidars = {
        pos: LidarMount(
            pose=Pose(
                so3_exp([0.0, 0.0, math.radians(yaws[pos])]),
                [lever[0] * 2.0, lever[1] * 2.0, 1.8],
            ),
            fov_deg=180.0,
        )
        for pos, lever in levers.items()
    }
    return imus, lidars


def _loop_world(side: float, lane: float = 8.0) -> list:
    """Square loop course: ground plane, inner/outer walls and corner
    pillars for longitudinal ICP constraints."""
    world = [Plane(point=[0, 0, 0], normal=[0, 0, 1])]
    h = 4.0
    lo, hi = -lane, side + lane
    t = 0.4  # wall thickness
    world += [
        Box(lo=[lo - t, lo - t, 0], hi=[hi + t, lo, h]),
        Box(lo=[lo - t, hi, 0], hi=[hi + t, hi + t, h]),
        Box(lo=[lo - t, lo, 0], hi=[lo, hi, h]),
        Box(lo=[hi, lo, 0], hi=[hi + t, hi, h]),
    ]
    inner_lo, inner_hi = lane, side - lane
    if inner_hi > inner_lo:
        world.append(
            Box(lo=[inner_lo, inner_lo, 0], hi=[inner_hi, inner_hi, h + 2.0])
        )
    # facade blocks protruding from both wall lines break the corridor
    # symmetry and constrain the along-track direction everywhere,
    # whichever side of the lane a sensor happens to face
    depth, width, pitch = 3.0, 4.0, 12.0
    n_blocks = int((hi - lo) // pitch)
    for i in range(n_blocks):
        c = lo + (i + 0.5) * pitch
        hb = 5.0 if i % 2 else 3.0
        world += [
            Box(lo=[c - width / 2, lo, 0], hi=[c + width / 2, lo + depth, hb]),
            Box(lo=[c - width / 2, hi - depth, 0], hi=[c + width / 2, hi, hb]),
            Box(lo=[lo, c - width / 2, 0], hi=[lo + depth, c + width / 2, hb]),
            Box(lo=[hi - depth, c - width / 2, 0], hi=[hi, c + width / 2, hb]),
        ]
        if inner_hi > inner_lo and inner_lo + width < c < inner_hi - width:
            hc = 6.0 if i % 2 else 4.0
            world += [
                Box(lo=[c - width / 2, inner_lo - depth, 0],
                    hi=[c + width / 2, inner_lo, hc]),
                Box(lo=[c - width / 2, inner_hi, 0],
                    hi=[c + width / 2, inner_hi + depth, hc]),
                Box(lo=[inner_lo - depth, c - width / 2, 0],
                    hi=[inner_lo, c + width / 2, hc]),
                Box(lo=[inner_hi, c - width / 2, 0],
                    hi=[inner_hi + depth, c + width / 2, hc]),
            ]
    return world


def loop_scenario(
    side: float = 110.0,
    speed: float = 8.0,
    seed: int = 0,
    noise: NoiseSpec = None,
    dropouts=(),
) -> Scenario:
    """Closed square loop (four straights and four quarter-turn arcs),
    driven counter-clockwise starting at the origin facing +x."""
    radius = 8.0
    straight = side - 2.0 * radius
    if straight <= 0:
        raise ValueError("side too small for the turn radius")
    w_z = speed / radius
    t_straight = straight / speed
    t_turn = (math.pi / 2.0) / w_z
    # start at rest so gravity alignment sees a static vehicle; the ramp
    # blends smoothly into the first straight
    segments = [(1.0, np.zeros(6))]
    for _ in range(4):
        segments.append((t_straight, [0, 0, 0, speed, 0, 0]))
        segments.append((t_turn, [0, 0, w_z, speed, 0, 0]))
    imus, lidars = _default_rig()
    return Scenario(
        seed=seed,
        segments=segments,
        ramp=0.5,
        world=_loop_world(side),
        imus=imus,
        lidars=lidars,
        gnss_lever=[0.0, 0.0, 2.0],
        rates=Rates(),
        noise=noise if noise is not None else NoiseSpec(),
        dropouts=tuple(dropouts),
    )


def corridor_scenario(
    length: float = 60.0, speed: float = 5.0, seed: int = 0,
    noise: NoiseSpec = None, dropouts=(),
) -> Scenario:
    """Straight drive between two parallel walls (degeneracy stressor)."""
    world = [
        Plane(point=[0, 0, 0], normal=[0, 0, 1]),
        Box(lo=[-10, 4, 0], hi=[length + 10, 4.4, 4.0]),
        Box(lo=[-10, -4.4, 0], hi=[length + 10, -4, 4.0]),
        Box(lo=[length + 6, -4, 0], hi=[length + 6.4, 4, 4.0]),
    ]
    imus, lidars = _default_rig()
    return Scenario(
        seed=seed,
        segments=[(1.0, np.zeros(6)), (length / speed, [0, 0, 0, speed, 0, 0])],
        ramp=0.5,
        world=world,
        imus=imus,
        lidars=lidars,
        gnss_lever=[0.0, 0.0, 2.0],
        noise=noise if noise is not None else NoiseSpec(),
        dropouts=tuple(dropouts),
    )


BUILTIN_SCENARIOS = {
    "urban-loop": loop_scenario,
    "corridor": corridor_scenario,
}


def builtin_scenario(name: str, **kwargs) -> Scenario:
    if name not in BUILTIN_SCENARIOS:
        raise KeyError(
            f"unknown scenario {name!r}; available: {sorted(BUILTIN_SCENARIOS)}"
        )
    return BUILTIN_SCENARIOS[name](**kwargs)
