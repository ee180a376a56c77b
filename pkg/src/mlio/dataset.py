"""On-disk dataset format.

A dataset directory contains per-IMU CSVs, a GNSS CSV, per-lidar scan
directories, the ground-truth trajectory in TUM format and a copy of
the generating scenario:

    imu_<id>.csv          t_ns, fx, fy, fz, wx, wy, wz
    gnss.csv              t_ns, x, y, z, var
    scans/<id>/<n>.csv    header 'sensor_id,start,end' then t_offset_ns, x, y, z
    gt.tum                t x y z qx qy qz qw
    scenario.yaml         scenario copy
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .graph import GnssFix, write_tum
from .lidar import LidarScan
from .mimu import ImuSample
from .sim import Scenario, SimData, load_scenario, save_scenario

FLOAT_FMT = "%.9e"


def write_dataset(path, sim: SimData) -> None:
    os.makedirs(path, exist_ok=True)
    for sid, samples in sim.imu.items():
        rows = np.array(
            [[s.stamp, *s.f, *s.w] for s in samples], dtype=float
        ).reshape(-1, 7)
        np.savetxt(
            os.path.join(path, f"imu_{sid.split('/')[1]}.csv"),
            rows,
            fmt=["%d"] + [FLOAT_FMT] * 6,
            delimiter=",",
        )
    gnss_rows = np.array(
        [[f.stamp, *f.t, f.cov[0, 0]] for f in sim.gnss], dtype=float
    ).reshape(-1, 5)
    np.savetxt(
        os.path.join(path, "gnss.csv"),
        gnss_rows,
        fmt=["%d"] + [FLOAT_FMT] * 4,
        delimiter=",",
    )
    for sid, scans in sim.lidar.items():
        scan_dir = os.path.join(path, "scans", sid.split("/")[1])
        os.makedirs(scan_dir, exist_ok=True)
        for n, scan in enumerate(scans):
            fname = os.path.join(scan_dir, f"{n:06d}.csv")
            with open(fname, "w") as fh:
                fh.write(f"{scan.sensor_id},{scan.scan_start},{scan.scan_end}\n")
                offsets = scan.stamps - scan.scan_start
                for off, p in zip(offsets, scan.points):
                    fh.write(
                        f"{off},{FLOAT_FMT % p[0]},{FLOAT_FMT % p[1]},{FLOAT_FMT % p[2]}\n"
                    )
    write_tum(os.path.join(path, "gt.tum"), sim.gt.stamps, sim.gt.poses)
    save_scenario(os.path.join(path, "scenario.yaml"), sim.scenario)


def read_scan_file(path) -> LidarScan:
    with open(path) as fh:
        sensor_id, start, end = fh.readline().strip().split(",")
        rows = np.loadtxt(fh, delimiter=",").reshape(-1, 4)
    start, end = int(start), int(end)
    return LidarScan(
        sensor_id=sensor_id,
        scan_start=start,
        scan_end=end,
        stamps=rows[:, 0].astype(np.int64) + start,
        points=rows[:, 1:4],
    )


@dataclass(frozen=True)
class Dataset:
    path: str
    scenario: Scenario
    imu: dict  # 'imu/<pos>' -> [ImuSample]
    lidar: dict  # 'lidar/<pos>' -> [LidarScan]
    gnss: list  # [GnssFix]
    gt_stamps: np.ndarray
    gt_poses: tuple


def load_tum(path):
    from .geometry import Pose, quat_to_rotmat, to_nanos

    rows = np.loadtxt(path).reshape(-1, 8)
    stamps = np.array([to_nanos(t) for t in rows[:, 0]], dtype=np.int64)
    poses = tuple(
        Pose(quat_to_rotmat([r[7], r[4], r[5], r[6]]), r[1:4]) for r in rows
    )
    return stamps, poses


def load_dataset(path) -> Dataset:
    scenario = load_scenario(os.path.join(path, "scenario.yaml"))
    imu = {}
    for entry in sorted(os.listdir(path)):
        if entry.startswith("imu_") and entry.endswith(".csv"):
            pos = entry[len("imu_"):-len(".csv")]
            rows = np.loadtxt(os.path.join(path, entry), delimiter=",").reshape(-1, 7)
            imu[f"imu/{pos}"] = [
                ImuSample(stamp=int(r[0]), f=r[1:4], w=r[4:7]) for r in rows
            ]
    gnss = []
    gnss_path = os.path.join(path, "gnss.csv")
    if os.path.exists(gnss_path):
        rows = np.loadtxt(gnss_path, delimiter=",").reshape(-1, 5)
        gnss = [
            GnssFix(stamp=int(r[0]), t=r[1:4], cov=np.eye(3) * max(r[4], 1e-12))
            for r in rows
        ]
    lidar = {}
    scans_root = os.path.join(path, "scans")
    if os.path.isdir(scans_root):
        for pos in sorted(os.listdir(scans_root)):
            files = sorted(os.listdir(os.path.join(scans_root, pos)))
            lidar[f"lidar/{pos}"] = [
                read_scan_file(os.path.join(scans_root, pos, f)) for f in files
            ]
    gt_stamps, gt_poses = load_tum(os.path.join(path, "gt.tum"))
    return Dataset(
        path=str(path),
        scenario=scenario,
        imu=imu,
        lidar=lidar,
        gnss=gnss,
        gt_stamps=gt_stamps,
        gt_poses=gt_poses,
    )
