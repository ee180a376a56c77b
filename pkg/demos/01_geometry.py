"""SE(3) basics and screw interpolation.

Shows the Lie-group helpers the rest of the package is built on: poses,
exp/log round trips, and dual-quaternion screw interpolation (the kernel
used for scan deskewing).
"""

import numpy as np

from mlio.geometry import (
    Pose,
    dq_from_pose,
    dq_pow_many,
    dq_to_pose,
    pose_compose,
    pose_inverse,
    se3_exp,
    se3_log,
    so3_exp,
)


def main():
    xi = np.array([0.1, -0.2, 0.3, 1.0, 0.5, -0.2])  # (rot, trans) tangent
    T = se3_exp(xi)
    print("exp/log round trip error:", np.linalg.norm(se3_log(T) - xi))

    a = Pose(so3_exp([0.0, 0.0, 0.7]), np.array([1.0, 2.0, 0.0]))
    b = pose_compose(a, T)
    rel = pose_compose(pose_inverse(a), b)
    print("recovered relative motion:", np.round(se3_log(rel), 6))

    # screw interpolation: rel^eta sweeps the constant-twist path a -> b
    q = dq_from_pose(rel)
    print("\nconstant-twist interpolation between a and b:")
    for eta, qe in zip([0.0, 0.25, 0.5, 1.0], dq_pow_many(q, [0.0, 0.25, 0.5, 1.0])):
        p = pose_compose(a, dq_to_pose(qe))
        print(f"  eta={eta:4.2f}  t={np.round(p.t, 4)}")


if __name__ == "__main__":
    main()
