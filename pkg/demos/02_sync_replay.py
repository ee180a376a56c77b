"""Synchronizing lossy multi-sensor streams.

Replays a scripted loss pattern through the buffered synchronizer: a
healthy frame groups all four lidars, then two sensors fall silent and
the survivors are fused on their own once the age limit passes.
"""

from mlio.sync import POSITIONS, StampedSignal, Synchronizer

S = 1_000_000_000


def main():
    sensors = [f"lidar/{p}" for p in POSITIONS]
    sync = Synchronizer(sensors)

    def push(sid, t_s):
        sync.push(StampedSignal(stamp=int(t_s * S), sensor_id=sid, payload=t_s))

    print("frame 1: all four report within the 10 ms window")
    for sid, t in zip(sensors, (100.000, 100.004, 100.007, 100.009)):
        push(sid, t)
    for g in sync.drain():
        print(f"  group @ {g.anchor_stamp / S:.3f}s members={sorted(g.members)}")

    print("frame 2: only F_L and R_R survive")
    push("lidar/F_L", 100.200)
    push("lidar/R_R", 100.203)
    print("  drained now:", list(sync.drain()), "(still waiting on the silent pair)")

    print("frame 3: everyone reports again, aging frame 2 out")
    for sid in sensors:
        push(sid, 100.600)
    for g in sync.drain():
        print(f"  group @ {g.anchor_stamp / S:.3f}s members={sorted(g.members)}")
    print("counters:", sync.counters)


if __name__ == "__main__":
    main()
