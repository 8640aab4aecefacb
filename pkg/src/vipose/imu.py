"""IMU samples, the K-sample history buffer and the gravity-aligned input frame."""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass

import numpy as np

GRAVITY = 9.81
CSV_COLUMNS = ["t_ns", "ax", "ay", "az", "gx", "gy", "gz", "qw", "qx", "qy", "qz"]


class ImuOrderError(ValueError):
    """Sample timestamps must strictly increase."""


@dataclass(frozen=True, eq=False)
class ImuSample:
    t_ns: int
    accel: np.ndarray
    gyro: np.ndarray
    orientation: np.ndarray  # world_from_body, (w, x, y, z)

    def __post_init__(self):
        for name in ("accel", "gyro"):
            a = np.array(getattr(self, name), dtype=np.float64).reshape(3)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        q = np.array(self.orientation, dtype=np.float64).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ValueError("orientation must be a unit quaternion")
        q.setflags(write=False)
        object.__setattr__(self, "orientation", q)
        object.__setattr__(self, "t_ns", int(self.t_ns))


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors (N, 3) by unit quaternions (N, 4) in (w, x, y, z) order."""
    w = q[:, :1]
    u = q[:, 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def heading_agnostic(accel, gyro, quats, subtract_gravity: bool = False) -> np.ndarray:
    """Array form of :func:`to_heading_agnostic`: returns (N, 6) rows [accel, gyro] in world frame."""
    quats = np.asarray(quats, dtype=np.float64).reshape(-1, 4)
    a = quat_rotate(quats, np.asarray(accel, dtype=np.float64).reshape(-1, 3))
    g = quat_rotate(quats, np.asarray(gyro, dtype=np.float64).reshape(-1, 3))
    if subtract_gravity:
        a = a - np.array([0.0, 0.0, GRAVITY])
    return np.concatenate([a, g], axis=1)


def to_heading_agnostic(samples, subtract_gravity: bool = False) -> np.ndarray:
    """Rotate body-frame measurements into the gravity-aligned world frame.

    Gravity stays in the acceleration rows unless ``subtract_gravity`` is set,
    so a resting device reads (0, 0, +g).
    """
    if not samples:
        return np.zeros((0, 6))
    return heading_agnostic([s.accel for s in samples], [s.gyro for s in samples],
                            [s.orientation for s in samples], subtract_gravity)


class ImuBuffer:
    """Fixed-capacity FIFO of the most recent IMU samples."""

    def __init__(self, capacity: int = 200, subtract_gravity: bool = False):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.subtract_gravity = subtract_gravity
        self._samples: deque[ImuSample] = deque(maxlen=capacity)

    def __len__(self):
        return len(self._samples)

    def __iter__(self):
        return iter(self._samples)

    @property
    def newest_t_ns(self) -> int | None:
        return self._samples[-1].t_ns if self._samples else None

    def push(self, s: ImuSample) -> "ImuBuffer":
        if self._samples and s.t_ns <= self._samples[-1].t_ns:
            raise ImuOrderError(f"timestamp {s.t_ns} not after {self._samples[-1].t_ns}")
        self._samples.append(s)
        return self

    def extend(self, samples) -> "ImuBuffer":
        for s in samples:
            self.push(s)
        return self

    def clear(self):
        self._samples.clear()

    def as_network_input(self) -> np.ndarray:
        """(K, 6) float32 snapshot, oldest row first, zero rows in front while underfull."""
        out = np.zeros((self.capacity, 6), dtype=np.float32)
        n = len(self._samples)
        if n:
            out[self.capacity - n:] = to_heading_agnostic(list(self._samples), self.subtract_gravity)
        return out


def write_imu_csv(path, samples):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for s in samples:
            w.writerow([s.t_ns] + [repr(float(x)) for x in (*s.accel, *s.gyro, *s.orientation)])


def read_imu_csv(path) -> list[ImuSample]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected IMU header {header}")
        out = []
        for row in reader:
            vals = [float(x) for x in row[1:]]
            out.append(ImuSample(int(row[0]), vals[0:3], vals[3:6], vals[6:10]))
    for a, b in zip(out, out[1:]):
        if b.t_ns <= a.t_ns:
            raise ImuOrderError(f"{path}: timestamps not increasing at {b.t_ns}")
    return out
