"""Analytic camera trajectories and the IMU readings they imply.

The camera orbits the object (at the world origin) at a fixed radius and
height while looking roughly at it. Position and attitude carry small
sum-of-sinusoid jitter, so velocity, acceleration and angular velocity all
have closed forms. World frame: z up. The IMU is co-located with the camera.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..geometry import Pose, matrix_to_quat
from ..imu import GRAVITY, ImuSample

# camera axes (x right, y down, z forward) expressed in a forward-left-up body frame
BODY_FROM_CAMERA = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
N_WAVES = 3


@dataclass(frozen=True)
class TrajectorySpec:
    duration: float = 20.0
    camera_rate: float = 25.0
    imu_rate: float = 200.0
    warmup: float = 1.0          # IMU history recorded before the first frame
    radius: float = 0.45
    height: float = 0.15
    angular_speed: float = 0.25  # rad/s around the object, sign sets direction
    start_angle: float = 0.0
    jitter_pos: float = 0.02     # m, summed amplitude per axis
    jitter_att: float = 0.04     # rad, summed amplitude per Euler angle
    jitter_freq: tuple = (0.1, 0.7)
    seed: int = 0

    def __post_init__(self):
        if self.camera_rate <= 0 or self.imu_rate <= 0 or self.duration <= 0:
            raise ValueError("rates and duration must be positive")
        ratio = self.imu_rate / self.camera_rate
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("imu_rate must be an integer multiple of camera_rate")

    @property
    def imu_per_frame(self) -> int:
        return int(round(self.imu_rate / self.camera_rate))

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.camera_rate))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["jitter_freq"] = list(self.jitter_freq)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectorySpec":
        known = {f.name for f in fields(cls)}
        if set(d) - known:
            raise ValueError(f"unknown trajectory keys: {sorted(set(d) - known)}")
        d = dict(d)
        if "jitter_freq" in d:
            d["jitter_freq"] = tuple(d["jitter_freq"])
        return cls(**d)


class _Waves:
    """Sum of sinusoids per channel, with its first and second derivatives."""

    def __init__(self, rng, channels, amplitude, freq_range):
        lo, hi = freq_range
        self.omega = 2 * np.pi * rng.uniform(lo, hi, size=(channels, N_WAVES))
        self.phase = rng.uniform(0, 2 * np.pi, size=(channels, N_WAVES))
        w = rng.uniform(0.5, 1.0, size=(channels, N_WAVES))
        self.amp = amplitude * w / w.sum(axis=1, keepdims=True)

    def __call__(self, t, order=0):
        arg = self.omega[None] * t[:, None, None] + self.phase[None]
        if order == 0:
            return (self.amp * np.sin(arg)).sum(-1)
        if order == 1:
            return (self.amp * self.omega * np.cos(arg)).sum(-1)
        return -(self.amp * self.omega**2 * np.sin(arg)).sum(-1)


def _rot_zyx(yaw, pitch, roll):
    cy, sy, cp, sp, cr, sr = np.cos(yaw), np.sin(yaw), np.cos(pitch), np.sin(pitch), np.cos(roll), np.sin(roll)
    r = np.empty(yaw.shape + (3, 3))
    r[..., 0, 0] = cy * cp
    r[..., 0, 1] = cy * sp * sr - sy * cr
    r[..., 0, 2] = cy * sp * cr + sy * sr
    r[..., 1, 0] = sy * cp
    r[..., 1, 1] = sy * sp * sr + cy * cr
    r[..., 1, 2] = sy * sp * cr - cy * sr
    r[..., 2, 0] = -sp
    r[..., 2, 1] = cp * sr
    r[..., 2, 2] = cp * cr
    return r


@dataclass
class Trajectory:
    """Camera states sampled at the IMU rate; frame k sits at sample ``frame_index[k]``."""
    spec: TrajectorySpec
    t: np.ndarray            # seconds, (N,)
    position: np.ndarray     # world, (N, 3)
    velocity: np.ndarray
    acceleration: np.ndarray
    rotation: np.ndarray     # world_from_camera, (N, 3, 3)
    omega: np.ndarray        # angular velocity in the camera frame, (N, 3)
    frame_index: np.ndarray  # (n_frames,)

    @property
    def t_ns(self) -> np.ndarray:
        return np.round(self.t * 1e9).astype(np.int64)

    def pose(self, i: int) -> Pose:
        """world_from_camera at IMU sample i."""
        return Pose(self.rotation[i], self.position[i])

    def frame_pose(self, k: int) -> Pose:
        return self.pose(int(self.frame_index[k]))


def evaluate(spec: TrajectorySpec, t: np.ndarray):
    """Closed-form camera state at times ``t``: (p, v, a, R_world_camera, omega_camera)."""
    rng = np.random.default_rng(spec.seed)
    pos_w = _Waves(rng, 3, spec.jitter_pos, spec.jitter_freq)
    att_w = _Waves(rng, 3, spec.jitter_att, spec.jitter_freq)
    w = spec.angular_speed
    ang = spec.start_angle + w * t
    c, s = np.cos(ang), np.sin(ang)
    r = spec.radius
    p = np.stack([r * c, r * s, np.full_like(t, spec.height)], axis=1) + pos_w(t, 0)
    v = np.stack([-r * w * s, r * w * c, np.zeros_like(t)], axis=1) + pos_w(t, 1)
    a = np.stack([-r * w * w * c, -r * w * w * s, np.zeros_like(t)], axis=1) + pos_w(t, 2)
    e = att_w(t, 0)
    de = att_w(t, 1)
    yaw = ang + np.pi + e[:, 0]
    pitch = np.arctan2(spec.height, spec.radius) + e[:, 1]
    roll = e[:, 2]
    dyaw, dpitch, droll = w + de[:, 0], de[:, 1], de[:, 2]
    r_wb = _rot_zyx(yaw, pitch, roll)
    # body rates of a Z-Y-X Euler sequence
    omega_b = np.stack([
        droll - dyaw * np.sin(pitch),
        dpitch * np.cos(roll) + dyaw * np.sin(roll) * np.cos(pitch),
        -dpitch * np.sin(roll) + dyaw * np.cos(roll) * np.cos(pitch),
    ], axis=1)
    r_wc = r_wb @ BODY_FROM_CAMERA
    omega_c = omega_b @ BODY_FROM_CAMERA  # = BODY_FROM_CAMERA.T @ omega_b per row
    return p, v, a, r_wc, omega_c


def generate_trajectory(spec: TrajectorySpec) -> Trajectory:
    n_imu = int(round((spec.warmup + spec.duration) * spec.imu_rate))
    t = np.arange(n_imu) / spec.imu_rate
    p, v, a, r_wc, omega = evaluate(spec, t)
    first = int(round(spec.warmup * spec.imu_rate))
    frame_index = first + spec.imu_per_frame * np.arange(spec.n_frames)
    frame_index = frame_index[frame_index < n_imu]
    return Trajectory(spec, t, p, v, a, r_wc, omega, frame_index)


@dataclass(frozen=True)
class ImuNoise:
    accel_sigma: float = 0.02
    gyro_sigma: float = 0.002
    accel_bias: tuple = (0.0, 0.0, 0.0)
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["accel_bias"], d["gyro_bias"] = list(self.accel_bias), list(self.gyro_bias)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ImuNoise":
        known = {f.name for f in fields(cls)}
        if set(d) - known:
            raise ValueError(f"unknown imu keys: {sorted(set(d) - known)}")
        d = dict(d)
        for k in ("accel_bias", "gyro_bias"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def imu_arrays(traj: Trajectory, noise: ImuNoise = ImuNoise(), gravity=(0.0, 0.0, -GRAVITY)):
    """(t_ns, accel, gyro, quat_wxyz) arrays for the whole trajectory.

    accel is the specific force R_cw (a_world - g) in the IMU frame.
    """
    rng = np.random.default_rng(noise.seed)
    n = len(traj.t)
    specific = traj.acceleration - np.asarray(gravity)
    accel = np.einsum("nji,nj->ni", traj.rotation, specific)
    accel = accel + np.asarray(noise.accel_bias) + rng.normal(0.0, 1.0, (n, 3)) * noise.accel_sigma
    gyro = traj.omega + np.asarray(noise.gyro_bias) + rng.normal(0.0, 1.0, (n, 3)) * noise.gyro_sigma
    quat = np.array([matrix_to_quat(r) for r in traj.rotation])
    return traj.t_ns, accel, gyro, quat


def synthesize_imu(traj: Trajectory, noise: ImuNoise = ImuNoise(), gravity=(0.0, 0.0, -GRAVITY)) -> list[ImuSample]:
    t_ns, accel, gyro, quat = imu_arrays(traj, noise, gravity)
    return [ImuSample(int(t), a, g, q) for t, a, g, q in zip(t_ns, accel, gyro, quat)]
