"""Online tracking loop: render, crop, infer, compose, and the re-init policy."""
from __future__ import annotations

import csv
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose, Twist, compose, pseudo_exp, relative_pose, pseudo_log
from .imu import ImuBuffer
from .scene import CameraIntrinsics, ObjectModel, ProjectionError, crop_resize, object_bbox, render

STAGES = ("render", "crop", "inference", "compose")


class TrackingLost(RuntimeError):
    """The estimate left the camera's view (object at or behind the image plane)."""


@dataclass(frozen=True)
class ReinitPolicy:
    window_len: int = 10
    rot_threshold_deg: float = 10.0
    trans_threshold: float = 0.01

    def __post_init__(self):
        if self.window_len < 1 or self.rot_threshold_deg <= 0 or self.trans_threshold <= 0:
            raise ValueError("policy window and thresholds must be positive")


@dataclass
class TrackerState:
    current_pose: Pose = field(default_factory=Pose.identity)
    window: deque = field(default_factory=lambda: deque(maxlen=10))
    frame_count: int = 0
    reinit_count: int = 0

    @classmethod
    def for_policy(cls, policy: ReinitPolicy) -> "TrackerState":
        return cls(window=deque(maxlen=policy.window_len))


@dataclass(frozen=True)
class TrackConfig:
    input_h: int = 120
    input_w: int = 160
    expand: float = 1.4


def init(state: TrackerState, pose0: Pose):
    """Start tracking from ``pose0``; the re-init counter is left alone."""
    state.current_pose = pose0
    state.window.clear()
    state.frame_count = 0


def _angle(w) -> float:
    return float(np.linalg.norm(w))


def needs_reinit(state: TrackerState, policy: ReinitPolicy) -> bool:
    """True once the window is full and its mean rotation or translation is too large."""
    win = list(state.window)[-policy.window_len:]
    if len(win) < policy.window_len:
        return False
    mean_rot = np.degrees(np.mean([_angle(v.w) for v in win]))
    mean_trans = np.mean([np.linalg.norm(v.t) for v in win])
    return bool(mean_rot > policy.rot_threshold_deg or mean_trans > policy.trans_threshold)


def reinit(state: TrackerState, pose: Pose):
    state.current_pose = pose
    state.window.clear()
    state.reinit_count += 1


@dataclass
class StepResult:
    pose: Pose
    twist: Twist
    bbox: object
    reference: np.ndarray
    observation: np.ndarray
    timings: dict


def step(state: TrackerState, image: np.ndarray, imu, predictor, model: ObjectModel, intr: CameraIntrinsics,
         cfg: TrackConfig = TrackConfig(), frame: int | None = None) -> StepResult:
    """Advance one frame. ``predictor(ref, obs, imu, frame)`` returns (w, t)."""
    timings = {}
    prev = state.current_pose
    t0 = time.perf_counter()
    try:
        box = object_bbox(model, prev, intr, cfg.expand)
    except ProjectionError as e:
        raise TrackingLost(f"frame {frame}: estimate not in front of the camera ({e})") from None
    ref_full = render(model, prev, intr)
    t1 = time.perf_counter()
    ref = crop_resize(ref_full, box, cfg.input_w, cfg.input_h)
    if image.dtype == np.uint8:
        image = image.astype(np.float32) / 255.0
    obs = crop_resize(image, box, cfg.input_w, cfg.input_h)
    imu_in = imu.as_network_input() if isinstance(imu, ImuBuffer) else imu
    t2 = time.perf_counter()
    w, t = predictor(ref, obs, imu_in, frame)
    t3 = time.perf_counter()
    delta = Twist(t, w)
    pose = compose(pseudo_exp(delta), prev)
    if not (np.all(np.isfinite(pose.rotation)) and np.all(np.isfinite(pose.translation))):
        raise TrackingLost(f"frame {frame}: non-finite pose")
    state.current_pose = pose
    state.window.append(delta)
    state.frame_count += 1
    t4 = time.perf_counter()
    timings.update(render=t1 - t0, crop=t2 - t1, inference=t3 - t2, compose=t4 - t3)
    return StepResult(pose, delta, box, ref, obs, timings)


# ---------------------------------------------------------------- predictors

class NetworkPredictor:
    def __init__(self, net, no_imu: bool = False):
        self.net = net
        self.no_imu = no_imu
        net.eval()

    def __call__(self, ref, obs, imu, frame=None):
        if self.no_imu or imu is None:
            imu = np.zeros((self.net.cfg.imu_len, 6), dtype=np.float32)
        return self.net.predict(ref, obs, imu)


class OraclePredictor:
    """Returns the true frame-to-frame relative twist; exercises the pipeline without learning."""

    def __init__(self, gt_poses):
        self.gt = list(gt_poses)

    def __call__(self, ref, obs, imu, frame):
        v = pseudo_log(relative_pose(self.gt[frame - 1], self.gt[frame]))
        return v.w, v.t


class ZeroPredictor:
    """Identity-motion baseline."""

    def __call__(self, ref, obs, imu, frame=None):
        return np.zeros(3), np.zeros(3)


# ---------------------------------------------------------------- sequences

@dataclass
class TrackResult:
    poses: list
    t_ns: list
    reinit_flags: list
    latency: list        # per tracked frame: dict of stage -> seconds
    reinit_count: int
    lost_frames: list = field(default_factory=list)

    def write_trajectory(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRAJECTORY_COLUMNS)
            for k, (pose, t, flag) in enumerate(zip(self.poses, self.t_ns, self.reinit_flags)):
                w.writerow([k, t] + [repr(float(x)) for x in pose.to_row()] + [int(flag)])

    def write_latency(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LATENCY_COLUMNS)
            for row in self.latency:
                w.writerow([row["frame"]] + [repr(float(row[s])) for s in STAGES] + [repr(float(row["total"]))])


TRAJECTORY_COLUMNS = ["frame", "t_ns"] + [f"r{i}{j}" for i in range(3) for j in range(3)] + ["tx", "ty", "tz", "reinit"]
LATENCY_COLUMNS = ["frame", *STAGES, "total"]


def read_trajectory(path):
    """(poses, t_ns, reinit flags) from a trajectory CSV."""
    poses, t_ns, flags = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != TRAJECTORY_COLUMNS:
            raise ValueError(f"{path}: unexpected trajectory header")
        for row in reader:
            t_ns.append(int(row[1]))
            poses.append(Pose.from_row([float(x) for x in row[2:14]]))
            flags.append(bool(int(row[14])))
    return poses, t_ns, flags


def read_latency(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != LATENCY_COLUMNS:
            raise ValueError(f"{path}: unexpected latency header")
        return [{"frame": int(r["frame"]), **{c: float(r[c]) for c in LATENCY_COLUMNS[1:]}} for r in reader]


def track_sequence(frames, imu_samples, gt_poses, predictor, model: ObjectModel, intr: CameraIntrinsics,
                   policy: ReinitPolicy = ReinitPolicy(), cfg: TrackConfig = TrackConfig(),
                   imu_len: int = 200, init_pose: Pose | None = None, on_step=None,
                   on_lost: str = "reset") -> TrackResult:
    """Track a whole sequence.

    ``frames`` yields (t_ns, image). Frame 0 initializes the tracker with
    ``init_pose`` (ground truth by default); every later frame is one step.
    IMU samples up to each frame's timestamp are pushed before its step, and
    after each step the policy may reset the estimate to ground truth before
    the next frame is rendered. Latency rows cover the tracked frames only.

    A lost track (estimate behind the camera) raises when ``on_lost`` is
    "raise"; with "reset" the frame keeps the previous estimate, the tracker
    restarts from ground truth and the frame is listed in ``lost_frames``.
    Lost-track resets are not policy re-inits and are not counted as such.
    """
    if on_lost not in ("reset", "raise"):
        raise ValueError("on_lost must be 'reset' or 'raise'")
    gt_poses = list(gt_poses)
    state = TrackerState.for_policy(policy)
    buf = ImuBuffer(imu_len)
    samples = list(imu_samples)
    fed = 0
    poses, stamps, flags, latency, lost = [], [], [], [], []
    for k, (t_ns, image) in enumerate(frames):
        while fed < len(samples) and samples[fed].t_ns <= t_ns:
            buf.push(samples[fed])
            fed += 1
        stamps.append(int(t_ns))
        if k == 0:
            init(state, init_pose if init_pose is not None else gt_poses[0])
            poses.append(state.current_pose)
            flags.append(False)
            continue
        try:
            res = step(state, image, buf, predictor, model, intr, cfg, frame=k)
        except TrackingLost:
            if on_lost == "raise":
                raise
            poses.append(state.current_pose)
            flags.append(False)
            lost.append(k)
            init(state, gt_poses[k])
            continue
        poses.append(res.pose)
        latency.append({"frame": k, **res.timings, "total": sum(res.timings.values())})
        fired = needs_reinit(state, policy)
        if fired:
            reinit(state, gt_poses[k])
        flags.append(fired)
        if on_step:
            on_step(k, res, fired)
    return TrackResult(poses, stamps, flags, latency, state.reinit_count, lost)


def track_dataset_sequence(seq, predictor, model, intr, policy=ReinitPolicy(), cfg=TrackConfig(),
                           imu_len=200, init_pose=None, max_frames=None, on_step=None,
                           on_lost="reset") -> TrackResult:
    """Convenience driver over a datagen Sequence."""
    from .imu import ImuSample
    n = len(seq) if max_frames is None else min(len(seq), max_frames)
    samples = [ImuSample(int(t), a, g, q) for t, a, g, q in
               zip(seq.imu_t_ns, seq.imu_accel, seq.imu_gyro, seq.imu_quat)]
    frames = ((seq.records[k].t_ns, seq.frame(k)) for k in range(n))
    gt = [seq.pose(k) for k in range(n)]
    return track_sequence(frames, samples, gt, predictor, model, intr, policy, cfg, imu_len, init_pose, on_step,
                          on_lost)
