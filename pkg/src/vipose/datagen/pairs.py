"""Reference/observation training pairs built from real frames or sampled poses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Pose, Twist, compose, inverse, pseudo_exp, pseudo_log, relative_pose, sample_relative_pose
from ..scene import BBox, CameraIntrinsics, ObjectModel, ProjectionError, crop_resize, object_bbox, render


@dataclass(frozen=True)
class PairConfig:
    input_h: int = 120
    input_w: int = 160
    expand: float = 1.4
    sigma_rot_deg: float = 10.0
    sigma_trans: float = 0.02


@dataclass
class TrainingPair:
    reference: np.ndarray     # (H, W, 3) float32, rendered at the previous pose
    observation: np.ndarray   # (H, W, 3) float32, camera image
    imu: np.ndarray | None    # (K, 6) float32, real pairs only
    target: Twist
    source: str               # "real" or "synthetic"
    bbox: BBox | None = None


def crop_pair(model: ObjectModel, prev: Pose, frame: np.ndarray, intr: CameraIntrinsics, cfg: PairConfig):
    """Render at ``prev`` and crop both images with the one box computed from ``prev``."""
    box = object_bbox(model, prev, intr, cfg.expand)
    ref = crop_resize(render(model, prev, intr), box, cfg.input_w, cfg.input_h)
    obs = crop_resize(_as_float(frame), box, cfg.input_w, cfg.input_h)
    return ref, obs, box


def _as_float(img):
    img = np.asarray(img)
    return img.astype(np.float32) / 255.0 if img.dtype == np.uint8 else img.astype(np.float32)


def make_real_pair(frame_t, gt_prev: Pose, gt_t: Pose, model: ObjectModel, intr: CameraIntrinsics,
                   cfg: PairConfig = PairConfig(), imu_window=None) -> TrainingPair:
    ref, obs, box = crop_pair(model, gt_prev, frame_t, intr, cfg)
    target = pseudo_log(relative_pose(gt_prev, gt_t))
    imu = None if imu_window is None else np.asarray(imu_window, dtype=np.float32)
    return TrainingPair(ref, obs, imu, target, "real", box)


def make_synthetic_pair(frame_t, gt_t: Pose, rng: np.random.Generator, model: ObjectModel,
                        intr: CameraIntrinsics, cfg: PairConfig = PairConfig(), max_tries: int = 20) -> TrainingPair:
    """Sample a relative motion, render the implied previous pose and pair it with frame t."""
    for _ in range(max_tries):
        delta = sample_relative_pose(rng, cfg.sigma_rot_deg, cfg.sigma_trans)
        prev = compose(inverse(delta), gt_t)
        try:
            ref, obs, box = crop_pair(model, prev, frame_t, intr, cfg)
        except ProjectionError:
            continue  # sampled pose put part of the object behind the camera
        return TrainingPair(ref, obs, None, pseudo_log(delta), "synthetic", box)
    raise ProjectionError("could not sample a previous pose in front of the camera")


def reconstruct(target: Twist, prev: Pose) -> Pose:
    return compose(pseudo_exp(target), prev)
