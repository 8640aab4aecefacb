"""Per-frame rendering of a sequence with scripted occluders and auto-labels."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..geometry import Pose, compose, inverse
from ..scene import CameraIntrinsics, ObjectModel, box_model, hsv_to_rgb, project_points, quantize, rasterize
from .trajectory import Trajectory

OCCLUDER_THICKNESS = 0.004
OCCLUDER_MARGIN_PX = 4.0


def auto_label(world_from_object: Pose, world_from_camera: Pose) -> Pose:
    """Ground-truth object pose in the camera frame."""
    return compose(inverse(world_from_camera), world_from_object)


@dataclass(frozen=True)
class OcclusionEpisode:
    """An occluder slides in front of the target during frames [start, end].

    ``coverage`` is the fraction of the target's projected width hidden at
    the plateau, entering from ``side``. Over the first and last ``ramp``
    frames the coverage grows from and shrinks back to zero.
    """
    start: int
    end: int
    coverage: float = 1.0
    side: str = "left"
    ramp: int = 0
    depth_ratio: float = 0.5

    def __post_init__(self):
        if self.end < self.start or self.start < 0:
            raise ValueError("episode needs 0 <= start <= end")
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError("coverage must lie in [0, 1]")
        if self.side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        if not 0.05 <= self.depth_ratio <= 0.9:
            raise ValueError("depth_ratio must lie in [0.05, 0.9]")

    def coverage_at(self, k: int) -> float:
        if k < self.start or k > self.end:
            return 0.0
        if self.ramp <= 0:
            return self.coverage
        edge = min(k - self.start + 1, self.end - k + 1)
        return self.coverage * min(1.0, edge / (self.ramp + 1))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Scene:
    target: ObjectModel
    world_from_object: Pose = field(default_factory=Pose.identity)
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics.default)


@dataclass
class FrameRecord:
    index: int
    t_ns: int
    image_path: str
    poses: dict          # object id -> camera_from_object Pose
    occlusion: dict      # object id -> fraction in [0, 1]


def _occluder_colors(n, seed):
    rng = np.random.default_rng(seed)
    hsv = np.stack([rng.uniform(0.05, 0.12, n), rng.uniform(0.1, 0.4, n), rng.uniform(0.2, 0.45, n)], axis=1)
    return hsv_to_rgb(hsv)


def occluder_body(target: ObjectModel, camera_from_target: Pose, intr: CameraIntrinsics,
                  coverage: float, side: str = "left", depth_ratio: float = 0.5, seed: int = 0):
    """A thin board in the camera frame hiding ``coverage`` of the target's projected box.

    Returns (model, camera_from_occluder) or None when nothing is covered.
    """
    if coverage <= 0.0:
        return None
    corners_c = camera_from_target.apply(target.corners)
    uv = project_points(intr, camera_from_target, target.corners)
    (u0, v0), (u1, v1) = uv.min(axis=0), uv.max(axis=0)
    m = OCCLUDER_MARGIN_PX
    if coverage >= 1.0:
        ua, ub = u0 - m, u1 + m
    elif side == "left":
        ua, ub = u0 - m, u0 + coverage * (u1 - u0)
    else:
        ua, ub = u1 - coverage * (u1 - u0), u1 + m
    va, vb = v0 - m, v1 + m
    depth = depth_ratio * corners_c[:, 2].min()
    # back face is the farther one, so it fixes the smallest projected footprint
    zb = depth + OCCLUDER_THICKNESS / 2
    xa, xb = (ua - intr.cx) * zb / intr.fx, (ub - intr.cx) * zb / intr.fx
    ya, yb = (va - intr.cy) * zb / intr.fy, (vb - intr.cy) * zb / intr.fy
    model = box_model((xb - xa, yb - ya, OCCLUDER_THICKNESS), subdiv=2, seed=seed, name="occluder")
    model = ObjectModel(model.vertices, model.triangles, _occluder_colors(len(model.triangles), seed), "occluder")
    return model, Pose(np.eye(3), [(xa + xb) / 2, (ya + yb) / 2, depth])


def render_frame(scene: Scene, camera_from_target: Pose, occluders=()):
    """Render target plus occluder bodies; returns (image, occlusion fraction)."""
    bodies = [(scene.target, camera_from_target)] + list(occluders)
    image, owner = rasterize(bodies, scene.intrinsics)
    if len(bodies) == 1:
        return image, 0.0
    visible = int((owner == 0).sum())
    solo = int((rasterize(bodies[:1], scene.intrinsics)[1] == 0).sum())
    if solo == 0:
        return image, 0.0
    return image, 1.0 - visible / solo


def render_sequence(scene: Scene, traj: Trajectory, episodes=(), seed: int = 0, name_fmt: str = "frames/{:06d}.ppm"):
    """Render every camera frame of ``traj``.

    Returns (records, images) with images quantized to uint8, exactly as they
    are stored on disk.
    """
    records, images = [], []
    t_ns = traj.t_ns
    obj = scene.target.name
    for k, i in enumerate(traj.frame_index):
        cam_obj = auto_label(scene.world_from_object, traj.pose(int(i)))
        occ = []
        for e_id, ep in enumerate(episodes):
            body = occluder_body(scene.target, cam_obj, scene.intrinsics, ep.coverage_at(k),
                                 ep.side, ep.depth_ratio, seed=seed * 1000 + e_id)
            if body is not None:
                occ.append(body)
        image, frac = render_frame(scene, cam_obj, occ)
        records.append(FrameRecord(k, int(t_ns[i]), name_fmt.format(k), {obj: cam_obj}, {obj: float(frac)}))
        images.append(quantize(image))
    return records, images
