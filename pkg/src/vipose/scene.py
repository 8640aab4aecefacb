"""Object models, pinhole projection, flat-shaded rasterization and cropping.

Camera convention: right-handed, z forward, x right, y down. Pixel centers sit
at integer (u, v) coordinates, so pixel (row i, col j) is centered at u=j, v=i.
Images are float32 arrays of shape (H, W, 3) with channels in [0, 1].
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose

NEAR_CLIP = 1e-3


class ProjectionError(ValueError):
    """A point to be projected lies at or behind the camera plane."""


@dataclass(frozen=True, eq=False)
class ObjectModel:
    vertices: np.ndarray
    triangles: np.ndarray
    face_colors: np.ndarray
    name: str = "object"
    closed: bool = False  # closed mesh with outward (counter-clockwise) winding; enables culling
    corners: np.ndarray = field(init=False, repr=False)
    center: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        tri = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        col = np.asarray(self.face_colors, dtype=np.float64).reshape(-1, 3)
        if tri.size and (tri.min() < 0 or tri.max() >= len(v)):
            raise ValueError("triangle index out of range")
        if len(col) != len(tri):
            raise ValueError("need one color per triangle")
        if np.any(col < 0) or np.any(col > 1):
            raise ValueError("face colors must lie in [0, 1]")
        lo, hi = v.min(axis=0), v.max(axis=0)
        corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
        for name, val in (("vertices", v), ("triangles", tri), ("face_colors", col),
                          ("corners", corners), ("center", 0.5 * (lo + hi))):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "face_colors": self.face_colors.tolist(),
            "closed": self.closed,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ObjectModel":
        return cls(doc["vertices"], doc["triangles"], doc["face_colors"], doc.get("name", "object"),
                   bool(doc.get("closed", False)))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "ObjectModel":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError("focal lengths and resolution must be positive")

    @property
    def aspect(self) -> float:
        return self.width / self.height

    @classmethod
    def default(cls) -> "CameraIntrinsics":
        return cls(320.0, 320.0, 159.5, 119.5, 320, 240)


@dataclass(frozen=True)
class BBox:
    center_u: float
    center_v: float
    w: float
    h: float


def _grid_quads(origin, du, dv, n):
    """Vertices and triangles of a face split into n x n quads."""
    verts, tris = [], []
    for i in range(n + 1):
        for j in range(n + 1):
            verts.append(origin + du * (i / n) + dv * (j / n))
    for i in range(n):
        for j in range(n):
            a = i * (n + 1) + j
            b, c, d = a + (n + 1), a + 1, a + (n + 1) + 1
            tris += [(a, b, d), (a, d, c)]
    return np.array(verts), np.array(tris)


def box_model(size=(0.12, 0.08, 0.06), subdiv: int = 3, seed: int = 0, name: str = "box") -> ObjectModel:
    """Axis-aligned box centered at the origin with a colored patch grid on every face."""
    rng = np.random.default_rng(seed)
    half = np.asarray(size, dtype=np.float64) / 2
    ex, ey, ez = np.diag(2 * half)
    lo = -half
    faces = [
        (lo, ey, ez), (lo + ex, ez, ey),
        (lo, ez, ex), (lo + ey, ex, ez),
        (lo, ex, ey), (lo + ez, ey, ex),
    ]
    verts, tris, cols = [], [], []
    base_hues = rng.permutation(6) / 6.0
    for k, (o, du, dv) in enumerate(faces):
        v, t = _grid_quads(o, du, dv, subdiv)
        offset = sum(len(x) for x in verts)
        verts.append(v)
        tris.append(t[:, ::-1] + offset)  # grid triangles wind inward; flip to outward
        for _ in range(subdiv * subdiv):
            hue = (base_hues[k] + rng.uniform(-0.06, 0.06)) % 1.0
            rgb = hsv_to_rgb(np.array([hue, rng.uniform(0.5, 1.0), rng.uniform(0.35, 1.0)]))
            cols += [rgb, rgb]
    return ObjectModel(np.vstack(verts), np.vstack(tris), np.array(cols), name, closed=True)


def l_shape_model(arm=0.12, thickness=0.04, depth=0.05, seed: int = 1) -> ObjectModel:
    """Asymmetric L-shaped solid built from two boxes."""
    a = box_model((arm, thickness, depth), subdiv=2, seed=seed)
    b = box_model((thickness, arm - thickness, depth), subdiv=2, seed=seed + 1)
    shift_b = np.array([-(arm - thickness) / 2, (arm) / 2, 0.0])
    verts = np.vstack([a.vertices, b.vertices + shift_b])
    tris = np.vstack([a.triangles, b.triangles + len(a.vertices)])
    verts = verts - 0.5 * (verts.min(0) + verts.max(0))
    return ObjectModel(verts, tris, np.vstack([a.face_colors, b.face_colors]), "lshape", closed=True)


def project_points(intr: CameraIntrinsics, pose: Pose, pts) -> np.ndarray:
    """Project (N, 3) model points to (N, 2) pixel coordinates."""
    pc = pose.apply(np.atleast_2d(pts))
    if np.any(pc[:, 2] <= 0):
        raise ProjectionError("point at or behind the camera plane")
    return np.stack([intr.fx * pc[:, 0] / pc[:, 2] + intr.cx,
                     intr.fy * pc[:, 1] / pc[:, 2] + intr.cy], axis=1)


def project_point(intr: CameraIntrinsics, pose: Pose, x) -> tuple[float, float]:
    u, v = project_points(intr, pose, np.asarray(x, dtype=np.float64).reshape(1, 3))[0]
    return float(u), float(v)


def rasterize(bodies, intr: CameraIntrinsics):
    """Z-buffered flat-shaded render of several (model, pose) bodies.

    Returns the image and an int32 buffer holding the index of the body that
    owns each pixel (-1 for background). Triangles with any vertex closer than
    the near plane are dropped.
    """
    h, w = intr.height, intr.width
    image = np.zeros((h, w, 3), dtype=np.float32)
    owner = np.full((h, w), -1, dtype=np.int32)
    inv_depth = np.zeros((h, w), dtype=np.float64)
    for body_id, (model, pose) in enumerate(bodies):
        pc = pose.apply(model.vertices)
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = intr.fx * pc[:, 0] / z + intr.cx
            v = intr.fy * pc[:, 1] / z + intr.cy
        tri = model.triangles
        if model.closed:
            p0 = pc[tri[:, 0]]
            normal = np.cross(pc[tri[:, 1]] - p0, pc[tri[:, 2]] - p0)
            front = np.einsum("ij,ij->i", normal, p0) < 0
        else:
            front = np.ones(len(tri), dtype=bool)
        for f, (i0, i1, i2) in enumerate(tri):
            if not front[f]:
                continue
            if z[i0] <= NEAR_CLIP or z[i1] <= NEAR_CLIP or z[i2] <= NEAR_CLIP:
                continue
            xs = (u[i0], u[i1], u[i2])
            ys = (v[i0], v[i1], v[i2])
            c0, c1 = max(int(np.ceil(min(xs))), 0), min(int(np.floor(max(xs))), w - 1)
            r0, r1 = max(int(np.ceil(min(ys))), 0), min(int(np.floor(max(ys))), h - 1)
            if c0 > c1 or r0 > r1:
                continue
            area = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (ys[1] - ys[0]) * (xs[2] - xs[0])
            if abs(area) < 1e-12:
                continue
            px = np.arange(c0, c1 + 1, dtype=np.float64)[None, :]
            py = np.arange(r0, r1 + 1, dtype=np.float64)[:, None]
            # barycentric weights from edge functions
            b0 = ((xs[2] - xs[1]) * (py - ys[1]) - (ys[2] - ys[1]) * (px - xs[1])) / area
            b1 = ((xs[0] - xs[2]) * (py - ys[2]) - (ys[0] - ys[2]) * (px - xs[2])) / area
            b2 = 1.0 - b0 - b1
            inside = (b0 >= 0) & (b1 >= 0) & (b2 >= 0)
            if not inside.any():
                continue
            iz = b0 / z[i0] + b1 / z[i1] + b2 / z[i2]
            region = inv_depth[r0:r1 + 1, c0:c1 + 1]
            closer = inside & (iz > region)
            region[closer] = iz[closer]
            image[r0:r1 + 1, c0:c1 + 1][closer] = model.face_colors[f]
            owner[r0:r1 + 1, c0:c1 + 1][closer] = body_id
    return image, owner


def render(model: ObjectModel, pose: Pose, intr: CameraIntrinsics) -> np.ndarray:
    return rasterize([(model, pose)], intr)[0]


def object_extent(model: ObjectModel, pose: Pose, intr: CameraIntrinsics) -> tuple[float, float]:
    uv = project_points(intr, pose, model.corners)
    size = uv.max(axis=0) - uv.min(axis=0)
    return float(size[0]), float(size[1])


def enlarged_bbox(x_size: float, y_size: float, projected_center, r: float, expand: float = 1.4) -> BBox:
    h = expand * max(x_size / r, y_size)
    w = expand * max(x_size, y_size * r)
    return BBox(float(projected_center[0]), float(projected_center[1]), w, h)


def object_bbox(model: ObjectModel, pose: Pose, intr: CameraIntrinsics, expand: float = 1.4) -> BBox:
    """Enlarged box around the projected model, as used to crop both images of a pair."""
    x_size, y_size = object_extent(model, pose, intr)
    return enlarged_bbox(x_size, y_size, project_point(intr, pose, model.center), intr.aspect, expand)


def _taps(coords, n):
    """Bilinear source indices and weights along one axis; taps outside [0, n) get weight 0."""
    i0 = np.floor(coords)
    f = (coords - i0).astype(np.float32)
    i0 = i0.astype(np.int64)
    i1 = i0 + 1
    w0 = (1 - f) * ((i0 >= 0) & (i0 < n))
    w1 = f * ((i1 >= 0) & (i1 < n))
    return np.clip(i0, 0, n - 1), np.clip(i1, 0, n - 1), w0, w1


def crop_resize(img: np.ndarray, box: BBox, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resample of the box region; samples outside the image read as black."""
    if out_w <= 0 or out_h <= 0:
        raise ValueError("output size must be positive")
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape[:2]
    u = box.center_u - box.w / 2 + (np.arange(out_w) + 0.5) * (box.w / out_w)
    v = box.center_v - box.h / 2 + (np.arange(out_h) + 0.5) * (box.h / out_h)
    u0, u1, wu0, wu1 = _taps(u, w)
    v0, v1, wv0, wv1 = _taps(v, h)
    extra = (None,) * (img.ndim - 2)
    wu0, wu1 = wu0[(None, slice(None)) + extra], wu1[(None, slice(None)) + extra]
    wv0, wv1 = wv0[(slice(None), None) + extra], wv1[(slice(None), None) + extra]
    # blend rows first, then gather columns
    rows = img[v0] * wv0 + img[v1] * wv1
    return (rows[:, u0] * wu0 + rows[:, u1] * wu1).astype(np.float32)


def quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, img: np.ndarray):
    """Binary P6, maxval 255, channel value round(c * 255)."""
    data = quantize(img) if img.dtype != np.uint8 else img
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: not a P6/255 image")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    return (pixels.reshape(h, w, 3).astype(np.float32) / 255.0)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    d = mx - mn
    safe = np.where(d > 0, d, 1.0)
    h = np.where(mx == r, ((g - b) / safe) % 6.0,
                 np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    h = np.where(d > 0, h / 6.0, 0.0)
    s = np.where(mx > 0, d / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0] % 1.0, hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)
