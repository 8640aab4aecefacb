"""Dataset synthesis and the on-disk layout.

Layout under the dataset root::

    meta.json                 scene, intrinsics, per-sequence specs and seeds
    models/<object>.json      triangle meshes
    <sequence>/frames/NNNNNN.ppm
    <sequence>/poses.csv      frame, t_ns, object, r00..r22, tx, ty, tz, occlusion
    <sequence>/imu.csv        imu module CSV format

Poses are camera_from_object, rotation row-major then translation. Floats are
written with ``repr`` so a round trip is exact.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..geometry import Pose
from ..imu import heading_agnostic, read_imu_csv, write_imu_csv
from ..scene import CameraIntrinsics, ObjectModel, box_model, l_shape_model, read_ppm, write_ppm
from .sequence import FrameRecord, OcclusionEpisode, Scene, render_sequence
from .trajectory import ImuNoise, TrajectorySpec, generate_trajectory, synthesize_imu

FORMAT = "vipose-dataset/1"
POSE_COLUMNS = ["frame", "t_ns", "object"] + [f"r{i}{j}" for i in range(3) for j in range(3)] + ["tx", "ty", "tz", "occlusion"]


class DatasetError(RuntimeError):
    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


@dataclass(frozen=True)
class DatasetConfig:
    seed: int = 0
    object: str = "box"
    n_sequences: int = 5
    n_test: int = 1
    duration: float = 20.0
    test_duration: float | None = None  # held-out sequence length; None uses duration
    camera_rate: float = 25.0
    imu_rate: float = 200.0
    radius: float = 0.45
    height: float = 0.15
    angular_speed: float = 0.25
    jitter_pos: float = 0.02
    jitter_att: float = 0.04
    accel_sigma: float = 0.02
    gyro_sigma: float = 0.002
    train_episodes: int = 3           # random occlusion episodes per training sequence
    episode_len: tuple = (10, 20)
    full_occlusion_prob: float = 0.5
    test_episodes: tuple = ((150, 164), (330, 344))  # full occlusions on held-out sequences

    def __post_init__(self):
        if self.object not in ("box", "lshape"):
            raise ValueError("object must be 'box' or 'lshape'")
        if self.n_sequences < 1 or not 0 <= self.n_test <= self.n_sequences:
            raise ValueError("need n_sequences >= 1 and 0 <= n_test <= n_sequences")
        if self.duration <= 0 or (self.test_duration is not None and self.test_duration <= 0):
            raise ValueError("durations must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["test_duration"] is None:
            del d["test_duration"]  # keeps manifests of single-duration datasets unchanged
        d["episode_len"] = list(self.episode_len)
        d["test_episodes"] = [list(e) for e in self.test_episodes]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        known = {f.name for f in fields(cls)}
        if set(d) - known:
            raise ValueError(f"unknown dataset keys: {sorted(set(d) - known)}")
        d = dict(d)
        if "episode_len" in d:
            d["episode_len"] = tuple(d["episode_len"])
        if "test_episodes" in d:
            d["test_episodes"] = tuple(tuple(e) for e in d["test_episodes"])
        return cls(**d)


def make_model(kind: str, seed: int = 0) -> ObjectModel:
    return box_model(seed=seed) if kind == "box" else l_shape_model(seed=seed)


@dataclass
class SequencePlan:
    name: str
    split: str
    trajectory: TrajectorySpec
    imu: ImuNoise
    episodes: list = field(default_factory=list)
    render_seed: int = 0


def plan_sequences(cfg: DatasetConfig) -> list[SequencePlan]:
    """Per-sequence specs derived deterministically from the dataset seed."""
    plans = []
    for s in range(cfg.n_sequences):
        rng = np.random.default_rng([cfg.seed, s])
        split = "test" if s >= cfg.n_sequences - cfg.n_test else "train"
        duration = cfg.test_duration if split == "test" and cfg.test_duration is not None else cfg.duration
        traj = TrajectorySpec(
            duration=duration, camera_rate=cfg.camera_rate, imu_rate=cfg.imu_rate,
            radius=cfg.radius * rng.uniform(0.9, 1.1), height=cfg.height * rng.uniform(0.7, 1.3),
            angular_speed=cfg.angular_speed * (1 if s % 2 == 0 else -1) * rng.uniform(0.8, 1.2),
            start_angle=float(rng.uniform(0, 2 * np.pi)),
            jitter_pos=cfg.jitter_pos, jitter_att=cfg.jitter_att, seed=int(rng.integers(2**31)))
        noise = ImuNoise(cfg.accel_sigma, cfg.gyro_sigma, seed=int(rng.integers(2**31)))
        n = traj.n_frames
        if split == "test":
            eps = [OcclusionEpisode(a, b, 1.0) for a, b in cfg.test_episodes if b < n]
        else:
            eps = []
            lo, hi = cfg.episode_len
            # one slot per episode keeps them disjoint
            slot = n // max(cfg.train_episodes, 1)
            for e in range(cfg.train_episodes):
                length = int(rng.integers(lo, hi + 1))
                start = e * slot + int(rng.integers(0, max(slot - length, 1)))
                full = rng.random() < cfg.full_occlusion_prob
                cov = 1.0 if full else float(rng.uniform(0.3, 0.9))
                side = "left" if rng.random() < 0.5 else "right"
                eps.append(OcclusionEpisode(start, min(start + length - 1, n - 1), cov, side, ramp=2))
        plans.append(SequencePlan(f"seq_{s:02d}", split, traj, noise, eps, render_seed=int(rng.integers(2**31))))
    return plans


def _write_poses(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POSE_COLUMNS)
        for r in records:
            for obj, pose in r.poses.items():
                w.writerow([r.index, r.t_ns, obj] + [repr(float(x)) for x in pose.to_row()] + [repr(float(r.occlusion[obj]))])


def write_sequence(root: Path, plan: SequencePlan, scene: Scene) -> dict:
    seq_dir = root / plan.name
    (seq_dir / "frames").mkdir(parents=True, exist_ok=True)
    traj = generate_trajectory(plan.trajectory)
    records, images = render_sequence(scene, traj, plan.episodes, seed=plan.render_seed)
    for rec, img in zip(records, images):
        write_ppm(seq_dir / rec.image_path, img)
    _write_poses(seq_dir / "poses.csv", records)
    samples = synthesize_imu(traj, plan.imu)
    write_imu_csv(seq_dir / "imu.csv", samples)
    return {
        "name": plan.name, "split": plan.split, "trajectory": plan.trajectory.to_dict(),
        "imu": plan.imu.to_dict(), "occlusions": [e.to_dict() for e in plan.episodes],
        "render_seed": plan.render_seed, "frames": len(records), "imu_samples": len(samples),
    }


def synthesize_dataset(cfg: DatasetConfig, root, log=None) -> dict:
    """Generate and write a full dataset; returns the manifest."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    model = make_model(cfg.object, seed=cfg.seed)
    (root / "models").mkdir(exist_ok=True)
    model.save(root / "models" / f"{model.name}.json")
    intr = CameraIntrinsics.default()
    scene = Scene(model, Pose.identity(), intr)
    seqs = []
    for plan in plan_sequences(cfg):
        seqs.append(write_sequence(root, plan, scene))
        if log:
            log(f"wrote {plan.name} ({plan.split}): {seqs[-1]['frames']} frames")
    meta = {
        "format": FORMAT, "seed": cfg.seed, "config": cfg.to_dict(),
        "intrinsics": asdict(intr),
        "objects": [{"id": model.name, "model": f"models/{model.name}.json",
                     "world_from_object": Pose.identity().to_row()}],
        "sequences": seqs,
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return meta


def dataset_checksum(root) -> str:
    """SHA-256 over every file's relative path and bytes, in sorted order."""
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(x for x in root.rglob("*") if x.is_file()):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------- reading

@dataclass
class Sequence:
    name: str
    split: str
    root: Path
    records: list
    imu_t_ns: np.ndarray
    imu_accel: np.ndarray
    imu_gyro: np.ndarray
    imu_quat: np.ndarray
    meta: dict
    _world_imu: np.ndarray | None = None

    def __len__(self):
        return len(self.records)

    def frame(self, k: int) -> np.ndarray:
        """uint8 (H, W, 3) image of frame k."""
        img = read_ppm(self.root / self.records[k].image_path)
        return np.round(img * 255.0).astype(np.uint8)

    def pose(self, k: int, obj: str | None = None) -> Pose:
        poses = self.records[k].poses
        return poses[obj] if obj else next(iter(poses.values()))

    def occlusion(self, k: int, obj: str | None = None) -> float:
        occ = self.records[k].occlusion
        return occ[obj] if obj else next(iter(occ.values()))

    def imu_index(self, k: int) -> int:
        """Index of the newest IMU sample not later than frame k."""
        return int(np.searchsorted(self.imu_t_ns, self.records[k].t_ns, side="right")) - 1

    def world_imu(self, subtract_gravity: bool = False) -> np.ndarray:
        if self._world_imu is None:
            self._world_imu = heading_agnostic(self.imu_accel, self.imu_gyro, self.imu_quat, subtract_gravity)
        return self._world_imu

    def imu_window(self, k: int, length: int = 200) -> np.ndarray:
        """(length, 6) float32 network input ending at frame k, zero rows in front if short."""
        j = self.imu_index(k)
        out = np.zeros((length, 6), dtype=np.float32)
        if j >= 0:
            rows = self.world_imu()[max(0, j - length + 1):j + 1]
            out[length - len(rows):] = rows
        return out

    def imu_samples_between(self, t0_ns: int | None, t1_ns: int):
        """Indices of samples with t0 < t <= t1 (all samples up to t1 if t0 is None)."""
        a = 0 if t0_ns is None else int(np.searchsorted(self.imu_t_ns, t0_ns, side="right"))
        b = int(np.searchsorted(self.imu_t_ns, t1_ns, side="right"))
        return range(a, b)


@dataclass
class Dataset:
    root: Path
    meta: dict
    intrinsics: CameraIntrinsics
    models: dict
    sequences: list

    @property
    def model(self) -> ObjectModel:
        return next(iter(self.models.values()))

    def split(self, name: str) -> list:
        return [s for s in self.sequences if s.split == name]

    def sequence(self, name: str) -> Sequence:
        for s in self.sequences:
            if s.name == name:
                return s
        raise KeyError(name)


def _read_poses(path):
    if not path.is_file():
        raise DatasetError(path, "missing poses file")
    records = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != POSE_COLUMNS:
            raise DatasetError(path, "unexpected header")
        for line, row in enumerate(reader, start=2):
            if len(row) != len(POSE_COLUMNS):
                raise DatasetError(path, f"line {line}: expected {len(POSE_COLUMNS)} fields")
            k, t_ns, obj = int(row[0]), int(row[1]), row[2]
            vals = [float(x) for x in row[3:]]
            pose = Pose.from_row(vals[:12])
            if not pose.is_valid():
                raise DatasetError(path, f"line {line}: rotation is not orthonormal")
            occ = vals[12]
            if not 0.0 <= occ <= 1.0:
                raise DatasetError(path, f"line {line}: occlusion {occ} outside [0, 1]")
            rec = records.setdefault(k, FrameRecord(k, t_ns, f"frames/{k:06d}.ppm", {}, {}))
            rec.poses[obj] = pose
            rec.occlusion[obj] = occ
    out = [records[k] for k in sorted(records)]
    if [r.index for r in out] != list(range(len(out))):
        raise DatasetError(path, "frame indices are not contiguous from 0")
    if any(b.t_ns <= a.t_ns for a, b in zip(out, out[1:])):
        raise DatasetError(path, "frame timestamps not increasing")
    return out


def read_dataset(root) -> Dataset:
    """Load and validate a dataset written by :func:`synthesize_dataset`."""
    root = Path(root)
    meta_path = root / "meta.json"
    if not meta_path.is_file():
        raise DatasetError(meta_path, "missing manifest")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetError(meta_path, f"invalid JSON ({e})") from None
    if meta.get("format") != FORMAT:
        raise DatasetError(meta_path, f"unsupported format {meta.get('format')!r}")
    intr = CameraIntrinsics(**meta["intrinsics"])
    models = {}
    for obj in meta["objects"]:
        p = root / obj["model"]
        if not p.is_file():
            raise DatasetError(p, "missing model file")
        models[obj["id"]] = ObjectModel.load(p)
    seqs = []
    for sm in meta["sequences"]:
        sdir = root / sm["name"]
        records = _read_poses(sdir / "poses.csv")
        if len(records) != sm["frames"]:
            raise DatasetError(sdir / "poses.csv", f"{len(records)} frames, manifest says {sm['frames']}")
        for r in records:
            if not (sdir / r.image_path).is_file():
                raise DatasetError(sdir / r.image_path, "missing frame image")
        imu_path = sdir / "imu.csv"
        if not imu_path.is_file():
            raise DatasetError(imu_path, "missing IMU file")
        try:
            samples = read_imu_csv(imu_path)
        except ValueError as e:
            raise DatasetError(imu_path, str(e)) from None
        if len(samples) != sm["imu_samples"]:
            raise DatasetError(imu_path, f"{len(samples)} samples, manifest says {sm['imu_samples']}")
        seqs.append(Sequence(
            sm["name"], sm["split"], sdir, records,
            np.array([s.t_ns for s in samples], dtype=np.int64),
            np.array([s.accel for s in samples]), np.array([s.gyro for s in samples]),
            np.array([s.orientation for s in samples]), sm))
    return Dataset(root, meta, intr, models, seqs)
