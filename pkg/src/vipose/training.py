"""Two-step training: visual branch with a pseudo head, then joint visual-inertial."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .datagen.augment import AugmentConfig, augment
from .datagen.batches import batch_plan
from .datagen.pairs import PairConfig, crop_pair, make_synthetic_pair
from .geometry import compose, pseudo_log, relative_pose, sample_relative_pose
from .scene import ProjectionError
from .network import VIPoseNet, pose_loss

LOG_COLUMNS = ["step", "epoch", "lr_visual", "lr_inertial", "lr_output", "loss", "wall_time"]


class TrainingDiverged(RuntimeError):
    """Loss became NaN or infinite; ``state`` holds a diagnostic snapshot."""

    def __init__(self, msg, state):
        super().__init__(msg)
        self.state = state


def _from_dict(cls, d, nested=None):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    d = dict(d)
    for key, sub in (nested or {}).items():
        if key in d and isinstance(d[key], dict):
            d[key] = _from_dict(sub, d[key])
    return cls(**d)


@dataclass(frozen=True)
class Step1Config:
    epochs: int = 30
    lr0: float = 1e-3
    lr_min: float = 1e-4
    batch: int = 64
    real_fraction: float = 1 / 8
    real_per_epoch: int | None = None  # caps real pairs visited per epoch; None visits all

    def __post_init__(self):
        _check_step(self.epochs, self.batch, self.lr0, self.lr_min, self.real_per_epoch)
        if not 0 < self.real_fraction <= 1:
            raise ValueError("real_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class Step2Config:
    epochs: int = 20
    lr_vi0: float = 1e-4
    lr_out0: float = 1e-3
    lr_min_factor: float = 0.1
    batch: int = 64
    real_per_epoch: int | None = None
    # fraction of real pairs whose reference is rendered at a perturbed previous
    # pose (target re-derived, IMU window kept); 0 trains on exact pairs only
    jitter_fraction: float = 0.0
    jitter_rot_deg: float = 2.0
    jitter_trans: float = 0.005

    def __post_init__(self):
        _check_step(self.epochs, self.batch, self.lr_vi0, self.lr_out0, self.real_per_epoch)
        if not 0 < self.lr_min_factor <= 1:
            raise ValueError("lr_min_factor must lie in (0, 1]")
        if not 0 <= self.jitter_fraction <= 1 or self.jitter_rot_deg < 0 or self.jitter_trans < 0:
            raise ValueError("need jitter_fraction in [0, 1] and non-negative jitter scales")


def _check_step(epochs, batch, lr_a, lr_b, cap):
    if epochs < 1 or batch < 1:
        raise ValueError("epochs and batch must be >= 1")
    if lr_a < 0 or lr_b < 0:
        raise ValueError("learning rates must be non-negative")
    if cap is not None and cap < 1:
        raise ValueError("real_per_epoch must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    step1: Step1Config = field(default_factory=Step1Config)
    step2: Step2Config = field(default_factory=Step2Config)
    optimizer: str = "sgd"        # "sgd" (momentum) or "adam"
    momentum: float = 0.9
    clip_norm: float = 10.0
    lambda_rot: float = 1.0
    lambda_trans: float = 1.0
    sigma_rot_deg: float = 10.0   # synthetic relative-pose sampling
    sigma_trans: float = 0.02
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.momentum < 1 or self.clip_norm <= 0:
            raise ValueError("need 0 <= momentum < 1 and clip_norm > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _from_dict(cls, d, {"step1": Step1Config, "step2": Step2Config, "augment": AugmentConfig})


def schedule(lr0: float, lr_min: float, epoch: int, epochs: int) -> float:
    """Per-epoch cosine decay from lr0 (first epoch) to lr_min (last epoch)."""
    return lr0 if epochs == 1 else ad.cosine_lr(lr0, lr_min, epoch, epochs - 1)


class PairPool:
    """Training pairs drawn from dataset sequences.

    Real pair i pairs frame k with the ground truth of frame k-1; its crops
    and IMU window are computed once and cached as uint8 / float32. Synthetic
    pairs pick a random frame and a fresh sampled relative pose each call.
    """

    def __init__(self, sequences, model, intr, cfg: PairConfig = PairConfig(), imu_len: int = 200,
                 augment_cfg: AugmentConfig = AugmentConfig()):
        self.sequences = list(sequences)
        self.model, self.intr, self.cfg = model, intr, cfg
        self.imu_len = imu_len
        self.augment_cfg = augment_cfg
        self.items = [(s, k) for s in range(len(self.sequences)) for k in range(1, len(self.sequences[s]))]
        self._cache = {}

    def __len__(self):
        return len(self.items)

    def _base(self, i):
        hit = self._cache.get(i)
        if hit is None:
            s, k = self.items[i]
            seq = self.sequences[s]
            prev, cur = seq.pose(k - 1), seq.pose(k)
            ref, obs, _ = crop_pair(self.model, prev, seq.frame(k), self.intr, self.cfg)
            target = pseudo_log(relative_pose(prev, cur)).as_vector()
            hit = (_to_u8(ref), _to_u8(obs), seq.imu_window(k, self.imu_len), target)
            self._cache[i] = hit
        return hit

    def real(self, i: int, rng: np.random.Generator):
        ref, obs, imu, target = self._base(i)
        return ref.astype(np.float32) / 255, augment(obs.astype(np.float32) / 255, rng, self.augment_cfg), imu, target

    def jittered(self, i: int, rng: np.random.Generator, sigma_rot_deg: float, sigma_trans: float):
        """Real pair i with the reference rendered at a perturbed previous pose."""
        s, k = self.items[i]
        seq = self.sequences[s]
        cur = seq.pose(k)
        for _ in range(20):
            prev = compose(sample_relative_pose(rng, sigma_rot_deg, sigma_trans), seq.pose(k - 1))
            try:
                ref, obs, _ = crop_pair(self.model, prev, seq.frame(k), self.intr, self.cfg)
            except ProjectionError:
                continue
            target = pseudo_log(relative_pose(prev, cur)).as_vector()
            return ref, augment(obs, rng, self.augment_cfg), seq.imu_window(k, self.imu_len), target
        return self.real(i, rng)

    def synthetic(self, rng: np.random.Generator):
        s, k = self.items[int(rng.integers(len(self.items)))]
        seq = self.sequences[s]
        p = make_synthetic_pair(seq.frame(k), seq.pose(k), rng, self.model, self.intr, self.cfg)
        return p.reference, augment(p.observation, rng, self.augment_cfg), None, p.target.as_vector()


def _to_u8(img):
    return np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)


def stack_batch(samples, imu_len: int):
    """(pair (N,6,H,W), imu (N,K,6), target (N,6) as [t, w]) from pool samples."""
    pair = np.stack([np.concatenate([r, o], axis=2).transpose(2, 0, 1) for r, o, _, _ in samples]).astype(np.float32)
    imu = np.stack([m if m is not None else np.zeros((imu_len, 6), np.float32) for _, _, m, _ in samples])
    target = np.stack([t for _, _, _, t in samples])
    return pair, imu.astype(np.float32), target


def param_digest(module) -> str:
    import hashlib
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


@dataclass
class TrainResult:
    epoch_losses: list
    lr_trace: list          # per epoch dict of group -> lr
    rows: list              # log rows (dicts keyed by LOG_COLUMNS)


class TrainLog:
    """Epoch rows, optionally appended to a CSV file as training proceeds."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows = []
        if self.path and not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(LOG_COLUMNS)

    def add(self, **row):
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow([_fmt(row[c]) for c in LOG_COLUMNS])


def _fmt(x):
    return repr(float(x)) if isinstance(x, float) else str(x)


def read_train_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != LOG_COLUMNS:
            raise ValueError(f"{path}: unexpected log header {reader.fieldnames}")
        return [{"step": int(r["step"]), "epoch": int(r["epoch"]),
                 **{c: float(r[c]) for c in LOG_COLUMNS[2:]}} for r in reader]


def _diverged(step, epoch, batch, loss, lrs, params, dump_dir):
    state = {"step": step, "epoch": epoch, "batch": batch, "loss": repr(loss), "lrs": lrs,
             "param_norms": {n: float(np.linalg.norm(p.data)) for n, p in params},
             "nonfinite_params": [n for n, p in params if not np.all(np.isfinite(p.data))]}
    if dump_dir:
        Path(dump_dir).mkdir(parents=True, exist_ok=True)
        (Path(dump_dir) / "diverged.json").write_text(json.dumps(state, indent=1))
    return TrainingDiverged(f"non-finite loss {loss} at step {step} epoch {epoch} batch {batch}", state)


def _run_epochs(net, pool, step, epochs, batch, real_fraction, cap, synthetic, groups, lr_fn, forward,
                cfg: TrainConfig, log: TrainLog, dump_dir, progress, real_fn=None):
    real_fn = real_fn or (lambda pool, i, rng: pool.real(i, rng))
    spec = [{"params": [p for _, p in g[1]], "lr": 0.0, "name": g[0]} for g in groups]
    opt = ad.Adam(spec) if cfg.optimizer == "adam" else ad.SGD(spec, cfg.momentum)
    named = [item for g in groups for item in g[1]]
    trainable = [p for _, p in named]
    losses, lr_trace = [], []
    t_start = time.monotonic()
    n_per = max(1, int(round(batch * real_fraction)))
    for epoch in range(epochs):
        lrs = lr_fn(epoch)
        for name, lr in lrs.items():
            opt.set_lr(name, lr)
        lr_trace.append(dict(lrs))
        plan = batch_plan(len(pool), batch, real_fraction, cfg.seed * 1000 + step, epoch)
        if cap is not None:
            plan = plan[:max(1, math.ceil(cap / n_per))]
        total, count = 0.0, 0
        for b, (idx, n_syn) in enumerate(plan):
            rng = np.random.default_rng([cfg.seed, step, epoch, b])
            samples = [real_fn(pool, int(i), rng) for i in idx]
            if synthetic:
                samples += [pool.synthetic(rng) for _ in range(n_syn)]
            pair, imu, target = stack_batch(samples, pool.imu_len)
            pw, pt = forward(pair, imu)
            loss = pose_loss(pw, pt, target[:, 3:], target[:, :3], cfg.lambda_rot, cfg.lambda_trans)
            value = float(loss.data)
            if not math.isfinite(value):
                raise _diverged(step, epoch, b, value, lrs, named, dump_dir)
            opt.zero_grad()
            loss.backward()
            ad.clip_grad_norm(trainable, cfg.clip_norm)
            opt.step()
            total += value * len(samples)
            count += len(samples)
            if progress:
                progress(step, epoch, b, len(plan), value)
        losses.append(total / count)
        log.add(step=step, epoch=epoch, lr_visual=lrs.get("visual", lrs.get("visual_inertial", 0.0)),
                lr_inertial=lrs.get("visual_inertial", 0.0), lr_output=lrs.get("output", lrs.get("pseudo", 0.0)),
                loss=losses[-1], wall_time=time.monotonic() - t_start)
    return TrainResult(losses, lr_trace, log.rows)


def _named(prefix, module):
    return [(f"{prefix}.{n}", p) for n, p in module.named_parameters()]


def train_step1(net: VIPoseNet, pool: PairPool, cfg: TrainConfig = TrainConfig(), log_path=None,
                dump_dir=None, progress=None) -> TrainResult:
    """Visual branch plus pseudo head on mixed real and synthetic pairs; IMU unused."""
    if net.pseudo_head is None:
        raise ValueError("network has no pseudo head; step 1 already finished")
    s = cfg.step1
    net.train()
    groups = [("visual", _named("visual", net.visual)), ("pseudo", _named("pseudo_head", net.pseudo_head))]

    def lr_fn(epoch):
        lr = schedule(s.lr0, s.lr_min, epoch, s.epochs)
        return {"visual": lr, "pseudo": lr}

    res = _run_epochs(net, pool, 1, s.epochs, s.batch, s.real_fraction, s.real_per_epoch, True, groups, lr_fn,
                      lambda pair, imu: net.pseudo_forward(pair), cfg, TrainLog(log_path), dump_dir, progress)
    net.eval()
    return res


def train_step2(net: VIPoseNet, pool: PairPool, cfg: TrainConfig = TrainConfig(), log_path=None,
                dump_dir=None, progress=None, head_seed: int | None = None) -> TrainResult:
    """Fresh fused head; visual, inertial and output branches trained on real pairs with IMU."""
    s = cfg.step2
    if net.pseudo_head is not None:
        net.replace_output_branch(cfg.seed + 1 if head_seed is None else head_seed)
    net.train()
    groups = [("visual_inertial", _named("visual", net.visual) + _named("inertial", net.inertial)),
              ("output", _named("head", net.head))]

    def lr_fn(epoch):
        return {"visual_inertial": schedule(s.lr_vi0, s.lr_vi0 * s.lr_min_factor, epoch, s.epochs),
                "output": schedule(s.lr_out0, s.lr_out0 * s.lr_min_factor, epoch, s.epochs)}

    def real_fn(pool, i, rng):
        if s.jitter_fraction > 0 and rng.random() < s.jitter_fraction:
            return pool.jittered(i, rng, s.jitter_rot_deg, s.jitter_trans)
        return pool.real(i, rng)

    res = _run_epochs(net, pool, 2, s.epochs, s.batch, 1.0, s.real_per_epoch, False, groups, lr_fn,
                      lambda pair, imu: net.forward(pair, imu), cfg, TrainLog(log_path), dump_dir, progress,
                      real_fn)
    net.eval()
    return res


def pool_for(dataset, cfg: TrainConfig, net_cfg, split: str = "train") -> PairPool:
    pair_cfg = PairConfig(net_cfg.input_h, net_cfg.input_w, 1.4, cfg.sigma_rot_deg, cfg.sigma_trans)
    return PairPool(dataset.split(split), dataset.model, dataset.intrinsics, pair_cfg, net_cfg.imu_len, cfg.augment)
