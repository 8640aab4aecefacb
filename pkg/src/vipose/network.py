"""Visual-inertial relative pose regressor.

Visual branch: a FlowNet-C style siamese stem (3 convs, shared weights) on the
rendered reference and the observation, a correlation layer plus a 1x1 skip
from the reference stream, then 6 more convs and a flatten. Inertial branch: a
1-D ResNet-18 (basic blocks [2, 2, 2, 2]) over the (K, 6) IMU window. The two
feature vectors are concatenated and regressed to a rotation vector ``w`` and a
translation ``t`` by an MLP with two 256-wide layers and two linear heads.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import functional as F
from .autodiff.layers import BatchNorm1d, Conv1d, Conv2d, Linear, Module
from .autodiff.tensor import Tensor, make_result, no_grad

# (out channels at full width, kernel, stride); FlowNet-C convolution stack
STEM = [(64, 7, 2), (128, 5, 2), (256, 5, 2)]
REDIR = 32
TOP = [(256, 3, 1), (512, 3, 2), (512, 3, 1), (512, 3, 2), (512, 3, 1), (1024, 3, 2)]
# 1-D ResNet-18
RES_STEM = (64, 7, 2)
RES_STAGES = [64, 128, 256, 512]
RES_BLOCKS = [2, 2, 2, 2]


class ConfigMismatch(ValueError):
    """Inputs or stored weights do not fit the network configuration."""


def _out_len(n: int, k: int, s: int) -> int:
    return (n + 2 * (k // 2) - k) // s + 1


def _width(c: int, scale: float) -> int:
    return max(1, int(round(c * scale)))


@dataclass(frozen=True)
class VIPoseConfig:
    input_h: int = 120
    input_w: int = 160
    imu_len: int = 200
    corr_max_disp: int = 3
    corr_stride: int = 1
    channel_scale: float = 0.25
    head_dim: int = 256
    lambda_rot: float = 1.0
    lambda_trans: float = 1.0
    zero_heads: bool = True

    def __post_init__(self):
        if self.input_h % 8 or self.input_w % 8:
            raise ConfigMismatch("input_h and input_w must be multiples of 8 (three stride-2 stem convs)")
        if self.imu_len < 8:
            raise ConfigMismatch("imu_len must be at least 8")
        if not 0 < self.channel_scale <= 1:
            raise ConfigMismatch("channel_scale must be in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "VIPoseConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigMismatch(f"unknown network config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def visual_grid(self) -> tuple[int, int]:
        h, w = self.input_h, self.input_w
        for _, k, s in STEM + TOP:
            h, w = _out_len(h, k, s), _out_len(w, k, s)
        return h, w

    @property
    def visual_feature_dim(self) -> int:
        h, w = self.visual_grid
        return _width(TOP[-1][0], self.channel_scale) * h * w

    @property
    def inertial_length(self) -> int:
        n = _out_len(self.imu_len, RES_STEM[1], RES_STEM[2])
        for _ in RES_STAGES:
            n = _out_len(n, 3, 2)
        return n

    @property
    def inertial_feature_dim(self) -> int:
        return _width(RES_STAGES[-1], self.channel_scale) * self.inertial_length

    @property
    def corr_channels(self) -> int:
        return (2 * self.corr_max_disp + 1) ** 2


class VisualBranch(Module):
    def __init__(self, rng, cfg: VIPoseConfig):
        sc = cfg.channel_scale
        self.cfg = cfg
        self.stem = []
        cin = 3
        for c, k, s in STEM:
            self.stem.append(Conv2d(rng, cin, _width(c, sc), k, s))
            cin = _width(c, sc)
        self.redir = Conv2d(rng, cin, _width(REDIR, sc), 1, 1)
        cin = cfg.corr_channels + _width(REDIR, sc)
        self.top = []
        for c, k, s in TOP:
            self.top.append(Conv2d(rng, cin, _width(c, sc), k, s))
            cin = _width(c, sc)

    def features(self, ref: Tensor, obs: Tensor) -> tuple[Tensor, Tensor]:
        n = ref.shape[0]
        x = F.concat([ref, obs], axis=0)
        for conv in self.stem:
            x = F.leaky_relu(conv(x), 0.1)
        return _split_batch(x, n)

    def forward(self, ref: Tensor, obs: Tensor) -> Tensor:
        f_ref, f_obs = self.features(ref, obs)
        corr = F.leaky_relu(correlation_of(f_ref, f_obs, self.cfg), 0.1)
        skip = F.leaky_relu(self.redir(f_ref), 0.1)
        x = F.concat([corr, skip], axis=1)
        for conv in self.top:
            x = F.leaky_relu(conv(x), 0.1)
        return F.flatten(x)


def correlation_of(f_ref: Tensor, f_obs: Tensor, cfg: VIPoseConfig) -> Tensor:
    return F.correlation(f_ref, f_obs, cfg.corr_max_disp, cfg.corr_stride)


def _split_batch(x: Tensor, n: int) -> tuple[Tensor, Tensor]:
    """Split a batch of 2n along axis 0 with gradient routing."""
    a = _slice0(x, 0, n)
    b = _slice0(x, n, 2 * n)
    return a, b


def _slice0(x: Tensor, lo: int, hi: int) -> Tensor:
    def backward(g):
        full = np.zeros_like(x.data)
        full[lo:hi] = g
        x.accumulate(full)

    return make_result(x.data[lo:hi], (x,), backward)


class BasicBlock1d(Module):
    def __init__(self, rng, cin, cout, stride):
        self.conv1 = Conv1d(rng, cin, cout, 3, stride, bias=False)
        self.bn1 = BatchNorm1d(cout)
        self.conv2 = Conv1d(rng, cout, cout, 3, 1, bias=False)
        self.bn2 = BatchNorm1d(cout)
        if stride != 1 or cin != cout:
            self.down = Conv1d(rng, cin, cout, 1, stride, pad=0, bias=False)
            self.down_bn = BatchNorm1d(cout)
        else:
            self.down = None
            self.down_bn = None

    def forward(self, x):
        y = F.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        skip = x if self.down is None else self.down_bn(self.down(x))
        return F.relu(y + skip)


class InertialBranch(Module):
    def __init__(self, rng, cfg: VIPoseConfig):
        sc = cfg.channel_scale
        c0 = _width(RES_STEM[0], sc)
        self.stem = Conv1d(rng, 6, c0, RES_STEM[1], RES_STEM[2], bias=False)
        self.stem_bn = BatchNorm1d(c0)
        self.blocks = []
        cin = c0
        for width, nblocks in zip(RES_STAGES, RES_BLOCKS):
            cout = _width(width, sc)
            for b in range(nblocks):
                self.blocks.append(BasicBlock1d(rng, cin, cout, 2 if b == 0 else 1))
                cin = cout

    def forward(self, imu: Tensor) -> Tensor:
        x = F.relu(self.stem_bn(self.stem(imu)))
        for block in self.blocks:
            x = block(x)
        return F.flatten(x)


class OutputBranch(Module):
    def __init__(self, rng, fin: int, cfg: VIPoseConfig):
        self.fc1 = Linear(rng, fin, cfg.head_dim)
        self.fc2 = Linear(rng, cfg.head_dim, cfg.head_dim)
        self.rot = Linear(rng, cfg.head_dim, 3, zero=cfg.zero_heads)
        self.trans = Linear(rng, cfg.head_dim, 3, zero=cfg.zero_heads)

    def forward(self, feat: Tensor) -> tuple[Tensor, Tensor]:
        h = F.leaky_relu(self.fc1(feat), 0.1)
        h = F.leaky_relu(self.fc2(h), 0.1)
        return self.rot(h), self.trans(h)


class VIPoseNet(Module):
    def __init__(self, cfg: VIPoseConfig | None = None, seed: int = 0, pseudo_head: bool = True):
        self.cfg = cfg or VIPoseConfig()
        rng = np.random.default_rng(seed)
        self.visual = VisualBranch(rng, self.cfg)
        self.inertial = InertialBranch(rng, self.cfg)
        self.head = OutputBranch(rng, self.cfg.visual_feature_dim + self.cfg.inertial_feature_dim, self.cfg)
        self.pseudo_head = OutputBranch(rng, self.cfg.visual_feature_dim, self.cfg) if pseudo_head else None

    # inputs ---------------------------------------------------------------
    def _check_pair(self, pair) -> tuple[Tensor, Tensor]:
        data = pair.data if isinstance(pair, Tensor) else np.asarray(pair)
        if data.ndim != 4 or data.shape[1] != 6 or data.shape[2:] != (self.cfg.input_h, self.cfg.input_w):
            raise ConfigMismatch(f"image pair shape {data.shape} != (N, 6, {self.cfg.input_h}, {self.cfg.input_w})")
        dtype = self.head.fc1.weight.dtype
        centered = data.astype(dtype) - dtype.type(0.5)
        return Tensor(centered[:, :3]), Tensor(centered[:, 3:])

    def _check_imu(self, imu) -> Tensor:
        data = imu.data if isinstance(imu, Tensor) else np.asarray(imu)
        if data.ndim != 3 or data.shape[1:] != (self.cfg.imu_len, 6):
            raise ConfigMismatch(f"IMU shape {data.shape} != (N, {self.cfg.imu_len}, 6)")
        return Tensor(np.ascontiguousarray(data.transpose(0, 2, 1)).astype(self.head.fc1.weight.dtype))

    # branches -------------------------------------------------------------
    def visual_forward(self, pair) -> Tensor:
        return self.visual(*self._check_pair(pair))

    def inertial_forward(self, imu) -> Tensor:
        return self.inertial(self._check_imu(imu))

    def forward(self, pair, imu, zero_inertial_feature: bool = False) -> tuple[Tensor, Tensor]:
        vis = self.visual_forward(pair)
        if zero_inertial_feature:
            inert = Tensor(np.zeros((vis.shape[0], self.cfg.inertial_feature_dim), dtype=vis.dtype))
        else:
            inert = self.inertial_forward(imu)
        return self.head(F.concat([vis, inert], axis=1))

    def pseudo_forward(self, pair) -> tuple[Tensor, Tensor]:
        if self.pseudo_head is None:
            raise ConfigMismatch("pseudo output branch was already discarded")
        return self.pseudo_head(self.visual_forward(pair))

    def replace_output_branch(self, seed: int):
        """Drop the visual-only head and start the fused head from fresh weights."""
        rng = np.random.default_rng(seed)
        dtype = self.head.fc1.weight.dtype
        self.head = OutputBranch(rng, self.cfg.visual_feature_dim + self.cfg.inertial_feature_dim, self.cfg)
        self.head.astype(dtype)
        self.pseudo_head = None

    def predict(self, ref: np.ndarray, obs: np.ndarray, imu: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
        """Single pair inference on (H, W, 3) images and a (K, 6) IMU window."""
        pair = np.concatenate([ref, obs], axis=2).transpose(2, 0, 1)[None]
        if imu is None:
            imu = np.zeros((self.cfg.imu_len, 6), dtype=np.float32)
        with no_grad():
            w, t = self.forward(pair, np.asarray(imu)[None])
        return w.data[0].astype(np.float64), t.data[0].astype(np.float64)

    # persistence -----------------------------------------------------------
    def save(self, path):
        meta = {
            "config": self.cfg.to_dict(),
            "visual_feature_dim": self.cfg.visual_feature_dim,
            "inertial_feature_dim": self.cfg.inertial_feature_dim,
            "pseudo_head": self.pseudo_head is not None,
        }
        return ad.save_tensors(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path) -> "VIPoseNet":
        tensors, meta = ad.load_tensors(path)
        try:
            cfg = VIPoseConfig.from_dict(meta["config"])
            has_pseudo = bool(meta["pseudo_head"])
        except (KeyError, TypeError) as e:
            raise ad.CheckpointError(f"{path}: manifest lacks network config ({e})") from e
        net = cls(cfg, seed=0, pseudo_head=has_pseudo)
        try:
            net.load_state_dict(tensors)
        except (KeyError, ValueError) as e:
            raise ConfigMismatch(f"{path}: {e}") from e
        return net


def pose_loss(pred_w: Tensor, pred_t: Tensor, gt_w, gt_t, lambda_rot: float = 1.0,
              lambda_trans: float = 1.0) -> Tensor:
    """Batch mean of lambda_rot * |w - w_gt| + lambda_trans * |t - t_gt| (plain Euclidean norms)."""
    gw = np.asarray(gt_w, dtype=pred_w.dtype).reshape(pred_w.shape)
    gt = np.asarray(gt_t, dtype=pred_t.dtype).reshape(pred_t.shape)
    rot = F.row_norm(pred_w - Tensor(gw))
    trans = F.row_norm(pred_t - Tensor(gt))
    per_sample = rot * lambda_rot + trans * lambda_trans
    return per_sample.mean()


def loss_value(pred_w, pred_t, gt_w, gt_t, lambda_rot=1.0, lambda_trans=1.0) -> float:
    """Scalar loss for one sample on plain vectors."""
    return (lambda_rot * math.dist(np.ravel(pred_w), np.ravel(gt_w))
            + lambda_trans * math.dist(np.ravel(pred_t), np.ravel(gt_t)))
