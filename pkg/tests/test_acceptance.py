"""Acceptance criteria, one test per criterion; each prints a PASS/FAIL line.

The learning and ablation criteria share one expensive fixture: for each of
three seeds it synthesizes the toy dataset, runs both training steps and
tracks the held-out sequence with the identity baseline, the visual-inertial
model and the same model with zeroed IMU input.
"""
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from vipose.autodiff import (
    Tensor, batch_norm_1d, concat, conv1d, conv2d, correlation, flatten, grad_check, leaky_relu, linear, relu,
    row_norm,
)
from vipose.cli import bench_report
from vipose.config import RunConfig
from vipose.datagen import (
    ImuNoise, Scene, TrajectorySpec, generate_trajectory, imu_arrays, read_dataset, render_sequence,
    synthesize_dataset, synthesize_imu,
)
from vipose.evaluation import add, add_s, auc, evaluate_run, model_points
from vipose.geometry import Pose, compose, inverse, pseudo_exp, pseudo_log, relative_pose
from vipose.imu import GRAVITY, ImuBuffer, ImuSample, to_heading_agnostic
from vipose.network import VIPoseNet
from vipose.scene import CameraIntrinsics, box_model
from vipose.tracker import (
    NetworkPredictor, OraclePredictor, ReinitPolicy, TrackConfig, ZeroPredictor, track_dataset_sequence,
    track_sequence,
)
from vipose.training import pool_for, train_step1, train_step2

from conftest import random_pose, random_twist

TOY_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "toy.json"
SEEDS = (0, 1, 2)


@pytest.fixture
def verdict(capsys):
    def report(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, detail
    return report


# geometry ------------------------------------------------------------------

def test_geometry_suite(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    round_trip = identities = 0.0
    bit_exact = True
    for _ in range(1000):
        v = random_twist(rng, max_angle=np.pi - 1e-6)
        p = pseudo_exp(v)
        back = pseudo_log(p)
        round_trip = max(round_trip, np.abs(back.as_vector() - v.as_vector()).max())
        bit_exact &= np.array_equal(p.translation, v.t) and np.array_equal(back.t, v.t)
        a, b = random_pose(rng), random_pose(rng)
        identities = max(identities,
                         np.abs(compose(a, inverse(a)).as_matrix() - np.eye(4)).max(),
                         np.abs(compose(relative_pose(a, b), a).as_matrix() - b.as_matrix()).max(),
                         np.abs(compose(a, b).as_matrix() - a.as_matrix() @ b.as_matrix()).max())
    elapsed = time.perf_counter() - t0
    ok = round_trip < 1e-9 and identities < 1e-9 and bit_exact and elapsed < 1.0
    verdict("geometry suite", ok, f"round trip {round_trip:.1e}, identities {identities:.1e}, "
            f"translation bit-exact {bit_exact}, {elapsed:.2f} s")


# autodiff ------------------------------------------------------------------

def _nz(rng, shape, floor=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < floor, np.sign(x + 1e-12) * floor, x)


def _gradcheck_cases(rng):
    """One random case per differentiable op: (name, fn, inputs, eps)."""
    n, c, o = (int(v) for v in rng.integers(1, 4, size=3))
    k = int(rng.choice([1, 3, 5]))
    s, p = int(rng.integers(1, 3)), int(rng.integers(0, k // 2 + 1))
    h, w = int(rng.integers(k, k + 5)), int(rng.integers(k, k + 5))
    yield "conv2d", lambda t: conv2d(t[0], t[1], t[2], s, p), \
        [rng.normal(size=(n, c, h, w)), rng.normal(size=(o, c, k, k)), rng.normal(size=o)], 1e-6
    length = int(rng.integers(k, k + 9))
    yield "conv1d", lambda t: conv1d(t[0], t[1], t[2], s, p), \
        [rng.normal(size=(n, c, length)), rng.normal(size=(o, c, k)), rng.normal(size=o)], 1e-6
    shape = (n, c, int(rng.integers(3, 7)), int(rng.integers(3, 7)))
    d = int(rng.integers(1, 4))
    yield "correlation", lambda t: correlation(t[0], t[1], d, s), \
        [rng.normal(size=shape), rng.normal(size=shape)], 1e-6
    x = _nz(rng, (n, int(rng.integers(1, 6))))
    yield "leaky_relu", lambda t: leaky_relu(t[0], 0.1), [x], 1e-5
    yield "relu", lambda t: relu(t[0]), [x], 1e-5
    nb = int(rng.integers(2, 4))
    bn_in = [rng.normal(size=(nb, c, int(rng.integers(2, 6)))), rng.normal(size=c), rng.normal(size=c)]
    yield "batch_norm_train", \
        lambda t: batch_norm_1d(t[0], t[1], t[2], np.zeros(c), np.ones(c), True), bn_in, 1e-6
    rm, rv = rng.normal(size=c), rng.uniform(0.5, 2.0, size=c)
    yield "batch_norm_eval", lambda t: batch_norm_1d(t[0], t[1], t[2], rm, rv, False), bn_in, 1e-6
    fi, fo = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    yield "linear", lambda t: linear(t[0], t[1], t[2]), \
        [rng.normal(size=(n, fi)), rng.normal(size=(fo, fi)), rng.normal(size=fo)], 1e-6
    a, b = rng.normal(size=(2, 3, 2)), rng.normal(size=(2, 1, 2))
    yield "concat_flatten", lambda t: flatten(concat([t[0], t[1]], 1)), [a, b], 1e-6
    yield "arithmetic_mean", lambda t: t[0] * t[1] + t[1] - t[0].mean(), [a, b], 1e-6
    yield "row_norm", lambda t: row_norm(t[0]), [rng.normal(size=(4, 3)) + 0.5], 1e-6


def _correlation_loops(f1, f2, d, stride):
    n, c, h, w = f1.shape
    span = 2 * d + 1
    out = np.zeros((n, span * span, h, w))
    for b in range(n):
        for i in range(span):
            for j in range(span):
                for y in range(h):
                    for x in range(w):
                        yy, xx = y + (i - d) * stride, x + (j - d) * stride
                        if 0 <= yy < h and 0 <= xx < w:
                            out[b, i * span + j, y, x] = f1[b, :, y, x] @ f2[b, :, yy, xx] / c
    return out


def test_autodiff_suite(verdict):
    t0 = time.perf_counter()
    worst, counts = {}, {}
    for seed in range(20):
        for name, fn, ins, eps in _gradcheck_cases(np.random.default_rng(7000 + seed)):
            worst[name] = max(worst.get(name, 0.0), grad_check(fn, ins, eps=eps))
            counts[name] = counts.get(name, 0) + 1
    rng = np.random.default_rng(8)
    corr_err = 0.0
    for stride in (1, 2):
        f1, f2 = rng.normal(size=(2, 3, 6, 7)), rng.normal(size=(2, 3, 6, 7))
        got = correlation(Tensor(f1), Tensor(f2), 2, stride).data
        corr_err = max(corr_err, np.abs(got - _correlation_loops(f1, f2, 2, stride)).max())
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v < 1e-5}
    ok = not bad and min(counts.values()) >= 20 and corr_err < 1e-5 and elapsed < 60
    verdict("autodiff suite", ok, f"{len(worst)} ops x {min(counts.values())} cases, worst rel err "
            f"{max(worst.values()):.1e}, correlation vs loops {corr_err:.1e}, {elapsed:.1f} s"
            + (f", failing {sorted(bad)}" if bad else ""))


# metrics -------------------------------------------------------------------

def test_metrics_suite(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    err_add = err_adds = 0.0
    ordered = True
    for _ in range(100):
        pts = rng.normal(scale=0.05, size=(int(rng.integers(5, 40)), 3))
        gt, est = random_pose(rng, max_trans=0.1), random_pose(rng, max_trans=0.1)
        hom = np.hstack([pts, np.ones((len(pts), 1))])
        a, b = (hom @ gt.as_matrix().T)[:, :3], (hom @ est.as_matrix().T)[:, :3]
        ref_add = np.mean([np.sqrt(((a[i] - b[i]) ** 2).sum()) for i in range(len(pts))])
        ref_adds = np.mean([min(np.sqrt(((a[i] - b[j]) ** 2).sum()) for j in range(len(pts)))
                            for i in range(len(pts))])
        got_add, got_adds = add(pts, gt, est), add_s(pts, gt, est)
        err_add = max(err_add, abs(got_add - ref_add))
        err_adds = max(err_adds, abs(got_adds - ref_adds))
        ordered &= got_adds <= got_add + 1e-15
    riemann = 0.0
    for _ in range(20):
        d = rng.uniform(0, 0.15, size=int(rng.integers(1, 200)))
        ts = (np.arange(100000) + 0.5) * (0.1 / 100000)  # midpoint rule
        approx = (np.searchsorted(np.sort(d), ts, side="right") / d.size).mean()
        riemann = max(riemann, abs(auc(d, 0.1) - approx))
    const = auc(np.full(50, 0.05), 0.1)
    elapsed = time.perf_counter() - t0
    ok = err_add < 1e-12 and err_adds < 1e-12 and ordered and riemann < 1e-3 and abs(const - 0.5) < 1e-9 \
        and elapsed < 10
    verdict("metrics suite", ok, f"ADD err {err_add:.1e}, ADD-S err {err_adds:.1e}, ADD-S <= ADD {ordered}, "
            f"AUC vs Riemann {riemann:.1e}, constant 5 cm AUC {const:.12f}, {elapsed:.2f} s")


# tracking pipeline ---------------------------------------------------------

class _Spinner:
    """Predicts a fixed rotation about the optical axis for the first n calls."""

    def __init__(self, deg, n):
        self.deg, self.n, self.calls = deg, n, 0

    def __call__(self, ref, obs, imu, frame):
        self.calls += 1
        w = np.array([0.0, 0.0, np.radians(self.deg)]) if self.calls <= self.n else np.zeros(3)
        return w, np.zeros(3)


def test_pipeline_exactness(verdict):
    t0 = time.perf_counter()
    intr = CameraIntrinsics(80.0, 80.0, 39.5, 29.5, 80, 60)
    cfg, model = TrackConfig(24, 32), box_model()
    traj = generate_trajectory(TrajectorySpec(duration=4.0, seed=3))
    recs, imgs = render_sequence(Scene(model, intrinsics=intr), traj)
    frames = [(r.t_ns, im) for r, im in zip(recs, imgs)]
    gt = [r.poses["box"] for r in recs]
    samples = synthesize_imu(traj)
    res = track_sequence(frames, samples, gt, OraclePredictor(gt), model, intr, cfg=cfg, imu_len=16)
    final_add = add(model_points(model.vertices), gt[-1], res.poses[-1])
    spin = track_sequence(frames[:20], samples, gt, _Spinner(12.0, 10), model, intr, cfg=cfg, imu_len=16)
    fired = [k for k, f in enumerate(spin.reinit_flags) if f]
    elapsed = time.perf_counter() - t0
    ok = (len(res.poses) == 100 and final_add < 1e-6 and res.reinit_count == 0 and not res.lost_frames
          and spin.reinit_count == 1 and fired == [10] and ReinitPolicy() == ReinitPolicy(10, 10.0, 0.01)
          and elapsed < 30)
    verdict("pipeline exactness", ok, f"oracle stub final ADD {final_add:.1e} m over {len(res.poses)} frames, "
            f"{res.reinit_count} re-inits; 12 deg fixture fired at frames {fired}; {elapsed:.1f} s")


# IMU -----------------------------------------------------------------------

def test_imu_consistency(verdict):
    t0 = time.perf_counter()
    tr = generate_trajectory(TrajectorySpec(duration=5.0, seed=2, angular_speed=0.6, jitter_att=0.15))
    _, _, gyro, quat = imu_arrays(tr, ImuNoise(0.0, 0.0))
    rots = Rotation.from_quat(np.roll(quat, -1, axis=1))
    fd = (rots[:-1].inv() * rots[1:]).as_rotvec() * tr.spec.imu_rate
    gyro_err = np.abs(fd - 0.5 * (gyro[:-1] + gyro[1:])).max()
    static = []
    for i, r in enumerate(Rotation.random(100, random_state=5)):
        x, y, z, w = r.as_quat()
        static.append(ImuSample(i + 1, r.inv().apply([0, 0, GRAVITY]), (0, 0, 0), (w, x, y, z)))
    accel_err = np.abs(to_heading_agnostic(static)[:, :3] - [0, 0, 9.81]).max()
    rng = np.random.default_rng(4)
    buf, ref, fifo = ImuBuffer(200), [], True
    for t in range(1, 1001):
        s = ImuSample(t, rng.normal(size=3), rng.normal(size=3), (1, 0, 0, 0))
        buf.push(s)
        ref = (ref + [s])[-200:]
        fifo &= [x.t_ns for x in buf] == [x.t_ns for x in ref]
    elapsed = time.perf_counter() - t0
    ok = gyro_err < 1e-3 and accel_err < 1e-6 and fifo and elapsed < 10
    verdict("IMU consistency", ok, f"gyro vs quaternion derivative {gyro_err:.1e} rad/s, static accel err "
            f"{accel_err:.1e}, FIFO match {fifo}, {elapsed:.2f} s")


# learning ------------------------------------------------------------------

def _run_seed(seed, root):
    cfg = RunConfig.from_dict({**RunConfig.load(TOY_CONFIG).raw, "seed": seed})
    data = root / f"data_{seed}"
    synthesize_dataset(cfg.dataset, data)
    ds = read_dataset(data)
    net = VIPoseNet(cfg.network, seed=seed)
    pool = pool_for(ds, cfg.training, cfg.network)
    t0 = time.monotonic()
    train_step1(net, pool, cfg.training)
    train_step2(net, pool, cfg.training)
    train_s = time.monotonic() - t0
    seq = ds.split("test")[0]
    gt = [seq.pose(k) for k in range(len(seq))]
    pts = model_points(ds.model.vertices)
    runs = {}
    for name, pred in (("baseline", ZeroPredictor()), ("vi", NetworkPredictor(net)),
                       ("no_imu", NetworkPredictor(net, no_imu=True))):
        r = track_dataset_sequence(seq, pred, ds.model, ds.intrinsics, cfg.policy, cfg.track, cfg.network.imu_len)
        _, s = evaluate_run(r.poses, gt, pts, None, r.reinit_flags)
        runs[name] = {"auc_add": s["auc_add"], "reinits": r.reinit_count, "lost": len(r.lost_frames)}
    return {"seed": seed, "frames": sum(len(s) for s in ds.sequences), "train_s": train_s, **runs}


@pytest.fixture(scope="module")
def learning_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    return [_run_seed(seed, root) for seed in SEEDS]


def test_end_to_end_learning(verdict, learning_runs):
    lines, wins = [], 0
    for r in learning_runs:
        gain = r["vi"]["auc_add"] - r["baseline"]["auc_add"]
        win = gain >= 0.10 and r["train_s"] <= 1800 and r["frames"] == 2500
        wins += win
        lines.append(f"seed {r['seed']}: {r['frames']} frames, train {r['train_s'] / 60:.1f} min, AUC(ADD) "
                     f"{r['vi']['auc_add']:.3f} vs identity {r['baseline']['auc_add']:.3f} ({gain:+.3f})")
    verdict("end-to-end learning", wins >= 2, f"{wins}/3 seeds pass; " + "; ".join(lines))


def test_occlusion_ablation(verdict, learning_runs):
    lines, wins = [], 0
    for r in learning_runs:
        vi, no = r["vi"], r["no_imu"]
        # restarts after a lost track count like policy re-inits here
        vi_r, no_r = vi["reinits"] + vi["lost"], no["reinits"] + no["lost"]
        win = vi_r <= no_r and vi["auc_add"] > no["auc_add"]
        wins += win
        lines.append(f"seed {r['seed']}: re-inits {vi_r} vs {no_r}, AUC(ADD) {vi['auc_add']:.3f} vs "
                     f"{no['auc_add']:.3f}")
    verdict("occlusion ablation", wins >= 2, f"{wins}/3 seeds pass (visual-inertial vs --no-imu); "
            + "; ".join(lines))


# throughput ----------------------------------------------------------------

def test_throughput_report(verdict, tmp_path):
    cfg = RunConfig.load(TOY_CONFIG)
    from dataclasses import replace
    ds_cfg = replace(cfg.dataset, n_sequences=1, test_duration=4.0)
    synthesize_dataset(ds_cfg, tmp_path / "data")
    ds = read_dataset(tmp_path / "data")
    net = VIPoseNet(cfg.network, seed=0)
    seq = ds.sequences[0]
    pred = NetworkPredictor(net)
    track_dataset_sequence(seq, pred, ds.model, ds.intrinsics, cfg.policy, cfg.track, max_frames=3)
    res = track_dataset_sequence(seq, pred, ds.model, ds.intrinsics, cfg.policy, cfg.track, max_frames=60)
    rep = bench_report(res.latency)
    stages = ", ".join(f"{k} {v:.2f} ms" for k, v in rep["stage_ms"].items())
    ok = rep["non_inference_fraction"] < 0.5
    verdict("throughput report", ok, f"{stages}; total {rep['total_ms']:.2f} ms ({rep['fps']:.1f} fps), "
            f"non-inference share {rep['non_inference_fraction']:.1%}")
