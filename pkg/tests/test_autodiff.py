import numpy as np
import pytest

from vipose.autodiff import (
    SGD, Adam, BatchNorm1d, CheckpointError, Parameter, ShapeError, Tensor, batch_norm_1d, concat, conv1d, conv2d,
    correlation, cosine_lr, flatten, grad_check, leaky_relu, linear, load_tensors, no_grad, relu, row_norm,
    save_tensors, sgd_step,
)


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def conv2d_loops(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - kh) // stride + 1, (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for i in range(n):
        for oc in range(o):
            for y in range(ho):
                for xx in range(wo):
                    acc = b[oc]
                    for ic in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[i, ic, y * stride + u, xx * stride + v] * w[oc, ic, u, v]
                    out[i, oc, y, xx] = acc
    return out


def correlation_loops(f1, f2, d, stride):
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


# forward oracles -----------------------------------------------------------

def test_conv2d_identity_and_constant():
    x = np.random.default_rng(0).normal(size=(2, 3, 5, 6))
    w = np.eye(3).reshape(3, 3, 1, 1)
    assert np.allclose(conv2d(T(x), T(w)).data, x)
    c = 0.7
    out = conv2d(T(np.full((1, 1, 6, 6), c)), T(np.ones((1, 1, 3, 3))), pad=1).data
    assert np.allclose(out[0, 0, 1:-1, 1:-1], 9 * c)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 2)])
def test_conv2d_matches_loops(rng, stride, pad):
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    got = conv2d(T(x), T(w), T(b), stride, pad).data
    assert np.allclose(got, conv2d_loops(x, w, b, stride, pad), atol=1e-6)


def test_conv1d_cases(rng):
    x = rng.normal(size=(2, 3, 11))
    assert np.allclose(conv1d(T(x), T(np.eye(3).reshape(3, 3, 1))).data, x)
    c = 1.3
    out = conv1d(T(np.full((1, 1, 9), c)), T(np.ones((1, 1, 3))), pad=1).data
    assert np.allclose(out[0, 0, 1:-1], 3 * c)
    w, b = rng.normal(size=(4, 3, 5)), rng.normal(size=4)
    got = conv1d(T(x), T(w), T(b), stride=2, pad=2).data
    # direct 1-d loop oracle
    xp = np.pad(x, ((0, 0), (0, 0), (2, 2)))
    lo = (11 + 4 - 5) // 2 + 1
    ref = np.zeros((2, 4, lo))
    for n in range(2):
        for o in range(4):
            for t in range(lo):
                ref[n, o, t] = b[o] + sum(xp[n, ci, 2 * t + k] * w[o, ci, k] for ci in range(3) for k in range(5))
    assert np.allclose(got, ref, atol=1e-6)


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        conv2d(T(np.zeros((1, 2, 4, 4))), T(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        correlation(T(np.zeros((1, 2, 4, 4))), T(np.zeros((1, 2, 4, 5))))
    with pytest.raises(ShapeError):
        linear(T(np.zeros((1, 3))), T(np.zeros((2, 4))))


def test_conv_linearity(rng):
    w = T(rng.normal(size=(4, 3, 3, 3)))
    x, y = rng.normal(size=(2, 3, 7, 7)), rng.normal(size=(2, 3, 7, 7))
    a, b = 0.3, -1.7
    lhs = conv2d(T(a * x + b * y), w, None, 2, 1).data
    rhs = a * conv2d(T(x), w, None, 2, 1).data + b * conv2d(T(y), w, None, 2, 1).data
    assert np.allclose(lhs, rhs, atol=1e-6)
    w1 = T(rng.normal(size=(4, 3, 5)))
    x1, y1 = rng.normal(size=(2, 3, 12)), rng.normal(size=(2, 3, 12))
    lhs = conv1d(T(a * x1 + b * y1), w1, None, 2, 2).data
    rhs = a * conv1d(T(x1), w1, None, 2, 2).data + b * conv1d(T(y1), w1, None, 2, 2).data
    assert np.allclose(lhs, rhs, atol=1e-6)


def test_correlation_constant_and_self(rng):
    c = 0.6
    f = T(np.full((1, 4, 9, 9), c))
    out = correlation(f, f, 3).data
    assert np.allclose(out[0, 24, 3:-3, 3:-3], c * c)
    g = rng.normal(size=(2, 5, 6, 7))
    out = correlation(T(g), T(g), 2).data
    assert np.allclose(out[:, 12], (g * g).sum(axis=1) / 5)


def test_correlation_argmax_finds_shift(rng):
    f1 = rng.normal(size=(1, 64, 12, 12))
    f2 = np.zeros_like(f1)
    f2[:, :, 1:, :-1] = f1[:, :, :-1, 1:]  # f2(y+1, x-1) = f1(y, x)
    out = correlation(T(f1), T(f2), 3).data
    best = out[0, :, 3:-3, 3:-3].argmax(axis=0)
    assert np.all(best == (1 + 3) * 7 + (-1 + 3))


@pytest.mark.parametrize("stride", [1, 2])
def test_correlation_matches_loops(rng, stride):
    f1, f2 = rng.normal(size=(2, 3, 7, 8)), rng.normal(size=(2, 3, 7, 8))
    assert np.allclose(correlation(T(f1), T(f2), 3, stride).data, correlation_loops(f1, f2, 3, stride), atol=1e-5)


def test_leaky_relu_values():
    out = leaky_relu(T([2.0, 0.0, -1.0]), 0.1).data
    assert np.allclose(out, [2.0, 0.0, -0.1])
    assert np.allclose(relu(T([-3.0, 3.0])).data, [0, 3])


def test_batch_norm_cases(rng):
    x = rng.normal(size=(4, 3, 10))
    x = (x - x.mean(axis=(0, 2), keepdims=True)) / x.std(axis=(0, 2), keepdims=True)
    bn = BatchNorm1d(3).astype(np.float64)
    assert np.allclose(bn(T(x)).data, x, atol=1e-5)
    const = np.full((4, 3, 10), 2.5)
    assert np.allclose(BatchNorm1d(3).astype(np.float64)(T(const)).data, 0)
    y = BatchNorm1d(3).astype(np.float64)(T(rng.normal(3, 5, size=(8, 3, 20)))).data
    assert np.allclose(y.mean(axis=(0, 2)), 0, atol=1e-4) and np.allclose(y.var(axis=(0, 2)), 1, atol=1e-4)
    with pytest.raises(ShapeError):
        BatchNorm1d(3)(T(np.zeros((1, 3, 1))))


def test_batch_norm_running_stats_and_eval(rng):
    bn = BatchNorm1d(2).astype(np.float64)
    x = rng.normal(2.0, 3.0, size=(16, 2, 50))
    for _ in range(200):
        bn(T(x))
    assert np.allclose(bn.running_mean, x.mean(axis=(0, 2)), atol=1e-6)
    bn.eval()
    y = bn(T(x)).data
    assert np.allclose(y.mean(axis=(0, 2)), 0, atol=1e-3)
    assert np.array_equal(bn(T(x)).data, y)


def test_linear_cases(rng):
    x = rng.normal(size=(3, 4))
    assert np.allclose(linear(T(x), T(np.eye(4))).data, x)
    b = rng.normal(size=2)
    assert np.allclose(linear(T(x), T(np.zeros((2, 4))), T(b)).data, np.tile(b, (3, 1)))
    w = rng.normal(size=(2, 4))
    ref = np.array([[sum(x[n, i] * w[o, i] for i in range(4)) + b[o] for o in range(2)] for n in range(3)])
    assert np.allclose(linear(T(x), T(w), T(b)).data, ref, atol=1e-6)


def test_concat_and_flatten(rng):
    a, b = T(rng.normal(size=(1, 8)), True), T(rng.normal(size=(1, 4)), True)
    c = concat([a, b], 1)
    assert c.shape == (1, 12)
    g = rng.normal(size=(1, 12))
    c.backward(g)
    assert np.array_equal(a.grad, g[:, :8]) and np.array_equal(b.grad, g[:, 8:])
    assert flatten(T(np.zeros((2, 3, 4)))).shape == (2, 12)
    assert T(np.zeros((2, 3, 4))).reshape(24).shape == (24,)


# gradient checks -----------------------------------------------------------

SEEDS = range(20)
TOL = 1e-5


def _nz(rng, shape, floor=0.05):
    """Normal draws pushed away from zero so kinks stay outside the FD stencil."""
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < floor, np.sign(x + 1e-12) * floor, x)


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_conv2d(seed):
    rng = np.random.default_rng(seed)
    n, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.choice([1, 3, 5]))
    s = int(rng.integers(1, 3))
    p = int(rng.integers(0, k // 2 + 1))
    h, w = rng.integers(k, k + 5), rng.integers(k, k + 5)
    ins = [rng.normal(size=(n, c, h, w)), rng.normal(size=(o, c, k, k)), rng.normal(size=o)]
    assert grad_check(lambda t: conv2d(t[0], t[1], t[2], s, p), ins) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_conv1d(seed):
    rng = np.random.default_rng(100 + seed)
    n, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.choice([1, 3, 7]))
    s, p = int(rng.integers(1, 3)), int(rng.integers(0, k // 2 + 1))
    length = rng.integers(k, k + 9)
    ins = [rng.normal(size=(n, c, length)), rng.normal(size=(o, c, k)), rng.normal(size=o)]
    assert grad_check(lambda t: conv1d(t[0], t[1], t[2], s, p), ins) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_correlation(seed):
    rng = np.random.default_rng(200 + seed)
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(3, 7)), int(rng.integers(3, 7)))
    d, s = int(rng.integers(1, 4)), int(rng.integers(1, 3))
    ins = [rng.normal(size=shape), rng.normal(size=shape)]
    assert grad_check(lambda t: correlation(t[0], t[1], d, s), ins) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_leaky_relu(seed):
    rng = np.random.default_rng(300 + seed)
    ins = [_nz(rng, (int(rng.integers(1, 4)), int(rng.integers(1, 6))))]
    assert grad_check(lambda t: leaky_relu(t[0], 0.1), ins, eps=1e-5) < TOL
    assert grad_check(lambda t: relu(t[0]), ins, eps=1e-5) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_batch_norm(seed):
    rng = np.random.default_rng(400 + seed)
    n, c, length = int(rng.integers(2, 4)), int(rng.integers(1, 4)), int(rng.integers(2, 6))
    ins = [rng.normal(size=(n, c, length)), rng.normal(size=c), rng.normal(size=c)]
    rm, rv = np.zeros(c), np.ones(c)
    assert grad_check(lambda t: batch_norm_1d(t[0], t[1], t[2], rm.copy(), rv.copy(), True), ins) < TOL
    rm2, rv2 = rng.normal(size=c), rng.uniform(0.5, 2, size=c)
    assert grad_check(lambda t: batch_norm_1d(t[0], t[1], t[2], rm2, rv2, False), ins) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_linear(seed):
    rng = np.random.default_rng(500 + seed)
    n, fi, fo = (int(v) for v in rng.integers(1, 6, size=3))
    ins = [rng.normal(size=(n, fi)), rng.normal(size=(fo, fi)), rng.normal(size=fo)]
    assert grad_check(lambda t: linear(t[0], t[1], t[2]), ins) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_structural(seed):
    rng = np.random.default_rng(600 + seed)
    a, b = rng.normal(size=(2, 3, 2)), rng.normal(size=(2, 1, 2))
    assert grad_check(lambda t: flatten(concat([t[0], t[1]], 1)), [a, b]) < TOL
    assert grad_check(lambda t: t[0] * t[1] + t[1] - t[0].mean(), [a, b]) < TOL
    v = rng.normal(size=(4, 3)) + 0.5
    assert grad_check(lambda t: row_norm(t[0]), [v]) < TOL


# optimizer -----------------------------------------------------------------

def test_sgd_cases():
    p = [np.array([1.0, -2.0])]
    new, _ = sgd_step(p, [np.zeros(2)], 0.1)
    assert np.array_equal(new[0], p[0])
    new, v = sgd_step(p, [np.array([0.5, 0.5])], 0.1, momentum=0.0)
    assert np.allclose(new[0], p[0] - 0.05)
    # f(x) = (x - 3)^2, small lr: monotone approach without overshoot
    # lr below the heavy-ball critical damping bound (1 + m - 2 lr)^2 >= 4 m
    x, vel, prev = [np.array(0.0)], None, None
    for _ in range(500):
        x, vel = sgd_step(x, [2 * (x[0] - 3.0)], 0.001, momentum=0.9, velocity=vel)
        assert float(x[0]) <= 3.0
        d = abs(float(x[0]) - 3.0)
        assert prev is None or d < prev + 1e-12
        prev = d
    assert prev < 1e-2


def test_sgd_class_matches_recurrence(rng):
    p = Parameter(np.array([2.0]), dtype=np.float64)
    opt = SGD([{"params": [p], "lr": 0.05}], momentum=0.9)
    x, v = 2.0, 0.0
    for _ in range(20):
        g = float(rng.normal())
        p.grad = np.array([g])
        opt.step()
        v = 0.9 * v + g
        x = x - 0.05 * v
        assert p.data[0] == x


def test_adam_matches_reference_recurrence(rng):
    p = Parameter(np.array([1.5, -0.5]), dtype=np.float64)
    opt = Adam([{"params": [p], "lr": 0.01}])
    x, m, v = p.data.copy(), np.zeros(2), np.zeros(2)
    for k in range(1, 31):
        g = rng.normal(size=2)
        p.grad = g.copy()
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x = x - 0.01 * (m / (1 - 0.9 ** k)) / (np.sqrt(v / (1 - 0.999 ** k)) + 1e-8)
        assert np.allclose(p.data, x, rtol=0, atol=1e-15)
    # first step moves every coordinate by lr regardless of gradient scale
    q = Parameter(np.array([0.0, 0.0]), dtype=np.float64)
    one = Adam([{"params": [q], "lr": 0.1}])
    q.grad = np.array([1e-3, -50.0])
    one.step()
    assert np.allclose(q.data, [-0.1, 0.1])


def test_cosine_lr():
    assert cosine_lr(1e-3, 1e-4, 0, 30) == 1e-3
    assert cosine_lr(1e-3, 1e-4, 30, 30) == pytest.approx(1e-4, abs=1e-18)
    assert cosine_lr(1e-3, 1e-4, 15, 30) == pytest.approx(5.5e-4, abs=1e-15)
    with pytest.raises(ValueError):
        cosine_lr(1e-3, 1e-4, 31, 30)


# tape ------------------------------------------------------------------------

def test_no_grad_builds_no_tape(rng):
    w = Parameter(rng.normal(size=(2, 3)))
    with no_grad():
        y = linear(Tensor(rng.normal(size=(1, 3))), w)
    assert not y.requires_grad and y._backward is None


def test_shared_input_gradients_accumulate(rng):
    x = T(rng.normal(size=(3,)), True)
    (x * x + x).sum().backward()
    assert np.allclose(x.grad, 2 * x.data + 1)


# checkpoint ------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    ts = {"a.w": rng.normal(size=(3, 4)).astype(np.float32), "b": rng.normal(size=5),
          "c": np.arange(6, dtype=np.int64).reshape(2, 3)}
    save_tensors(tmp_path / "ck", ts, {"hello": 1})
    back, meta = load_tensors(tmp_path / "ck")
    assert meta == {"hello": 1} and list(back) == list(ts)
    for k in ts:
        assert back[k].dtype == ts[k].dtype and back[k].tobytes() == ts[k].tobytes()


def test_checkpoint_errors(tmp_path, rng):
    with pytest.raises(CheckpointError):
        load_tensors(tmp_path / "missing")
    save_tensors(tmp_path / "ck", {"a": np.ones(3)})
    (tmp_path / "ck" / "manifest.json").write_text("{not json")
    with pytest.raises(CheckpointError):
        load_tensors(tmp_path / "ck")
    save_tensors(tmp_path / "ck2", {"a": np.ones(3)})
    with open(tmp_path / "ck2" / "weights.bin", "ab") as fh:
        fh.write(b"\0")
    with pytest.raises(CheckpointError):
        load_tensors(tmp_path / "ck2")
