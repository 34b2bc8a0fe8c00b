import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ascent_vit.numerics import (
    ContractError,
    DimensionError,
    Rng,
    Tape,
    Tensor,
    backward,
    bilinear_sample,
    conv2d,
    finite_diff_check,
    layer_norm,
    matmul,
    max_pool2d,
    relu,
    softmax,
    splitmix64,
)
from ascent_vit.numerics import functional as F


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- oracles ---------------------------------------------------------------


def matmul_loops(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def conv_loops(x, w, b, stride, pad):
    C, H, W = x.shape
    co, _, kh, kw = w.shape
    xp = np.zeros((C, H + 2 * pad, W + 2 * pad))
    xp[:, pad:pad + H, pad:pad + W] = x
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((co, Ho, Wo))
    for o in range(co):
        for r in range(Ho):
            for c in range(Wo):
                acc = b[o]
                for ci in range(C):
                    for i in range(kh):
                        for j in range(kw):
                            acc += xp[ci, r * stride + i, c * stride + j] * w[o, ci, i, j]
                out[o, r, c] = acc
    return out


def pool_loops(x, window, stride):
    C, H, W = x.shape
    Ho = (H - window) // stride + 1
    Wo = (W - window) // stride + 1
    out = np.zeros((C, Ho, Wo))
    for ch in range(C):
        for r in range(Ho):
            for c in range(Wo):
                out[ch, r, c] = max(x[ch, r * stride + i, c * stride + j]
                                    for i in range(window) for j in range(window))
    return out


def four_corner(m, x, y):
    C, H, W = m.shape
    x = min(max(x, 0.0), W - 1)
    y = min(max(y, 0.0), H - 1)
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x1, y1 = min(x0 + 1, W - 1), min(y0 + 1, H - 1)
    ax, ay = x - x0, y - y0
    return ((1 - ax) * (1 - ay) * m[:, y0, x0] + ax * (1 - ay) * m[:, y0, x1]
            + (1 - ax) * ay * m[:, y1, x0] + ax * ay * m[:, y1, x1])


# -- matmul ------------------------------------------------------------------


def test_matmul_identity_and_scalar():
    a = Tensor([[1, 2], [3, 4]])
    np.testing.assert_array_equal(matmul(a, Tensor(np.eye(2))).data, [[1, 2], [3, 4]])
    assert matmul(Tensor([[2]]), Tensor([[3]])).data.tolist() == [[6.0]]


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, matmul_loops(a, b), atol=1e-12)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_backward_rules(rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    w = rng.normal(size=(3, 2))
    with Tape() as t:
        loss = (matmul(a, b) * w).sum()
    backward(t, loss)
    np.testing.assert_allclose(a.grad, w @ b.data.T, atol=1e-12)
    np.testing.assert_allclose(b.grad, a.data.T @ w, atol=1e-12)


# -- softmax / layer norm ------------------------------------------------------


def test_softmax_examples(rng):
    np.testing.assert_allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(softmax(Tensor([0.0, math.log(3)])).data, [0.25, 0.75], atol=1e-15)
    v = rng.normal(size=5)
    s = softmax(Tensor(v)).data
    assert abs(s.sum() - 1) < 1e-12
    np.testing.assert_allclose(s, np.exp(v) / np.exp(v).sum(), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-500, 500), min_size=1, max_size=12))
def test_softmax_slices_sum_to_one(values):
    s = softmax(Tensor(values)).data
    assert np.all(np.isfinite(s))
    assert abs(s.sum() - 1.0) < 1e-12


def test_layer_norm_examples(rng):
    one, zero = Tensor(np.ones(4)), Tensor(np.zeros(4))
    np.testing.assert_array_equal(layer_norm(Tensor(np.full(4, 3.0)), one, zero, 1e-5).data, 0.0)
    np.testing.assert_allclose(
        layer_norm(Tensor([-1.0, 1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), 0.0).data, [-1, 1])
    row = rng.normal(size=7)
    g, b = rng.normal(size=7), rng.normal(size=7)
    mu = sum(row) / 7
    var = sum((r - mu) ** 2 for r in row) / 7
    oracle = (row - mu) / math.sqrt(var + 1e-5) * g + b
    np.testing.assert_allclose(layer_norm(Tensor(row), Tensor(g), Tensor(b), 1e-5).data, oracle, atol=1e-12)


# -- conv / pool / sampling --------------------------------------------------------


def test_conv_trivial_cases():
    x = np.random.default_rng(0).normal(size=(1, 4, 4))
    out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), stride=1, padding=0)
    np.testing.assert_array_equal(out.data, x)
    out = conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
    assert out.data.tolist() == [[[9.0]]]


def test_conv_kernel_too_large():
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 5, 5))), padding=1)


@pytest.mark.parametrize("trial", range(50))
def test_conv_matches_sliding_window(trial):
    r = np.random.default_rng(trial)
    ci, co = r.integers(1, 3), r.integers(1, 3)
    stride, pad = int(r.integers(1, 3)), int(r.integers(0, 2))
    x = r.normal(size=(ci, 5, 5))
    w = r.normal(size=(co, ci, 3, 3))
    b = r.normal(size=co)
    got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=pad).data
    np.testing.assert_allclose(got, conv_loops(x, w, b, stride, pad), atol=1e-12)


def test_conv_gradients(rng):
    w = Tensor(rng.normal(size=(2, 2, 3, 3)))
    x = Tensor(rng.normal(size=(2, 2, 5, 5)))
    b = Tensor(rng.normal(size=2))
    proj = rng.normal(size=(2, 2, 3, 3))
    for target in (w, x, b):
        rep = finite_diff_check(lambda _: (conv2d(x, w, b, stride=2, padding=1) * proj).sum(), target)
        assert rep.passed, rep.max_rel_error


def test_pool_examples():
    assert max_pool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), 2).data.tolist() == [[[4.0]]]
    np.testing.assert_array_equal(max_pool2d(Tensor(np.full((1, 4, 4), 2.5)), 2).data, 2.5)


@pytest.mark.parametrize("trial", range(50))
def test_pool_matches_loops(trial):
    x = np.random.default_rng(100 + trial).normal(size=(2, 6, 6))
    np.testing.assert_array_equal(max_pool2d(Tensor(x), 2, 2).data, pool_loops(x, 2, 2))


def test_pool_tie_routes_to_first():
    x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
    with Tape() as t:
        loss = max_pool2d(x, 2).sum()
    backward(t, loss)
    np.testing.assert_array_equal(x.grad, [[[1.0, 0.0], [0.0, 0.0]]])


def test_pool_overlapping_gradients(rng):
    x = Tensor(rng.normal(size=(1, 5, 5)))
    rep = finite_diff_check(lambda t: (max_pool2d(t, 3, 1) ** 2).sum(), x)
    assert rep.passed


def test_bilinear_examples():
    m = Tensor([[[0.0, 1.0], [2.0, 3.0]]])
    assert bilinear_sample(m, 1.0, 0.0).data.tolist() == [1.0]
    assert bilinear_sample(m, 0.5, 0.5).data.tolist() == [1.5]
    # border clamping
    assert bilinear_sample(m, -3.0, 7.0).data.tolist() == [2.0]


@pytest.mark.parametrize("trial", range(50))
def test_bilinear_four_corner_oracle(trial):
    r = np.random.default_rng(500 + trial)
    m = r.normal(size=(3, 4, 4))
    xs = r.uniform(-0.5, 3.5, size=100 if trial == 0 else 10)
    ys = r.uniform(-0.5, 3.5, size=xs.size)
    got = bilinear_sample(Tensor(m), Tensor(xs), Tensor(ys)).data
    oracle = np.stack([four_corner(m, a, b) for a, b in zip(xs, ys)])
    np.testing.assert_allclose(got, oracle, atol=1e-12)


def test_bilinear_gradients_in_values_and_coords(rng):
    m = Tensor(rng.normal(size=(3, 4, 5)))
    xs = Tensor(rng.uniform(0.1, 3.9, size=6))
    ys = Tensor(rng.uniform(0.1, 2.9, size=6))
    proj = rng.normal(size=(6, 3))
    f = lambda _: (bilinear_sample(m, xs, ys) * proj).sum()
    for target in (m, xs, ys):
        rep = finite_diff_check(f, target)
        assert rep.passed, rep.max_rel_error


# -- backward / gradcheck ------------------------------------------------------


def test_backward_square_and_unused():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    unused = Tensor([5.0, 6.0], requires_grad=True)
    with Tape() as t:
        loss = (x * x).sum()
        _ = unused * 2.0
    backward(t, loss)
    np.testing.assert_array_equal(x.grad, [2.0, -4.0, 6.0])
    np.testing.assert_array_equal(unused.grad, [0.0, 0.0])


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as t:
        y = x * 2.0
    with pytest.raises(ContractError):
        backward(t, y)


def test_gradient_accumulates_over_uses(rng):
    x = Tensor(rng.normal(size=4), requires_grad=True)
    w1, w2 = rng.normal(size=4), rng.normal(size=4)
    with Tape() as t:
        loss = (x * w1).sum() + (F.gelu(x) * w2).sum()
    backward(t, loss)
    combined = x.grad.copy()
    parts = []
    for fn in (lambda: (x * w1).sum(), lambda: (F.gelu(x) * w2).sum()):
        x.zero_grad()
        with Tape() as t:
            loss = fn()
        backward(t, loss)
        parts.append(x.grad.copy())
    np.testing.assert_allclose(combined, parts[0] + parts[1], atol=1e-14)


def test_fd_check_linear_and_square():
    a = np.array([[1.0, -2.0], [0.5, 3.0]])
    rep = finite_diff_check(lambda t: matmul(Tensor(a), t).sum(), Tensor([[0.3], [0.7]]))
    assert rep.max_rel_error < 1e-9
    rep = finite_diff_check(lambda t: (t * t).sum(), Tensor([1.0]))
    assert abs(rep.numeric[0] - 2.0) < 1e-9 and rep.analytic[0] == 2.0


@pytest.mark.parametrize("op", ["softmax", "layer_norm", "gelu", "log_softmax", "bn", "frob", "bce"])
def test_op_gradients(op, rng):
    x = Tensor(rng.normal(size=(2, 3, 4, 4)) if op == "bn" else rng.normal(size=(3, 5)))
    w = rng.normal(size=x.shape)
    if op == "softmax":
        f = lambda t: (softmax(t, axis=-1) * w).sum()
    elif op == "log_softmax":
        f = lambda t: (F.log_softmax(t) * w).sum()
    elif op == "layer_norm":
        g, b = Tensor(rng.normal(size=5)), Tensor(rng.normal(size=5))
        f = lambda t: (layer_norm(t, g, b) * w).sum()
    elif op == "gelu":
        f = lambda t: (F.gelu(t) * w).sum()
    elif op == "bn":
        g, b = Tensor(rng.normal(size=3)), Tensor(rng.normal(size=3))
        f = lambda t: (F.batch_norm2d(t, g, b) * w).sum()
    elif op == "frob":
        f = lambda t: F.frobenius_norm(t).sum()
    else:
        x = Tensor(rng.uniform(0.1, 0.9, size=(3, 5)))
        tgt = rng.integers(0, 2, size=(3, 5)).astype(float)
        f = lambda t: F.binary_cross_entropy(t, tgt).sum()
    rep = finite_diff_check(f, x)
    assert rep.passed, rep.max_rel_error


def test_frobenius_zero_has_zero_grad():
    x = Tensor(np.zeros((2, 3)), requires_grad=True)
    with Tape() as t:
        loss = F.frobenius_norm(x)
    backward(t, loss)
    np.testing.assert_array_equal(x.grad, 0.0)


def test_indexing_and_concat_gradients(rng):
    x = Tensor(rng.normal(size=(4, 3)))
    idx = np.array([0, 2, 2, 3])
    f = lambda t: ((t[idx] ** 2).sum() + F.layer_norm(t[1:3], None, None).sum()
                   + (concat_helper(t) * 1.5).sum())
    rep = finite_diff_check(f, x)
    assert rep.passed


def concat_helper(t):
    from ascent_vit.numerics import concat
    return concat([t[:2], t[2:] * 3.0], axis=0)


def test_finite_outputs_on_finite_inputs(rng):
    x = Tensor(rng.normal(size=(2, 3, 6, 6)) * 50)
    w = Tensor(rng.normal(size=(4, 3, 3, 3)))
    y = conv2d(x, w, padding=1)
    y = max_pool2d(relu(y), 2)
    z = softmax(y.reshape((2, -1)) * 10.0)
    assert np.all(np.isfinite(z.data))


# -- rng -----------------------------------------------------------------------


def test_splitmix_reference_value():
    _, out = splitmix64(0)
    assert out == 0xE220A8397B1DCDAF


def test_xoshiro_reference_stream():
    r = Rng.from_state([1, 2, 3, 4])
    assert [r.next_u64() for _ in range(4)] == [11520, 0, 1509978240, 1215971899390074240]


def test_rng_determinism_and_ranges():
    a, b = Rng(42), Rng(42)
    np.testing.assert_array_equal(a.normal(size=100), b.normal(size=100))
    u = Rng(3).random(1000)
    assert u.min() >= 0.0 and u.max() < 1.0
    p = Rng(9).permutation(20)
    assert sorted(p.tolist()) == list(range(20))
    state = a.state
    x1 = a.random(5)
    a.state = state
    np.testing.assert_array_equal(a.random(5), x1)


# -- channels-last twins ----------------------------------------------------


def _nhwc(a):
    return np.ascontiguousarray(np.moveaxis(a, 1, -1))


@pytest.mark.parametrize("trial", range(20))
def test_conv_nhwc_matches_nchw(trial):
    r = np.random.default_rng(500 + trial)
    ci, co = int(r.integers(1, 4)), int(r.integers(1, 4))
    stride, pad = int(r.integers(1, 3)), int(r.integers(0, 2))
    x = r.normal(size=(2, ci, 6, 5))
    w = r.normal(size=(co, ci, 3, 3))
    ref = conv2d(Tensor(x), Tensor(w), None, stride=stride, padding=pad).data
    got = F.conv2d_nhwc(Tensor(_nhwc(x)), Tensor(w), None, stride=stride, padding=pad).data
    np.testing.assert_allclose(got, _nhwc(ref), atol=1e-12)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_nhwc_gradients(stride, rng):
    w = Tensor(rng.normal(size=(3, 2, 3, 3)))
    x = Tensor(rng.normal(size=(2, 5, 5, 2)))
    b = Tensor(rng.normal(size=3))
    proj = rng.normal(size=F.conv2d_nhwc(x, w, b, stride=stride, padding=1).shape)
    for target in (w, x, b):
        rep = finite_diff_check(
            lambda _: (F.conv2d_nhwc(x, w, b, stride=stride, padding=1) * proj).sum(), target)
        assert rep.passed, rep.max_rel_error


@pytest.mark.parametrize("co,ci,pad,k", [(2, 3, 1, 3), (3, 3, 0, 3), (2, 2, 2, 3), (1, 4, 0, 1)])
def test_conv_nhwc_narrow_output_input_gradient(co, ci, pad, k, rng):
    # narrow outputs take the transposed-convolution route for the input gradient
    w = Tensor(rng.normal(size=(co, ci, k, k)))
    x = Tensor(rng.normal(size=(2, 5, 6, ci)))
    proj = rng.normal(size=F.conv2d_nhwc(x, w, None, padding=pad).shape)
    rep = finite_diff_check(lambda _: (F.conv2d_nhwc(x, w, None, padding=pad) * proj).sum(), x)
    assert rep.passed, rep.max_rel_error


@pytest.mark.parametrize("shape", [(2, 6, 6, 3), (1, 5, 7, 2)])
def test_pool_nhwc_matches_nchw(shape, rng):
    x = rng.normal(size=shape)
    ref = max_pool2d(Tensor(np.moveaxis(x, -1, 1)), 2).data
    np.testing.assert_array_equal(F.max_pool_nhwc(Tensor(x), 2).data, np.moveaxis(ref, 1, -1))
    rep = finite_diff_check(lambda t: (F.max_pool_nhwc(t, 2) ** 2).sum(), Tensor(x))
    assert rep.passed


def test_pool_nhwc_tie_routes_to_first():
    x = Tensor(np.ones((1, 2, 2, 1)), requires_grad=True)
    with Tape() as t:
        loss = F.max_pool_nhwc(x, 2).sum()
    backward(t, loss)
    np.testing.assert_array_equal(x.grad[0, :, :, 0], [[1.0, 0.0], [0.0, 0.0]])


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm_nhwc_matches_nchw(training, rng):
    x = rng.normal(size=(2, 3, 4, 4))
    g, b = Tensor(rng.normal(size=3)), Tensor(rng.normal(size=3))
    run_a = (rng.normal(size=3), rng.uniform(0.5, 2.0, size=3))
    run_b = (run_a[0].copy(), run_a[1].copy())
    ref = F.batch_norm2d(Tensor(x), g, b, running=run_a, training=training).data
    got = F.batch_norm_nhwc(Tensor(_nhwc(x)), g, b, running=run_b, training=training).data
    np.testing.assert_allclose(got, _nhwc(ref), atol=1e-12)
    np.testing.assert_allclose(run_a[0], run_b[0], atol=1e-15)
    np.testing.assert_allclose(run_a[1], run_b[1], atol=1e-15)
    fused = F.batch_norm_nhwc(Tensor(_nhwc(x)), g, b, running=run_b, training=False, relu=True).data
    assert fused.min() >= 0.0


@pytest.mark.parametrize("relu_on", [False, True])
def test_batch_norm_nhwc_gradients(relu_on, rng):
    x = Tensor(rng.normal(size=(2, 4, 4, 3)))
    g, b = Tensor(rng.normal(size=3)), Tensor(rng.normal(size=3))
    w = rng.normal(size=x.shape)
    for target in (x, g, b):
        rep = finite_diff_check(
            lambda _: (F.batch_norm_nhwc(x, g, b, relu=relu_on) * w).sum(), target)
        assert rep.passed, rep.max_rel_error


@pytest.mark.parametrize("training", [True, False])
@pytest.mark.parametrize("shape", [(2, 6, 6, 3), (1, 5, 7, 4)])
def test_fused_bn_relu_pool_matches_composition(training, shape, rng):
    x = rng.normal(size=shape)
    g = rng.normal(size=shape[-1])
    g[0] = 0.0  # flat channel: the whole window ties
    b = rng.normal(size=shape[-1])
    gy = rng.normal(size=(shape[0], shape[1] // 2, shape[2] // 2, shape[3]))
    results = []
    for fused in (True, False):
        run = (np.full(shape[-1], 0.1), np.full(shape[-1], 1.3))
        xt, gt, bt = Tensor(x.copy(), requires_grad=True), Tensor(g, requires_grad=True), \
            Tensor(b, requires_grad=True)
        with Tape() as t:
            if fused:
                y = F.batch_norm_relu_pool_nhwc(xt, gt, bt, 2, running=run, training=training)
            else:
                y = F.max_pool_nhwc(F.batch_norm_nhwc(xt, gt, bt, running=run,
                                                      training=training, relu=True), 2)
            loss = (y * gy).sum()
        backward(t, loss)
        results.append((y.data, xt.grad, gt.grad, bt.grad, run))
    for a, b_ in zip(results[0][:4], results[1][:4]):
        np.testing.assert_allclose(a, b_, atol=1e-12)
    for a, b_ in zip(results[0][4], results[1][4]):
        np.testing.assert_allclose(a, b_, atol=1e-15)


def test_fused_bn_relu_pool_gradients(rng):
    x = Tensor(rng.normal(size=(2, 4, 4, 3)), requires_grad=True)
    g = Tensor(np.array([1.5, -0.7, 0.9]), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)
    w = rng.normal(size=(2, 2, 2, 3))
    for target in (x, g, b):
        rep = finite_diff_check(
            lambda _: (F.batch_norm_relu_pool_nhwc(x, g, b, 2) * w).sum(), target)
        assert rep.passed, rep.max_rel_error
