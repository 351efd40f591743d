import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kermtkit import autodiff as ad
from kermtkit.autodiff import Tape, Tensor, backward, finite_diff_check
from kermtkit.errors import IndexOutOfRange, NonScalarLoss, ShapeMismatch


def _param(rng, *shape, away_from_zero=False):
    x = rng.normal(size=shape)
    if away_from_zero:
        x = np.where(np.abs(x) < 0.1, x + np.sign(x + 1e-12) * 0.2, x)
    return Tensor(x, requires_grad=True)


def _op_cases(rng):
    a, b = _param(rng, 4, 3), _param(rng, 3, 5)
    c, d = _param(rng, 4, 3), _param(rng, 4, 3)
    bias = _param(rng, 3)
    r = _param(rng, 4, 3, away_from_zero=True)
    idx = np.array([2, 0, 0, 3, 1])
    seg = np.array([0, 2, 5])
    q, k, v = _param(rng, 5, 4), _param(rng, 5, 4), _param(rng, 5, 4)
    labels = np.array([0, 2, 1, 2])
    yb = (rng.random((4, 3)) < 0.5).astype(float)
    mask = rng.random((4, 3)) < 0.6
    return {
        "matmul": (lambda: ad.matmul(a, b), [a, b]),
        "add": (lambda: ad.add(c, d), [c, d]),
        "sub": (lambda: ad.sub(c, d), [c, d]),
        "add_row": (lambda: ad.add_row(c, bias), [c, bias]),
        "mul": (lambda: ad.mul(c, d), [c, d]),
        "scale": (lambda: ad.scale(c, -1.7), [c]),
        "relu": (lambda: ad.relu(r), [r]),
        "sigmoid": (lambda: ad.sigmoid(c), [c]),
        "tanh": (lambda: ad.tanh(c), [c]),
        "softmax_rows": (lambda: ad.softmax_rows(c), [c]),
        "log_softmax_rows": (lambda: ad.log_softmax_rows(c), [c]),
        "layer_norm_rows": (lambda: ad.layer_norm_rows(c), [c]),
        "sum_axis0": (lambda: ad.sum(c, axis=0), [c]),
        "sum_axis1": (lambda: ad.sum(c, axis=1), [c]),
        "mean_axis0": (lambda: ad.mean(c, axis=0), [c]),
        "mean_axis1": (lambda: ad.mean(c, axis=1), [c]),
        "gather_rows": (lambda: ad.gather_rows(c, idx), [c]),
        "scatter_add_rows": (lambda: ad.scatter_add_rows(c, idx[:4], 5), [c]),
        "concat": (lambda: ad.concat([c, a]), [c, a]),
        "segment_attention": (lambda: ad.segment_attention(q, k, v, seg, heads=2), [q, k, v]),
        "cross_entropy_sum": (lambda: ad.cross_entropy_sum(c, labels), [c]),
        "bce_with_logits_sum": (lambda: ad.bce_with_logits_sum(c, yb), [c]),
        "masked_sse": (lambda: ad.masked_sse(c, d.data, mask), [c]),
    }


OPS = list(_op_cases(np.random.default_rng(0)))


@pytest.mark.parametrize("name", OPS)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_op_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    build, params = _op_cases(rng)[name]
    readout = np.random.default_rng(seed + 100)
    probe = build()
    # a random linear read-out makes every output entry matter
    w = Tensor(readout.normal(size=probe.shape))
    f = (lambda: build()) if probe.shape == () else (lambda: ad.sum(ad.mul(build(), w)))
    assert finite_diff_check(f, params, eps=1e-5) < 1e-6


def test_identity_and_relu_examples():
    A = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(ad.matmul(Tensor(np.eye(2)), Tensor(A)).data, A)
    x = Tensor(np.array([[-1.0, 2.0]]), requires_grad=True)
    with Tape() as tape:
        y = ad.relu(x)
        loss = ad.sum(y)
    assert y.data.tolist() == [[0.0, 2.0]]
    assert backward(tape, loss)[x].tolist() == [[0.0, 1.0]]


def test_sum_and_square_gradients(rng):
    x = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum(x)
    assert np.array_equal(backward(tape, loss)[x], np.ones((3, 2)))
    with Tape() as tape:
        loss = ad.sum(ad.mul(x, x))
    assert np.allclose(backward(tape, loss)[x], 2 * x.data, rtol=0, atol=1e-15)


def test_fan_out_accumulates(rng):
    x = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum(ad.add(ad.mul(x, x), ad.scale(x, 3.0)))
    assert np.allclose(backward(tape, loss)[x], 2 * x.data + 3.0)


def test_quadratic_form_check(rng):
    A = rng.normal(size=(4, 4))
    x = Tensor(rng.normal(size=(4, 1)), requires_grad=True)
    f = lambda: ad.sum(ad.mul(x, ad.matmul(Tensor(A), x)))
    assert finite_diff_check(f, [x]) < 1e-9


def test_two_layer_mlp_check(rng):
    X = Tensor(rng.normal(size=(6, 5)))
    W1, b1 = _param(rng, 5, 8), _param(rng, 8)
    W2 = _param(rng, 8, 1)
    y = rng.normal(size=(6, 1))
    f = lambda: ad.masked_sse(ad.matmul(ad.tanh(ad.add_row(ad.matmul(X, W1), b1)), W2), y, np.ones((6, 1), bool))
    assert finite_diff_check(f, [W1, b1, W2]) < 1e-5


@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**31))
def test_gather_scatter_are_adjoint(n, d, seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 8))
    idx = rng.integers(0, n, size=m)
    x = rng.normal(size=(n, d))
    y = rng.normal(size=(m, d))
    # <gather(x), y> == <x, scatter(y)>
    lhs = (ad.gather_rows(Tensor(x), idx).data * y).sum()
    rhs = (x * ad.scatter_add_rows(Tensor(y), idx, n).data).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_scatter_then_gather_distinct_is_identity(rng):
    x = rng.normal(size=(4, 3))
    idx = np.array([3, 0, 5, 1])
    out = ad.gather_rows(ad.scatter_add_rows(Tensor(x), idx, 6), idx)
    assert np.array_equal(out.data, x)


def test_errors(rng):
    with pytest.raises(ShapeMismatch):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeMismatch):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(IndexOutOfRange):
        ad.gather_rows(Tensor(np.ones((2, 3))), [2])
    with pytest.raises(IndexOutOfRange):
        ad.scatter_add_rows(Tensor(np.ones((2, 3))), [0, -1], 3)
    x = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    with Tape() as tape:
        y = ad.relu(x)
    with pytest.raises(NonScalarLoss):
        backward(tape, y)
    with pytest.raises(ValueError):
        finite_diff_check(lambda: ad.sum(x), [x], eps=0)


def test_unreached_params_get_zero_gradient(rng):
    x = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    unused = Tensor(rng.normal(size=(3,)), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum(x)
    g = backward(tape, loss)
    assert unused not in g and np.array_equal(g[unused], np.zeros(3))


def test_deterministic_losses(rng):
    def run():
        r = np.random.default_rng(7)
        x, w = Tensor(r.normal(size=(5, 4))), Tensor(r.normal(size=(4, 4)), requires_grad=True)
        with Tape() as tape:
            loss = ad.sum(ad.softmax_rows(ad.matmul(x, w)))
        return loss.item(), backward(tape, loss)[w].tobytes()

    assert run() == run()
