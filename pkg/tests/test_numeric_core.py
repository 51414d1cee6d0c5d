import math

import numpy as np
import pytest

from questmf import ops
from questmf.autograd import Tape, grad_check, parameter, reverse_sweep, tensor
from questmf.optim import AdamW
from questmf.rng import derive_key, stream


def _sweep(fn, *params):
    with Tape() as tape:
        loss = fn(*params)
    return reverse_sweep(tape, loss, list(params))


def test_sum_gradient_is_ones():
    p = parameter([1.0, -2.0, 5.0])
    g = _sweep(lambda p: ops.sum(p), p)
    np.testing.assert_array_equal(g[p], [1.0, 1.0, 1.0])


def test_square_gradient():
    p = parameter([1.0, 2.0, 3.0])
    g = _sweep(lambda p: ops.sum(p * p), p)
    np.testing.assert_array_equal(g[p], [2.0, 4.0, 6.0])


def test_reused_tensor_accumulates():
    p = parameter([3.0])
    # loss = p*p + 2p -> d/dp = 2p + 2 = 8
    g = _sweep(lambda p: ops.sum(p * p + p * 2.0), p)
    np.testing.assert_allclose(g[p], [8.0])


def test_non_participating_param_gets_zeros():
    p, q = parameter(np.ones(3)), parameter(np.ones((2, 2)))
    with Tape() as tape:
        loss = ops.sum(p)
    g = reverse_sweep(tape, loss, [p, q])
    np.testing.assert_array_equal(g[q], np.zeros((2, 2)))


def test_loss_must_be_scalar():
    p = parameter(np.ones(3))
    with Tape() as tape:
        out = p * 2.0
    with pytest.raises(ValueError, match="scalar"):
        reverse_sweep(tape, out)


def test_loss_must_be_on_tape():
    p = parameter(np.ones(3))
    with Tape():
        loss = ops.sum(p)
    with Tape() as other:
        ops.sum(p)
    with pytest.raises(ValueError, match="not produced"):
        reverse_sweep(other, loss)


def test_constant_ops_are_not_recorded():
    with Tape() as tape:
        ops.sum(tensor(np.ones(4)) * 3.0)
    assert len(tape) == 0


def test_sweep_of_sum_is_sum_of_sweeps():
    rng = np.random.default_rng(3)
    p = parameter(rng.normal(size=(3, 4)))
    f1 = lambda p: ops.sum(ops.tanh(p))
    f2 = lambda p: ops.sum(ops.exp(p) * p)
    both = _sweep(lambda p: f1(p) + f2(p), p)[p]
    np.testing.assert_allclose(both, _sweep(f1, p)[p] + _sweep(f2, p)[p], rtol=1e-13)


def test_grad_check_exact_for_linear():
    p = parameter(np.random.default_rng(0).normal(size=5))
    assert grad_check(lambda ps: ops.sum(ps[0]), [p]) < 1e-10


@pytest.mark.filterwarnings("ignore:invalid value encountered in log:RuntimeWarning")
def test_grad_check_rejects_nonfinite():
    p = parameter([-1.0])
    with pytest.raises(FloatingPointError):
        grad_check(lambda ps: ops.sum(ops.log(ps[0])), [p])


def test_grad_check_detects_a_wrong_gradient():
    from questmf.autograd import record

    def bad_square(a):
        return record(a.data * a.data, (a,), lambda g: (g * a.data,))  # missing factor 2

    p = parameter([1.5, -0.5])
    assert grad_check(lambda ps: ops.sum(bad_square(ps[0])), [p]) > 0.1


UNARY = {
    "relu": (ops.relu, lambda x: x + np.sign(x) * 0.1),
    "tanh": (ops.tanh, lambda x: x),
    "sigmoid": (ops.sigmoid, lambda x: x),
    "exp": (ops.exp, lambda x: x),
    "log": (ops.log, lambda x: np.abs(x) + 0.5),
    "neg": (ops.neg, lambda x: x),
    "clamp_min": (lambda a: ops.clamp_min(a, 0.05), lambda x: x + np.sign(x - 0.05) * 0.1),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitive_gradients(name):
    fn, prep = UNARY[name]
    rng = np.random.default_rng(11)
    p = parameter(prep(rng.normal(size=(3, 4))))
    w = rng.normal(size=(3, 4))
    assert grad_check(lambda ps: ops.sum(fn(ps[0]) * w), [p]) <= 1e-5


BINARY = {
    "add": ops.add,
    "sub": ops.sub,
    "mul": ops.mul,
    "div": lambda a, b: ops.div(a, ops.add(ops.mul(b, b), 1.0)),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_primitive_gradients_with_broadcasting(name):
    rng = np.random.default_rng(12)
    a = parameter(rng.normal(size=(2, 3, 4)))
    b = parameter(rng.normal(size=(3, 1)))
    w = rng.normal(size=(2, 3, 4))
    fn = BINARY[name]
    assert grad_check(lambda ps: ops.sum(fn(ps[0], ps[1]) * w), [a, b]) <= 1e-5


def test_matmul_gradients():
    rng = np.random.default_rng(13)
    a = parameter(rng.normal(size=(2, 3, 5)))
    b = parameter(rng.normal(size=(5, 4)))
    c = parameter(rng.normal(size=(2, 4, 3)))
    assert grad_check(lambda ps: ops.sum(ops.matmul(ops.matmul(ps[0], ps[1]), ps[2])), [a, b, c]) <= 1e-5


def test_matmul_prefix_matches_zero_padded_product():
    rng = np.random.default_rng(14)
    a = rng.normal(size=(3, 4))
    b = parameter(rng.normal(size=(7, 2)))
    padded = np.concatenate([a, np.zeros((3, 3))], axis=1)
    np.testing.assert_allclose(ops.matmul_prefix(tensor(a), b).data, padded @ b.data, rtol=1e-14)
    ap = parameter(a)
    assert grad_check(lambda ps: ops.sum(ops.tanh(ops.matmul_prefix(ps[0], ps[1]))), [ap, b]) <= 1e-5
    g = _sweep(lambda b: ops.sum(ops.matmul_prefix(tensor(a), b)), b)[b]
    assert g.shape == (7, 2)
    np.testing.assert_array_equal(g[4:], 0.0)


def test_compact_sweep_keeps_leading_row_block():
    rng = np.random.default_rng(19)
    a, c = rng.normal(size=(3, 2)), rng.normal(size=(3, 3))
    b = parameter(rng.normal(size=(5, 4)))

    def grads(compact):
        # two prefix uses of different widths accumulate into one block
        with Tape() as tape:
            loss = ops.sum(ops.matmul_prefix(tensor(a), b)) + ops.sum(ops.tanh(ops.matmul_prefix(tensor(c), b)))
        return reverse_sweep(tape, loss, [b], compact=compact)[b]

    full, short = grads(False), grads(True)
    assert full.shape == (5, 4) and short.shape == (3, 4)
    np.testing.assert_array_equal(short, full[:3])
    np.testing.assert_array_equal(full[3:], 0.0)


def test_take_and_scatter_rows_gradients():
    rng = np.random.default_rng(20)
    a = parameter(rng.normal(size=(6, 3)))
    rows = np.array([4, 0, 2])
    w = rng.normal(size=(8, 3))
    f = lambda ps: ops.sum(ops.scatter_rows(ops.tanh(ops.take_rows(ps[0], rows)), [1, 7, 3], 8) * w)
    assert grad_check(f, [a]) <= 1e-6
    out = ops.scatter_rows(ops.take_rows(a, rows), [1, 7, 3], 8).data
    np.testing.assert_array_equal(out[[1, 7, 3]], a.data[rows])
    np.testing.assert_array_equal(out[[0, 2, 4, 5, 6]], 0.0)


def test_adamw_accepts_leading_row_gradient():
    rng = np.random.default_rng(21)
    p, q = parameter(rng.normal(size=(4, 2))), parameter(rng.normal(size=(4, 2)))
    q.data[:] = p.data
    short_opt, dense_opt = AdamW([p], lr=1e-2), AdamW([q], lr=1e-2)
    for rows in (1, 3, 2):
        g = rng.normal(size=(rows, 2))
        full = np.zeros((4, 2))
        full[:rows] = g
        short_opt.step({p: g})
        dense_opt.step({q: full})
    np.testing.assert_array_equal(p.data, q.data)
    with pytest.raises(ValueError, match="shape"):
        short_opt.step({p: np.zeros((5, 2))})


def test_shape_ops_gradients():
    rng = np.random.default_rng(15)
    a = parameter(rng.normal(size=(2, 3, 4)))
    b = parameter(rng.normal(size=(2, 3, 2)))
    w = rng.normal(size=(2, 6, 5))

    def f(ps):
        x = ops.concat([ps[0], ps[1]], axis=-1)  # (2, 3, 6)
        x = ops.pad_axis(x, 5, axis=1)  # (2, 5, 6)
        x = ops.transpose(ops.reshape(x, (2, 5, 6)), (0, 2, 1))  # (2, 6, 5)
        return ops.sum(ops.sum(x * w, axis=1, keepdims=True)) + ops.sum(ops.mean(x * x, axis=2))

    assert grad_check(f, [a, b]) <= 1e-5


def test_softmax_gradient_and_mask():
    rng = np.random.default_rng(16)
    a = parameter(rng.normal(size=(2, 5)))
    mask = np.array([[True, True, False, True, False], [False, True, True, True, True]])
    w = rng.normal(size=(2, 5))
    p = ops.softmax(a, axis=-1, mask=mask)
    assert np.all(p.data[~mask] == 0.0)
    np.testing.assert_allclose(p.data.sum(-1), 1.0, rtol=1e-15)
    assert grad_check(lambda ps: ops.sum(ops.softmax(ps[0], -1, mask) * w), [a]) <= 1e-6


def test_softmax_fully_masked_row_is_an_error():
    with pytest.raises(ValueError, match="fully masked"):
        ops.softmax(tensor(np.zeros((1, 3))), mask=np.zeros((1, 3), dtype=bool))


def test_where_gradient():
    rng = np.random.default_rng(17)
    a = parameter(rng.normal(size=(3, 4)))
    mask = rng.random((3, 1)) > 0.4
    assert grad_check(lambda ps: ops.sum(ops.where(mask, ps[0]) * ps[0]), [a]) <= 1e-6


def test_lstm_recurrence_gradient():
    rng = np.random.default_rng(18)
    gx = parameter(rng.normal(size=(2, 4, 8)))
    wh = parameter(rng.normal(size=(2, 8)) * 0.5)
    mask = np.array([[1, 1, 1, 0], [1, 1, 0, 0]], dtype=bool)
    w = rng.normal(size=(2, 4, 2))
    for reverse in (False, True):
        err = grad_check(lambda ps: ops.sum(ops.lstm_recurrence(ps[0], ps[1], mask, reverse) * w), [gx, wh])
        assert err <= 1e-6


# ---- AdamW ----

def _adamw_oracle(theta, g, m, v, t, lr, b1, b2, eps, wd):
    # scalar transcription of the bias-corrected decoupled update
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mhat = m / (1 - b1**t)
    vhat = v / (1 - b2**t)
    theta = theta - lr * wd * theta - lr * mhat / (math.sqrt(vhat) + eps)
    return theta, m, v


def test_adamw_first_step_hand_value():
    p = parameter([1.0])
    opt = AdamW([p], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01)
    opt.step({p: np.array([0.5])})
    assert p.data[0] == pytest.approx(0.9989900, abs=1e-9)


def test_adamw_matches_scalar_oracle_over_steps():
    rng = np.random.default_rng(4)
    p = parameter(rng.normal(size=6))
    opt = AdamW([p], lr=5e-4)
    ref = [(float(x), 0.0, 0.0) for x in p.data]
    for t in range(1, 8):
        g = rng.normal(size=6)
        opt.step({p: g})
        ref = [_adamw_oracle(th, gi, m, v, t, 5e-4, 0.9, 0.999, 1e-8, 0.01) for (th, m, v), gi in zip(ref, g)]
    np.testing.assert_allclose(p.data, [r[0] for r in ref], rtol=1e-12)
    np.testing.assert_allclose(opt.m[p], [r[1] for r in ref], rtol=1e-12)
    assert opt.step_count == 7


def test_adamw_zero_lr_moves_moments_only():
    p = parameter([0.3, -0.2])
    opt = AdamW([p], lr=0.0)
    opt.step({p: np.array([1.0, 2.0])})
    np.testing.assert_array_equal(p.data, [0.3, -0.2])
    np.testing.assert_allclose(opt.m[p], [0.1, 0.2])
    assert np.all(opt.v[p] > 0)


def test_adamw_sign_symmetry():
    p, q = parameter([0.7]), parameter([-0.7])
    opt = AdamW([p, q])
    for _ in range(2):
        opt.step({p: np.array([0.3]), q: np.array([-0.3])})
    assert p.data[0] == -q.data[0]


def test_adamw_untouched_entries_only_decay():
    p = parameter([2.0, 2.0])
    opt = AdamW([p], lr=0.1, weight_decay=0.5)
    opt.step({p: np.array([0.0, 1.0])})
    assert p.data[0] == 2.0 * (1.0 - 0.1 * 0.5)


def test_adamw_errors():
    p = parameter([1.0, 2.0])
    opt = AdamW([p])
    with pytest.raises(ValueError, match="shape"):
        opt.step({p: np.zeros(3)})
    with pytest.raises(FloatingPointError):
        opt.step({p: np.array([np.nan, 0.0])})
    assert opt.step_count == 0
    np.testing.assert_array_equal(p.data, [1.0, 2.0])


# ---- RNG ----

def test_stream_is_reproducible_and_path_dependent():
    a = stream(42, "init/x").random(5)
    np.testing.assert_array_equal(a, stream(42, "init/x").random(5))
    assert not np.array_equal(a, stream(42, "init/y").random(5))
    assert not np.array_equal(a, stream(43, "init/x").random(5))


def test_derive_key_is_sha256_prefix():
    import hashlib

    raw = hashlib.sha256(b"7:abc").digest()[:16]
    expected = np.frombuffer(raw, dtype="<u8")
    np.testing.assert_array_equal(derive_key(7, "abc"), expected)
