import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from questmf import ops
from questmf.autograd import Tensor, grad_check, parameter, tensor
from questmf.losses import (
    LossConfig,
    batch_loss,
    class_distance,
    class_weight_table,
    class_weights,
    imboll_loss,
    mse_loss,
    oll_loss,
)


def _oll_oracle(p, y, alpha):
    return -sum(np.log(max(1 - p[i], 1e-12)) * abs(y - i) ** alpha for i in range(4))


def test_oll_worked_values():
    p = [0.1, 0.2, 0.3, 0.4]
    expected = -(np.log(0.8) + 2 * np.log(0.7) + 3 * np.log(0.6))
    assert float(oll_loss(p, 0).data) == pytest.approx(expected, abs=1e-12)
    assert float(oll_loss([0.25] * 4, 2, alpha=2.0).data) == pytest.approx(-np.log(0.75) * 6, abs=1e-12)


def test_oll_is_zero_for_a_confident_correct_prediction():
    assert float(oll_loss([0.0, 0.0, 1.0, 0.0], 2).data) == 0.0


def test_oll_clamps_certain_wrong_prediction():
    val = float(oll_loss([1.0, 0.0, 0.0, 0.0], 3).data)
    assert val == pytest.approx(-np.log(1e-12) * 3)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(0.01, 10), min_size=4, max_size=4),
    st.integers(0, 3),
    st.floats(0.5, 3.0),
)
def test_oll_matches_scalar_oracle(raw, y, alpha):
    p = np.asarray(raw) / np.sum(raw)
    assert float(oll_loss(p, y, alpha).data) == pytest.approx(_oll_oracle(p, y, alpha), rel=1e-12, abs=1e-15)


def test_imboll_is_weighted_oll():
    rng = np.random.default_rng(0)
    p = rng.dirichlet(np.ones(4), size=50)
    y = rng.integers(0, 4, size=50)
    w = np.array([1.2, 3.0, 5.5, 9.0])
    base = oll_loss(p, y, 1.5).data
    np.testing.assert_allclose(imboll_loss(p, y, 1.5, 0.7, w).data, base * w[y] ** 0.7, rtol=1e-14)
    np.testing.assert_array_equal(imboll_loss(p, y, 1.5, 0.0, w).data, base)


def test_class_weights():
    np.testing.assert_allclose(class_weights([5, 3, 1, 1]), [2.0, 10 / 3, 10.0, 10.0])
    with pytest.raises(ValueError, match="empty class"):
        class_weights([4, 0, 1, 1])
    labels = np.array([[0, 1], [0, 2], [1, 3], [3, 0], [2, 0]])
    table = class_weight_table(labels)
    np.testing.assert_allclose(table[0], [2.5, 5.0, 5.0, 5.0])
    np.testing.assert_allclose(table[1], [2.5, 5.0, 5.0, 5.0])
    pooled = class_weight_table(labels, pooled=True)
    np.testing.assert_allclose(pooled, np.tile([2.5, 5.0, 5.0, 5.0], (2, 1)))


def test_invalid_inputs():
    with pytest.raises(ValueError):
        oll_loss([0.5, 0.5, 0.5, 0.5], 0)
    with pytest.raises(ValueError):
        oll_loss([0.25] * 4, 4)
    with pytest.raises(ValueError):
        imboll_loss([0.25] * 4, 0, 1.0, 0.5, [1.0, 0.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        class_distance(0, 5)
    assert class_distance(3, 1) == 2
    for bad in ({"kind": "hinge"}, {"alpha": 0.0}, {"beta": -1.0}, {"eps": 0.1}):
        with pytest.raises(ValueError):
            LossConfig(**bad)


def test_loss_gradients():
    rng = np.random.default_rng(1)
    logits = parameter(rng.normal(size=(5, 4)))
    y = rng.integers(0, 4, size=5)
    w = np.array([1.0, 2.0, 4.0, 8.0])
    for cfg in (LossConfig("oll", alpha=1.0), LossConfig("oll", alpha=2.0), LossConfig("imboll", 1.0, 0.5)):
        assert grad_check(lambda ps: batch_loss(ps[0], y, cfg, w), [logits]) <= 1e-6
    pred = parameter(rng.normal(size=(5, 1)))
    t = rng.normal(size=5)
    assert grad_check(lambda ps: batch_loss(ps[0], t, LossConfig("mse")), [pred]) <= 1e-6


def test_mse_and_batch_mean():
    np.testing.assert_array_equal(mse_loss([1.0, 3.0], [2.0, 0.0]).data, [1.0, 9.0])
    out = batch_loss(tensor([[1.0], [3.0]]), [2.0, 0.0], LossConfig("mse"))
    assert float(out.data) == 5.0
    with pytest.raises(ValueError, match="weights"):
        batch_loss(tensor(np.zeros((2, 4))), [0, 1], LossConfig("imboll"))


def test_worked_examples():
    p = [0.7, 0.1, 0.1, 0.1]
    assert float(oll_loss(p, 0).data) == pytest.approx(0.632163, abs=1e-6)
    assert float(oll_loss(p, 3).data) == pytest.approx(3.928000, abs=1e-6)
    w = np.array([1.25, 10.0, 20.0, 20.0])
    weighted = float(imboll_loss(p, 0, 1.0, 0.5, w).data)
    assert weighted == pytest.approx(-6 * np.log(0.9) * np.sqrt(1.25), rel=1e-14)
    assert weighted == pytest.approx(0.706778, abs=5e-6)
    assert float(imboll_loss(p, 2, 1.0, 0.8, np.ones(4)).data) == float(oll_loss(p, 2).data)
    assert [class_distance(0, 0), class_distance(1, 3), class_distance(3, 0)] == [0, 2, 3]
    np.testing.assert_array_equal(class_weights([25, 25, 25, 25]), [4, 4, 4, 4])
    np.testing.assert_array_equal(class_weights([80, 10, 5, 5]), [1.25, 10, 20, 20])
    with pytest.raises(ValueError, match="empty class"):
        class_weights([1, 1, 1, 0])
    np.testing.assert_array_equal(mse_loss([3.0, 0.0], [3.0, 3.0]).data, [0.0, 9.0])
    assert float(batch_loss(tensor([0.0, 2.0]), [1.0, 0.0], LossConfig("mse")).data) == 2.5


def test_single_class_batch_gradients_differ_by_the_weight_factor():
    from questmf.autograd import Tape, reverse_sweep

    rng = np.random.default_rng(2)
    logits = parameter(rng.normal(size=(6, 4)))
    y = np.full(6, 2)
    w = np.array([1.5, 4.0, 9.0, 12.0])

    def grad(cfg):
        with Tape() as tape:
            loss = batch_loss(logits, y, cfg, w)
        return reverse_sweep(tape, loss, [logits])[logits]

    np.testing.assert_allclose(
        grad(LossConfig("imboll", 1.0, 0.5)), grad(LossConfig("oll", 1.0)) * 9.0 ** 0.5, rtol=1e-13
    )
