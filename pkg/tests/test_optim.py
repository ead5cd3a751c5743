import numpy as np
import pytest

from dsbbench import autodiff as ad
from dsbbench.autodiff import Var
from dsbbench.optim import AdamW, Ema, GradientError


def _leaf(values):
    return Var(np.asarray(values, dtype=float), requires_grad=True)


def test_zero_gradients_leave_params_unchanged():
    p = _leaf([1.0, -2.0, 3.0])
    opt = AdamW([p], lr=0.1, weight_decay=0.0)
    before = p.value.copy()
    for _ in range(3):
        p.grad = np.zeros(3)
        opt.step()
    assert np.array_equal(p.value, before)


def test_single_step_matches_hand_rolled_update():
    # after one step: m = (1-b1) g, v = (1-b2) g^2; bias correction restores
    # m_hat = g, v_hat = g^2, so the step is -lr * g / (|g| + eps)
    rng = np.random.default_rng(0)
    g = rng.normal(size=(4, 3))
    p = _leaf(rng.normal(size=(4, 3)))
    before = p.value.copy()
    lr, eps = 0.05, 1e-8
    opt = AdamW([p], lr=lr, betas=(0.95, 0.99), eps=eps)
    p.grad = g.copy()
    opt.step()
    expected = before - lr * g / (np.abs(g) + eps)
    assert np.allclose(p.value, expected, rtol=0, atol=1e-15)


def test_quadratic_loss_decreases_over_100_steps():
    target = np.array([2.0, -1.0, 0.5])
    p = _leaf([10.0, 10.0, 10.0])
    opt = AdamW([p], lr=0.05)

    def loss_value():
        return float(((p.value - target) ** 2).sum())

    initial = loss_value()
    for _ in range(100):
        p.grad = 2.0 * (p.value - target)
        opt.step()
    assert loss_value() < initial


def test_nan_gradient_aborts_step():
    p = _leaf([1.0])
    opt = AdamW([p], lr=0.1)
    p.grad = np.array([np.nan])
    before = p.value.copy()
    with pytest.raises(GradientError):
        opt.step()
    assert np.array_equal(p.value, before)


def test_weight_decay_is_decoupled():
    p = _leaf([4.0])
    opt = AdamW([p], lr=0.1, weight_decay=0.5)
    p.grad = np.array([0.0])
    opt.step()
    # pure decay: value * (1 - lr * wd), no gradient contribution
    assert p.value[0] == pytest.approx(4.0 * (1 - 0.1 * 0.5), abs=1e-15)


def test_lr_must_be_positive():
    with pytest.raises(ValueError):
        AdamW([_leaf([1.0])], lr=0.0)


def test_ema_decay_zero_copies_params():
    p = _leaf([1.0, 2.0])
    ema = Ema([p], decay=0.0)
    p.value[:] = [5.0, 6.0]
    ema.update()
    assert np.array_equal(ema.shadow[0], [5.0, 6.0])


def test_ema_decay_one_keeps_shadow():
    p = _leaf([1.0, 2.0])
    ema = Ema([p], decay=1.0)
    p.value[:] = [5.0, 6.0]
    ema.update()
    assert np.array_equal(ema.shadow[0], [1.0, 2.0])


def test_ema_two_updates_recurrence():
    # shadow s, constant params p, decay 1/2: after two updates
    # 0.5(0.5 s + 0.5 p) + 0.5 p = 0.25 s + 0.75 p
    p = _leaf([8.0])
    ema = Ema([p], decay=0.5)
    ema.shadow[0][:] = 4.0
    ema.update()
    ema.update()
    assert ema.shadow[0][0] == pytest.approx(0.25 * 4.0 + 0.75 * 8.0, abs=1e-15)


def test_training_trajectory_is_deterministic():
    def run():
        rng = np.random.default_rng(42)
        p = _leaf(rng.normal(size=5))
        opt = AdamW([p], lr=1e-2)
        for _ in range(50):
            ad.zero_grads([p])
            loss = ad.vsum(ad.mul(ad.exp(p), ad.exp(p)))
            ad.backward(loss, [p])
            opt.step()
        return p.value.copy()

    assert np.array_equal(run(), run())
