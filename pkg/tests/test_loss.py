import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cecgnet.loss import (
    LossConfig,
    frequency_loss,
    rfft_segments,
    signal_loss,
    smooth_l1,
    smooth_l1_mean,
    total_loss,
)
from cecgnet.tensor import ShapeError, Tape, Tensor

from conftest import check_op_gradients, naive_dft


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=float), requires_grad=grad)


class TestSmoothL1:
    def test_zeros(self):
        assert smooth_l1(np.zeros(5)) == 0.0

    def test_quadratic_branch(self):
        assert smooth_l1([0.5], 1.0) == 0.125

    def test_linear_branch(self):
        assert smooth_l1([2.0], 1.0) == 1.5

    def test_mean_reduction(self):
        assert smooth_l1([0.5, 2.0, -2.0, 0.0]) == pytest.approx((0.125 + 1.5 + 1.5) / 4)

    def test_empty(self):
        with pytest.raises(ValueError):
            smooth_l1([])

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            smooth_l1([1.0], 0.0)

    @pytest.mark.parametrize("t", [0.25, 1.0, 3.0])
    def test_continuity_at_threshold(self, t):
        below = smooth_l1([t * (1 - 1e-9)], t)
        above = smooth_l1([t * (1 + 1e-9)], t)
        assert below == pytest.approx(above, abs=1e-8)

    def test_gradient(self, rng):
        d = T(rng.normal(scale=2.0, size=(2, 1, 16)), True)
        assert check_op_gradients(lambda: smooth_l1_mean(d, 1.0), [d]) < 1e-3


class TestSignalLoss:
    def test_identical(self, rng):
        x = rng.normal(size=(2, 1, 64))
        assert float(signal_loss(T(x), T(x)).values) == 0.0

    def test_constant_offset(self, rng):
        y = rng.normal(size=(2, 1, 64))
        assert float(signal_loss(T(y + 0.5), T(y)).values) == pytest.approx(0.125)

    def test_offset_gradient(self, rng):
        y = rng.normal(size=(2, 1, 64))
        p = T(y + 0.5, True)
        with Tape() as tape:
            loss = signal_loss(p, T(y))
        tape.backward(loss)
        np.testing.assert_allclose(p.grad, np.full(y.shape, 0.5 / y.size))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            signal_loss(T(np.zeros((1, 1, 8))), T(np.zeros((1, 1, 9))))


class TestFrequencyLoss:
    def test_identical(self, rng):
        x = rng.normal(size=(2, 1, 2048))
        assert float(frequency_loss(T(x), T(x)).values) == 0.0

    def test_half_period_shift_of_tone(self):
        fs, n = 1024, 2048
        t = np.arange(n) / fs
        target = np.sin(2 * np.pi * 32 * t)[None, None]
        pred = np.sin(2 * np.pi * 32 * t + np.pi)[None, None]
        loss = float(frequency_loss(T(pred), T(target)).values)
        # oracle: direct DFTs of each 1024-sample half
        halves_t = target.reshape(2, 1024)
        halves_p = pred.reshape(2, 1024)
        D = np.array([naive_dft(a)[:513] - naive_dft(b)[:513] for a, b in zip(halves_t, halves_p)])
        parts = np.concatenate([D.real, D.imag], axis=None)
        want = np.mean(np.where(np.abs(parts) < 1, 0.5 * parts**2, np.abs(parts) - 0.5))
        assert loss > 0
        assert loss == pytest.approx(want, rel=1e-9)
        mag = np.abs(D).max(axis=0)
        assert np.argmax(mag) == 32
        assert mag[32] > 1000 * np.delete(mag, 32).max()

    def test_segments_layout(self, rng):
        x = rng.normal(size=(1, 1, 2048))
        y = rfft_segments(T(x), 1024).values
        assert y.shape == (1, 1, 2, 2, 513)
        X2 = naive_dft(x[0, 0, 1024:])[:513]
        np.testing.assert_allclose(y[0, 0, 1, 0], X2.real, atol=1e-9)
        np.testing.assert_allclose(y[0, 0, 1, 1], X2.imag, atol=1e-9)

    @pytest.mark.parametrize("policy", ["two_halves", "first_half", "decimate"])
    def test_gradient_toy(self, rng, policy):
        cfg = LossConfig(n_fft=4, fft_window_policy=policy)
        p = T(rng.normal(size=(2, 1, 8)), True)
        y = T(rng.normal(size=(2, 1, 8)))
        assert check_op_gradients(lambda: frequency_loss(p, y, cfg), [p]) < 1e-3

    def test_policy_incompatible(self):
        with pytest.raises(ShapeError):
            frequency_loss(T(np.zeros((1, 1, 12))), T(np.zeros((1, 1, 12))), LossConfig(n_fft=8))


class TestTotalLoss:
    def test_signal_only(self, rng):
        p, y = T(rng.normal(size=(2, 1, 2048))), T(rng.normal(size=(2, 1, 2048)))
        total, rep = total_loss(p, y, LossConfig(alpha=1, beta=0))
        assert rep.l_total == rep.l_signal == float(signal_loss(p, y).values)
        assert rep.l_frequency > 0

    def test_report_sum(self, rng):
        p, y = T(rng.normal(size=(1, 1, 2048))), T(rng.normal(size=(1, 1, 2048)))
        cfg = LossConfig(alpha=0.7, beta=0.3)
        total, rep = total_loss(p, y, cfg)
        assert rep.l_total == cfg.alpha * rep.l_signal + cfg.beta * rep.l_frequency
        assert float(total.values) == rep.l_total

    def test_frequency_only_identical(self, rng):
        x = T(rng.normal(size=(1, 1, 2048)))
        _, rep = total_loss(x, x, LossConfig(alpha=0, beta=1))
        assert rep.l_total == 0.0

    @pytest.mark.parametrize(
        "kwargs", [dict(alpha=0, beta=0), dict(alpha=-1), dict(smooth_l1_threshold=0), dict(fft_window_policy="x")]
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            LossConfig(**kwargs)

    def test_gradient_linearity(self, rng):
        cfg_s, cfg_f = LossConfig(1, 0, n_fft=8), LossConfig(0, 1, n_fft=8)
        cfg = LossConfig(0.6, 1.7, n_fft=8)
        yv = rng.normal(size=(2, 1, 16))
        pv = rng.normal(size=(2, 1, 16))

        def grad(c):
            p = T(pv.copy(), True)
            with Tape() as tape:
                loss, _ = total_loss(p, T(yv), c)
            tape.backward(loss)
            return p.grad

        np.testing.assert_allclose(grad(cfg), 0.6 * grad(cfg_s) + 1.7 * grad(cfg_f), atol=1e-12)

    def test_gradient_total(self, rng):
        cfg = LossConfig(1, 1, n_fft=8)
        p = T(rng.normal(size=(2, 1, 16)), True)
        y = T(rng.normal(size=(2, 1, 16)))
        assert check_op_gradients(lambda: total_loss(p, y, cfg)[0], [p]) < 1e-3


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a1=st.floats(0, 3), a2=st.floats(0, 3))
def test_nonnegative_and_monotone(seed, a1, a2):
    rng = np.random.default_rng(seed)
    p, y = T(rng.normal(size=(1, 1, 32))), T(rng.normal(size=(1, 1, 32)))
    lo, hi = sorted([a1, a2])
    _, r_lo = total_loss(p, y, LossConfig(alpha=lo, beta=1, n_fft=16))
    _, r_hi = total_loss(p, y, LossConfig(alpha=hi, beta=1, n_fft=16))
    assert r_lo.l_signal >= 0 and r_lo.l_frequency >= 0
    assert r_hi.l_total >= r_lo.l_total
    x = T(rng.normal(size=(1, 1, 32)))
    assert float(frequency_loss(x, x, LossConfig(n_fft=16)).values) == 0.0
