import numpy as np
import pytest

from cecgnet.tensor import Tape, Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def naive_conv1d(x, w, b, stride=1, dilation=1, padding=0):
    """Direct triple loop; independent of the vectorized path."""
    B, C, L = x.shape
    O, _, K = w.shape
    xp = np.zeros((B, C, L + 2 * padding))
    xp[:, :, padding : padding + L] = x
    n_out = (L + 2 * padding - (K - 1) * dilation - 1) // stride + 1
    y = np.zeros((B, O, n_out))
    for bb in range(B):
        for o in range(O):
            for t in range(n_out):
                acc = b[o] if b is not None else 0.0
                for c in range(C):
                    for k in range(K):
                        acc += w[o, c, k] * xp[bb, c, t * stride + k * dilation]
                y[bb, o, t] = acc
    return y


def naive_dft(x):
    n = x.shape[-1]
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x


def numeric_grad(f, arr, eps=1e-4, index=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``arr`` (mutated in place)."""
    flat = arr.reshape(-1)
    idx = range(flat.size) if index is None else index
    out = np.zeros(len(idx) if index is not None else flat.size)
    for j, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        out[j] = (fp - fm) / (2 * eps)
    return out


def rel_error(analytic, numeric, floor=1e-7):
    analytic = np.ravel(analytic)
    numeric = np.ravel(numeric)
    scale = max(np.abs(analytic).max(initial=0), np.abs(numeric).max(initial=0), floor)
    return float(np.abs(analytic - numeric).max(initial=0) / scale)


def check_op_gradients(build, tensors, eps=1e-4):
    """Compare tape gradients of scalar ``build()`` against finite differences.

    Returns the worst relative error over ``tensors``.
    """
    for t in tensors:
        t.zero_grad()
    with Tape() as tape:
        loss = build()
    tape.backward(loss)
    worst = 0.0

    def value():
        return float(np.sum(build().values))

    for t in tensors:
        num = numeric_grad(value, t.values, eps)
        worst = max(worst, rel_error(t.grad, num))
    return worst


def weighted_sum(y: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(y * weights)`` recorded on the tape (a generic linear probe)."""
    from cecgnet.tensor import _record

    def backward(g):
        return (g * weights,)

    return _record("probe", (y,), np.asarray(float(np.sum(y.values * weights))), backward)


def network_gradient_check(every: int = 1, seed: int = 0, eps: float = 1e-4):
    """Per-parameter-array relative error of the toy network's loss gradient.

    Uses levels=3, base_filters=2, length 64 in train mode (batch statistics)
    with dropout disabled so the objective is a deterministic function of the
    parameters.  ``every`` > 1 checks a strided subset of entries.

    Leaky ReLU is not differentiable at zero.  When a perturbation of +-eps
    flips the sign of any activation input, the central difference straddles
    that kink and is not an estimate of the derivative; for those entries the
    one-sided difference from the side that keeps every sign is used instead.

    Returns ``(errors, kinks)``: worst relative error per array and the number
    of entries that needed the one-sided rule.
    """
    from cecgnet.loss import LossConfig, total_loss
    from cecgnet.network import NetworkConfig, build_network, forward

    cfg = NetworkConfig(levels=3, base_filters=2, input_length=64, dropout_rate=0.0, init_seed=seed)
    net = build_network(cfg)
    rng = np.random.default_rng(seed + 1)
    X = rng.normal(size=(2, 3, 64))
    Y = rng.normal(size=(2, 1, 64))
    lc = LossConfig(alpha=1.0, beta=1.0, n_fft=32)

    def evaluate():
        with Tape() as tape:
            loss, _ = total_loss(forward(net, Tensor(X), training=True), Tensor(Y), lc)
        signs = np.concatenate([(n.inputs[0].values > 0).ravel() for n in tape.nodes if n.op == "leaky_relu"])
        return tape, loss, signs

    net.zero_grad()
    tape, loss, signs0 = evaluate()
    tape.backward(loss)
    f0 = float(loss.values)
    errors, kinks = {}, 0
    for name, t in net.params.items():
        flat = t.values.reshape(-1)
        idx = list(range(0, flat.size, every))
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            _, lp, sp = evaluate()
            flat[i] = orig - eps
            _, lm, sm = evaluate()
            flat[i] = orig
            fp, fm = float(lp.values), float(lm.values)
            up_ok, down_ok = np.array_equal(sp, signs0), np.array_equal(sm, signs0)
            if up_ok and down_ok:
                num[j] = (fp - fm) / (2 * eps)
            else:
                kinks += 1
                if up_ok:
                    num[j] = (fp - f0) / eps
                elif down_ok:
                    num[j] = (f0 - fm) / eps
                else:
                    num[j] = np.nan
        errors[name] = rel_error(t.grad.reshape(-1)[idx], num) if np.all(np.isfinite(num)) else np.inf
    return errors, kinks


def clean_ecg(hr_bpm: float, duration_s: float = 60.0, hr_std: float = 0.0, seed: int = 0, fs: float = 1024.0):
    """Clean synthetic reference lead and its ground-truth R indices."""
    from cecgnet.data import SynthConfig, synth_generate

    rec = synth_generate(
        SynthConfig(fs=fs, duration_s=duration_s, heart_rate_bpm=hr_bpm, heart_rate_std_bpm=hr_std, seed=seed)
    )
    return rec.ref, rec.r_peaks


def match_beats(detected, truth, tol_samples: int) -> tuple[float, float]:
    """Sensitivity and positive predictivity under one-to-one matching within ``tol_samples``."""
    detected = np.asarray(detected)
    truth = np.asarray(truth)
    used = np.zeros(detected.size, dtype=bool)
    tp = 0
    for r in truth:
        if detected.size == 0:
            break
        d = np.abs(detected - r)
        d[used] = np.iinfo(np.int64).max
        j = int(np.argmin(d))
        if d[j] <= tol_samples:
            used[j] = True
            tp += 1
    se = tp / truth.size if truth.size else 1.0
    ppv = tp / detected.size if detected.size else 1.0
    return se, ppv


# acceptance results collected by tests/test_acceptance.py, printed at session end
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
