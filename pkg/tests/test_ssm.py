"""Tests for the selective state space kernel."""

import math

import numpy as np
import pytest
import torch
from torch.func import functional_call

from bonelift.errors import ContractViolation
from bonelift.ssm import (
    CausalConv1d,
    SelectiveSSM,
    causal_conv1d,
    discretize,
    flip_sequence,
    scan_discretized,
    selective_scan,
)


def _unrolled_scan(x, delta, A, B, C):
    """O(l^2) oracle: y_k = sum_{i<=k} C_k (prod_{m=i+1..k} A_bar_m) B_bar_i x_i."""
    length, e = x.shape
    dA = delta[:, :, None] * A[None]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(np.abs(dA) < 1e-8, 1.0, np.expm1(dA) / dA)
    A_bar = np.exp(dA)
    B_bar = ratio * delta[:, :, None] * B[:, None, :]
    y = np.zeros((length, e))
    for k in range(length):
        for i in range(k + 1):
            decay = np.prod(A_bar[i + 1 : k + 1], axis=0) if i < k else np.ones_like(A_bar[0])
            y[k] += (C[k][None, :] * decay * B_bar[i] * x[i][:, None]).sum(axis=-1)
    return y


def _random_instance(rng, length, e, n):
    return (
        rng.standard_normal((length, e)),
        np.exp(rng.uniform(-3, 0, (length, e))),
        -np.exp(rng.uniform(-1, 1, (e, n))),
        rng.standard_normal((length, n)),
        rng.standard_normal((length, n)),
    )


def test_discretize_zoh_example():
    """Test A = -1, delta = ln 2, B = 1."""
    A = torch.tensor([[-1.0]], dtype=torch.float64)
    B = torch.tensor([[1.0]], dtype=torch.float64)
    delta = torch.tensor([[math.log(2)]], dtype=torch.float64)
    A_bar, B_bar = discretize(A, B, delta)
    assert float(A_bar) == pytest.approx(0.5, abs=1e-15)
    # (exp(dA) - 1) / dA is the hold factor; times delta B it gives B_bar.
    assert float(B_bar) / math.log(2) == pytest.approx(0.72135, abs=1e-5)
    assert float(B_bar) == pytest.approx(0.5, abs=1e-15)


def test_discretize_zero_dynamics():
    """Test A = 0 gives A_bar = 1 and B_bar = delta B."""
    A = torch.zeros(2, 3, dtype=torch.float64)
    B = torch.randn(4, 3, dtype=torch.float64)
    delta = torch.rand(4, 2, dtype=torch.float64) + 0.1
    A_bar, B_bar = discretize(A, B, delta)
    assert torch.all(A_bar == 1)
    torch.testing.assert_close(B_bar, delta[..., None] * B[:, None, :])


def test_discretize_small_step():
    """Test delta -> 0 drives A_bar to 1 and B_bar to 0."""
    A = -torch.ones(1, 1, dtype=torch.float64)
    B = torch.ones(1, 1, dtype=torch.float64)
    A_bar, B_bar = discretize(A, B, torch.full((1, 1), 1e-12, dtype=torch.float64))
    assert float(A_bar) == pytest.approx(1.0, abs=1e-11)
    assert float(B_bar) == pytest.approx(0.0, abs=1e-11)


@pytest.mark.parametrize("bad", [0.0, -0.5])
def test_discretize_rejects_non_positive_step(bad):
    """Test delta must be strictly positive."""
    with pytest.raises(ContractViolation, match="delta"):
        discretize(-torch.ones(1, 1), torch.ones(1, 1), torch.full((1, 1), bad))


def test_scan_matches_unrolled_oracle():
    """Test 200 random instances against the unrolled sum."""
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        length, e, n = int(rng.integers(1, 33)), int(rng.integers(1, 9)), int(rng.integers(1, 9))
        x, delta, A, B, C = _random_instance(rng, length, e, n)
        expected = _unrolled_scan(x, delta, A, B, C)
        y = selective_scan(*(torch.from_numpy(a) for a in (x, delta, A, B, C))).numpy()
        worst = max(worst, float(np.abs(y - expected).max() / max(np.abs(expected).max(), 1e-12)))
    assert worst < 1e-6


def test_scan_single_step():
    """Test l = 1 gives C B_bar x from the zero state."""
    rng = np.random.default_rng(1)
    x, delta, A, B, C = (torch.from_numpy(a) for a in _random_instance(rng, 1, 3, 4))
    _, B_bar = discretize(A, B, delta)
    expected = (C[0] * B_bar[0] * x[0][:, None]).sum(dim=-1)
    torch.testing.assert_close(selective_scan(x, delta, A, B, C)[0], expected)


def test_scan_without_memory():
    """Test A_bar = 0 makes every output depend on its own position only."""
    rng = np.random.default_rng(2)
    x, delta, A, B, C = (torch.from_numpy(a) for a in _random_instance(rng, 6, 2, 3))
    _, B_bar = discretize(A, B, delta)
    y, _ = scan_discretized(x, torch.zeros_like(B_bar), B_bar, C)
    expected = (C[:, None, :] * B_bar * x[..., None]).sum(dim=-1)
    torch.testing.assert_close(y, expected)


def test_scan_batched_matches_per_sequence():
    """Test leading batch axes are independent sequences."""
    rng = np.random.default_rng(3)
    e, n, length = 3, 4, 5
    x = torch.from_numpy(rng.standard_normal((2, length, e)))
    delta = torch.from_numpy(np.exp(rng.uniform(-2, 0, (2, length, e))))
    A = torch.from_numpy(-np.exp(rng.uniform(-1, 1, (e, n))))
    B = torch.from_numpy(rng.standard_normal((2, length, n)))
    C = torch.from_numpy(rng.standard_normal((2, length, n)))
    batched = selective_scan(x, delta, A, B, C)
    for i in range(2):
        torch.testing.assert_close(batched[i], selective_scan(x[i], delta[i], A, B[i], C[i]))


def test_scan_returns_final_state():
    """Test the returned state continues the recurrence."""
    rng = np.random.default_rng(4)
    x, delta, A, B, C = (torch.from_numpy(a) for a in _random_instance(rng, 8, 2, 3))
    y_full = selective_scan(x, delta, A, B, C)
    _, h = selective_scan(x[:5], delta[:5], A, B[:5], C[:5], return_state=True)
    A_bar, B_bar = discretize(A, B[5:], delta[5:])
    y_tail, _ = scan_discretized(x[5:], A_bar, B_bar, C[5:], h0=h)
    torch.testing.assert_close(y_tail, y_full[5:])


def test_scan_rejects_nan():
    """Test NaN input is a contract violation."""
    x = torch.zeros(3, 2)
    x[1, 0] = float("nan")
    with pytest.raises(ContractViolation, match="NaN"):
        selective_scan(x, torch.ones(3, 2), -torch.ones(2, 2), torch.ones(3, 2), torch.ones(3, 2))


def test_scan_rejects_mismatched_shapes():
    """Test x and delta must agree."""
    with pytest.raises(ContractViolation):
        selective_scan(torch.zeros(3, 2), torch.ones(3, 3), -torch.ones(2, 2), torch.ones(3, 2), torch.ones(3, 2))


def test_scan_is_causal():
    """Test perturbing position t leaves earlier outputs bit-identical."""
    rng = np.random.default_rng(5)
    for _ in range(20):
        length = int(rng.integers(2, 20))
        x, delta, A, B, C = (torch.from_numpy(a) for a in _random_instance(rng, length, 3, 4))
        t = int(rng.integers(1, length))
        y = selective_scan(x, delta, A, B, C)
        x2, delta2, B2, C2 = x.clone(), delta.clone(), B.clone(), C.clone()
        x2[t:] += 1.0
        delta2[t:] *= 2.0
        B2[t:] -= 0.5
        C2[t:] += 0.5
        y2 = selective_scan(x2, delta2, A, B2, C2)
        assert torch.equal(y[:t], y2[:t])


def test_scan_state_stays_bounded():
    """Test constant decaying dynamics keep the state inside max|B_bar x| / (1 - max A_bar)."""
    rng = np.random.default_rng(6)
    length, e, n = 200, 2, 3
    A = torch.from_numpy(-np.exp(rng.uniform(-1, 1, (e, n))))
    delta = torch.full((length, e), 0.3, dtype=torch.float64)
    B = torch.from_numpy(np.tile(rng.standard_normal(n), (length, 1)))
    x = torch.from_numpy(rng.uniform(-1, 1, (length, e)))
    A_bar, B_bar = discretize(A, B, delta)
    bound = (B_bar * x[..., None]).abs().max() / (1 - A_bar.max())
    h = torch.zeros(e, n, dtype=torch.float64)
    for k in range(length):
        _, h = scan_discretized(x[k : k + 1], A_bar[k : k + 1], B_bar[k : k + 1], B[k : k + 1], h0=h)
        assert float(h.abs().max()) <= float(bound) + 1e-12


def test_causal_conv_identity_kernel():
    """Test a kernel with only the last tap is the identity."""
    x = torch.randn(2, 7, 3, dtype=torch.float64)
    kernel = torch.zeros(3, 4, dtype=torch.float64)
    kernel[:, -1] = 1.0
    torch.testing.assert_close(causal_conv1d(x, kernel, None), x)


def test_causal_conv_hand_example():
    """Test kernel (1, 1) on [1, 2, 3] gives [1, 3, 5]."""
    x = torch.tensor([[1.0], [2.0], [3.0]])
    out = causal_conv1d(x, torch.ones(1, 2), torch.zeros(1))
    assert out[:, 0].tolist() == [1.0, 3.0, 5.0]


def test_causal_conv_bias_and_length():
    """Test the bias is added and the length is preserved."""
    x = torch.zeros(5, 2)
    out = causal_conv1d(x, torch.randn(2, 3), torch.tensor([0.5, -1.0]))
    assert out.shape == (5, 2)
    assert torch.all(out[:, 0] == 0.5) and torch.all(out[:, 1] == -1.0)


def test_causal_conv_is_causal():
    """Test perturbing position t leaves earlier outputs bit-identical."""
    conv = CausalConv1d(4, kernel_size=4)
    x = torch.randn(3, 10, 4)
    y = conv(x)
    for t in range(1, 10):
        x2 = x.clone()
        x2[:, t:] += torch.randn_like(x2[:, t:])
        assert torch.equal(conv(x2)[:, :t], y[:, :t])


def test_causal_conv_channel_mismatch():
    """Test the kernel must match the channel count."""
    with pytest.raises(ContractViolation):
        causal_conv1d(torch.zeros(4, 3), torch.ones(2, 2), None)


def test_flip_sequence():
    """Test flipping reverses the sequence axis only."""
    x = torch.tensor([[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]])
    assert flip_sequence(x)[:, 0].tolist() == [3.0, 2.0, 1.0]
    assert flip_sequence(x)[:, 1].tolist() == [30.0, 20.0, 10.0]
    assert torch.equal(flip_sequence(flip_sequence(x)), x)
    palindrome = torch.tensor([[1.0], [5.0], [1.0]])
    assert torch.equal(flip_sequence(palindrome), palindrome)


def test_selective_ssm_parameters():
    """Test A is strictly negative and delta positive."""
    ssm = SelectiveSSM(8, state_dim=4)
    delta, A, B, C = ssm.parameters_for(torch.randn(2, 5, 8))
    assert torch.all(A < 0)
    assert torch.all(delta > 0)
    assert B.shape == C.shape == (2, 5, 4)
    assert ssm(torch.randn(2, 5, 8)).shape == (2, 5, 8)


def test_selective_ssm_gradients(float64):
    """Test analytic gradients against central differences w.r.t. x, A_log and projections."""
    torch.manual_seed(0)
    ssm = SelectiveSSM(3, state_dim=2)
    x = torch.randn(1, 4, 3, requires_grad=True)
    A_log = ssm.A_log.detach().clone().requires_grad_(True)
    w_x = ssm.x_proj.weight.detach().clone().requires_grad_(True)
    w_dt = ssm.dt_proj.weight.detach().clone().requires_grad_(True)

    def run(x, A_log, w_x, w_dt):
        params = {"A_log": A_log, "x_proj.weight": w_x, "dt_proj.weight": w_dt}
        return functional_call(ssm, params, (x,))

    assert torch.autograd.gradcheck(run, (x, A_log, w_x, w_dt), eps=1e-5, atol=1e-8, rtol=1e-4)
