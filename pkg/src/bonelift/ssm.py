"""Selective state space kernel: ZOH discretisation, sequential scan, causal conv, flip.

Shapes follow the (..., length, channels) convention; ``N`` is the state size.
The scan is an ordered recurrence over the length axis, vectorised over every
other axis.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import require

# Below this |delta * A| the exact ZOH input matrix is replaced by its limit delta * B.
ZOH_SMALL = 1e-8


def discretize(
    A: torch.Tensor, B: torch.Tensor, delta: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Zero-order-hold discretisation of a diagonal continuous system.

    Args:
        A: Diagonal dynamics, shape (e, N).
        B: Input matrix per position, shape (..., l, N).
        delta: Positive step sizes, shape (..., l, e).

    Returns:
        (A_bar, B_bar), each of shape (..., l, e, N), with
        A_bar = exp(delta A) and B_bar = (delta A)^-1 (exp(delta A) - 1) delta B.
    """
    require(bool((delta > 0).all()), "step size delta must be strictly positive")
    dA = delta.unsqueeze(-1) * A
    small = dA.abs() < ZOH_SMALL
    safe = torch.where(small, torch.ones_like(dA), dA)
    ratio = torch.where(small, torch.ones_like(dA), torch.expm1(dA) / safe)
    A_bar = torch.exp(dA)
    B_bar = ratio * delta.unsqueeze(-1) * B.unsqueeze(-2)
    return A_bar, B_bar


def scan_discretized(
    x: torch.Tensor,
    A_bar: torch.Tensor,
    B_bar: torch.Tensor,
    C: torch.Tensor,
    h0: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Run h_k = A_bar_k h_{k-1} + B_bar_k x_k, y_k = C_k h_k.

    Returns:
        Outputs of shape (..., l, e) and the final state of shape (..., e, N).
    """
    length = x.shape[-2]
    h = h0 if h0 is not None else x.new_zeros(*A_bar.shape[:-3], *A_bar.shape[-2:])
    outputs = []
    for k in range(length):
        h = A_bar[..., k, :, :] * h + B_bar[..., k, :, :] * x[..., k, :, None]
        outputs.append((h * C[..., k, None, :]).sum(dim=-1))
    return torch.stack(outputs, dim=-2), h


def selective_scan(
    x: torch.Tensor,
    delta: torch.Tensor,
    A: torch.Tensor,
    B: torch.Tensor,
    C: torch.Tensor,
    return_state: bool = False,
) -> torch.Tensor | tuple[torch.Tensor, torch.Tensor]:
    """Selective scan from a zero initial state.

    Args:
        x: Input, shape (..., l, e).
        delta: Step sizes, shape (..., l, e).
        A: Diagonal dynamics, shape (e, N).
        B: Per-position input matrix, shape (..., l, N).
        C: Per-position output matrix, shape (..., l, N).
        return_state: Also return the final scan state.
    """
    require(not bool(torch.isnan(x).any()), "selective_scan input contains NaN")
    require(
        x.shape == delta.shape,
        f"x {tuple(x.shape)} and delta {tuple(delta.shape)} must match",
    )
    require(
        B.shape[-2] == x.shape[-2] and C.shape == B.shape,
        "B and C must have shape (..., l, N) matching x",
    )
    A_bar, B_bar = discretize(A, B, delta)
    y, h = scan_discretized(x, A_bar, B_bar, C)
    return (y, h) if return_state else y


def causal_conv1d(x: torch.Tensor, kernel: torch.Tensor, bias: torch.Tensor | None) -> torch.Tensor:
    """Depthwise causal convolution along the length axis.

    output[t] = sum_i kernel[:, i] * x[t - k + 1 + i] + bias, zero left padding.

    Args:
        x: Input, shape (..., l, e).
        kernel: Per-channel taps, shape (e, k).
        bias: Shape (e,) or None.
    """
    e, k = kernel.shape
    require(x.shape[-1] == e, f"input has {x.shape[-1]} channels, kernel has {e}")
    lead, length = x.shape[:-2], x.shape[-2]
    flat = x.reshape(-1, length, e).transpose(1, 2)
    flat = F.pad(flat, (k - 1, 0))
    out = F.conv1d(flat, kernel.unsqueeze(1), bias, groups=e)
    return out.transpose(1, 2).reshape(*lead, length, e)


def flip_sequence(x: torch.Tensor, dim: int = -2) -> torch.Tensor:
    """Reverse the sequence axis only."""
    return torch.flip(x, dims=(dim,))


class CausalConv1d(nn.Module):
    """Depthwise causal convolution with learnable taps and bias."""

    def __init__(self, channels: int, kernel_size: int = 4):
        super().__init__()
        require(kernel_size >= 1, f"kernel size must be >= 1, got {kernel_size}")
        self.kernel_size = kernel_size
        self.conv = nn.Conv1d(channels, channels, kernel_size, groups=channels, padding=0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return causal_conv1d(x, self.conv.weight.squeeze(1), self.conv.bias)


class SelectiveSSM(nn.Module):
    """Input-dependent (delta, B, C) with diagonal A = -exp(A_log)."""

    def __init__(
        self,
        channels: int,
        state_dim: int = 16,
        dt_rank: int | None = None,
        dt_min: float = 1e-3,
        dt_max: float = 1e-1,
    ):
        super().__init__()
        self.channels = channels
        self.state_dim = state_dim
        self.dt_rank = dt_rank or math.ceil(channels / 16)

        self.x_proj = nn.Linear(channels, self.dt_rank + 2 * state_dim, bias=False)
        self.dt_proj = nn.Linear(self.dt_rank, channels, bias=True)

        A = torch.arange(1, state_dim + 1, dtype=torch.get_default_dtype()).repeat(channels, 1)
        self.A_log = nn.Parameter(torch.log(A))

        # Bias so that softplus(bias) is log-uniform in [dt_min, dt_max].
        dt = torch.exp(
            torch.rand(channels) * (math.log(dt_max) - math.log(dt_min)) + math.log(dt_min)
        )
        with torch.no_grad():
            self.dt_proj.bias.copy_(dt + torch.log(-torch.expm1(-dt)))

    def parameters_for(self, x: torch.Tensor) -> tuple[torch.Tensor, ...]:
        """Per-position (delta, A, B, C) for input ``x`` of shape (..., l, e)."""
        dt, B, C = torch.split(
            self.x_proj(x), [self.dt_rank, self.state_dim, self.state_dim], dim=-1
        )
        delta = F.softplus(self.dt_proj(dt))
        A = -torch.exp(self.A_log)
        return delta, A, B, C

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        delta, A, B, C = self.parameters_for(x)
        return selective_scan(x, delta, A, B, C)
