"""Learned building blocks: bidirectional Vim mixer, skeletal GCN, GCN-enhanced mixer, encoder.

Every mixer maps (batch, length, d) to (batch, length, d). ``mix`` returns the
branch contribution only; ``forward`` adds it to a residual stream.
"""

from typing import Literal

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from .errors import ContractViolation, require
from .ssm import CausalConv1d, SelectiveSSM, flip_sequence

BlockKind = Literal["vim", "gem"]
GcnPosition = Literal["inner", "parallel", "gcn_first", "mamba_first"]


class GraphConv(nn.Module):
    """relu(x + BN(A_hat x W_1 + x W_2)) over the joint axis."""

    def __init__(self, channels: int, adjacency: torch.Tensor):
        super().__init__()
        self.register_buffer("adjacency", adjacency.clone())
        self.w1 = nn.Linear(channels, channels, bias=False)
        self.w2 = nn.Linear(channels, channels, bias=False)
        self.bn = nn.BatchNorm1d(channels)

    @property
    def num_joints(self) -> int:
        return self.adjacency.shape[0]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        require(
            x.shape[-2] == self.num_joints,
            f"graph convolution over {self.num_joints} joints got sequence length {x.shape[-2]}",
        )
        adjacency = self.adjacency.to(x.dtype)
        mixed = self.w1(torch.einsum("ij,...jc->...ic", adjacency, x)) + self.w2(x)
        # Batch norm statistics run over every (batch, joint) position per channel.
        normed = self.bn(mixed.reshape(-1, mixed.shape[-1])).reshape(mixed.shape)
        return F.relu(x + normed)


class VimMixer(nn.Module):
    """Bidirectional selective-scan mixer (the Vim inner block)."""

    def __init__(
        self,
        dim: int,
        expanded_dim: int | None = None,
        state_dim: int = 16,
        conv_kernel: int = 4,
        bidirectional: bool = True,
        proj_bias: bool = False,
        dropout: float = 0.0,
    ):
        super().__init__()
        e = expanded_dim or dim
        self.bidirectional = bidirectional
        self.in_proj_x = nn.Linear(dim, e, bias=proj_bias)
        self.in_proj_z = nn.Linear(dim, e, bias=proj_bias)
        self.conv_f = CausalConv1d(e, conv_kernel)
        self.ssm_f = SelectiveSSM(e, state_dim)
        if bidirectional:
            self.conv_b = CausalConv1d(e, conv_kernel)
            self.ssm_b = SelectiveSSM(e, state_dim)
        self.out_proj = nn.Linear(e, dim, bias=False)
        self.drop = nn.Dropout(dropout)

    def _pre_conv_f(self, x_hat: torch.Tensor) -> torch.Tensor:
        return x_hat

    def _pre_conv_b(self, x_hat_flipped: torch.Tensor) -> torch.Tensor:
        return x_hat_flipped

    def branches(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor | None]:
        """Gated forward and backward outputs (y_f, y_b), both in input order."""
        x_hat, gate = self.in_proj_x(x), F.silu(self.in_proj_z(x))
        x_f = self.ssm_f(F.silu(self.conv_f(self._pre_conv_f(x_hat))))
        y_f = x_f * gate
        if not self.bidirectional:
            return y_f, None
        x_b = self.ssm_b(F.silu(self.conv_b(self._pre_conv_b(flip_sequence(x_hat)))))
        y_b = flip_sequence(x_b) * gate
        return y_f, y_b

    def mix(self, x: torch.Tensor) -> torch.Tensor:
        y_f, y_b = self.branches(x)
        y = y_f if y_b is None else y_f + y_b
        return self.drop(self.out_proj(y))

    def forward(self, x: torch.Tensor, residual: torch.Tensor | None = None) -> torch.Tensor:
        return (x if residual is None else residual) + self.mix(x)


class GemMixer(VimMixer):
    """Vim mixer with LN + skeletal GCN in front of each branch's causal conv.

    The backward branch sees the joint sequence reversed, so its GCN uses the
    reversed adjacency.
    """

    def __init__(
        self,
        dim: int,
        adjacency_f: torch.Tensor,
        adjacency_b: torch.Tensor,
        expanded_dim: int | None = None,
        **kwargs,
    ):
        super().__init__(dim, expanded_dim, **kwargs)
        e = expanded_dim or dim
        self.norm_f = nn.LayerNorm(e)
        self.gcn_f = GraphConv(e, adjacency_f)
        if self.bidirectional:
            self.norm_b = nn.LayerNorm(e)
            self.gcn_b = GraphConv(e, adjacency_b)

    def _pre_conv_f(self, x_hat: torch.Tensor) -> torch.Tensor:
        return self.gcn_f(self.norm_f(x_hat))

    def _pre_conv_b(self, x_hat_flipped: torch.Tensor) -> torch.Tensor:
        return self.gcn_b(self.norm_b(x_hat_flipped))


class GraphVimComposite(nn.Module):
    """GCN placed outside the Vim mixer: in parallel, before, or after it."""

    def __init__(self, vim: VimMixer, gcn: GraphConv, position: GcnPosition):
        super().__init__()
        require(position != "inner", "inner GCN placement is GemMixer")
        self.vim = vim
        self.gcn = gcn
        self.position = position

    def mix(self, x: torch.Tensor) -> torch.Tensor:
        if self.position == "parallel":
            # The GCN carries its own skip; the encoder residual already supplies x.
            return self.vim.mix(x) + self.gcn(x) - x
        if self.position == "gcn_first":
            return self.vim.mix(self.gcn(x))
        return self.gcn(self.vim.mix(x))

    def forward(self, x: torch.Tensor, residual: torch.Tensor | None = None) -> torch.Tensor:
        return (x if residual is None else residual) + self.mix(x)


class Mlp(nn.Module):
    """affine -> GELU -> dropout -> affine."""

    def __init__(self, dim: int, ratio: float = 4.0, dropout: float = 0.0):
        super().__init__()
        hidden = int(dim * ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.drop = nn.Dropout(dropout)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.drop(self.act(self.fc1(x))))


class EncoderBlock(nn.Module):
    """Pre-norm residual wrapper: x' = x + Mixer(LN(x)); y = x' + MLP(LN(x'))."""

    def __init__(self, dim: int, mixer: nn.Module, mlp_ratio: float = 4.0, dropout: float = 0.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.mixer = mixer
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio, dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.mixer.mix(self.norm1(x))
        return x + self.mlp(self.norm2(x))


def build_encoder(
    kind: BlockKind,
    dim: int,
    *,
    expanded_dim: int | None = None,
    state_dim: int = 16,
    conv_kernel: int = 4,
    mlp_ratio: float = 4.0,
    dropout: float = 0.0,
    bidirectional: bool = True,
    proj_bias: bool = False,
    adjacency_f: torch.Tensor | None = None,
    adjacency_b: torch.Tensor | None = None,
    gcn_position: GcnPosition = "inner",
) -> EncoderBlock:
    """Build a VIM or GEM encoder block.

    GEM blocks need the forward and backward adjacency; with ``gcn_position``
    other than ``inner`` the GCN runs on the d-dim stream around a Vim mixer.
    """
    mixer_kwargs = dict(
        state_dim=state_dim,
        conv_kernel=conv_kernel,
        bidirectional=bidirectional,
        proj_bias=proj_bias,
        dropout=dropout,
    )
    if kind == "vim":
        mixer: nn.Module = VimMixer(dim, expanded_dim, **mixer_kwargs)
    elif kind == "gem":
        require(adjacency_f is not None, "GEM blocks need a joint adjacency")
        if gcn_position == "inner":
            mixer = GemMixer(
                dim,
                adjacency_f,
                adjacency_b if adjacency_b is not None else adjacency_f,
                expanded_dim,
                **mixer_kwargs,
            )
        else:
            mixer = GraphVimComposite(
                VimMixer(dim, expanded_dim, **mixer_kwargs),
                GraphConv(dim, adjacency_f),
                gcn_position,
            )
    else:
        raise ContractViolation(f"Unknown block kind {kind!r}")
    return EncoderBlock(dim, mixer, mlp_ratio, dropout)


def over_joints(block: nn.Module, x: torch.Tensor) -> torch.Tensor:
    """Apply a sequence block along the joint axis of (b, f, j, d) features."""
    b = x.shape[0]
    y = block(rearrange(x, "b f j d -> (b f) j d"))
    return rearrange(y, "(b f) j d -> b f j d", b=b)


def over_frames(block: nn.Module, x: torch.Tensor) -> torch.Tensor:
    """Apply a sequence block along the frame axis of (b, f, j, d) features."""
    b = x.shape[0]
    y = block(rearrange(x, "b f j d -> (b j) f d"))
    return rearrange(y, "(b j) f d -> b f j d", b=b)
