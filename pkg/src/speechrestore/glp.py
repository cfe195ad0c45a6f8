"""Frequency GLP block: global-periodic (GP) and local (L) frequency modules.

Feature maps are ``(B, C, T, F)``. The GP module mixes the whole frequency
axis of every ``(b, c, t)`` fiber with FAN layers; the L module convolves
along frequency with a 5-bin receptive field. A pointwise convolution fuses
both, and a channel FFN with the GP architecture (applied over ``C``) follows.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from .fan import FANLayer

VARIANTS = ("glp", "no_gp", "serial", "fan_to_linear")


class ChannelNorm(nn.Module):
    """LayerNorm over the channel axis of a ``(B, C, T, F)`` map."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.norm = nn.LayerNorm(channels, eps=eps)

    def forward(self, x):
        return self.norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class GatedLinear(nn.Module):
    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.value = nn.Linear(d_in, d_out)
        self.gate = nn.Linear(d_in, d_out)

    def forward(self, h):
        return self.value(h) * torch.sigmoid(self.gate(h))


class GPModule(nn.Module):
    """FAN(d -> 2d), FAN(2d -> 2d), gated linear (2d -> d) over the last axis.

    ``d_p`` fixes the periodic width of both FAN layers; ``d_p=None`` uses a
    quarter of each layer's output width instead. ``use_fan=False`` swaps the
    FAN layers for biased linear layers of the same shape.
    """

    def __init__(self, dim: int, d_p: Optional[int] = None, use_fan: bool = True):
        super().__init__()
        self.dim = dim
        width = 2 * dim
        if use_fan:
            self.layer1 = FANLayer(dim, width, d_p if d_p is not None else width // 4)
            self.layer2 = FANLayer(width, width, d_p if d_p is not None else width // 4)
        else:
            self.layer1 = nn.Linear(dim, width)
            self.layer2 = nn.Linear(width, width)
        self.out = GatedLinear(width, dim)

    def forward(self, x):
        if x.shape[-1] != self.dim:
            raise ValueError(f"GP module built for width {self.dim}, got {x.shape[-1]}")
        return self.out(self.layer2(self.layer1(x)))


class LModule(nn.Module):
    """Two kernel-3 convolutions along frequency with GELU between."""

    def __init__(self, channels: int, kernel_size: int = 3):
        super().__init__()
        pad = kernel_size // 2
        self.conv1 = nn.Conv1d(channels, channels, kernel_size, padding=pad)
        self.conv2 = nn.Conv1d(channels, channels, kernel_size, padding=pad)

    def forward(self, x):
        b, c, t, f = x.shape
        y = x.permute(0, 2, 1, 3).reshape(b * t, c, f)
        y = self.conv2(F.gelu(self.conv1(y)))
        return y.reshape(b, t, c, f).permute(0, 2, 1, 3)


class ChannelFFN(nn.Module):
    """GP architecture applied across channels at every (b, t, f)."""

    def __init__(self, channels: int, d_p: Optional[int] = None, use_fan: bool = True):
        super().__init__()
        self.gp = GPModule(channels, d_p, use_fan)

    def forward(self, x):
        return self.gp(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


@dataclass
class GlpConfig:
    channels: int = 48
    f_eff: int = 100
    d_p: Optional[int] = None  # None -> channels // 4
    variant: str = "glp"
    dp_mode: str = "literal"  # "literal": d_p = C/4 everywhere; "quarter": d_p = out_width/4

    def resolved_dp(self) -> Optional[int]:
        if self.dp_mode == "quarter":
            return None
        if self.dp_mode != "literal":
            raise ValueError(f"unknown dp_mode {self.dp_mode!r}")
        return self.d_p if self.d_p is not None else self.channels // 4


class FrequencyGLP(nn.Module):
    def __init__(self, cfg: GlpConfig):
        super().__init__()
        if cfg.variant not in VARIANTS:
            raise ValueError(f"unknown GLP variant {cfg.variant!r}; expected one of {VARIANTS}")
        self.cfg = cfg
        c, d_p = cfg.channels, cfg.resolved_dp()
        use_fan = cfg.variant != "fan_to_linear"
        self.norm1 = ChannelNorm(c)
        self.local = LModule(c)
        if cfg.variant == "no_gp":
            self.glob = LModule(c)
        else:
            self.glob = GPModule(cfg.f_eff, d_p, use_fan)
        fuse_in = c if cfg.variant == "serial" else 2 * c
        self.fuse = nn.Conv2d(fuse_in, c, kernel_size=1)
        self.norm2 = ChannelNorm(c)
        self.ffn = ChannelFFN(c, d_p, use_fan)

    def branches(self, x):
        """Pre-fusion ``(global, local)`` outputs for an already-normalized input."""
        if self.cfg.variant == "serial":
            return self.glob(self.local(x)), None
        return self.glob(x), self.local(x)

    def forward(self, x):
        g, l = self.branches(self.norm1(x))
        y = self.fuse(g if l is None else torch.cat([g, l], dim=1))
        y = x + y
        return y + self.ffn(self.norm2(y))
