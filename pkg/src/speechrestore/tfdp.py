"""Multi-resolution time-frequency dual-path (TFDP) bottleneck.

Each block holds up to three TFDP branches (Time Mamba followed by Frequency
GLP). In the default ``parallel`` mode every branch sees its own resampled
copy of the block input; outputs are fused bottom-up by concatenation and a
pointwise convolution, and the block adds a residual connection.

Modes (all reachable from config alone):

====================  ==========================================================
``parallel``          frequency resolutions F', F'/2, F'/4 processed independently
``sequential``        same resolutions, each branch fed by the one above it
``single_resolution`` one branch at F' (pair with a wider ``channels``)
``time_downsample``   stride (2, 1) instead of (1, 2): T, T/2, T/4 at F'
``time_freq_downsample`` stride (2, 2)
``no_downsample``     three full-resolution branches
====================  ==========================================================
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import torch
from torch import nn

from .glp import FrequencyGLP, GlpConfig
from .mamba import TimeMamba

MODES = (
    "parallel", "sequential", "single_resolution",
    "time_downsample", "time_freq_downsample", "no_downsample",
)

_GEOMETRY = {
    # kernel, stride over (T, F)
    "freq": ((3, 4), (1, 2)),
    "time": ((4, 3), (2, 1)),
    "time_freq": ((4, 4), (2, 2)),
}


def fit_to(x: torch.Tensor, t: int, f: int) -> torch.Tensor:
    """Center-crop or zero-pad the last two axes of ``x`` to ``(t, f)``."""
    for axis, target in ((-2, t), (-1, f)):
        n = x.shape[axis]
        if n > target:
            start = (n - target) // 2
            x = x.narrow(axis, start, target)
        elif n < target:
            pad = [0, 0, 0, 0]
            lo = (target - n) // 2
            idx = 0 if axis == -1 else 2
            pad[idx], pad[idx + 1] = lo, target - n - lo
            x = nn.functional.pad(x, pad)
    return x


class Downsample(nn.Module):
    """Strided conv + instance norm + PReLU; halves the strided axes, keeps C."""

    def __init__(self, channels: int, axis: str = "freq"):
        super().__init__()
        kernel, stride = _GEOMETRY[axis]
        self.axis = axis
        self.stride = stride
        self.conv = nn.Conv2d(channels, channels, kernel, stride, padding=(1, 1))
        self.norm = nn.InstanceNorm2d(channels, affine=True)
        self.act = nn.PReLU(channels)

    def forward(self, x):
        for size, s in zip(x.shape[-2:], self.stride):
            if s > 1 and size < 4:
                raise ValueError(f"axis of size {size} too small to downsample (need >= 4)")
        return self.act(self.norm(self.conv(x)))


class Upsample(nn.Module):
    """Transposed conv + instance norm + PReLU, then crop/pad to the partner size."""

    def __init__(self, channels: int, axis: str = "freq"):
        super().__init__()
        kernel, stride = _GEOMETRY[axis]
        self.conv = nn.ConvTranspose2d(channels, channels, kernel, stride, padding=(1, 1))
        self.norm = nn.InstanceNorm2d(channels, affine=True)
        self.act = nn.PReLU(channels)

    def forward(self, x, size=None):
        y = self.conv(x)
        if size is not None:
            y = fit_to(y, *size)
        return self.act(self.norm(y))


class TFDPBranch(nn.Module):
    def __init__(self, channels: int, f_eff: int, glp_variant: str = "glp",
                 dp_mode: str = "literal", d_state: int = 16):
        super().__init__()
        self.time = TimeMamba(channels, d_state=d_state)
        self.freq = FrequencyGLP(GlpConfig(channels, f_eff, variant=glp_variant, dp_mode=dp_mode))

    def forward(self, x):
        return self.freq(self.time(x))


@dataclass
class BottleneckConfig:
    channels: int = 48
    n_blocks: int = 4
    f_prime: int = 100
    mode: str = "parallel"
    glp_variant: str = "glp"
    dp_mode: str = "literal"
    d_state: int = 16

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown bottleneck mode {self.mode!r}; expected one of {MODES}")

    @property
    def resample_axis(self) -> Optional[str]:
        return {"parallel": "freq", "sequential": "freq", "time_downsample": "time",
                "time_freq_downsample": "time_freq"}.get(self.mode)

    def branch_widths(self) -> List[int]:
        if self.mode == "single_resolution":
            return [self.f_prime]
        if self.resample_axis in ("freq", "time_freq"):
            widths = [self.f_prime]
            for _ in range(2):
                widths.append((widths[-1] + 2 - 4) // 2 + 1)
            return widths
        return [self.f_prime] * 3


class MRBlock(nn.Module):
    def __init__(self, cfg: BottleneckConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.branches = nn.ModuleList(
            TFDPBranch(c, w, cfg.glp_variant, cfg.dp_mode, cfg.d_state) for w in cfg.branch_widths()
        )
        axis = cfg.resample_axis
        if len(self.branches) == 3:
            if axis is None:
                self.down = nn.ModuleList([nn.Identity(), nn.Identity()])
                self.up = nn.ModuleList([nn.Identity(), nn.Identity()])
            else:
                self.down = nn.ModuleList([Downsample(c, axis), Downsample(c, axis)])
                self.up = nn.ModuleList([Upsample(c, axis), Upsample(c, axis)])
            # fuse[0]: bottom into middle, fuse[1]: middle into top
            self.fuse = nn.ModuleList([nn.Conv2d(2 * c, c, 1), nn.Conv2d(2 * c, c, 1)])

    def _up(self, i, x, like):
        if isinstance(self.up[i], Upsample):
            return self.up[i](x, like.shape[-2:])
        return x

    def branch_outputs(self, x) -> List[torch.Tensor]:
        """Pre-fusion outputs of every branch, top resolution first."""
        if len(self.branches) == 1:
            return [self.branches[0](x)]
        if self.cfg.mode == "sequential":
            top = self.branches[0](x)
            mid = self.branches[1](self.down[0](top))
            bot = self.branches[2](self.down[1](mid))
            return [top, mid, bot]
        x_mid = self.down[0](x)
        x_bot = self.down[1](x_mid)
        return [self.branches[0](x), self.branches[1](x_mid), self.branches[2](x_bot)]

    def fuse_outputs(self, outs: List[torch.Tensor]) -> torch.Tensor:
        if len(outs) == 1:
            return outs[0]
        top, mid, bot = outs
        mid = self.fuse[0](torch.cat([mid, self._up(1, bot, mid)], dim=1))
        return self.fuse[1](torch.cat([top, self._up(0, mid, top)], dim=1))

    def forward(self, x):
        return x + self.fuse_outputs(self.branch_outputs(x))


class Bottleneck(nn.Module):
    def __init__(self, cfg: BottleneckConfig = BottleneckConfig()):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(MRBlock(cfg) for _ in range(cfg.n_blocks))

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x
