"""Fourier analysis network (FAN) layer.

``phi(x) = [cos(x W_p) || sin(x W_p) || gelu(B_pbar + x W_pbar)]``

The cosine and sine halves share ``W_p`` and carry no bias, so a FAN layer
with output width ``2 d_p + d_pbar`` costs ``d_x (d_p + d_pbar) + d_pbar``
parameters instead of the ``d_x (2 d_p + d_pbar) + 2 d_p + d_pbar`` of a
linear layer with the same output width.
"""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def fan_forward(x: torch.Tensor, w_p: torch.Tensor, w_pbar: torch.Tensor,
                b_pbar: torch.Tensor) -> torch.Tensor:
    if w_p.shape[0] != x.shape[-1] or w_pbar.shape[0] != x.shape[-1]:
        raise ValueError(
            f"input width {x.shape[-1]} does not match weights "
            f"{tuple(w_p.shape)} / {tuple(w_pbar.shape)}"
        )
    if b_pbar.shape[-1] != w_pbar.shape[1]:
        raise ValueError("bias width must equal d_pbar")
    p = x @ w_p
    g = F.gelu(x @ w_pbar + b_pbar)
    return torch.cat([torch.cos(p), torch.sin(p), g], dim=-1)


def fan_param_count(d_x: int, d_p: int, d_pbar: int) -> int:
    return d_x * d_p + d_x * d_pbar + d_pbar


class FANLayer(nn.Module):
    """FAN layer acting on the last axis."""

    def __init__(self, d_in: int, d_out: int, d_p: int):
        super().__init__()
        if not 0 <= 2 * d_p <= d_out:
            raise ValueError(f"d_p={d_p} incompatible with output width {d_out}")
        self.d_in, self.d_out, self.d_p = d_in, d_out, d_p
        self.d_pbar = d_out - 2 * d_p
        self.W_p = nn.Parameter(torch.empty(d_in, d_p))
        self.W_pbar = nn.Parameter(torch.empty(d_in, self.d_pbar))
        self.B_pbar = nn.Parameter(torch.zeros(self.d_pbar))
        self.reset_parameters()

    def reset_parameters(self):
        bound = 1.0 / math.sqrt(self.d_in)
        nn.init.uniform_(self.W_p, -bound, bound)
        nn.init.uniform_(self.W_pbar, -bound, bound)
        nn.init.zeros_(self.B_pbar)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return fan_forward(x, self.W_p, self.W_pbar, self.B_pbar)

    def extra_repr(self) -> str:
        return f"{self.d_in} -> {self.d_out}, d_p={self.d_p}, d_pbar={self.d_pbar}"
