"""Selective state-space (Mamba) layers run along the time axis.

The scan is the explicit sequential recurrence

    h_t = exp(dt_t * A) h_{t-1} + dt_t * B_t * u_t
    y_t = <C_t, h_t> + D * u_t

with ``h_0 = 0``. No fused kernels: a Python loop over time, with a
hand-written backward pass so the graph does not hold every hidden state.
"""
from __future__ import annotations

import math
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from .glp import ChannelNorm


def selective_scan_reference(u, delta, A, B, C, D=None):
    """Plain-autograd scan; keeps every step in the graph. Use for checking only."""
    decay = torch.exp(delta.unsqueeze(-1) * A)
    drive = (delta * u).unsqueeze(-1) * B.unsqueeze(-2)
    h = torch.zeros_like(drive[..., 0, :, :])
    ys = []
    for t in range(u.shape[-2]):
        h = decay[..., t, :, :] * h + drive[..., t, :, :]
        ys.append(torch.einsum("...dn,...n->...d", h, C[..., t, :]))
    y = torch.stack(ys, dim=-2)
    return y if D is None else y + u * D


def _chunk_states(h0, decay, drive):
    """States ``h_1..h_K`` of one chunk given ``h_0``; decay/drive are ``(K, m, d, N)``."""
    states = torch.empty_like(drive)
    h = h0
    for k in range(drive.shape[0]):
        h = torch.addcmul(drive[k], decay[k], h, out=states[k])
    return states


class _SelectiveScan(torch.autograd.Function):
    """Sequential scan with a hand-written reverse recurrence.

    Works time-major, ``(L, m, d)``. Only every ``chunk``-th hidden state is
    kept; backward recomputes the states inside one chunk at a time, so
    memory is O(L / chunk) states instead of O(L). Within a chunk everything
    except the recurrence itself is batched over time.
    """

    @staticmethod
    def forward(ctx, u, delta, A, B, C, chunk):
        length, m, d = u.shape
        h = u.new_zeros(m, d, A.shape[-1])
        marks = []
        y = torch.empty_like(u)
        du = delta * u
        for t0 in range(0, length, chunk):
            sl = slice(t0, min(t0 + chunk, length))
            marks.append(h)
            decay = torch.exp(delta[sl, :, :, None] * A)
            drive = du[sl, :, :, None] * B[sl, :, None, :]
            states = _chunk_states(h, decay, drive)
            torch.matmul(states, C[sl, :, :, None], out=y[sl, :, :, None])
            h = states[-1]
        ctx.save_for_backward(u, delta, A, B, C, torch.stack(marks))
        ctx.chunk = chunk
        return y

    @staticmethod
    def backward(ctx, gy):
        u, delta, A, B, C, marks = ctx.saved_tensors
        gy = gy.contiguous()
        chunk = ctx.chunk
        length = u.shape[0]
        gu = torch.empty_like(u)
        gdelta = torch.empty_like(delta)
        gB = torch.empty_like(B)
        gC = torch.empty_like(C)
        gA = torch.zeros_like(A)
        du = delta * u
        carry = torch.zeros_like(marks[0])  # decay_{t1} * dL/dh_{t1} from the next chunk
        for c in reversed(range(marks.shape[0])):
            t0, t1 = c * chunk, min((c + 1) * chunk, length)
            sl = slice(t0, t1)
            decay = torch.exp(delta[sl, :, :, None] * A)
            drive = du[sl, :, :, None] * B[sl, :, None, :]
            states = _chunk_states(marks[c], decay, drive)
            prev = torch.cat([marks[c][None], states[:-1]], dim=0)
            # G_t = dL/dh_t = gy_t C_t + decay_{t+1} G_{t+1}
            G = gy[sl, :, :, None] * C[sl, :, None, :]
            G[-1] += carry
            for k in range(t1 - t0 - 2, -1, -1):
                G[k].addcmul_(decay[k + 1], G[k + 1])
            carry = decay[0] * G[0]
            gC[sl] = (gy[sl, :, None, :] @ states).squeeze(-2)
            g_du = (G @ B[sl, :, :, None]).squeeze(-1)
            gB[sl] = (du[sl, :, None, :] @ G).squeeze(-2)
            g_log_decay = G.mul_(prev).mul_(decay)  # d/d(delta*A) of exp; G no longer needed
            gu[sl] = g_du * delta[sl]
            gdelta[sl] = g_du * u[sl] + (g_log_decay * A).sum(-1)
            gA += torch.einsum("kmdn,kmd->dn", g_log_decay, delta[sl])
        return gu, gdelta, gA, gB, gC, None


def selective_scan(u: torch.Tensor, delta: torch.Tensor, A: torch.Tensor,
                   B: torch.Tensor, C: torch.Tensor,
                   D: Optional[torch.Tensor] = None, chunk: int = 8) -> torch.Tensor:
    """Sequential selective scan.

    Args:
        u: inputs ``(..., L, d)``
        delta: positive step sizes ``(..., L, d)``
        A: state matrix ``(d, N)``, expected negative
        B, C: input/output projections ``(..., L, N)``
        D: skip gain ``(d,)``
        chunk: hidden-state checkpoint interval for the backward pass
    """
    if (delta <= 0).any():
        raise ValueError("selective_scan requires delta > 0")
    lead = u.shape[:-2]
    length, d = u.shape[-2:]
    n = A.shape[-1]
    def time_major(x, width):
        return x.reshape(-1, length, width).transpose(0, 1).contiguous()

    y = _SelectiveScan.apply(
        time_major(u, d), time_major(delta, d), A, time_major(B, n), time_major(C, n), chunk,
    ).transpose(0, 1).reshape(*lead, length, d)
    return y if D is None else y + u * D


class Mamba(nn.Module):
    """Single-direction Mamba mixer over ``(batch, L, d_model)``."""

    def __init__(self, d_model: int, d_state: int = 16, d_conv: int = 4, expand: int = 2,
                 dt_min: float = 1e-3, dt_max: float = 1e-1, dt_init_floor: float = 1e-4):
        super().__init__()
        self.d_inner = expand * d_model
        self.d_state = d_state
        self.dt_rank = math.ceil(d_model / 16)
        self.in_proj = nn.Linear(d_model, 2 * self.d_inner, bias=False)
        self.conv = nn.Conv1d(self.d_inner, self.d_inner, d_conv, groups=self.d_inner,
                              padding=d_conv - 1)
        self.x_proj = nn.Linear(self.d_inner, self.dt_rank + 2 * d_state, bias=False)
        self.dt_proj = nn.Linear(self.dt_rank, self.d_inner)
        self.A_log = nn.Parameter(
            torch.log(torch.arange(1, d_state + 1, dtype=torch.float32)).repeat(self.d_inner, 1)
        )
        self.D = nn.Parameter(torch.ones(self.d_inner))
        self.out_proj = nn.Linear(self.d_inner, d_model, bias=False)

        # dt starts log-uniform in [dt_min, dt_max], floored at dt_init_floor
        dt = torch.exp(torch.rand(self.d_inner) * (math.log(dt_max) - math.log(dt_min))
                       + math.log(dt_min)).clamp(min=dt_init_floor)
        with torch.no_grad():
            self.dt_proj.bias.copy_(dt + torch.log(-torch.expm1(-dt)))  # softplus^-1
            std = self.dt_rank ** -0.5
            nn.init.uniform_(self.dt_proj.weight, -std, std)

    def forward(self, x):
        length = x.shape[1]
        xs, z = self.in_proj(x).chunk(2, dim=-1)
        xs = self.conv(xs.transpose(1, 2))[..., :length].transpose(1, 2)
        xs = F.silu(xs)
        dt, B, C = self.x_proj(xs).split([self.dt_rank, self.d_state, self.d_state], dim=-1)
        dt = F.softplus(self.dt_proj(dt))
        # softplus underflows to exactly 0 for very negative inputs
        dt = dt.clamp(min=torch.finfo(dt.dtype).tiny)
        A = -torch.exp(self.A_log)
        y = selective_scan(xs, dt, A, B, C, self.D)
        return self.out_proj(y * F.silu(z))


class TimeMamba(nn.Module):
    """Bidirectional Mamba along time for every (batch, frequency) fiber of ``(B, C, T, F)``."""

    def __init__(self, channels: int, d_state: int = 16, d_conv: int = 4, expand: int = 2):
        super().__init__()
        self.norm = ChannelNorm(channels)
        self.forward_mixer = Mamba(channels, d_state, d_conv, expand)
        self.backward_mixer = Mamba(channels, d_state, d_conv, expand)

    def forward(self, x):
        b, c, t, f = x.shape
        seq = self.norm(x).permute(0, 3, 2, 1).reshape(b * f, t, c)
        y = self.forward_mixer(seq) + self.backward_mixer(seq.flip(1)).flip(1)
        return x + y.reshape(b, f, t, c).permute(0, 3, 2, 1)
