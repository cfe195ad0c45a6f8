"""Restoration generator: dense encoder, MR-TFDP bottleneck, magnitude/phase decoders.

Pipeline for a degraded waveform::

    stft -> (compressed magnitude, phase) -> encoder -> bottleneck
         -> magnitude decoder (learnable softplus mapping) + phase decoder
         -> decompress -> mag * exp(i phase) -> istft
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional

import torch
import torch.nn.functional as F
from torch import nn

from . import dsp
from .dsp import StftConfig
from .tfdp import Bottleneck, BottleneckConfig

HEADS = ("mapping", "masking")


def learnable_softplus(x: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """``log(1 + exp(beta * x)) / beta`` evaluated without overflow."""
    return F.relu(x) + torch.log1p(torch.exp(-beta * x.abs())) / beta


class LearnableSoftplus(nn.Module):
    """Per-frequency softplus over the last axis, ``beta_f = exp(log_beta_f)``."""

    def __init__(self, n_bins: int, beta_init: float = 1.0):
        super().__init__()
        self.log_beta = nn.Parameter(torch.full((n_bins,), math.log(beta_init)))

    @property
    def beta(self) -> torch.Tensor:
        return self.log_beta.exp()

    def forward(self, x):
        return learnable_softplus(x, self.beta)


class LearnableSigmoid(nn.Module):
    """Masking head: ``beta_mask * sigmoid(slope_f * x)`` per frequency."""

    def __init__(self, n_bins: int, beta_mask: float = 2.0):
        super().__init__()
        self.beta_mask = beta_mask
        self.slope = nn.Parameter(torch.ones(n_bins))

    def forward(self, x):
        return self.beta_mask * torch.sigmoid(self.slope * x)


def _norm_act(c):
    return [nn.InstanceNorm2d(c, affine=True), nn.PReLU(c)]


class DenseBlock(nn.Module):
    """Dilated dense block: layer i sees all previous outputs, time dilation 2**i."""

    def __init__(self, channels: int, depth: int = 4, kernel=(3, 3)):
        super().__init__()
        self.layers = nn.ModuleList()
        for i in range(depth):
            dil = 2 ** i
            pad = (dil * (kernel[0] - 1) // 2, (kernel[1] - 1) // 2)
            self.layers.append(nn.Sequential(
                nn.Conv2d(channels * (i + 1), channels, kernel, dilation=(dil, 1), padding=pad),
                *_norm_act(channels),
            ))

    def forward(self, x):
        skip = x
        for layer in self.layers:
            x = layer(skip)
            skip = torch.cat([x, skip], dim=1)
        return x


class DenseEncoder(nn.Module):
    def __init__(self, channels: int, in_channels: int = 2, depth: int = 4):
        super().__init__()
        self.inp = nn.Sequential(nn.Conv2d(in_channels, channels, 1), *_norm_act(channels))
        self.dense = DenseBlock(channels, depth)
        self.down = nn.Sequential(nn.Conv2d(channels, channels, (1, 3), (1, 2)), *_norm_act(channels))

    def forward(self, x):
        return self.down(self.dense(self.inp(x)))


class MagnitudeDecoder(nn.Module):
    def __init__(self, channels: int, n_bins: int, depth: int = 4, head: str = "mapping",
                 beta_init: float = 1.0, beta_mask: float = 2.0):
        super().__init__()
        if head not in HEADS:
            raise ValueError(f"unknown magnitude head {head!r}; expected one of {HEADS}")
        self.head_kind = head
        self.dense = DenseBlock(channels, depth)
        self.proj = nn.Sequential(
            nn.ConvTranspose2d(channels, channels, (1, 3), (1, 2)),
            nn.Conv2d(channels, 1, 1),
            *_norm_act(1),
            nn.Conv2d(1, 1, 1),
        )
        if head == "mapping":
            self.head = LearnableSoftplus(n_bins, beta_init)
        else:
            self.head = LearnableSigmoid(n_bins, beta_mask)

    def pre_activation(self, h):
        return self.proj(self.dense(h)).squeeze(1)

    def forward(self, h, input_cmag=None):
        y = self.head(self.pre_activation(h))
        if self.head_kind == "masking":
            if input_cmag is None:
                raise ValueError("masking head needs the input compressed magnitude")
            y = y * input_cmag
        return y


class PhaseDecoder(nn.Module):
    def __init__(self, channels: int, depth: int = 4):
        super().__init__()
        self.dense = DenseBlock(channels, depth)
        self.up = nn.Sequential(nn.ConvTranspose2d(channels, channels, (1, 3), (1, 2)),
                                *_norm_act(channels))
        self.real = nn.Conv2d(channels, 1, 1)
        self.imag = nn.Conv2d(channels, 1, 1)

    def forward(self, h):
        h = self.up(self.dense(h))
        return phase_from_heads(self.real(h).squeeze(1), self.imag(h).squeeze(1))


def phase_from_heads(re: torch.Tensor, im: torch.Tensor) -> torch.Tensor:
    phase = torch.atan2(im, re)
    return torch.where(phase <= -math.pi, torch.full_like(phase, math.pi), phase)


@dataclass
class GeneratorConfig:
    channels: int = 48
    n_blocks: int = 4
    n_fft: int = 400
    hop: int = 100
    compress: float = 0.3
    dense_depth: int = 4
    head: str = "mapping"
    beta_init: float = 1.0
    beta_mask: float = 2.0
    mode: str = "parallel"
    glp_variant: str = "glp"
    dp_mode: str = "literal"
    d_state: int = 16

    @property
    def stft(self) -> StftConfig:
        return StftConfig(self.n_fft, self.hop, self.n_fft, True)

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def f_prime(self) -> int:
        return (self.n_bins - 3) // 2 + 1

    def bottleneck(self) -> BottleneckConfig:
        return BottleneckConfig(self.channels, self.n_blocks, self.f_prime, self.mode,
                                self.glp_variant, self.dp_mode, self.d_state)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = DenseEncoder(cfg.channels, 2, cfg.dense_depth)
        self.bottleneck = Bottleneck(cfg.bottleneck())
        self.mag_decoder = MagnitudeDecoder(cfg.channels, cfg.n_bins, cfg.dense_depth, cfg.head,
                                            cfg.beta_init, cfg.beta_mask)
        self.phase_decoder = PhaseDecoder(cfg.channels, cfg.dense_depth)

    def encode(self, cmag, phase):
        if cmag.shape != phase.shape or cmag.shape[-1] != self.cfg.n_bins:
            raise ValueError(
                f"expected matching (..., T, {self.cfg.n_bins}) inputs, got "
                f"{tuple(cmag.shape)} and {tuple(phase.shape)}"
            )
        return self.encoder(torch.stack([cmag, phase], dim=1))

    def forward(self, cmag, phase):
        """Map compressed magnitude and phase ``(B, T, F)`` to their restored versions."""
        h = self.bottleneck(self.encode(cmag, phase))
        return self.mag_decoder(h, cmag), self.phase_decoder(h)

    def analyze(self, w: torch.Tensor):
        spec = dsp.stft(w, self.cfg.stft)
        mag, phase = dsp.magnitude_phase(spec)
        return dsp.compress_magnitude(mag, self.cfg.compress), phase

    def synthesize(self, cmag, phase, length: int):
        mag = dsp.decompress_magnitude(cmag, self.cfg.compress)
        return dsp.istft(dsp.polar(mag, phase), self.cfg.stft, length)

    def restore_full(self, w: torch.Tensor) -> Dict[str, torch.Tensor]:
        """Restore ``(B, L)`` waveforms, returning waveform and spectral predictions."""
        if w.shape[-1] < self.cfg.n_fft:
            raise ValueError(f"input of {w.shape[-1]} samples shorter than one STFT window")
        cmag, phase = self.analyze(w)
        pred_cmag, pred_phase = self(cmag, phase)
        wave = self.synthesize(pred_cmag, pred_phase, w.shape[-1])
        return {"wave": wave, "cmag": pred_cmag, "phase": pred_phase,
                "input_cmag": cmag, "input_phase": phase}

    def restore(self, w: torch.Tensor) -> torch.Tensor:
        squeeze = w.dim() == 1
        out = self.restore_full(w.unsqueeze(0) if squeeze else w)["wave"]
        return out[0] if squeeze else out

    @property
    def betas(self) -> Optional[torch.Tensor]:
        head = self.mag_decoder.head
        return head.beta.detach() if isinstance(head, LearnableSoftplus) else None


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def restore(w, model: Generator) -> torch.Tensor:
    w = dsp.as_tensor(w, next(model.parameters()).dtype)
    with torch.no_grad():
        return model.restore(w)


def save_generator(path, model: Generator, step: int = 0, extra: Optional[dict] = None) -> None:
    payload = {"generator": model.state_dict(), "config": model.cfg.to_dict(), "step": step}
    if extra:
        payload.update(extra)
    torch.save(payload, path)


def load_generator(path, map_location="cpu") -> Generator:
    payload = torch.load(path, map_location=map_location, weights_only=False)
    if "generator" not in payload:
        raise ValueError(f"{path} is not a generator checkpoint")
    model = Generator(GeneratorConfig.from_dict(payload["config"]))
    model.load_state_dict(payload["generator"])
    model.eval()
    return model
