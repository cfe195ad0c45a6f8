"""Discriminators (MRD, multi-scale sub-band CQT) and the generator/discriminator losses."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.parametrizations import weight_norm

from . import dsp
from .dsp import CqtConfig, StftConfig

LRELU_SLOPE = 0.1


@dataclass
class DiscriminatorOutput:
    scores: List[torch.Tensor]
    features: List[List[torch.Tensor]]

    def __post_init__(self):
        if len(self.scores) != len(self.features):
            raise ValueError("one feature list per score map is required")
        if any(len(f) == 0 for f in self.features):
            raise ValueError("feature lists must be nonempty")

    def __add__(self, other: "DiscriminatorOutput") -> "DiscriminatorOutput":
        return DiscriminatorOutput(self.scores + other.scores, self.features + other.features)


def _pad2d(kernel, dilation=(1, 1)):
    return ((kernel[0] - 1) * dilation[0] // 2, (kernel[1] - 1) * dilation[1] // 2)


# --- MRD ---------------------------------------------------------------------


class ResolutionDiscriminator(nn.Module):
    """2-D conv stack over an STFT magnitude at one (n_fft, hop, win) resolution."""

    def __init__(self, resolution: Tuple[int, int, int], channels: int = 32):
        super().__init__()
        self.n_fft, self.hop, self.win = resolution
        c = channels
        self.convs = nn.ModuleList([
            weight_norm(nn.Conv2d(1, c, (3, 9), padding=(1, 4))),
            weight_norm(nn.Conv2d(c, c, (3, 9), stride=(1, 2), padding=(1, 4))),
            weight_norm(nn.Conv2d(c, c, (3, 9), stride=(1, 2), padding=(1, 4))),
            weight_norm(nn.Conv2d(c, c, (3, 9), stride=(1, 2), padding=(1, 4))),
            weight_norm(nn.Conv2d(c, c, (3, 3), padding=(1, 1))),
        ])
        self.post = weight_norm(nn.Conv2d(c, 1, (3, 3), padding=(1, 1)))

    def spectrogram(self, w):
        pad = (self.n_fft - self.hop) // 2
        w = F.pad(w.unsqueeze(1), (pad, pad), mode="reflect").squeeze(1)
        window = torch.hann_window(self.win, dtype=w.dtype, device=w.device)
        spec = torch.stft(w, self.n_fft, self.hop, self.win, window=window, center=False,
                          return_complex=True)
        return spec.abs().transpose(1, 2)  # (B, T, F)

    def forward(self, w):
        x = self.spectrogram(w).unsqueeze(1)
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            feats.append(x)
        x = self.post(x)
        feats.append(x)
        return x.flatten(1), feats


class MultiResolutionDiscriminator(nn.Module):
    def __init__(self, resolutions: Sequence[Tuple[int, int, int]] = (
            (512, 50, 240), (1024, 120, 600), (2048, 240, 1200)), channels: int = 32):
        super().__init__()
        self.resolutions = [tuple(r) for r in resolutions]
        self.discriminators = nn.ModuleList(ResolutionDiscriminator(r, channels) for r in self.resolutions)

    def forward(self, w) -> DiscriminatorOutput:
        longest = max(r[2] for r in self.resolutions)
        if w.shape[-1] < longest:
            raise ValueError(f"waveform of {w.shape[-1]} samples shorter than MRD window {longest}")
        scores, feats = [], []
        for d in self.discriminators:
            s, f = d(w)
            scores.append(s)
            feats.append(f)
        return DiscriminatorOutput(scores, feats)


def mrd_forward(w, mrd: MultiResolutionDiscriminator) -> DiscriminatorOutput:
    return mrd(w)


# --- CQT discriminator -------------------------------------------------------


class CQTDiscriminator(nn.Module):
    """Sub-band conv stack over CQT real/imag planes.

    Each octave gets its own input conv before the octaves are re-joined and
    processed by a shared dilated stack.
    """

    def __init__(self, cqt_cfg: CqtConfig, filters: int = 32, max_filters: int = 1024,
                 filters_scale: int = 1, dilations: Sequence[int] = (1, 2, 4)):
        super().__init__()
        self.cqt_cfg = cqt_cfg
        k = (3, 9)
        self.pre = nn.ModuleList(
            nn.Conv2d(2, 2, k, padding=_pad2d(k)) for _ in range(cqt_cfg.n_octaves)
        )
        self.convs = nn.ModuleList([nn.Conv2d(2, filters, k, padding=_pad2d(k))])
        in_ch = min(filters_scale * filters, max_filters)
        for i, dil in enumerate(dilations):
            out_ch = min(filters_scale ** (i + 1) * filters, max_filters)
            self.convs.append(weight_norm(nn.Conv2d(in_ch, out_ch, k, stride=(1, 2), dilation=(dil, 1),
                                                    padding=_pad2d(k, (dil, 1)))))
            in_ch = out_ch
        out_ch = min(filters_scale ** (len(dilations) + 1) * filters, max_filters)
        self.convs.append(weight_norm(nn.Conv2d(in_ch, out_ch, (3, 3), padding=(1, 1))))
        self.post = weight_norm(nn.Conv2d(out_ch, 1, (3, 3), padding=(1, 1)))

    def forward(self, w):
        z = dsp.cqt(w, self.cqt_cfg)                       # (B, T, bins) complex
        z = torch.stack([z.real, z.imag], dim=1).to(w.dtype)  # (B, 2, T, bins)
        b = self.cqt_cfg.bins_per_octave
        x = torch.cat([conv(z[..., i * b:(i + 1) * b]) for i, conv in enumerate(self.pre)], dim=-1)
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            feats.append(x)
        x = self.post(x)
        return x.flatten(1), feats


class MultiScaleSubbandCQTDiscriminator(nn.Module):
    def __init__(self, bins_per_octave: Sequence[int] = (12, 24, 36),
                 hops: Sequence[int] = (256, 128, 128), n_octaves: int = 8,
                 fmin: float = 30.0, filter_scale: float = 0.5, filters: int = 32):
        super().__init__()
        self.configs = [CqtConfig(n_octaves, b, fmin, h, filter_scale)
                        for b, h in zip(bins_per_octave, hops)]
        self.discriminators = nn.ModuleList(CQTDiscriminator(c, filters) for c in self.configs)

    @property
    def min_length(self) -> int:
        return max(c.max_length for c in self.configs)

    def forward(self, w) -> DiscriminatorOutput:
        scores, feats = [], []
        for d in self.discriminators:
            s, f = d(w)
            scores.append(s)
            feats.append(f)
        return DiscriminatorOutput(scores, feats)


def cqtd_forward(w, cqtd: MultiScaleSubbandCQTDiscriminator) -> DiscriminatorOutput:
    return cqtd(w)


class DiscriminatorSet(nn.Module):
    """MRD and CQTD evaluated together; outputs are concatenated."""

    def __init__(self, mrd: MultiResolutionDiscriminator = None,
                 cqtd: MultiScaleSubbandCQTDiscriminator = None):
        super().__init__()
        self.mrd = mrd if mrd is not None else MultiResolutionDiscriminator()
        self.cqtd = cqtd if cqtd is not None else MultiScaleSubbandCQTDiscriminator()

    def forward(self, w) -> DiscriminatorOutput:
        return self.mrd(w) + self.cqtd(w)


# --- adversarial losses ------------------------------------------------------


def adv_loss_generator(fake_scores: Sequence[torch.Tensor]) -> torch.Tensor:
    if len(fake_scores) == 0:
        raise ValueError("no discriminator outputs")
    return torch.stack([torch.mean((s - 1) ** 2) for s in fake_scores]).mean()


def adv_loss_discriminator(real_scores: Sequence[torch.Tensor],
                           fake_scores: Sequence[torch.Tensor]) -> torch.Tensor:
    if len(real_scores) != len(fake_scores):
        raise ValueError(f"{len(real_scores)} real vs {len(fake_scores)} fake sub-discriminator outputs")
    if len(real_scores) == 0:
        raise ValueError("no discriminator outputs")
    return torch.stack([torch.mean((r - 1) ** 2) + torch.mean(f ** 2)
                        for r, f in zip(real_scores, fake_scores)]).mean()


def feature_matching_loss(feats_real: Sequence[Sequence[torch.Tensor]],
                          feats_fake: Sequence[Sequence[torch.Tensor]]) -> torch.Tensor:
    """Mean over sub-discriminators and layers of the element-mean L1 feature distance."""
    if len(feats_real) != len(feats_fake):
        raise ValueError("sub-discriminator count mismatch")
    terms = []
    for fr, ff in zip(feats_real, feats_fake):
        if len(fr) != len(ff):
            raise ValueError(f"layer count mismatch: {len(fr)} vs {len(ff)}")
        terms.extend(torch.mean(torch.abs(r.detach() - f)) for r, f in zip(fr, ff))
    if not terms:
        raise ValueError("no features to match")
    return torch.stack(terms).mean()


# --- reconstruction losses ---------------------------------------------------


def mag_loss(pred_cmag, target_cmag) -> torch.Tensor:
    return torch.mean(torch.abs(pred_cmag - target_cmag))


def anti_wrap(t: torch.Tensor) -> torch.Tensor:
    return torch.abs(t - 2 * math.pi * torch.round(t / (2 * math.pi)))


def anti_wrap_phase_loss(pred_phase, target_phase) -> torch.Tensor:
    """Instantaneous phase + group delay (frequency diff) + angular frequency (time diff).

    Phases are ``(..., T, F)``.
    """
    ip = anti_wrap(pred_phase - target_phase).mean()
    gd = anti_wrap(torch.diff(pred_phase, dim=-1) - torch.diff(target_phase, dim=-1)).mean()
    iaf = anti_wrap(torch.diff(pred_phase, dim=-2) - torch.diff(target_phase, dim=-2)).mean()
    return ip + gd + iaf


def complex_loss(pred, target) -> torch.Tensor:
    """Mean squared error over real and imaginary parts of complex grids."""
    return 0.5 * (torch.mean((pred.real - target.real) ** 2) + torch.mean((pred.imag - target.imag) ** 2))


def consistency_loss(pred_cmag, pred_phase, cfg: StftConfig = StftConfig(),
                     compress: float = 0.3) -> torch.Tensor:
    """Distance between a compressed spectrum and its STFT(iSTFT(.)) projection."""
    spec = dsp.polar(pred_cmag, pred_phase)
    length = cfg.hop * (pred_cmag.shape[-2] - 1)
    wave = dsp.istft(dsp.polar(dsp.decompress_magnitude(pred_cmag, compress), pred_phase), cfg, length)
    reproj = project_compressed(wave, cfg, compress)
    return complex_loss(spec, reproj)


def project_compressed(wave, cfg: StftConfig = StftConfig(), compress: float = 0.3):
    """Compressed complex spectrum of ``wave``, differentiable at zero magnitude."""
    spec = dsp.stft(wave, cfg)
    mag = torch.sqrt(spec.real ** 2 + spec.imag ** 2 + 1e-12)
    phase = torch.atan2(spec.imag + 1e-12 * (spec.imag == 0), spec.real)
    return dsp.polar(mag.pow(compress), phase)


MEL_WINDOWS = (32, 64, 128, 256, 512, 1024, 2048)
MEL_BANDS = (5, 10, 20, 40, 80, 160, 320)


def multiscale_mel_loss(pred_w, target_w, windows: Sequence[int] = MEL_WINDOWS,
                        n_mels: Sequence[int] = MEL_BANDS) -> torch.Tensor:
    total = 0.0
    for win, mels in zip(windows, n_mels):
        p = dsp.mel_spectrogram(pred_w, n_fft=win, hop=win // 4, n_mels=mels)
        t = dsp.mel_spectrogram(target_w, n_fft=win, hop=win // 4, n_mels=mels)
        total = total + torch.mean(torch.abs(p - t))
    return total


# --- objective ---------------------------------------------------------------

TERMS = ("adv", "mag", "awp", "con", "ri", "mel", "fm")
RECONSTRUCTION_TERMS = ("mag", "awp", "con", "ri", "mel")


@dataclass
class LossWeights:
    adv: float = 1.0
    mag: float = 0.9
    awp: float = 0.3
    con: float = 0.1
    ri: float = 0.1
    mel: float = 0.1
    fm: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be nonnegative")


def generator_objective(terms: Dict[str, torch.Tensor], weights: LossWeights = LossWeights()):
    """Weighted sum of the loss terms and a report of each unweighted term."""
    w = asdict(weights)
    unknown = set(terms) - set(TERMS)
    if unknown:
        raise ValueError(f"unknown loss terms {sorted(unknown)}")
    total = sum(w[k] * v for k, v in terms.items())
    if not torch.is_tensor(total):
        total = torch.tensor(float(total))
    report = {k: float(v.detach()) if torch.is_tensor(v) else float(v) for k, v in terms.items()}
    report["total"] = float(total.detach())
    return total, report


def format_report_row(step: int, report: Dict[str, float]) -> str:
    return json.dumps({"step": step, **report}, sort_keys=True)
