"""STFT front-end, magnitude compression, mel and constant-Q transforms, WAV IO.

All transforms operate on torch tensors whose last axis is time (samples) so
they can sit inside the generator and the losses and stay differentiable.
Spectrogram grids are laid out as ``(..., T, F)``: frames first, bins last.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
from scipy.io import wavfile

SAMPLE_RATE = 16000
MEL_FLOOR = 1e-5

ArrayLike = Union[np.ndarray, torch.Tensor, Sequence[float]]


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 400
    hop: int = 100
    win_length: int = 400
    center: bool = True

    def __post_init__(self):
        if self.win_length != self.n_fft:
            raise ValueError("win_length must equal n_fft")
        if self.hop <= 0 or self.win_length % self.hop:
            raise ValueError("hop must divide win_length")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if self.center:
            return n_samples // self.hop + 1
        return (n_samples - self.n_fft) // self.hop + 1


def as_tensor(w: ArrayLike, dtype: Optional[torch.dtype] = None) -> torch.Tensor:
    if isinstance(w, torch.Tensor):
        return w if dtype is None else w.to(dtype)
    t = torch.as_tensor(np.asarray(w))
    if dtype is not None:
        return t.to(dtype)
    return t if t.is_floating_point() else t.to(torch.get_default_dtype())


def check_waveform(w: torch.Tensor) -> None:
    if w.shape[-1] == 0:
        raise ValueError("empty waveform")
    if not torch.isfinite(w).all():
        raise ValueError("waveform contains NaN or Inf")


@functools.lru_cache(maxsize=None)
def _hann(n: int, dtype: torch.dtype) -> torch.Tensor:
    return torch.hann_window(n, periodic=True, dtype=dtype)


def stft(w: ArrayLike, cfg: StftConfig = StftConfig()) -> torch.Tensor:
    """Complex STFT of ``w`` with shape ``(..., T, F)``."""
    w = as_tensor(w)
    check_waveform(w)
    if cfg.center and w.shape[-1] <= cfg.n_fft // 2:
        raise ValueError(
            f"waveform of {w.shape[-1]} samples too short for reflection padding "
            f"(need > {cfg.n_fft // 2})"
        )
    lead = w.shape[:-1]
    spec = torch.stft(
        w.reshape(-1, w.shape[-1]),
        n_fft=cfg.n_fft,
        hop_length=cfg.hop,
        win_length=cfg.win_length,
        window=_hann(cfg.win_length, w.dtype).to(w.device),
        center=cfg.center,
        pad_mode="reflect",
        return_complex=True,
    )
    spec = spec.transpose(-1, -2)
    return spec.reshape(*lead, *spec.shape[-2:])


def istft(
    spec: torch.Tensor, cfg: StftConfig = StftConfig(), length: Optional[int] = None
) -> torch.Tensor:
    """Overlap-add inverse of :func:`stft`, truncated or zero-padded to ``length``."""
    if spec.shape[-1] != cfg.n_bins:
        raise ValueError(
            f"spectrogram has {spec.shape[-1]} bins, config expects {cfg.n_bins}"
        )
    lead = spec.shape[:-2]
    s = spec.reshape(-1, *spec.shape[-2:]).transpose(-1, -2)
    real_dtype = s.real.dtype
    natural = cfg.hop * (s.shape[-1] - 1)
    if not cfg.center:
        natural += cfg.n_fft
    w = torch.istft(
        s,
        n_fft=cfg.n_fft,
        hop_length=cfg.hop,
        win_length=cfg.win_length,
        window=_hann(cfg.win_length, real_dtype).to(s.device),
        center=cfg.center,
        length=natural,
    )
    if length is not None:
        if length <= natural:
            w = w[..., :length]
        else:
            w = torch.nn.functional.pad(w, (0, length - natural))
    return w.reshape(*lead, w.shape[-1])


def magnitude_phase(spec: torch.Tensor, eps: float = 0.0):
    mag = spec.abs()
    if eps:
        mag = torch.sqrt(spec.real**2 + spec.imag**2 + eps)
    phase = torch.angle(spec)
    phase = torch.where(phase <= -math.pi, torch.full_like(phase, math.pi), phase)
    return mag, phase


def compress_magnitude(mag: torch.Tensor, exponent: float = 0.3) -> torch.Tensor:
    if not 0.0 < exponent <= 1.0:
        raise ValueError("exponent must lie in (0, 1]")
    mag = as_tensor(mag)
    if (mag < 0).any():
        raise ValueError("magnitude must be nonnegative")
    return mag.pow(exponent)


def decompress_magnitude(cmag: torch.Tensor, exponent: float = 0.3) -> torch.Tensor:
    if not 0.0 < exponent <= 1.0:
        raise ValueError("exponent must lie in (0, 1]")
    cmag = as_tensor(cmag)
    if (cmag < 0).any():
        raise ValueError("magnitude must be nonnegative")
    return cmag.pow(1.0 / exponent)


def polar(mag: torch.Tensor, phase: torch.Tensor) -> torch.Tensor:
    return torch.complex(mag * torch.cos(phase), mag * torch.sin(phase))


# --- mel ---------------------------------------------------------------------


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=None)
def mel_filterbank(
    n_fft: int, n_mels: int, sample_rate: int = SAMPLE_RATE, fmin: float = 0.0,
    fmax: Optional[float] = None,
) -> np.ndarray:
    """Triangular HTK-scale filterbank, shape ``(n_mels, n_fft // 2 + 1)``.

    Filters narrower than the bin spacing would come out empty; those rows
    put unit weight on the bin nearest their center so every row sums > 0.
    """
    n_bins = n_fft // 2 + 1
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if n_mels > n_bins:
        raise ValueError(f"n_mels={n_mels} exceeds {n_bins} frequency bins")
    fmax = sample_rate / 2 if fmax is None else fmax
    bin_hz = np.linspace(0.0, sample_rate / 2, n_bins)
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bin_hz[None] - lo) / (mid - lo)
    down = (hi - bin_hz[None]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    for i in np.flatnonzero(fb.sum(axis=1) <= 0):
        fb[i, np.argmin(np.abs(bin_hz - edges[i + 1]))] = 1.0
    return fb


def mel_spectrogram(
    w: ArrayLike, n_fft: int = 1024, hop: Optional[int] = None, n_mels: int = 80,
    sample_rate: int = SAMPLE_RATE, floor: float = MEL_FLOOR,
) -> torch.Tensor:
    """Natural-log mel energies, shape ``(..., T, n_mels)``."""
    w = as_tensor(w)
    hop = n_fft // 4 if hop is None else hop
    fb = torch.as_tensor(mel_filterbank(n_fft, n_mels, sample_rate), dtype=w.dtype)
    lead = w.shape[:-1]
    flat = w.reshape(-1, w.shape[-1])
    if flat.shape[-1] <= n_fft // 2:
        flat = torch.nn.functional.pad(flat, (0, n_fft // 2 + 1 - flat.shape[-1]))
    spec = torch.stft(
        flat, n_fft=n_fft, hop_length=hop, window=_hann(n_fft, w.dtype).to(w.device),
        center=True, pad_mode="reflect", return_complex=True,
    ).abs()
    mel = torch.matmul(spec.transpose(-1, -2), fb.T.to(w.device))
    out = torch.log(mel.clamp(min=floor))
    return out.reshape(*lead, *out.shape[-2:])


# --- constant-Q --------------------------------------------------------------


@dataclass(frozen=True)
class CqtConfig:
    n_octaves: int = 8
    bins_per_octave: int = 12
    fmin: float = 30.0
    hop: int = 256
    filter_scale: float = 0.5
    sample_rate: int = SAMPLE_RATE

    @property
    def n_bins(self) -> int:
        return self.n_octaves * self.bins_per_octave

    @property
    def q(self) -> float:
        return self.filter_scale / (2.0 ** (1.0 / self.bins_per_octave) - 1.0)

    def frequencies(self) -> np.ndarray:
        k = np.arange(self.n_bins)
        return self.fmin * 2.0 ** (k / self.bins_per_octave)

    def lengths(self) -> np.ndarray:
        return np.ceil(self.q * self.sample_rate / self.frequencies()).astype(int)

    @property
    def max_length(self) -> int:
        return int(self.lengths().max())


@functools.lru_cache(maxsize=None)
def cqt_kernels(cfg: CqtConfig):
    """Per-octave complex kernel banks.

    Returns a list of ``(length, kernels)`` where ``kernels`` has shape
    ``(bins_per_octave, length)``; every kernel of the octave is centered in a
    frame of the octave's longest kernel length. Kernels are L1-normalized.
    """
    freqs, lengths = cfg.frequencies(), cfg.lengths()
    if freqs[-1] >= cfg.sample_rate / 2:
        raise ValueError("highest CQT bin at or above Nyquist")
    banks = []
    b = cfg.bins_per_octave
    for o in range(cfg.n_octaves):
        sl = slice(o * b, (o + 1) * b)
        frame = int(lengths[sl].max())
        bank = np.zeros((b, frame), dtype=np.complex128)
        for j, (f, n) in enumerate(zip(freqs[sl], lengths[sl])):
            t = np.arange(n) - (n - 1) / 2.0
            win = np.hanning(n + 2)[1:-1]
            kern = win * np.exp(2j * np.pi * f * t / cfg.sample_rate)
            kern /= np.abs(kern).sum()
            start = (frame - n) // 2
            bank[j, start:start + n] = kern
        banks.append((frame, bank))
    return banks


def cqt(w: ArrayLike, cfg: CqtConfig = CqtConfig()) -> torch.Tensor:
    """Constant-Q transform by direct complex filterbank.

    Output is complex with shape ``(..., T, n_octaves * bins_per_octave)``,
    frames centered at multiples of ``cfg.hop``.
    """
    w = as_tensor(w)
    if w.shape[-1] < cfg.max_length:
        raise ValueError(
            f"waveform of {w.shape[-1]} samples shorter than the longest CQT "
            f"kernel ({cfg.max_length})"
        )
    lead = w.shape[:-1]
    flat = w.reshape(-1, w.shape[-1])
    n_frames = flat.shape[-1] // cfg.hop + 1
    cdtype = torch.complex128 if w.dtype == torch.float64 else torch.complex64
    outs = []
    for frame, bank in cqt_kernels(cfg):
        pad = frame // 2
        x = torch.nn.functional.pad(flat, (pad, frame))
        frames = x.unfold(-1, frame, cfg.hop)[:, :n_frames]
        k = torch.as_tensor(bank.conj().T, dtype=cdtype, device=w.device)
        outs.append(torch.matmul(frames.to(cdtype), k))
    out = torch.cat(outs, dim=-1)
    return out.reshape(*lead, *out.shape[-2:])


# --- WAV IO ------------------------------------------------------------------


def read_wav(path: Union[str, Path]) -> np.ndarray:
    """Read a mono 16 kHz WAV (16-bit PCM or 32-bit float) as float64 in [-1, 1]."""
    sr, data = wavfile.read(str(path))
    if sr != SAMPLE_RATE:
        raise ValueError(f"{path}: sample rate {sr}, expected {SAMPLE_RATE}")
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise ValueError(f"{path}: unsupported sample format {data.dtype}")


def write_wav(path: Union[str, Path], w: ArrayLike, pcm16: bool = False) -> None:
    x = np.asarray(w.detach().cpu() if isinstance(w, torch.Tensor) else w, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("refusing to write non-finite audio")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if pcm16:
        wavfile.write(str(path), SAMPLE_RATE, np.round(np.clip(x, -1, 32767 / 32768) * 32768).astype(np.int16))
    else:
        wavfile.write(str(path), SAMPLE_RATE, x.astype(np.float32))
