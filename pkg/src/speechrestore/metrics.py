"""Signal-fidelity metrics (LSD, SI-SNR) and corpus evaluation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Tuple, Union

import numpy as np
import torch

from . import dsp

SI_SNR_CAP_DB = 80.0
LSD_N_FFT = 2048
LSD_HOP = 512


def _mag(w: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    x = torch.as_tensor(np.asarray(w, dtype=np.float64))
    spec = torch.stft(x, n_fft, hop, n_fft, window=torch.hann_window(n_fft, dtype=x.dtype),
                      center=True, pad_mode="constant", return_complex=True)
    return spec.abs().T.numpy()  # (frames, bins)


def lsd_from_magnitudes(ref_mag: np.ndarray, est_mag: np.ndarray, floor: float = 1e-8) -> float:
    """Mean over frames of the RMS (over bins) log10-magnitude difference; inputs ``(frames, bins)``."""
    ref_mag, est_mag = np.asarray(ref_mag, float), np.asarray(est_mag, float)
    if ref_mag.shape != est_mag.shape:
        raise ValueError(f"shape mismatch: {ref_mag.shape} vs {est_mag.shape}")
    diff = np.log10(np.maximum(ref_mag, floor)) - np.log10(np.maximum(est_mag, floor))
    return float(np.mean(np.sqrt(np.mean(diff ** 2, axis=-1))))


def lsd(ref, est, n_fft: int = LSD_N_FFT, hop: int = LSD_HOP, floor: float = 1e-8) -> float:
    ref, est = np.asarray(ref, float), np.asarray(est, float)
    if ref.shape != est.shape:
        raise ValueError(f"length mismatch: {ref.shape} vs {est.shape}")
    return lsd_from_magnitudes(_mag(ref, n_fft, hop), _mag(est, n_fft, hop), floor)


def si_snr(ref, est) -> float:
    """Scale-invariant SNR in dB, capped at 80 dB."""
    ref, est = np.asarray(ref, float), np.asarray(est, float)
    if ref.shape != est.shape:
        raise ValueError(f"length mismatch: {ref.shape} vs {est.shape}")
    ref = ref - ref.mean()
    est = est - est.mean()
    energy = np.dot(ref, ref)
    if energy == 0:
        raise ValueError("reference has zero energy")
    target = np.dot(est, ref) / energy * ref
    residual = est - target
    num, den = np.dot(target, target), np.dot(residual, residual)
    if den <= num * 10 ** (-SI_SNR_CAP_DB / 10):
        return SI_SNR_CAP_DB
    if num == 0:
        return -SI_SNR_CAP_DB
    return float(min(SI_SNR_CAP_DB, 10 * math.log10(num / den)))


@dataclass
class EvalReport:
    rows: List[Dict[str, Union[str, float]]]
    means: Dict[str, float] = field(default_factory=dict)
    stds: Dict[str, float] = field(default_factory=dict)

    METRICS = ("lsd", "si_snr")

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: str(r["path"]))
        for m in self.METRICS:
            vals = np.array([r[m] for r in self.rows], dtype=float)
            self.means[m] = float(vals.mean()) if len(vals) else math.nan
            self.stds[m] = float(vals.std()) if len(vals) else math.nan

    def to_text(self) -> str:
        lines = [f"# lsd: stft {LSD_N_FFT}/{LSD_HOP} hann, log10, floor 1e-8 (convention)",
                 "path\tlsd\tsi_snr"]
        lines += [f"{r['path']}\t{r['lsd']:.6f}\t{r['si_snr']:.6f}" for r in self.rows]
        lines.append("# summary")
        for m in self.METRICS:
            lines.append(f"# {m}\tmean={self.means[m]:.6f}\tstd={self.stds[m]:.6f}")
        return "\n".join(lines) + "\n"


def read_pair_manifest(path) -> List[Tuple[Path, Path]]:
    """``degraded<TAB>clean`` rows (or JSON rows with those keys); relative paths resolve to the manifest dir."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not readable: {path}")
    pairs = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("{"):
            row = json.loads(line)
            deg, clean = row["degraded"], row["clean"]
        else:
            parts = [p.strip() for p in line.replace(",", "\t").split("\t") if p.strip()]
            if len(parts) < 2:
                raise ValueError(f"manifest row needs degraded and clean paths: {line!r}")
            deg, clean = parts[:2]
        pairs.append(tuple(Path(p) if Path(p).is_absolute() else path.parent / p for p in (deg, clean)))
    return pairs


Enhancer = Callable[[np.ndarray], np.ndarray]


def evaluate_corpus(enhance: Enhancer, manifest) -> EvalReport:
    """Enhance every degraded file of a pair manifest and score it against its clean reference."""
    pairs = read_pair_manifest(manifest)
    if not pairs:
        raise ValueError("manifest has no entries")
    rows = []
    for deg_path, clean_path in pairs:
        degraded, clean = dsp.read_wav(deg_path), dsp.read_wav(clean_path)
        n = min(len(degraded), len(clean))
        est = np.asarray(enhance(degraded[:n]), dtype=float)[:n]
        rows.append({"path": str(deg_path), "lsd": lsd(clean[:n], est), "si_snr": si_snr(clean[:n], est)})
    return EvalReport(rows)


def model_enhancer(model) -> Enhancer:
    from .generator import restore

    def run(w: np.ndarray) -> np.ndarray:
        return restore(w, model).double().numpy()

    return run
