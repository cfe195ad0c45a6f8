"""Seeded simulation of noise, reverberation, bandwidth limitation and clipping.

Waveforms here are plain float64 numpy arrays. A :class:`DegradationRecipe`
records every random choice, so ``apply_recipe(clean, recipe, ...)`` is a pure
function and a recipe log is enough to regenerate any training pair.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal as sps

from .dsp import SAMPLE_RATE

KINDS = ("reverb", "noise", "bandwidth", "clip")
FAMILIES = ("chebyshev1", "butterworth")


def _power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def _fit_length(noise: np.ndarray, n: int) -> np.ndarray:
    if len(noise) < n:
        noise = np.tile(noise, -(-n // len(noise)))
    return noise[:n]


def noise_gain(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    """Gain ``g`` such that ``clean + g * noise`` has the requested SNR."""
    p_c, p_n = _power(clean), _power(noise)
    if p_c <= 0 or p_n <= 0:
        raise ValueError("clean and noise must both have nonzero power")
    return float(10.0 ** (-snr_db / 20.0) * np.sqrt(p_c / p_n))


def add_noise(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    clean = np.asarray(clean, dtype=np.float64)
    noise = _fit_length(np.asarray(noise, dtype=np.float64), len(clean))
    return clean + noise_gain(clean, noise, snr_db) * noise


def reverberate(clean: np.ndarray, rir: np.ndarray) -> np.ndarray:
    """Convolve with ``rir``, align the direct path to sample 0, match clean's peak."""
    clean = np.asarray(clean, dtype=np.float64)
    rir = np.asarray(rir, dtype=np.float64)
    if rir.size == 0 or not np.any(rir):
        raise ValueError("room impulse response is empty or all zeros")
    direct = int(np.argmax(np.abs(rir)))
    wet = sps.fftconvolve(clean, rir)[direct:direct + len(clean)]
    peak_wet = np.max(np.abs(wet))
    peak_clean = np.max(np.abs(clean))
    if peak_wet == 0:
        return wet
    return wet * (peak_clean / peak_wet)


def design_lowpass(cutoff_hz: float, family: str = "butterworth", order: int = 8,
                   ripple_db: float = 1.0, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    if not 0 < cutoff_hz < sample_rate / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz outside (0, {sample_rate / 2})")
    if not 2 <= order <= 8:
        raise ValueError("filter order must lie in [2, 8]")
    if family == "butterworth":
        z, p, k = sps.butter(order, cutoff_hz, btype="low", fs=sample_rate, output="zpk")
    elif family == "chebyshev1":
        z, p, k = sps.cheby1(order, ripple_db, cutoff_hz, btype="low", fs=sample_rate, output="zpk")
    else:
        raise ValueError(f"unknown filter family {family!r}")
    if np.any(np.abs(p) >= 1.0):
        raise ValueError("designed filter is unstable")
    return sps.zpk2sos(z, p, k)


def bandwidth_limit(clean: np.ndarray, cutoff_hz: float, family: str = "butterworth",
                    order: int = 8, ripple_db: float = 1.0) -> np.ndarray:
    sos = design_lowpass(cutoff_hz, family, order, ripple_db)
    return sps.sosfilt(sos, np.asarray(clean, dtype=np.float64))


def clip_waveform(clean: np.ndarray, alpha_min: float, alpha_max: float) -> np.ndarray:
    if not alpha_min < alpha_max:
        raise ValueError("alpha_min must be below alpha_max")
    return np.clip(np.asarray(clean, dtype=np.float64), alpha_min, alpha_max)


def peak_limit(x: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(x)) if len(x) else 0.0
    return x / peak if peak > 1.0 else x


# --- recipes -----------------------------------------------------------------


@dataclass
class DegradationStep:
    kind: str
    params: Dict[str, float]


@dataclass
class DegradationRecipe:
    steps: List[DegradationStep] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        kinds = [s.kind for s in self.steps]
        for k in kinds:
            if k not in KINDS:
                raise ValueError(f"unknown degradation kind {k!r}")
        if len(set(kinds)) != len(kinds):
            raise ValueError("each degradation kind may appear at most once")
        for s in self.steps:
            _validate_step(s)

    def get(self, kind: str) -> Optional[DegradationStep]:
        return next((s for s in self.steps if s.kind == kind), None)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationRecipe":
        return cls([DegradationStep(**s) for s in d["steps"]], int(d["seed"]))


def _validate_step(s: DegradationStep) -> None:
    p = s.params
    if s.kind == "noise" and not -15.0 <= p["snr_db"] <= 20.0:
        raise ValueError(f"SNR {p['snr_db']} dB outside [-15, 20]")
    if s.kind == "bandwidth":
        if not 1000.0 <= p["cutoff_hz"] <= 7000.0:
            raise ValueError(f"cutoff {p['cutoff_hz']} Hz outside [1000, 7000]")
        if not 2 <= int(p["order"]) <= 8:
            raise ValueError("filter order outside [2, 8]")
        if p["family"] not in FAMILIES:
            raise ValueError(f"unknown filter family {p['family']!r}")
    if s.kind == "clip" and not p["alpha_min"] < 0 < p["alpha_max"]:
        raise ValueError("clip thresholds must satisfy alpha_min < 0 < alpha_max")


@dataclass
class DegradationPolicy:
    """Per-kernel application probabilities and parameter ranges."""

    probabilities: Dict[str, float] = field(
        default_factory=lambda: {k: 0.5 for k in KINDS}
    )
    snr_db: Tuple[float, float] = (-10.0, 20.0)
    cutoff_hz: Tuple[float, float] = (2000.0, 7000.0)
    order: Tuple[int, int] = (2, 8)
    families: Tuple[str, ...] = FAMILIES
    ripple_db: float = 1.0
    alpha_max: Tuple[float, float] = (0.1, 0.8)
    alpha_min: Tuple[float, float] = (-0.8, -0.1)


def sample_recipe(seed: int, policy: DegradationPolicy) -> DegradationRecipe:
    if not policy.probabilities:
        raise ValueError("policy defines no degradation kernels")
    rng = np.random.default_rng(seed)
    steps = []
    for kind in KINDS:
        # always draw so one kernel's probability never shifts another's parameters
        fire = rng.random() < policy.probabilities.get(kind, 0.0)
        u = rng.random(4)
        if not fire:
            continue
        if kind == "reverb":
            params = {"pick": u[0]}
        elif kind == "noise":
            lo, hi = policy.snr_db
            params = {"snr_db": lo + (hi - lo) * u[0], "pick": u[1], "offset": u[2]}
        elif kind == "bandwidth":
            lo, hi = policy.cutoff_hz
            olo, ohi = policy.order
            params = {
                "cutoff_hz": lo + (hi - lo) * u[0],
                "order": int(olo + min(int(u[1] * (ohi - olo + 1)), ohi - olo)),
                "family": policy.families[min(int(u[2] * len(policy.families)), len(policy.families) - 1)],
                "ripple_db": policy.ripple_db,
            }
        else:
            (alo, ahi), (blo, bhi) = policy.alpha_min, policy.alpha_max
            params = {"alpha_min": alo + (ahi - alo) * u[0], "alpha_max": blo + (bhi - blo) * u[1]}
        steps.append(DegradationStep(kind, params))
    return DegradationRecipe(steps, int(seed))


def _pick(pool: Sequence[np.ndarray], u: float, what: str) -> np.ndarray:
    if not pool:
        raise ValueError(f"recipe needs a {what} but the {what} pool is empty")
    return np.asarray(pool[min(int(u * len(pool)), len(pool) - 1)], dtype=np.float64)


def apply_recipe(clean: np.ndarray, recipe: DegradationRecipe,
                 noise_pool: Sequence[np.ndarray] = (),
                 rir_pool: Sequence[np.ndarray] = ()) -> Tuple[np.ndarray, DegradationRecipe]:
    """Apply ``recipe`` in the fixed order reverb -> noise -> bandwidth -> clip."""
    x = np.asarray(clean, dtype=np.float64).copy()
    if (s := recipe.get("reverb")) is not None:
        x = reverberate(x, _pick(rir_pool, s.params["pick"], "RIR"))
    if (s := recipe.get("noise")) is not None:
        noise = _pick(noise_pool, s.params["pick"], "noise")
        if len(noise) > len(x):
            start = int(s.params.get("offset", 0.0) * (len(noise) - len(x) + 1))
            noise = noise[start:start + len(x)]
        x = add_noise(x, noise, s.params["snr_db"])
    if (s := recipe.get("bandwidth")) is not None:
        p = s.params
        x = bandwidth_limit(x, p["cutoff_hz"], p["family"], int(p["order"]), p.get("ripple_db", 1.0))
    if (s := recipe.get("clip")) is not None:
        x = clip_waveform(x, s.params["alpha_min"], s.params["alpha_max"])
    return peak_limit(x), recipe


def item_seed(global_seed: int, index: int) -> int:
    """Order-independent per-item seed."""
    return int(np.random.SeedSequence([global_seed, index]).generate_state(1)[0])


# --- manifests ---------------------------------------------------------------


@dataclass
class CorpusManifest:
    clean_paths: List[Path]
    noise_paths: List[Path] = field(default_factory=list)
    rir_paths: List[Path] = field(default_factory=list)
    split: str = "train"

    def __post_init__(self):
        if not self.clean_paths:
            raise ValueError("manifest has no clean files")
        for p in [*self.clean_paths, *self.noise_paths, *self.rir_paths]:
            if not Path(p).is_file():
                raise FileNotFoundError(f"manifest entry not readable: {p}")


def read_manifest(path) -> List[Path]:
    """Paths from a manifest: one path per line, ``path<TAB|,>duration`` rows, or JSON rows."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not readable: {path}")
    out = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("{"):
            entry = json.loads(line)["path"]
        else:
            entry = line.split("\t")[0].split(",")[0].strip()
        p = Path(entry)
        out.append(p if p.is_absolute() else path.parent / p)
    return out
