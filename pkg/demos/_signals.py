"""Synthetic voiced signal shared by the demos (no audio corpus ships with the repo)."""
import numpy as np

SR = 16000


def voiced(n: int = SR, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    t = np.arange(n) / SR
    f0 = 130 + 40 * np.sin(2 * np.pi * 1.3 * t)
    phase = 2 * np.pi * np.cumsum(f0) / SR
    x = sum(np.sin(k * phase + rng.uniform(0, 2 * np.pi)) * np.exp(-k / 12)
            for k in range(1, 40) if k * f0.max() < 7800)
    x = x * (0.3 + 0.7 * np.sin(2 * np.pi * 2.5 * t) ** 2)
    x = x + np.convolve(rng.standard_normal(n), np.ones(4) / 4, "same") * 0.15
    return 0.5 * x / np.abs(x).max()
