import numpy as np
import pytest
import torch

from speechrestore.generator import Generator, GeneratorConfig
from speechrestore.trainer import DiscriminatorConfig, TrainConfig

SR = 16000


def synthetic_speech(n: int = 16000, seed: int = 0) -> np.ndarray:
    """Harmonic tone with a gliding pitch, a syllable-rate envelope and a breath-noise floor."""
    rng = np.random.default_rng(seed)
    t = np.arange(n) / SR
    f0 = 130 + 40 * np.sin(2 * np.pi * 1.3 * t)
    phase = 2 * np.pi * np.cumsum(f0) / SR
    voiced = sum(np.sin(k * phase + rng.uniform(0, 2 * np.pi)) * np.exp(-k / 12)
                 for k in range(1, 40) if k * f0.max() < 7800)
    envelope = 0.3 + 0.7 * np.sin(2 * np.pi * 2.5 * t) ** 2
    breath = np.convolve(rng.standard_normal(n), np.ones(4) / 4, "same") * 0.15
    x = voiced * envelope + breath
    return 0.5 * x / np.abs(x).max()


def tiny_generator_config(**kw) -> GeneratorConfig:
    base = dict(channels=8, n_blocks=1, dense_depth=2, d_state=4)
    base.update(kw)
    return GeneratorConfig(**base)


def tiny_train_config(**kw) -> TrainConfig:
    base = dict(segment=16000, batch=1, generator=tiny_generator_config(),
                discriminator=DiscriminatorConfig(mrd_channels=4, cqt_filters=4))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def speech():
    return synthetic_speech()


@pytest.fixture
def tiny_generator():
    torch.manual_seed(0)
    return Generator(tiny_generator_config()).eval()


# --- acceptance summary ---------------------------------------------------------

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
