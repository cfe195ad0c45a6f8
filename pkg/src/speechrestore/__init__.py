"""General speech restoration: degradation simulation, a multi-resolution
time-frequency dual-path generator, adversarial training and analysis tools."""
from .dsp import StftConfig, istft, stft
from .generator import Generator, GeneratorConfig, load_generator, restore

__all__ = ["Generator", "GeneratorConfig", "StftConfig", "istft", "load_generator", "restore", "stft"]
__version__ = "0.1.0"
