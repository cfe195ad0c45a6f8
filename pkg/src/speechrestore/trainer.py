"""Adversarial training loop.

One step updates the discriminators on the LSGAN objective with the
generator output detached, then updates the generator on the weighted sum
of adversarial, feature-matching and reconstruction terms. The data pipeline
is a pure function of (seed, epoch, index), so a resumed run sees the same
batches as an uninterrupted one.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import torch
import yaml

from . import dsp, gan
from .degrade import (
    CorpusManifest, DegradationPolicy, apply_recipe, read_manifest, sample_recipe,
)
from .gan import DiscriminatorSet, LossWeights
from .generator import Generator, GeneratorConfig, save_generator

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """A loss became NaN or infinite; ``snapshot`` holds the offending report."""

    def __init__(self, step: int, snapshot: Dict[str, float]):
        bad = sorted(k for k, v in snapshot.items() if not math.isfinite(v))
        super().__init__(f"non-finite loss at step {step}: {bad}; report={snapshot}")
        self.step = step
        self.snapshot = snapshot


@dataclass
class DiscriminatorConfig:
    mrd_resolutions: List[List[int]] = field(
        default_factory=lambda: [[512, 50, 240], [1024, 120, 600], [2048, 240, 1200]])
    mrd_channels: int = 32
    cqt_bins_per_octave: List[int] = field(default_factory=lambda: [12, 24, 36])
    cqt_hops: List[int] = field(default_factory=lambda: [256, 128, 128])
    cqt_octaves: int = 8
    cqt_fmin: float = 30.0
    cqt_filter_scale: float = 0.5
    cqt_filters: int = 32

    def build(self) -> DiscriminatorSet:
        mrd = gan.MultiResolutionDiscriminator([tuple(r) for r in self.mrd_resolutions], self.mrd_channels)
        cqtd = gan.MultiScaleSubbandCQTDiscriminator(
            self.cqt_bins_per_octave, self.cqt_hops, self.cqt_octaves, self.cqt_fmin,
            self.cqt_filter_scale, self.cqt_filters)
        return DiscriminatorSet(mrd, cqtd)


@dataclass
class TrainConfig:
    segment: int = 24000
    batch: int = 8
    epochs: int = 100
    lr: float = 2e-4
    betas: Tuple[float, float] = (0.8, 0.99)
    gamma: float = 0.99
    weight_decay: float = 0.01
    seed: int = 0
    max_items: Optional[int] = None
    ckpt_every: int = 0          # steps; 0 -> end of each epoch only
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    policy: DegradationPolicy = field(default_factory=DegradationPolicy)

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.segment % self.generator.hop:
            raise ValueError(f"segment {self.segment} is not a multiple of hop {self.generator.hop}")
        if self.batch < 1 or self.epochs < 0:
            raise ValueError("batch must be >= 1 and epochs >= 0")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Small preset: 2 epochs over at most 50 items, batch 2."""
        base = dict(epochs=2, max_items=50, batch=2)
        base.update(overrides)
        return cls(**base)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.gamma ** epoch

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys {sorted(unknown)}")
        if "generator" in d:
            d["generator"] = GeneratorConfig.from_dict(d["generator"])
        if "discriminator" in d:
            d["discriminator"] = DiscriminatorConfig(**d["discriminator"])
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        if "policy" in d:
            p = {k: tuple(v) if isinstance(v, list) else v for k, v in d["policy"].items()}
            d["policy"] = DegradationPolicy(**p)
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()) or {})


# --- data --------------------------------------------------------------------


def make_segments(clean: np.ndarray, degraded: np.ndarray, segment_len: int,
                  seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Crop both signals at one seeded offset, or zero-pad both at the end."""
    if len(clean) != len(degraded):
        raise ValueError(f"length mismatch: {len(clean)} vs {len(degraded)}")
    n = len(clean)
    if n <= segment_len:
        pad = segment_len - n
        return np.pad(clean, (0, pad)), np.pad(degraded, (0, pad))
    start = int(np.random.default_rng(seed).integers(0, n - segment_len + 1))
    return clean[start:start + segment_len], degraded[start:start + segment_len]


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass
class TrainingData:
    """Clean files plus noise/RIR pools, degraded on the fly."""

    clean: List[np.ndarray]
    noise_pool: List[np.ndarray]
    rir_pool: List[np.ndarray]

    @classmethod
    def from_manifest(cls, manifest: CorpusManifest, max_items: Optional[int] = None) -> "TrainingData":
        paths = manifest.clean_paths[:max_items] if max_items else manifest.clean_paths
        return cls([dsp.read_wav(p) for p in paths],
                   [dsp.read_wav(p) for p in manifest.noise_paths],
                   [dsp.read_wav(p) for p in manifest.rir_paths])

    def policy(self, policy: DegradationPolicy) -> DegradationPolicy:
        """Switch off kernels whose source pool is empty."""
        probs = dict(policy.probabilities)
        if not self.noise_pool:
            probs["noise"] = 0.0
        if not self.rir_pool:
            probs["reverb"] = 0.0
        return replace(policy, probabilities=probs)

    def item(self, cfg: TrainConfig, epoch: int, index: int) -> Tuple[np.ndarray, np.ndarray]:
        s = _seed(cfg.seed, epoch, index)
        recipe = sample_recipe(s, self.policy(cfg.policy))
        degraded, _ = apply_recipe(self.clean[index], recipe, self.noise_pool, self.rir_pool)
        return make_segments(self.clean[index], degraded, cfg.segment, s)

    def batches(self, cfg: TrainConfig, epoch: int) -> Iterator[Tuple[torch.Tensor, torch.Tensor]]:
        order = np.random.default_rng(_seed(cfg.seed, epoch)).permutation(len(self.clean))
        for b in range(0, len(order), cfg.batch):
            pairs = [self.item(cfg, epoch, int(i)) for i in order[b:b + cfg.batch]]
            clean = torch.from_numpy(np.stack([p[0] for p in pairs])).float()
            degraded = torch.from_numpy(np.stack([p[1] for p in pairs])).float()
            yield clean, degraded


# --- one step ----------------------------------------------------------------


def reconstruction_terms(out: Dict[str, torch.Tensor], clean: torch.Tensor,
                         G: Generator) -> Dict[str, torch.Tensor]:
    cfg = G.cfg
    t_cmag, t_phase = G.analyze(clean)
    pred_spec = dsp.polar(out["cmag"], out["phase"])
    return {
        "mag": gan.mag_loss(out["cmag"], t_cmag),
        "awp": gan.anti_wrap_phase_loss(out["phase"], t_phase),
        "con": gan.consistency_loss(out["cmag"], out["phase"], cfg.stft, cfg.compress),
        "ri": gan.complex_loss(pred_spec, dsp.polar(t_cmag, t_phase)),
        "mel": gan.multiscale_mel_loss(out["wave"], clean),
    }


def reconstruction_loss(report: Dict[str, float], weights: LossWeights) -> float:
    w = asdict(weights)
    return sum(w[k] * report[k] for k in gan.RECONSTRUCTION_TERMS)


def _check_finite(step: int, report: Dict[str, float]) -> None:
    if not all(math.isfinite(v) for v in report.values()):
        raise TrainingDiverged(step, report)


def train_step(batch: Tuple[torch.Tensor, torch.Tensor], G: Generator, D: DiscriminatorSet,
               opt_g: torch.optim.Optimizer, opt_d: torch.optim.Optimizer,
               weights: LossWeights = LossWeights(), step: int = 0) -> Dict[str, float]:
    """Discriminator update, then generator update. Returns every loss term."""
    clean, degraded = batch
    G.train()
    D.train()
    out = G.restore_full(degraded)

    # discriminators: the generator output is detached
    opt_d.zero_grad(set_to_none=True)
    real = D(clean)
    fake = D(out["wave"].detach())
    loss_d = gan.adv_loss_discriminator(real.scores, fake.scores)
    if not torch.isfinite(loss_d):
        raise TrainingDiverged(step, {"disc": float(loss_d.detach())})
    loss_d.backward()
    opt_d.step()

    # generator: discriminator parameters are frozen for this pass
    opt_g.zero_grad(set_to_none=True)
    D.requires_grad_(False)
    try:
        with torch.no_grad():
            real = D(clean)
        fake = D(out["wave"])
        terms = reconstruction_terms(out, clean, G)
        terms["adv"] = gan.adv_loss_generator(fake.scores)
        terms["fm"] = gan.feature_matching_loss(real.features, fake.features)
        total, report = gan.generator_objective(terms, weights)
        report["disc"] = float(loss_d.detach())
        report["recon"] = reconstruction_loss(report, weights)
        _check_finite(step, report)
        total.backward()
        opt_g.step()
    finally:
        D.requires_grad_(True)
    return report


# --- trainer -----------------------------------------------------------------


def parameter_checksum(module: torch.nn.Module) -> float:
    with torch.no_grad():
        return float(sum(p.double().sum() + p.double().abs().sum() for p in module.parameters()))


class Trainer:
    def __init__(self, cfg: TrainConfig, out_dir=None):
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir is not None else None
        torch.manual_seed(cfg.seed)
        self.G = Generator(cfg.generator)
        self.D = cfg.discriminator.build()
        kw = dict(lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
        self.opt_g = torch.optim.AdamW(self.G.parameters(), **kw)
        self.opt_d = torch.optim.AdamW(self.D.parameters(), **kw)
        self.sched_g = torch.optim.lr_scheduler.ExponentialLR(self.opt_g, cfg.gamma)
        self.sched_d = torch.optim.lr_scheduler.ExponentialLR(self.opt_d, cfg.gamma)
        self.step = 0
        self.epoch = 0
        self.history: List[Dict[str, float]] = []

    def train_step(self, clean: torch.Tensor, degraded: torch.Tensor) -> Dict[str, float]:
        report = train_step((clean, degraded), self.G, self.D, self.opt_g, self.opt_d,
                            self.cfg.weights, self.step)
        self.step += 1
        report = {"step": self.step, "epoch": self.epoch, **report}
        self.history.append(report)
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            with open(self.out_dir / "metrics.jsonl", "a") as fh:
                fh.write(json.dumps(report, sort_keys=True) + "\n")
            if self.cfg.ckpt_every and self.step % self.cfg.ckpt_every == 0:
                self.save()
        return report

    def end_epoch(self) -> None:
        self.sched_g.step()
        self.sched_d.step()
        self.epoch += 1

    def run_epoch(self, data: TrainingData) -> List[Dict[str, float]]:
        reports = [self.train_step(c, d) for c, d in data.batches(self.cfg, self.epoch)]
        self.end_epoch()
        if self.out_dir is not None:
            self.save()
        return reports

    @property
    def lr(self) -> float:
        return self.opt_g.param_groups[0]["lr"]

    def save(self, directory=None) -> Path:
        directory = Path(directory) if directory is not None else self.out_dir / f"ckpt_{self.step}"
        directory.mkdir(parents=True, exist_ok=True)
        save_generator(directory / "generator.pt", self.G, self.step)
        torch.save(self.D.state_dict(), directory / "discriminators.pt")
        torch.save({
            "opt_g": self.opt_g.state_dict(), "opt_d": self.opt_d.state_dict(),
            "sched_g": self.sched_g.state_dict(), "sched_d": self.sched_d.state_dict(),
            "step": self.step, "epoch": self.epoch,
        }, directory / "optimizers.pt")
        self.cfg.save(directory / "config.yaml")
        return directory

    @classmethod
    def resume(cls, directory, out_dir=None) -> "Trainer":
        directory = Path(directory)
        trainer = cls(TrainConfig.load(directory / "config.yaml"), out_dir)
        payload = torch.load(directory / "generator.pt", map_location="cpu", weights_only=False)
        trainer.G.load_state_dict(payload["generator"])
        trainer.D.load_state_dict(torch.load(directory / "discriminators.pt", map_location="cpu"))
        state = torch.load(directory / "optimizers.pt", map_location="cpu", weights_only=False)
        trainer.opt_g.load_state_dict(state["opt_g"])
        trainer.opt_d.load_state_dict(state["opt_d"])
        trainer.sched_g.load_state_dict(state["sched_g"])
        trainer.sched_d.load_state_dict(state["sched_d"])
        trainer.step, trainer.epoch = state["step"], state["epoch"]
        return trainer


def load_manifests(clean_manifest, noise_manifest=None, rir_manifest=None) -> CorpusManifest:
    """Read and validate manifests; raises before any training happens."""
    return CorpusManifest(
        read_manifest(clean_manifest),
        read_manifest(noise_manifest) if noise_manifest else [],
        read_manifest(rir_manifest) if rir_manifest else [],
    )


def run_training(manifest: CorpusManifest, cfg: TrainConfig, out_dir,
                 resume_from=None) -> List[Path]:
    """Train for ``cfg.epochs`` epochs; returns the checkpoint directories written."""
    data = TrainingData.from_manifest(manifest, cfg.max_items)
    trainer = Trainer.resume(resume_from, out_dir) if resume_from else Trainer(cfg, out_dir)
    written = []
    while trainer.epoch < trainer.cfg.epochs:
        reports = trainer.run_epoch(data)
        written.append(Path(out_dir) / f"ckpt_{trainer.step}")
        if reports:
            log.info("epoch %d done: step %d, total %.4f", trainer.epoch, trainer.step,
                     reports[-1]["total"])
    return written
