"""Interpretability probes on a generator.

Four views, all on the same small model:

* top-10% gradient saliency per bottleneck resolution, and how much the
  masks overlap (IoU) across resolutions;
* a paired Wilcoxon test of the IoU between two differently seeded models;
* the ratio of gradient flowing through the global-periodic path of each
  frequency block against its local path, swept over noise level;
* the per-frequency softplus sharpness of the magnitude head.

Pass a checkpoint (file or ckpt_N directory) to inspect a trained model;
otherwise an untrained one is used, which still exercises every probe.

    python demos/03_interpretability.py [ckpt] [out_dir]   # "" skips the checkpoint
"""
import sys
from pathlib import Path

import numpy as np
import torch

from speechrestore import analysis, degrade
from speechrestore.cli import resolve_checkpoint
from speechrestore.generator import Generator, GeneratorConfig, load_generator

from _signals import voiced

out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_analysis")
out.mkdir(exist_ok=True)
cfg = GeneratorConfig(channels=16, n_blocks=2)


def untrained(seed):
    torch.manual_seed(seed)
    return Generator(cfg).eval()


ckpt = sys.argv[1] if len(sys.argv) > 1 else ""
model = load_generator(resolve_checkpoint(ckpt)) if ckpt else untrained(0)
other = untrained(1)

corpus = [voiced(16000, seed=s) for s in range(6)]
noise = np.random.default_rng(9).standard_normal(16000)
degraded = [degrade.add_noise(w, noise, 5.0) for w in corpus]

n_res = len(model.bottleneck.blocks[0].branches)
attrs = [analysis.influential_gradients(model, degraded[0], r) for r in range(n_res)]
for a in attrs:
    print(f"resolution {a.resolution}: mask {a.mask.shape}, retained {a.retained_fraction:.3f}")
analysis.plot_attributions(attrs, out / "attribution.png")


def mean_iou(m, w):
    return analysis.resolution_iou([analysis.influential_gradients(m, w, r).mask
                                    for r in range(n_res)])[1]


a_iou = [mean_iou(model, w) for w in degraded]
b_iou = [mean_iou(other, w) for w in degraded]
stat, p = analysis.wilcoxon_signed_rank(a_iou, b_iou)
print(f"mean IoU {np.mean(a_iou):.3f} vs {np.mean(b_iou):.3f}; Wilcoxon W={stat:.1f} p={p:.3f}")

report = analysis.glp_gradient_ratio(model, corpus[:2], "noise", levels=[-5.0, 5.0, 15.0])
for row in report.rows():
    print(f"SNR {row['level']:5.1f} dB: G_GP/G_L = {row['ratio']:.3f}")
analysis.plot_ratio([report], out / "glp_ratio.png")

betas = analysis.export_betas(model)
analysis.plot_betas(betas, out / "betas.png")
lo, hi = min(b for _, b in betas), max(b for _, b in betas)
print(f"softplus beta range over {len(betas)} bins: [{lo:.3f}, {hi:.3f}]")
print(f"plots in {out}/")
