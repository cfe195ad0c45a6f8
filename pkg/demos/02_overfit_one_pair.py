"""Overfit a small generator on a single degraded/clean pair.

A sanity check on the whole training step: discriminator update on the
LSGAN objective, then generator update on adversarial, feature-matching
and the five reconstruction terms. The reconstruction sum should fall
steadily, to about a tenth of its first value by step 500. At this
learning rate a late spike is possible. The default run is
shorter so the demo finishes in a few minutes on a CPU.

    python demos/02_overfit_one_pair.py [steps]
"""
import sys

import numpy as np
import torch

from speechrestore import degrade
from speechrestore.generator import GeneratorConfig
from speechrestore.trainer import DiscriminatorConfig, TrainConfig, Trainer

from _signals import voiced

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 60

cfg = TrainConfig(
    segment=16000, batch=1, lr=1e-3, seed=0,
    generator=GeneratorConfig(channels=16, n_blocks=1, dense_depth=2, d_state=8),
    discriminator=DiscriminatorConfig(mrd_channels=8, cqt_filters=8),
)
clean = voiced(16000)
noisy = degrade.add_noise(clean, np.random.default_rng(0).standard_normal(16000), 10.0)

trainer = Trainer(cfg)
c = torch.from_numpy(clean)[None].float()
d = torch.from_numpy(noisy)[None].float()

first = None
for i in range(steps):
    r = trainer.train_step(c, d)
    first = first or r["recon"]
    if i % 10 == 0 or i == steps - 1:
        print(f"step {r['step']:4d}  recon {r['recon']:.3f} ({r['recon'] / first:.2f}x)  "
              f"mag {r['mag']:.3f}  phase {r['awp']:.3f}  mel {r['mel']:.3f}  "
              f"adv {r['adv']:.3f}  disc {r['disc']:.3f}")
