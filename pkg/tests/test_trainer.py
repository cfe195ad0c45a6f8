import json

import numpy as np
import pytest
import torch

from speechrestore import dsp
from speechrestore.trainer import (TrainConfig, Trainer, TrainingData, TrainingDiverged,
                                   load_manifests, make_segments, parameter_checksum,
                                   run_training)

from conftest import synthetic_speech, tiny_train_config


def pair(n=16000, seed=0):
    clean = synthetic_speech(n, seed)
    noisy = clean + 0.05 * np.random.default_rng(seed).standard_normal(n)
    return torch.tensor(clean[None]).float(), torch.tensor(noisy[None]).float()


def states_equal(a, b):
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.segment, cfg.batch, cfg.epochs, cfg.lr, cfg.betas, cfg.gamma) == (
        24000, 8, 100, 2e-4, (0.8, 0.99), 0.99)


def test_lr_schedule():
    cfg = TrainConfig()
    assert cfg.lr_at(0) == 2e-4
    assert cfg.lr_at(10) == pytest.approx(2e-4 * 0.99 ** 10)
    assert TrainConfig().lr_at(100) == pytest.approx(2e-4 * 0.99 ** 100)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(segment=24050)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 1e-3})


def test_config_yaml_round_trip(tmp_path):
    cfg = tiny_train_config(seed=5, lr=1e-3)
    cfg.save(tmp_path / "c.yaml")
    assert TrainConfig.load(tmp_path / "c.yaml") == cfg


def test_segments_crop_aligned_and_deterministic():
    clean = np.arange(50000, dtype=float)
    deg = clean + 0.5
    c1, d1 = make_segments(clean, deg, 24000, seed=3)
    c2, _ = make_segments(clean, deg, 24000, seed=3)
    assert len(c1) == 24000 and np.array_equal(d1 - c1, np.full(24000, 0.5))
    assert np.array_equal(c1, c2)


def test_segments_pad_short_files():
    c, d = make_segments(np.ones(100), np.ones(100), 300, seed=0)
    assert len(c) == 300 and c[:100].sum() == 100 and c[100:].sum() == 0 and np.array_equal(c, d)
    with pytest.raises(ValueError):
        make_segments(np.ones(3), np.ones(4), 10, 0)


def test_data_pipeline_is_pure():
    rng = np.random.default_rng(0)
    data = TrainingData([synthetic_speech(20000, i) for i in range(3)],
                        [rng.standard_normal(20000)], [np.exp(-np.arange(400) / 50)])
    cfg = tiny_train_config()
    a, b = data.item(cfg, 1, 2), data.item(cfg, 1, 2)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(data.item(cfg, 2, 2)[1], a[1])
    shapes = [c.shape for c, _ in data.batches(tiny_train_config(batch=2), 0)]
    assert shapes == [(2, 16000), (1, 16000)]


def test_empty_pools_switch_off_their_kernels():
    data = TrainingData([synthetic_speech(16000)], [], [])
    policy = data.policy(tiny_train_config().policy)
    assert policy.probabilities["noise"] == 0 and policy.probabilities["reverb"] == 0
    data.item(tiny_train_config(), 0, 0)


def test_discriminator_step_is_isolated():
    tr = Trainer(tiny_train_config())
    seen = {}
    d_step, g_step = tr.opt_d.step, tr.opt_g.step

    def record_d(*a, **k):
        seen["g_grads"] = [p.grad for p in tr.G.parameters()]
        seen["d_grads"] = [p.grad.clone() for p in tr.D.parameters()]
        seen["g_sum"] = parameter_checksum(tr.G)
        return d_step(*a, **k)

    def record_g(*a, **k):
        seen["d_sum"] = parameter_checksum(tr.D)
        return g_step(*a, **k)

    tr.opt_d.step, tr.opt_g.step = record_d, record_g
    g_before = parameter_checksum(tr.G)
    tr.train_step(*pair())
    # the discriminator loss never reaches the generator
    assert all(g is None for g in seen["g_grads"]) and seen["g_sum"] == g_before
    # the generator pass leaves discriminator weights and gradients alone
    assert seen["d_sum"] == parameter_checksum(tr.D)
    assert all(torch.equal(a, p.grad) for a, p in zip(seen["d_grads"], tr.D.parameters()))
    assert all(p.requires_grad for p in tr.D.parameters())
    assert parameter_checksum(tr.G) != g_before


def test_report_has_every_term(tmp_path):
    tr = Trainer(tiny_train_config(), tmp_path)
    report = tr.train_step(*pair())
    for key in ("adv", "mag", "awp", "con", "ri", "mel", "fm", "total", "disc", "recon", "step"):
        assert key in report
    rows = [json.loads(line) for line in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert rows == [report]


def test_non_finite_input_is_rejected():
    tr = Trainer(tiny_train_config())
    clean, noisy = pair()
    noisy[0, 100] = float("nan")
    with pytest.raises(ValueError):
        tr.train_step(clean, noisy)


def test_nan_aborts_with_snapshot():
    tr = Trainer(tiny_train_config())
    with torch.no_grad():
        tr.G.mag_decoder.head.log_beta[7] = float("nan")
    with pytest.raises(TrainingDiverged) as info:
        tr.train_step(*pair())
    assert info.value.step == 0 and "disc" in info.value.snapshot


def test_same_seed_same_weights():
    a, b = Trainer(tiny_train_config(seed=3)), Trainer(tiny_train_config(seed=3))
    for tr in (a, b):
        tr.train_step(*pair())
    assert states_equal(a.G.state_dict(), b.G.state_dict())
    assert states_equal(a.D.state_dict(), b.D.state_dict())
    assert not states_equal(Trainer(tiny_train_config(seed=4)).G.state_dict(),
                            Trainer(tiny_train_config(seed=3)).G.state_dict())


def test_resume_matches_uninterrupted(tmp_path):
    batches = [pair(seed=i) for i in range(3)]
    straight = Trainer(tiny_train_config())
    for i, b in enumerate(batches):
        straight.train_step(*b)
        if i == 0:
            straight.end_epoch()
    first = Trainer(tiny_train_config())
    first.train_step(*batches[0])
    first.end_epoch()
    first.train_step(*batches[1])
    resumed = Trainer.resume(first.save(tmp_path / "ck"))
    assert resumed.step == 2 and resumed.epoch == 1 and resumed.lr == pytest.approx(first.lr)
    resumed.train_step(*batches[2])
    assert states_equal(resumed.G.state_dict(), straight.G.state_dict())
    assert states_equal(resumed.D.state_dict(), straight.D.state_dict())


@pytest.mark.filterwarnings("ignore:Detected call of")
def test_lr_decays_per_epoch():
    tr = Trainer(tiny_train_config())
    tr.end_epoch()
    tr.end_epoch()
    assert tr.lr == pytest.approx(2e-4 * 0.99 ** 2)
    assert tr.opt_d.param_groups[0]["lr"] == pytest.approx(tr.lr)


def test_unreadable_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_manifests(tmp_path / "missing.txt")


def test_run_training_writes_checkpoints(tmp_path):
    wavs = []
    for i in range(2):
        p = tmp_path / f"c{i}.wav"
        dsp.write_wav(p, synthetic_speech(16000, i))
        wavs.append(p.name)
    (tmp_path / "clean.txt").write_text("\n".join(wavs) + "\n")
    cfg = tiny_train_config(batch=2, epochs=1)
    out = tmp_path / "run"
    written = run_training(load_manifests(tmp_path / "clean.txt"), cfg, out)
    assert written == [out / "ckpt_1"]
    assert sorted(p.name for p in written[0].iterdir()) == [
        "config.yaml", "discriminators.pt", "generator.pt", "optimizers.pt"]
    assert len((out / "metrics.jsonl").read_text().splitlines()) == 1
    assert TrainConfig.load(written[0] / "config.yaml").generator == cfg.generator
