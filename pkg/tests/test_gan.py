import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from scipy.signal import get_window

from speechrestore import dsp, gan
from speechrestore.dsp import StftConfig

D64 = dict(dtype=torch.float64)


def rel_gradcheck(fn, *inputs):
    args = [x.detach().clone().requires_grad_() for x in inputs]
    return torch.autograd.gradcheck(fn, args, eps=1e-6, atol=1e-8, rtol=1e-4)


# --- adversarial ------------------------------------------------------------------

@pytest.mark.parametrize("score,expected", [(1.0, 0.0), (0.5, 0.25), (0.0, 1.0)])
def test_generator_lsgan(score, expected):
    scores = [torch.full((3, 7), score), torch.full((1, 4), score)]
    assert gan.adv_loss_generator(scores).item() == expected


@pytest.mark.parametrize("real,fake,expected", [(1.0, 0.0, 0.0), (0.0, 1.0, 2.0), (0.5, 0.5, 0.5)])
def test_discriminator_lsgan(real, fake, expected):
    r = [torch.full((2, 5), real)] * 3
    f = [torch.full((2, 5), fake)] * 3
    assert gan.adv_loss_discriminator(r, f).item() == expected


def test_adversarial_errors():
    with pytest.raises(ValueError):
        gan.adv_loss_generator([])
    with pytest.raises(ValueError):
        gan.adv_loss_discriminator([torch.zeros(1)], [])


def test_adversarial_losses_ignore_order():
    torch.manual_seed(0)
    r = [torch.randn(2, n) for n in (3, 5, 8)]
    f = [torch.randn(2, n) for n in (3, 5, 8)]
    assert torch.isclose(gan.adv_loss_generator(f), gan.adv_loss_generator(f[::-1]))
    assert torch.isclose(gan.adv_loss_discriminator(r, f), gan.adv_loss_discriminator(r[::-1], f[::-1]))


# --- anti-wrapping ----------------------------------------------------------------

def test_anti_wrap_values():
    t = torch.tensor([2 * math.pi, math.pi, 1.5 * math.pi, 0.0], **D64)
    assert torch.allclose(gan.anti_wrap(t), torch.tensor([0.0, math.pi, math.pi / 2, 0.0], **D64))


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50))
def test_anti_wrap_periodic_and_even(x):
    t = torch.tensor(x, **D64)
    a = gan.anti_wrap(t)
    assert torch.isclose(a, gan.anti_wrap(t + 2 * math.pi), atol=1e-9)
    assert torch.isclose(a, gan.anti_wrap(-t), atol=1e-9)
    assert 0 <= a <= math.pi + 1e-12


def test_phase_loss_ignores_full_turns():
    p = torch.rand(5, 7, **D64) * 6 - 3
    assert gan.anti_wrap_phase_loss(p + 2 * math.pi, p) < 1e-12


def test_phase_loss_matches_three_term_oracle():
    g = torch.Generator().manual_seed(0)
    p, t = (torch.rand(4, 6, generator=g, **D64) * 6 - 3 for _ in range(2))
    aw = lambda x: np.abs(x - 2 * np.pi * np.round(x / (2 * np.pi)))  # noqa: E731
    pn, tn = p.numpy(), t.numpy()
    ip = aw(pn - tn).mean()
    gd = np.mean([aw((pn[i, j + 1] - pn[i, j]) - (tn[i, j + 1] - tn[i, j]))
                  for i in range(4) for j in range(5)])
    iaf = np.mean([aw((pn[i + 1, j] - pn[i, j]) - (tn[i + 1, j] - tn[i, j]))
                   for i in range(3) for j in range(6)])
    assert gan.anti_wrap_phase_loss(p, t).item() == pytest.approx(ip + gd + iaf, abs=1e-12)


# --- magnitude / complex ----------------------------------------------------------

def test_mag_loss():
    x = torch.rand(3, 4, 5, **D64)
    assert gan.mag_loss(x, x) == 0
    assert gan.mag_loss(x + 1, x).item() == pytest.approx(1.0)
    y = torch.rand(3, 4, 5, **D64)
    oracle = sum(abs(a - b) for a, b in zip(x.flatten().tolist(), y.flatten().tolist())) / 60
    assert gan.mag_loss(x, y).item() == pytest.approx(oracle, abs=1e-14)


def test_complex_loss():
    z = torch.randn(4, 5, dtype=torch.complex128)
    assert gan.complex_loss(z, z) == 0
    assert gan.complex_loss(z + (1 + 1j), z).item() == pytest.approx(1.0)
    w = torch.randn(4, 5, dtype=torch.complex128)
    d = (z - w).numpy()
    oracle = 0.5 * (np.mean(d.real ** 2) + np.mean(d.imag ** 2))
    assert gan.complex_loss(z, w).item() == pytest.approx(oracle, abs=1e-14)


# --- consistency ------------------------------------------------------------------

def test_consistent_spectrum_has_no_consistency_loss():
    cfg = StftConfig()
    w = torch.randn(1, 3000, **D64) * 0.1
    mag, phase = dsp.magnitude_phase(dsp.stft(w, cfg))
    assert gan.consistency_loss(dsp.compress_magnitude(mag), phase, cfg).item() < 1e-10


def test_projection_reduces_inconsistency():
    torch.manual_seed(0)
    cfg = StftConfig()
    cmag, phase = torch.rand(1, 31, 201, **D64), (torch.rand(1, 31, 201, **D64) * 2 - 1) * math.pi
    before = gan.consistency_loss(cmag, phase, cfg)
    assert before > 0
    wave = dsp.istft(dsp.polar(dsp.decompress_magnitude(cmag), phase), cfg, 3000)
    proj = gan.project_compressed(wave, cfg)
    after = gan.consistency_loss(proj.abs(), proj.angle(), cfg)
    assert after < 1e-10 < before


# --- mel --------------------------------------------------------------------------

def mel_oracle(x, n_fft, n_mels):
    hop = n_fft // 4
    xp = np.pad(x, n_fft // 2, mode="reflect")
    win = get_window("hann", n_fft)
    frames = np.stack([xp[i:i + n_fft] * win for i in range(0, len(xp) - n_fft + 1, hop)])
    mag = np.abs(np.fft.rfft(frames, axis=-1))
    return np.log(np.maximum(mag @ dsp.mel_filterbank(n_fft, n_mels).T, dsp.MEL_FLOOR))


def test_mel_loss_two_scale_oracle():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(800), rng.standard_normal(800)
    expected = sum(np.mean(np.abs(mel_oracle(a, n, m) - mel_oracle(b, n, m))) for n, m in ((32, 5), (64, 10)))
    got = gan.multiscale_mel_loss(torch.tensor(a), torch.tensor(b), windows=(32, 64), n_mels=(5, 10))
    assert got.item() == pytest.approx(expected, rel=1e-9)


def test_mel_loss_basic_cases():
    w = torch.randn(1, 4000, **D64)
    assert gan.multiscale_mel_loss(w, w) == 0
    assert gan.multiscale_mel_loss(0.5 * w, w) > 0
    assert len(gan.MEL_WINDOWS) == 7 and gan.MEL_WINDOWS[0] == 32 and gan.MEL_WINDOWS[-1] == 2048


# --- feature matching -------------------------------------------------------------

def test_feature_matching():
    torch.manual_seed(0)
    real = [[torch.randn(2, 3), torch.randn(4)], [torch.randn(5)]]
    fake = [[torch.randn(2, 3), torch.randn(4)], [torch.randn(5)]]
    assert gan.feature_matching_loss(real, real) == 0
    oracle = np.mean([np.mean(np.abs(r.numpy() - f.numpy()))
                      for rs, fs in zip(real, fake) for r, f in zip(rs, fs)])
    assert gan.feature_matching_loss(real, fake).item() == pytest.approx(oracle, rel=1e-6)
    with pytest.raises(ValueError):
        gan.feature_matching_loss(real, [[torch.randn(2, 3)], [torch.randn(5)]])
    with pytest.raises(ValueError):
        gan.feature_matching_loss(real, fake[:1])


def test_feature_matching_does_not_push_real_features():
    r = torch.randn(3, requires_grad=True)
    f = torch.randn(3, requires_grad=True)
    gan.feature_matching_loss([[r]], [[f]]).backward()
    assert r.grad is None and f.grad is not None


# --- objective --------------------------------------------------------------------

def test_objective_weighting():
    terms = {k: torch.tensor(float(i + 1)) for i, k in enumerate(gan.TERMS)}
    zero = gan.LossWeights(**{k: 0.0 for k in gan.TERMS})
    assert gan.generator_objective(terms, zero)[0].item() == 0
    only_mel = gan.LossWeights(**{k: 0.0 for k in gan.TERMS if k != "mel"})
    assert gan.generator_objective({"mel": torch.tensor(2.0)}, only_mel)[0].item() == pytest.approx(0.2)
    w = gan.LossWeights()
    total, report = gan.generator_objective(terms, w)
    manual = sum(getattr(w, k) * (i + 1) for i, k in enumerate(gan.TERMS))
    assert total.item() == pytest.approx(manual)
    assert all(report[k] == i + 1 for i, k in enumerate(gan.TERMS)) and report["total"] == pytest.approx(manual)


def test_default_weights_and_validation():
    w = gan.LossWeights()
    assert (w.adv, w.mag, w.awp, w.con, w.ri, w.mel, w.fm) == (1.0, 0.9, 0.3, 0.1, 0.1, 0.1, 1.0)
    with pytest.raises(ValueError):
        gan.LossWeights(mel=-0.1)
    with pytest.raises(ValueError):
        gan.generator_objective({"pesq": torch.tensor(1.0)})


def test_report_row_is_json():
    import json
    row = json.loads(gan.format_report_row(3, {"mag": 0.5, "total": 1.0}))
    assert row == {"step": 3, "mag": 0.5, "total": 1.0}


# --- discriminators ---------------------------------------------------------------

def test_mrd_outputs():
    torch.manual_seed(0)
    mrd = gan.MultiResolutionDiscriminator(channels=4)
    w = torch.randn(2, 4000)
    a, b = mrd(w), mrd(w)
    assert len(a.scores) == 3 and all(len(f) == 6 for f in a.features)
    assert all(torch.isfinite(s).all() for s in a.scores)
    assert all(torch.equal(x, y) for x, y in zip(a.scores, b.scores))
    with pytest.raises(ValueError):
        mrd(torch.randn(1, 1000))


def test_cqt_row_counts():
    for bins, rows in ((12, 96), (24, 192), (36, 288)):
        cfg = dsp.CqtConfig(bins_per_octave=bins, filter_scale=0.5)
        assert cfg.n_bins == rows


def test_cqtd_outputs():
    torch.manual_seed(0)
    cqtd = gan.MultiScaleSubbandCQTDiscriminator(filters=4)
    out = cqtd(torch.randn(1, cqtd.min_length))
    assert len(out.scores) == 3
    assert all(torch.isfinite(s).all() for s in out.scores)
    with pytest.raises(ValueError):
        cqtd(torch.randn(1, cqtd.min_length - 1))


def test_discriminator_output_validation():
    with pytest.raises(ValueError):
        gan.DiscriminatorOutput([torch.zeros(1)], [])
    with pytest.raises(ValueError):
        gan.DiscriminatorOutput([torch.zeros(1)], [[]])


# --- finite differences per loss term ---------------------------------------------

def test_gradients_of_every_loss_term():
    g = torch.Generator().manual_seed(0)
    a, b = torch.rand(2, 3, 4, generator=g, **D64), torch.rand(2, 3, 4, generator=g, **D64)
    assert rel_gradcheck(lambda s: gan.adv_loss_generator([s]), a)
    assert rel_gradcheck(lambda r, f: gan.adv_loss_discriminator([r], [f]), a, b)
    assert rel_gradcheck(lambda f: gan.feature_matching_loss([[b]], [[f]]), a)
    assert rel_gradcheck(lambda p: gan.mag_loss(p, b), a)
    assert rel_gradcheck(lambda p: gan.anti_wrap_phase_loss(p, b), a)
    assert rel_gradcheck(lambda re, im: gan.complex_loss(torch.complex(re, im), torch.complex(b, a)), a, b)
    cmag = torch.rand(1, 5, 201, generator=g, **D64) + 0.1
    phase = torch.rand(1, 5, 201, generator=g, **D64) * 4 - 2
    assert rel_gradcheck(lambda m, p: gan.consistency_loss(m, p), cmag, phase)
    w1, w2 = torch.randn(1, 300, generator=g, **D64), torch.randn(1, 300, generator=g, **D64)
    assert rel_gradcheck(lambda p: gan.multiscale_mel_loss(p, w2), w1)
