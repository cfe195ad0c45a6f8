import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal as sps

from speechrestore import degrade
from speechrestore.degrade import DegradationPolicy, DegradationRecipe, DegradationStep

RNG = np.random.default_rng(0)


def snr_db(clean, degraded):
    noise = degraded - clean
    return 10 * np.log10(np.mean(clean ** 2) / np.mean(noise ** 2))


# --- noise ---------------------------------------------------------------------

def test_noise_gain_closed_forms():
    x = RNG.standard_normal(1000)
    y = x[::-1].copy()  # same power
    assert degrade.noise_gain(x, y, 0.0) == pytest.approx(1.0)
    assert degrade.noise_gain(x, y, 20.0) == pytest.approx(0.1)


@settings(max_examples=50, deadline=None)
@given(st.floats(-15, 20), st.integers(0, 10_000), st.integers(200, 3000))
def test_add_noise_hits_requested_snr(target, seed, noise_len):
    rng = np.random.default_rng(seed)
    clean = rng.standard_normal(2000) * rng.uniform(0.01, 2)
    noise = rng.standard_normal(noise_len)
    out = degrade.add_noise(clean, noise, target)
    assert abs(snr_db(clean, out) - target) < 1e-6


def test_add_noise_tiles_short_noise():
    out = degrade.add_noise(np.ones(10), np.array([1.0, -1.0, 2.0]), 0.0)
    diff = out - 1
    assert np.allclose(diff[:3], diff[3:6])


def test_add_noise_rejects_zero_power():
    with pytest.raises(ValueError):
        degrade.add_noise(np.zeros(10), np.ones(10), 0.0)
    with pytest.raises(ValueError):
        degrade.add_noise(np.ones(10), np.zeros(10), 0.0)


# --- reverb --------------------------------------------------------------------

def test_reverb_unit_impulse_is_identity():
    x = RNG.standard_normal(500)
    assert np.allclose(degrade.reverberate(x, np.array([1.0])), x)


def test_reverb_scaled_impulse_is_identity_after_peak_match():
    x = RNG.standard_normal(500)
    assert np.allclose(degrade.reverberate(x, np.array([0.5, 0, 0])), x)


def test_reverb_matches_direct_convolution():
    x = RNG.standard_normal(400)
    rir = np.zeros(161)
    rir[0], rir[160] = 1.0, 0.5
    direct = np.array([sum(x[n - k] * rir[k] for k in (0, 160) if 0 <= n - k < len(x))
                       for n in range(len(x))])
    direct *= np.abs(x).max() / np.abs(direct).max()
    assert np.allclose(degrade.reverberate(x, rir), direct)


def test_reverb_aligns_direct_path():
    x = np.zeros(100)
    x[10] = 1.0
    rir = np.zeros(50)
    rir[20] = 1.0
    assert np.argmax(degrade.reverberate(x, rir)) == 10


def test_reverb_rejects_silent_rir():
    with pytest.raises(ValueError):
        degrade.reverberate(np.ones(10), np.zeros(5))


# --- bandwidth -----------------------------------------------------------------

def band_energy_db(x, lo, hi):
    f, p = sps.welch(x, fs=16000, nperseg=1024)
    return 10 * np.log10(np.mean(p[(f >= lo) & (f <= hi)]))


def test_butterworth8_stopband_attenuation():
    x = np.random.default_rng(1).standard_normal(160000)
    y = degrade.bandwidth_limit(x, 4000, "butterworth", 8)
    passband = band_energy_db(y, 100, 3000)
    assert passband - band_energy_db(y, 6000, 8000) >= 40


def test_butterworth_dc_gain():
    y = degrade.bandwidth_limit(np.full(8000, 0.3), 3000, "butterworth", 4)
    assert abs(y[-1] - 0.3) < 1e-3


@pytest.mark.parametrize("order", [2, 4, 8])
def test_chebyshev_ripple_bounded(order):
    sos = degrade.design_lowpass(4000, "chebyshev1", order, ripple_db=1.0)
    f, h = sps.sosfreqz(sos, worN=4096, fs=16000)
    gain_db = 20 * np.log10(np.abs(h[f <= 4000]))
    assert gain_db.max() <= 1e-6 and gain_db.min() >= -1.0 - 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(10, 5000), st.floats(1000, 7000), st.sampled_from(degrade.FAMILIES), st.integers(2, 8))
def test_bandwidth_limit_preserves_length(n, cutoff, family, order):
    assert len(degrade.bandwidth_limit(np.ones(n), cutoff, family, order)) == n


def test_lowpass_design_errors():
    with pytest.raises(ValueError):
        degrade.design_lowpass(9000)
    with pytest.raises(ValueError):
        degrade.design_lowpass(4000, order=9)
    with pytest.raises(ValueError):
        degrade.design_lowpass(4000, family="elliptic")


# --- clipping ------------------------------------------------------------------

def test_clip_bounds():
    x = np.linspace(-1, 1, 1001)
    assert np.abs(degrade.clip_waveform(x, -0.5, 0.5)).max() == 0.5
    assert np.array_equal(degrade.clip_waveform(x, -2, 2), x)


def test_clip_counts_half_of_ramp():
    x = np.linspace(-1, 1, 1000, endpoint=False) + 1 / 1000
    y = degrade.clip_waveform(x, -0.5, 0.5)
    assert np.count_nonzero(y != x) == 500


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=100), st.floats(-1, -0.01), st.floats(0.01, 1))
def test_clip_idempotent(values, lo, hi):
    x = np.array(values)
    once = degrade.clip_waveform(x, lo, hi)
    assert np.array_equal(degrade.clip_waveform(once, lo, hi), once)


def test_clip_requires_ordered_thresholds():
    with pytest.raises(ValueError):
        degrade.clip_waveform(np.ones(3), 0.5, -0.5)


# --- recipes -------------------------------------------------------------------

def test_recipe_validation():
    with pytest.raises(ValueError):
        DegradationRecipe([DegradationStep("clip", {"alpha_min": -0.5, "alpha_max": 0.5})] * 2)
    with pytest.raises(ValueError):
        DegradationRecipe([DegradationStep("noise", {"snr_db": 30.0, "pick": 0.0})])
    with pytest.raises(ValueError):
        DegradationRecipe([DegradationStep("codec", {})])


def test_zero_probabilities_give_empty_recipe():
    policy = DegradationPolicy(probabilities={k: 0.0 for k in degrade.KINDS})
    assert degrade.sample_recipe(3, policy).steps == []


def test_empty_policy_is_an_error():
    with pytest.raises(ValueError):
        degrade.sample_recipe(0, DegradationPolicy(probabilities={}))


def test_sampling_is_deterministic_and_in_range():
    policy = DegradationPolicy()
    for seed in range(50):
        a, b = degrade.sample_recipe(seed, policy), degrade.sample_recipe(seed, policy)
        assert a == b
        if (s := a.get("noise")) is not None:
            assert -10 <= s.params["snr_db"] <= 20
        if (s := a.get("bandwidth")) is not None:
            assert 2000 <= s.params["cutoff_hz"] <= 7000 and 2 <= s.params["order"] <= 8


def test_noise_application_rate():
    policy = DegradationPolicy()
    hits = sum(degrade.sample_recipe(s, policy).get("noise") is not None for s in range(10_000))
    assert 0.47 <= hits / 10_000 <= 0.53


def test_recipe_serialization_round_trip():
    r = degrade.sample_recipe(11, DegradationPolicy(probabilities={k: 1.0 for k in degrade.KINDS}))
    assert DegradationRecipe.from_dict(json.loads(json.dumps(r.to_dict()))) == r


def test_empty_recipe_is_identity():
    x = 0.5 * RNG.standard_normal(300).clip(-1, 1)
    out, _ = degrade.apply_recipe(x, DegradationRecipe([], 0))
    assert np.array_equal(out, x)


def test_clip_only_recipe_matches_direct_clip():
    x = np.sin(np.linspace(0, 20, 500))
    r = DegradationRecipe([DegradationStep("clip", {"alpha_min": -0.5, "alpha_max": 0.5})])
    assert np.array_equal(degrade.apply_recipe(x, r)[0], degrade.clip_waveform(x, -0.5, 0.5))


def test_full_recipe_matches_manual_chain():
    rng = np.random.default_rng(5)
    x = 0.3 * rng.standard_normal(2000)
    noise, rir = rng.standard_normal(2000), np.exp(-np.arange(300) / 40) * rng.standard_normal(300)
    r = DegradationRecipe([
        DegradationStep("reverb", {"pick": 0.0}),
        DegradationStep("noise", {"snr_db": 5.0, "pick": 0.0, "offset": 0.0}),
        DegradationStep("bandwidth", {"cutoff_hz": 3000.0, "order": 6, "family": "chebyshev1",
                                      "ripple_db": 1.0}),
        DegradationStep("clip", {"alpha_min": -0.2, "alpha_max": 0.3}),
    ])
    manual = degrade.reverberate(x, rir)
    manual = degrade.add_noise(manual, noise, 5.0)
    manual = degrade.bandwidth_limit(manual, 3000.0, "chebyshev1", 6)
    manual = degrade.peak_limit(degrade.clip_waveform(manual, -0.2, 0.3))
    assert np.allclose(degrade.apply_recipe(x, r, [noise], [rir])[0], manual)


def test_output_is_peak_limited():
    x = np.ones(1000) * 0.9
    r = DegradationRecipe([DegradationStep("noise", {"snr_db": -10.0, "pick": 0.0})])
    out, _ = degrade.apply_recipe(x, r, [np.random.default_rng(0).standard_normal(1000)])
    assert np.abs(out).max() <= 1.0


def test_missing_pool_is_an_error():
    r = DegradationRecipe([DegradationStep("reverb", {"pick": 0.0})])
    with pytest.raises(ValueError):
        degrade.apply_recipe(np.ones(10), r)


def test_item_seed_is_order_independent():
    forward = [degrade.item_seed(7, i) for i in range(20)]
    backward = [degrade.item_seed(7, i) for i in reversed(range(20))][::-1]
    assert forward == backward and len(set(forward)) == 20


# --- manifests -----------------------------------------------------------------

def test_manifest_formats(tmp_path):
    for name in ("a.wav", "b.wav", "c.wav"):
        (tmp_path / name).write_bytes(b"")
    (tmp_path / "m.txt").write_text('a.wav\n# comment\nb.wav\t1.5\n{"path": "c.wav", "duration": 2}\n')
    paths = degrade.read_manifest(tmp_path / "m.txt")
    assert [p.name for p in paths] == ["a.wav", "b.wav", "c.wav"]
    assert degrade.CorpusManifest(paths).clean_paths == paths


def test_manifest_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        degrade.read_manifest(tmp_path / "missing.txt")
    with pytest.raises(FileNotFoundError):
        degrade.CorpusManifest([tmp_path / "nope.wav"])
    with pytest.raises(ValueError):
        degrade.CorpusManifest([])
