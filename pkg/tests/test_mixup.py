"""Mix parameter sampling, SNR scaling, soft labels, and both mix paths."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sermix.audio import Segment, Waveform, segment_energy
from sermix.errors import InvalidClass, SampleRateMismatch, SegmentTooShort, SilentSegment
from sermix.mixup import (
    MixConfig,
    SoftLabel,
    energy_adaptive_mix,
    length_adaptive_mix,
    make_soft_label,
    mix_signals,
    mix_weight,
    sample_mix_params,
    snr_scale,
)

SR = 16000


def _noise(n, seed, scale=0.3):
    return Waveform(np.random.default_rng(seed).normal(scale=scale, size=n), SR)


def test_mix_config_validation():
    with pytest.raises(ValueError):
        MixConfig(snr_db_min=5.0, snr_db_max=0.0)
    with pytest.raises(ValueError):
        MixConfig(mix_frac_min=0.0)
    with pytest.raises(ValueError):
        MixConfig(mix_frac_min=0.6, mix_frac_max=0.5)
    with pytest.raises(ValueError):
        MixConfig(mix_frac_max=1.5)


def test_soft_label_validation():
    with pytest.raises(ValueError):
        SoftLabel(np.array([0.5, 0.4]))
    with pytest.raises(ValueError):
        SoftLabel(np.array([-0.1, 1.1]))
    lab = SoftLabel.one_hot(2, 4)
    assert lab.hard() == 2
    assert np.array_equal(lab.probs, [0.0, 0.0, 1.0, 0.0])
    with pytest.raises(InvalidClass):
        SoftLabel.one_hot(4, 4)


def test_snr_scale_equal_energies_zero_db():
    assert snr_scale(0.04, 0.04, 0.0) == 1.0


def test_snr_scale_quieter_segment_amplified():
    assert snr_scale(0.04, 0.01, 0.0) == pytest.approx(2.0, rel=1e-12)


def test_snr_scale_ten_db():
    assert snr_scale(0.04, 0.04, 10.0) == pytest.approx(10.0 ** -0.5, rel=1e-12)


def test_snr_scale_silent_inputs_raise():
    with pytest.raises(SilentSegment):
        snr_scale(0.0, 0.04, 0.0)
    with pytest.raises(SilentSegment):
        snr_scale(0.04, 1e-13, 0.0)


def test_sample_mix_params_degenerate_fraction_range():
    cfg = MixConfig(mix_frac_min=0.5, mix_frac_max=0.5)
    rng = np.random.default_rng(0)
    l_mix, start_i, start_j, _snr = sample_mix_params(cfg, 100, 100, rng)
    assert l_mix == 50
    assert 0 <= start_i <= 50
    assert 0 <= start_j <= 50


def test_sample_mix_params_clamped_by_short_partner():
    cfg = MixConfig(mix_frac_min=0.5, mix_frac_max=0.5)
    rng = np.random.default_rng(0)
    l_mix, _si, start_j, _snr = sample_mix_params(cfg, 100, 10, rng)
    assert l_mix == 10
    assert start_j == 0


def test_sample_mix_params_too_short_raises():
    cfg = MixConfig(mix_frac_min=0.1, mix_frac_max=0.1)
    with pytest.raises(SegmentTooShort):
        sample_mix_params(cfg, 5, 100, np.random.default_rng(0))


def test_sample_mix_params_never_returns_zero_length():
    # floor(0.1 * 5) == 0 but the draw floor must clamp to 1
    cfg = MixConfig(mix_frac_min=0.1, mix_frac_max=0.5)
    rng = np.random.default_rng(1)
    for _ in range(200):
        l_mix, _, _, _ = sample_mix_params(cfg, 5, 5, rng)
        assert 1 <= l_mix <= 2


def test_self_mix_doubles_exactly():
    x = _noise(64, 5)
    res = mix_signals(x, x, (64, 0, 0, 0.0))
    assert np.array_equal(res.mixed.samples, 2.0 * x.samples)
    assert res.params.scale == 1.0


def test_measured_snr_matches_request():
    x_i = _noise(400, 7)
    x_j = _noise(400, 8, scale=0.05)
    res = mix_signals(x_i, x_j, (120, 30, 200, 7.3))
    assert abs(res.achieved_snr_db - 7.3) <= 1e-6
    # recompute from emitted samples as an independent check
    region = slice(30, 150)
    incoming = res.mixed.samples[region] - x_i.samples[region]
    e_in = float(np.mean(incoming**2))
    e_base = segment_energy(x_i, Segment(30, 120))
    assert abs(10.0 * math.log10(e_base / e_in) - 7.3) <= 1e-6


def test_samples_outside_region_bit_identical():
    x_i = _noise(300, 9)
    x_j = _noise(300, 10)
    res = mix_signals(x_i, x_j, (50, 100, 20, 3.0))
    out = res.mixed.samples
    assert np.array_equal(out[:100], x_i.samples[:100])
    assert np.array_equal(out[150:], x_i.samples[150:])
    assert not np.array_equal(out[100:150], x_i.samples[100:150])


def test_mix_signals_sample_rate_mismatch():
    a = Waveform(np.ones(32), 16000)
    b = Waveform(np.ones(32), 8000)
    with pytest.raises(SampleRateMismatch):
        mix_signals(a, b, (8, 0, 0, 0.0))


def test_silent_base_raises_on_both_paths():
    silent = Waveform(np.zeros(64), SR)
    loud = _noise(64, 11)
    cfg = MixConfig()
    with pytest.raises(SilentSegment):
        energy_adaptive_mix(silent, 0, loud, 1, 2, cfg, np.random.default_rng(0))
    with pytest.raises(SilentSegment):
        length_adaptive_mix(silent, 0, loud, 1, 2, cfg, np.random.default_rng(0))


def test_silent_incoming_raises_for_eam_only():
    loud = _noise(64, 12)
    silent = Waveform(np.zeros(64), SR)
    cfg = MixConfig()
    with pytest.raises(SilentSegment):
        energy_adaptive_mix(loud, 0, silent, 1, 2, cfg, np.random.default_rng(0))
    # the length-only baseline never measures the incoming energy
    res = length_adaptive_mix(loud, 0, silent, 1, 2, cfg, np.random.default_rng(0))
    assert np.array_equal(res.mixed.samples, loud.samples)
    assert res.achieved_snr_db == math.inf


def test_make_soft_label_equal_energy_half_length():
    lab = make_soft_label(0, 1, 50, 100, 0.04, 0.04, 4)
    assert lab.probs[1] == pytest.approx(0.25, abs=1e-15)
    assert lab.probs[0] == pytest.approx(0.75, abs=1e-15)
    assert lab.probs[2] == 0.0 and lab.probs[3] == 0.0


def test_make_soft_label_energy_fraction_quarter():
    # energy_jj = energy_i / 3 puts the incoming segment at 10*log10(3) dB,
    # so the energy fraction is 1/4 and w = 0.4 * 0.25 = 0.1
    snr = 10.0 * math.log10(3.0)
    assert snr == pytest.approx(4.771212547, abs=1e-8)
    e_i = 0.3
    e_jj = e_i / 10.0 ** (snr / 10.0)
    lab = make_soft_label(0, 1, 40, 100, e_i, e_jj, 2)
    assert lab.probs[1] == pytest.approx(0.1, rel=1e-12)
    assert lab.probs[0] == pytest.approx(0.9, rel=1e-12)


def test_make_soft_label_self_mix_collapses_to_one_hot():
    lab = make_soft_label(2, 2, 30, 100, 0.05, 0.02, 4)
    assert lab.hard() == 2
    assert lab.probs[2] == pytest.approx(1.0, abs=1e-15)
    assert lab.probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_make_soft_label_validation():
    with pytest.raises(InvalidClass):
        make_soft_label(0, 5, 10, 100, 0.1, 0.1, 4)
    with pytest.raises(ValueError):
        make_soft_label(0, 1, 200, 100, 0.1, 0.1, 4)
    with pytest.raises(ValueError):
        make_soft_label(0, 1, 10, 100, 0.0, 0.0, 4)


def test_label_weight_matches_energies_measured_on_emitted_samples():
    cfg = MixConfig(snr_db_min=0.0, snr_db_max=10.0)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x_i = _noise(500, 1000 + seed)
        x_j = _noise(300, 2000 + seed, scale=0.08)
        res = energy_adaptive_mix(x_i, 0, x_j, 1, 3, cfg, rng)
        p = res.params
        region = slice(p.start_i, p.start_i + p.l_mix)
        incoming = res.mixed.samples[region] - x_i.samples[region]
        e_in = float(np.mean(incoming**2))
        e_base = segment_energy(x_i, Segment(p.start_i, p.l_mix))
        w_oracle = (p.l_mix / len(x_i)) * e_in / (e_base + e_in)
        assert res.label.probs[1] == pytest.approx(w_oracle, rel=1e-9)
        assert res.label.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert res.label.probs[1] <= p.l_mix / len(x_i) + 1e-15


def test_lam_shares_geometry_with_eam_under_same_seed():
    cfg = MixConfig()
    x_i = _noise(400, 21)
    x_j = _noise(400, 22, scale=0.05)
    eam = energy_adaptive_mix(x_i, 0, x_j, 1, 2, cfg, np.random.default_rng(77))
    lam = length_adaptive_mix(x_i, 0, x_j, 1, 2, cfg, np.random.default_rng(77))
    assert (eam.params.l_mix, eam.params.start_i, eam.params.start_j) == (
        lam.params.l_mix,
        lam.params.start_i,
        lam.params.start_j,
    )
    assert lam.params.scale == 1.0
    assert eam.params.scale != 1.0
    assert lam.label.probs[1] == lam.params.l_mix / len(x_i)
    assert lam.label.probs[1] != eam.label.probs[1]


def test_eam_is_deterministic_for_a_fixed_seed():
    cfg = MixConfig()
    x_i = _noise(256, 31)
    x_j = _noise(256, 32)
    a = energy_adaptive_mix(x_i, 0, x_j, 1, 2, cfg, np.random.default_rng(5))
    b = energy_adaptive_mix(x_i, 0, x_j, 1, 2, cfg, np.random.default_rng(5))
    assert np.array_equal(a.mixed.samples, b.mixed.samples)
    assert np.array_equal(a.label.probs, b.label.probs)
    assert a.params == b.params


def test_mix_weight_helper_consistency():
    assert mix_weight(50, 100, 0.04, 0.04) == pytest.approx(0.25, abs=1e-15)
    assert mix_weight(100, 100, 0.1, 0.3) == pytest.approx(0.75, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    e_i=st.floats(min_value=1e-6, max_value=10.0),
    e_j=st.floats(min_value=1e-6, max_value=10.0),
    snr=st.floats(min_value=-20.0, max_value=20.0),
)
def test_snr_scale_realizes_request_property(e_i, e_j, snr):
    s = snr_scale(e_i, e_j, snr)
    realized = 10.0 * math.log10(e_i / (s * s * e_j))
    assert realized == pytest.approx(snr, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    e_i=st.floats(min_value=1e-6, max_value=10.0),
    e_j=st.floats(min_value=1e-6, max_value=10.0),
    snr_lo=st.floats(min_value=-10.0, max_value=10.0),
    gap=st.floats(min_value=0.01, max_value=10.0),
)
def test_snr_scale_strictly_decreasing_in_snr(e_i, e_j, snr_lo, gap):
    assert snr_scale(e_i, e_j, snr_lo) > snr_scale(e_i, e_j, snr_lo + gap)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_label_invariants_property(seed):
    rng = np.random.default_rng(seed)
    n_i = int(rng.integers(60, 400))
    n_j = int(rng.integers(60, 400))
    x_i = Waveform(rng.normal(scale=0.3, size=n_i), SR)
    x_j = Waveform(rng.normal(scale=0.2, size=n_j), SR)
    res = energy_adaptive_mix(x_i, 0, x_j, 1, 2, MixConfig(), rng)
    w = res.label.probs[1]
    assert abs(res.label.probs.sum() - 1.0) <= 1e-12
    assert 0.0 <= w <= res.params.l_mix / n_i
    assert abs(res.achieved_snr_db - res.params.snr_db) <= 1e-6
