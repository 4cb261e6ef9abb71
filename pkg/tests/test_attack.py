import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fiba import attack
from fiba.attack import AttackConfig, fiba_spectrum, inject, low_freq_mask, prepare_trigger
from fiba.spectral import decompose, dft2
from oracles import naive_fiba_channel, naive_mask

BENIGN_4 = np.array([[0.1, 0.2, 0.3, 0.4], [0.5, 0.6, 0.7, 0.8],
                     [0.2, 0.4, 0.6, 0.8], [0.9, 0.7, 0.5, 0.3]])
TRIGGER_4 = np.array([[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0],
                      [0.75, 0.25, 0.75, 0.25], [0.5, 0.5, 0.5, 0.5]])
# frozen output of the naive-DFT reference pipeline (alpha 0.5, beta 0.25)
GOLDEN_4 = np.array([[0.1625, 0.2625, 0.3625, 0.4625], [0.5875, 0.6875, 0.5875, 0.6875],
                     [0.1875, 0.3875, 0.4875, 0.6875], [0.8625, 0.6625, 0.5625, 0.3625]])


def _rand_image(seed, h=16, w=16, c=3):
    return np.random.default_rng(seed).random((h, w, c))


def fiba(trigger, alpha=0.15, beta=0.10):
    return AttackConfig("fiba", trigger, alpha, beta)


def test_golden_fixture():
    ref, _ = naive_fiba_channel(BENIGN_4, TRIGGER_4, 0.5, 0.25)
    assert np.abs(ref - GOLDEN_4).max() < 1e-9
    out = inject(BENIGN_4[:, :, None], fiba(TRIGGER_4[:, :, None], 0.5, 0.25))[:, :, 0]
    assert np.abs(out - GOLDEN_4).max() < 1e-9


@pytest.mark.parametrize("seed,alpha,beta", [(0, 0.15, 0.10), (1, 0.4, 0.2), (2, 0.9, 0.5)])
def test_matches_naive_pipeline_on_random_images(seed, alpha, beta):
    x, t = _rand_image(seed, 6, 7, 1), _rand_image(seed + 10, 6, 7, 1)
    ref, _ = naive_fiba_channel(x[:, :, 0], t[:, :, 0], alpha, beta)
    assert np.abs(inject(x, fiba(t, alpha, beta))[:, :, 0] - ref).max() < 1e-9


def test_mask_examples():
    assert low_freq_mask(8, 8, 0.0).sum() == 1
    m = low_freq_mask(8, 8, 0.25)
    assert m.sum() == 25
    assert set(np.flatnonzero(m.any(axis=1))) == {0, 1, 2, 6, 7}
    m16 = low_freq_mask(16, 16, 0.10)
    assert m16.sum() == 9
    for i in range(16):
        for j in range(16):
            assert m16[i, j] == m16[(16 - i) % 16, (16 - j) % 16]


@pytest.mark.parametrize("h,w,beta", [(32, 32, 0.1), (7, 9, 0.3), (10, 4, 0.5), (224, 224, 0.1)])
def test_mask_matches_oracle(h, w, beta):
    assert np.array_equal(low_freq_mask(h, w, beta), naive_mask(h, w, beta))


def test_mask_validation():
    with pytest.raises(ValueError):
        low_freq_mask(8, 8, 0.6)
    with pytest.raises(ValueError):
        low_freq_mask(3, 8, 0.1)


def test_alpha_zero_identity():
    x = _rand_image(3)
    raw, _, _ = fiba_spectrum(x, fiba(_rand_image(4), 0.0, 0.3))
    assert np.abs(raw.real - x).max() < 1e-9


def test_phase_preserved_and_high_band_untouched():
    x, t = _rand_image(5), _rand_image(6)
    cfg = fiba(t, 0.35, 0.2)
    raw, ap_x, amp_p = fiba_spectrum(x, cfg)
    mask = low_freq_mask(16, 16, 0.2)
    for k in range(3):
        ap = decompose(dft2(raw[:, :, k]))
        sig = ap.amplitude > 1e-9
        d = np.angle(np.exp(1j * (ap.phase - ap_x.phase[:, :, k])))
        assert np.abs(d[sig]).max() < 1e-6
        outside = mask == 0
        assert np.abs(ap.amplitude[outside] - ap_x.amplitude[:, :, k][outside]).max() < 1e-9
    assert np.abs(raw.imag).max() < 1e-8


def test_full_mask_takes_trigger_amplitude():
    x, t = _rand_image(7, 8, 8, 1), _rand_image(8, 8, 8, 1)
    raw, ap_x, _ = fiba_spectrum(x, fiba(t, 1.0, 0.5))
    ap = decompose(dft2(raw[:, :, 0]))
    assert np.abs(ap.amplitude - np.abs(dft2(t[:, :, 0]))).max() < 1e-6
    sig = ap.amplitude > 1e-6
    d = np.angle(np.exp(1j * (ap.phase - ap_x.phase[:, :, 0])))
    assert np.abs(d[sig]).max() < 1e-6


def test_residual_monotone_in_alpha():
    x, t = _rand_image(9, 32, 32), attack.make_trigger("gradient")
    res = [np.abs(inject(x, fiba(t, a, 0.1)) - x).mean() for a in np.arange(0, 0.51, 0.05)]
    assert all(b >= a - 1e-12 for a, b in zip(res, res[1:]))


def test_patch_examples():
    cfg = AttackConfig("patch", patch_size=6, patch_value=1.0)
    out = inject(np.zeros((32, 32, 3)), cfg)
    assert (out == 1).sum(axis=(0, 1)).tolist() == [36, 36, 36]
    assert np.all(out[26:, 26:] == 1)
    x = _rand_image(10, 32, 32)
    once = inject(x, cfg)
    assert np.array_equal(inject(once, cfg), once)
    assert np.array_equal(once[:26], x[:26]) and np.array_equal(once[:, :26], x[:, :26])
    with pytest.raises(ValueError):
        AttackConfig("patch", patch_size=0)
    with pytest.raises(ValueError):
        inject(np.zeros((4, 4, 1)), AttackConfig("patch", patch_size=6))


def test_blend_examples():
    t = np.full((8, 8, 1), 0.6)
    x = np.full((8, 8, 1), 0.2)
    assert np.allclose(inject(x, AttackConfig("blend", t, alpha=0.15)), 0.26)
    assert np.array_equal(inject(x, AttackConfig("blend", t, alpha=0.0)), x)
    assert np.array_equal(inject(x, AttackConfig("blend", t, alpha=1.0)), t)


def test_prepare_trigger():
    t = _rand_image(11, 8, 8)
    assert prepare_trigger(t, 8, 8, 3) is not None
    assert np.array_equal(prepare_trigger(t, 8, 8, 3), t)
    ramp = prepare_trigger(np.array([[0.0, 1.0], [0.0, 1.0]]), 4, 4, 1)[:, :, 0]
    # hand evaluation with half-pixel centres: source x = (i + 0.5) / 2 - 0.5, clamped
    assert np.allclose(ramp, np.tile([0.0, 0.25, 0.75, 1.0], (4, 1)))
    red = np.zeros((4, 4, 3))
    red[:, :, 0] = 1.0
    assert np.allclose(prepare_trigger(red, 4, 4, 1), 0.299)
    gray = np.full((4, 4, 1), 0.4)
    assert np.allclose(prepare_trigger(gray, 6, 6, 3), 0.4)


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig("wanet")
    with pytest.raises(ValueError):
        AttackConfig("fiba", None)
    with pytest.raises(ValueError):
        AttackConfig("fiba", np.zeros((8, 8, 3)), alpha=1.5)
    with pytest.raises(ValueError):
        AttackConfig("fiba", np.zeros((8, 8, 3)), beta=0.7)
    with pytest.raises(ValueError):
        attack.as_image(np.full((8, 8), 2.0))
    with pytest.raises(ValueError):
        attack.as_image(np.zeros((8, 8, 2)))


def test_channel_adaptation_for_gray_targets():
    x = _rand_image(12, 16, 16, 1)
    out = inject(x, fiba(attack.make_trigger("gradient"), 0.2, 0.1))
    assert out.shape == x.shape


@pytest.mark.parametrize("name", ["gradient", "checker", "noise"])
def test_trigger_fixtures(name):
    t = attack.make_trigger(name)
    assert t.shape == (64, 64, 3) and t.min() >= 0 and t.max() <= 1
    assert np.array_equal(t, attack.make_trigger(name))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 0.5), st.integers(4, 12), st.integers(4, 12))
def test_output_is_valid_image(seed, alpha, beta, h, w):
    x, t = _rand_image(seed, h, w, 1), _rand_image(seed + 1, 5, 5, 3)
    out = inject(x, fiba(t, alpha, beta))
    assert out.shape == x.shape and out.min() >= 0 and out.max() <= 1
    raw, _, _ = fiba_spectrum(x, fiba(t, alpha, beta))
    assert np.abs(raw.imag).max() < 1e-8
