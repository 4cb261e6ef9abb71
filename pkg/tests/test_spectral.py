import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fiba import _fft_py, spectral
from fiba.spectral import AmplitudePhase, decompose, dft2, idft2, recompose
from oracles import naive_dft2

BACKENDS = spectral.available_backends()


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("shape", [(4, 4), (5, 5), (8, 8), (12, 12), (16, 16), (4, 7), (9, 6), (1, 5)])
def test_matches_naive_oracle(shape, backend):
    x = np.random.default_rng(sum(shape)).random(shape)
    assert np.abs(dft2(x, backend) - naive_dft2(x)).max() < 1e-9


@pytest.mark.parametrize("backend", BACKENDS)
def test_complex_input_matches_oracle(backend):
    rng = np.random.default_rng(3)
    z = rng.normal(size=(6, 10)) + 1j * rng.normal(size=(6, 10))
    assert np.abs(dft2(z, backend) - naive_dft2(z)).max() < 1e-9
    assert np.abs(idft2(z, backend) - naive_dft2(z, inverse=True)).max() < 1e-9


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("n", [67, 97, 131, 224, 250])
def test_large_and_prime_sizes_against_numpy(n, backend):
    # numpy is only a cross-check at sizes where the O(N^4) oracle is too slow
    x = np.random.default_rng(n).random((n, 3))
    assert np.allclose(spectral._transform2(x, False, backend), np.fft.fft2(x), atol=1e-9 * n)


def test_backends_agree():
    x = np.random.default_rng(0).random((30, 45))
    outs = [dft2(x, b) for b in BACKENDS]
    for o in outs[1:]:
        assert np.abs(o - outs[0]).max() < 1e-10


def test_constant_grid_is_dc_only():
    f = dft2(np.full((8, 8), 0.3))
    assert abs(f[0, 0] - 64 * 0.3) < 1e-9
    f[0, 0] = 0
    assert np.abs(f).max() < 1e-9


def test_impulse_is_flat():
    x = np.zeros((8, 8))
    x[0, 0] = 1.0
    assert np.abs(dft2(x) - 1.0).max() < 1e-12


def test_round_trip():
    x = np.random.default_rng(1).random((64, 64))
    assert np.abs(idft2(dft2(x)) - x).max() < 1e-9
    y = np.random.default_rng(2).random((16, 16))
    assert np.abs(idft2(dft2(y)) - y).max() < 1e-9


def test_zero_spectrum():
    assert np.all(idft2(np.zeros((5, 6), complex)) == 0)


def test_hermitian_spectrum_gives_real_output():
    s = naive_dft2(np.random.default_rng(4).random((6, 6)))
    assert np.abs(idft2(s).imag).max() < 1e-9


def test_parseval():
    x = np.random.default_rng(5).random((64, 64))
    lhs = np.sum(x ** 2)
    rhs = np.sum(np.abs(dft2(x)) ** 2) / x.size
    assert abs(lhs - rhs) / lhs < 1e-6


def test_real_symmetry_and_linearity():
    rng = np.random.default_rng(6)
    x, y = rng.random((10, 12)), rng.random((10, 12))
    f = dft2(x)
    mirrored = np.conj(np.roll(f[::-1, ::-1], (1, 1), axis=(0, 1)))
    assert np.abs(f - mirrored).max() < 1e-9
    assert np.abs(dft2(2.5 * x - 0.7 * y) - (2.5 * f - 0.7 * dft2(y))).max() < 1e-9


@pytest.mark.parametrize("bad", [np.array([[1.0, np.nan], [0, 0]]), np.array([[np.inf, 0], [0, 0]])])
def test_rejects_non_finite(bad):
    with pytest.raises(ValueError, match="non-finite"):
        dft2(bad)
    with pytest.raises(ValueError, match="non-finite"):
        idft2(bad.astype(complex))


def test_rejects_wrong_rank():
    with pytest.raises(ValueError):
        dft2(np.zeros((2, 2, 2)))


def test_decompose_examples():
    ap = decompose(np.array([[3 + 4j, 0j]]))
    assert ap.amplitude[0, 0] == pytest.approx(5.0)
    assert ap.phase[0, 0] == pytest.approx(np.arctan2(4, 3))
    assert ap.amplitude[0, 1] == 0 and ap.phase[0, 1] == 0


def test_phase_is_half_open():
    ap = decompose(np.array([complex(-1.0, -0.0), complex(-1.0, 0.0)]))
    assert np.all(ap.phase == np.pi)


def test_recompose_examples():
    assert np.allclose(recompose(AmplitudePhase(np.ones((2, 2)), np.zeros((2, 2)))), 1.0)
    s = recompose(AmplitudePhase(np.array([2.0]), np.array([np.pi / 2])))
    assert abs(s[0] - 2j) < 1e-12
    with pytest.raises(ValueError):
        recompose(AmplitudePhase(np.array([-1.0]), np.array([0.0])))
    with pytest.raises(ValueError):
        AmplitudePhase(np.ones(2), np.ones(3))


def test_decompose_recompose_round_trips():
    rng = np.random.default_rng(7)
    s = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    back = recompose(decompose(s))
    assert np.abs(back - s).max() / np.abs(s).max() < 1e-12
    ap = AmplitudePhase(rng.random((8, 8)) + 0.1, rng.uniform(-np.pi, np.pi, (8, 8)))
    again = decompose(recompose(ap))
    assert np.abs(again.amplitude - ap.amplitude).max() < 1e-12
    assert np.abs(again.phase - ap.phase).max() < 1e-12


def test_fallback_factorization():
    assert [_fft_py.smallest_factor(n) for n in (2, 9, 35, 97)] == [2, 3, 5, 97]


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
              elements=st.floats(-10, 10, allow_nan=False)))
def test_round_trip_property(x):
    assert np.abs(idft2(dft2(x)) - x).max() < 1e-9
