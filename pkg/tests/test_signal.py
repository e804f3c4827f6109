import numpy as np
import pytest

from avdkf.signal import (
    ComplexSpectrogram,
    StftConfig,
    Waveform,
    cola_sum,
    interior,
    istft,
    power,
    stft,
)


def test_config_defaults():
    c = StftConfig()
    assert c.hop == 256
    assert c.n_bins == 513
    assert c.n_frames(16000) == (16000 - 1024) // 256 + 1


@pytest.mark.parametrize("frame_len, hop", [(0, None), (256, 48), (256, -64)])
def test_config_invalid(frame_len, hop):
    with pytest.raises(ValueError):
        StftConfig(frame_len=frame_len, hop=hop)


def test_window_is_sine():
    c = StftConfig(frame_len=16)
    n = np.arange(16)
    assert np.allclose(c.get_window(), np.sin(np.pi * (n + 0.5) / 16), atol=1e-15)


def test_zero_signal():
    S = stft(Waveform(np.zeros(16000)), StftConfig())
    assert S.n_bins == 513
    assert not S.data.any()


def test_constant_signal_dc_bin():
    c = StftConfig()
    S = stft(Waveform(np.ones(4096)), c)
    expected = np.sum(np.sin(np.pi * (np.arange(1024) + 0.5) / 1024))
    assert expected == pytest.approx(651.9, abs=0.05)
    assert np.allclose(S.data[0].real, expected, rtol=1e-12)
    assert np.allclose(S.data[0].imag, 0.0)


def test_round_trip_interior():
    c = StftConfig()
    x = np.random.default_rng(0).normal(size=16000)
    y = istft(stft(Waveform(x), c)).samples
    keep = interior(len(y), c)
    err = np.linalg.norm(y[keep] - x[keep]) / np.linalg.norm(x[keep])
    assert err < 1e-6


def test_istft_covers_full_frames_only(tiny_stft):
    x = np.random.default_rng(1).normal(size=100)
    y = istft(stft(Waveform(x), tiny_stft))
    n_frames = tiny_stft.n_frames(100)
    assert len(y) == tiny_stft.n_samples(n_frames)
    # edges are covered by fewer frames but still normalized exactly
    assert np.allclose(y.samples, x[: len(y)], atol=1e-12)


def test_istft_linear(tiny_stft):
    x = np.random.default_rng(2).normal(size=200)
    S = stft(Waveform(x), tiny_stft)
    scaled = ComplexSpectrogram(3.0 * S.data, tiny_stft)
    assert np.allclose(istft(scaled).samples, 3.0 * istft(S).samples)
    zero = ComplexSpectrogram(np.zeros_like(S.data), tiny_stft)
    assert not istft(zero).samples.any()


def test_parseval(tiny_stft):
    c = tiny_stft
    x = np.random.default_rng(3).normal(size=128)
    S = stft(Waveform(x), c)
    N = c.frame_len
    w = c.get_window()
    for t in range(S.n_frames):
        frame = x[t * c.hop : t * c.hop + N] * w
        p = np.abs(S.data[:, t]) ** 2
        spectral = (p[0] + 2 * p[1:-1].sum() + p[-1]) / N
        assert spectral == pytest.approx(np.sum(frame**2), rel=1e-9)


@pytest.mark.parametrize("frame_len", [32, 256, 1024])
def test_cola(frame_len):
    assert np.allclose(cola_sum(StftConfig(frame_len=frame_len)), 2.0, atol=1e-12)


def test_short_signal():
    with pytest.raises(ValueError, match="shorter than one frame"):
        stft(Waveform(np.zeros(100)), StftConfig(frame_len=256))


def test_non_finite_samples():
    with pytest.raises(ValueError, match="non-finite"):
        Waveform(np.array([0.0, np.nan, 1.0]))


def test_inconsistent_spectrogram(tiny_stft):
    with pytest.raises(ValueError, match="inconsistent"):
        ComplexSpectrogram(np.zeros((10, 4)), tiny_stft)


def test_power():
    assert power(np.array([3 + 4j, 0j])).tolist() == [25.0, 0.0]
    S = np.random.default_rng(4).normal(size=(5, 3)) + 1j
    c = 0.5 - 2j
    assert np.allclose(power(c * S), abs(c) ** 2 * power(S))
