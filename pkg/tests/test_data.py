import math

import numpy as np
import pytest
import soundfile as sf

from avdkf.container import ContainerError
from avdkf.data import (
    NOISE_KINDS,
    CorpusConfig,
    SynthConfig,
    UnsupportedAudioError,
    align_visual,
    gen_noise,
    load_aligned_features,
    load_corpus,
    load_features,
    load_wav,
    make_noisy_set,
    mix_at_snr,
    read_manifest,
    save_features,
    save_wav,
    scale_noise_to_snr,
    synth_av_utterance,
    synth_corpus,
    write_manifest,
)
from avdkf.signal import StftConfig, Waveform


def _power(x: np.ndarray) -> float:
    return float(np.mean(x**2))


# -- synthesis ---------------------------------------------------------------------------


def test_synth_is_deterministic(tiny_synth, tiny_stft):
    a = synth_av_utterance(tiny_synth, tiny_stft, seed=3)
    b = synth_av_utterance(tiny_synth, tiny_stft, seed=3)
    c = synth_av_utterance(tiny_synth, tiny_stft, seed=4)
    assert np.array_equal(a.clean.samples, b.clean.samples)
    assert np.array_equal(a.visual, b.visual)
    assert not np.array_equal(a.clean.samples, c.clean.samples)


def test_synth_alignment_and_level(tiny_synth, tiny_stft):
    u = synth_av_utterance(tiny_synth, tiny_stft, seed=0)
    assert u.visual.shape == (tiny_stft.n_frames(len(u.clean)), tiny_synth.n_bands)
    # peak limiting can only lower the level
    assert np.sqrt(_power(u.clean.samples)) <= tiny_synth.level * (1 + 1e-9)
    assert np.max(np.abs(u.clean.samples)) <= 0.99


def test_visual_snr_limits(tiny_stft):
    cfg = SynthConfig(duration=20.0, n_bands=3, visual_snr=math.inf)
    exact = synth_av_utterance(cfg, tiny_stft, seed=8).visual
    assert exact.shape[0] >= 10_000

    high = synth_av_utterance(
        SynthConfig(duration=20.0, n_bands=3, visual_snr=80.0), tiny_stft, seed=8
    ).visual
    assert np.allclose(high, exact, atol=1e-2)

    noise = synth_av_utterance(
        SynthConfig(duration=20.0, n_bands=3, visual_snr=-math.inf), tiny_stft, seed=8
    ).visual
    for d in range(3):
        assert abs(np.corrcoef(noise[:, d], exact[:, d])[0, 1]) < 0.05


def test_synth_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(duration=0)
    with pytest.raises(ValueError):
        SynthConfig(visual_snr=math.nan)


# -- noise and mixing --------------------------------------------------------------------


@pytest.mark.parametrize("kind", NOISE_KINDS)
def test_noise_unit_rms_and_reproducible(kind):
    a = gen_noise(kind, 8000, seed=2)
    assert len(a) == 8000
    assert np.sqrt(_power(a.samples)) == pytest.approx(1.0)
    assert np.array_equal(a.samples, gen_noise(kind, 8000, seed=2).samples)


def test_white_noise_autocorrelation():
    x = gen_noise("white", 80_000, seed=3).samples
    energy = np.dot(x, x)
    for lag in range(1, 6):
        assert abs(np.dot(x[:-lag], x[lag:]) / energy) < 0.02


@pytest.mark.parametrize("kind", ["lowfreq_rumble", "car_like"])
def test_low_frequency_noise(kind):
    x = gen_noise(kind, 64_000, seed=4).samples
    spectrum = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), 1 / 16000)
    assert spectrum[freqs < 300].sum() / spectrum.sum() > 0.9


def test_unknown_noise():
    with pytest.raises(ValueError, match="Unknown noise kind"):
        gen_noise("cafe", 100, seed=0)


def test_mix_at_snr_exact(utterance):
    noise = gen_noise("white", len(utterance.clean), seed=1)
    for snr in (-5.0, 0.0, 7.5):
        scaled = scale_noise_to_snr(utterance.clean, noise, snr)
        measured = 10 * np.log10(_power(utterance.clean.samples) / _power(scaled.samples))
        assert measured == pytest.approx(snr, abs=1e-9)
        mixed = mix_at_snr(utterance.clean, noise, snr)
        assert np.allclose(mixed.samples - utterance.clean.samples, scaled.samples)
    scaled = scale_noise_to_snr(utterance.clean, noise, 0.0)
    assert _power(scaled.samples) == pytest.approx(_power(utterance.clean.samples))


def test_mix_errors(utterance):
    n = len(utterance.clean)
    noise = gen_noise("white", n, seed=1)
    with pytest.raises(ValueError, match="finite"):
        mix_at_snr(utterance.clean, noise, math.inf)
    with pytest.raises(ValueError, match="zero power"):
        mix_at_snr(utterance.clean, Waveform(np.zeros(n)), 0.0)
    with pytest.raises(ValueError, match="Length mismatch"):
        mix_at_snr(utterance.clean, Waveform(noise.samples[:-1]), 0.0)


# -- file I/O ----------------------------------------------------------------------------


def test_wav_round_trip(tmp_path):
    t = np.arange(16000) / 16000
    w = Waveform(0.99 * np.sin(2 * np.pi * 440 * t))
    save_wav(tmp_path / "a.wav", w)
    back = load_wav(tmp_path / "a.wav")
    assert back.sample_rate == 16000
    assert np.max(np.abs(back.samples - w.samples)) <= 2**-15


def test_wav_clipping_warns(tmp_path, caplog):
    save_wav(tmp_path / "a.wav", Waveform(np.array([0.0, 1.5, -2.0])))
    assert "Clipping 2 samples" in caplog.text
    assert load_wav(tmp_path / "a.wav").samples.max() == pytest.approx(32767 / 32768)


def test_stereo_wav_rejected(tmp_path):
    sf.write(str(tmp_path / "s.wav"), np.zeros((100, 2)), 16000, subtype="PCM_16")
    with pytest.raises(UnsupportedAudioError, match="mono"):
        load_wav(tmp_path / "s.wav")


def test_float_wav_rejected(tmp_path):
    sf.write(str(tmp_path / "f.wav"), np.zeros(100), 16000, subtype="FLOAT")
    with pytest.raises(UnsupportedAudioError, match="16-bit"):
        load_wav(tmp_path / "f.wav")


def test_features_round_trip(tmp_path):
    v = np.random.default_rng(0).normal(size=(20, 4))
    save_features(tmp_path / "v.feat", v)
    back, fps = load_features(tmp_path / "v.feat")
    assert fps is None
    assert back.tobytes() == v.tobytes()


def test_features_garbage(tmp_path):
    (tmp_path / "v.feat").write_bytes(b"not a container")
    with pytest.raises(ContainerError):
        load_features(tmp_path / "v.feat")


def test_align_visual_nearest_frame():
    c = StftConfig(frame_len=1024, hop=256)
    video = np.arange(30.0)[:, None]
    aligned = align_visual(video, 30.0, c, n_frames=59)
    assert aligned.shape == (59, 1)
    centers = (np.arange(59) * 256 + 512) / 16000
    assert np.array_equal(aligned[:, 0], np.clip(np.rint(centers * 30), 0, 29))


def test_load_aligned_features(tmp_path, tiny_stft):
    save_features(tmp_path / "video.feat", np.ones((5, 2)), fps=30.0)
    assert load_aligned_features(tmp_path / "video.feat", tiny_stft, 40).shape == (40, 2)
    save_features(tmp_path / "stft.feat", np.ones((5, 2)))
    with pytest.raises(ValueError, match="feature frames"):
        load_aligned_features(tmp_path / "stft.feat", tiny_stft, 40)


# -- manifests and corpora ---------------------------------------------------------------


def test_manifest_malformed_rows(tmp_path):
    path = tmp_path / "m.tsv"
    write_manifest(
        path,
        [{"id": "a", "wav": "a.wav"}, {"id": "b", "wav": ""}, {"id": "c", "wav": "c.wav"}],
        ["id", "wav"],
    )
    rows, skipped = read_manifest(path, ["id", "wav"], strict=False)
    assert [r["id"] for r in rows] == ["a", "c"]
    assert skipped == 1
    with pytest.raises(ValueError, match="malformed row"):
        read_manifest(path, ["id", "wav"])
    with pytest.raises(ValueError, match="missing columns"):
        read_manifest(path, ["id", "features"])


def test_corpus_config_splits():
    assert CorpusConfig(100).split_counts() == {"train": 80, "valid": 10, "test": 10}
    with pytest.raises(ValueError):
        CorpusConfig(0)


def test_synth_and_load_corpus(tmp_path, tiny_synth, tiny_stft):
    corpus = CorpusConfig(num_utterances=5, valid_fraction=0.2, test_fraction=0.2)
    manifest = synth_corpus(tmp_path / "a", tiny_synth, corpus, tiny_stft, seed=1)
    assert len(manifest.read_text().splitlines()) == 6

    train = load_corpus(tmp_path / "a", "train", tiny_stft)
    assert len(train) == 3
    for u in train:
        assert u.visual.shape == (tiny_stft.n_frames(len(u.clean)), 3)
    assert load_corpus(tmp_path / "a", "train", tiny_stft, with_visual=False)[0].visual is None

    synth_corpus(tmp_path / "b", tiny_synth, corpus, tiny_stft, seed=1)
    for name in ("wav/utt00000.wav", "features/utt00004.feat", "corpus.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_make_noisy_set(tmp_path, tiny_synth, tiny_stft):
    corpus = CorpusConfig(num_utterances=5, valid_fraction=0.2, test_fraction=0.2)
    synth_corpus(tmp_path / "corpus", tiny_synth, corpus, tiny_stft, seed=1)
    manifest = make_noisy_set(
        tmp_path / "corpus", tmp_path / "mix", [0.0, 5.0], ["white", "lowfreq_rumble"], seed=2
    )
    rows, _ = read_manifest(manifest, ["id", "clean", "noisy", "features", "noise", "snr_db"])
    assert len(rows) == 4
    row = rows[0]
    clean = load_wav(row["clean"])
    noisy = load_wav(manifest.parent / row["noisy"])
    assert len(noisy) == len(clean)
    with pytest.raises(ValueError, match="no 'nope' utterances"):
        make_noisy_set(tmp_path / "corpus", tmp_path / "x", [0.0], ["white"], 2, split="nope")
