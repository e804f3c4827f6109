"""
Synthetic audio-visual corpus, noise generation, SNR mixing and file I/O.

A synthetic utterance is a harmonic source (random fundamental in 80-300 Hz) shaped in the
STFT domain by a slowly varying log-spectral envelope over `n_bands` log-spaced bands. The
visual stream is the band log-energies of that envelope, one row per STFT frame, plus
Gaussian noise at `visual_snr` dB, so it is informative about the speech variance to a
controllable degree.
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, TypeAlias, get_args

import numpy as np
import soundfile as sf
from scipy.ndimage import gaussian_filter1d
from scipy.signal import filtfilt

from .container import Container, ContainerError, read_container, write_container
from .signal import ComplexSpectrogram, StftConfig, Waveform, istft, stft
from .util import check_finite, derive_seed, numpy_rng

logger = logging.getLogger(__name__)

PathLike: TypeAlias = str | Path

NoiseKind = Literal["white", "lowfreq_rumble", "babble_like", "car_like"]
NOISE_KINDS: tuple[NoiseKind, ...] = get_args(NoiseKind)

FEATURES_KIND = "features"
CORPUS_MANIFEST = "corpus.tsv"
MIXTURES_MANIFEST = "mixtures.tsv"
SPLITS = ("train", "valid", "test")


class UnsupportedAudioError(ValueError):
    """WAV input that is not 16-bit PCM mono."""


@dataclass(frozen=True)
class SynthConfig:
    """
    Args:
        duration: Utterance length in seconds.
        n_harmonics: Upper bound on the number of source harmonics (those above 0.95 Nyquist are dropped).
        n_bands: Envelope bands, and thereby the visual feature dimension D_v.
        visual_snr: dB ratio of envelope variance to visual noise variance; +inf gives the
            band energies exactly, -inf gives pure noise.
        envelope_smoothness: Length-scale of the envelope process, in frames.
        envelope_std: Standard deviation of the band log-energies.
        loudness_std: Standard deviation of the global log-loudness modulation.
        level: RMS of the synthesized waveform.
    """

    duration: float = 2.0
    n_harmonics: int = 30
    n_bands: int = 8
    visual_snr: float = 10.0
    envelope_smoothness: float = 4.0
    envelope_std: float = 1.5
    loudness_std: float = 0.7
    level: float = 0.05

    def __post_init__(self):
        for name in ("duration", "n_harmonics", "n_bands", "envelope_smoothness", "level"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("envelope_std", "loudness_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if math.isnan(self.visual_snr):
            raise ValueError("visual_snr must not be NaN")


@dataclass(frozen=True)
class CorpusConfig:
    num_utterances: int = 100
    valid_fraction: float = 0.1
    test_fraction: float = 0.1

    def __post_init__(self):
        if self.num_utterances < 1:
            raise ValueError(f"Corpus needs at least one utterance, got {self.num_utterances}")
        if not (0 <= self.valid_fraction < 1 and 0 <= self.test_fraction < 1):
            raise ValueError("Split fractions must lie in [0, 1)")
        if self.valid_fraction + self.test_fraction >= 1:
            raise ValueError("valid_fraction + test_fraction must leave room for training")

    def split_counts(self) -> dict[str, int]:
        n_valid = round(self.num_utterances * self.valid_fraction)
        n_test = round(self.num_utterances * self.test_fraction)
        n_train = self.num_utterances - n_valid - n_test
        if n_train < 1:
            raise ValueError("Split fractions leave no training utterance")
        return {"train": n_train, "valid": n_valid, "test": n_test}


@dataclass(frozen=True)
class AVUtterance:
    """Clean waveform with its visual features aligned to the STFT frames (T x D_v)."""

    id: str
    clean: Waveform
    visual: np.ndarray | None = None

    def __post_init__(self):
        if self.visual is not None:
            visual = np.asarray(self.visual, dtype=np.float64)
            if visual.ndim != 2:
                raise ValueError(f"Visual features must be 2-D, got shape {visual.shape}")
            object.__setattr__(self, "visual", visual)


# -- synthesis ---------------------------------------------------------------------------


def _smooth_noise(rng: np.random.Generator, shape: tuple[int, ...], sigma: float) -> np.ndarray:
    """Unit-variance Gaussian process along axis 0 with a Gaussian kernel of width `sigma`."""
    x = gaussian_filter1d(rng.normal(size=shape), sigma, axis=0, mode="reflect")
    return x / np.maximum(x.std(axis=0), 1e-12)


def band_centers(n_bands: int, stft_config: StftConfig) -> np.ndarray:
    nyquist = stft_config.sample_rate / 2
    return np.geomspace(100.0, 0.9 * nyquist, n_bands)


def _harmonic_source(
    rng: np.random.Generator, n_samples: int, n_frames: int, cfg: SynthConfig, c: StftConfig
) -> np.ndarray:
    sr = c.sample_rate
    f0_base = rng.uniform(80.0, 300.0)
    contour = f0_base * np.exp(0.08 * _smooth_noise(rng, (n_frames,), 2 * cfg.envelope_smoothness))
    contour = np.clip(contour, 80.0, 300.0)
    frame_centers = np.arange(n_frames) * c.hop + c.frame_len / 2
    f0 = np.interp(np.arange(n_samples), frame_centers, contour)
    phase = 2 * np.pi * np.cumsum(f0) / sr
    source = np.zeros(n_samples)
    for k in range(1, cfg.n_harmonics + 1):
        # mute the harmonic wherever it would fold over
        audible = k * f0 < 0.95 * sr / 2
        source += audible * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    # breath noise keeps every bin populated
    return source + 0.01 * rng.normal(size=n_samples)


def synth_av_utterance(
    cfg: SynthConfig,
    stft_config: StftConfig,
    seed: int,
    utt_id: str = "utt",
) -> AVUtterance:
    rng = numpy_rng(seed)
    n_frames = stft_config.n_frames(round(cfg.duration * stft_config.sample_rate))
    if n_frames < 1:
        raise ValueError(f"Duration {cfg.duration} s is shorter than one STFT frame")
    n_samples = stft_config.n_samples(n_frames)

    source = _harmonic_source(rng, n_samples, n_frames, cfg, stft_config)

    centers = band_centers(cfg.n_bands, stft_config)
    tilt = -np.log(centers / centers[0])
    envelope = (
        tilt
        + cfg.envelope_std * _smooth_noise(rng, (n_frames, cfg.n_bands), cfg.envelope_smoothness)
        + cfg.loudness_std * _smooth_noise(rng, (n_frames, 1), cfg.envelope_smoothness)
    )
    bin_freqs = np.fft.rfftfreq(stft_config.frame_len, 1 / stft_config.sample_rate)
    log_gain = np.stack([np.interp(bin_freqs, centers, e) for e in envelope], axis=1)
    S = stft(Waveform(source, stft_config.sample_rate), stft_config)
    shaped = istft(ComplexSpectrogram(S.data * np.exp(log_gain / 2), stft_config)).samples

    shaped *= cfg.level / np.sqrt(np.mean(shaped**2))
    peak = np.max(np.abs(shaped))
    if peak > 0.99:
        shaped *= 0.99 / peak

    visual = _visual_observation(rng, envelope, cfg.visual_snr)
    return AVUtterance(utt_id, Waveform(shaped, stft_config.sample_rate), visual)


def _visual_observation(
    rng: np.random.Generator, envelope: np.ndarray, visual_snr: float
) -> np.ndarray:
    if visual_snr == math.inf:
        return envelope.copy()
    signal_std = np.maximum(envelope.std(axis=0), 1e-12)
    noise = rng.normal(size=envelope.shape)
    if visual_snr == -math.inf:
        return noise * signal_std
    return envelope + noise * signal_std * 10 ** (-visual_snr / 20)


# -- noise and mixing --------------------------------------------------------------------


def _one_pole_lowpass(x: np.ndarray, cutoff: float, sample_rate: int) -> np.ndarray:
    """Zero-phase 1-pole low-pass (applied forward and backward)."""
    a = math.exp(-2 * math.pi * cutoff / sample_rate)
    return filtfilt([1 - a], [1, -a], x)


def gen_noise(
    kind: NoiseKind, n_samples: int, seed: int, sample_rate: int = 16000
) -> Waveform:
    """Unit-RMS noise of the given kind."""
    if kind not in NOISE_KINDS:
        raise ValueError(f"Unknown noise kind '{kind}', expected one of {NOISE_KINDS}")
    if n_samples < 1:
        raise ValueError(f"n_samples must be positive, got {n_samples}")
    rng = numpy_rng(seed)
    if kind == "white":
        x = rng.normal(size=n_samples)
    elif kind == "lowfreq_rumble":
        x = _one_pole_lowpass(rng.normal(size=n_samples), 150.0, sample_rate)
    elif kind == "car_like":
        x = _one_pole_lowpass(rng.normal(size=n_samples), 60.0, sample_rate)
        x = _one_pole_lowpass(x, 60.0, sample_rate)
    else:
        x = _babble(n_samples, seed, sample_rate)
    return Waveform(x / np.sqrt(np.mean(x**2)), sample_rate)


def _babble(n_samples: int, seed: int, sample_rate: int, n_talkers: int = 6) -> np.ndarray:
    stft_config = StftConfig(frame_len=512, sample_rate=sample_rate)
    duration = (n_samples + stft_config.frame_len) / sample_rate
    cfg = SynthConfig(duration=duration, visual_snr=math.inf)
    x = np.zeros(n_samples)
    for i in range(n_talkers):
        utt = synth_av_utterance(cfg, stft_config, derive_seed(seed, "babble", i))
        x += utt.clean.samples[:n_samples]
    return x


def scale_noise_to_snr(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    if len(clean) != len(noise):
        raise ValueError(f"Length mismatch: clean {len(clean)}, noise {len(noise)}")
    if clean.sample_rate != noise.sample_rate:
        raise ValueError(
            f"Sample rate mismatch: clean {clean.sample_rate}, noise {noise.sample_rate}"
        )
    if not math.isfinite(snr_db):
        raise ValueError(f"SNR must be finite, got {snr_db}")
    p_clean = np.mean(clean.samples**2)
    p_noise = np.mean(noise.samples**2)
    if p_noise == 0:
        raise ValueError("Noise has zero power")
    if p_clean == 0:
        raise ValueError("Clean signal has zero power")
    scale = math.sqrt(p_clean / (p_noise * 10 ** (snr_db / 10)))
    return Waveform(noise.samples * scale, noise.sample_rate)


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """clean + noise rescaled so that 10 log10(P_clean / P_noise) = snr_db."""
    scaled = scale_noise_to_snr(clean, noise, snr_db)
    return Waveform(clean.samples + scaled.samples, clean.sample_rate)


# -- file I/O ----------------------------------------------------------------------------


def save_wav(path: PathLike, w: Waveform) -> None:
    """Writes 16-bit PCM mono; samples are quantized as round(x * 32768), clipped."""
    quantized = np.round(w.samples * 32768.0)
    n_clipped = int(np.sum((quantized > 32767) | (quantized < -32768)))
    if n_clipped:
        logger.warning(f"Clipping {n_clipped} samples while writing {path}")
    pcm = np.clip(quantized, -32768, 32767).astype(np.int16)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), pcm, w.sample_rate, subtype="PCM_16", format="WAV")


def load_wav(path: PathLike) -> Waveform:
    try:
        info = sf.info(str(path))
    except RuntimeError as e:
        raise UnsupportedAudioError(f"{path}: unreadable audio file ({e})") from None
    if info.channels != 1:
        raise UnsupportedAudioError(f"{path}: expected mono audio, got {info.channels} channels")
    if info.subtype != "PCM_16":
        raise UnsupportedAudioError(f"{path}: expected 16-bit PCM, got {info.subtype}")
    pcm, sample_rate = sf.read(str(path), dtype="int16", always_2d=False)
    return Waveform(pcm.astype(np.float64) / 32768.0, sample_rate)


def save_features(path: PathLike, visual: np.ndarray, fps: float | None = None) -> None:
    """
    Writes a (frames x D_v) feature matrix. `fps` marks features at a video frame rate that
    still need aligning; None means they are already aligned to the STFT frames.
    """
    visual = np.asarray(visual, dtype=np.float64)
    if visual.ndim != 2:
        raise ValueError(f"Features must be 2-D, got shape {visual.shape}")
    check_finite("visual features", visual)
    meta = {"fps": fps} if fps is not None else {}
    write_container(path, Container(kind=FEATURES_KIND, meta=meta, arrays={"visual": visual}))


def load_features(path: PathLike) -> tuple[np.ndarray, float | None]:
    """Returns the feature matrix and its frame rate (None when STFT-aligned)."""
    container = read_container(path, kind=FEATURES_KIND)
    if "visual" not in container.arrays:
        raise ContainerError(f"{path}: no 'visual' array")
    visual = container.arrays["visual"]
    if visual.ndim != 2:
        raise ContainerError(f"{path}: features must be 2-D, got shape {visual.shape}")
    return visual, container.meta.get("fps")


def align_visual(
    visual: np.ndarray, fps: float, stft_config: StftConfig, n_frames: int
) -> np.ndarray:
    """Nearest-frame resampling of video-rate features onto STFT frame centers."""
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    if len(visual) == 0:
        raise ValueError("No visual frames to align")
    centers = (np.arange(n_frames) * stft_config.hop + stft_config.frame_len / 2)
    idx = np.rint(centers / stft_config.sample_rate * fps).astype(int)
    return visual[np.clip(idx, 0, len(visual) - 1)]


def load_aligned_features(
    path: PathLike, stft_config: StftConfig, n_frames: int
) -> np.ndarray:
    visual, fps = load_features(path)
    if fps is not None:
        return align_visual(visual, fps, stft_config, n_frames)
    if len(visual) != n_frames:
        raise ValueError(
            f"{path}: {len(visual)} feature frames for {n_frames} STFT frames"
        )
    return visual


# -- manifests ---------------------------------------------------------------------------


def write_manifest(path: PathLike, rows: list[dict], columns: list[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, delimiter="\t", extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def read_manifest(
    path: PathLike, required: list[str], strict: bool = True
) -> tuple[list[dict], int]:
    """
    Reads a tab-separated manifest with a header row; relative paths stay relative to
    the manifest's directory, resolved by `resolve_path`.

    Rows missing a required column are an error when `strict`, otherwise they are skipped
    and counted.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Manifest not found: {path}")
    with open(path, newline="") as f:
        reader = csv.DictReader(f, delimiter="\t")
        fields = reader.fieldnames or []
        missing = [c for c in required if c not in fields]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        rows, skipped = [], 0
        for lineno, row in enumerate(reader, start=2):
            if any(not row.get(c) for c in required):
                if strict:
                    raise ValueError(f"{path}:{lineno}: malformed row")
                logger.warning(f"{path}:{lineno}: skipping malformed row")
                skipped += 1
                continue
            rows.append(row)
    return rows, skipped


def resolve_path(manifest: PathLike, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else Path(manifest).parent / p


def synth_corpus(
    out_dir: PathLike,
    synth_cfg: SynthConfig,
    corpus_cfg: CorpusConfig,
    stft_config: StftConfig,
    seed: int,
) -> Path:
    """Writes WAVs, STFT-aligned features and `corpus.tsv` (id, split, wav, features)."""
    out_dir = Path(out_dir)
    rows = []
    counts = corpus_cfg.split_counts()
    splits = [s for s in SPLITS for _ in range(counts[s])]
    for i, split in enumerate(splits):
        utt_id = f"utt{i:05d}"
        utt = synth_av_utterance(synth_cfg, stft_config, derive_seed(seed, utt_id), utt_id)
        wav = Path("wav") / f"{utt_id}.wav"
        feats = Path("features") / f"{utt_id}.feat"
        save_wav(out_dir / wav, utt.clean)
        save_features(out_dir / feats, utt.visual)
        rows.append({"id": utt_id, "split": split, "wav": str(wav), "features": str(feats)})
    manifest = out_dir / CORPUS_MANIFEST
    write_manifest(manifest, rows, ["id", "split", "wav", "features"])
    logger.info(f"Synthesized {len(rows)} utterances into {out_dir} ({counts})")
    return manifest


def load_corpus(
    corpus_dir: PathLike, split: str, stft_config: StftConfig, with_visual: bool = True
) -> list[AVUtterance]:
    manifest = Path(corpus_dir) / CORPUS_MANIFEST
    rows, _ = read_manifest(manifest, ["id", "split", "wav", "features"])
    utterances = []
    for row in rows:
        if row["split"] != split:
            continue
        clean = load_wav(resolve_path(manifest, row["wav"]))
        visual = None
        if with_visual:
            n_frames = stft_config.n_frames(len(clean))
            visual = load_aligned_features(
                resolve_path(manifest, row["features"]), stft_config, n_frames
            )
        utterances.append(AVUtterance(row["id"], clean, visual))
    return utterances


def make_noisy_set(
    corpus_dir: PathLike,
    out_dir: PathLike,
    snrs_db: list[float],
    noise_kinds: list[NoiseKind],
    seed: int,
    split: str = "test",
) -> Path:
    """
    Mixes every utterance of `split` with every noise kind at every SNR and writes
    `mixtures.tsv` (id, clean, noisy, features, noise, snr_db).
    """
    corpus_dir, out_dir = Path(corpus_dir), Path(out_dir)
    manifest = corpus_dir / CORPUS_MANIFEST
    rows, _ = read_manifest(manifest, ["id", "split", "wav", "features"])
    rows = [r for r in rows if r["split"] == split]
    if not rows:
        raise ValueError(f"Corpus {corpus_dir} has no '{split}' utterances")
    out_rows = []
    for row in rows:
        clean_path = resolve_path(manifest, row["wav"]).resolve()
        clean = load_wav(clean_path)
        for kind in noise_kinds:
            noise = gen_noise(kind, len(clean), derive_seed(seed, row["id"], kind), clean.sample_rate)
            for snr in snrs_db:
                noisy = mix_at_snr(clean, noise, snr)
                name = f"{row['id']}_{kind}_{snr:g}dB.wav"
                save_wav(out_dir / "noisy" / name, noisy)
                out_rows.append(
                    {
                        "id": row["id"],
                        "clean": str(clean_path),
                        "noisy": str(Path("noisy") / name),
                        "features": str(resolve_path(manifest, row["features"]).resolve()),
                        "noise": kind,
                        "snr_db": f"{snr:g}",
                    }
                )
    out = out_dir / MIXTURES_MANIFEST
    write_manifest(out, out_rows, ["id", "clean", "noisy", "features", "noise", "snr_db"])
    logger.info(f"Wrote {len(out_rows)} mixtures to {out}")
    return out
