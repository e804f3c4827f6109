"""
STFT analysis/synthesis with a sine window and no zero-padding.

Frames start at sample 0 and step by `hop`; only frames that fit entirely inside the
signal are analysed, and `istft` returns exactly the samples those frames cover.
"""

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import windows

from .util import check_finite

logger = logging.getLogger(__name__)

WindowName = Literal["sine"]


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 1024
    hop: int | None = None
    window: WindowName = "sine"
    sample_rate: int = 16000

    def __post_init__(self):
        if self.hop is None:
            object.__setattr__(self, "hop", self.frame_len // 4)
        if self.frame_len <= 0:
            raise ValueError(f"frame_len must be positive, got {self.frame_len}")
        if self.hop <= 0 or self.frame_len % self.hop:
            raise ValueError(
                f"hop ({self.hop}) must be positive and divide frame_len ({self.frame_len})"
            )
        if self.window != "sine":
            raise ValueError(f"Unsupported window '{self.window}'")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def n_bins(self) -> int:
        return self.frame_len // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_len:
            return 0
        return (n_samples - self.frame_len) // self.hop + 1

    def n_samples(self, n_frames: int) -> int:
        """Number of samples covered by `n_frames` full frames."""
        return (n_frames - 1) * self.hop + self.frame_len

    def get_window(self) -> np.ndarray:
        # scipy's symmetric cosine window is sin(pi (n + 0.5) / N)
        return windows.cosine(self.frame_len, sym=True)


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"Waveform must be 1-D, got shape {samples.shape}")
        check_finite("waveform", samples)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class ComplexSpectrogram:
    """F bins x T frames of one-sided STFT coefficients."""

    data: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim != 2 or data.shape[0] != self.config.n_bins:
            raise ValueError(
                f"Spectrogram shape {data.shape} inconsistent with frame_len "
                f"{self.config.frame_len} ({self.config.n_bins} bins expected)"
            )
        check_finite("spectrogram", data)
        object.__setattr__(self, "data", data)

    @property
    def n_bins(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


def stft(w: Waveform, c: StftConfig) -> ComplexSpectrogram:
    if len(w) < c.frame_len:
        raise ValueError(
            f"Signal of {len(w)} samples is shorter than one frame ({c.frame_len})"
        )
    if w.sample_rate != c.sample_rate:
        logger.warning(
            f"Waveform rate {w.sample_rate} Hz differs from STFT config rate {c.sample_rate} Hz"
        )
    frames = sliding_window_view(w.samples, c.frame_len)[:: c.hop]
    spec = np.fft.rfft(frames * c.get_window(), axis=-1)
    return ComplexSpectrogram(spec.T, c)


def istft(S: ComplexSpectrogram) -> Waveform:
    c = S.config
    if S.n_bins != c.n_bins:
        raise ValueError(f"{S.n_bins} bins do not match frame_len {c.frame_len}")
    window = c.get_window()
    frames = np.fft.irfft(S.data.T, n=c.frame_len, axis=-1) * window
    n_samples = c.n_samples(S.n_frames)
    out = np.zeros(n_samples)
    norm = np.zeros(n_samples)
    for t, frame in enumerate(frames):
        start = t * c.hop
        out[start : start + c.frame_len] += frame
        norm[start : start + c.frame_len] += window**2
    # the sine window is nonzero at both ends, so every covered sample has norm > 0
    return Waveform(out / norm, c.sample_rate)


def power(S: ComplexSpectrogram | np.ndarray) -> np.ndarray:
    data = S.data if isinstance(S, ComplexSpectrogram) else np.asarray(S)
    check_finite("spectrogram", data)
    return data.real**2 + data.imag**2


def cola_sum(c: StftConfig) -> np.ndarray:
    """Sum of squared windows over one hop period in the fully overlapped region."""
    w2 = c.get_window() ** 2
    return w2.reshape(-1, c.hop).sum(axis=0)


def interior(n_samples: int, c: StftConfig) -> slice:
    """Samples away from the edges, where every sample is covered by all overlapping frames."""
    margin = c.frame_len - c.hop
    return slice(margin, n_samples - margin)
