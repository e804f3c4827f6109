import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, get_args

import numpy as np
import torch

from ..constants import VARIANCE_FLOOR
from ..signal import Waveform

logger = logging.getLogger(__name__)

GainMode = Literal["gamma_map", "multiplicative"]
GAIN_MODES: tuple[GainMode, ...] = get_args(GainMode)


class EnhanceError(RuntimeError):
    """The EM state became non-finite."""


@dataclass(frozen=True)
class EnhanceConfig:
    """
    Args:
        em_iters: Number of E-step/M-step alternations.
        estep_iters: Optimizer steps per E-step.
        estep_lr: Learning rate of the E-step optimizer.
        rank: NMF rank K of the noise model.
        gain_mode: `gamma_map` optimizes log-gains in the E-step under a Gamma prior;
            `multiplicative` updates them in the M-step without a prior.
        alpha: Gamma prior shape.
        beta: Gamma prior rate.
        nmf_exponent: Exponent of the multiplicative NMF and gain updates; 0.5 gives
            monotone majorization-minimization steps, 1.0 the plain ratio updates.
        seed: Seeds the random W, H initialization.
    """

    em_iters: int = 100
    estep_iters: int = 20
    estep_lr: float = 1e-3
    rank: int = 8
    gain_mode: GainMode = "gamma_map"
    alpha: float = 1.0
    beta: float = 1.0
    nmf_exponent: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.em_iters < 0 or self.estep_iters < 0:
            raise ValueError("Iteration counts must be nonnegative")
        if self.rank < 1:
            raise ValueError(f"rank must be positive, got {self.rank}")
        if self.estep_lr <= 0:
            raise ValueError(f"estep_lr must be positive, got {self.estep_lr}")
        if self.gain_mode not in GAIN_MODES:
            raise ValueError(f"Unknown gain mode '{self.gain_mode}', expected one of {GAIN_MODES}")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("Gamma prior parameters must be positive")
        if not 0 < self.nmf_exponent <= 1:
            raise ValueError(f"nmf_exponent must lie in (0, 1], got {self.nmf_exponent}")


@dataclass
class NoiseNMF:
    """Noise variance model W @ H, W: F x K, H: K x T."""

    W: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        self.W = np.maximum(np.asarray(self.W, dtype=np.float64), VARIANCE_FLOOR)
        self.H = np.maximum(np.asarray(self.H, dtype=np.float64), VARIANCE_FLOOR)
        if self.W.ndim != 2 or self.H.ndim != 2 or self.W.shape[1] != self.H.shape[0]:
            raise ValueError(f"Inconsistent NMF shapes W {self.W.shape}, H {self.H.shape}")

    @classmethod
    def random(
        cls, n_bins: int, n_frames: int, rank: int, rng: np.random.Generator
    ) -> "NoiseNMF":
        return cls(rng.uniform(size=(n_bins, rank)), rng.uniform(size=(rank, n_frames)))

    @property
    def rank(self) -> int:
        return self.W.shape[1]

    def variance(self) -> np.ndarray:
        return np.maximum(self.W @ self.H, VARIANCE_FLOOR)


@dataclass
class GainSequence:
    g: np.ndarray
    alpha: float = 1.0
    beta: float = 1.0
    mode: GainMode = "gamma_map"

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=np.float64)
        if self.g.ndim != 1 or not (self.g > 0).all():
            raise ValueError("Gains must be a 1-D array of positive values")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("Gamma prior parameters must be positive")
        if self.mode not in GAIN_MODES:
            raise ValueError(f"Unknown gain mode '{self.mode}'")

    @classmethod
    def ones(cls, n_frames: int, cfg: EnhanceConfig) -> "GainSequence":
        return cls(np.ones(n_frames), cfg.alpha, cfg.beta, cfg.gain_mode)

    def with_values(self, g: np.ndarray) -> "GainSequence":
        return GainSequence(g, self.alpha, self.beta, self.mode)


@dataclass
class EStepResult:
    z: torch.Tensor
    gains: GainSequence
    # objective before each optimizer step and after the last one
    trace: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: float
    mean_gain: float
    min_gain: float
    max_gain: float


@dataclass
class Diagnostics:
    records: list[IterationRecord] = field(default_factory=list)
    gains: np.ndarray | None = None

    def write_csv(self, path: Path | str) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iteration", "objective", "mean_gain", "min_gain", "max_gain"])
            for r in self.records:
                writer.writerow(
                    [r.iteration, f"{r.objective:.10g}", f"{r.mean_gain:.10g}",
                     f"{r.min_gain:.10g}", f"{r.max_gain:.10g}"]
                )


@dataclass
class EnhanceResult:
    clean: Waveform
    noise: Waveform
    diagnostics: Diagnostics
    nmf: NoiseNMF

    @property
    def final_gains(self) -> np.ndarray:
        assert self.diagnostics.gains is not None
        return self.diagnostics.gains
