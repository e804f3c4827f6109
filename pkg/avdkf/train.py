"""
ELBO maximization with validation-based early stopping.

Utterances are cut into non-overlapping chunks of `seq_len` STFT frames (shorter ones are
dropped), batched after a per-epoch shuffle, and trained with Adam on the negative mean
ELBO. The parameters with the lowest validation loss are restored at the end.
"""

import copy
import hashlib
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from tqdm import tqdm

from .data import AVUtterance
from .models import GenerativeModel, elbo
from .nnet import NonFiniteError, make_optimizer, opt_step
from .signal import StftConfig, power, stft
from .util import DTYPE, derive_seed, progress_disabled, torch_generator

logger = logging.getLogger(__name__)

VALID_SEED = 7919


class TrainingError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    seq_len: int = 50
    patience: int = 50
    max_epochs: int = 200
    seed: int = 0
    standardize_visual: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("batch_size", "seq_len", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_epochs < 0:
            raise ValueError(f"max_epochs must be nonnegative, got {self.max_epochs}")
        if self.max_epochs and self.patience > self.max_epochs:
            raise ValueError(
                f"patience ({self.patience}) must not exceed max_epochs ({self.max_epochs})"
            )


@dataclass
class Chunks:
    """Fixed-length training sequences, (N, T, F) power and (N, T, D_v) visual features."""

    power: torch.Tensor
    visual: torch.Tensor | None

    def __len__(self) -> int:
        return self.power.shape[0]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_elbo: float
    valid_elbo: float


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_loss: float = float("inf")
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.records)

    def to_lines(self) -> list[str]:
        lines = ["epoch\ttrain_elbo\tvalid_elbo"]
        for r in self.records:
            lines.append(f"{r.epoch}\t{r.train_elbo:.10g}\t{r.valid_elbo:.10g}")
        return lines

    def write(self, path: Path | str) -> None:
        Path(path).write_text("\n".join(self.to_lines()) + "\n")


def make_chunks(
    utterances: Sequence[AVUtterance],
    stft_config: StftConfig,
    seq_len: int,
    with_visual: bool,
) -> Chunks:
    powers, visuals = [], []
    dropped = 0
    for utt in utterances:
        u = power(stft(utt.clean, stft_config)).T
        n_chunks = u.shape[0] // seq_len
        if n_chunks == 0:
            dropped += 1
            continue
        if with_visual:
            if utt.visual is None:
                raise ValueError(f"Utterance '{utt.id}' has no visual features")
            if utt.visual.shape[0] != u.shape[0]:
                raise ValueError(
                    f"Utterance '{utt.id}': {utt.visual.shape[0]} visual frames "
                    f"for {u.shape[0]} STFT frames"
                )
        for i in range(n_chunks):
            sl = slice(i * seq_len, (i + 1) * seq_len)
            powers.append(u[sl])
            if with_visual:
                visuals.append(utt.visual[sl])
    if dropped:
        logger.warning(f"Dropped {dropped} utterances shorter than {seq_len} frames")
    if not powers:
        raise ValueError(f"No utterance has at least {seq_len} STFT frames")
    return Chunks(
        power=torch.as_tensor(np.stack(powers), dtype=DTYPE),
        visual=torch.as_tensor(np.stack(visuals), dtype=DTYPE) if with_visual else None,
    )


def visual_statistics(chunks: Chunks) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and std of the visual features over all training frames."""
    if chunks.visual is None:
        raise ValueError("Chunks carry no visual features")
    frames = chunks.visual.reshape(-1, chunks.visual.shape[-1]).numpy()
    return frames.mean(axis=0), frames.std(axis=0)


def _sequence_seed(seed: int, power: torch.Tensor) -> int:
    digest = hashlib.sha256(power.numpy().tobytes()).hexdigest()
    return derive_seed(seed, digest)


@torch.no_grad()
def validate(model: GenerativeModel, valid_set: Chunks, seed: int = VALID_SEED) -> float:
    """
    Mean negative ELBO over the validation sequences.

    Each sequence draws its reparameterization noise from a generator seeded by its own
    content, so the value is reproducible and independent of set order and duplication.
    """
    if len(valid_set) == 0:
        raise ValueError("Empty validation set")
    losses = []
    for i in range(len(valid_set)):
        u = valid_set.power[i]
        v = None if valid_set.visual is None else valid_set.visual[i]
        gen = torch_generator(_sequence_seed(seed, u))
        losses.append(-float(elbo(model, u, v, gen)))
    return float(np.mean(losses))


def train(
    model: GenerativeModel,
    train_set: Chunks,
    valid_set: Chunks,
    cfg: TrainConfig,
) -> tuple[GenerativeModel, History]:
    """
    Trains `model` in place and returns it with the best validation parameters restored.
    """
    if len(train_set) == 0 or len(valid_set) == 0:
        raise ValueError("Training and validation sets must be nonempty")
    history = History()
    if cfg.max_epochs == 0:
        logger.info("max_epochs is 0, keeping the initial parameters")
        return model, history

    if model.kind.is_audio_visual and cfg.standardize_visual:
        model.set_visual_normalization(*visual_statistics(train_set))

    gen = torch_generator(cfg.seed)
    optimizer = make_optimizer(model.parameters(), cfg.learning_rate)
    best_state = copy.deepcopy(model.state_dict())
    history.best_valid_loss = validate(model, valid_set)
    logger.info(f"Initial validation loss: {history.best_valid_loss:.4f}")
    n = len(train_set)
    epochs_since_best = 0

    bar = tqdm(range(1, cfg.max_epochs + 1), desc="train", disable=progress_disabled())
    for epoch in bar:
        model.train()
        order = torch.randperm(n, generator=gen)
        total, count = 0.0, 0
        for batch_idx, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            visual = None if train_set.visual is None else train_set.visual[idx]
            values = elbo(model, train_set.power[idx], visual, gen)
            loss = -values.mean()
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"Non-finite loss at epoch {epoch}, batch {batch_idx}"
                )
            optimizer.zero_grad()
            loss.backward()
            try:
                opt_step(optimizer)
            except NonFiniteError as e:
                raise TrainingError(f"{e} at epoch {epoch}, batch {batch_idx}") from e
            total += float(values.sum())
            count += len(idx)

        model.eval()
        valid_loss = validate(model, valid_set)
        record = EpochRecord(epoch, total / count, -valid_loss)
        history.records.append(record)
        logger.debug(
            f"epoch {epoch}: train ELBO {record.train_elbo:.4f}, valid ELBO {record.valid_elbo:.4f}"
        )
        bar.set_postfix(valid_elbo=f"{record.valid_elbo:.2f}")

        if valid_loss < history.best_valid_loss:
            history.best_valid_loss = valid_loss
            history.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= cfg.patience:
                history.stopped_early = True
                logger.info(
                    f"Early stopping at epoch {epoch}, best epoch {history.best_epoch}"
                )
                break

    model.load_state_dict(best_state)
    model.eval()
    return model, history
