import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TypeAlias

import numpy as np
import torch

from .container import Container, ContainerError, read_container, write_container
from .models import GenerativeModel, ModelConfig, build_model
from .util import DTYPE

PathLike: TypeAlias = str | Path

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "checkpoint"


@dataclass
class Checkpoint:
    model: GenerativeModel
    meta: dict = field(default_factory=dict)

    @property
    def epoch(self) -> int | None:
        return self.meta.get("epoch")

    @property
    def valid_loss(self) -> float | None:
        return self.meta.get("valid_loss")


def save_checkpoint(
    model: GenerativeModel, path: PathLike, meta: dict | None = None
) -> None:
    """
    Writes all parameters and buffers of `model`, plus its dims, to a container file.

    `meta` carries training metadata (epoch, validation loss, config hash).
    """
    arrays = {
        name: tensor.detach().cpu().numpy() for name, tensor in model.state_dict().items()
    }
    write_container(
        path,
        Container(
            kind=CHECKPOINT_KIND,
            meta={"model": model.config.to_dict(), "training": meta or {}},
            arrays=arrays,
        ),
    )
    logger.info(f"Saved {model.kind.value} checkpoint to {path}")


def read_checkpoint(path: PathLike) -> Checkpoint:
    container = read_container(path, kind=CHECKPOINT_KIND)
    try:
        config = ModelConfig(**container.meta["model"])
    except (KeyError, TypeError, ValueError) as e:
        raise ContainerError(f"{path}: invalid model header ({e})") from None

    model = build_model(config, seed=0)
    expected = model.state_dict()
    missing = sorted(set(expected) - set(container.arrays))
    extra = sorted(set(container.arrays) - set(expected))
    if missing or extra:
        raise ContainerError(
            f"{path}: tensors do not match a {config.kind.value} model "
            f"(missing: {missing}, unexpected: {extra})"
        )
    state = {}
    for name, target in expected.items():
        array = container.arrays[name]
        if tuple(array.shape) != tuple(target.shape):
            raise ContainerError(
                f"{path}: tensor '{name}' has shape {array.shape}, expected {tuple(target.shape)}"
            )
        state[name] = torch.from_numpy(array).to(DTYPE)
    model.load_state_dict(state)
    model.eval()
    return Checkpoint(model=model, meta=container.meta.get("training", {}))


def load_checkpoint(path: PathLike) -> GenerativeModel:
    return read_checkpoint(path).model


def init_from_checkpoint(model: GenerativeModel, path: PathLike) -> list[str]:
    """
    Copies every tensor of the checkpoint whose name and shape match a tensor of `model`.

    This is the audio-only to audio-visual fine-tuning path: the audio pathway transfers,
    tensors whose shape changed with the visual inputs keep their fresh initialization.
    Returns the names of the copied tensors.
    """
    source = read_container(path, kind=CHECKPOINT_KIND).arrays
    state = model.state_dict()
    copied = []
    with torch.no_grad():
        for name, target in state.items():
            array = source.get(name)
            if array is None or tuple(np.shape(array)) != tuple(target.shape):
                continue
            target.copy_(torch.from_numpy(array))
            copied.append(name)
    fresh = len(state) - len(copied)
    logger.info(
        f"Initialized {len(copied)} tensors from {path}, {fresh} freshly initialized"
    )
    if not copied:
        logger.warning(f"No tensor of {path} matches the {model.kind.value} model")
    return copied
