import hashlib
import logging
import sys

import numpy as np
import torch
from rich.console import Console

logger = logging.getLogger(__name__)

console = Console(log_path=False, stderr=True)

# all nets and E-step variables are 64-bit
DTYPE = torch.float64


def progress_disabled() -> bool | None:
    # tqdm: None disables on non-TTY
    return None if sys.stderr.isatty() else True


def torch_generator(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(seed)
    return gen


def numpy_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def derive_seed(seed: int, *keys: str | int) -> int:
    """Derives a stable child seed, e.g. one per utterance id."""
    digest = hashlib.sha256(repr((seed, *keys)).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def check_finite(name: str, value: np.ndarray | torch.Tensor) -> None:
    if isinstance(value, torch.Tensor):
        ok = bool(torch.isfinite(value).all())
    else:
        ok = bool(np.isfinite(value).all())
    if not ok:
        raise ValueError(f"{name} contains non-finite values")


def config_hash(obj: object) -> str:
    return hashlib.sha256(repr(obj).encode()).hexdigest()[:16]
