import logging

import torch

from ..util import torch_generator
from .base import (
    GenerativeModel,
    ModelConfig,
    ModelKind,
    PosteriorStep,
    complex_gaussian_loglik,
    elbo,
    gaussian_kl,
    gaussian_logpdf,
    generate,
    power_loglik,
    reparam_sample,
    sample_latents,
    sample_spectrum,
)
from .dkf import DKF
from .vae import VAE

logger = logging.getLogger(__name__)

__all__ = [
    "DKF",
    "VAE",
    "GenerativeModel",
    "ModelConfig",
    "ModelKind",
    "PosteriorStep",
    "build_model",
    "complex_gaussian_loglik",
    "elbo",
    "gaussian_kl",
    "gaussian_logpdf",
    "generate",
    "model_classes",
    "power_loglik",
    "reparam_sample",
    "sample_latents",
    "sample_spectrum",
]

model_classes: dict[ModelKind, type[GenerativeModel]] = {
    ModelKind.A_VAE: VAE,
    ModelKind.AV_VAE: VAE,
    ModelKind.A_DKF: DKF,
    ModelKind.AV_DKF: DKF,
}


def build_model(
    config: ModelConfig, seed: int | None = None, generator: torch.Generator | None = None
) -> GenerativeModel:
    """Instantiates a freshly initialized model; the seed fully determines the weights."""
    if generator is None and seed is not None:
        generator = torch_generator(seed)
    model = model_classes[config.kind](config, generator)
    n_params = sum(p.numel() for p in model.parameters())
    logger.debug(f"Built {config.kind.value} with {n_params} parameters")
    return model
