"""Frame-independent VAE speech priors (A_VAE, AV_VAE)."""

import torch
from torch import nn

from ..constants import VARIANCE_FLOOR
from ..nnet import Dense
from ..util import DTYPE
from .base import GenerativeModel, ModelConfig, PosteriorStep


class VariationalEncoder(nn.Module):
    """q(z_t | u_t, v_t): one tanh hidden layer over [log u_t, v_t]."""

    def __init__(self, config: ModelConfig, generator: torch.Generator | None = None):
        super().__init__()
        in_dim = config.freq_bins + config.visual_dim
        self.hidden = Dense(in_dim, config.encoder_hidden, "tanh", generator)
        self.mean = Dense(config.encoder_hidden, config.latent_dim, "identity", generator)
        self.var = Dense(config.encoder_hidden, config.latent_dim, "softplus", generator)


class VAE(GenerativeModel):
    """
    Standard normal prior p(z_t) = N(0, I) and a per-frame encoder. The z_{t-1}
    argument of the posterior and of the prior is accepted and ignored.
    """

    def __init__(self, config: ModelConfig, generator: torch.Generator | None = None):
        if config.kind.is_dynamical:
            raise ValueError(f"VAE cannot be built for {config.kind.value}")
        super().__init__(config, generator)
        self.encoder = VariationalEncoder(config, generator)

    def _transition(self, z_prev, v):
        shape = (*z_prev.shape[:-1], self.latent_dim)
        return torch.zeros(shape, dtype=DTYPE), torch.ones(shape, dtype=DTYPE)

    def _context(self, power, v):
        return self.encoder.hidden(self._encoder_input(power, v))

    def posterior_from_context(self, z_prev, context_t):
        var = self.encoder.var(context_t).clamp_min(VARIANCE_FLOOR)
        return PosteriorStep(self.encoder.mean(context_t), var)
