"""
Deep Kalman filter speech priors (A_DKF, AV_DKF).

The latent prior is a gated non-linear transition
    mean_t = (1 - g_t) * (A c_t + b) + g_t * h_t,   var_t = softplus(W relu(h_t) + b'),
with c_t = z_{t-1} (audio) or [z_{t-1}, v_t] (audio-visual), g_t = sigmoid(MLP(c_t)) and
proposal h_t = MLP(c_t). The encoder runs a backward LSTM over [log u_{t:T}, v_{t:T}]
and combines its state with z_{t-1}.
"""

import torch
from torch import nn

from ..constants import VARIANCE_FLOOR
from ..nnet import MLP, BackwardLSTM, Dense
from .base import GenerativeModel, ModelConfig, PosteriorStep


class GatedTransition(nn.Module):
    def __init__(self, config: ModelConfig, generator: torch.Generator | None = None):
        super().__init__()
        L = config.latent_dim
        in_dim = L + config.visual_dim
        hidden = [config.transition_hidden]
        self.gate = MLP(in_dim, hidden, L, "relu", "sigmoid", generator)
        self.proposal = MLP(in_dim, hidden, L, "relu", "identity", generator)
        self.linear = Dense(in_dim, L, "identity", generator)
        self.var = Dense(L, L, "softplus", generator)
        # start from the identity map on z_{t-1}
        with torch.no_grad():
            self.linear.linear.weight.zero_()
            self.linear.linear.weight[:, :L] = torch.eye(L, dtype=self.linear.linear.weight.dtype)

    def forward(self, c: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        gate = self.gate(c)
        proposal = self.proposal(c)
        mean = (1 - gate) * self.linear(c) + gate * proposal
        var = self.var(torch.relu(proposal)).clamp_min(VARIANCE_FLOOR)
        return mean, var


class RecurrentEncoder(nn.Module):
    def __init__(self, config: ModelConfig, generator: torch.Generator | None = None):
        super().__init__()
        H = config.rnn_hidden
        self.rnn = BackwardLSTM(config.freq_bins + config.visual_dim, H, generator)
        self.combiner = Dense(config.latent_dim, H, "tanh", generator)
        self.mean = Dense(H, config.latent_dim, "identity", generator)
        self.var = Dense(H, config.latent_dim, "softplus", generator)


class DKF(GenerativeModel):
    def __init__(self, config: ModelConfig, generator: torch.Generator | None = None):
        if not config.kind.is_dynamical:
            raise ValueError(f"DKF cannot be built for {config.kind.value}")
        super().__init__(config, generator)
        self.transition = GatedTransition(config, generator)
        self.encoder = RecurrentEncoder(config, generator)

    def _transition(self, z_prev, v):
        c = z_prev if v is None else torch.cat([z_prev, v.expand(*z_prev.shape[:-1], -1)], dim=-1)
        return self.transition(c)

    def _context(self, power, v):
        return self.encoder.rnn(self._encoder_input(power, v))

    def posterior_from_context(self, z_prev, context_t):
        combined = 0.5 * (self.encoder.combiner(z_prev) + context_t)
        var = self.encoder.var(combined).clamp_min(VARIANCE_FLOOR)
        return PosteriorStep(self.encoder.mean(combined), var)
