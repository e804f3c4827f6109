"""
Generative speech priors: shared types, densities and the ELBO.

All four kinds share the same generative decoder p(s_t | z_t, v_t) = N_c(0, diag(var)),
with var = exp(linear(MLP(z_t, v_t))). They differ in the latent prior (standard normal
for VAE kinds, gated first-order transition for DKF kinds) and in what the encoder
conditions on (the current frame for VAE kinds, z_{t-1} and the future frames u_{t:T}
for DKF kinds).
"""

import logging
import math
from abc import abstractmethod
from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
from torch import nn

from ..constants import POWER_EPS, VARIANCE_FLOOR
from ..nnet import MLP, Dense
from ..signal import ComplexSpectrogram, StftConfig
from ..util import DTYPE

logger = logging.getLogger(__name__)


class ModelKind(str, Enum):
    A_VAE = "A_VAE"
    AV_VAE = "AV_VAE"
    A_DKF = "A_DKF"
    AV_DKF = "AV_DKF"

    @property
    def is_audio_visual(self) -> bool:
        return self in (ModelKind.AV_VAE, ModelKind.AV_DKF)

    @property
    def is_dynamical(self) -> bool:
        return self in (ModelKind.A_DKF, ModelKind.AV_DKF)

    @property
    def audio_only(self) -> "ModelKind":
        """The audio-only counterpart, used as the fine-tuning source."""
        return {
            ModelKind.AV_VAE: ModelKind.A_VAE,
            ModelKind.AV_DKF: ModelKind.A_DKF,
        }.get(self, self)


@dataclass(frozen=True)
class ModelConfig:
    """
    Dimensions of a generative model.

    Args:
        kind: One of the four model kinds.
        freq_bins: F, number of one-sided STFT bins.
        latent_dim: L.
        visual_dim: D_v; forced to 0 for audio-only kinds.
        decoder_hidden: Hidden sizes of the decoder MLP. None picks the kind default:
            (32, 64, 128, 256) for DKF kinds, (encoder_hidden,) for VAE kinds.
        encoder_hidden: Hidden size of the single-layer VAE encoder.
        rnn_hidden: Hidden size of the backward recurrent DKF encoder.
        transition_hidden: Hidden size of the gate and proposal MLPs of the DKF prior.
    """

    kind: ModelKind = ModelKind.A_DKF
    freq_bins: int = 129
    latent_dim: int = 4
    visual_dim: int = 8
    decoder_hidden: tuple[int, ...] | None = None
    encoder_hidden: int = 64
    rnn_hidden: int = 32
    transition_hidden: int = 32

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.decoder_hidden is not None:
            object.__setattr__(self, "decoder_hidden", tuple(self.decoder_hidden))
        if not self.kind.is_audio_visual:
            object.__setattr__(self, "visual_dim", 0)
        elif self.visual_dim < 1:
            raise ValueError(f"{self.kind.value} needs visual_dim >= 1")
        if self.latent_dim < 1 or self.latent_dim >= self.freq_bins:
            raise ValueError(
                f"latent_dim must satisfy 1 <= L < F, got L={self.latent_dim}, F={self.freq_bins}"
            )

    @property
    def resolved_decoder_hidden(self) -> tuple[int, ...]:
        if self.decoder_hidden:
            return self.decoder_hidden
        if self.kind.is_dynamical:
            return (32, 64, 128, 256)
        return (self.encoder_hidden,)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "freq_bins": self.freq_bins,
            "latent_dim": self.latent_dim,
            "visual_dim": self.visual_dim,
            "decoder_hidden": list(self.resolved_decoder_hidden),
            "encoder_hidden": self.encoder_hidden,
            "rnn_hidden": self.rnn_hidden,
            "transition_hidden": self.transition_hidden,
        }


@dataclass(frozen=True)
class PosteriorStep:
    """Parameters of q(z_t | r_t)."""

    mean: torch.Tensor
    var: torch.Tensor


# -- densities ---------------------------------------------------------------------------


def _check_positive(name: str, var: torch.Tensor) -> None:
    if not bool((var > 0).all()):
        raise ValueError(f"{name} must be strictly positive")


def reparam_sample(
    mean: torch.Tensor, var: torch.Tensor, eps: torch.Tensor
) -> torch.Tensor:
    """z = mean + sqrt(var) * eps, differentiable in mean and var."""
    return mean + torch.sqrt(var.clamp_min(VARIANCE_FLOOR)) * eps


def gaussian_kl(
    mean1: torch.Tensor, var1: torch.Tensor, mean2: torch.Tensor, var2: torch.Tensor
) -> torch.Tensor:
    """KL(N(mean1, var1) || N(mean2, var2)) for diagonal Gaussians, summed over the last axis."""
    _check_positive("KL variances", var1)
    _check_positive("KL variances", var2)
    return 0.5 * torch.sum(
        torch.log(var2 / var1) + (var1 + (mean1 - mean2) ** 2) / var2 - 1, dim=-1
    )


def gaussian_logpdf(
    z: torch.Tensor, mean: torch.Tensor, var: torch.Tensor
) -> torch.Tensor:
    _check_positive("Gaussian variance", var)
    return -0.5 * torch.sum(
        math.log(2 * math.pi) + torch.log(var) + (z - mean) ** 2 / var, dim=-1
    )


def power_loglik(power: torch.Tensor, var: torch.Tensor) -> torch.Tensor:
    """Circular complex Gaussian log-density written in terms of |s|^2, summed over bins."""
    _check_positive("Likelihood variance", var)
    return torch.sum(-math.log(math.pi) - torch.log(var) - power / var, dim=-1)


def complex_gaussian_loglik(s: torch.Tensor, var: torch.Tensor) -> torch.Tensor:
    """log N_c(s; 0, diag(var)), summed over the last axis."""
    if not torch.is_tensor(s):
        s = torch.as_tensor(np.asarray(s))
    power = (s.real**2 + s.imag**2) if s.is_complex() else s.to(DTYPE) ** 2
    return power_loglik(power, var)


# -- shared networks ---------------------------------------------------------------------


class Decoder(nn.Module):
    """
    z_t (and v_t) -> speech variance.

    The audio pathway `audio_in` sees z_t only. AV kinds add a fused pathway over the
    concatenation [z_t, v_t]; its activation is summed with the audio pathway's (skip
    connection), so an audio-only decoder is the fused decoder with `fusion` removed.
    """

    def __init__(self, config: ModelConfig, generator: torch.Generator | None = None):
        super().__init__()
        hidden = config.resolved_decoder_hidden
        self.audio_in = Dense(config.latent_dim, hidden[0], "tanh", generator)
        self.fusion = (
            Dense(config.latent_dim + config.visual_dim, hidden[0], "tanh", generator)
            if config.kind.is_audio_visual
            else None
        )
        self.body = MLP(
            hidden[0], hidden[1:], config.freq_bins, "tanh", "identity", generator
        )

    def forward(self, z: torch.Tensor, v: torch.Tensor | None) -> torch.Tensor:
        h = self.audio_in(z)
        if self.fusion is not None:
            h = h + self.fusion(torch.cat([z, v], dim=-1))
        log_var = self.body(h)
        return torch.exp(log_var).clamp_min(VARIANCE_FLOOR)


class GenerativeModel(nn.Module):
    """
    Base class of the four model kinds.

    Parameters live in three submodules named `decoder` (theta_s), `transition`
    (theta_z) and `encoder` (psi); their tensor names are what checkpoints store.
    """

    def __init__(self, config: ModelConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        self.decoder = Decoder(config, generator)
        dv = config.visual_dim
        self.register_buffer("visual_mean", torch.zeros(dv, dtype=DTYPE))
        self.register_buffer("visual_std", torch.ones(dv, dtype=DTYPE))

    @property
    def kind(self) -> ModelKind:
        return self.config.kind

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    @property
    def freq_bins(self) -> int:
        return self.config.freq_bins

    @property
    def visual_dim(self) -> int:
        return self.config.visual_dim

    def set_visual_normalization(self, mean: np.ndarray, std: np.ndarray) -> None:
        with torch.no_grad():
            self.visual_mean.copy_(torch.as_tensor(mean, dtype=DTYPE))
            self.visual_std.copy_(torch.as_tensor(std, dtype=DTYPE).clamp_min(1e-8))

    def prepare_visual(self, v: torch.Tensor | np.ndarray | None) -> torch.Tensor | None:
        """Validates and standardizes visual features; audio-only kinds drop them."""
        if not self.kind.is_audio_visual:
            return None
        if v is None:
            raise ValueError(f"{self.kind.value} requires visual features v_t")
        v = torch.as_tensor(v, dtype=DTYPE)
        if v.shape[-1] != self.visual_dim:
            raise ValueError(
                f"Expected visual features of dim {self.visual_dim}, got {v.shape[-1]}"
            )
        return (v - self.visual_mean) / self.visual_std

    def _encoder_input(
        self, power: torch.Tensor, v: torch.Tensor | None
    ) -> torch.Tensor:
        power = torch.as_tensor(power, dtype=DTYPE)
        if bool((power < 0).any()):
            raise ValueError("Power frames must be nonnegative")
        feats = torch.log(power + POWER_EPS)
        if v is not None:
            feats = torch.cat([feats, v], dim=-1)
        return feats

    # -- the three parametric maps ------------------------------------------------------

    def decode_variance(
        self, z: torch.Tensor, v: torch.Tensor | np.ndarray | None = None
    ) -> torch.Tensor:
        """sigma^2_{theta_s}(z_t, v_t), shape (..., F)."""
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"Expected latent dim {self.latent_dim}, got {z.shape[-1]}")
        return self.decoder(z, self.prepare_visual(v))

    def prior_transition(
        self, z_prev: torch.Tensor, v: torch.Tensor | np.ndarray | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """(mean, var) of p(z_t | z_{t-1}, v_t)."""
        return self._transition(z_prev, self.prepare_visual(v))

    def encoder_context(
        self, power: torch.Tensor, v: torch.Tensor | np.ndarray | None = None
    ) -> torch.Tensor:
        """Per-frame encoder features, shape (..., T, H); row t depends on frames >= t only."""
        return self._context(torch.as_tensor(power, dtype=DTYPE), self.prepare_visual(v))

    @abstractmethod
    def _transition(
        self, z_prev: torch.Tensor, v: torch.Tensor | None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        raise NotImplementedError

    @abstractmethod
    def _context(self, power: torch.Tensor, v: torch.Tensor | None) -> torch.Tensor:
        raise NotImplementedError

    @abstractmethod
    def posterior_from_context(
        self, z_prev: torch.Tensor, context_t: torch.Tensor
    ) -> PosteriorStep:
        raise NotImplementedError

    def encode_posterior(
        self,
        z_prev: torch.Tensor,
        power_tail: torch.Tensor,
        v_tail: torch.Tensor | np.ndarray | None = None,
    ) -> PosteriorStep:
        """q(z_t | z_{t-1}, u_{t:T}), with `power_tail` = u_{t:T} as (..., T-t+1, F)."""
        if power_tail.shape[-2] == 0:
            raise ValueError("Posterior over an empty sequence")
        context = self.encoder_context(power_tail, v_tail)
        return self.posterior_from_context(z_prev, context[..., 0, :])

    # -- sequence-level helpers ---------------------------------------------------------

    def forward(
        self,
        power: torch.Tensor,
        visual: torch.Tensor | np.ndarray | None = None,
        generator: torch.Generator | None = None,
    ) -> torch.Tensor:
        return elbo(self, power, visual, generator)

    @torch.no_grad()
    def posterior_mean(
        self, power: torch.Tensor | np.ndarray, visual: torch.Tensor | np.ndarray | None = None
    ) -> torch.Tensor:
        """Runs the encoder recursion feeding back posterior means, shape (..., T, L)."""
        power = torch.as_tensor(power, dtype=DTYPE)
        v = self.prepare_visual(visual)
        if v is not None:
            v = v.expand(*power.shape[:-1], self.visual_dim)
        context = self._context(power, v)
        z_prev = torch.zeros(*power.shape[:-2], self.latent_dim, dtype=DTYPE)
        means = []
        for t in range(power.shape[-2]):
            z_prev = self.posterior_from_context(z_prev, context[..., t, :]).mean
            means.append(z_prev)
        return torch.stack(means, dim=-2)

    def transition_sequence(
        self, z: torch.Tensor, visual: torch.Tensor | np.ndarray | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Prior parameters for every frame of a whole latent path, with z_0 = 0."""
        z_prev = torch.cat([torch.zeros_like(z[..., :1, :]), z[..., :-1, :]], dim=-2)
        return self.prior_transition(z_prev, visual)


def elbo(
    model: GenerativeModel,
    power: torch.Tensor | np.ndarray,
    visual: torch.Tensor | np.ndarray | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """
    Single-sample Monte-Carlo ELBO.

    Ancestral recursion over t = 1..T with z_0 = 0: sample z_t ~ q(z_t | r_t) by
    reparameterization, accumulate log p(s_t | z_t, v_t) - KL(q(z_t | r_t) || p(z_t | z_{t-1}, v_t)).

    `power` is |s_t|^2 as (T, F) or (B, T, F); returns a scalar or a (B,) tensor.
    """
    power = torch.as_tensor(power, dtype=DTYPE)
    if power.ndim not in (2, 3) or power.shape[-2] < 1:
        raise ValueError(f"ELBO expects (T, F) or (B, T, F) power, got {tuple(power.shape)}")
    if power.shape[-1] != model.freq_bins:
        raise ValueError(f"Expected {model.freq_bins} bins, got {power.shape[-1]}")
    v = model.prepare_visual(visual)
    if v is not None:
        v = v.expand(*power.shape[:-1], model.visual_dim)
    n_frames = power.shape[-2]
    batch_shape = power.shape[:-2]

    context = model._context(power, v)
    z_prev = torch.zeros(*batch_shape, model.latent_dim, dtype=DTYPE)
    kl = torch.zeros(batch_shape, dtype=DTYPE)
    zs = []
    for t in range(n_frames):
        q = model.posterior_from_context(z_prev, context[..., t, :])
        v_t = None if v is None else v[..., t, :]
        prior_mean, prior_var = model._transition(z_prev, v_t)
        eps = torch.randn(q.mean.shape, generator=generator, dtype=DTYPE)
        z_t = reparam_sample(q.mean, q.var, eps)
        kl = kl + gaussian_kl(q.mean, q.var, prior_mean, prior_var)
        zs.append(z_t)
        z_prev = z_t
    z = torch.stack(zs, dim=-2)
    speech_var = model.decoder(z, v)
    rec = power_loglik(power, speech_var).sum(dim=-1)
    return rec - kl


def sample_spectrum(
    speech_var: torch.Tensor | np.ndarray, generator: torch.Generator | None = None
) -> np.ndarray:
    """Draws s ~ N_c(0, diag(var)) for a (T, F) variance grid, returned as (F, T) complex."""
    var = torch.as_tensor(speech_var, dtype=DTYPE)
    re = torch.randn(var.shape, generator=generator, dtype=DTYPE)
    im = torch.randn(var.shape, generator=generator, dtype=DTYPE)
    s = torch.sqrt(var / 2) * torch.complex(re, im)
    return s.T.numpy()


@torch.no_grad()
def sample_latents(
    model: GenerativeModel,
    n_frames: int,
    visual: torch.Tensor | np.ndarray | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Ancestral sampling z_t ~ p(z_t | z_{t-1}, v_t), shape (T, L)."""
    v = model.prepare_visual(visual)
    if v is not None and v.shape[-2] < n_frames:
        raise ValueError(f"Need {n_frames} visual frames, got {v.shape[-2]}")
    z_prev = torch.zeros(model.latent_dim, dtype=DTYPE)
    zs = []
    for t in range(n_frames):
        mean, var = model._transition(z_prev, None if v is None else v[t])
        eps = torch.randn(model.latent_dim, generator=generator, dtype=DTYPE)
        z_prev = reparam_sample(mean, var, eps)
        zs.append(z_prev)
    return torch.stack(zs)


@torch.no_grad()
def generate(
    model: GenerativeModel,
    n_frames: int,
    visual: torch.Tensor | np.ndarray | None = None,
    generator: torch.Generator | None = None,
    stft_config: StftConfig | None = None,
) -> ComplexSpectrogram:
    """Ancestral sample of a clean speech spectrogram from the prior."""
    z = sample_latents(model, n_frames, visual, generator)
    v = model.prepare_visual(visual)
    speech_var = model.decoder(z, None if v is None else v[:n_frames])
    config = stft_config or StftConfig(frame_len=2 * (model.freq_bins - 1))
    return ComplexSpectrogram(sample_spectrum(speech_var, generator), config)

