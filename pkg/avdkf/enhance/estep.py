"""
MAP E-step: joint mode-finding over the latent path z_{1:T} and the frame gains g_{1:T}.

The objective is

    sum_t  log N_c(x_t; 0, g_t sigma^2(z_t, v_t) + W h_t)
         + log p(z_t | z_{t-1}, v_t)
         + log Gamma(g_t; alpha, beta)

with z_0 = 0. Gains are searched as zeta = log g; the prior is evaluated on g itself,
with no Jacobian term, so the maximizer in g is unchanged by the reparameterization.
"""

import logging
import math

import numpy as np
import torch
from scipy.special import gammaln

from ..constants import GAIN_MAX, GAIN_MIN
from ..models import GenerativeModel, gaussian_logpdf, power_loglik
from ..nnet import NonFiniteError, grad, make_optimizer, opt_step
from ..signal import ComplexSpectrogram, power
from ..util import DTYPE
from .types import EnhanceConfig, EStepResult, GainSequence, NoiseNMF

logger = logging.getLogger(__name__)


def gamma_logpdf(
    g: torch.Tensor | float, alpha: float, beta: float
) -> torch.Tensor | float:
    """alpha log(beta) - log Gamma(alpha) + (alpha - 1) log(g) - beta g, elementwise."""
    if alpha <= 0 or beta <= 0:
        raise ValueError(f"Gamma parameters must be positive, got alpha={alpha}, beta={beta}")
    const = alpha * math.log(beta) - float(gammaln(alpha))
    if torch.is_tensor(g):
        if not bool((g > 0).all()):
            raise ValueError("Gamma density evaluated at a nonpositive gain")
        return const + (alpha - 1) * torch.log(g) - beta * g
    if g <= 0:
        raise ValueError(f"Gamma density evaluated at nonpositive gain {g}")
    return const + (alpha - 1) * math.log(g) - beta * g


def mixture_loglik(
    power_x: torch.Tensor,
    speech_var: torch.Tensor,
    g: torch.Tensor,
    noise_var: torch.Tensor,
) -> torch.Tensor:
    """Per-frame log N_c(x_t; 0, g_t speech_var_t + noise_var_t); inputs are (T, F) and (T,)."""
    return power_loglik(power_x, g.unsqueeze(-1) * speech_var + noise_var)


def noisy_loglik(
    x: ComplexSpectrogram | np.ndarray,
    z: torch.Tensor,
    g: torch.Tensor,
    visual: torch.Tensor | np.ndarray | None,
    model: GenerativeModel,
    nmf: NoiseNMF,
    t: int | None = None,
) -> torch.Tensor:
    """
    Log-likelihood of the noisy frames under the speech-plus-noise mixture.

    `x` is F x T, `z` is T x L, `g` has T entries. Returns frame `t`'s value, or the
    per-frame values when `t` is None.
    """
    g = torch.as_tensor(g, dtype=DTYPE)
    if not bool((g > 0).all()):
        raise ValueError("Gains must be positive")
    power_x = torch.as_tensor(power(x).T, dtype=DTYPE)
    noise_var = torch.as_tensor(nmf.variance().T, dtype=DTYPE)
    speech_var = model.decode_variance(z, visual)
    values = mixture_loglik(power_x, speech_var, g, noise_var)
    return values if t is None else values[t]


def map_objective(
    z: torch.Tensor,
    zeta: torch.Tensor,
    power_x: torch.Tensor,
    visual: torch.Tensor | np.ndarray | None,
    model: GenerativeModel,
    noise_var: torch.Tensor,
    gains: GainSequence,
    with_gain_prior: bool = True,
) -> torch.Tensor:
    """The E-step objective at (z, zeta = log g); `power_x` and `noise_var` are T x F."""
    g = torch.exp(zeta)
    speech_var = model.decode_variance(z, visual)
    objective = mixture_loglik(power_x, speech_var, g, noise_var).sum()
    prior_mean, prior_var = model.transition_sequence(z, visual)
    objective = objective + gaussian_logpdf(z, prior_mean, prior_var).sum()
    if with_gain_prior:
        objective = objective + gamma_logpdf(g, gains.alpha, gains.beta).sum()
    return objective


def estep_map(
    x: ComplexSpectrogram | np.ndarray,
    visual: torch.Tensor | np.ndarray | None,
    model: GenerativeModel,
    nmf: NoiseNMF,
    gains: GainSequence,
    z_init: torch.Tensor,
    cfg: EnhanceConfig,
    update_latents: bool = True,
    lr: float | None = None,
) -> EStepResult:
    """
    Runs `cfg.estep_iters` Adam steps on the negated objective, from a fresh optimizer state.

    In `multiplicative` gain mode the gain prior is dropped and the gains stay fixed here;
    they are updated in the M-step instead. In `gamma_map` mode the log-gains are clamped
    to [log GAIN_MIN, log GAIN_MAX] after every step.
    """
    gamma_mode = gains.mode == "gamma_map"
    power_x = torch.as_tensor(power(x).T, dtype=DTYPE)
    noise_var = torch.as_tensor(nmf.variance().T, dtype=DTYPE)
    if power_x.shape[0] != z_init.shape[0] or power_x.shape[0] != len(gains.g):
        raise ValueError(
            f"Frame count mismatch: {power_x.shape[0]} frames, "
            f"{z_init.shape[0]} latents, {len(gains.g)} gains"
        )

    z = z_init.detach().clone().to(DTYPE).requires_grad_(update_latents)
    zeta = torch.log(torch.as_tensor(gains.g, dtype=DTYPE)).requires_grad_(gamma_mode)
    params = [p for p in (z, zeta) if p.requires_grad]

    def objective() -> torch.Tensor:
        value = map_objective(
            z, zeta, power_x, visual, model, noise_var, gains, with_gain_prior=gamma_mode
        )
        if not torch.isfinite(value):
            raise NonFiniteError("Non-finite E-step objective")
        return value

    if cfg.estep_iters == 0 or not params:
        return EStepResult(z.detach(), gains, [])

    optimizer = make_optimizer(params, lr if lr is not None else cfg.estep_lr)
    trace = []
    for _ in range(cfg.estep_iters):
        value = objective()
        trace.append(float(value))
        for p, d in zip(params, grad(-value, params)):
            p.grad = d
        opt_step(optimizer)
        if gamma_mode:
            with torch.no_grad():
                zeta.clamp_(math.log(GAIN_MIN), math.log(GAIN_MAX))
    with torch.no_grad():
        trace.append(float(objective()))

    new_gains = gains.with_values(torch.exp(zeta).detach().numpy())
    return EStepResult(z.detach(), new_gains, trace)
