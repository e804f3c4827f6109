"""
Variational-EM speech enhancement.

    X = stft(noisy)
    z <- encoder posterior means of X (and v), g <- 1, W, H <- U(0, 1)
    repeat em_iters times:
        E-step: MAP over (z, g)            (estep.estep_map)
        M-step: NMF sweeps over W, H        (nmf.mstep_nmf)
                gains, multiplicative mode  (nmf.update_gains)
    s_hat = Wiener posterior mean, noisy -> istft
"""

import logging

import numpy as np
import torch
from tqdm import tqdm

from ..models import GenerativeModel
from ..nnet import NonFiniteError
from ..signal import ComplexSpectrogram, StftConfig, Waveform, istft, power, stft
from ..util import DTYPE, numpy_rng, progress_disabled
from .estep import estep_map
from .nmf import mstep_nmf, update_gains
from .types import (
    Diagnostics,
    EnhanceConfig,
    EnhanceError,
    EnhanceResult,
    GainSequence,
    IterationRecord,
    NoiseNMF,
)

logger = logging.getLogger(__name__)


def initialize(
    x: ComplexSpectrogram,
    visual: np.ndarray | None,
    model: GenerativeModel,
    cfg: EnhanceConfig,
) -> tuple[torch.Tensor, NoiseNMF, GainSequence]:
    """Latents from the encoder's posterior means on the noisy input, unit gains, random NMF."""
    z = model.posterior_mean(power(x).T, visual)
    nmf = NoiseNMF.random(x.n_bins, x.n_frames, cfg.rank, numpy_rng(cfg.seed))
    return z, nmf, GainSequence.ones(x.n_frames, cfg)


def wiener_filter(
    x: np.ndarray, speech_var: np.ndarray, g: np.ndarray, noise_var: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """
    Posterior means of speech and noise for F x T arrays.

    speech = g S / (g S + N) * x, noise = N / (g S + N) * x
    """
    scaled = g[None, :] * speech_var
    total = scaled + noise_var
    return scaled / total * x, noise_var / total * x


@torch.no_grad()
def decoded_variance(
    z: torch.Tensor, visual: np.ndarray | None, model: GenerativeModel
) -> np.ndarray:
    """Decoder variances as F x T."""
    return model.decode_variance(torch.as_tensor(z, dtype=DTYPE), visual).numpy().T


def wiener_estimate(
    x: ComplexSpectrogram,
    z: torch.Tensor,
    g: np.ndarray,
    visual: np.ndarray | None,
    model: GenerativeModel,
    nmf: NoiseNMF,
    return_noise: bool = False,
) -> ComplexSpectrogram | tuple[ComplexSpectrogram, ComplexSpectrogram]:
    speech, noise = wiener_filter(
        x.data, decoded_variance(z, visual, model), np.asarray(g), nmf.variance()
    )
    speech_spec = ComplexSpectrogram(speech, x.config)
    if return_noise:
        return speech_spec, ComplexSpectrogram(noise, x.config)
    return speech_spec


def _to_length(w: Waveform, n_samples: int) -> Waveform:
    # istft covers only whole frames; the uncovered tail is silent
    samples = np.zeros(n_samples)
    samples[: len(w)] = w.samples[:n_samples]
    return Waveform(samples, w.sample_rate)


def check_inputs(
    model: GenerativeModel, visual: np.ndarray | None, n_frames: int
) -> np.ndarray | None:
    if not model.kind.is_audio_visual:
        if visual is not None:
            logger.warning(f"{model.kind.value} is audio-only, ignoring visual features")
        return None
    if visual is None:
        raise ValueError(f"{model.kind.value} requires visual features aligned to the STFT frames")
    visual = np.asarray(visual, dtype=np.float64)
    if visual.shape != (n_frames, model.visual_dim):
        raise ValueError(
            f"Expected visual features of shape {(n_frames, model.visual_dim)}, "
            f"got {visual.shape}"
        )
    return visual


def enhance(
    noisy: Waveform,
    visual: np.ndarray | None,
    model: GenerativeModel,
    cfg: EnhanceConfig,
    stft_config: StftConfig,
) -> EnhanceResult:
    model.eval()
    x = stft(noisy, stft_config)
    if x.n_bins != model.freq_bins:
        raise ValueError(
            f"Model expects {model.freq_bins} bins, STFT gives {x.n_bins} "
            f"(frame_len {stft_config.frame_len})"
        )
    visual = check_inputs(model, visual, x.n_frames)
    power_x = power(x)

    z, nmf, gains = initialize(x, visual, model, cfg)
    diagnostics = Diagnostics()
    for it in tqdm(range(cfg.em_iters), desc="EM", disable=progress_disabled(), leave=False):
        try:
            result = estep_map(x, visual, model, nmf, gains, z, cfg)
        except NonFiniteError as e:
            raise EnhanceError(f"{e} at EM iteration {it}") from e
        z, gains = result.z, result.gains
        speech_var = decoded_variance(z, visual, model)
        nmf = mstep_nmf(power_x, speech_var, gains.g, nmf, cfg.nmf_exponent)
        if gains.mode == "multiplicative":
            gains = gains.with_values(
                update_gains(power_x, speech_var, gains.g, nmf, cfg.nmf_exponent)
            )
        if not (np.isfinite(nmf.W).all() and np.isfinite(nmf.H).all() and np.isfinite(gains.g).all()):
            raise EnhanceError(f"Non-finite NMF or gain state at EM iteration {it}")
        objective = result.trace[-1] if result.trace else float("nan")
        diagnostics.records.append(
            IterationRecord(
                iteration=it,
                objective=objective,
                mean_gain=float(gains.g.mean()),
                min_gain=float(gains.g.min()),
                max_gain=float(gains.g.max()),
            )
        )
        logger.debug(f"EM iteration {it}: objective {objective:.4f}, mean gain {gains.g.mean():.4f}")
    diagnostics.gains = gains.g.copy()

    speech_spec, noise_spec = wiener_estimate(x, z, gains.g, visual, model, nmf, return_noise=True)
    return EnhanceResult(
        clean=_to_length(istft(speech_spec), len(noisy)),
        noise=_to_length(istft(noise_spec), len(noisy)),
        diagnostics=diagnostics,
        nmf=nmf,
    )
