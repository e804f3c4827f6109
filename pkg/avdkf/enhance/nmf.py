"""
M-step: multiplicative updates of the noise NMF and, in `multiplicative` gain mode, of the
frame gains.

With V = g * S + W H (S the decoded speech variances, F x T), each factor is multiplied
by (numerator / denominator) ** exponent. The ratios are those of Itakura-Saito NMF with
a fixed additive component; exponent 0.5 makes every sweep a majorization-minimization
step, so the negative log-likelihood never increases.
"""

import logging

import numpy as np

from ..constants import VARIANCE_FLOOR
from .types import NoiseNMF

logger = logging.getLogger(__name__)


def total_variance(speech_var: np.ndarray, g: np.ndarray, nmf: NoiseNMF) -> np.ndarray:
    return np.maximum(g[None, :] * speech_var + nmf.W @ nmf.H, VARIANCE_FLOOR)


def neg_loglik(power_x: np.ndarray, V: np.ndarray) -> float:
    """-log N_c(X; 0, V) summed over the F x T grid."""
    return float(np.sum(np.log(np.pi) + np.log(V) + power_x / V))


def _check_shapes(power_x: np.ndarray, speech_var: np.ndarray, g: np.ndarray, nmf: NoiseNMF):
    F, T = power_x.shape
    if speech_var.shape != (F, T) or g.shape != (T,):
        raise ValueError(
            f"Shape mismatch: power {power_x.shape}, speech variance {speech_var.shape}, "
            f"gains {g.shape}"
        )
    if nmf.W.shape[0] != F or nmf.H.shape[1] != T:
        raise ValueError(f"NMF shapes W {nmf.W.shape}, H {nmf.H.shape} do not fit {F} x {T}")


def mstep_nmf(
    power_x: np.ndarray,
    speech_var: np.ndarray,
    g: np.ndarray,
    nmf: NoiseNMF,
    exponent: float = 0.5,
) -> NoiseNMF:
    """One W sweep then one H sweep; `power_x` = |X|^2 and `speech_var` are F x T."""
    _check_shapes(power_x, speech_var, g, nmf)
    W, H = nmf.W, nmf.H

    V = total_variance(speech_var, g, nmf)
    W = W * ((power_x / V**2) @ H.T / ((1 / V) @ H.T)) ** exponent
    W = np.maximum(W, VARIANCE_FLOOR)

    V = np.maximum(g[None, :] * speech_var + W @ H, VARIANCE_FLOOR)
    H = H * (W.T @ (power_x / V**2) / (W.T @ (1 / V))) ** exponent
    H = np.maximum(H, VARIANCE_FLOOR)
    return NoiseNMF(W, H)


def update_gains(
    power_x: np.ndarray,
    speech_var: np.ndarray,
    g: np.ndarray,
    nmf: NoiseNMF,
    exponent: float = 0.5,
) -> np.ndarray:
    """g_t <- g_t * [sum_f |x|^2 S / V^2 / sum_f S / V] ** exponent"""
    _check_shapes(power_x, speech_var, g, nmf)
    V = total_variance(speech_var, g, nmf)
    num = np.sum(power_x * speech_var / V**2, axis=0)
    den = np.sum(speech_var / V, axis=0)
    return np.maximum(g * (num / den) ** exponent, VARIANCE_FLOOR)
