from .em import enhance, initialize, wiener_estimate, wiener_filter
from .estep import estep_map, gamma_logpdf, map_objective, noisy_loglik
from .nmf import mstep_nmf, neg_loglik, update_gains
from .run import enhance_file, enhance_manifest
from .types import (
    GAIN_MODES,
    Diagnostics,
    EnhanceConfig,
    EnhanceError,
    EnhanceResult,
    EStepResult,
    GainMode,
    GainSequence,
    NoiseNMF,
)

__all__ = [
    "GAIN_MODES",
    "Diagnostics",
    "EStepResult",
    "EnhanceConfig",
    "EnhanceError",
    "EnhanceResult",
    "GainMode",
    "GainSequence",
    "NoiseNMF",
    "enhance",
    "enhance_file",
    "enhance_manifest",
    "estep_map",
    "gamma_logpdf",
    "initialize",
    "map_objective",
    "mstep_nmf",
    "neg_loglik",
    "noisy_loglik",
    "update_gains",
    "wiener_estimate",
    "wiener_filter",
]
