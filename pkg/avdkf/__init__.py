from .__version__ import __version__
from .cli import main
from .enhance import EnhanceConfig, enhance
from .models import ModelConfig, ModelKind, build_model
from .signal import StftConfig, Waveform

__all__ = [
    "EnhanceConfig",
    "ModelConfig",
    "ModelKind",
    "StftConfig",
    "Waveform",
    "build_model",
    "enhance",
    "main",
]
__version__ = __version__
