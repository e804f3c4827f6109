import numpy as np
import pytest
import torch

from avdkf.data import SynthConfig, mix_at_snr, gen_noise, synth_av_utterance
from avdkf.models import ModelConfig, ModelKind, build_model
from avdkf.signal import StftConfig

ALL_KINDS = list(ModelKind)


@pytest.fixture
def tiny_stft() -> StftConfig:
    # 17 bins, 4x overlap
    return StftConfig(frame_len=32, hop=8)


@pytest.fixture
def tiny_synth() -> SynthConfig:
    return SynthConfig(duration=0.1, n_bands=3)


def tiny_model_config(kind: ModelKind | str, **kwargs) -> ModelConfig:
    values = dict(
        kind=kind,
        freq_bins=17,
        latent_dim=2,
        visual_dim=3,
        decoder_hidden=(8,),
        encoder_hidden=8,
        rnn_hidden=4,
        transition_hidden=4,
    )
    values.update(kwargs)
    return ModelConfig(**values)


def grad_model_config(kind: ModelKind | str) -> ModelConfig:
    """L=2, F=5, small enough for finite differences over every parameter."""
    return ModelConfig(
        kind=kind,
        freq_bins=5,
        latent_dim=2,
        visual_dim=2,
        decoder_hidden=(4, 3),
        encoder_hidden=4,
        rnn_hidden=3,
        transition_hidden=3,
    )


@pytest.fixture
def make_model():
    def _make(kind: ModelKind | str, seed: int = 0, **kwargs):
        return build_model(tiny_model_config(kind, **kwargs), seed=seed)

    return _make


@pytest.fixture
def utterance(tiny_synth, tiny_stft):
    return synth_av_utterance(tiny_synth, tiny_stft, seed=11, utt_id="u0")


@pytest.fixture
def noisy(utterance):
    noise = gen_noise("white", len(utterance.clean), seed=5)
    return mix_at_snr(utterance.clean, noise, 0.0)


def random_power(shape, seed: int = 0) -> torch.Tensor:
    rng = np.random.default_rng(seed)
    return torch.as_tensor(rng.exponential(size=shape), dtype=torch.float64)
