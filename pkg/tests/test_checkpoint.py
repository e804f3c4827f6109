import numpy as np
import pytest
import torch

from avdkf.checkpoint import (
    init_from_checkpoint,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from avdkf.container import Container, ContainerError, write_container

from conftest import ALL_KINDS


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_round_trip(tmp_path, make_model, kind):
    model = make_model(kind, seed=4)
    if kind.is_audio_visual:
        model.set_visual_normalization(np.arange(3.0), np.array([1.0, 2.0, 3.0]))
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, meta={"epoch": 7, "valid_loss": 12.5, "config_hash": "abc"})

    ckpt = read_checkpoint(path)
    assert ckpt.model.kind is kind
    assert ckpt.model.config == model.config
    assert ckpt.epoch == 7
    assert ckpt.valid_loss == 12.5
    loaded = ckpt.model.state_dict()
    for name, tensor in model.state_dict().items():
        assert torch.equal(loaded[name], tensor), name


def test_truncated_checkpoint(tmp_path, make_model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(make_model("A_DKF"), path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(ContainerError):
        load_checkpoint(path)


def test_mismatched_tensors(tmp_path, make_model):
    model = make_model("A_VAE")
    arrays = {k: v.numpy() for k, v in model.state_dict().items()}
    arrays.pop("decoder.audio_in.linear.bias")
    path = tmp_path / "m.ckpt"
    write_container(
        path, Container("checkpoint", {"model": model.config.to_dict()}, arrays)
    )
    with pytest.raises(ContainerError, match="missing"):
        load_checkpoint(path)


def test_wrong_shape(tmp_path, make_model):
    model = make_model("A_VAE")
    arrays = {k: v.numpy() for k, v in model.state_dict().items()}
    arrays["decoder.audio_in.linear.bias"] = np.zeros(3)
    path = tmp_path / "m.ckpt"
    write_container(path, Container("checkpoint", {"model": model.config.to_dict()}, arrays))
    with pytest.raises(ContainerError, match="shape"):
        load_checkpoint(path)


def test_invalid_model_header(tmp_path):
    path = tmp_path / "m.ckpt"
    write_container(path, Container("checkpoint", {"model": {"kind": "RVAE"}}, {}))
    with pytest.raises(ContainerError, match="invalid model header"):
        load_checkpoint(path)


def test_features_file_is_not_a_checkpoint(tmp_path):
    path = tmp_path / "v.feat"
    write_container(path, Container("features", arrays={"visual": np.ones((2, 2))}))
    with pytest.raises(ContainerError):
        load_checkpoint(path)


def test_audio_only_init_for_audio_visual(tmp_path, make_model):
    source = make_model("A_DKF", seed=1)
    path = tmp_path / "a_dkf.ckpt"
    save_checkpoint(source, path)

    target = make_model("AV_DKF", seed=2)
    fresh = {k: v.clone() for k, v in target.state_dict().items()}
    copied = init_from_checkpoint(target, path)

    assert "decoder.audio_in.linear.weight" in copied
    assert "decoder.body.0.linear.weight" in copied
    assert "encoder.rnn.lstm.weight_hh_l0" in copied
    assert "encoder.combiner.linear.weight" in copied
    # shapes grew with the visual input
    for name in (
        "decoder.fusion.linear.weight",
        "encoder.rnn.lstm.weight_ih_l0",
        "transition.linear.linear.weight",
        "visual_mean",
    ):
        assert name not in copied
        assert torch.equal(target.state_dict()[name], fresh[name])

    src_state = source.state_dict()
    for name in copied:
        assert torch.equal(target.state_dict()[name], src_state[name])
