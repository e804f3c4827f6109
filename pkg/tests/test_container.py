import numpy as np
import pytest

from avdkf.container import MAGIC, Container, ContainerError, read_container, write_container


def test_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "a": rng.normal(size=(3, 4)),
        "b": np.array([np.pi, -0.0, 1e-300]),
        "empty": np.zeros((0, 5)),
        "scalar": np.array(2.5),
    }
    path = tmp_path / "x.bin"
    write_container(path, Container("features", {"fps": 30.0}, arrays))
    back = read_container(path, kind="features")
    assert back.kind == "features"
    assert back.meta == {"fps": 30.0}
    assert list(back.arrays) == list(arrays)
    for name, array in arrays.items():
        assert back.arrays[name].shape == array.shape
        assert back.arrays[name].tobytes() == array.tobytes()


def test_kind_mismatch(tmp_path):
    path = tmp_path / "x.bin"
    write_container(path, Container("features", arrays={"v": np.ones(2)}))
    with pytest.raises(ContainerError, match="expected a checkpoint"):
        read_container(path, kind="checkpoint")


def test_bad_magic(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"RIFF....WAVE")
    with pytest.raises(ContainerError, match="bad magic"):
        read_container(path)


@pytest.mark.parametrize("keep", [len(MAGIC) + 2, 60, -8])
def test_truncated(tmp_path, keep):
    path = tmp_path / "x.bin"
    write_container(path, Container("features", arrays={"v": np.arange(12.0).reshape(3, 4)}))
    raw = path.read_bytes()
    path.write_bytes(raw[:keep])
    with pytest.raises(ContainerError, match="truncated|malformed"):
        read_container(path)


def test_malformed_header(tmp_path):
    path = tmp_path / "x.bin"
    header = b'{"kind": "features"}'
    path.write_bytes(MAGIC + f"{len(header)}\n".encode() + header)
    with pytest.raises(ContainerError, match="malformed header"):
        read_container(path)
