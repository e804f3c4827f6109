import numpy as np
import pytest
import torch

from avdkf.dirs import ensure_dir, get_runs_dir
from avdkf.util import check_finite, config_hash, derive_seed


def test_derive_seed_is_stable():
    assert derive_seed(0, "utt00001", "white") == derive_seed(0, "utt00001", "white")
    assert derive_seed(0, "utt00001") != derive_seed(1, "utt00001")
    assert derive_seed(0, "utt00001") != derive_seed(0, "utt00002")
    assert 0 <= derive_seed(3, 4) < 2**32


def test_check_finite():
    check_finite("x", np.ones(3))
    with pytest.raises(ValueError, match="x contains non-finite"):
        check_finite("x", np.array([1.0, np.nan]))
    with pytest.raises(ValueError):
        check_finite("t", torch.tensor([np.inf]))


def test_config_hash():
    assert config_hash({"a": 1}) == config_hash({"a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 16


def test_ensure_dir(tmp_path):
    out = ensure_dir(tmp_path / "a" / "b")
    assert out.is_dir()
    (out / "f").write_text("x")
    with pytest.raises(FileExistsError, match="--force"):
        ensure_dir(out)
    assert ensure_dir(out, force=True) == out


def test_runs_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("AVDKF_RUN_DIR", str(tmp_path))
    assert get_runs_dir() == tmp_path
    monkeypatch.delenv("AVDKF_RUN_DIR")
    monkeypatch.setenv("XDG_DATA_HOME", str(tmp_path / "data"))
    assert get_runs_dir() == tmp_path / "data" / "avdkf" / "runs"
