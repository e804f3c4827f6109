"""
Run configuration.

A run config is a TOML document with a top-level `preset` and `seed` and one table per
component ([stft], [model], [train], [enhance], [synth], [corpus], [paths]). Values are
layered, later layers winning:

    preset < config file < environment (AVDKF_<SECTION>_<KEY>, AVDKF_SEED) < command-line flags

Unknown tables or keys are rejected. The resolved config is echoed as `config.toml` into
every output directory.
"""

import copy
import logging
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import tomlkit
from tomlkit.exceptions import ParseError

from .constants import RESOLVED_CONFIG_NAME
from .data import CorpusConfig, SynthConfig
from .dirs import get_config_dir, get_runs_dir
from .enhance import EnhanceConfig
from .models import ModelConfig, ModelKind
from .signal import StftConfig
from .train import TrainConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "AVDKF_"


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


@dataclass(frozen=True)
class PathsConfig:
    # empty means the platform default, see dirs.get_runs_dir
    run_dir: str = ""

    def resolved_run_dir(self) -> Path:
        return Path(self.run_dir).expanduser() if self.run_dir else get_runs_dir()


# seeds come from the top-level `seed`
SECTIONS: dict[str, type] = {
    "stft": StftConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "enhance": EnhanceConfig,
    "synth": SynthConfig,
    "corpus": CorpusConfig,
    "paths": PathsConfig,
}
SEEDED_SECTIONS = ("train", "enhance")


def section_keys(section: str) -> list[str]:
    names = [f.name for f in fields(SECTIONS[section])]
    if section in SEEDED_SECTIONS:
        names.remove("seed")
    return names


PRESETS: dict[str, dict[str, Any]] = {
    "desk": {
        "seed": 0,
        "stft": {"frame_len": 256, "hop": 64, "window": "sine", "sample_rate": 16000},
        "model": {
            "kind": "AV_DKF",
            "freq_bins": 129,
            "latent_dim": 4,
            "visual_dim": 8,
            "decoder_hidden": [],
            "encoder_hidden": 64,
            "rnn_hidden": 32,
            "transition_hidden": 32,
        },
        "train": {
            "learning_rate": 1e-3,
            "batch_size": 8,
            "seq_len": 50,
            "patience": 10,
            "max_epochs": 50,
            "standardize_visual": True,
        },
        "enhance": {
            "em_iters": 50,
            "estep_iters": 20,
            "estep_lr": 5e-3,
            "rank": 8,
            "gain_mode": "gamma_map",
            "alpha": 1.0,
            "beta": 1.0,
            "nmf_exponent": 0.5,
        },
        "synth": {
            "duration": 2.0,
            "n_harmonics": 30,
            "n_bands": 8,
            "visual_snr": 10.0,
            "envelope_smoothness": 4.0,
            "envelope_std": 1.5,
            "loudness_std": 0.7,
            "level": 0.05,
        },
        "corpus": {"num_utterances": 100, "valid_fraction": 0.1, "test_fraction": 0.1},
        "paths": {"run_dir": ""},
    },
}

PRESETS["paper"] = copy.deepcopy(PRESETS["desk"])
PRESETS["paper"]["stft"].update(frame_len=1024, hop=256)
PRESETS["paper"]["model"].update(
    freq_bins=513, latent_dim=16, visual_dim=32, encoder_hidden=128, rnn_hidden=128
)
PRESETS["paper"]["train"].update(
    learning_rate=1e-4, batch_size=128, patience=50, max_epochs=500
)
PRESETS["paper"]["enhance"].update(em_iters=100, estep_iters=20, estep_lr=1e-3)
PRESETS["paper"]["synth"].update(duration=3.0, n_bands=32)
PRESETS["paper"]["corpus"].update(num_utterances=1000)
PRESETS["full"] = PRESETS["paper"]

DEFAULT_PRESET = "desk"


@dataclass(frozen=True)
class RunConfig:
    preset: str
    seed: int
    sections: dict[str, dict[str, Any]]

    @property
    def stft(self) -> StftConfig:
        return self._build("stft")

    @property
    def model(self) -> ModelConfig:
        return self._build("model")

    @property
    def train(self) -> TrainConfig:
        return self._build("train")

    @property
    def enhance(self) -> EnhanceConfig:
        return self._build("enhance")

    @property
    def synth(self) -> SynthConfig:
        return self._build("synth")

    @property
    def corpus(self) -> CorpusConfig:
        return self._build("corpus")

    @property
    def paths(self) -> PathsConfig:
        return self._build("paths")

    def _build(self, section: str):
        values = dict(self.sections[section])
        if section in SEEDED_SECTIONS:
            values["seed"] = self.seed
        try:
            if section == "model":
                values["decoder_hidden"] = tuple(values["decoder_hidden"]) or None
                values["kind"] = ModelKind(values["kind"])
            return SECTIONS[section](**values)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"[{section}] {e}") from None

    def validate(self) -> "RunConfig":
        for section in SECTIONS:
            self._build(section)
        if self.stft.n_bins != self.model.freq_bins:
            raise ConfigError(
                f"[model] freq_bins = {self.model.freq_bins} does not match "
                f"[stft] frame_len = {self.stft.frame_len} ({self.stft.n_bins} bins)"
            )
        return self

    def to_dict(self) -> dict[str, Any]:
        return {"preset": self.preset, "seed": self.seed, **copy.deepcopy(self.sections)}

    def to_toml(self) -> str:
        return tomlkit.dumps(self.to_dict())

    def write(self, out_dir: Path, name: str = RESOLVED_CONFIG_NAME) -> Path:
        """Echoes the resolved config into `out_dir`."""
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / name
        path.write_text(self.to_toml())
        return path


def _merge(target: dict[str, Any], layer: dict[str, Any], origin: str) -> None:
    for key, value in layer.items():
        if key in ("preset", "seed"):
            target[key] = value
            continue
        if key not in SECTIONS:
            raise ConfigError(f"Unknown section [{key}] in {origin}")
        if not isinstance(value, dict):
            raise ConfigError(f"[{key}] must be a table in {origin}")
        allowed = section_keys(key)
        for subkey, subvalue in value.items():
            if subkey not in allowed:
                raise ConfigError(f"Unknown key '{key}.{subkey}' in {origin}")
            target[key][subkey] = subvalue


def _parse_value(raw: str) -> Any:
    """Parses an environment value as a TOML value, falling back to a plain string."""
    try:
        return tomlkit.parse(f"v = {raw}")["v"].unwrap()
    except Exception:
        return raw


def env_layer(environ: dict[str, str] | None = None) -> dict[str, Any]:
    """Collects AVDKF_PRESET, AVDKF_SEED and AVDKF_<SECTION>_<KEY> variables into a config layer."""
    environ = os.environ if environ is None else environ
    layer: dict[str, Any] = {}
    if "AVDKF_PRESET" in environ:
        layer["preset"] = environ["AVDKF_PRESET"]
    if "AVDKF_SEED" in environ:
        layer["seed"] = _parse_value(environ["AVDKF_SEED"])
    for section in SECTIONS:
        for key in section_keys(section):
            name = f"{ENV_PREFIX}{section}_{key}".upper()
            if name in environ:
                layer.setdefault(section, {})[key] = _parse_value(environ[name])
    return layer


def read_config_file(path: Path) -> dict[str, Any]:
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path) as f:
            return tomlkit.load(f).unwrap()
    except ParseError as e:
        raise ConfigError(f"Could not parse {path}: {e}") from None


def load_config(
    path: Path | None = None,
    preset: str | None = None,
    overrides: dict[str, Any] | None = None,
    environ: dict[str, str] | None = None,
) -> RunConfig:
    """
    Resolves a RunConfig from preset, file, environment and `overrides`.

    `overrides` maps "section.key" (or "seed") to a value; None values are ignored.
    """
    file_layer = read_config_file(path) if path else {}
    env = env_layer(environ)
    name = preset or env.get("preset") or file_layer.get("preset") or DEFAULT_PRESET
    if name not in PRESETS:
        raise ConfigError(f"Unknown preset '{name}', expected one of {sorted(PRESETS)}")

    resolved = copy.deepcopy(PRESETS[name])
    _merge(resolved, file_layer, str(path))
    _merge(resolved, env, "environment")

    flag_layer: dict[str, Any] = {}
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        if dotted == "seed":
            flag_layer["seed"] = value
            continue
        section, _, key = dotted.partition(".")
        flag_layer.setdefault(section, {})[key] = value
    _merge(resolved, flag_layer, "command-line flags")

    seed = resolved.pop("seed")
    resolved.pop("preset", None)
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {seed!r}") from None
    config = RunConfig(preset=name, seed=seed, sections=resolved).validate()
    logger.debug(f"Resolved config:\n{config.to_toml()}")
    return config


def default_config_path() -> Path | None:
    """The user-level config file, used when no --config is given."""
    path = get_config_dir() / RESOLVED_CONFIG_NAME
    return path if path.is_file() else None
