"""Plain-text key=value run configuration with section-prefixed keys.

Example::

    # model
    model.dim=32
    model.heads=4
    # training
    train.epochs=10
    train.lr=3e-3
    # generation
    generate.preset=target_like
    generate.count=100

Unknown keys are rejected up front so typos never silently fall back to
defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig

_MODEL_KEYS = {
    "model.dim": ("dim", int),
    "model.heads": ("heads", int),
    "model.encoder_layers": ("encoder_layers", int),
    "model.decoder_layers": ("decoder_layers", int),
    "model.modes": ("num_modes", int),
    "model.future_len": ("future_len", int),
    "model.history_len": ("history_len", int),
    "model.neighbors": ("neighbors", int),
    "model.map_tokens": ("map_tokens", int),
    "model.ffn_dim": ("ffn_dim", int),
    "model.head_hidden": ("head_hidden", int),
    "model.map_segment_len": ("map_segment_len", int),
}

_TRAIN_KEYS = {
    "train.epochs": ("epochs", int),
    "train.seed": ("seed", int),
    "train.lr": ("lr", float),
    "train.beta1": ("beta1", float),
    "train.beta2": ("beta2", float),
    "train.eps": ("eps", float),
    "train.weight_decay": ("weight_decay", float),
    "train.nms_radius": ("nms_radius", float),
}

_GENERATE_KEYS = {
    "generate.seed": ("gen_seed", int),
    "generate.preset": ("gen_preset", str),
    "generate.count": ("gen_count", int),
    "generate.rate": ("gen_rate", float),
    "generate.duration": ("gen_duration", float),
}

KNOWN_KEYS = {**_MODEL_KEYS, **_TRAIN_KEYS, **_GENERATE_KEYS}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 10
    seed: int = 0
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    nms_radius: float = 2.5
    gen_seed: int = 0
    gen_preset: str = "source_like"
    gen_count: int = 100
    gen_rate: float = 10.0
    gen_duration: float | None = None

    def future_len_for_generation(self) -> int:
        """Future steps implied by an explicit duration, else the model's."""
        if self.gen_duration is None:
            return self.model.future_len
        steps = int(round(self.gen_duration * self.gen_rate)) + 1
        future = steps - self.model.history_len
        if future < 1:
            raise ConfigError(
                f"duration {self.gen_duration}s at {self.gen_rate}Hz leaves no future "
                f"after {self.model.history_len} history steps"
            )
        return future


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_run_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a RunConfig from an optional file plus key=value overrides."""
    pairs: dict[str, str] = {}
    if path is not None:
        pairs.update(parse_config_text(Path(path).read_text()))
    if overrides:
        pairs.update(overrides)

    unknown = set(pairs) - set(KNOWN_KEYS)
    if unknown:
        raise ConfigError(
            f"unknown config keys {sorted(unknown)}; valid keys: {sorted(KNOWN_KEYS)}"
        )

    model_kwargs = {}
    run_kwargs = {}
    for key, raw in pairs.items():
        attr, conv = KNOWN_KEYS[key]
        try:
            value = conv(raw)
        except ValueError as exc:
            raise ConfigError(f"config key {key}={raw!r}: expected {conv.__name__}") from exc
        if key in _MODEL_KEYS:
            model_kwargs[attr] = value
        else:
            run_kwargs[attr] = value

    config = RunConfig(model=ModelConfig(**model_kwargs), **run_kwargs)
    valid_presets = ("source_like", "target_like")
    if config.gen_preset not in valid_presets:
        raise ConfigError(f"generate.preset={config.gen_preset!r}; valid: {valid_presets}")
    return config


def config_field_names() -> list[str]:
    return [f.name for f in fields(RunConfig)]
