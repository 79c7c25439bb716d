"""Full predictor: encoder + decoder over one parameter store, with checkpoint
serialization and the append-only feature-reuse extension."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .container import CHECKPOINT_VERSION, Cursor, read_container, write_container
from .decoder import LayerOutput, MotionDecoder, PredictionSet, fit_intentions, prediction_set
from .encoder import EncoderLayer, SceneEncoder
from .errors import ConfigError, DataFormatError, StateError
from .nn import GROUPS, AttentionSpec, ParameterStore
from .scene import Scenario, SceneInputs, VectorizeConfig, prepare
from .tensor import Tensor, no_grad


@dataclass
class ModelConfig:
    dim: int = 32
    heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 2
    num_modes: int = 6
    future_len: int = 30
    history_len: int = 11
    neighbors: int = 8
    map_tokens: int = 16
    ffn_dim: int | None = None  # default 2 * dim
    head_hidden: int | None = None  # default 2 * dim
    map_segment_len: int = 20

    def __post_init__(self):
        if self.dim % 4 != 0:
            raise ConfigError(f"dim must be divisible by 4 for 2-D position encoding, got {self.dim}")
        AttentionSpec(self.dim, self.heads)
        if self.ffn_dim is None:
            self.ffn_dim = 2 * self.dim
        if self.head_hidden is None:
            self.head_hidden = 2 * self.dim
        for name in ("encoder_layers", "decoder_layers", "num_modes", "future_len", "history_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def vectorize_config(self) -> VectorizeConfig:
        return VectorizeConfig(self.history_len, self.future_len, self.map_segment_len)


@dataclass
class ModelOutput:
    layer_outputs: list[LayerOutput]
    dense_future: Tensor  # (N_a, T, 4)

    @property
    def final(self) -> LayerOutput:
        return self.layer_outputs[-1]


class MotionPredictor:
    """Multimodal trajectory predictor over ego-normalized scenes."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.params = ParameterStore()
        self.intentions: np.ndarray | None = None
        self.feature_reuse = False
        rng = np.random.default_rng([seed, 0x4D4C])  # model-init stream
        self.encoder = SceneEncoder(self.params, config, rng)
        self.decoder = MotionDecoder(self.params, config, rng)

    # -- intentions -------------------------------------------------------

    def fit_intentions_from(self, scenarios: list[Scenario], seed: int | None = None):
        """K-means over focal-agent future endpoints of the given (train) split."""
        cfg = self.config.vectorize_config()
        endpoints = np.stack([prepare(s, cfg).gt_future[-1] for s in scenarios])
        self.intentions = fit_intentions(endpoints, self.config.num_modes, seed if seed is not None else self.seed)
        return self.intentions

    def set_intentions(self, points: np.ndarray):
        points = np.asarray(points, dtype=np.float64)
        if points.shape != (self.config.num_modes, 2):
            raise ConfigError(f"expected {(self.config.num_modes, 2)} intention points, got {points.shape}")
        self.intentions = points

    # -- forward ----------------------------------------------------------

    def forward(self, inputs: SceneInputs) -> ModelOutput:
        tokens, dense = self.encoder.forward(inputs)
        outputs = self.decoder.forward(tokens, self.intentions, cache=inputs.cache)
        return ModelOutput(outputs, dense)

    def predict_inputs(self, inputs: SceneInputs) -> PredictionSet:
        with no_grad():
            out = self.forward(inputs)
        return prediction_set(out.final.raw_params.data, out.final.logits.data)

    def predict(self, scenario: Scenario) -> PredictionSet:
        return self.predict_inputs(prepare(scenario, self.config.vectorize_config()))

    # -- feature reuse ----------------------------------------------------

    def add_feature_reuse_blocks(self, seed: int | None = None):
        """Append one fresh encoder layer and one fresh decoder layer (with its
        own prediction head) after the existing stacks, tagged auxiliary_new."""
        if self.feature_reuse:
            raise StateError("feature-reuse blocks already added")
        from .decoder import DecoderLayer

        rng = np.random.default_rng([self.seed if seed is None else seed, 0xF2])
        spec = AttentionSpec(self.config.dim, self.config.heads)
        self.encoder.extra_layers.append(
            EncoderLayer(self.params, "reuse.encoder", spec, self.config.ffn_dim, rng, "auxiliary_new")
        )
        self.decoder.extra_layers.append(
            DecoderLayer(
                self.params, "reuse.decoder", spec, self.config.head_hidden, self.config.future_len, rng, "auxiliary_new"
            )
        )
        self.feature_reuse = True


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(path, model: MotionPredictor, optimizer_state: dict | None = None):
    """Persist config, intention points, every named parameter (group +
    trainable tag) and, when given, the optimizer moments."""
    meta = {
        "config": asdict(model.config),
        "seed": model.seed,
        "feature_reuse": model.feature_reuse,
        "opt_step": None if optimizer_state is None else optimizer_state["step"],
    }
    records = [json.dumps(meta, sort_keys=True).encode("utf-8")]
    records.append(b"" if model.intentions is None else model.intentions.tobytes())
    for name, t in model.params.items():
        rec = bytearray()
        nb = name.encode("utf-8")
        rec += struct.pack("<H", len(nb)) + nb
        rec += struct.pack("<BB", GROUPS.index(model.params.group_of(name)), int(t.requires_grad))
        rec += struct.pack("<B", t.data.ndim) + struct.pack(f"<{t.data.ndim}I", *t.data.shape)
        rec += t.data.tobytes()
        if optimizer_state is not None and name in optimizer_state["m"]:
            rec += struct.pack("<B", 1)
            rec += optimizer_state["m"][name].tobytes()
            rec += optimizer_state["v"][name].tobytes()
        else:
            rec += struct.pack("<B", 0)
        records.append(bytes(rec))
    write_container(path, CHECKPOINT_VERSION, records)


def load_checkpoint(path) -> tuple[MotionPredictor, dict | None]:
    """Rebuild a model (and optimizer state, when stored) from a checkpoint."""
    records = read_container(path, CHECKPOINT_VERSION)
    if len(records) < 2:
        raise DataFormatError(f"{path}: checkpoint missing meta records")
    meta = json.loads(records[0].decode("utf-8"))
    model = MotionPredictor(ModelConfig(**meta["config"]), seed=meta["seed"])
    if meta["feature_reuse"]:
        model.add_feature_reuse_blocks()
    if records[1]:
        pts = np.frombuffer(records[1], dtype=np.float64).reshape(-1, 2).copy()
        model.set_intentions(pts)

    opt_state = None
    if meta["opt_step"] is not None:
        opt_state = {"step": meta["opt_step"], "m": {}, "v": {}}

    seen = set()
    for rec in records[2:]:
        cur = Cursor(rec)
        (name_len,) = cur.unpack("<H")
        name = cur.take(name_len).decode("utf-8")
        group_idx, trainable = cur.unpack("<BB")
        (ndim,) = cur.unpack("<B")
        shape = cur.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(cur.take(size * 8), dtype=np.float64).reshape(shape).copy()
        (has_opt,) = cur.unpack("<B")
        if name not in model.params:
            raise DataFormatError(f"{path}: unknown parameter {name!r} for this architecture")
        t = model.params[name]
        if t.data.shape != data.shape:
            raise DataFormatError(
                f"{path}: parameter {name!r} has shape {data.shape}, model expects {t.data.shape}"
            )
        if model.params.group_of(name) != GROUPS[group_idx]:
            raise DataFormatError(f"{path}: parameter {name!r} group mismatch")
        t.data = data
        t.requires_grad = bool(trainable)
        if has_opt:
            if opt_state is None:
                raise DataFormatError(f"{path}: moments present but no optimizer step recorded")
            opt_state["m"][name] = np.frombuffer(cur.take(size * 8), dtype=np.float64).reshape(shape).copy()
            opt_state["v"][name] = np.frombuffer(cur.take(size * 8), dtype=np.float64).reshape(shape).copy()
        seen.add(name)
    missing = set(model.params.names()) - seen
    if missing:
        raise DataFormatError(f"{path}: checkpoint missing parameters {sorted(missing)[:3]}...")
    return model, opt_state
