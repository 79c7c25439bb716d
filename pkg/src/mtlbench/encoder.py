"""Scene-context encoding.

Polyline batches are collapsed into per-token features by a PointNet-style
encoder (pointwise MLP + masked max-pool). Tokens then exchange information
through layers of local self-attention, where each token attends only to its
k nearest tokens in the 2-D scene. Finally a light trajectory head predicts a
coarse future for every agent and folds it back into the agent tokens, so the
decoder sees both history and anticipated interaction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .nn import Attention, AttentionSpec, LayerNorm, Mlp, ParameterStore, sinusoidal_features
from .scene import AGENT_CHANNELS, MAP_CHANNELS, PolylineBatch, SceneInputs
from .tensor import Tensor


@dataclass
class SceneTokens:
    """Encoded agent+map tokens with their 2-D anchor positions."""

    features: Tensor  # ((N_a + N_m), D)
    positions: np.ndarray  # ((N_a + N_m), 2)
    num_agents: int

    @property
    def num_map(self) -> int:
        return self.features.shape[0] - self.num_agents

    def agent_features(self) -> Tensor:
        return self.features[: self.num_agents, :]

    def map_features(self) -> Tensor:
        return self.features[self.num_agents :, :]


def knn_indices(positions: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest tokens (2-D Euclidean) per token, self included.

    Distance ties break on the lower token index, so selection is fully
    deterministic.
    """
    n = len(positions)
    if k <= 0:
        raise ConfigError(f"neighbor count must be positive, got {k}")
    if k > n:
        raise ConfigError(f"neighbor count {k} exceeds token count {n}")
    diff = positions[:, None, :] - positions[None, :, :]
    d2 = (diff * diff).sum(axis=2)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


class PolylineEncoder:
    """Pointwise MLP over polyline points followed by masked max-pooling."""

    def __init__(self, store: ParameterStore, name: str, channels: int, dim: int, rng, group: str):
        self.mlp = Mlp.create(store, name, [channels, dim, dim], rng, group)

    def __call__(self, batch: PolylineBatch) -> Tensor:
        feats = self.mlp(Tensor(batch.data))
        return T.masked_max_pool(feats, batch.mask)


class EncoderLayer:
    """Local self-attention plus feed-forward, each with residual + layer norm."""

    def __init__(self, store, name, spec: AttentionSpec, ffn_dim: int, rng, group):
        d = spec.dim
        self.attn = Attention.create(store, f"{name}.attn", spec, rng, group)
        self.norm1 = LayerNorm.create(store, f"{name}.norm1", d, group)
        self.ffn = Mlp.create(store, f"{name}.ffn", [d, ffn_dim, d], rng, group)
        self.norm2 = LayerNorm.create(store, f"{name}.norm2", d, group)

    def __call__(self, feats: Tensor, neighbors: np.ndarray, pe: Tensor, pe_sets: Tensor) -> Tensor:
        q = feats + pe
        v_sets = T.take_rows(feats, neighbors)
        k_sets = v_sets + pe_sets
        feats = self.norm1(feats + self.attn.grouped(q, k_sets, v_sets))
        return self.norm2(feats + self.ffn(feats))


class DenseFuturePredictor:
    """Coarse per-agent future (position+velocity per step) fed back into tokens."""

    def __init__(self, store, name, dim: int, hidden: int, future_len: int, rng, group):
        self.future_len = future_len
        self.head = Mlp.create(store, f"{name}.head", [dim, hidden, future_len * 4], rng, group)
        self.featurizer = Mlp.create(store, f"{name}.featurizer", [4, dim, dim], rng, group)
        self.fuse = Mlp.create(store, f"{name}.fuse", [2 * dim, dim], rng, group)

    def __call__(self, agent_feats: Tensor):
        n = agent_feats.shape[0]
        future = self.head(agent_feats).reshape((n, self.future_len, 4))
        point_feats = self.featurizer(future)
        pooled = T.masked_max_pool(point_feats, np.ones((n, self.future_len), dtype=bool))
        updated = self.fuse(T.concat([agent_feats, pooled], axis=1))
        return future, updated


class SceneEncoder:
    def __init__(self, store, config, rng, group: str = "encoder"):
        d = config.dim
        spec = AttentionSpec(d, config.heads)
        self.config = config
        self.agent_encoder = PolylineEncoder(store, "encoder.agents", AGENT_CHANNELS, d, rng, group)
        self.map_encoder = PolylineEncoder(store, "encoder.map", MAP_CHANNELS, d, rng, group)
        self.layers = [
            EncoderLayer(store, f"encoder.layer{i}", spec, config.ffn_dim, rng, group)
            for i in range(config.encoder_layers)
        ]
        self.extra_layers: list[EncoderLayer] = []
        self.dense_future = DenseFuturePredictor(
            store, "encoder.dense", d, config.head_hidden, config.future_len, rng, group
        )

    def encode_polylines(self, inputs: SceneInputs) -> SceneTokens:
        agent_feats = self.agent_encoder(inputs.agents)
        if inputs.map.data.shape[0] > 0:
            map_feats = self.map_encoder(inputs.map)
            feats = T.concat([agent_feats, map_feats], axis=0)
            positions = np.concatenate([inputs.agent_positions, inputs.map_positions], axis=0)
        else:
            feats = agent_feats
            positions = inputs.agent_positions
        return SceneTokens(feats, positions, inputs.agents.data.shape[0])

    def forward(self, inputs: SceneInputs):
        """Returns (tokens with future-aware agent rows, dense future (N_a, T, 4))."""
        tokens = self.encode_polylines(inputs)
        n = tokens.features.shape[0]
        k = min(self.config.neighbors, n)
        key = ("encoder_consts", self.config.dim, k)
        if key not in inputs.cache:
            neighbors = knn_indices(tokens.positions, k)
            pe_np = sinusoidal_features(tokens.positions, self.config.dim)
            inputs.cache[key] = (neighbors, pe_np, pe_np[neighbors])
        neighbors, pe_np, pe_sets_np = inputs.cache[key]
        pe, pe_sets = Tensor(pe_np), Tensor(pe_sets_np)
        feats = tokens.features
        for layer in self.layers + self.extra_layers:
            feats = layer(feats, neighbors, pe, pe_sets)

        future, updated_agents = self.dense_future(feats[: tokens.num_agents, :])
        if tokens.num_map > 0:
            feats = T.concat([updated_agents, feats[tokens.num_agents :, :]], axis=0)
        else:
            feats = updated_agents
        return SceneTokens(feats, tokens.positions, tokens.num_agents), future
