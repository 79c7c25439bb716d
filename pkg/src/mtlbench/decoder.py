"""Trajectory decoding with motion query pairs.

Each of the K modes is anchored by a clustered 2-D intention point. A static
query embeds that anchor; a dynamic query re-embeds the endpoint predicted by
the previous layer, so refinement sharpens across layers. Every layer runs
self-attention over mode content, cross-attention into agent tokens, and
cross-attention into the map tokens nearest the mode's current endpoint, then
emits per-step bivariate-Gaussian parameters plus one confidence logit per
mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .cluster import kmeans
from .errors import ConfigError, NumericError, ShapeError
from .nn import Attention, AttentionSpec, Linear, Mlp, sinusoidal_encoding, sinusoidal_features
from .tensor import Tensor


def fit_intentions(endpoints: np.ndarray, num_modes: int, seed: int) -> np.ndarray:
    """K-means centers over ground-truth trajectory endpoints (ego frame)."""
    endpoints = np.asarray(endpoints, dtype=np.float64)
    if endpoints.ndim != 2 or endpoints.shape[1] != 2:
        raise ConfigError(f"endpoints must be (M, 2), got {endpoints.shape}")
    if len(endpoints) < num_modes:
        raise ConfigError(f"{len(endpoints)} endpoints cannot seed {num_modes} intention points")
    centers, _ = kmeans(endpoints, num_modes, seed=seed)
    return centers


def select_map_tokens(endpoints: np.ndarray, map_positions: np.ndarray, count: int) -> np.ndarray:
    """Per mode, the ``count`` map tokens nearest its endpoint (ties by index)."""
    n_m = len(map_positions)
    count = min(count, n_m)
    if count <= 0:
        return np.zeros((len(endpoints), 0), dtype=np.int64)
    diff = endpoints[:, None, :] - map_positions[None, :, :]
    d2 = (diff * diff).sum(axis=2)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :count]


@dataclass
class PredictionSet:
    """K candidate futures: Gaussian centers per step plus mode confidences."""

    trajectories: np.ndarray  # (K, T, 2) means
    sigmas: np.ndarray  # (K, T, 2) positive
    correlations: np.ndarray  # (K, T) in (-1, 1)
    confidences: np.ndarray  # (K,) summing to 1

    def __post_init__(self):
        if not np.isfinite(self.trajectories).all() or not np.isfinite(self.confidences).all():
            raise NumericError("prediction set contains non-finite values")
        if abs(self.confidences.sum() - 1.0) > 1e-9:
            raise NumericError(f"confidences sum to {self.confidences.sum()!r}, expected 1")
        if (self.sigmas <= 0).any():
            raise NumericError("non-positive sigma in prediction set")
        if (np.abs(self.correlations) >= 1).any():
            raise NumericError("correlation outside (-1, 1)")

    @property
    def num_modes(self) -> int:
        return self.trajectories.shape[0]

    @property
    def horizon(self) -> int:
        return self.trajectories.shape[1]


@dataclass
class LayerOutput:
    """Per-decoder-layer state needed for losses and refinement."""

    content: Tensor  # (K, D)
    raw_params: Tensor  # (K, T, 5): mu_x, mu_y, log sig_x, log sig_y, pre-tanh rho
    logits: Tensor  # (K,)
    trajectory: Tensor  # (K, T, 2) Gaussian centers


@dataclass
class DecoderState:
    """Stepping state: starts with zero content and endpoints at the anchors."""

    content: Tensor  # (K, D), zeros before the first layer
    endpoints: Tensor  # (K, 2), intention points before the first layer
    layer_index: int = 0
    outputs: list[LayerOutput] = field(default_factory=list)


class PredictionHead:
    # start sigma near e^1 ~ 2.7 m so early-training likelihoods stay tame
    LOG_SIGMA_INIT = 1.0

    def __init__(self, store, name, dim, hidden, future_len, rng, group):
        self.future_len = future_len
        self.traj = Mlp.create(store, f"{name}.traj", [dim, hidden, future_len * 5], rng, group)
        bias = self.traj.layers[-1].b.data.reshape(future_len, 5)
        bias[:, 2:4] = self.LOG_SIGMA_INIT
        self.conf = Linear.create(store, f"{name}.conf", dim, 1, rng, group)

    def __call__(self, content: Tensor):
        k = content.shape[0]
        raw = self.traj(content).reshape((k, self.future_len, 5))
        logits = self.conf(content).reshape((k,))
        return raw, logits


class DecoderLayer:
    def __init__(self, store, name, spec: AttentionSpec, head_hidden, future_len, rng, group):
        d = spec.dim
        self.self_attn = Attention.create(store, f"{name}.self", spec, rng, group)
        self.agent_cross = Attention.create(
            store, f"{name}.agents", spec, rng, group, q_in=2 * d, k_in=2 * d, v_in=d
        )
        self.map_cross = Attention.create(
            store, f"{name}.map", spec, rng, group, q_in=2 * d, k_in=2 * d, v_in=d
        )
        self.combine = Mlp.create(store, f"{name}.combine", [2 * d, d], rng, group)
        self.head = PredictionHead(store, f"{name}.head", d, head_hidden, future_len, rng, group)

    def __call__(self, content, static_q, dynamic_q, agent_feats, agent_pe, map_feats, map_pe, map_sel):
        anchored = content + static_q
        mixed = self.self_attn(anchored, anchored, content)

        query = T.concat([mixed, dynamic_q], axis=1)
        agent_keys = T.concat([agent_feats, agent_pe], axis=1)
        from_agents = self.agent_cross(query, agent_keys, agent_feats)

        if map_sel is not None and map_sel.shape[1] > 0:
            k_sets = T.concat([T.take_rows(map_feats, map_sel), T.take_rows(map_pe, map_sel)], axis=2)
            v_sets = T.take_rows(map_feats, map_sel)
            from_map = self.map_cross.grouped(query, k_sets, v_sets)
        else:
            from_map = Tensor(np.zeros_like(from_agents.data))

        new_content = self.combine(T.concat([from_agents, from_map], axis=1))
        raw, logits = self.head(new_content)
        trajectory = raw[:, :, 0:2]
        return LayerOutput(new_content, raw, logits, trajectory)


class MotionDecoder:
    def __init__(self, store, config, rng, group: str = "decoder"):
        d = config.dim
        spec = AttentionSpec(d, config.heads)
        self.config = config
        self.static_mlp = Mlp.create(store, "decoder.static_query", [d, d, d], rng, group)
        self.dynamic_mlp = Mlp.create(store, "decoder.dynamic_query", [d, d, d], rng, group)
        self.layers = [
            DecoderLayer(store, f"decoder.layer{i}", spec, config.head_hidden, config.future_len, rng, group)
            for i in range(config.decoder_layers)
        ]
        self.extra_layers: list[DecoderLayer] = []

    def static_query(self, intentions: np.ndarray) -> Tensor:
        return self.static_mlp(sinusoidal_encoding(Tensor(intentions), self.config.dim))

    def dynamic_query(self, endpoints: Tensor) -> Tensor:
        return self.dynamic_mlp(sinusoidal_encoding(endpoints, self.config.dim))

    def init_state(self, intentions: np.ndarray) -> DecoderState:
        if intentions is None:
            raise ConfigError("decoder needs fitted intention points")
        k = len(intentions)
        return DecoderState(
            content=Tensor(np.zeros((k, self.config.dim))),
            endpoints=Tensor(np.asarray(intentions, dtype=np.float64)),
        )

    def step(self, state: DecoderState, tokens, static_q, agent_pe, map_pe) -> DecoderState:
        all_layers = self.layers + self.extra_layers
        if state.layer_index >= len(all_layers):
            from .errors import StateError

            raise StateError(f"decoder has only {len(all_layers)} layers, cannot step further")
        layer = all_layers[state.layer_index]
        has_map = tokens.num_map > 0
        dynamic_q = self.dynamic_query(state.endpoints)
        map_sel = (
            select_map_tokens(state.endpoints.data, tokens.positions[tokens.num_agents :], self.config.map_tokens)
            if has_map
            else None
        )
        out = layer(
            state.content,
            static_q,
            dynamic_q,
            tokens.agent_features(),
            agent_pe,
            tokens.map_features() if has_map else None,
            map_pe,
            map_sel,
        )
        return DecoderState(
            content=out.content,
            endpoints=out.trajectory[:, -1, :],
            layer_index=state.layer_index + 1,
            outputs=state.outputs + [out],
        )

    def forward(self, tokens, intentions: np.ndarray, cache: dict | None = None) -> list[LayerOutput]:
        d = self.config.dim
        key = ("decoder_pe", d)
        if cache is None or key not in cache:
            consts = (
                sinusoidal_features(tokens.positions[: tokens.num_agents], d),
                sinusoidal_features(tokens.positions[tokens.num_agents :], d) if tokens.num_map > 0 else None,
            )
            if cache is not None:
                cache[key] = consts
        else:
            consts = cache[key]
        agent_pe = Tensor(consts[0])
        map_pe = Tensor(consts[1]) if consts[1] is not None else None
        static_q = self.static_query(intentions)
        state = self.init_state(intentions)
        for _ in range(len(self.layers) + len(self.extra_layers)):
            state = self.step(state, tokens, static_q, agent_pe, map_pe)
        return state.outputs


# -- Gaussian-mixture output ----------------------------------------------------


def constrain_raw(raw: Tensor):
    """Map raw head outputs to (mu, sigma, rho) with structural validity."""
    mu = raw[:, :, 0:2]
    sigma = T.exp(raw[:, :, 2:4])
    rho = T.tanh(raw[:, :, 4])
    return mu, sigma, rho


def prediction_set(raw: np.ndarray, logits: np.ndarray) -> PredictionSet:
    """Numeric (post-graph) form of one layer's output."""
    raw = np.asarray(raw, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    if raw.ndim != 3 or raw.shape[2] != 5:
        raise ShapeError(f"raw head output must be (K, T, 5), got {raw.shape}")
    if not np.isfinite(raw).all() or not np.isfinite(logits).all():
        raise NumericError("non-finite head activations")
    shifted = np.exp(logits - logits.max())
    return PredictionSet(
        trajectories=raw[:, :, 0:2].copy(),
        sigmas=np.exp(raw[:, :, 2:4]),
        correlations=np.tanh(raw[:, :, 4]),
        confidences=shifted / shifted.sum(),
    )


def mixture_density(pred: PredictionSet, step: int, points: np.ndarray) -> np.ndarray:
    """Confidence-weighted bivariate-normal density of the position at ``step``.

    ``points`` is (..., 2); the result matches its leading shape.
    """
    points = np.asarray(points, dtype=np.float64)
    scalar_in = points.ndim == 1
    pts = points.reshape(-1, 2)
    mu = pred.trajectories[:, step, :]  # (K, 2)
    sig = pred.sigmas[:, step, :]
    rho = pred.correlations[:, step]
    dx = (pts[:, None, 0] - mu[None, :, 0]) / sig[None, :, 0]
    dy = (pts[:, None, 1] - mu[None, :, 1]) / sig[None, :, 1]
    one_m = 1.0 - rho[None, :] ** 2
    z = dx * dx - 2.0 * rho[None, :] * dx * dy + dy * dy
    norm = 1.0 / (2.0 * np.pi * sig[None, :, 0] * sig[None, :, 1] * np.sqrt(one_m))
    dens = (norm * np.exp(-z / (2.0 * one_m)) * pred.confidences[None, :]).sum(axis=1)
    return float(dens[0]) if scalar_in else dens.reshape(points.shape[:-1])


def select_modes(pred: PredictionSet, target: int = 6, radius: float = 2.5) -> PredictionSet:
    """Greedy confidence-descending endpoint NMS down to ``target`` modes.

    A candidate is suppressed when its endpoint falls within ``radius`` of an
    already selected one; if too few survive, the highest-confidence suppressed
    candidates fill the remaining slots. Confidences are renormalized.
    """
    k = pred.num_modes
    if k <= target:
        order = list(range(k))
    else:
        ranked = np.argsort(-pred.confidences, kind="stable")
        ends = pred.trajectories[:, -1, :]
        selected: list[int] = []
        suppressed: list[int] = []
        for idx in ranked:
            if len(selected) == target:
                break
            if any(np.linalg.norm(ends[idx] - ends[s]) < radius for s in selected):
                suppressed.append(int(idx))
            else:
                selected.append(int(idx))
        for idx in suppressed:
            if len(selected) == target:
                break
            selected.append(idx)
        order = selected
    conf = pred.confidences[order]
    return PredictionSet(
        trajectories=pred.trajectories[order].copy(),
        sigmas=pred.sigmas[order].copy(),
        correlations=pred.correlations[order].copy(),
        confidences=conf / conf.sum(),
    )
