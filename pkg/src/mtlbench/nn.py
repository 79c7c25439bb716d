"""Parameter registry and the small set of network building blocks.

Everything here is a thin composition of :mod:`mtlbench.tensor` primitives:
linear layers, ReLU MLPs, layer normalization, sinusoidal position encoding
and multi-head attention in two flavors (dense, and grouped where every query
owns its private key/value set).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

GROUPS = ("encoder", "decoder", "auxiliary_new")


class ParameterStore:
    """Flat, ordered registry of named parameter tensors.

    Each tensor carries a group tag (encoder / decoder / auxiliary_new) and a
    trainable flag that maps directly onto ``Tensor.requires_grad``.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._groups: dict[str, str] = {}

    def register(self, name: str, data: np.ndarray, group: str) -> Tensor:
        if name in self._params:
            raise ConfigError(f"parameter {name!r} registered twice")
        if group not in GROUPS:
            raise ConfigError(f"unknown parameter group {group!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        self._groups[name] = group
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def group_of(self, name: str) -> str:
        return self._groups[name]

    def group_names(self, group: str) -> list[str]:
        return [n for n, g in self._groups.items() if g == group]

    def num_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def set_trainable(self, groups, flag: bool = True):
        """Set the trainable flag for every parameter in ``groups``."""
        groups = {groups} if isinstance(groups, str) else set(groups)
        unknown = groups - set(GROUPS)
        if unknown:
            raise ConfigError(f"unknown parameter groups {sorted(unknown)}")
        for name, t in self._params.items():
            if self._groups[name] in groups:
                t.requires_grad = flag

    def trainable_names(self) -> list[str]:
        return [n for n, t in self._params.items() if t.requires_grad]

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copy of every parameter value, for bit-identity comparisons."""
        return {n: t.data.copy() for n, t in self._params.items()}


# -- initializers -------------------------------------------------------------


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class Linear:
    w: Tensor
    b: Tensor

    @staticmethod
    def create(store: ParameterStore, name: str, d_in: int, d_out: int, rng, group: str) -> "Linear":
        w = store.register(f"{name}.w", _xavier(rng, d_in, d_out), group)
        b = store.register(f"{name}.b", np.zeros(d_out), group)
        return Linear(w, b)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.w.shape[0]:
            raise ShapeError(f"linear: input width {x.shape[-1]} != {self.w.shape[0]}")
        return T.affine(x, self.w, self.b)


@dataclass
class MlpSpec:
    """Layer widths, input first. Hidden layers use ReLU, the last is linear."""

    widths: tuple[int, ...]

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ConfigError("an MLP needs at least an input and an output width")
        if any(w <= 0 for w in self.widths):
            raise ConfigError(f"non-positive MLP width in {self.widths}")


@dataclass
class Mlp:
    spec: MlpSpec
    layers: list[Linear] = field(default_factory=list)

    @staticmethod
    def create(store, name, widths, rng, group) -> "Mlp":
        spec = MlpSpec(tuple(widths))
        layers = [
            Linear.create(store, f"{name}.{i}", d_in, d_out, rng, group)
            for i, (d_in, d_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:]))
        ]
        return Mlp(spec, layers)

    def __call__(self, x: Tensor) -> Tensor:
        flat = x
        lead = None
        if x.ndim > 2:
            lead = x.shape[:-1]
            flat = x.reshape((-1, x.shape[-1]))
        for layer in self.layers[:-1]:
            flat = T.relu(layer(flat))
        flat = self.layers[-1](flat)
        if lead is not None:
            flat = flat.reshape(lead + (self.spec.widths[-1],))
        return flat


def mlp_forward(x: Tensor, mlp: Mlp) -> Tensor:
    """Functional alias; ``mlp`` holds its spec and parameter slice."""
    return mlp(x)


@dataclass
class LayerNorm:
    gamma: Tensor
    beta: Tensor
    eps: float = 1e-5

    @staticmethod
    def create(store, name, dim, group) -> "LayerNorm":
        gamma = store.register(f"{name}.gamma", np.ones(dim), group)
        beta = store.register(f"{name}.beta", np.zeros(dim), group)
        return LayerNorm(gamma, beta)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layernorm(x, self.gamma, self.beta, eps=self.eps)


# -- positional encoding -------------------------------------------------------


def _encoding_layout(positions_shape, dim: int):
    if dim % 2 != 0:
        raise ConfigError(f"encoding dim must be even, got {dim}")
    if len(positions_shape) != 2 or positions_shape[1] not in (1, 2):
        raise ShapeError(f"positions must be (N, 1) or (N, 2), got {positions_shape}")
    coords = positions_shape[1]
    per = dim // coords
    if per % 2 != 0:
        raise ConfigError(f"encoding dim {dim} not divisible into sin/cos pairs for {coords}-D positions")
    return coords, per


_freq_cache: dict[tuple, np.ndarray] = {}


def _frequencies(per: int, base: float) -> np.ndarray:
    key = (per, base)
    if key not in _freq_cache:
        _freq_cache[key] = base ** (-2.0 * np.arange(per // 2) / per)
    return _freq_cache[key]


def sinusoidal_features(positions: np.ndarray, dim: int, base: float = 10000.0) -> np.ndarray:
    """Numpy-only sinusoidal encoding for constant positions (no graph)."""
    positions = np.asarray(positions, dtype=np.float64)
    coords, per = _encoding_layout(positions.shape, dim)
    freqs = _frequencies(per, base)
    n = positions.shape[0]
    blocks = []
    for c in range(coords):
        args = positions[:, c : c + 1] * freqs
        blocks.append(np.stack([np.sin(args), np.cos(args)], axis=2).reshape(n, per))
    return blocks[0] if coords == 1 else np.concatenate(blocks, axis=1)


def sinusoidal_encoding(positions: Tensor, dim: int, base: float = 10000.0) -> Tensor:
    """Interleaved sin/cos encoding over geometric frequencies.

    ``positions`` is (N, 1) or (N, 2); 2-D points get ``dim/2`` channels per
    coordinate, concatenated x then y. Differentiable w.r.t. positions; inputs
    off the gradient path take a cheap numpy-only route with identical values.
    """
    positions = positions if isinstance(positions, Tensor) else Tensor(positions)
    if not positions.requires_grad:
        return Tensor(sinusoidal_features(positions.data, dim, base))
    coords, per = _encoding_layout(positions.shape, dim)
    half = per // 2
    freqs = _frequencies(per, base)
    n = positions.shape[0]
    blocks = []
    for c in range(coords):
        args = positions[:, c : c + 1] * Tensor(freqs)  # (N, half)
        s = T.sin(args).reshape((n, half, 1))
        co = T.cos(args).reshape((n, half, 1))
        blocks.append(T.concat([s, co], axis=2).reshape((n, per)))
    return blocks[0] if coords == 1 else T.concat(blocks, axis=1)


# -- attention -----------------------------------------------------------------


@dataclass
class AttentionSpec:
    dim: int
    heads: int

    def __post_init__(self):
        if self.dim <= 0 or self.heads <= 0:
            raise ConfigError(f"attention dim/heads must be positive, got {self.dim}/{self.heads}")
        if self.dim % self.heads != 0:
            raise ConfigError(f"attention dim {self.dim} not divisible by {self.heads} heads")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


@dataclass
class Attention:
    """Multi-head scaled dot-product attention with learned projections.

    Input widths of q/k/v may differ (cross attention concatenates position
    embeddings onto queries and keys); projections map everything to
    ``spec.dim`` and the output projection keeps that width.
    """

    spec: AttentionSpec
    q_proj: Linear
    k_proj: Linear
    v_proj: Linear
    out_proj: Linear

    @staticmethod
    def create(store, name, spec: AttentionSpec, rng, group, q_in=None, k_in=None, v_in=None) -> "Attention":
        d = spec.dim
        return Attention(
            spec,
            Linear.create(store, f"{name}.q", q_in or d, d, rng, group),
            Linear.create(store, f"{name}.k", k_in or d, d, rng, group),
            Linear.create(store, f"{name}.v", v_in or d, d, rng, group),
            Linear.create(store, f"{name}.out", d, d, rng, group),
        )

    def __call__(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        """Dense attention: q (Nq, *), k (Nk, *), v (Nk, *)."""
        if k.shape[0] != v.shape[0]:
            raise ShapeError(f"attention: {k.shape[0]} keys vs {v.shape[0]} values")
        h, dh = self.spec.heads, self.spec.head_dim
        nq, nk = q.shape[0], k.shape[0]
        qh = self.q_proj(q).reshape((nq, h, dh)).transpose((1, 0, 2))
        kh = self.k_proj(k).reshape((nk, h, dh)).transpose((1, 2, 0))
        vh = self.v_proj(v).reshape((nk, h, dh)).transpose((1, 0, 2))
        scores = T.matmul(qh, kh) * (1.0 / math.sqrt(dh))
        weights = T.softmax(scores, axis=-1)
        out = T.matmul(weights, vh).transpose((1, 0, 2)).reshape((nq, h * dh))
        return self.out_proj(out)

    def grouped(self, q: Tensor, k_sets: Tensor, v_sets: Tensor) -> Tensor:
        """Per-query attention: q (N, *), k_sets (N, S, *), v_sets (N, S, *)."""
        h, dh = self.spec.heads, self.spec.head_dim
        n, s = k_sets.shape[0], k_sets.shape[1]
        qh = self.q_proj(q).reshape((n, h, 1, dh))
        kh = self.k_proj(k_sets).reshape((n, s, h, dh)).transpose((0, 2, 3, 1))
        vh = self.v_proj(v_sets).reshape((n, s, h, dh)).transpose((0, 2, 1, 3))
        scores = T.matmul(qh, kh) * (1.0 / math.sqrt(dh))  # (N, H, 1, S)
        weights = T.softmax(scores, axis=-1)
        out = T.matmul(weights, vh).reshape((n, h * dh))
        return self.out_proj(out)


def multi_head_attention(q, k, v, attn: Attention) -> Tensor:
    """Functional alias for dense attention (self- or cross-, by choice of q)."""
    return attn(q, k, v)
