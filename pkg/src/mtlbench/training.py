"""Training losses, the decoupled-weight-decay optimizer, the staircase
learning-rate schedule, and parameter freezing for the transfer methods."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, InputError, NumericError, StateError
from .model import ModelOutput, MotionPredictor
from .nn import GROUPS, ParameterStore
from .scene import SceneInputs
from .tensor import Tensor

LOG_2PI = math.log(2.0 * math.pi)

METHODS = ("TB", "SB", "MTL", "FT", "FTD", "FTE", "FR")
TWO_STAGE = ("FT", "FTD", "FTE", "FR")


# -- loss -------------------------------------------------------------------------


def gaussian_nll_steps(raw: Tensor, target: np.ndarray) -> Tensor:
    """Per-step negative log-likelihood of ``target`` (T, 2) under the raw
    bivariate-Gaussian parameters (T, 5) of one mode."""
    mu = raw[:, 0:2]
    log_sig = raw[:, 2:4]
    rho = T.tanh(raw[:, 4])
    d = (Tensor(target) - mu) * T.exp(-log_sig)
    dx, dy = d[:, 0], d[:, 1]
    one_minus = 1.0 - rho * rho
    z = dx * dx - 2.0 * rho * dx * dy + dy * dy
    return LOG_2PI + log_sig[:, 0] + log_sig[:, 1] + 0.5 * T.log(one_minus) + z / (2.0 * one_minus)


def mode_cross_entropy(logits: Tensor, target_index: int) -> Tensor:
    """-log softmax(logits)[target], computed via a shifted logsumexp."""
    shift = float(logits.data.max())
    lse = shift + T.log(T.exp(logits - shift).sum())
    return lse - logits[target_index]


def nearest_mode(intentions: np.ndarray, gt_endpoint: np.ndarray) -> int:
    d2 = ((intentions - gt_endpoint[None, :]) ** 2).sum(axis=1)
    return int(d2.argmin())


def dense_future_loss(dense: Tensor, gt: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean squared error over valid (agent, step) future states."""
    weights = mask[:, :, None].astype(np.float64)
    count = weights.sum() * gt.shape[2]
    if count == 0:
        return Tensor(0.0)
    sq = (dense - Tensor(gt)) ** 2.0
    return (sq * Tensor(weights)).sum() / count


def training_loss(output: ModelOutput, inputs: SceneInputs, intentions: np.ndarray):
    """Hard-assignment Gaussian NLL + mode cross-entropy at every decoder layer,
    plus the auxiliary dense-future regression. Returns (scalar, parts)."""
    target_mode = nearest_mode(intentions, inputs.gt_future[-1])
    parts: dict[str, float] = {}
    total = None
    for j, layer in enumerate(output.layer_outputs):
        nll = gaussian_nll_steps(layer.raw_params[target_mode, :, :], inputs.gt_future).mean()
        ce = mode_cross_entropy(layer.logits, target_mode)
        parts[f"nll_{j}"] = float(nll.data)
        parts[f"ce_{j}"] = float(ce.data)
        term = nll + ce
        total = term if total is None else total + term
    aux = dense_future_loss(output.dense_future, inputs.gt_dense, inputs.gt_dense_mask)
    parts["dense_future"] = float(aux.data)
    total = total + aux
    if not np.isfinite(total.data):
        raise NumericError(f"non-finite training loss; parts: {parts}")
    return total, parts


# -- optimizer ----------------------------------------------------------------------


class AdamW:
    """Adaptive-moment update with decoupled weight decay.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)

    Moments exist for every parameter but are only ever updated for trainable
    ones, so frozen parameters keep zero moments and identical values.
    """

    def __init__(self, store: ParameterStore, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.store = store
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}

    def step(self, lr: float):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for name, t in self.store.items():
            if not t.requires_grad:
                if t.grad is not None:
                    raise StateError(f"gradient present on frozen parameter {name!r}")
                continue
            g = t.grad
            if g is None:  # parameter unused this step (e.g. no map tokens)
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps) + self.weight_decay * t.data
            t.data = t.data - lr * update

    def state(self) -> dict:
        return {"step": self.step_count, "m": self.m, "v": self.v}

    def load_state(self, state: dict):
        self.step_count = state["step"]
        self.m = {k: np.array(a) for k, a in state["m"].items()}
        self.v = {k: np.array(a) for k, a in state["v"].items()}


def adamw_step(store: ParameterStore, opt: AdamW, lr: float):
    """Functional alias: gradients live on the store's tensors."""
    opt.step(lr)


# -- learning-rate schedule -----------------------------------------------------------


@dataclass
class LrSchedule:
    """Piecewise-constant staircase: values[i] applies from breakpoints[i]."""

    breakpoints: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.breakpoints) != len(self.values) or not self.values:
            raise ConfigError("schedule needs matching breakpoints and values")
        if self.breakpoints[0] != 0:
            raise ConfigError("first breakpoint must be epoch 0")
        if any(b >= a for a, b in zip(self.breakpoints[1:], self.breakpoints[:-1])):
            raise ConfigError("breakpoints must increase")
        if any(v <= 0 for v in self.values):
            raise ConfigError("learning rates must be positive")
        if any(later > earlier for earlier, later in zip(self.values[:-1], self.values[1:])):
            raise ConfigError("learning-rate staircase must be non-increasing")


def lr_at(schedule: LrSchedule, epoch: float) -> float:
    if epoch < 0:
        raise InputError(f"epoch must be >= 0, got {epoch}")
    lr = schedule.values[0]
    for b, v in zip(schedule.breakpoints, schedule.values):
        if epoch >= b:
            lr = v
    return lr


def full_scale_schedule() -> LrSchedule:
    """The 30-epoch staircase used at full scale: 1.18e-5 held for 22 epochs,
    then stepped down every 2 epochs."""
    return LrSchedule(
        breakpoints=(0.0, 22.0, 24.0, 26.0, 28.0),
        values=(1.18e-5, 5.9e-6, 2.9e-6, 1.4e-6, 7e-7),
    )


def scaled_schedule(initial: float, epochs: int) -> LrSchedule:
    """Same staircase shape compressed onto ``epochs``: hold for 22/30 of the
    run, then halve every 2/30 of it."""
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    breaks = [0.0] + [epochs * f / 30.0 for f in (22.0, 24.0, 26.0, 28.0)]
    values = [initial * 0.5**i for i in range(5)]
    return LrSchedule(tuple(breaks), tuple(values))


def scale_lr(recommended_lr: float, recommended_batch: int, actual_batch: int) -> float:
    """Square-root batch-size scaling of the recommended learning rate."""
    if recommended_batch <= 0 or actual_batch <= 0:
        raise InputError("batch sizes must be positive")
    return recommended_lr * math.sqrt(actual_batch / recommended_batch)


# -- freezing ---------------------------------------------------------------------------


def build_freeze_mask(method: str) -> dict[str, bool]:
    """Trainability per parameter group for one experiment method."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; valid: {METHODS}")
    if method == "FTE":
        trainable = {"encoder"}
    elif method == "FTD":
        trainable = {"decoder"}
    elif method == "FR":
        trainable = {"auxiliary_new"}
    else:
        trainable = set(GROUPS)
    return {group: group in trainable for group in GROUPS}


def apply_freeze_mask(store: ParameterStore, method: str):
    for group, flag in build_freeze_mask(method).items():
        store.set_trainable(group, flag)


# -- training loop -------------------------------------------------------------------


@dataclass
class TrainLog:
    epoch_losses: list[float] = field(default_factory=list)
    steps: int = 0
    wall_time: float = 0.0


class Trainer:
    """Single-example (batch size 1) training loop, deterministic per seed."""

    def __init__(self, model: MotionPredictor, schedule: LrSchedule, seed: int,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.model = model
        self.schedule = schedule
        self.rng = np.random.default_rng([seed, 0x7E41])
        self.optimizer = AdamW(model.params, beta1, beta2, eps, weight_decay)

    def train_step(self, inputs: SceneInputs, lr: float) -> float:
        output = self.model.forward(inputs)
        loss, _ = training_loss(output, inputs, self.model.intentions)
        self.model.params.zero_grad()
        loss.backward()
        self.optimizer.step(lr)
        return float(loss.data)

    def run(self, batches_per_epoch, epochs: int) -> TrainLog:
        """``batches_per_epoch(epoch, rng)`` yields the epoch's SceneInputs."""
        log = TrainLog()
        start = time.perf_counter()
        for epoch in range(epochs):
            lr = lr_at(self.schedule, epoch)
            losses = [self.train_step(inputs, lr) for inputs in batches_per_epoch(epoch, self.rng)]
            if not losses:
                raise InputError("empty training epoch")
            log.epoch_losses.append(float(np.mean(losses)))
            log.steps += len(losses)
        log.wall_time = time.perf_counter() - start
        return log

    def run_on(self, inputs_list: list[SceneInputs], epochs: int) -> TrainLog:
        """Epochs over a fixed list, reshuffled per epoch."""

        def batches(epoch, rng):
            order = rng.permutation(len(inputs_list))
            return [inputs_list[i] for i in order]

        return self.run(batches, epochs)
