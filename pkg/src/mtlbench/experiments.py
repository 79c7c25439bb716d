"""The seven-way transfer study: baselines, multi-task mixing, full and
partial fine-tuning, and feature reuse, with per-stage wall-time accounting.

Two-stage methods (FT, FTD, FTE, FR) start from a source-trained checkpoint,
so a study trains the source baseline once and branches the adaptation stage
from it, mirroring how such studies amortize pre-training cost.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import DatasetHandle, split_scenarios
from .errors import ConfigError
from .metrics import EvalConfig, MetricsReport, evaluate
from .model import ModelConfig, MotionPredictor
from .scene import Scenario, SceneInputs, prepare
from .training import METHODS, TWO_STAGE, Trainer, apply_freeze_mask, scaled_schedule

METHOD_CODES = {m: i + 1 for i, m in enumerate(METHODS)}


@dataclass
class ExperimentSpec:
    method: str
    seed: int = 0
    epochs: int = 10
    lr: float = 3e-3
    model: ModelConfig = field(default_factory=ModelConfig)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; valid: {METHODS}")


@dataclass
class ExperimentResult:
    method: str
    model: MotionPredictor
    source_report: MetricsReport
    target_report: MetricsReport
    stage_times: dict[str, float]  # seconds per training stage
    epoch_losses: list[float]

    @property
    def total_time(self) -> float:
        return sum(self.stage_times.values())

    @property
    def target_stage_time(self) -> float | None:
        return self.stage_times.get("target_stage")


@dataclass
class LoadedDataset:
    scenarios: list[Scenario]
    handle: DatasetHandle

    def split(self, name: str) -> list[Scenario]:
        return split_scenarios(self.scenarios, self.handle, name)


def mtl_batch_sampler(source_split: list[Scenario], target_split: list[Scenario], seed: int):
    """Endless stream of (scenario, origin) with source probability
    n_S / (n_S + n_T); deterministic per seed."""
    if not source_split or not target_split:
        raise ConfigError("multi-task sampling needs non-empty source and target splits")
    rng = np.random.default_rng([seed, 0x3717])
    p_source = len(source_split) / (len(source_split) + len(target_split))
    while True:
        if rng.random() < p_source:
            yield source_split[int(rng.integers(len(source_split)))], "source"
        else:
            yield target_split[int(rng.integers(len(target_split)))], "target"


def prepare_split(scenarios: list[Scenario], model_config: ModelConfig) -> list[SceneInputs]:
    cfg = model_config.vectorize_config()
    return [prepare(s, cfg) for s in scenarios]


def clone_model(model: MotionPredictor) -> MotionPredictor:
    out = MotionPredictor(model.config, seed=model.seed)
    if model.feature_reuse:
        out.add_feature_reuse_blocks()
    for name, t in model.params.items():
        out.params[name].data = t.data.copy()
        out.params[name].requires_grad = t.requires_grad
    if model.intentions is not None:
        out.set_intentions(model.intentions.copy())
    return out


def _eval_config(spec: ExperimentSpec) -> EvalConfig:
    return EvalConfig(vectorize=spec.model.vectorize_config(), select_target=spec.model.num_modes)


def _trainer(spec: ExperimentSpec, model: MotionPredictor) -> Trainer:
    schedule = scaled_schedule(spec.lr, spec.epochs)
    return Trainer(
        model,
        schedule,
        seed=spec.seed * 1009 + METHOD_CODES[spec.method],
        beta1=spec.beta1,
        beta2=spec.beta2,
        eps=spec.eps,
        weight_decay=spec.weight_decay,
    )


def run_experiment(spec: ExperimentSpec, source: LoadedDataset, target: LoadedDataset,
                   source_checkpoint: MotionPredictor | None = None) -> ExperimentResult:
    """Train one method end to end and evaluate it on both test splits."""
    stage_times: dict[str, float] = {}
    losses: list[float] = []

    if spec.method in TWO_STAGE:
        if source_checkpoint is None:
            raise ConfigError(f"{spec.method} depends on a source-trained checkpoint")
        model = clone_model(source_checkpoint)
        if spec.method == "FR":
            model.add_feature_reuse_blocks(seed=spec.seed)
        apply_freeze_mask(model.params, spec.method)
        inputs = prepare_split(target.split("train"), spec.model)
        trainer = _trainer(spec, model)
        start = time.perf_counter()
        log = trainer.run_on(inputs, spec.epochs)
        stage_times["target_stage"] = time.perf_counter() - start
        losses = log.epoch_losses
    else:
        model = MotionPredictor(spec.model, seed=spec.seed)
        if spec.method == "SB":
            train_scens = source.split("train")
            model.fit_intentions_from(train_scens, seed=spec.seed)
            inputs = prepare_split(train_scens, spec.model)
            trainer = _trainer(spec, model)
            start = time.perf_counter()
            log = trainer.run_on(inputs, spec.epochs)
            stage_times["source_stage"] = time.perf_counter() - start
        elif spec.method == "TB":
            train_scens = target.split("train")
            model.fit_intentions_from(train_scens, seed=spec.seed)
            inputs = prepare_split(train_scens, spec.model)
            trainer = _trainer(spec, model)
            start = time.perf_counter()
            log = trainer.run_on(inputs, spec.epochs)
            stage_times["target_stage"] = time.perf_counter() - start
        else:  # MTL: interleaved sampling over the union
            src_train = source.split("train")
            tgt_train = target.split("train")
            model.fit_intentions_from(src_train + tgt_train, seed=spec.seed)
            cfg = spec.model.vectorize_config()
            cache = {s.scenario_id: prepare(s, cfg) for s in src_train + tgt_train}
            sampler = mtl_batch_sampler(src_train, tgt_train, spec.seed)
            per_epoch = len(src_train) + len(tgt_train)

            def batches(epoch, rng):
                return [cache[s.scenario_id] for s, _ in (next(sampler) for _ in range(per_epoch))]

            trainer = _trainer(spec, model)
            start = time.perf_counter()
            log = trainer.run(batches, spec.epochs)
            stage_times["mixed_stage"] = time.perf_counter() - start
        losses = log.epoch_losses

    eval_cfg = _eval_config(spec)
    source_report = evaluate(model, source.split("test"), eval_cfg)
    target_report = evaluate(model, target.split("test"), eval_cfg)
    return ExperimentResult(spec.method, model, source_report, target_report, stage_times, losses)


def run_study(base: ExperimentSpec, source: LoadedDataset, target: LoadedDataset,
              parallel: bool = False, on_result=None) -> dict[str, ExperimentResult]:
    """All seven methods, sharing one source baseline for the two-stage ones.

    Two-stage rows report the shared source-stage time plus their own
    adaptation time. ``on_result`` (when given) observes each completed
    method, so partial results survive a failure later in the study. With
    ``parallel``, the independent single-stage methods run on worker threads
    (capped by MTLB_THREADS); results are identical either way because every
    method derives its own seeds.
    """
    results: dict[str, ExperimentResult] = {}
    finish = on_result or (lambda res: None)

    def run_single(method: str) -> ExperimentResult:
        return run_experiment(replace(base, method=method), source, target)

    def sb_chain() -> list[ExperimentResult]:
        sb = run_single("SB")
        finish(sb)
        out = [sb]
        for method in TWO_STAGE:
            res = run_experiment(replace(base, method=method), source, target, source_checkpoint=sb.model)
            res.stage_times["source_stage"] = sb.stage_times["source_stage"]
            finish(res)
            out.append(res)
        return out

    if parallel:
        workers = max(1, int(os.environ.get("MTLB_THREADS", "3")))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chain_future = pool.submit(sb_chain)
            singles = {m: pool.submit(run_single, m) for m in ("TB", "MTL")}
            for res in chain_future.result():
                results[res.method] = res
            for m, fut in singles.items():
                results[m] = fut.result()
                finish(results[m])
    else:
        for res in sb_chain():
            results[res.method] = res
        for m in ("TB", "MTL"):
            results[m] = run_single(m)
            finish(results[m])
    return results
