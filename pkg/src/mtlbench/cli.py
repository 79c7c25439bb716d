"""Command-line surface: generate / run / study / eval / ingest."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import load_run_config
from .dataset import load_dataset, save_dataset
from .errors import ConfigError
from .experiments import ExperimentSpec, LoadedDataset, run_experiment, run_study
from .generate import generate_synthetic
from .ingest import UdpIngestor
from .metrics import EvalConfig, evaluate
from .model import load_checkpoint, save_checkpoint
from .report import ROW_ORDER, StudyReport, write_metrics_report
from .training import METHODS, TWO_STAGE


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _check_out_path(path: Path, force: bool):
    if path.exists() and not force:
        raise ConfigError(f"{path} exists; pass --force to overwrite")


def _spec_from_config(cfg, method: str) -> ExperimentSpec:
    return ExperimentSpec(
        method=method,
        seed=cfg.seed,
        epochs=cfg.epochs,
        lr=cfg.lr,
        model=cfg.model,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )


def cmd_generate(args) -> int:
    cfg = load_run_config(args.config)
    preset = args.preset or cfg.gen_preset
    count = args.count if args.count is not None else cfg.gen_count
    seed = args.seed if args.seed is not None else cfg.gen_seed
    valid = ("source_like", "target_like")
    if preset not in valid:
        return _fail(f"invalid preset {preset!r}; valid options: {valid}")
    out = Path(args.out)
    _check_out_path(out, args.force)
    scenarios = generate_synthetic(
        seed,
        preset,
        count,
        rate=cfg.gen_rate,
        history_len=cfg.model.history_len,
        future_len=cfg.future_len_for_generation(),
    )
    role = "source" if preset == "source_like" else "target"
    handle = save_dataset(out, scenarios, role=role, seed=seed)
    sizes = handle.split_sizes()
    print(f"wrote {handle.count} {preset} scenarios to {out}")
    print(f"splits: train={sizes['train']} val={sizes['val']} test={sizes['test']}")
    return 0


def _load_both(args) -> tuple[LoadedDataset, LoadedDataset]:
    src_scens, src_handle = load_dataset(args.source)
    tgt_scens, tgt_handle = load_dataset(args.target)
    return LoadedDataset(src_scens, src_handle), LoadedDataset(tgt_scens, tgt_handle)


def _write_result(result, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / f"{result.method}.ckpt", result.model)
    write_metrics_report(result.source_report, out_dir / f"{result.method}_source")
    write_metrics_report(result.target_report, out_dir / f"{result.method}_target")
    times = out_dir / f"{result.method}_times.csv"
    rows = ["method,stage,seconds"] + [
        f"{result.method},{stage},{seconds:.3f}" for stage, seconds in result.stage_times.items()
    ]
    times.write_text("\n".join(rows) + "\n")


def cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.method not in METHODS:
        return _fail(f"unknown method {args.method!r}; valid: {METHODS}")
    source, target = _load_both(args)
    checkpoint = None
    if args.method in TWO_STAGE:
        if not args.source_checkpoint:
            return _fail(f"method {args.method} requires --source-checkpoint (a source-trained model)")
        checkpoint, _ = load_checkpoint(args.source_checkpoint)
    spec = _spec_from_config(cfg, args.method)
    result = run_experiment(spec, source, target, source_checkpoint=checkpoint)
    _write_result(result, Path(args.out))
    print(f"{args.method}: source mAP {result.source_report.map_score:.4f}, "
          f"target mAP {result.target_report.map_score:.4f}")
    return 0


def cmd_study(args) -> int:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    source, target = _load_both(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = _spec_from_config(cfg, "SB")
    results = run_study(base, source, target, parallel=args.parallel,
                        on_result=lambda res: _write_result(res, out_dir))
    report = StudyReport.from_results(results)
    files = report.write(out_dir)
    print(report.to_table_text())
    print(f"study artifacts in {out_dir}: " + ", ".join(p.name for p in files.values()))
    return 0


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    scenarios, handle = load_dataset(args.dataset)
    subset = [scenarios[i] for i in handle.splits[args.split]]
    eval_cfg = EvalConfig(vectorize=model.config.vectorize_config(), select_target=model.config.num_modes)
    report = evaluate(model, subset, eval_cfg)
    text_path, json_path = write_metrics_report(report, Path(args.out))
    print(report.to_text(), end="")
    print(f"wrote {text_path} and {json_path}")
    return 0


def cmd_ingest(args) -> int:
    out = Path(args.out)
    _check_out_path(out, args.force)
    ingestor = UdpIngestor(port=args.port, rate=args.rate)
    host, port = ingestor.address
    print(f"listening on udp://{host}:{port} (end marker: END|<scenario id>)")
    scenarios = ingestor.run(max_scenarios=args.count, idle_timeout=args.timeout)
    stats = ingestor.stats
    if not scenarios:
        return _fail(f"no complete scenarios received (malformed records: {stats.malformed})")
    save_dataset(out, scenarios, role="target", seed=args.seed if args.seed is not None else 0)
    print(f"wrote {len(scenarios)} scenarios to {out}")
    print(f"records={stats.records} malformed={stats.malformed} dropped_agents={stats.dropped_agents}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtlbench",
        description="Trajectory-prediction transfer-learning bench: synthetic data, "
        "training, metrics, and the seven-method study.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic dataset file")
    p.add_argument("--config", default=None)
    p.add_argument("--preset", choices=("source_like", "target_like"), default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="train and evaluate one method")
    p.add_argument("--config", default=None)
    p.add_argument("--method", required=True)
    p.add_argument("--source", required=True, help="source dataset file")
    p.add_argument("--target", required=True, help="target dataset file")
    p.add_argument("--source-checkpoint", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("study", help="run all seven methods and emit the report")
    p.add_argument("--config", default=None)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--parallel", action="store_true",
                   help="run independent methods on worker threads (MTLB_THREADS caps)")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", required=True, help="report path prefix")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ingest", help="listen for UDP telemetry and build a dataset")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=None, help="stop after N scenarios")
    p.add_argument("--timeout", type=float, default=None, help="idle timeout in seconds")
    p.add_argument("--rate", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        return _fail(str(exc))
    except Exception as exc:  # surface package errors with a clean message
        from . import errors

        if isinstance(exc, (errors.InputError, errors.DataFormatError, errors.StateError,
                            errors.DegenerateInputError, errors.NumericError, errors.ShapeError)):
            return _fail(str(exc))
        raise


if __name__ == "__main__":
    sys.exit(main())
