"""Command-line entry point: data generation, training, incremental
fine-tuning, evaluation, fusion, gradient checking, checkpoint I/O.

All hyperparameters live in a key=value config file; flags override. Exit
codes: 0 success, 1 usage/config error, 2 data error, 3 verification
failure. Report paths also get a rendered PNG figure next to the delimited
text output unless ``--no-figures`` is passed.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ModelConfig, RunConfig, TrainConfig, load_run_config, with_overrides
from .data import (
    DataError,
    gen_spatial_task,
    gen_stream_identity_task,
    gen_temporal_flicker_task,
    load_manifest,
    save_dataset,
    windowed,
)
from .evaluate import evaluate, predict_windows, video_level
from .gradcheck import DEFAULT_TOL, run_standard_checks
from .learning import TrainingError, finetune_incremental, history_to_text, snapshot, train
from .metrics import FusionError, MetricError, fuse_all, report, reports_to_text
from .model import ModelParams, init_params
from .tensor import ShapeError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_VERIFY = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are config errors (exit 1)
        raise ConfigError(message)


def _require(value: Optional[str], flag: str) -> str:
    if not value:
        raise ConfigError(f"missing required path: pass {flag} or set it in the config file")
    return value


def _figure_path(text_path: str) -> str:
    return os.path.splitext(text_path)[0] + ".png"


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    overrides = {
        key: getattr(args, key, None)
        for key in ("epochs", "learning_rate", "batch_size", "seed",
                    "anchor_weight", "data", "out", "history", "report", "stride")
    }
    return with_overrides(cfg, **{k: v for k, v in overrides.items() if v is not None})


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.n == 0:
        dataset = []
    elif args.task == "spatial":
        dataset = gen_spatial_task(args.seed, args.n, (3, args.size, args.size))
    elif args.task == "stream":
        dataset = gen_stream_identity_task(args.seed, args.n, (3, args.size, args.size))
    else:
        dataset = gen_temporal_flicker_task(
            args.seed, args.n, t=args.frames, geometry=(3, args.size, args.size)
        )
    manifest = save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} videos to {manifest}")
    return EXIT_OK


def _write_history(history, history_path: str, figures: bool) -> None:
    with open(history_path, "w", encoding="utf-8") as fh:
        fh.write(history_to_text(history))
    if figures and history:
        from .figures import save_history_figure

        save_history_figure(history, _figure_path(history_path))


def cmd_train(args) -> int:
    cfg = _load_config(args)
    data_path = _require(cfg.data, "--data")
    out_path = _require(cfg.out, "--out")
    dataset = windowed(load_manifest(data_path), cfg.model.t, cfg.stride)
    params = init_params(cfg.model, cfg.train.seed)
    history = train(params, dataset, cfg.train)
    save_checkpoint(out_path, params)
    history_path = cfg.history or out_path + ".history.tsv"
    _write_history(history, history_path, not args.no_figures)
    final = history[-1] if history else None
    print(
        f"trained {cfg.train.epochs} epochs on {len(dataset)} samples -> {out_path}"
        + (f" (final loss {final.mean_loss:.4f}, acc {final.accuracy:.3f})" if final else "")
    )
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = _load_config(args)
    data_path = _require(cfg.data, "--data")
    out_path = _require(cfg.out, "--out")
    anchor_ckpt = load_checkpoint(args.anchor)
    try:
        params = ModelParams(cfg.model, anchor_ckpt.tensors)
    except ShapeError as e:
        raise ConfigError(
            f"anchor checkpoint {args.anchor} is not compatible with the run config: {e}"
        ) from None
    dataset = windowed(load_manifest(data_path), cfg.model.t, cfg.stride)
    anchor = snapshot(params)  # frozen before any update
    history = finetune_incremental(params, dataset, anchor, cfg.train)
    save_checkpoint(out_path, params)
    history_path = cfg.history or out_path + ".history.tsv"
    _write_history(history, history_path, not args.no_figures)
    print(
        f"fine-tuned {cfg.train.epochs} epochs (anchor weight {cfg.train.anchor_weight}) -> {out_path}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    params = load_checkpoint(args.ckpt)
    dataset = load_manifest(args.data)
    reports, window_preds, _ = evaluate(params, dataset, args.stride)
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write(reports_to_text(reports))
    if not args.no_figures:
        from .figures import save_report_figure

        save_report_figure(window_preds, reports, _figure_path(args.report))
    vid = reports["video"]
    print(
        f"evaluated {len(window_preds)} windows / {vid.n} videos: "
        f"video accuracy {vid.accuracy:.4f}, f1 {vid.f1:.4f}, auc {vid.auc:.4f} -> {args.report}"
    )
    return EXIT_OK


def cmd_fuse(args) -> int:
    params_a = load_checkpoint(args.ckpt_a)
    params_b = load_checkpoint(args.ckpt_b)
    dataset = load_manifest(args.data)
    t_fuse = max(params_a.config.t, params_b.config.t)
    for which, p in (("--ckpt-a", params_a), ("--ckpt-b", params_b)):
        if p.config.t not in (1, t_fuse):
            raise FusionError(
                f"{which} has t={p.config.t}; cannot align with {t_fuse}-frame windows"
            )
    preds_a = predict_windows(params_a, dataset, args.stride, window_t=t_fuse)
    preds_b = predict_windows(params_b, dataset, args.stride, window_t=t_fuse)
    fused = fuse_all(preds_a, preds_b)
    reports = {"window": report(fused), "video": report(video_level(fused))}
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write(reports_to_text(reports))
    if not args.no_figures:
        from .figures import save_report_figure

        save_report_figure(fused, reports, _figure_path(args.report))
    vid = reports["video"]
    print(
        f"fused {len(fused)} windows: video accuracy {vid.accuracy:.4f}, "
        f"auc {vid.auc:.4f} -> {args.report}"
    )
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    model_cfg: Optional[ModelConfig] = None
    if args.config:
        model_cfg = load_run_config(args.config).model
    results = run_standard_checks(
        seed=args.seed, model_config=model_cfg, corrupt=args.corrupt
    )
    failed = [r for r in results if not r.passed(DEFAULT_TOL)]
    for r in results:
        print(r.describe(DEFAULT_TOL))
    if failed:
        print(f"FAILED: {', '.join(r.name for r in failed)} (tolerance {DEFAULT_TOL})")
        return EXIT_VERIFY
    print(f"all {len(results)} gradient checks passed (tolerance {DEFAULT_TOL})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dfvt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic task dataset")
    p.add_argument("--task", required=True, choices=("spatial", "stream", "flicker"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, required=True, help="number of videos (balanced labels)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--frames", type=int, default=9, help="frames per video (flicker task)")
    p.add_argument("--size", type=int, default=32, help="square image side")
    p.set_defaults(func=cmd_gen_data)

    def add_train_flags(p):
        p.add_argument("--config", required=True)
        p.add_argument("--data")
        p.add_argument("--out")
        p.add_argument("--history")
        p.add_argument("--epochs", type=int)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--stride", type=int)
        p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("train", help="train from seeded initialization")
    add_train_flags(p)
    p.set_defaults(func=cmd_train, anchor_weight=None)

    p = sub.add_parser("finetune", help="anchored incremental fine-tune from a checkpoint")
    add_train_flags(p)
    p.add_argument("--anchor", required=True, help="checkpoint: starting weights and penalty target")
    p.add_argument("--lambda", dest="anchor_weight", type=float,
                   help="anchor penalty weight (overrides config)")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a checkpoint, write a metrics report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse", help="average two models' probabilities, report fused metrics")
    p.add_argument("--ckpt-a", dest="ckpt_a", required=True)
    p.add_argument("--ckpt-b", dest="ckpt_b", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    p.add_argument("--config", help="optional run config supplying the end-to-end model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", help=argparse.SUPPRESS)  # negative-control fixture
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as e:
        print(f"dfvt: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, MetricError, FusionError, TrainingError, ShapeError) as e:
        print(f"dfvt: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
