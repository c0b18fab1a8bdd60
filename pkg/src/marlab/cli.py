"""Command-line entry points.

Verbs:
  train    — run the full training loop from a config file (+ overrides)
  eval     — load a checkpoint and report greedy evaluation return
  ablate   — run full / single_global / no_global over several seeds
  plot     — learning-curve SVG + numeric sidecar from metrics CSVs
  selftest — fast invariant suite

Exit codes: 0 success, 1 validation error, 2 runtime failure,
3 selftest failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ABLATION_MODES, apply_overrides, parse_config, validate
from .plotting import PlotSpec, emit_plot
from .trainer import Trainer, load_checkpoint


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="marlab")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_train = sub.add_parser("train", help="run training")
    p_train.add_argument("--config", default=None, help="key=value config file")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("overrides", nargs="*", help="key=value overrides")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--run-dir", required=True,
                        help="training output directory (config + checkpoint)")
    p_eval.add_argument("--episodes", type=int, default=20)

    p_abl = sub.add_parser("ablate", help="run all three model modes")
    p_abl.add_argument("--config", default=None)
    p_abl.add_argument("--out", required=True)
    p_abl.add_argument("--seeds", type=int, default=3)
    p_abl.add_argument("overrides", nargs="*")

    p_plot = sub.add_parser("plot", help="emit learning-curve SVG")
    p_plot.add_argument("--out", required=True, help="output SVG path")
    p_plot.add_argument("--x", default="env_steps")
    p_plot.add_argument("--y", default="eval_return_mean")
    p_plot.add_argument("--ema", type=float, default=0.9)
    p_plot.add_argument("csvs", nargs="+",
                        help="label=path[,path...] per curve, or bare paths")

    sub.add_parser("selftest", help="run the fast invariant suite")
    return parser


def cmd_train(args) -> int:
    cfg = parse_config(args.config, args.overrides)
    trainer = Trainer(cfg, out_dir=args.out)
    trainer.run()
    final = trainer._metrics_rows[-1]
    print(f"done: {cfg.episodes} episodes, {final['env_steps']} env steps, "
          f"final eval return {final['eval_return_mean']:.3f}")
    return 0


def cmd_eval(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = parse_config(run_dir / "config.txt")
    trainer = Trainer(cfg)
    load_checkpoint(run_dir / "checkpoint.npz", trainer)
    ret = trainer.evaluate(args.episodes)
    print(f"mean evaluation return over {args.episodes} episodes: {ret:.4f}")
    return 0


def cmd_ablate(args) -> int:
    out = Path(args.out)
    results = {}
    for mode in ABLATION_MODES:
        returns = []
        for seed in range(args.seeds):
            cfg = parse_config(args.config, args.overrides)
            cfg.mode = mode
            cfg.seed = seed
            validate(cfg)
            run_dir = out / f"{mode}_seed{seed}"
            trainer = Trainer(cfg, out_dir=run_dir)
            trainer.run()
            returns.append(trainer._metrics_rows[-1]["eval_return_mean"])
            print(f"{mode} seed {seed}: final eval return {returns[-1]:.3f}")
        results[mode] = float(np.mean(returns))
    print("mean final eval return per mode:")
    for mode, r in results.items():
        print(f"  {mode:14s} {r:.3f}")
    return 0


def cmd_plot(args) -> int:
    groups: dict[str, list[str]] = {}
    for item in args.csvs:
        if "=" in item:
            label, paths = item.split("=", 1)
            groups[label] = paths.split(",")
        else:
            groups[Path(item).stem] = [item]
    spec = PlotSpec(x_column=args.x, y_column=args.y, ema=args.ema)
    emit_plot(groups, spec, args.out)
    print(f"wrote {args.out} and {Path(args.out).with_suffix('.csv')}")
    return 0


def cmd_selftest(_args) -> int:
    from .selftest import run_selftest
    return 0 if run_selftest() else 3


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "train": cmd_train,
        "eval": cmd_eval,
        "ablate": cmd_ablate,
        "plot": cmd_plot,
        "selftest": cmd_selftest,
    }
    try:
        return handlers[args.verb](args)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
