"""Command-line entry point: ``entropyfuzz {targets,fuzz,eval}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .evaluation import STRATEGIES, _write, run_experiment
from .loop import RetrainCadence, Strategy, StrategyConfig, entropy_histogram_csv, fuzz
from .model import save_model
from .mutation import save_queue
from .targets import list_targets

log = logging.getLogger("entropyfuzz")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    d = StrategyConfig()
    p.add_argument("--budget", type=int, default=d.budget, help="total executions, warm-up included (default %(default)s)")
    p.add_argument("--warmup", type=int, default=d.warmup_execs, help="warm-up executions (default %(default)s)")
    p.add_argument("--k", type=int, default=d.num_generate, help="children generated per iteration (default %(default)s)")
    p.add_argument("--alpha", type=float, default=d.alpha, help="fraction of each batch executed (default %(default)s)")
    p.add_argument("--checkpoint-every", type=int, default=d.checkpoint_every, help="default %(default)s")
    p.add_argument("--cadence", choices=[c.value for c in RetrainCadence], default=d.retrain_cadence.value)
    p.add_argument("--retrain-passes", type=int, default=d.retrain_passes, help="optimizer passes per in-loop retrain")
    p.add_argument("--retrain-memory", type=int, default=d.retrain_memory, help="L-BFGS pairs kept between retrains")
    p.add_argument("--retrain-dtype", choices=["float32", "float64"], default=d.retrain_dtype)
    p.add_argument("--out", type=Path, required=True, help="output directory")


def _config(args: argparse.Namespace, strategy: Strategy, seed: int) -> StrategyConfig:
    return StrategyConfig(
        strategy=strategy,
        budget=args.budget,
        num_generate=args.k,
        alpha=args.alpha,
        warmup_execs=args.warmup,
        rng_seed=seed,
        retrain_cadence=RetrainCadence(args.cadence),
        checkpoint_every=args.checkpoint_every,
        retrain_passes=args.retrain_passes,
        retrain_memory=args.retrain_memory,
        retrain_dtype=args.retrain_dtype,
        entropy_bins=getattr(args, "entropy_bins", 0),
    )


def _csv_list(text: str) -> list[str]:
    return [t for t in (s.strip() for s in text.split(",")) if t]


def cmd_targets(args: argparse.Namespace) -> int:
    json.dump([t.to_json() for t in list_targets()], sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def cmd_fuzz(args: argparse.Namespace) -> int:
    cfg = _config(args, Strategy(args.strategy), args.seed)
    run = fuzz(args.target, cfg)
    out: Path = args.out
    _write(out / "checkpoints.csv", run.checkpoint_csv())
    _write(out / "summary.json", run.summary_json())
    save_queue(run.queue, out / "queue")
    if run.entropy_histograms:
        _write(out / "entropy_hist.csv", entropy_histogram_csv(run.entropy_histograms))
    if args.save_model and run.final_model is not None:
        save_model(run.final_model, out / "model.json")
    print(f"{args.target} {cfg.strategy.value}: {run.paths_found} paths, {len(run.crash_inputs)} crashes -> {out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    base = _config(args, Strategy.FIDGETY, 0)
    targets = _csv_list(args.targets) if args.targets else [t.name for t in list_targets()]
    seeds = [int(s) for s in _csv_list(args.seeds)]
    strategies = [Strategy(s) for s in _csv_list(args.strategies)]
    table = run_experiment(targets, seeds, base, strategies, args.workers, args.out)
    sys.stdout.write(table.table_md())
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="entropyfuzz", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("targets", help="print the built-in target descriptors as JSON")
    p.set_defaults(func=cmd_targets)

    p = sub.add_parser("fuzz", help="warm up and run one strategy on one target")
    p.add_argument("--target", required=True)
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default=Strategy.ML.value)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--entropy-bins", type=int, default=0, help="write a per-iteration entropy histogram (ML)")
    p.add_argument("--save-model", action="store_true", help="write the final ML model as model.json")
    _add_run_flags(p)
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("eval", help="run all strategies over targets and seeds")
    p.add_argument("--targets", default="", help="comma-separated names (default: whole suite)")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--strategies", default=",".join(s.value for s in STRATEGIES))
    p.add_argument("--workers", type=int, default=1, help="parallel (target, seed) jobs")
    _add_run_flags(p)
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
