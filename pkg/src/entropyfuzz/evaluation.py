"""Multi-target, multi-seed comparison of the four strategies.

For every (target, seed) the warm-up runs once and all strategies start
from its snapshot. Relative coverage of a strategy at checkpoint t is its
path count at t divided by the best final path count any strategy reached
on that (target, seed). Values are averaged over seeds per target, then
summarised across targets as mean, standard error and a 95% normal
interval.
"""

from __future__ import annotations

import json
import logging
import math
import os
import statistics
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__
from .loop import Strategy, StrategyConfig, run_strategy, warmup
from .targets import get_target

log = logging.getLogger(__name__)

STRATEGIES: tuple[Strategy, ...] = (Strategy.FIDGETY, Strategy.BATCHED, Strategy.RANDOM_BATCHED, Strategy.ML)
Z95 = statistics.NormalDist().inv_cdf(0.975)


def rel_cov(paths: Mapping[Strategy, Sequence[int]]) -> dict[Strategy, list[float]]:
    """Relative coverage series for one (target, seed).

    ``paths`` maps each strategy to its path counts on a shared checkpoint
    grid; the last entry is the final checkpoint T.
    """
    lengths = {len(v) for v in paths.values()}
    if len(lengths) != 1 or 0 in lengths:
        raise ValueError("strategies must share one non-empty checkpoint grid")
    best = max(series[-1] for series in paths.values())
    if best <= 0:
        raise ValueError("degenerate run")
    return {s: [p / best for p in series] for s, series in paths.items()}


def mean_se(values: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error (sample std / sqrt(n)); SE is 0 for n = 1."""
    n = len(values)
    if n == 0:
        raise ValueError("no values")
    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0
    return mean, statistics.stdev(values) / math.sqrt(n)


@dataclass(frozen=True)
class SeedResult:
    """Checkpoint series of every strategy for one (target, seed)."""

    target: str
    seed: int
    exec_index: tuple[int, ...]
    paths: dict[Strategy, tuple[int, ...]]
    crashes: dict[Strategy, int]
    edge_buckets: dict[Strategy, int]

    @property
    def best_final(self) -> int:
        return max(v[-1] for v in self.paths.values())


@dataclass
class RelCovTable:
    strategies: tuple[Strategy, ...]
    exec_index: tuple[int, ...]
    targets: tuple[str, ...]
    seeds: tuple[int, ...]
    per_seed: dict[tuple[str, int], SeedResult] = field(default_factory=dict)

    def per_target(self, target: str) -> dict[Strategy, list[float]]:
        """Seed-averaged rel-cov series of one target."""
        runs = [rel_cov(self.per_seed[(target, s)].paths) for s in self.seeds]
        return {
            st: [math.fsum(r[st][i] for r in runs) / len(runs) for i in range(len(self.exec_index))]
            for st in self.strategies
        }

    def summary(self) -> dict[Strategy, list[tuple[float, float]]]:
        """(mean, SE) across targets per strategy and checkpoint."""
        by_target = [self.per_target(t) for t in self.targets]
        return {
            st: [mean_se([bt[st][i] for bt in by_target]) for i in range(len(self.exec_index))]
            for st in self.strategies
        }

    def gap(self, a: Strategy, b: Strategy) -> list[float]:
        """Mean over targets of rel-cov(a) - rel-cov(b) at each checkpoint."""
        s = self.summary()
        return [ma - mb for (ma, _), (mb, _) in zip(s[a], s[b])]

    # -- serialization --

    def summary_csv(self) -> str:
        cols = ["exec_index"]
        for st in self.strategies:
            cols += [f"{st.value}_mean", f"{st.value}_se", f"{st.value}_ci_low", f"{st.value}_ci_high"]
        lines = [",".join(cols)]
        summ = self.summary()
        for i, t in enumerate(self.exec_index):
            row = [str(t)]
            for st in self.strategies:
                m, se = summ[st][i]
                row += [_f(m), _f(se), _f(m - Z95 * se), _f(m + Z95 * se)]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def table_md(self) -> str:
        """Mean +- SE per checkpoint and strategy, as a Markdown table."""
        head = "| executions | " + " | ".join(st.value for st in self.strategies) + " |"
        rule = "|---:|" + "---:|" * len(self.strategies)
        summ = self.summary()
        rows = [
            f"| {t} | " + " | ".join(f"{summ[st][i][0]:.3f} ± {summ[st][i][1]:.3f}" for st in self.strategies) + " |"
            for i, t in enumerate(self.exec_index)
        ]
        return "\n".join([head, rule, *rows]) + "\n"

    def target_csv(self, target: str) -> str:
        lines = ["seed,strategy,exec_index,paths,best_final_paths,rel_cov"]
        for seed in self.seeds:
            res = self.per_seed[(target, seed)]
            best = res.best_final
            for st in self.strategies:
                for t, p in zip(res.exec_index, res.paths[st]):
                    lines.append(f"{seed},{st.value},{t},{p},{best},{_f(p / best)}")
        return "\n".join(lines) + "\n"


def _f(x: float) -> str:
    return f"{x:.6f}"


def run_seed(target: str, seed: int, base: StrategyConfig, strategies: Sequence[Strategy]) -> SeedResult:
    """Warm up once for (target, seed) and run every strategy from the snapshot."""
    cfg = replace(base, rng_seed=seed)
    warm = warmup(target, cfg)
    paths, crashes, edges = {}, {}, {}
    grid = None
    for st in strategies:
        run = run_strategy(target, replace(cfg, strategy=st), warm)
        series = tuple(c.exec_index for c in run.checkpoints)
        if grid is None:
            grid = series
        elif series != grid:
            raise RuntimeError("strategies produced different checkpoint grids")
        paths[st] = tuple(c.paths for c in run.checkpoints)
        crashes[st] = run.checkpoints[-1].crashes if run.checkpoints else 0
        edges[st] = run.checkpoints[-1].edge_buckets if run.checkpoints else 0
        log.info("%s seed %d %s: %d paths", target, seed, st.value, paths[st][-1] if paths[st] else 0)
    return SeedResult(target, seed, grid or (), paths, crashes, edges)


def _job(args: tuple) -> SeedResult:
    return run_seed(*args)


def run_experiment(
    targets: Sequence[str],
    seeds: Sequence[int],
    base: StrategyConfig,
    strategies: Sequence[Strategy] = STRATEGIES,
    workers: int = 1,
    out: os.PathLike | str | None = None,
) -> RelCovTable:
    """Run every (target, seed, strategy) and build the relative-coverage table.

    With ``out`` the results are written there; if a run fails, a manifest
    marked ``failed`` listing the completed runs is written before the
    error propagates.
    """
    if not targets or not seeds:
        raise ValueError("need at least one target and one seed")
    if base.budget % base.checkpoint_every:
        log.warning("budget is not a multiple of checkpoint_every; T is the last full checkpoint")
    for t in targets:
        get_target(t)
    strategies = tuple(Strategy(s) for s in strategies)
    jobs = [(t, s, base, strategies) for t in targets for s in seeds]
    done: dict[tuple[str, int], SeedResult] = {}
    try:
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                for res in pool.map(_job, jobs):
                    done[(res.target, res.seed)] = res
        else:
            for job in jobs:
                res = _job(job)
                done[(res.target, res.seed)] = res
    except Exception as exc:
        if out is not None:
            _write(Path(out) / "manifest.json", _manifest(targets, seeds, base, strategies, done, f"failed: {exc!r}"))
        raise
    grid = next(iter(done.values())).exec_index
    if any(r.exec_index != grid for r in done.values()):
        raise RuntimeError("runs produced different checkpoint grids")
    table = RelCovTable(strategies, grid, tuple(targets), tuple(seeds), done)
    if out is not None:
        write_outputs(table, base, out)
    return table


def write_outputs(table: RelCovTable, base: StrategyConfig, out: os.PathLike | str) -> None:
    out = Path(out)
    _write(out / "summary.csv", table.summary_csv())
    _write(out / "table.md", table.table_md())
    for t in table.targets:
        _write(out / "per_target" / f"{t}.csv", table.target_csv(t))
    _write(out / "manifest.json", _manifest(table.targets, table.seeds, base, table.strategies, table.per_seed, "complete"))


def _manifest(targets, seeds, base, strategies, done, status: str) -> str:
    runs = []
    for (t, s), res in sorted(done.items()):
        for st in strategies:
            runs.append(
                {
                    "target": t,
                    "seed": s,
                    "strategy": st.value,
                    "final_paths": res.paths[st][-1] if res.paths[st] else 0,
                    "edge_buckets": res.edge_buckets[st],
                    "crashes": res.crashes[st],
                }
            )
    doc = {
        "tool": "entropyfuzz",
        "version": __version__,
        "status": status,
        "targets": list(targets),
        "seeds": list(seeds),
        "strategies": [st.value for st in strategies],
        "config": {k: v for k, v in base.echo().items() if k not in ("strategy", "rng_seed")},
        "runs": runs,
        "files": ["summary.csv", "table.md", "manifest.json"] + [f"per_target/{t}.csv" for t in targets],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> None:
    """Write ``text`` with LF endings via a temporary file and an atomic rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
