"""The four fuzzing strategies under a fixed execution budget.

FIDGETY executes every child right after generating it and updates the
queue immediately. BATCHED, RANDOM_BATCHED and ML generate a batch of K
children against a frozen queue and execute ceil(alpha * K) of them: the
first ones, a random subset, or the highest-entropy ones respectively.
All four start from the same warm-up snapshot.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng as rngs
from .coverage import CoverageState, PathId
from .model import PathModel, entropies, featurize, rank_indices, train
from .mutation import MutationConfig, Queue, generate_batch, mutate
from .targets import TargetDescriptor, execute, get_target

log = logging.getLogger(__name__)


class Strategy(str, enum.Enum):
    FIDGETY = "fidgety"
    BATCHED = "batched"
    RANDOM_BATCHED = "random"
    ML = "ml"


class RetrainCadence(str, enum.Enum):
    PER_BATCH = "per_batch"
    PER_INPUT = "per_input"


@dataclass
class StrategyConfig:
    strategy: Strategy = Strategy.ML
    budget: int = 20_000
    num_generate: int = 256
    alpha: float = 0.25
    warmup_execs: int = 2_000
    rng_seed: int = 0
    retrain_cadence: RetrainCadence = RetrainCadence.PER_BATCH
    checkpoint_every: int = 2_000
    splice_probability: float = 0.1
    stack_exponent_max: int = 6
    warm_start: bool = True
    retrain_passes: int = 1  # optimizer passes per in-loop retrain
    retrain_dtype: str = "float32"
    retrain_memory: int = 2  # L-BFGS pairs carried between retrains
    entropy_bins: int = 0  # >0 records a per-iteration entropy histogram (ML only)

    def __post_init__(self) -> None:
        self.strategy = Strategy(self.strategy)
        self.retrain_cadence = RetrainCadence(self.retrain_cadence)
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.num_generate < 1 or self.per_iteration < 1:
            raise ValueError("ceil(alpha * num_generate) must be >= 1")
        if not 1 <= self.warmup_execs < self.budget:
            raise ValueError("need 1 <= warmup_execs < budget")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        if self.retrain_passes < 1:
            raise ValueError("retrain_passes must be >= 1")
        if self.retrain_dtype not in ("float32", "float64"):
            raise ValueError("retrain_dtype must be float32 or float64")

    @property
    def per_iteration(self) -> int:
        return math.ceil(self.alpha * self.num_generate - 1e-9)

    def mutation_config(self, target: TargetDescriptor) -> MutationConfig:
        return MutationConfig(
            max_len=target.max_input_len,
            stack_exponent_max=self.stack_exponent_max,
            splice_probability=self.splice_probability,
            rng_seed=self.rng_seed,
        )

    def echo(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        d["retrain_cadence"] = self.retrain_cadence.value
        return d


@dataclass(frozen=True)
class ExecRecord:
    exec_index: int
    path: PathId
    is_new_path: bool
    crashed: bool


@dataclass(frozen=True)
class Checkpoint:
    exec_index: int
    paths: int
    edge_buckets: int
    crashes: int


@dataclass
class FuzzState:
    """Everything a strategy mutates while it runs."""

    target: TargetDescriptor
    checkpoint_every: int
    queue: Queue = field(default_factory=Queue)
    coverage: CoverageState = field(default_factory=CoverageState)
    records: list[ExecRecord] = field(default_factory=list)
    checkpoints: list[Checkpoint] = field(default_factory=list)
    crash_inputs: list[bytes] = field(default_factory=list)

    @property
    def executions(self) -> int:
        return len(self.records)

    def run_one(self, data: bytes) -> ExecRecord:
        data = data[: self.target.max_input_len]
        trace = execute(self.target, data)
        idx = len(self.records)
        is_new, path = self.coverage.observe(trace, idx)
        rec = ExecRecord(idx, path, is_new, trace.crashed)
        self.records.append(rec)
        if trace.crashed:
            self.crash_inputs.append(data)
        elif is_new:
            self.queue.add(data, path, idx)
        if (idx + 1) % self.checkpoint_every == 0:
            self.checkpoint()
        return rec

    def checkpoint(self) -> None:
        c = self.coverage
        self.checkpoints.append(
            Checkpoint(len(self.records), len(c.seen_paths), len(c.seen_edge_buckets), c.crash_count)
        )

    def copy(self) -> "FuzzState":
        return FuzzState(
            self.target,
            self.checkpoint_every,
            self.queue.copy(),
            self.coverage.copy(),
            list(self.records),
            list(self.checkpoints),
            list(self.crash_inputs),
        )


@dataclass
class WarmState:
    """Snapshot shared by all strategies for one (target, seed)."""

    state: FuzzState
    model: PathModel
    seed: int

    def fork(self) -> tuple[FuzzState, PathModel]:
        return self.state.copy(), self.model


@dataclass
class RunLog:
    config: StrategyConfig
    target: str
    records: list[ExecRecord]
    checkpoints: list[Checkpoint]
    queue: Queue
    crash_inputs: list[bytes]
    entropy_histograms: list[dict] = field(default_factory=list)
    final_model: Optional[PathModel] = None

    @property
    def paths_found(self) -> int:
        return sum(r.is_new_path for r in self.records)

    def paths_series(self) -> list[int]:
        out, n = [], 0
        for r in self.records:
            n += r.is_new_path
            out.append(n)
        return out

    def summary(self) -> dict:
        last = self.checkpoints[-1] if self.checkpoints else None
        return {
            "target": self.target,
            "config": self.config.echo(),
            "executions": len(self.records),
            "paths": self.paths_found,
            "edge_buckets": last.edge_buckets if last else None,
            "crashes": sum(r.crashed for r in self.records),
            "queue_size": len(self.queue),
            "crash_inputs": [c.hex() for c in self.crash_inputs],
        }

    def checkpoint_csv(self) -> str:
        lines = ["exec_index,paths,edge_buckets,crashes"]
        lines += [f"{c.exec_index},{c.paths},{c.edge_buckets},{c.crashes}" for c in self.checkpoints]
        return "\n".join(lines) + "\n"

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def warmup(target: TargetDescriptor | str, config: StrategyConfig) -> WarmState:
    """Admit the seed corpus, run FIDGETY to ``warmup_execs`` executions, pre-train.

    Seed executions count toward ``warmup_execs``.
    """
    target = get_target(target) if isinstance(target, str) else target
    state = FuzzState(target, config.checkpoint_every)
    examples: list[tuple[dict, PathId]] = []
    for seed_input in target.seed_corpus[: config.warmup_execs]:
        rec = state.run_one(seed_input)
        examples.append((featurize(seed_input[: target.max_input_len]), rec.path))
    mcfg = config.mutation_config(target)
    it = 0
    while state.executions < config.warmup_execs:
        n = min(config.per_iteration, config.warmup_execs - state.executions)
        rng = rngs.stream(config.rng_seed, rngs.PHASE_WARMUP, it)
        for data in _fidgety(state, n, mcfg, rng):
            examples.append(data)
        it += 1
    model = train(examples)
    log.debug("warm-up on %s: %d execs, %d paths", target.name, state.executions, model.P)
    return WarmState(state, model, config.rng_seed)


def _fidgety(state: FuzzState, n: int, mcfg: MutationConfig, rng) -> list[tuple[dict, PathId]]:
    out = []
    for _ in range(n):
        q = state.queue
        parent = q[q.select_index(rng)]
        child = mutate(parent.input, mcfg, rng, q.entries)[: state.target.max_input_len]
        rec = state.run_one(child)
        out.append((featurize(child), rec.path))
    return out


Scorer = Callable[[PathModel, Sequence[bytes]], np.ndarray]


def entropy_scores(model: PathModel, children: Sequence[bytes]) -> np.ndarray:
    """Entropy of each child's predicted path distribution (all zero at cold start)."""
    if model.P == 0:
        return np.zeros(len(children))
    return entropies(model.predict_many(children))


def choose(strategy: Strategy, scores: Optional[np.ndarray], k: int, m: int, rng) -> list[int]:
    """Batch positions to execute, in execution order."""
    if strategy is Strategy.BATCHED:
        return list(range(m))
    if strategy is Strategy.RANDOM_BATCHED:
        return rng.sample(range(k), m)
    if strategy is Strategy.ML:
        return rank_indices(scores.tolist(), rng)[:m]
    raise ValueError(f"{strategy} does not select from batches")


def run_strategy(
    target: TargetDescriptor | str,
    config: StrategyConfig,
    warm: WarmState,
    scorer: Scorer = entropy_scores,
) -> RunLog:
    """Spend the remaining ``budget - warmup_execs`` executions with one strategy."""
    target = get_target(target) if isinstance(target, str) else target
    if warm.seed != config.rng_seed or warm.state.executions != config.warmup_execs:
        raise ValueError("warm state does not match this config")
    state, model = warm.fork()
    mcfg = config.mutation_config(target)
    strategy = config.strategy
    k, per_iter = config.num_generate, config.per_iteration
    hists: list[dict] = []
    it = 0
    while state.executions < config.budget:
        m = min(per_iter, config.budget - state.executions)
        gen = rngs.stream(config.rng_seed, rngs.PHASE_STRATEGY, it, rngs.GENERATE)
        if strategy is Strategy.FIDGETY:
            _fidgety(state, m, mcfg, gen)
            it += 1
            continue
        children = generate_batch(state.queue, k, mcfg, gen)
        scores = None
        if strategy is Strategy.ML:
            scores = np.asarray(scorer(model, children), float)
            if config.entropy_bins:
                hists.append(_histogram(it, state.executions, model.P, scores, config.entropy_bins))
        sel = rngs.stream(config.rng_seed, rngs.PHASE_STRATEGY, it, rngs.SELECT)
        chosen = choose(strategy, scores, k, m, sel)
        examples = []
        for j in chosen:
            child = children[j][: target.max_input_len]
            rec = state.run_one(child)
            if strategy is Strategy.ML:
                ex = (featurize(child), rec.path)
                if config.retrain_cadence is RetrainCadence.PER_INPUT:
                    model = _retrain(model, [ex], config)
                else:
                    examples.append(ex)
        if examples:
            model = _retrain(model, examples, config)
        it += 1
    return RunLog(
        config,
        target.name,
        state.records,
        state.checkpoints,
        state.queue,
        state.crash_inputs,
        hists,
        model if strategy is Strategy.ML else None,
    )


def _retrain(model: PathModel, examples: list, config: StrategyConfig) -> PathModel:
    return model.retrain(
        examples, config.warm_start, config.retrain_passes, np.dtype(config.retrain_dtype), config.retrain_memory
    )


def _histogram(it: int, exec_index: int, P: int, scores: np.ndarray, bins: int) -> dict:
    top = math.log(max(P, 2))
    counts, edges = np.histogram(np.clip(scores, 0.0, top), bins=bins, range=(0.0, top))
    return {"iteration": it, "exec_index": exec_index, "P": P, "edges": edges.tolist(), "counts": counts.tolist()}


def entropy_histogram_csv(hists: list[dict]) -> str:
    lines = ["iteration,exec_index,P,bin,bin_lo,bin_hi,count"]
    for h in hists:
        e = h["edges"]
        for b, c in enumerate(h["counts"]):
            lines.append(f"{h['iteration']},{h['exec_index']},{h['P']},{b},{e[b]:.6f},{e[b + 1]:.6f},{c}")
    return "\n".join(lines) + "\n"


def fuzz(target: TargetDescriptor | str, config: StrategyConfig) -> RunLog:
    """Warm up and run a single strategy."""
    return run_strategy(target, config, warmup(target, config))
