import random
from collections import Counter
from dataclasses import replace
from itertools import combinations

import numpy as np
import pytest
from scipy import stats

from entropyfuzz import loop
from entropyfuzz.loop import RetrainCadence, Strategy, StrategyConfig, choose, fuzz, run_strategy, warmup
from entropyfuzz.model import train
from entropyfuzz.targets import execute, get_target

SMALL = StrategyConfig(budget=700, warmup_execs=150, num_generate=32, alpha=0.25, checkpoint_every=100)


def _no_retrain(model, examples, config):
    return model


def test_config_validation():
    with pytest.raises(ValueError):
        StrategyConfig(alpha=0.0)
    with pytest.raises(ValueError):
        StrategyConfig(budget=100, warmup_execs=100)
    with pytest.raises(ValueError):
        StrategyConfig(retrain_dtype="float16")
    assert StrategyConfig(num_generate=1, alpha=0.01).per_iteration == 1
    assert StrategyConfig().per_iteration == 64


@pytest.mark.parametrize("strategy", list(Strategy))
def test_budget_exact_and_checkpoints_monotone(strategy):
    run = fuzz("csv-records", replace(SMALL, strategy=strategy))
    assert len(run.records) == SMALL.budget
    assert [r.exec_index for r in run.records] == list(range(SMALL.budget))
    assert [c.exec_index for c in run.checkpoints] == list(range(100, 701, 100))
    paths = [c.paths for c in run.checkpoints]
    assert paths == sorted(paths)
    assert run.checkpoints[-1].paths == run.paths_found


def test_default_accounting(monkeypatch):
    # 18000 strategy executions = 281 full iterations of 64 plus one of 16
    sizes = []
    real_choose = loop.choose

    def spy(strategy, scores, k, m, rng):
        sizes.append(m)
        return real_choose(strategy, scores, k, m, rng)

    monkeypatch.setattr(loop, "choose", spy)
    monkeypatch.setattr(loop, "_retrain", _no_retrain)
    cfg = StrategyConfig(strategy=Strategy.ML)
    warm = warmup("magic-gate", cfg)
    run = run_strategy("magic-gate", cfg, warm, scorer=lambda m, c: np.zeros(len(c)))
    assert len(run.records) == 20_000
    assert Counter(sizes) == {64: 281, 16: 1}
    assert sizes[-1] == 16 and 281 * 64 + 16 == 18_000


@pytest.mark.parametrize("strategy", [Strategy.ML, Strategy.RANDOM_BATCHED, Strategy.FIDGETY])
def test_runs_are_deterministic(strategy):
    cfg = replace(SMALL, strategy=strategy, rng_seed=5)
    a, b = fuzz("tlv-parser", cfg), fuzz("tlv-parser", cfg)
    assert a.records == b.records
    assert [e.input for e in a.queue] == [e.input for e in b.queue]
    assert a.summary_json() == b.summary_json() and a.checkpoint_csv() == b.checkpoint_csv()


@pytest.mark.parametrize("strategy", list(Strategy))
def test_queue_admission_soundness(strategy):
    target = get_target("proto-state")
    run = fuzz(target, replace(SMALL, strategy=strategy, rng_seed=2))
    admitted = {r.exec_index for r in run.records if r.is_new_path and not r.crashed}
    assert {e.added_at for e in run.queue} == admitted
    for e in run.queue:
        trace = execute(target, e.input)
        assert not trace.crashed
        assert run.records[e.added_at].path == e.path
    assert len(run.crash_inputs) == sum(r.crashed for r in run.records)


def test_warmup_properties():
    cfg = replace(SMALL, warmup_execs=1)
    w = warmup("expr-eval", cfg)
    assert len(w.state.queue) >= 1 and w.state.executions == 1
    w = warmup("expr-eval", SMALL)
    assert w.model.P == len({r.path for r in w.state.records})
    assert w.model.trained_on == SMALL.warmup_execs
    w2 = warmup("expr-eval", SMALL)
    assert w.state.records == w2.state.records
    np.testing.assert_array_equal(w.model.coef, w2.model.coef)


def test_warmup_is_shared_prefix():
    warm = warmup("tlv-parser", SMALL)
    prefixes = {
        tuple(run_strategy("tlv-parser", replace(SMALL, strategy=s), warm).records[: SMALL.warmup_execs])
        for s in Strategy
    }
    assert len(prefixes) == 1
    with pytest.raises(ValueError):
        run_strategy("tlv-parser", replace(SMALL, rng_seed=9), warm)


def test_alpha_one_batched_executes_whole_batch(monkeypatch):
    seen = []
    real_choose = loop.choose

    def spy(strategy, scores, k, m, rng):
        out = real_choose(strategy, scores, k, m, rng)
        seen.append((k, out))
        return out

    monkeypatch.setattr(loop, "choose", spy)
    run = fuzz("csv-records", replace(SMALL, strategy=Strategy.BATCHED, alpha=1.0, num_generate=50, budget=650))
    assert len(run.records) == 650
    assert all(out == list(range(k)) for k, out in seen[:-1])


def test_batches_never_see_their_own_children(monkeypatch):
    real_gen = loop.generate_batch
    checks = []

    def spy(queue, k, config, rng, lineage=None):
        frozen = [e.input for e in queue]
        lin: list[int] = []
        kids = real_gen(queue, k, config, rng, lin)
        checks.append(all(i < len(frozen) for i in lin) and [e.input for e in queue] == frozen)
        return kids

    monkeypatch.setattr(loop, "generate_batch", spy)
    fuzz("tlv-parser", replace(SMALL, strategy=Strategy.ML))
    assert checks and all(checks)


def test_per_input_cadence_runs():
    run = fuzz("magic-gate", replace(SMALL, retrain_cadence=RetrainCadence.PER_INPUT, budget=300))
    assert len(run.records) == 300 and run.final_model.trained_on == 300


def test_cold_start_choose_matches_random():
    k, m, n = 6, 2, 1000
    ml = Counter(tuple(sorted(choose(Strategy.ML, np.zeros(k), k, m, random.Random(i)))) for i in range(n))
    rnd = Counter(tuple(sorted(choose(Strategy.RANDOM_BATCHED, None, k, m, random.Random(10**6 + i)))) for i in range(n))
    subsets = list(combinations(range(k), m))
    table = np.array([[ml[s] for s in subsets], [rnd[s] for s in subsets]])
    assert stats.chi2_contingency(table)[1] > 0.01


def test_cold_start_model_scores_zero():
    scores = loop.entropy_scores(train([]), [b"a", b"bb"])
    np.testing.assert_array_equal(scores, [0.0, 0.0])


def test_entropy_histogram_output():
    run = fuzz("tlv-parser", replace(SMALL, entropy_bins=4))
    assert run.entropy_histograms
    csv = loop.entropy_histogram_csv(run.entropy_histograms)
    assert csv.splitlines()[0] == "iteration,exec_index,P,bin,bin_lo,bin_hi,count"
    h = run.entropy_histograms[0]
    assert sum(h["counts"]) == SMALL.num_generate
