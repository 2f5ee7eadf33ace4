import csv
import io
import json
import math
import statistics
from dataclasses import replace

import pytest

from entropyfuzz import cli
from entropyfuzz.evaluation import Z95, RelCovTable, SeedResult, mean_se, rel_cov, run_experiment
from entropyfuzz.loop import Strategy, StrategyConfig

F, B, R, ML = Strategy.FIDGETY, Strategy.BATCHED, Strategy.RANDOM_BATCHED, Strategy.ML
TINY = StrategyConfig(budget=500, warmup_execs=100, num_generate=32, alpha=0.25, checkpoint_every=100)


def test_rel_cov_formula():
    out = rel_cov({F: [50, 75], ML: [60, 100]})
    assert out[F] == [0.5, 0.75] and out[ML][-1] == 1.0


def test_rel_cov_errors():
    with pytest.raises(ValueError, match="degenerate run"):
        rel_cov({F: [0, 0], ML: [0, 0]})
    with pytest.raises(ValueError):
        rel_cov({F: [1, 2], ML: [1]})


def test_mean_se_hand_arithmetic():
    m, se = mean_se([0.6, 0.8])
    assert abs(m - 0.7) < 1e-12 and abs(se - 0.1) < 1e-12
    assert mean_se([0.4]) == (0.4, 0.0)
    with pytest.raises(ValueError):
        mean_se([])


def _table():
    grid = (100, 200)
    res = {
        ("a", 0): SeedResult("a", 0, grid, {F: (3, 6), ML: (4, 8)}, {F: 0, ML: 0}, {F: 1, ML: 1}),
        ("b", 0): SeedResult("b", 0, grid, {F: (5, 10), ML: (2, 5)}, {F: 0, ML: 0}, {F: 1, ML: 1}),
    }
    return RelCovTable((F, ML), grid, ("a", "b"), (0,), res)


def test_summary_across_targets():
    t = _table()
    s = t.summary()
    # a: F 0.75, ML 1.0; b: F 1.0, ML 0.5 at T
    assert s[F][1] == pytest.approx((0.875, 0.125))
    assert s[ML][1] == pytest.approx((0.75, 0.25))
    assert t.gap(ML, F)[1] == pytest.approx(-0.125)
    lines = t.summary_csv().splitlines()
    assert lines[0] == "exec_index,fidgety_mean,fidgety_se,fidgety_ci_low,fidgety_ci_high,ml_mean,ml_se,ml_ci_low,ml_ci_high"
    assert lines[2].startswith("200,0.875000,0.125000,")
    assert "| 200 | 0.875 ± 0.125 | 0.750 ± 0.250 |" in t.table_md()


def _recompute(out, targets, strategies):
    """Rebuild summary.csv from per_target CSVs alone."""
    per_target = {}
    grid = None
    for t in targets:
        rows = list(csv.DictReader(open(out / "per_target" / f"{t}.csv", newline="")))
        grid = sorted({int(r["exec_index"]) for r in rows})
        seeds = sorted({int(r["seed"]) for r in rows})
        val = {(int(r["seed"]), r["strategy"], int(r["exec_index"])): int(r["paths"]) / int(r["best_final_paths"]) for r in rows}
        per_target[t] = {
            s: [math.fsum(val[(sd, s, x)] for sd in seeds) / len(seeds) for x in grid] for s in strategies
        }
    lines = [",".join(["exec_index"] + [f"{s}_{c}" for s in strategies for c in ("mean", "se", "ci_low", "ci_high")])]
    for i, x in enumerate(grid):
        row = [str(x)]
        for s in strategies:
            vals = [per_target[t][s][i] for t in targets]
            m = math.fsum(vals) / len(vals)
            se = statistics.stdev(vals) / math.sqrt(len(vals)) if len(vals) > 1 else 0.0
            row += [f"{v:.6f}" for v in (m, se, m - Z95 * se, m + Z95 * se)]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def test_experiment_outputs_and_aggregation(tmp_path):
    targets = ["magic-gate", "csv-records"]
    table = run_experiment(targets, [0, 1], TINY, out=tmp_path)
    names = sorted(p.relative_to(tmp_path).as_posix() for p in tmp_path.rglob("*") if p.is_file())
    assert names == ["manifest.json", "per_target/csv-records.csv", "per_target/magic-gate.csv", "summary.csv", "table.md"]
    summary = (tmp_path / "summary.csv").read_bytes()
    assert b"\r" not in summary
    strategies = [s.value for s in table.strategies]
    assert summary.decode() == _recompute(tmp_path, targets, strategies)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "complete" and len(man["runs"]) == 2 * 2 * 4
    for t in targets:
        per = table.per_target(t)
        for s in table.strategies:
            assert per[s] == sorted(per[s]) and 0 < per[s][0]
        assert max(per[s][-1] for s in table.strategies) <= 1.0
    md = (tmp_path / "table.md").read_text().splitlines()
    assert len(md) == 2 + len(table.exec_index)


def test_single_strategy_is_its_own_best():
    table = run_experiment(["tlv-parser"], [0], TINY, strategies=[F])
    assert table.summary()[F][-1] == (1.0, 0.0)


def test_unknown_target_fails_before_running(tmp_path):
    with pytest.raises(KeyError):
        run_experiment(["nope"], [0], TINY, out=tmp_path)


def test_failed_run_writes_partial_manifest(tmp_path, monkeypatch):
    from entropyfuzz import evaluation

    real = evaluation.run_seed

    def flaky(target, seed, base, strategies):
        if seed == 1:
            raise RuntimeError("boom")
        return real(target, seed, base, strategies)

    monkeypatch.setattr(evaluation, "run_seed", flaky)
    with pytest.raises(RuntimeError):
        run_experiment(["magic-gate"], [0, 1], TINY, strategies=[F], out=tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"].startswith("failed") and len(man["runs"]) == 1


def test_cli_smoke(tmp_path, capsys):
    assert cli.main(["targets"]) == 0
    assert len(json.loads(capsys.readouterr().out)) >= 6
    flags = ["--budget", "400", "--warmup", "100", "--k", "16", "--checkpoint-every", "100"]
    rc = cli.main(["fuzz", "--target", "magic-gate", "--strategy", "ml", "--entropy-bins", "5", "--save-model", "--out", str(tmp_path / "f"), *flags])
    assert rc == 0
    for name in ("checkpoints.csv", "summary.json", "entropy_hist.csv", "model.json"):
        assert (tmp_path / "f" / name).is_file()
    assert (tmp_path / "f" / "queue").is_dir()
    rows = list(csv.reader(io.StringIO((tmp_path / "f" / "checkpoints.csv").read_text())))
    assert rows[0] == ["exec_index", "paths", "edge_buckets", "crashes"] and len(rows) == 5
    capsys.readouterr()
    rc = cli.main(["eval", "--targets", "magic-gate", "--seeds", "0", "--out", str(tmp_path / "e"), *flags])
    assert rc == 0 and "| executions |" in capsys.readouterr().out
    assert cli.main(["fuzz", "--target", "nope", "--out", str(tmp_path / "x"), *flags]) == 2
