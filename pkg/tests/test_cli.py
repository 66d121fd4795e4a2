from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest
import yaml

from factfin.cli import main
from factfin.market_data.prices import write_ohlcv
from factfin.synthetic import mean_reverting
from conftest import gapless


@pytest.fixture
def project(tmp_path) -> Path:
    series = mean_reverting(260, 5, "CLI")
    write_ohlcv(series, tmp_path / "prices.csv")
    d = series.dates
    (tmp_path / "news.jsonl").write_text(json.dumps(
        {"asset": "CLI", "headline": "CLI beats earnings estimates", "timestamp": d[50].isoformat()}) + "\n")
    (tmp_path / "corpus.jsonl").write_text(json.dumps({"id": "s0", "text": "Technology: +1.0%", "kind": "sector"}) + "\n")
    cfg = {
        "asset": "CLI", "seed": 3, "out": "out",
        "data": {"prices": "prices.csv", "news": "news.jsonl", "corpus": "corpus.jsonl"},
        "windows": {"train": [d[0].isoformat(), d[179].isoformat()], "eval": [d[180].isoformat(), d[-1].isoformat()]},
        "scenarios_per_spec": 3,
        "search": {"budget": 15},
        "leakage": {"eval_points": 10, "warmup": 30},
    }
    (tmp_path / "config.yaml").write_text(yaml.safe_dump(cfg))
    (tmp_path / "rsi.strat").write_text("when rsi(14) < 30 then buy\nwhen rsi(14) > 70 then sell\nelse hold\n")
    (tmp_path / "hold.strat").write_text("else hold\n")
    return tmp_path


def cli(project: Path, *args: str) -> int:
    return main(["--config", str(project / "config.yaml"), *args])


def test_ingest_manifest(project):
    assert cli(project, "ingest") == 0
    man = json.loads((project / "out/bundle/manifest.json").read_text())
    assert man["rows"] == 260 and man["files"]["prices.csv"]["rows"] == 260
    assert man["run"]["seed"] == 3 and len(man["run"]["config_hash"]) == 16
    assert cli(project, "ingest") == 0
    assert json.loads((project / "out/bundle/manifest.json").read_text()) == man


def test_corrupt_csv_exits_2(project, capsys):
    (project / "prices.csv").write_text("date,open,high,low,close\n2022-01-03,1,2,0.5,oops\n")
    assert cli(project, "ingest") == 2
    assert "error" in capsys.readouterr().err


def test_backtest_outputs_and_svg_stability(project):
    cli(project, "ingest")
    assert cli(project, "backtest", str(project / "hold.strat")) == 0
    bt = json.loads((project / "out/backtest.json").read_text())
    assert bt["total_return"] == 0.0 and bt["run"]["seed"] == 3
    first = (project / "out/equity.svg").read_bytes()
    assert first.startswith(b"<?xml")
    assert cli(project, "backtest", str(project / "hold.strat")) == 0
    assert (project / "out/equity.svg").read_bytes() == first
    assert (project / "out/equity.csv").read_text().startswith("# config_hash=")


def test_backtest_buy_and_hold_fixture(tmp_path):
    write_ohlcv(gapless([100.0, 120.0, 150.0]), tmp_path / "p.csv")
    (tmp_path / "buy.strat").write_text("else buy\n")
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(
        {"data": {"prices": "p.csv"}, "cost": {"cost": 0.0, "slippage": 0.0}}))
    args = ["--config", str(tmp_path / "c.yaml")]
    assert main([*args, "ingest"]) == 0
    assert main([*args, "backtest", "--window", "all", str(tmp_path / "buy.strat")]) == 0
    tr = json.loads((tmp_path / "out/backtest.json").read_text())["total_return"]
    assert tr == pytest.approx(0.5, abs=1e-12)


def test_bad_strategy_exits_2(project, capsys):
    cli(project, "ingest")
    (project / "bad.strat").write_text("when rsi(14) < 30 then buy\n")
    assert cli(project, "backtest", str(project / "bad.strat")) == 2
    assert "line" in capsys.readouterr().err


def test_perturb_and_leakage(project):
    cli(project, "ingest")
    assert cli(project, "perturb") == 0
    man = json.loads((project / "out/scenarios.json").read_text())
    assert len(man["scenarios"]) == 6
    assert cli(project, "perturb") == 0
    assert json.loads((project / "out/scenarios.json").read_text()) == man
    stats = json.loads((project / "out/stats.json").read_text())
    assert set(stats["scenarios"]) == {s["id"] for s in man["scenarios"]}
    assert cli(project, "leakage", str(project / "rsi.strat")) == 0
    rep = json.loads((project / "out/leakage.json").read_text())
    assert 0 <= rep["pc"] <= 1 and rep["ids"] >= 0 and rep["n"] == 60


def test_perturb_authored(project):
    from factfin.counterfactual import bundled_scenarios_path
    assert cli(project, "perturb", "--authored", str(bundled_scenarios_path())) == 0
    assert json.loads((project / "out/authored_scenarios.json").read_text()) == \
        json.loads(bundled_scenarios_path().read_text())


def test_evolve_outputs(project):
    cli(project, "ingest")
    assert cli(project, "evolve") == 0
    out = project / "out"
    evo = json.loads((out / "evolution.json").read_text())
    assert evo["simulations"] == 15 and len(evo["trace"]) == 15
    assert (out / "best.strat").read_text().strip().endswith(("hold", "buy", "sell"))
    with (out / "summary.csv").open() as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    assert [r["split"] for r in rows] == ["train", "eval", "train", "eval"]
    for row in rows:
        for col in ("TR", "MDD", "PC", "IDS"):
            assert row[col] != "" and float(row[col]) == float(row[col])
    assert (out / "evolution_equity.svg").exists()


def test_evolve_budget_one_returns_initial(project):
    cli(project, "ingest")
    assert cli(project, "--seed", "1", "evolve", "--strategy", str(project / "hold.strat")) == 0
    cfg = yaml.safe_load((project / "config.yaml").read_text())
    cfg["search"]["budget"] = 1
    (project / "config.yaml").write_text(yaml.safe_dump(cfg))
    assert cli(project, "evolve", "--strategy", str(project / "rsi.strat")) == 0
    assert (project / "out/best.strat").read_text() == (project / "rsi.strat").read_text()


def test_seed_flag_reaches_outputs(project):
    cli(project, "ingest")
    assert main(["score-bench", "--config", str(project / "config.yaml"), "--seed", "11"]) == 0
    bench = json.loads((project / "out/bench.json").read_text())
    assert bench["run"]["seed"] == 11 and bench["accuracy"] == 0.0 and len(bench["unanswered"]) == 12


def test_score_bench_fixture_and_order_invariance(project):
    from factfin.audit import bundled
    ans = bundled("finleak_answers_c.jsonl")
    assert cli(project, "score-bench", str(bundled("finleak_items.json")), str(ans)) == 0
    first = json.loads((project / "out/bench.json").read_text())
    assert first["scores"]["china-covid-2022-12-07"] == 0.5
    shuffled = project / "shuffled.jsonl"
    shuffled.write_text("\n".join(reversed(ans.read_text().splitlines())) + "\n")
    assert cli(project, "score-bench", str(bundled("finleak_items.json")), str(shuffled)) == 0
    assert json.loads((project / "out/bench.json").read_text()) == first


def test_score_bench_schema_error(project):
    bad = project / "bad.json"
    bad.write_text(json.dumps([{"id": "x", "category": "weather", "question": "?", "truth": {}}]))
    assert cli(project, "score-bench", str(bad)) == 2


def test_audit_and_report(project):
    (project / "audit.json").write_text(json.dumps(
        {"f_train": {"A": 3, "B": 1}, "p_score": {"A": 1, "B": 0}, "acc_pre": 0.5, "acc_post": 0.4}))
    assert cli(project, "audit", str(project / "audit.json")) == 0
    assert json.loads((project / "out/audit.json").read_text())["bias"] == pytest.approx(-0.125)
    assert cli(project, "score-bench") == 0
    assert cli(project, "report") == 0
    text = (project / "out/report.md").read_text()
    assert "## Audit" in text and "## Benchmark" in text


def test_gateway_failure_exits_3(project, capsys):
    cfg = yaml.safe_load((project / "config.yaml").read_text())
    cfg["generator"] = {"backend": "gateway", "url": "http://127.0.0.1:9/v1/chat", "model": "m",
                        "timeout": 0.5, "max_attempts": 1, "backoff": 0.0}
    (project / "config.yaml").write_text(yaml.safe_dump(cfg))
    cli(project, "ingest")
    assert cli(project, "evolve") == 3
    assert "error:" in capsys.readouterr().err


def test_bad_config_exits_2(tmp_path):
    (tmp_path / "c.yaml").write_text("bogus: 1\n")
    assert main(["--config", str(tmp_path / "c.yaml"), "score-bench"]) == 2
