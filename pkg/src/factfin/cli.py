"""Command-line interface: ``factfin <command> [options]``.

Exit codes: 0 on success, 2 for bad input (files, config, strategy source),
3 when the model endpoint fails, 1 for any other package error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from factfin import __version__
from factfin.audit import AuditInputs, audit_report, bench_accuracy, bundled, load_answers, load_items
from factfin.backtest import BacktestResult, run
from factfin.config import RunConfig, load_config
from factfin.counterfactual import (
    load_manifest, load_scenarios, make_scenario_set, manifest, save_scenarios, stat_reports,
)
from factfin.errors import FactFinError, GenerationError, InputError
from factfin.generator import (
    GatewayBackend, GatewayConfig, GatewayError, ReplayBackend, TemplateBackend, generate, template_for,
    volatility_regime,
)
from factfin.leakage import leakage_report, paired_evaluate, write_reports_csv
from factfin.market_data.dataset import Dataset, load_corpus, load_supplied, write_corpus, write_supplied
from factfin.market_data.news import load_news, write_news
from factfin.market_data.prices import load_ohlcv, write_ohlcv
from factfin.market_data.retrieval import SnippetIndex, retrieve_context
from factfin.plotting import bars_svg, equity_svg
from factfin.search import evolve
from factfin.strategy import parse, render

log = logging.getLogger("factfin")

EXIT_OK, EXIT_ERROR, EXIT_INPUT, EXIT_GATEWAY = 0, 1, 2, 3
BUNDLE = "bundle"


class Run:
    """Per-invocation context: resolved config, output directory and the run stamp."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.stamp = {"config_hash": cfg.hash(), "seed": cfg.seed, "version": __version__}

    def path(self, name: str) -> Path:
        return self.out / name

    def write_json(self, name: str, obj: Any) -> Path:
        body = dict(obj) if isinstance(obj, dict) else {"items": obj}
        body["run"] = self.stamp
        p = self.path(name)
        p.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return p

    def write_csv(self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
        p = self.path(name)
        with p.open("w", newline="", encoding="utf-8") as fh:
            fh.write(f"# config_hash={self.stamp['config_hash']} seed={self.stamp['seed']}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        return p

    @property
    def description(self) -> str:
        return f"config_hash={self.stamp['config_hash']} seed={self.stamp['seed']}"

    # -- data -----------------------------------------------------------------

    def bundle(self, bundle_dir: str | None = None) -> Dataset:
        d = Path(bundle_dir) if bundle_dir else self.path(BUNDLE)
        prices = d / "prices.csv"
        if not prices.exists():
            raise InputError(f"no dataset bundle at {d}; run 'factfin ingest' first")
        series = load_ohlcv(prices, self.cfg.asset)
        news = load_news(d / "news.jsonl") if (d / "news.jsonl").exists() else []
        supplied = load_supplied(d / "supplied.csv", series.dates) if (d / "supplied.csv").exists() else None
        corpus = load_corpus(d / "corpus.jsonl") if (d / "corpus.jsonl").exists() else []
        return Dataset(series, news, supplied, corpus)

    def window(self, dataset: Dataset, name: str) -> Dataset:
        start, end = getattr(self.cfg, name) if name in ("train", "eval") else (None, None)
        if start is None and end is None:
            return dataset
        try:
            return dataset.between(start, end)
        except ValueError as exc:
            raise InputError(f"{name} window: {exc}") from None

    def scenarios(self, dataset: Dataset, path: str | None = None):
        p = Path(path) if path else self.path("scenarios.json")
        if p.exists():
            return load_manifest(p, dataset)
        log.info("no scenario manifest at %s; generating from config", p)
        return make_scenario_set(dataset, self.perturbations(), self.cfg.scenarios_per_spec, self.cfg.seed)

    def perturbations(self):
        from factfin.config import DEFAULT_PERTURBATIONS
        from factfin.counterfactual import PerturbationSpec
        return self.cfg.perturbations or tuple(PerturbationSpec.from_json(p) for p in DEFAULT_PERTURBATIONS)

    def strategy(self, path: str | None):
        p = path or self.cfg.strategy
        if p is None:
            raise InputError("no strategy file given")
        try:
            text = Path(p).read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read strategy {p}: {exc}") from None
        return parse(text, allow_calendar=self.cfg.allow_calendar)

    def backend(self):
        g = self.cfg.generator
        if g.backend == "template":
            return TemplateBackend()
        if g.backend == "replay":
            if not g.transcript:
                raise InputError("replay backend needs generator.transcript")
            return ReplayBackend(g.transcript)
        return GatewayBackend(GatewayConfig(g.url, g.model, g.timeout, g.max_attempts, g.backoff, g.transcript))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _backtest_outputs(r: Run, result: BacktestResult, prefix: str = "") -> None:
    r.write_json(f"{prefix}backtest.json", result.to_json())
    r.write_csv(f"{prefix}equity.csv", ["date", "equity"], [[d, repr(e)] for d, e in zip(result.dates, result.equity)])
    equity_svg({"strategy": result.equity}, r.path(f"{prefix}equity.svg"), description=r.description)


# -- commands -------------------------------------------------------------------

def cmd_ingest(r: Run, args) -> int:
    cfg = r.cfg
    prices = args.prices or cfg.prices
    if not prices:
        raise InputError("no price file: pass --prices or set data.prices")
    series = load_ohlcv(prices, args.asset or cfg.asset)
    news = load_news(args.news or cfg.news) if (args.news or cfg.news) else []
    sup_path = args.supplied or cfg.supplied
    supplied = load_supplied(sup_path, series.dates) if sup_path else None
    corpus = load_corpus(args.corpus or cfg.corpus) if (args.corpus or cfg.corpus) else []
    ds = Dataset(series, news, supplied, corpus)
    d = r.path(BUNDLE)
    d.mkdir(exist_ok=True)
    write_ohlcv(series, d / "prices.csv")
    write_news(ds.news, d / "news.jsonl")
    write_corpus(ds.corpus, d / "corpus.jsonl")
    files = {"prices.csv": len(series), "news.jsonl": len(ds.news), "corpus.jsonl": len(ds.corpus)}
    if ds.supplied:
        write_supplied(ds, d / "supplied.csv")
        files["supplied.csv"] = len(series)
    fs = ds.factor_set()
    keys = sorted(fs.values)
    with (d / "factors.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *keys])
        for i, day in enumerate(series.dates):
            w.writerow([day.isoformat(), *(repr(float(fs.values[k][i])) for k in keys)])
    files["factors.csv"] = len(series)
    body = {"schema": "factfin.bundle/1", "asset": series.asset, "rows": len(series),
            "first": series.dates[0].isoformat(), "last": series.dates[-1].isoformat(),
            "files": {name: {"rows": n, "sha256": _sha256(d / name)} for name, n in sorted(files.items())}}
    (d / "manifest.json").write_text(json.dumps({**body, "run": r.stamp}, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    print(f"ingested {len(series)} bars of {series.asset} into {d}")
    return EXIT_OK


def cmd_backtest(r: Run, args) -> int:
    ast = r.strategy(args.strategy)
    ds = r.window(r.bundle(args.bundle), args.window)
    result = run(ast, ds, r.cfg.cost)
    _backtest_outputs(r, result)
    sr = "n/a" if result.sharpe is None else f"{result.sharpe:.4f}"
    print(f"TR={result.total_return:.6f} SR={sr} MDD={result.max_drawdown:.6f}")
    return EXIT_OK


def cmd_perturb(r: Run, args) -> int:
    if args.authored:
        ss = load_scenarios(args.authored)
        save_scenarios(ss, r.path("authored_scenarios.json"))
        print(f"loaded {len(ss)} authored scenarios")
        return EXIT_OK
    ds = r.window(r.bundle(args.bundle), "train")
    n = args.n or r.cfg.scenarios_per_spec
    ss = make_scenario_set(ds, r.perturbations(), n, r.cfg.seed)
    r.write_json("scenarios.json", manifest(ss))
    reports = stat_reports(ss)
    r.write_json("stats.json", {"schema": "factfin.stats/1",
                                "scenarios": {k: v.to_json() for k, v in reports.items()}})
    passed = sum(v.passed for v in reports.values())
    print(f"wrote {len(ss)} scenarios; {passed}/{len(reports)} within statistic tolerances")
    return EXIT_OK


def _leakage(r: Run, ast, ds, ss, label: str):
    s = r.cfg.search
    pairs = paired_evaluate(ast, ss, warmup=s.warmup, k=s.eval_points)
    return leakage_report(pairs, s.alpha, s.beta, s.gamma, strategy_id=ast.id, scenario_set=label)


def cmd_leakage(r: Run, args) -> int:
    ast = r.strategy(args.strategy)
    ds = r.window(r.bundle(args.bundle), "train")
    ss = r.scenarios(ds, args.scenarios)
    rep = _leakage(r, ast, ds, ss, "scenarios")
    r.write_json("leakage.json", rep.to_json())
    write_reports_csv([rep], r.path("leakage.csv"))
    ci = "absent" if rep.ci is None else f"{rep.ci:.4f}"
    print(f"PC={rep.pc:.4f} CI={ci} IDS={rep.ids:.4f} objective={rep.objective:.4f} (N={rep.n}, M={rep.m})")
    return EXIT_OK


def _initial_strategy(r: Run, args, ds: Dataset):
    if args.strategy or r.cfg.strategy:
        return r.strategy(args.strategy)
    t = len(ds) - 1
    sstate = retrieve_context(ds.state(t), SnippetIndex(ds.corpus))
    regime = volatility_regime(ds, t)
    res = generate(template_for("generate", regime), sstate, r.backend(), regime=regime, seed=r.cfg.seed,
                   temperature=r.cfg.generator.temperature, max_attempts=r.cfg.generator.max_attempts)
    log.info("generated initial strategy in %d attempt(s)", res.attempts)
    return res.ast


SUMMARY_FIELDS = ("strategy", "id", "split", "TR", "SR", "MDD", "PC", "CI", "IDS")


def cmd_evolve(r: Run, args) -> int:
    full = r.bundle(args.bundle)
    train, test = r.window(full, "train"), r.window(full, "eval")
    ss = r.scenarios(train, args.scenarios)
    initial = _initial_strategy(r, args, train)
    result = evolve(initial, train, ss, r.cfg.search, cost=r.cfg.cost, scenario_label="scenarios")
    r.write_json("evolution.json", result.to_json())
    result.write_strategy(r.path("best.strat"))
    if result.report is not None:
        r.write_json("leakage.json", result.report.to_json())
    rows, curves = [], {}
    for name, ast in (("initial", initial), ("best", result.best)):
        rep = result.report if name == "best" else _leakage(r, ast, train, ss, "scenarios")
        for split, ds in (("train", train), ("eval", test)):
            bt = run(ast, ds, r.cfg.cost)
            if split == "eval":
                curves[name] = bt.equity
            rows.append([name, ast.id, split, repr(bt.total_return), "" if bt.sharpe is None else repr(bt.sharpe),
                         repr(bt.max_drawdown), repr(rep.pc) if rep else "", "" if rep is None or rep.ci is None
                         else repr(rep.ci), repr(rep.ids) if rep else ""])
    r.write_csv("summary.csv", SUMMARY_FIELDS, rows)
    r.write_json("summary.json", {"schema": "factfin.summary/1",
                                  "rows": [dict(zip(SUMMARY_FIELDS, row)) for row in rows]})
    equity_svg(curves, r.path("evolution_equity.svg"), "Initial vs evolved strategy (eval window)", r.description)
    print(render(result.best))
    print(f"reward {result.root_reward:.4f} -> {result.best_reward:.4f} after {result.simulations} simulations")
    return EXIT_OK


def cmd_score_bench(r: Run, args) -> int:
    items = load_items(args.items or bundled("finleak_items.json"))
    answers = load_answers(args.answers) if args.answers else []
    rep = bench_accuracy(items, answers)
    r.write_json("bench.json", rep.to_json())
    r.write_csv("bench.csv", ["category", "accuracy"], [[c, repr(a)] for c, a in rep.category_rows()])
    if rep.unanswered:
        log.warning("%d item(s) unanswered and scored 0: %s", len(rep.unanswered), ", ".join(rep.unanswered))
    print(f"accuracy={rep.accuracy:.4f} over {len(items)} items ({len(rep.unanswered)} unanswered)")
    return EXIT_OK


def cmd_audit(r: Run, args) -> int:
    rep = audit_report(AuditInputs.load(args.inputs))
    r.write_json("audit.json", rep)
    print(json.dumps({k: v for k, v in rep.items() if k != "schema"}, sort_keys=True))
    return EXIT_OK


def _read_csv(path: Path) -> list[dict]:
    with path.open(encoding="utf-8") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def cmd_report(r: Run, args) -> int:
    lines = ["# factfin report", "", f"config hash `{r.stamp['config_hash']}`, seed {r.stamp['seed']}", ""]
    made = []
    if r.path("summary.csv").exists():
        rows = _read_csv(r.path("summary.csv"))
        lines += ["## Strategies", "", "| " + " | ".join(SUMMARY_FIELDS) + " |",
                  "|" + "---|" * len(SUMMARY_FIELDS)]
        for row in rows:
            lines.append("| " + " | ".join(_fmt(row[f]) for f in SUMMARY_FIELDS) + " |")
        lines.append("")
        groups = {f"{row['strategy']} ({row['split']})": {k: float(row[k]) for k in ("PC", "IDS") if row[k]}
                  for row in rows}
        bars_svg(groups, r.path("report_leakage.svg"), "Leakage metrics", r.description)
        made.append("report_leakage.svg")
    if r.path("equity.csv").exists():
        eq = [float(row["equity"]) for row in _read_csv(r.path("equity.csv"))]
        equity_svg({"strategy": eq}, r.path("report_equity.svg"), description=r.description)
        made.append("report_equity.svg")
    if r.path("bench.json").exists():
        bench = json.loads(r.path("bench.json").read_text(encoding="utf-8"))
        lines += ["## Benchmark", "", f"weighted accuracy {bench['accuracy']:.4f}", ""]
        lines += [f"- {c}: {a:.4f}" for c, a in sorted(bench["categories"].items())] + [""]
        bars_svg({c: {"accuracy": a} for c, a in sorted(bench["categories"].items())}, r.path("report_bench.svg"),
                 "Benchmark accuracy by category", r.description)
        made.append("report_bench.svg")
    if r.path("audit.json").exists():
        audit = json.loads(r.path("audit.json").read_text(encoding="utf-8"))
        lines += ["## Audit", ""] + [f"- {k}: {_fmt(audit[k])}" for k in ("bias", "memory", "generalization_change_pct")]
        lines.append("")
    if made:
        lines += ["## Figures", ""] + [f"![{m}]({m})" for m in made] + [""]
    r.path("report.md").write_text("\n".join(lines), encoding="utf-8")
    print(f"wrote {r.path('report.md')} and {len(made)} figure(s)")
    return EXIT_OK


def _fmt(v) -> str:
    if v in ("", None):
        return "n/a"
    try:
        return f"{float(v):.4f}"
    except (TypeError, ValueError):
        return str(v)


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def globals_(suppress: bool) -> argparse.ArgumentParser:
        # subcommands repeat the global flags; SUPPRESS keeps them from clobbering values given earlier
        d = {"default": argparse.SUPPRESS} if suppress else {}
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--config", help="YAML run configuration", **d)
        g.add_argument("--seed", type=int, help="master seed (overrides the config)", **d)
        g.add_argument("--out", help="output directory (overrides the config)", **d)
        g.add_argument("--backend", choices=("template", "gateway", "replay"), help="strategy generator backend", **d)
        g.add_argument("-v", "--verbose", action="count", **(d or {"default": 0}))
        return g

    common = globals_(True)
    p = argparse.ArgumentParser(prog="factfin", description="Leakage-aware strategy search on market data.",
                                parents=[globals_(False)])
    p.add_argument("--version", action="version", version=f"factfin {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="validate inputs and write a dataset bundle")
    s.add_argument("--prices")
    s.add_argument("--news")
    s.add_argument("--supplied", help="CSV of supplied factor columns (date, key...)")
    s.add_argument("--corpus", help="JSONL retrieval snippets")
    s.add_argument("--asset")
    s.set_defaults(fn=cmd_ingest)

    s = sub.add_parser("backtest", parents=[common], help="backtest a strategy file")
    s.add_argument("strategy", nargs="?")
    s.add_argument("--bundle")
    s.add_argument("--window", choices=("train", "eval", "all"), default="eval")
    s.set_defaults(fn=cmd_backtest)

    s = sub.add_parser("perturb", parents=[common], help="generate counterfactual scenarios")
    s.add_argument("--bundle")
    s.add_argument("--n", type=int, help="scenarios per perturbation spec")
    s.add_argument("--authored", help="load and re-save an authored scenario file instead")
    s.set_defaults(fn=cmd_perturb)

    s = sub.add_parser("leakage", parents=[common], help="score a strategy's leakage on the scenarios")
    s.add_argument("strategy", nargs="?")
    s.add_argument("--bundle")
    s.add_argument("--scenarios")
    s.set_defaults(fn=cmd_leakage)

    s = sub.add_parser("evolve", parents=[common], help="search for a better, less leaky strategy")
    s.add_argument("--strategy")
    s.add_argument("--bundle")
    s.add_argument("--scenarios")
    s.set_defaults(fn=cmd_evolve)

    s = sub.add_parser("score-bench", parents=[common], help="grade benchmark answers")
    s.add_argument("items", nargs="?", help="items JSON (default: bundled fixture items)")
    s.add_argument("answers", nargs="?", help="answers JSONL")
    s.set_defaults(fn=cmd_score_bench)

    s = sub.add_parser("audit", parents=[common], help="memorization audit metrics from a JSON log")
    s.add_argument("inputs")
    s.set_defaults(fn=cmd_audit)

    s = sub.add_parser("report", parents=[common], help="render figures and a markdown summary")
    s.set_defaults(fn=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        r = Run(load_config(args.config, args.seed, args.out, args.backend))
        return args.fn(r, args)
    except GatewayError as exc:
        print(f"error: model endpoint failed: {exc}", file=sys.stderr)
        return EXIT_GATEWAY
    except GenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GATEWAY if isinstance(exc.__cause__, GatewayError) else EXIT_ERROR
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FactFinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
