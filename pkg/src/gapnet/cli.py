"""Command-line entry point: ``gapnet <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from . import pipeline
from .data import DataError
from .graphs import GraphError, write_graph
from .gradcheck import REL_FLOOR, STEP, run_suite
from .tensor import save_params
from .training import NumericError, evaluate

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

log = logging.getLogger("gapnet")


def _config(path: str | None) -> dict:
    return cfgmod.load(path) if path else cfgmod.resolve()


def cmd_synth_data(args) -> int:
    overrides = {"data": {"source": "synthetic", "synthetic": {
        "stocks": args.stocks, "days": args.days, "clusters": args.clusters, "noise": args.noise,
        "seed": args.seed, "persistence": args.persistence, "factor_vol": args.factor_vol}}}
    panel = pipeline.synth_to_dir(cfgmod.resolve(overrides), args.out)
    print(f"wrote {panel.n_stocks} tickers x {panel.n_days} days to {args.out}")
    return 0


def cmd_build_graph(args) -> int:
    cfg = _config(args.config)
    panel = pipeline.load_panel(cfg)
    graph = pipeline.build_prior(cfg, panel, args.prior)
    if graph is None:
        raise cfgmod.ConfigError("build-graph needs a prior other than none")
    write_graph(args.out, graph)
    print(f"wrote {args.prior} graph to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args.config)
    try:
        res = pipeline.run_train(cfg, args.out)
    except NumericError as exc:
        if exc.result is not None and exc.result.log:
            save_params(Path(args.out) / pipeline.CHECKPOINT, exc.result.params)
            pipeline.write_epoch_log(Path(args.out) / pipeline.EPOCH_LOG, exc.result.log)
            log.error("kept the checkpoint of epoch %d", exc.result.best_epoch)
        raise
    print(f"best epoch {res.best_epoch} of {len(res.log)}; checkpoint in {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg, panel, plugin, params = pipeline.load_run(args.checkpoint, args.config)
    ev = evaluate(panel, plugin, params, args.segment, cfg["train"]["alpha"])
    pipeline.write_preds(args.out, panel, ev)
    print(f"{args.segment}: {len(ev.days)} days, mean ranking loss {sum(ev.losses) / len(ev.losses):.6g}")
    return 0


def cmd_backtest(args) -> int:
    cfg = _config(args.panel)
    panel = pipeline.load_panel(cfg)
    dates, tickers, preds = pipeline.read_preds(args.preds)
    b = cfg["backtest"]
    k = args.k if args.k is not None else b["k"]
    capital = args.capital if args.capital is not None else b["capital"]
    mode = args.return_mode or b["return_mode"]
    ledger = pipeline.backtest_preds(panel, dates, tickers, preds, k, capital, mode)
    pipeline.write_ledger(args.out, panel, ledger)
    if args.emit_curve:
        pipeline.write_curve(args.emit_curve, panel, ledger, args.benchmark)
    print(json.dumps(ledger.summary, sort_keys=True))
    return 0


def cmd_dump_graph(args) -> int:
    cfg, panel, plugin, params = pipeline.load_run(args.checkpoint, args.config)
    ev = evaluate(panel, plugin, params, args.segment, cfg["train"]["alpha"], keep_graphs=True)
    n = pipeline.dump_graphs(args.out, panel, ev)
    print(f"wrote {n} daily graphs to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(args.seed)
    print(f"central differences, step {STEP}; relative errors use max(|analytic|, |numeric|, "
          f"{REL_FLOOR:g}, rounding / tol) as denominator")
    bad = 0
    for r in results:
        status = "ok" if r.ok else "FAIL"
        bad += not r.ok
        print(f"{status:4s} {r.name:32s} max rel err {r.max_rel_error:.3e} (tol {r.tolerance:.0e}, "
              f"{r.n_entries} entries)")
    return EXIT_NUMERIC if bad else 0


def cmd_ablate(args) -> int:
    cfg = _config(args.config)
    priors = [("Industry", "industry"), (f"DTW_K={args.dtw_k}", f"dtw:{args.dtw_k}")]
    rows = pipeline.run_ablation(cfg, priors, random_seed=args.random_seed)
    pipeline.write_ablation(args.out, rows)
    for r in rows:
        print(r)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gapnet", description="Learned stock-relation graphs for ranking.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="write a planted-cluster synthetic panel as CSVs")
    s.add_argument("--stocks", type=int, default=30, help="number of stocks")
    s.add_argument("--days", type=int, default=500, help="number of trading days")
    s.add_argument("--clusters", type=int, default=5, help="number of planted clusters")
    s.add_argument("--noise", type=float, default=1.0, help="idiosyncratic noise relative to the factor")
    s.add_argument("--seed", type=int, default=0, help="generator seed")
    s.add_argument("--persistence", type=float, default=0.3, help="AR(1) coefficient of the factors")
    s.add_argument("--factor-vol", type=float, default=0.01, help="daily factor shock volatility")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("build-graph", help="build a prior graph from the training window")
    s.add_argument("--config", help="run config (JSON)")
    s.add_argument("--prior", required=True,
                   help="industry[:<csv>], dtw:<k>, correlation:<rho> or file:<path>")
    s.add_argument("--out", required=True, help="graph file to write")
    s.set_defaults(func=cmd_build_graph)

    s = sub.add_parser("train", help="train and write checkpoint, epoch log and resolved config")
    s.add_argument("--config", help="run config (JSON)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="write per-day predictions for a segment")
    s.add_argument("--checkpoint", required=True, help="params.ckpt from train")
    s.add_argument("--config", help="run config (default: config.json next to the checkpoint)")
    s.add_argument("--segment", choices=("train", "valid", "test"), default="test", help="data segment")
    s.add_argument("--out", required=True, help="predictions CSV to write")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("backtest", help="top-k daily rebalancing backtest of a predictions CSV")
    s.add_argument("--preds", required=True, help="predictions CSV from evaluate")
    s.add_argument("--panel", help="run config describing the price panel")
    s.add_argument("--k", type=int, help="stocks held per day (default backtest.k)")
    s.add_argument("--capital", type=float, help="initial capital (default backtest.capital)")
    s.add_argument("--return-mode", choices=("mean", "sum"), help="portfolio return over the k picks")
    s.add_argument("--emit-curve", help="also write date,wealth curve CSV here")
    s.add_argument("--benchmark", help="date,close CSV of a benchmark for the curve")
    s.add_argument("--out", required=True, help="directory for ledger.csv and summary.json")
    s.set_defaults(func=cmd_backtest)

    s = sub.add_parser("dump-graph", help="write the realized graph of every day in a segment")
    s.add_argument("--checkpoint", required=True, help="params.ckpt from train")
    s.add_argument("--config", help="run config (default: config.json next to the checkpoint)")
    s.add_argument("--segment", choices=("train", "valid", "test"), default="test", help="data segment")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_dump_graph)

    s = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    s.add_argument("--seed", type=int, default=7, help="seed of the random instances")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("ablate", help="initialization x component grid (two-step vs end-to-end)")
    s.add_argument("--config", help="run config (JSON)")
    s.add_argument("--dtw-k", type=int, default=5, help="k of the DTW prior")
    s.add_argument("--random-seed", type=int, default=0, help="seed of the random TPL memory")
    s.add_argument("--out", required=True, help="CSV to write")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, GraphError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
