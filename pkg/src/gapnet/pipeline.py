"""Config-driven runs shared by the command line and the acceptance suite."""
from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .backtest import BacktestLedger, run_backtest
from .data import (DataError, PricePanel, load_csv_dir, load_public_market, read_close_csv,
                   synth_panel, write_csv_dir)
from .graphs import (HyperGraph, PairGraph, correlation_graph, dtw_k_hypergraph,
                     industry_graph, read_graph, read_membership, write_graph)
from .tensor import load_params, save_params
from .training import EpochRecord, Evaluation, Plugin, TrainConfig, TrainResult, evaluate, train

log = logging.getLogger(__name__)

CHECKPOINT = "params.ckpt"
EPOCH_LOG = "epoch_log.csv"
RESOLVED_CONFIG = "config.json"


# -- data and graphs ------------------------------------------------------------

def load_panel(cfg: dict) -> PricePanel:
    d = cfg["data"]
    if d["source"] == "synthetic":
        s = d["synthetic"]
        return synth_panel(s["stocks"], s["days"], s["clusters"], s["noise"], s["seed"],
                           split_spec=d["split"], persistence=s["persistence"],
                           factor_vol=s["factor_vol"])
    if d["dir"] is None:
        raise DataError("data.dir is required for csv data")
    root = cfgmod.resolve_path(cfg, d["dir"])
    if d["source"] == "public":
        ranges = d["split"] if isinstance(d["split"], dict) else None
        return load_public_market(root, d["market"], ranges)
    tickers = cfgmod.resolve_path(cfg, d["tickers"]) if d["tickers"] else None
    return load_csv_dir(root, d["split"], tickers)


def _membership(cfg: dict, panel: PricePanel, path: str | None) -> dict[str, str]:
    if path:
        return read_membership(cfgmod.resolve_path(cfg, path))
    if panel.labels is not None:
        return {t: f"c{int(lab)}" for t, lab in zip(panel.tickers, panel.labels)}
    if cfg["data"]["dir"]:
        default = cfgmod.resolve_path(cfg, cfg["data"]["dir"]) / "clusters.csv"
        if default.exists():
            return read_membership(default)
    raise DataError("industry prior needs a ticker,sector membership file")


def training_window(cfg: dict, panel: PricePanel) -> slice:
    """The last ``graph.dtw_window`` usable training days (no valid/test leakage)."""
    stop = panel.split.train[1]
    start = max(panel.usable_start, stop - cfg["graph"]["dtw_window"])
    return slice(start, stop)


def build_prior(cfg: dict, panel: PricePanel, spec: str | None = None) -> PairGraph | HyperGraph | None:
    """Resolve a prior-graph spec: none, file:<path>, industry[:<csv>], dtw:<k>, correlation:<rho>."""
    spec = cfg["graph"]["prior"] if spec is None else spec
    kind, _, arg = spec.partition(":")
    if kind == "none":
        return None
    if kind == "file":
        return read_graph(cfgmod.resolve_path(cfg, arg))
    if kind == "industry":
        return industry_graph(panel.tickers, _membership(cfg, panel, arg or None))
    win = training_window(cfg, panel)
    if kind == "dtw":
        return dtw_k_hypergraph(panel.features[:, win, 0], int(arg))
    if kind == "correlation":
        return correlation_graph(panel.returns()[:, win], float(arg))
    raise cfgmod.ConfigError(f"graph.prior: unknown prior {spec!r}")


def make_plugin(cfg: dict, panel: PricePanel) -> Plugin:
    model = cfgmod.model_config(cfg)
    prior = build_prior(cfg, panel)
    init = cfg["tpl"]["init"]
    if init == "prior":
        if prior is None:  # nothing to align to: seeded random memory
            return Plugin(model, init_seed=cfg["seed"])
        return Plugin(model, prior=prior, init_graph=prior)
    kind, _, arg = init.partition(":")
    if kind == "graph":
        return Plugin(model, prior=prior, init_graph=read_graph(cfgmod.resolve_path(cfg, arg)))
    return Plugin(model, prior=prior, init_seed=int(arg))


def train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(alpha=t["alpha"], epochs=t["epochs"], max_lr=t["max_lr"],
                       pct_start=t["pct_start"], patience=t["patience"], seed=cfg["seed"],
                       bptt_window=cfg["tpl"]["bptt_window"], record_time=t["record_time"])


# -- files ------------------------------------------------------------------------

def write_epoch_log(path: str | Path, records: list[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "valid_loss", "lr", "seconds"])
        for r in records:
            secs = "" if r.seconds is None else f"{r.seconds:.3f}"
            w.writerow([r.epoch, repr(r.train_loss), repr(r.valid_loss), repr(r.lr), secs])


def decision_dates(panel: PricePanel, days: list[int]) -> list[dt.date]:
    """A prediction for target day t is made at the close of day t-1."""
    return [panel.calendar[t - 1] for t in days]


def write_preds(path: str | Path, panel: PricePanel, ev: Evaluation) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date"] + panel.tickers)
        for d, row in zip(decision_dates(panel, ev.days), ev.preds):
            w.writerow([d.isoformat()] + [repr(float(v)) for v in row])


def read_preds(path: str | Path) -> tuple[list[dt.date], list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["date"]:
        raise DataError(f"{path}: first column must be date")
    tickers = rows[0][1:]
    dates = [dt.date.fromisoformat(r[0]) for r in rows[1:]]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(len(dates), len(tickers))
    return dates, tickers, values


# -- runs ---------------------------------------------------------------------------

def run_train(cfg: dict, out: str | Path) -> TrainResult:
    """Train, then write the checkpoint, the epoch log and the resolved config."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.dump(cfg, out / RESOLVED_CONFIG)
    panel = load_panel(cfg)
    plugin = make_plugin(cfg, panel)
    result = train(panel, plugin, train_config(cfg))
    save_params(out / CHECKPOINT, result.params)
    write_epoch_log(out / EPOCH_LOG, result.log)
    return result


def load_run(checkpoint: str | Path, config_path: str | Path | None = None):
    """(cfg, panel, plugin, params) for a checkpoint; config defaults to its sibling."""
    checkpoint = Path(checkpoint)
    cfg = cfgmod.load(config_path or checkpoint.parent / RESOLVED_CONFIG)
    panel = load_panel(cfg)
    return cfg, panel, make_plugin(cfg, panel), load_params(checkpoint)


def backtest_preds(panel: PricePanel, dates: list[dt.date], tickers: list[str], preds: np.ndarray,
                   k: int, capital: float, return_mode: str = "mean") -> BacktestLedger:
    if tickers != panel.tickers:
        raise DataError("prediction columns do not match the panel tickers")
    index = {d: i for i, d in enumerate(panel.calendar)}
    missing = [d for d in dates if d not in index]
    if missing:
        raise DataError(f"prediction dates not in the panel calendar: {missing[:3]}")
    return run_backtest(preds, panel.closes, [index[d] for d in dates], k, capital, return_mode)


def write_ledger(out: str | Path, panel: PricePanel, ledger: BacktestLedger) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ledger.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "picks", "R_t", "wealth"])
        for d, picks, r, wealth in zip(ledger.days, ledger.picks, ledger.returns, ledger.wealth):
            w.writerow([panel.calendar[d].isoformat(), " ".join(panel.tickers[i] for i in picks),
                        repr(float(r)), repr(float(wealth))])
    (out / "summary.json").write_text(json.dumps(ledger.summary, indent=2, sort_keys=True) + "\n")


def write_curve(path: str | Path, panel: PricePanel, ledger: BacktestLedger,
                benchmark: str | Path | None = None) -> None:
    """date, wealth[, benchmark_wealth] with the benchmark rebased to the same capital."""
    bench = None
    if benchmark is not None:
        series = read_close_csv(benchmark)
        bench = []
        for d in ledger.days:
            a, b = panel.calendar[d], panel.calendar[d + 1]
            if a not in series or b not in series:
                raise DataError(f"benchmark lacks {a} or {b}")
            bench.append(series[b] / series[a])
        bench = ledger.initial_capital * np.cumprod(bench)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "wealth"] + (["benchmark_wealth"] if bench is not None else []))
        for i, d in enumerate(ledger.days):
            row = [panel.calendar[d + 1].isoformat(), repr(float(ledger.wealth[i]))]
            if bench is not None:
                row.append(repr(float(bench[i])))
            w.writerow(row)


def dump_graphs(out: str | Path, panel: PricePanel, ev: Evaluation) -> int:
    """One exchange-format file plus a ``.npy`` attribute sidecar per day."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for d, g in zip(decision_dates(panel, ev.days), ev.graphs):
        if g is None:
            continue
        stem = out / f"graph_{d.isoformat()}"
        write_graph(stem.with_suffix(".txt"), g.to_graph())
        if g.attributes is not None:
            np.save(stem.with_suffix(".attr.npy"), g.attributes.data)
        n += 1
    return n


# -- ablation ---------------------------------------------------------------------

@dataclass
class AblationRow:
    component: str
    initialization: str
    basic_irr: float | None
    basic_sr: float | None
    aligned_irr: float | None
    aligned_sr: float | None


def _cell(cfg: dict, panel: PricePanel, plugin: Plugin) -> tuple[float | None, float | None]:
    res = train(panel, plugin, train_config(cfg))
    ev = evaluate(panel, plugin, res.params, "test", cfg["train"]["alpha"])
    b = cfg["backtest"]
    led = run_backtest(ev.preds, panel.closes, [t - 1 for t in ev.days], b["k"], b["capital"],
                       b["return_mode"])
    return led.summary["irr"], led.summary["sharpe"]


def run_ablation(cfg: dict, priors: list[tuple[str, str]], random_seed: int = 0) -> list[AblationRow]:
    """Initialization x component grid; ``priors`` are (label, prior spec) pairs.

    Basic is the two-step paradigm on the prior graph; aligned is end-to-end
    with the TPL memory initialized from it. Random initialization and the
    no-TPL variant have no two-step counterpart.
    """
    panel = load_panel(cfg)
    model = cfgmod.model_config(cfg)
    rows = []
    for label, spec in priors:
        started = time.perf_counter()
        prior = build_prior(cfg, panel, spec)
        basic = _cell(cfg, panel, Plugin(replace(model, paradigm="twostep"), prior=prior))
        aligned = _cell(cfg, panel, Plugin(replace(model, paradigm="end2end", use_tpl=True),
                                           init_graph=prior))
        rows.append(AblationRow("SPL+TPL", label, *basic, *aligned))
        log.info("ablation %s done in %.1fs", label, time.perf_counter() - started)
    aligned = _cell(cfg, panel, Plugin(replace(model, paradigm="end2end", use_tpl=True),
                                       init_seed=random_seed))
    rows.append(AblationRow("SPL+TPL", "Random", None, None, *aligned))
    aligned = _cell(cfg, panel, Plugin(replace(model, paradigm="end2end", use_tpl=False)))
    rows.append(AblationRow("w.o. TPL", "-", None, None, *aligned))
    return rows


def write_ablation(path: str | Path, rows: list[AblationRow]) -> None:
    fmt = lambda v: "" if v is None else repr(float(v))  # noqa: E731
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component", "initialization", "basic_irr", "basic_sr", "aligned_irr", "aligned_sr"])
        for r in rows:
            w.writerow([r.component, r.initialization, fmt(r.basic_irr), fmt(r.basic_sr),
                        fmt(r.aligned_irr), fmt(r.aligned_sr)])


def synth_to_dir(cfg: dict, out: str | Path) -> PricePanel:
    panel = load_panel(cfg)
    write_csv_dir(panel, out)
    return panel

