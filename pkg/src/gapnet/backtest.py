"""Top-k daily rebalancing backtest and portfolio/prediction metrics."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

log = logging.getLogger(__name__)

TRADING_DAYS = 252
INITIAL_CAPITAL = 10000.0


class MetricError(ValueError):
    pass


def select_topk(preds, k: int) -> np.ndarray:
    """Indices of the k largest predictions, ties to the lower index."""
    p = np.asarray(preds, dtype=np.float64)
    if not 0 < k <= p.size:
        raise MetricError(f"k={k} must be in 1..{p.size}")
    order = np.lexsort((np.arange(p.size), -p))
    return np.sort(order[:k])


def daily_return(closes_t, closes_t1, mode: str = "mean") -> float:
    c0 = np.asarray(closes_t, dtype=np.float64)
    c1 = np.asarray(closes_t1, dtype=np.float64)
    if np.any(c0 <= 0) or np.any(c1 <= 0):
        raise MetricError("prices must be positive")
    r = (c1 - c0) / c0
    if mode == "mean":
        return float(r.mean())
    if mode == "sum":
        return float(r.sum())
    raise MetricError(f"unknown return mode {mode!r}")


def annualised_irr(returns: Sequence[float]) -> float:
    r = np.asarray(returns, dtype=np.float64)
    if r.size < 1:
        raise MetricError("need at least one daily return")
    if np.any(r <= -1):
        raise MetricError("a daily return of -100% or worse wipes out the portfolio")
    return float(np.prod(1.0 + r) ** (TRADING_DAYS / r.size) - 1.0)


def sharpe(returns: Sequence[float]) -> float:
    """Annualized mean over sample std (risk-free rate 0)."""
    r = np.asarray(returns, dtype=np.float64)
    if r.size < 2:
        raise MetricError("Sharpe ratio needs at least two returns")
    sd = r.std(ddof=1)
    if not sd > 0:
        raise MetricError("Sharpe ratio undefined for zero-variance returns")
    return float(r.mean() / sd * math.sqrt(TRADING_DAYS))


def rank_ic(pred, realized) -> float:
    """Spearman correlation with average ranks for ties."""
    a = rankdata(pred)
    b = rankdata(realized)
    a -= a.mean()
    b -= b.mean()
    den = math.sqrt(float((a * a).sum() * (b * b).sum()))
    if den == 0:
        return math.nan
    return float((a * b).sum() / den)


def pearson_ic(pred, realized) -> float:
    a = np.asarray(pred, dtype=np.float64) - np.mean(pred)
    b = np.asarray(realized, dtype=np.float64) - np.mean(realized)
    den = math.sqrt(float((a * a).sum() * (b * b).sum()))
    return math.nan if den == 0 else float((a * b).sum() / den)


@dataclass
class ICSummary:
    daily: np.ndarray
    ic: float
    icir: float | None   # None when the daily IC series has zero variance


def ic_series(preds: np.ndarray, realized: np.ndarray, method: str = "spearman") -> ICSummary:
    preds = np.asarray(preds, dtype=np.float64)
    realized = np.asarray(realized, dtype=np.float64)
    if preds.shape != realized.shape:
        raise MetricError(f"shape mismatch {preds.shape} vs {realized.shape}")
    fn = rank_ic if method == "spearman" else pearson_ic
    daily = []
    for t, (p, r) in enumerate(zip(preds, realized)):
        ok = np.isfinite(p) & np.isfinite(r)
        if ok.sum() < 3:
            log.warning("day %d skipped: fewer than 3 valid stocks", t)
            continue
        daily.append(fn(p[ok], r[ok]))
    d = np.asarray(daily, dtype=np.float64)
    undefined = np.isnan(d)
    if undefined.any():
        log.warning("%d day(s) with constant predictions or returns have no IC", int(undefined.sum()))
        d = d[~undefined]
    if d.size == 0:
        raise MetricError("no day had a defined IC over at least 3 valid stocks")
    ic = float(d.mean())
    sd = float(d.std(ddof=1)) if d.size > 1 else 0.0
    return ICSummary(d, ic, ic / sd if sd > 0 else None)


@dataclass
class BacktestLedger:
    days: list[int]
    picks: list[np.ndarray]
    returns: np.ndarray
    wealth: np.ndarray           # wealth after each day
    initial_capital: float
    summary: dict = field(default_factory=dict)


def run_backtest(preds: np.ndarray, closes: np.ndarray, days: Sequence[int], k: int,
                 initial_capital: float = INITIAL_CAPITAL, return_mode: str = "mean",
                 ic_method: str = "spearman") -> BacktestLedger:
    """Hold the top-k of each row of ``preds`` from ``days[i]`` to ``days[i] + 1``.

    ``closes`` is (N, T); rows whose decision day has no next close are dropped.
    Transaction costs are ignored.
    """
    preds = np.asarray(preds, dtype=np.float64)
    closes = np.asarray(closes, dtype=np.float64)
    days = list(days)
    if preds.shape[0] != len(days) or preds.shape[1] != closes.shape[0]:
        raise MetricError(f"preds {preds.shape} misaligned with {len(days)} days / {closes.shape[0]} stocks")
    keep = [i for i, d in enumerate(days) if 0 <= d and d + 1 < closes.shape[1]]
    if len(keep) < len(days):
        log.info("dropping %d day(s) without a next close", len(days) - len(keep))
    picks, rets, wealth = [], [], []
    w = float(initial_capital)
    for i in keep:
        d = days[i]
        sel = select_topk(preds[i], k)
        r = daily_return(closes[sel, d], closes[sel, d + 1], return_mode)
        w *= 1.0 + r
        picks.append(sel)
        rets.append(r)
        wealth.append(w)
    rets_arr = np.asarray(rets)
    ledger = BacktestLedger([days[i] for i in keep], picks, rets_arr, np.asarray(wealth),
                            float(initial_capital))
    realized = np.stack([closes[:, days[i] + 1] / closes[:, days[i]] - 1.0 for i in keep]) \
        if keep else np.zeros((0, closes.shape[0]))
    ledger.summary = summarize(rets_arr, preds[keep], realized, k, ic_method)
    return ledger


def _guarded(fn, *args):
    try:
        return fn(*args)
    except MetricError as exc:
        log.warning("%s", exc)
        return None


def summarize(returns: np.ndarray, preds: np.ndarray, realized: np.ndarray, k: int,
              ic_method: str = "spearman") -> dict:
    ics = _guarded(ic_series, preds, realized, ic_method)
    return {
        "irr": _guarded(annualised_irr, returns),
        "sharpe": _guarded(sharpe, returns),
        "ic": None if ics is None else ics.ic,
        "icir": None if ics is None else ics.icir,
        "k": k,
        "days": int(len(returns)),
    }
