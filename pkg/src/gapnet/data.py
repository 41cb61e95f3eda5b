"""Price panels: CSV ingestion, moving-average features, splits, synthetic data."""
from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

MA_WINDOWS = (5, 10, 20, 30)
N_FEATURES = 1 + len(MA_WINDOWS)
WARMUP = max(MA_WINDOWS) - 1  # first day with a full 30-day history
MAX_FFILL = 5


class DataError(ValueError):
    pass


@dataclass
class Split:
    """Half-open day-index ranges ``[start, stop)`` into the calendar."""

    train: tuple[int, int]
    valid: tuple[int, int]
    test: tuple[int, int]

    def __post_init__(self):
        segs = (self.train, self.valid, self.test)
        for a, b in segs:
            if not a < b:
                raise DataError(f"empty or inverted segment [{a}, {b})")
        for (_, b), (c, _) in zip(segs, segs[1:]):
            if c < b:
                raise DataError("segments overlap or are out of order")

    def segment(self, name: str) -> tuple[int, int]:
        if name not in ("train", "valid", "test"):
            raise KeyError(f"unknown segment {name!r}")
        return getattr(self, name)

    def lengths(self) -> tuple[int, int, int]:
        return tuple(b - a for a, b in (self.train, self.valid, self.test))


@dataclass
class PricePanel:
    tickers: list[str]
    calendar: list[dt.date]
    closes: np.ndarray               # (N, T)
    features: np.ndarray             # (N, T, 5); NaN before ``usable_start``
    split: Split
    usable_start: int = WARMUP
    labels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        n, t = self.closes.shape
        if len(self.tickers) != n or len(self.calendar) != t:
            raise DataError("tickers/calendar do not match closes shape")
        if not np.all(self.closes > 0):
            raise DataError("closes must be strictly positive")
        if any(b <= a for a, b in zip(self.calendar, self.calendar[1:])):
            raise DataError("calendar must be strictly increasing")

    @property
    def n_stocks(self) -> int:
        return self.closes.shape[0]

    @property
    def n_days(self) -> int:
        return self.closes.shape[1]

    def returns(self) -> np.ndarray:
        """(N, T) one-day return ratios; column 0 is NaN."""
        r = np.full(self.closes.shape, np.nan)
        r[:, 1:] = self.closes[:, 1:] / self.closes[:, :-1] - 1.0
        return r

    def window(self, t: int, lookback: int) -> "LookbackWindow":
        """Inputs covering days ``t-L .. t-1`` and the realized return of day ``t``."""
        if t - lookback < self.usable_start or t >= self.n_days:
            raise DataError(f"day {t} has no complete {lookback}-day window")
        x = self.features[:, t - lookback:t, :]
        target = self.closes[:, t] / self.closes[:, t - 1] - 1.0
        return LookbackWindow(t, x, target)

    def target_days(self, segment: str, lookback: int) -> list[int]:
        """Days of ``segment`` usable as prediction targets."""
        a, b = self.split.segment(segment)
        return [t for t in range(max(a, self.usable_start + lookback), b)]


@dataclass
class LookbackWindow:
    t: int
    x: np.ndarray        # (N, L, M)
    target: np.ndarray   # (N,)


def return_ratio(p_prev: float, p_cur: float) -> float:
    if p_prev <= 0:
        raise DataError(f"previous price must be positive, got {p_prev}")
    return (p_cur - p_prev) / p_prev


def raw_features(closes: np.ndarray) -> np.ndarray:
    """[close, MA5, MA10, MA20, MA30] per day; NaN where history is short."""
    closes = np.asarray(closes, dtype=np.float64)
    n, t = closes.shape
    if t <= WARMUP:
        raise DataError(f"need at least {WARMUP + 1} days of closes, got {t}")
    out = np.full((n, t, N_FEATURES), np.nan)
    out[:, :, 0] = closes
    csum = np.concatenate([np.zeros((n, 1)), np.cumsum(closes, axis=1)], axis=1)
    for c, w in enumerate(MA_WINDOWS, start=1):
        out[:, w - 1:, c] = (csum[:, w:] - csum[:, :-w]) / w
    out[:, :WARMUP, 1:] = np.nan
    out[:, :WARMUP, 0] = np.nan
    return out


def build_features(closes: np.ndarray, train_stop: int | None = None) -> np.ndarray:
    """Moving-average features divided by each channel's training maximum.

    Training rows are the usable days before ``train_stop`` (all days if None).
    """
    feats = raw_features(closes)
    stop = feats.shape[1] if train_stop is None else train_stop
    if stop <= WARMUP:
        raise DataError("training range has no usable days")
    scale = np.nanmax(feats[:, WARMUP:stop, :], axis=(0, 1))
    if not np.all(scale > 0):
        raise DataError("feature channel with non-positive training maximum")
    return feats / scale


def ratio_split(n_days: int, ratios: Sequence[float]) -> Split:
    r = np.asarray(ratios, dtype=np.float64)
    if r.shape != (3,) or np.any(r <= 0):
        raise DataError(f"split ratios must be three positive numbers, got {ratios}")
    cuts = np.floor(np.cumsum(r) / r.sum() * n_days + 1e-9).astype(int)
    return Split((0, cuts[0]), (cuts[0], cuts[1]), (cuts[1], n_days))


def date_split(calendar: Sequence[dt.date], ranges: dict[str, tuple]) -> Split:
    """Split by inclusive ISO date ranges ``{"train": (start, end), ...}``."""
    cal = list(calendar)
    bounds = {}
    for name in ("train", "valid", "test"):
        if name not in ranges:
            raise DataError(f"missing date range for {name}")
        lo, hi = (_as_date(d) for d in ranges[name])
        if lo > hi or lo < cal[0] or hi > cal[-1]:
            raise DataError(f"{name} range {lo}..{hi} outside calendar {cal[0]}..{cal[-1]}")
        idx = [i for i, d in enumerate(cal) if lo <= d <= hi]
        if not idx:
            raise DataError(f"{name} range {lo}..{hi} contains no trading days")
        bounds[name] = (idx[0], idx[-1] + 1)
    return Split(bounds["train"], bounds["valid"], bounds["test"])


def chronological_split(calendar: Sequence[dt.date], spec) -> Split:
    """Dispatch on ``spec``: a 3-sequence of ratios or a dict of date ranges."""
    if isinstance(spec, dict):
        return date_split(calendar, spec)
    return ratio_split(len(calendar), spec)


def _as_date(d) -> dt.date:
    if isinstance(d, dt.date):
        return d
    text = str(d).strip()
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        pass
    try:
        return dt.datetime.strptime(text, "%m/%d/%Y").date()
    except ValueError:
        raise DataError(f"unrecognized date {text!r}") from None


def make_panel(tickers, calendar, closes, split_spec, labels=None) -> PricePanel:
    closes = np.asarray(closes, dtype=np.float64)
    split = chronological_split(calendar, split_spec)
    if split.train[1] <= WARMUP:
        raise DataError("training segment shorter than the moving-average warmup")
    feats = build_features(closes, split.train[1])
    return PricePanel(list(tickers), list(calendar), closes, feats, split, labels=labels)


# -- CSV ingestion -----------------------------------------------------------

def read_close_csv(path: str | Path) -> dict[dt.date, float]:
    """Read a headed CSV with (case-insensitive) ``date`` and ``close`` columns."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        try:
            di, ci = header.index("date"), header.index("close")
        except ValueError:
            raise DataError(f"{path}: header must contain date and close") from None
        series = {}
        for row in reader:
            if not row or not row[ci].strip():
                continue
            series[_as_date(row[di].strip())] = float(row[ci])
    return series


def align_series(series: dict[str, dict[dt.date, float]]) -> tuple[list[str], list[dt.date], np.ndarray]:
    """Union calendar; forward-fill gaps of up to five days, else drop the ticker."""
    calendar = sorted(set().union(*(s.keys() for s in series.values())))
    kept, rows = [], []
    for ticker, s in series.items():
        row = np.full(len(calendar), np.nan)
        for i, d in enumerate(calendar):
            if d in s:
                row[i] = s[d]
        ok, gap = True, 0
        for i in range(len(row)):
            if np.isnan(row[i]):
                gap += 1
                if i == 0 or gap > MAX_FFILL:
                    ok = False
                    break
                row[i] = row[i - 1]
            else:
                gap = 0
        if not ok or np.any(row <= 0):
            log.warning("dropping %s: missing or non-positive closes", ticker)
            continue
        kept.append(ticker)
        rows.append(row)
    if not kept:
        raise DataError("no ticker survived alignment")
    return kept, calendar, np.vstack(rows)


def load_csv_dir(directory: str | Path, split_spec, tickers_file: str | Path | None = None,
                 pattern: str = "{ticker}.csv") -> PricePanel:
    """Load one ``date,close`` CSV per ticker from ``directory``."""
    directory = Path(directory)
    if tickers_file is None:
        tickers_file = directory / "tickers.txt"
    tickers = [line.strip() for line in Path(tickers_file).read_text().splitlines() if line.strip()]
    series = {}
    for t in tickers:
        path = directory / pattern.format(ticker=t)
        if not path.exists():
            raise DataError(f"missing price file {path}")
        series[t] = read_close_csv(path)
    kept, calendar, closes = align_series(series)
    return make_panel(kept, calendar, closes, split_spec)


def write_csv_dir(panel: PricePanel, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "tickers.txt").write_text("".join(f"{t}\n" for t in panel.tickers))
    for i, t in enumerate(panel.tickers):
        with open(directory / f"{t}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "close"])
            for d, c in zip(panel.calendar, panel.closes[i]):
                w.writerow([d.isoformat(), repr(float(c))])
    if panel.labels is not None:
        with open(directory / "clusters.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["ticker", "sector"])
            for t, lab in zip(panel.tickers, panel.labels):
                w.writerow([t, f"c{int(lab)}"])


# -- public benchmark layout ----------------------------------------------------

BENCHMARK_RANGES = {
    "train": ("2013-01-02", "2015-12-31"),
    "valid": ("2016-01-04", "2016-12-30"),
    "test": ("2017-01-03", "2017-12-08"),
}
BENCHMARK_HISTORY_START = dt.date(2012, 10, 1)  # moving-average warm-up before train


def load_public_market(root: str | Path, market: str = "NASDAQ",
                       ranges: dict | None = None) -> PricePanel:
    """Adapter for the public NASDAQ/NYSE ranking dataset.

    Expects ``<root>/<market>_tickers*.csv`` (one ticker per line) and
    ``<root>/google_finance/<market>_<ticker>_30Y.csv`` with Date and Close
    columns. Days outside the warm-up start and the test end are ignored.
    """
    root = Path(root)
    lists = sorted(root.glob(f"{market}_tickers*.csv"))
    if not lists:
        raise DataError(f"no {market}_tickers*.csv under {root}")
    ranges = ranges or BENCHMARK_RANGES
    end = _as_date(ranges["test"][1])
    tickers = [ln.strip().split(",")[0] for ln in lists[0].read_text().splitlines() if ln.strip()]
    series = {}
    for t in tickers:
        path = root / "google_finance" / f"{market}_{t}_30Y.csv"
        if not path.exists():
            raise DataError(f"missing price file {path}")
        series[t] = {d: c for d, c in read_close_csv(path).items()
                     if BENCHMARK_HISTORY_START <= d <= end}
    kept, calendar, closes = align_series(series)
    return make_panel(kept, calendar, closes, ranges)


# -- synthetic panels -----------------------------------------------------------

def business_days(start: dt.date, n: int) -> list[dt.date]:
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def synth_returns(n_stocks: int, n_days: int, n_clusters: int, noise: float,
                  seed: int, persistence: float = 0.3, factor_vol: float = 0.01
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cluster-factor returns; returns (returns N×T, factor component N×T, labels).

    Each cluster's factor follows an AR(1) with coefficient ``persistence``
    so that the cross-section is partly predictable from its own history.
    """
    if n_clusters < 1 or n_stocks % n_clusters:
        raise DataError("n_stocks must be divisible by n_clusters")
    rng = np.random.default_rng(seed)
    shocks = rng.normal(0.0, factor_vol, size=(n_clusters, n_days))
    factors = np.empty_like(shocks)
    factors[:, 0] = shocks[:, 0]
    for t in range(1, n_days):
        factors[:, t] = persistence * factors[:, t - 1] + shocks[:, t]
    labels = np.repeat(np.arange(n_clusters), n_stocks // n_clusters)
    common = factors[labels]
    idio = rng.normal(0.0, factor_vol, size=(n_stocks, n_days)) * noise
    return common + idio, common, labels


def synth_panel(n_stocks: int, n_days: int, n_clusters: int, noise: float, seed: int,
                split_spec=(0.6, 0.2, 0.2), persistence: float = 0.3,
                factor_vol: float = 0.01) -> PricePanel:
    """Planted-cluster panel; prices compound from 100.0."""
    rets, _, labels = synth_returns(n_stocks, n_days, n_clusters, noise, seed, persistence,
                                    factor_vol)
    rets = np.clip(rets, -0.5, None)
    closes = 100.0 * np.cumprod(1.0 + rets, axis=1)
    width = len(str(n_stocks - 1))
    tickers = [f"S{i:0{width}d}" for i in range(n_stocks)]
    calendar = business_days(dt.date(2013, 1, 2), n_days)
    return make_panel(tickers, calendar, closes, split_spec, labels=labels)
