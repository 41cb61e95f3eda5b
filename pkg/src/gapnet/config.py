"""JSON run configuration: defaults, strict key checking, typed views."""
from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any

from .model import ModelConfig
from .spl import SplConfig

DEFAULTS: dict[str, Any] = {
    "seed": 2023,
    "data": {
        "source": "synthetic",       # synthetic | csv | public
        "dir": None,
        "market": "NASDAQ",          # public source only
        "tickers": None,
        "split": [0.6, 0.2, 0.2],    # ratios, or {"train": [start, end], ...}
        "lookback": 16,
        "synthetic": {"stocks": 30, "days": 500, "clusters": 5, "noise": 1.0,
                      "seed": 0, "persistence": 0.3, "factor_vol": 0.01},
    },
    "graph": {
        "prior": "none",             # none | file:<p> | industry:<csv> | dtw:<k> | correlation:<rho>
        "dtw_window": 60,
    },
    "spl": {"kernel_sizes": [3, 5, 7], "channels_z": 1, "heads": 1,
            "ffn_dim": 128, "dropout": 0.1},
    "tpl": {"bptt_window": 1, "init": "prior"},  # prior | graph:<path> | random:<seed>
    "realize": {"tau": 0.5, "hyper_tau": 0.5},
    "backbone": "gcn",
    "model": {"hidden": 32, "use_tpl": True},
    "train": {"alpha": 1.0, "epochs": 50, "max_lr": 1e-4, "pct_start": 0.3,
              "patience": 10, "paradigm": "end2end", "record_time": False},
    "backtest": {"k": 5, "capital": 10000.0, "return_mode": "mean"},
}

# keys whose value is a free-form mapping rather than a nested section
_LEAF_DICTS = {("data", "split")}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path: tuple[str, ...] = ()) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = path + (key,)
        if key not in base:
            raise ConfigError(f"unknown config key: {'.'.join(here)}")
        if isinstance(base[key], dict) and here not in _LEAF_DICTS:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {'.'.join(here)} must be an object")
            out[key] = _merge(base[key], value, here)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve(overrides: dict | None = None) -> dict:
    cfg = _merge(DEFAULTS, overrides or {})
    validate(cfg)
    return cfg


def load(path: str | Path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    cfg = resolve(raw)
    cfg["_base_dir"] = str(path.parent.resolve())
    return cfg


def absolutize(cfg: dict) -> dict:
    """Copy of ``cfg`` with every file reference made absolute (for provenance)."""
    out = copy.deepcopy(cfg)
    if "_base_dir" not in cfg:
        return out
    for key in ("dir", "tickers"):
        if out["data"][key]:
            out["data"][key] = str(resolve_path(cfg, out["data"][key]))
    kind, _, arg = out["graph"]["prior"].partition(":")
    if kind in ("file", "industry") and arg:
        out["graph"]["prior"] = f"{kind}:{resolve_path(cfg, arg)}"
    kind, _, arg = out["tpl"]["init"].partition(":")
    if kind == "graph":
        out["tpl"]["init"] = f"graph:{resolve_path(cfg, arg)}"
    return out


def dump(cfg: dict, path: str | Path) -> None:
    clean = {k: v for k, v in absolutize(cfg).items() if not k.startswith("_")}
    Path(path).write_text(json.dumps(clean, indent=2, sort_keys=True) + "\n")


def validate(cfg: dict) -> None:
    def need(cond: bool, key: str, msg: str):
        if not cond:
            raise ConfigError(f"{key}: {msg}")

    need(cfg["data"]["source"] in ("synthetic", "csv", "public"), "data.source",
         "must be synthetic, csv or public")
    need(cfg["data"]["lookback"] >= 1, "data.lookback", "must be positive")
    need(cfg["train"]["alpha"] > 0, "train.alpha", "must be positive")
    need(cfg["train"]["epochs"] >= 1, "train.epochs", "must be >= 1")
    need(cfg["train"]["max_lr"] > 0, "train.max_lr", "must be positive")
    need(cfg["train"]["paradigm"] in ("end2end", "twostep"), "train.paradigm",
         "must be end2end or twostep")
    need(cfg["backbone"] in ("gcn", "hgcn", "mlp"), "backbone", "must be gcn, hgcn or mlp")
    need(cfg["realize"]["tau"] >= 0 and cfg["realize"]["hyper_tau"] >= 0, "realize.tau",
         "must be non-negative")
    need(cfg["backtest"]["return_mode"] in ("mean", "sum"), "backtest.return_mode",
         "must be mean or sum")
    bw = cfg["tpl"]["bptt_window"]
    need(bw is None or (isinstance(bw, int) and bw >= 1), "tpl.bptt_window",
         "must be a positive integer or null")
    init = cfg["tpl"]["init"]
    need(init == "prior" or init.startswith(("graph:", "random:")), "tpl.init",
         "must be prior, graph:<path> or random:<seed>")
    try:
        model_config(cfg)
    except ValueError as exc:
        raise ConfigError(f"spl/model: {exc}") from exc


def model_config(cfg: dict) -> ModelConfig:
    s = cfg["spl"]
    spl = SplConfig(kernel_sizes=tuple(s["kernel_sizes"]), channels_z=s["channels_z"],
                    heads=s["heads"], lookback=cfg["data"]["lookback"], n_features=5,
                    ffn_dim=s["ffn_dim"], dropout=s["dropout"])
    return ModelConfig(spl=spl, backbone=cfg["backbone"], hidden=cfg["model"]["hidden"],
                       tau=cfg["realize"]["tau"], hyper_tau=cfg["realize"]["hyper_tau"],
                       use_tpl=cfg["model"]["use_tpl"], paradigm=cfg["train"]["paradigm"])


def resolve_path(cfg: dict, p: str) -> Path:
    path = Path(p)
    if not path.is_absolute() and "_base_dir" in cfg:
        path = Path(cfg["_base_dir"]) / path
    return path
