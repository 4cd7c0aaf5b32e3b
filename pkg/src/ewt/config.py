"""Pipeline configuration: TOML files, defaults, validation and flag overrides."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .analysis import METHODS, TAUS, BenchConfig
from .demons import VARIANTS, DemonsParams
from .kernels import KINDS


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


DEFAULTS = {
    "input": None,
    "output": None,
    "normalized": False,
    "partition": {"method": "voronoi", "s0": 0.8, "sigma": 2.0},
    "kernel": {"kind": "disk", "tau": 0.2},
    "demons": {
        "variant": "additive",
        "sigma_x": 5.0,
        "sigma_i": 1.0,
        "sigma_f": 1.0,
        "sigma_d": 0.4,
        "eps": 1e-3,
        "max_iter": 500,
        "n_level": "auto",
    },
    "segmentation": {"k": 2, "window": 19, "seed": 0, "sigma_c": 3.0},
    "bench": {
        "variants": ["additive"],
        "partitions": ["voronoi"],
        "kernels": ["disk"],
        "taus": list(TAUS),
        "normalizations": [False, True],
        "size": 256,
        "seed": 0,
    },
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        name = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown configuration key '{name}'")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"'{name}' must be a table")
            out[key] = _merge(base[key], val, name + ".")
        else:
            out[key] = val
    return out


def _number(cfg, section, key, lo=None, hi=None, integer=False, open_lo=False, open_hi=False):
    v = cfg[section][key]
    name = f"{section}.{key}"
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"'{name}' must be a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"'{name}' must be an integer, got {v!r}")
    if lo is not None and (v < lo or (open_lo and v == lo)):
        raise ConfigError(f"'{name}' = {v} is out of range")
    if hi is not None and (v > hi or (open_hi and v == hi)):
        raise ConfigError(f"'{name}' = {v} is out of range")


def _choice(cfg, section, key, allowed):
    v = cfg[section][key]
    if v not in allowed:
        raise ConfigError(f"'{section}.{key}' must be one of {list(allowed)}, got {v!r}")


def validate(cfg: dict) -> dict:
    _choice(cfg, "partition", "method", METHODS)
    _number(cfg, "partition", "s0", lo=0, open_lo=True)
    _number(cfg, "partition", "sigma", lo=0)
    _choice(cfg, "kernel", "kind", KINDS)
    _number(cfg, "kernel", "tau", lo=0, hi=0.5, open_lo=True, open_hi=True)
    d = cfg["demons"]
    _choice(cfg, "demons", "variant", VARIANTS)
    for key in ("sigma_x", "sigma_i", "sigma_f", "eps"):
        _number(cfg, "demons", key, lo=0, open_lo=True)
    if d["sigma_d"] != "auto":
        _number(cfg, "demons", "sigma_d", lo=0, open_lo=True)
    _number(cfg, "demons", "max_iter", lo=5, integer=True)
    if d["n_level"] != "auto":
        _number(cfg, "demons", "n_level", lo=1, integer=True)
    _number(cfg, "segmentation", "k", lo=1, integer=True)
    _number(cfg, "segmentation", "window", lo=1, integer=True)
    if cfg["segmentation"]["window"] % 2 == 0:
        raise ConfigError("'segmentation.window' must be odd")
    _number(cfg, "segmentation", "seed", lo=0, integer=True)
    _number(cfg, "segmentation", "sigma_c", lo=0, open_lo=True)
    if not isinstance(cfg["normalized"], bool):
        raise ConfigError("'normalized' must be true or false")
    try:
        bench_config(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bench: {exc}") from None
    return cfg


def load(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the TOML file, then flag overrides (flags win)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        cfg = _merge(cfg, data)
    if overrides:
        cfg = _merge(cfg, overrides)
    return validate(cfg)


def demons_params(cfg: dict) -> tuple[DemonsParams, bool]:
    """Demons parameters and whether ``(sigma_d, n_level)`` should be searched."""
    d = cfg["demons"]
    # "auto" sigma_d runs the grid search, which also picks the level count
    select = d["sigma_d"] == "auto"
    params = DemonsParams(
        sigma_x=float(d["sigma_x"]),
        sigma_i=float(d["sigma_i"]),
        sigma_f=float(d["sigma_f"]),
        sigma_d=0.4 if d["sigma_d"] == "auto" else float(d["sigma_d"]),
        eps=float(d["eps"]),
        max_iter=int(d["max_iter"]),
        variant=d["variant"],
        n_level=None if d["n_level"] == "auto" else int(d["n_level"]),
    )
    return params, select


def bench_config(cfg: dict, workers: int = 1) -> BenchConfig:
    b = cfg["bench"]
    params, select = demons_params(cfg)
    return BenchConfig(
        variants=tuple(b["variants"]),
        partitions=tuple(b["partitions"]),
        kernels=tuple(b["kernels"]),
        taus=tuple(b["taus"]),
        normalizations=tuple(b["normalizations"]),
        size=int(b["size"]),
        seed=int(b["seed"]),
        s0=float(cfg["partition"]["s0"]),
        select_params=select,
        demons=params,
        workers=workers,
    )


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()
