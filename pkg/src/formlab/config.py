"""Suite configuration: YAML file + CLI overrides, validated before any computation."""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field

import yaml

SUITES = ("identities", "positivity", "operators", "solver", "duality")

DEFAULT_SAMPLES = 50

DEFAULTS = {
    "seed": 0,
    "n_max": 3,
    "samples": {"default": DEFAULT_SAMPLES},
    "tolerances": {},
    "grid": {"n": 2, "N": 12, "budget": 2 ** 22},
    "io": {"report": None, "out_dir": "."},
    "metric": None,
    "budget_seconds": None,
}


class ConfigError(ValueError):
    pass


@dataclass
class SuiteConfig:
    seed: int = 0
    n_max: int = 3
    samples: dict = field(default_factory=lambda: {"default": DEFAULT_SAMPLES})
    tolerances: dict = field(default_factory=dict)
    grid: dict = field(default_factory=lambda: dict(DEFAULTS["grid"]))
    io: dict = field(default_factory=lambda: dict(DEFAULTS["io"]))
    metric: list | None = None
    budget_seconds: float | None = None
    defaulted: list = field(default_factory=list)

    def count(self, prop):
        return int(self.samples.get(prop, self.samples.get("default", DEFAULT_SAMPLES)))

    def tol(self, suite, prop, default):
        t = self.tolerances.get(f"{suite}.{prop}", self.tolerances.get(suite, default))
        return float(t)

    def to_dict(self):
        return {"seed": self.seed, "n_max": self.n_max, "samples": dict(self.samples),
                "tolerances": dict(self.tolerances), "grid": dict(self.grid), "io": dict(self.io),
                "metric": self.metric, "budget_seconds": self.budget_seconds,
                "defaulted": sorted(self.defaulted)}


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _merge(base, over, path, defaulted):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and k not in ("samples", "tolerances"):
            if not isinstance(v, dict):
                raise ConfigError(f"{path + k} must be a mapping")
            out[k] = _merge(base[k], v, path + k + ".", defaulted)
        else:
            out[k] = v
    for k in base:
        if over is None or k not in over:
            defaulted.append(path + k)
    return out


def validate(raw):
    """Validate a plain mapping and return a SuiteConfig."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    defaulted = []
    d = _merge(DEFAULTS, raw, "", defaulted)
    if not _is_int(d["seed"]) or d["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    if not _is_int(d["n_max"]) or not 2 <= d["n_max"] <= 4:
        raise ConfigError("n_max must be an integer in [2, 4]")
    s = d["samples"]
    if _is_int(s):
        s = {"default": s}
    if not isinstance(s, dict):
        raise ConfigError("samples must be an integer or a mapping of per-property counts")
    s = dict(s)
    s.setdefault("default", DEFAULT_SAMPLES)
    for k, v in s.items():
        if not _is_int(v) or v < 1:
            raise ConfigError(f"samples.{k} must be a positive integer")
    d["samples"] = s
    if not isinstance(d["tolerances"], dict):
        raise ConfigError("tolerances must be a mapping")
    for k, v in d["tolerances"].items():
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
            raise ConfigError(f"tolerances.{k} must be a positive number")
    g = d["grid"]
    if not _is_int(g["n"]) or not 1 <= g["n"] <= 4:
        raise ConfigError("grid.n must be an integer in [1, 4]")
    if not _is_int(g["N"]) or g["N"] < 8 or g["N"] % 2:
        raise ConfigError("grid.N must be an even integer >= 8")
    if not _is_int(g["budget"]) or g["budget"] < 1:
        raise ConfigError("grid.budget must be a positive integer")
    if g["N"] ** (2 * g["n"]) > g["budget"]:
        raise ConfigError(f"grid N^(2n) = {g['N'] ** (2 * g['n'])} exceeds budget {g['budget']}")
    if d["metric"] is not None:
        m = d["metric"]
        if not isinstance(m, list) or not all(isinstance(r, list) for r in m):
            raise ConfigError("metric must be a list of rows")
    if d["budget_seconds"] is not None and not (isinstance(d["budget_seconds"], (int, float)) and d["budget_seconds"] > 0):
        raise ConfigError("budget_seconds must be positive")
    return SuiteConfig(seed=d["seed"], n_max=d["n_max"], samples=d["samples"], tolerances=d["tolerances"],
                       grid=d["grid"], io=d["io"], metric=d["metric"], budget_seconds=d["budget_seconds"],
                       defaulted=defaulted)


def load_config(path=None, overrides=None):
    """Read YAML (or nothing), apply flat overrides like {"seed": 7, "grid.N": 8}, validate."""
    raw = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path} not found")
        with open(path) as fh:
            try:
                raw = yaml.safe_load(fh) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"config file is not valid YAML: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = val
    return validate(raw)
