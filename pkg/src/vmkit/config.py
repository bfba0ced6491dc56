"""Run configuration: defaults, validation and canonical JSON form."""
from __future__ import annotations

import copy
import json
import math
import os

SCHEMA_VERSION = 1

SUBCOMMANDS = ("penrose", "dispersion", "mode", "simulate-vp", "simulate-vm", "hierarchy",
               "residual-scan", "classical-limit", "instability-scan", "rescale-verify",
               "quasineutral-scan")

# subcommands that evolve Vlasov-Maxwell and therefore need eps > 0
VM_COMMANDS = ("simulate-vm", "hierarchy", "residual-scan", "instability-scan", "rescale-verify",
               "quasineutral-scan")

DEFAULTS = {
    "profile": {"kind": "double_bump", "params": {"a": 2.0, "sigma": 0.5}, "dv": 2,
                "direction": None, "table": None},
    "grid": {"M": 20.0, "Nx": 32, "Nv": 64, "vmax": None, "dv": 2},
    "scheme": {"dt": 0.05, "horizon": 20.0},
    "experiment": {
        "p": 2, "N": 1, "s": 1, "s_prime": 1.0, "m": 3, "n": 2,
        "eps": [0.1, 0.031622776601683794, 0.01, 0.0031622776601683794],
        "k_list": [1, 2, 4, 8],
        "harmonic": 1,
        "delta_frac": 0.1,
        "level": 0.5,
        "amplitude": 1e-3,
        "transverse": 0.0,
        "probes": [0.5, 0.9],
        "M_grid": [],
        "init": "mode",
        "seed": 0,
        "copies": 2,
    },
    "output": {"dir": None, "prefix": ""},
}


class ConfigError(ValueError):
    """Invalid or missing configuration; carries the offending field name."""

    def __init__(self, field, msg):
        super().__init__(f"{field}: {msg}")
        self.field = field


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if k not in base:
            raise ConfigError(path + k, "unknown key")
        if isinstance(base[k], dict) and k != "params" and base[k] is not None:
            if not isinstance(v, dict):
                raise ConfigError(path + k, "expected an object")
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _num(x, field, positive=False, integer=False):
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise ConfigError(field, f"expected a finite number, got {x!r}")
    if integer and int(x) != x:
        raise ConfigError(field, f"expected an integer, got {x!r}")
    if positive and not x > 0:
        raise ConfigError(field, f"must be positive, got {x!r}")
    return int(x) if integer else float(x)


def _pow2(n):
    return n > 0 and (n & (n - 1)) == 0


def validate(cfg, command=None):
    pr, gr, sc, ex = cfg["profile"], cfg["grid"], cfg["scheme"], cfg["experiment"]
    if pr["kind"] not in ("maxwellian", "double_bump", "super_gaussian", "tabulated"):
        raise ConfigError("profile.kind", f"unknown kind {pr['kind']!r}")
    pr["dv"] = _num(pr["dv"], "profile.dv", integer=True)
    gr["dv"] = _num(gr["dv"], "grid.dv", integer=True)
    if gr["dv"] != pr["dv"]:
        raise ConfigError("grid.dv", "must equal profile.dv")
    if gr["dv"] not in (1, 2):
        raise ConfigError("grid.dv", "must be 1 or 2")
    gr["M"] = _num(gr["M"], "grid.M", positive=True)
    for key in ("Nx", "Nv"):
        gr[key] = _num(gr[key], "grid." + key, positive=True, integer=True)
        if not _pow2(gr[key]):
            raise ConfigError("grid." + key, "must be a power of two")
    if gr["vmax"] is not None:
        gr["vmax"] = _num(gr["vmax"], "grid.vmax", positive=True)
    sc["dt"] = _num(sc["dt"], "scheme.dt", positive=True)
    sc["horizon"] = _num(sc["horizon"], "scheme.horizon", positive=True)
    for key in ("p", "N", "s", "m", "n", "harmonic", "seed", "copies"):
        ex[key] = _num(ex[key], "experiment." + key, integer=True)
    if ex["p"] < 1:
        raise ConfigError("experiment.p", "must be at least 1")
    if not 1 <= ex["N"] <= 4:
        raise ConfigError("experiment.N", "must lie in 1..4")
    ex["s_prime"] = _num(ex["s_prime"], "experiment.s_prime", positive=True)
    for key in ("delta_frac", "level", "amplitude"):
        ex[key] = _num(ex[key], "experiment." + key, positive=True)
    ex["transverse"] = _num(ex["transverse"], "experiment.transverse")
    if not isinstance(ex["eps"], list) or not ex["eps"]:
        raise ConfigError("experiment.eps", "expected a non-empty list")
    ex["eps"] = [_num(e, "experiment.eps") for e in ex["eps"]]
    if any(e < 0 for e in ex["eps"]):
        raise ConfigError("experiment.eps", "values must be nonnegative")
    if command in VM_COMMANDS and any(e <= 0 for e in ex["eps"]):
        raise ConfigError("experiment.eps", f"{command} needs eps > 0")
    ex["k_list"] = [_num(k, "experiment.k_list", positive=True, integer=True) for k in ex["k_list"]]
    ex["probes"] = [_num(t, "experiment.probes", positive=True) for t in ex["probes"]]
    ex["M_grid"] = [_num(t, "experiment.M_grid", positive=True) for t in ex["M_grid"]]
    if ex["init"] not in ("mode", "random"):
        raise ConfigError("experiment.init", "must be 'mode' or 'random'")
    if command in ("hierarchy", "residual-scan") and ex["p"] < 2:
        raise ConfigError("experiment.p", "the hierarchy needs p >= 2")
    if command == "quasineutral-scan":
        if ex["p"] <= ex["s"] + ex["N"]:
            raise ConfigError("experiment.p", "quasineutral mode needs p > s + N")
        for k in ex["k_list"]:
            if not _pow2(k):
                raise ConfigError("experiment.k_list", "copies must be powers of two (commensurate grids)")
    if command == "rescale-verify":
        c = ex["copies"]
        if not _pow2(c):
            raise ConfigError("experiment.copies", "must be a power of two (commensurate grids)")
    return cfg


def parse_config(path=None, overrides=None, command=None):
    """Load ``path`` (JSON), apply ``overrides`` (nested dict) and defaults, validate."""
    raw = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError("--config", f"file not found: {path}")
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError("--config", f"invalid JSON ({e})") from None
        if not isinstance(raw, dict):
            raise ConfigError("--config", "top level must be an object")
        raw.pop("schema_version", None)
    cfg = _merge(DEFAULTS, raw)
    if overrides:
        cfg = _merge(cfg, overrides)
    return validate(cfg, command)


def serialize(cfg):
    """Canonical text: sorted keys, two-space indent, trailing newline."""
    body = dict(cfg)
    body["schema_version"] = SCHEMA_VERSION
    return json.dumps(body, sort_keys=True, indent=2) + "\n"


def loads(text, command=None):
    raw = json.loads(text)
    raw.pop("schema_version", None)
    return validate(_merge(DEFAULTS, raw), command)
