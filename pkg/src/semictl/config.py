"""Experiment configuration: defaults, JSON ingestion and type checking.

A config file is a flat JSON object whose keys are a subset of the
subcommand's defaults.  Values are checked against the type of the default;
errors carry the offending field and, when known, the line of the file.
"""

from __future__ import annotations

import copy
import json
import math
from typing import Any, Optional

__all__ = ["ConfigError", "DEFAULTS", "SUBCOMMANDS", "resolve", "field_type"]


class ConfigError(ValueError):
    def __init__(self, field: Optional[str], message: str, line: Optional[int] = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


BOX_CENTRE = [[0.2, 0.2], [0.8, 0.8]]

DEFAULTS: dict[str, dict[str, Any]] = {
    "calculus-selftest": {
        "seed": 0,
        "ns": [1, 2, 3],
        "Ns": [2, 7, 15],
        "trials": 100,
        "tol": 1e-12,
    },
    "weights-rates": {
        "seed": 0,
        "n": 2,
        "N_probe": 7,
        "g1": [[0.4, 0.4], [0.6, 0.6]],
        "lam": 2.0,
        "tau": 1.0,
        "delta": 0.25,
        "T": 1.0,
        "h0": 1 / 1024,
        "levels": 3,
        "eps": 1.0,
        "order_min": 1.7,
        "order_max": 2.3,
    },
    "counterexample": {
        "seed": 0,
        "N": 7,
        "K": 8,
        "T": None,
        "dt_fraction": 0.5,
        "scheme": "explicit",
        "g0": [[0.0, 0.5], [0.5, 1.0]],
        "trials": 20,
        "tol": 1e-10,
        "conv_T": 1.0,
        "conv_h": 0.25,
        "conv_Ks": [16384, 32768, 65536, 131072, 262144],
        "order_tol": 0.2,
        "budget_mb": 2048,
    },
    "carleman-sweep": {
        "seed": 0,
        "hs": [1 / 8, 1 / 12, 1 / 16],
        "tau_factors": [1.0, 2.0],
        "lam": 1.0,
        "delta": 0.45,
        "T": 1.0,
        "K": 8,
        "samples": 50,
        "eps": 1.0,
        "g0": BOX_CENTRE,
        "g1": [[0.4, 0.4], [0.6, 0.6]],
        "max_variation": 2.0,
        "budget_mb": 2048,
    },
    "observability": {
        "seed": 0,
        "n": 2,
        "Ns": [7, 11, 15],
        "K": 10,
        "T": 0.2,
        "gamma": 0.3,
        "scheme": "implicit",
        "g0": BOX_CENTRE,
        "phi_rate": "h2",
        "phi_c": 1.0,
        "probes": 8,
        "ascent": 40,
        "block_size": 3,
        "polar_trials": 5,
        "polar_tol": 1e-10,
        "max_variation": 2.0,
        "budget_mb": 2048,
    },
    "hum": {
        "seed": 0,
        "n": 2,
        "N": 7,
        "K": 10,
        "T": None,
        "gamma": 1.0,
        "scheme": "explicit",
        "g0": BOX_CENTRE,
        "phi_rate": "h2",
        "phi_c": 1.0,
        "cg_tol": 1e-10,
        "cg_max_iter": 5000,
        "method": "cg",
        "y0": "bumps",
        "optimality_tol": 1e-8,
        "probe_tol": 1e-10,
        "grad_tol": 1e-6,
        "sweep_Ns": [],
        "max_variation": 2.0,
        "budget_mb": 2048,
    },
    "sobolev": {
        "seed": 0,
        "n": 2,
        "p": 2.0,
        "p_star": 4.0,
        "hs": [1 / 8, 1 / 16, 1 / 32],
        "probes": 4,
        "ascent": 200,
        "max_variation": 2.0,
        "bound_probes": 20,
        "lw_ns": [2, 3],
        "lw_N": 6,
        "lw_trials": 100,
    },
}

SUBCOMMANDS = tuple(DEFAULTS)

# fields that may be null in addition to their default type
NULLABLE = {("hum", "T"): float, ("counterexample", "T"): float}
CHOICES = {
    "scheme": ("explicit", "implicit"),
    "phi_rate": ("h2", "exp_sqrt"),
    "method": ("cg", "cr"),
    "y0": ("bumps", "sines"),
}


BOXES = {"g0", "g1"}
INT_LISTS = {"ns", "Ns", "sweep_Ns", "conv_Ks", "lw_ns"}


def field_type(sub: str, key: str):
    default = DEFAULTS[sub][key]
    if default is None:
        return NULLABLE[(sub, key)]
    return type(default)


def _line_of(text: Optional[str], key: str) -> Optional[int]:
    if text is None:
        return None
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_value(sub: str, key: str, value, line: Optional[int]):
    if value is None:
        if (sub, key) in NULLABLE:
            return None
        raise ConfigError(key, "must not be null", line)
    kind = field_type(sub, key)
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}", line)
        return value
    if kind is int:
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(key, f"expected an integer, got {value!r}", line)
        return value
    if kind is float:
        if not _is_number(value) or not math.isfinite(value):
            raise ConfigError(key, f"expected a finite number, got {value!r}", line)
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}", line)
        if key in CHOICES and value not in CHOICES[key]:
            raise ConfigError(key, f"must be one of {', '.join(CHOICES[key])}, got {value!r}", line)
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {value!r}", line)
        if key in BOXES:
            return _check_box(key, value, line)
        want_int = key in INT_LISTS
        out = []
        for v in value:
            if want_int and isinstance(v, float) and v.is_integer():
                v = int(v)
            ok = isinstance(v, int) and not isinstance(v, bool) if want_int else _is_number(v)
            if not ok:
                raise ConfigError(key, f"expected a list of {'integers' if want_int else 'numbers'}, got {value!r}", line)
            out.append(v if want_int else float(v))
        return out
    raise ConfigError(key, "unsupported field type", line)


def _check_box(key: str, value, line):
    if len(value) != 2 or not all(isinstance(c, list) for c in value):
        raise ConfigError(key, "a box is [[lo_1, ..., lo_n], [hi_1, ..., hi_n]]", line)
    lo, hi = value
    if len(lo) != len(hi) or not lo:
        raise ConfigError(key, "box corners must have the same positive dimension", line)
    if not all(_is_number(v) for v in lo + hi):
        raise ConfigError(key, "box corners must be numbers", line)
    if any(not 0 <= a < b <= 1 for a, b in zip(lo, hi)):
        raise ConfigError(key, f"box {value} must satisfy 0 <= lo < hi <= 1 on every axis", line)
    return [[float(v) for v in lo], [float(v) for v in hi]]


def resolve(sub: str, text: Optional[str] = None, overrides: Optional[dict] = None) -> dict:
    """Defaults, then the JSON ``text``, then ``overrides``; every value type-checked."""
    if sub not in DEFAULTS:
        raise ConfigError(None, f"unknown subcommand {sub!r}")
    cfg = copy.deepcopy(DEFAULTS[sub])
    if text is not None:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(None, f"malformed JSON: {exc.msg} (column {exc.colno})", exc.lineno) from None
        if not isinstance(data, dict):
            raise ConfigError(None, "config must be a JSON object", 1)
        for key, value in data.items():
            line = _line_of(text, key)
            if key not in cfg:
                raise ConfigError(key, f"unknown field for '{sub}'", line)
            cfg[key] = _check_value(sub, key, value, line)
    for key, value in (overrides or {}).items():
        if key not in cfg:
            raise ConfigError(key, f"unknown field for '{sub}'")
        cfg[key] = _check_value(sub, key, value, None)
    return cfg
