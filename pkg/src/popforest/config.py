"""Experiment configuration: TOML parsing, validation, and model construction.

A config file is a flat key-value document with sections; custom interaction
functions are piecewise expression strings over x (polynomials, powers,
log/exp/sqrt), compiled through an AST whitelist.
"""

from __future__ import annotations

import ast
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError
from .interaction import (
    InteractionModel,
    build_model,
    linear,
    logistic,
    power_log,
    zero_fn,
)

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml


# --------------------------------------------------------------------------
# Expression DSL
# --------------------------------------------------------------------------

_ALLOWED_CALLS = {"log", "exp", "sqrt"}
_NAMESPACE = {"log": np.log, "exp": np.exp, "sqrt": np.sqrt}

_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Call,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Load,
)


def compile_expr(src: str):
    """Compile an arithmetic expression in x into an array-capable callable."""
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad expression {src!r}: {exc}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigError(
                f"expression {src!r}: {type(node).__name__} is not allowed"
            )
        if isinstance(node, ast.Name) and node.id != "x" \
                and node.id not in _ALLOWED_CALLS:
            raise ConfigError(f"expression {src!r}: unknown name {node.id!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) \
                    or node.func.id not in _ALLOWED_CALLS:
                raise ConfigError(f"expression {src!r}: only "
                                  f"{sorted(_ALLOWED_CALLS)} may be called")
            if len(node.args) != 1 or node.keywords:
                raise ConfigError(f"expression {src!r}: calls take one argument")
    code = compile(tree, "<expr>", "eval")

    def fn(x):
        return eval(code, {"__builtins__": {}}, {**_NAMESPACE, "x": x})

    return fn


def piecewise_fn(pieces: list):
    """Build f from [(knot, expr), ...]: expr_i applies on [knot_i, knot_{i+1}).

    The first knot must be 0; knots must be strictly increasing.
    """
    if not pieces:
        raise ConfigError("custom model needs at least one piece")
    knots = []
    fns = []
    for entry in pieces:
        if len(entry) != 2:
            raise ConfigError(f"piece {entry!r} must be [knot, expression]")
        knots.append(float(entry[0]))
        fns.append(compile_expr(str(entry[1])))
    if knots[0] != 0.0 or any(b <= a for a, b in zip(knots, knots[1:])):
        raise ConfigError("piece knots must start at 0 and increase strictly")
    edges = np.asarray(knots[1:])

    def f(x):
        arr = np.asarray(x, dtype=float)
        a = np.atleast_1d(arr)
        idx = np.searchsorted(edges, a, side="right")
        out = np.empty_like(a)
        for i, fn in enumerate(fns):
            sel = idx == i
            if sel.any():
                out[sel] = np.asarray(fn(a[sel]), dtype=float)
        return out if arr.ndim else float(out[0])

    return f


# --------------------------------------------------------------------------
# Config schema
# --------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Validated experiment description; seed is mandatory by design."""

    seed: int
    lam: float = 1.0
    mu: float = 1.0
    replicas: int = 1000
    mode: Optional[str] = None
    model: dict = field(default_factory=dict)
    grid: Optional[dict] = None
    m_list: list = field(default_factory=lambda: [10, 100, 1000])
    x_list: list = field(default_factory=lambda: [1.0, 10.0, 100.0, 1000.0])
    sde: dict = field(default_factory=dict)
    discrete_t_max: float = 1e4
    dichotomy_kind: str = "both"
    dichotomy_targets: list = field(default_factory=lambda: ["height", "mass"])
    trend_plateau: float = 0.10
    trend_growing: float = 0.25
    scaling: dict = field(default_factory=dict)
    threads: int = 1

    def build_model(self) -> InteractionModel:
        return model_from_dict(self.model)


def model_from_dict(block: dict) -> InteractionModel:
    if not block or "family" not in block:
        raise ConfigError("[model] section with a 'family' key is required")
    fam = str(block["family"]).lower()
    theta = block.get("theta")
    a0 = block.get("a0")
    theta = None if theta is None else float(theta)
    a0 = None if a0 is None else float(a0)
    try:
        if fam == "logistic":
            return logistic(float(block["a"]), float(block["b"]),
                            theta=theta, a0=a0)
        if fam == "powerlog":
            return power_log(float(block["alpha"]), float(block["gamma"]),
                             theta=theta, a0=a0)
        if fam == "linear":
            return linear(float(block["a"]), theta=theta, a0=a0)
        if fam == "zero":
            return zero_fn()
        if fam == "custom":
            f = piecewise_fn(block.get("pieces", []))
            return build_model(f, theta=theta, a0=a0, family="custom",
                               params={"pieces": block.get("pieces", [])})
    except KeyError as exc:
        raise ConfigError(f"model family {fam!r} is missing parameter {exc}") from None
    raise ConfigError(f"unknown model family {fam!r}")


def parse_model_spec(spec: str) -> dict:
    """Inline model flag: 'family:key=value,key=value'."""
    head, _, rest = spec.partition(":")
    block: dict = {"family": head.strip()}
    if rest.strip():
        for item in rest.split(","):
            key, _, val = item.partition("=")
            if not _ or not key.strip():
                raise ConfigError(f"bad --model entry {item!r}; use key=value")
            block[key.strip()] = float(val)
    return block


def _section(data: dict, name: str) -> dict:
    sec = data.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = _toml.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)


def config_from_dict(data: dict) -> ExperimentConfig:
    if "seed" not in data:
        raise ConfigError("'seed' is required (no wall-clock default)")
    ladders = _section(data, "ladders")
    m_list = [int(v) for v in ladders.get("m_list", [10, 100, 1000])]
    x_list = [float(v) for v in ladders.get("x_list", [1.0, 10.0, 100.0, 1000.0])]
    for name, lst in (("m_list", m_list), ("x_list", x_list)):
        if not lst:
            raise ConfigError(f"{name} must be non-empty")
        if any(b <= a for a, b in zip(lst, lst[1:])):
            raise ConfigError(f"{name} must be strictly increasing")
    trend = _section(data, "trend")
    dich = _section(data, "dichotomy")
    targets = [str(t).lower() for t in dich.get("targets", ["height", "mass"])]
    if any(t not in ("height", "mass") for t in targets):
        raise ConfigError("dichotomy targets must be 'height' and/or 'mass'")
    kind = str(dich.get("kind", "both")).lower()
    if kind not in ("discrete", "diffusion", "both"):
        raise ConfigError("dichotomy kind must be discrete, diffusion or both")
    sde = _section(data, "sde")
    for key in sde:
        if key not in ("dt", "eps_abs", "t_max", "auto_dt"):
            raise ConfigError(f"unknown [sde] key {key!r}")
    discrete = _section(data, "discrete")
    cfg = ExperimentConfig(
        seed=int(data["seed"]),
        lam=float(data.get("lambda", 1.0)),
        mu=float(data.get("mu", 1.0)),
        replicas=int(data.get("replicas", 1000)),
        mode=data.get("mode"),
        model=_section(data, "model"),
        grid=data.get("grid"),
        m_list=m_list,
        x_list=x_list,
        sde=dict(sde),
        discrete_t_max=float(discrete.get("t_max", 1e4)),
        dichotomy_kind=kind,
        dichotomy_targets=targets,
        trend_plateau=float(trend.get("plateau_threshold", 0.10)),
        trend_growing=float(trend.get("growing_threshold", 0.25)),
        scaling=_section(data, "scaling"),
        threads=int(data.get("threads", 1)),
    )
    if cfg.replicas < 2:
        raise ConfigError("replicas must be >= 2")
    if cfg.mu <= 0:
        raise ConfigError("mu must be positive")
    if cfg.lam < 0:
        raise ConfigError("lambda must be non-negative")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    if not (0 < cfg.trend_plateau <= cfg.trend_growing):
        raise ConfigError("trend thresholds must satisfy 0 < plateau <= growing")
    return cfg
