"""Experiment configuration files (TOML).

Example::

    name = "shared_best_arm"
    algorithm = "fair_cb"        # fair_cb | epoch_fair_cb | exp3_per_context
                                 # | noncontextual_ftrl | fair_ucb
    mode = "relaxed"             # epoch_fair_cb only: relaxed | conservative
    horizon = 2000
    v_grid = [0.0, 0.09, 0.18, 0.27, 0.36, 0.45]
    eta = "default"              # or a positive number
    replications = 100
    seed = 20240601

    [environment]
    kind = "bernoulli"           # or "switching_adversary"
    mu = [[0.6, 0.6], [0.8, 0.8]]   # K rows (arms) x M columns (contexts)
    q = [0.5, 0.5]

    [solver]                     # optional
    max_iters = 10000
    gap_tol = 1e-8
    step_rule = "newton"

    [output]                     # optional
    dir = "results/shared_best_arm"
    trace = false

A switching adversary takes ``dist_a``, ``dist_b`` (one mean per arm) and
an optional ``q`` (default a single context).  Unknown keys are errors.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ALGORITHMS = ("fair_cb", "epoch_fair_cb", "exp3_per_context", "noncontextual_ftrl", "fair_ucb")
ENV_KINDS = ("bernoulli", "switching_adversary")
STEP_RULES = ("newton", "fixed", "backtracking")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


@dataclass(frozen=True)
class EnvironmentConfig:
    kind: str
    mu: Optional[Tuple[Tuple[float, ...], ...]] = None
    q: Tuple[float, ...] = (1.0,)
    dist_a: Tuple[float, ...] = (0.1, 0.9)
    dist_b: Tuple[float, ...] = (0.9, 0.1)

    @property
    def n_arms(self) -> int:
        return len(self.mu) if self.kind == "bernoulli" else len(self.dist_a)

    @property
    def n_contexts(self) -> int:
        return len(self.q)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    algorithm: str
    environment: EnvironmentConfig
    horizon: int
    v_grid: Tuple[float, ...]
    eta: Any = "default"
    replications: int = 1
    seed: int = 0
    mode: str = "relaxed"
    max_iters: int = 10_000
    gap_tol: float = 1e-8
    step_rule: str = "newton"
    out_dir: Optional[str] = None
    trace: bool = False

    def with_overrides(self, **changes) -> "ExperimentConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return validate(replace(self, **changes))


_TOP_KEYS = {"name", "algorithm", "mode", "horizon", "v_grid", "eta", "replications", "seed",
             "environment", "solver", "output"}
_ENV_KEYS = {"bernoulli": {"kind", "mu", "q"}, "switching_adversary": {"kind", "dist_a", "dist_b", "q"}}
_SOLVER_KEYS = {"max_iters", "gap_tol", "step_rule"}
_OUTPUT_KEYS = {"dir", "trace"}


def _reject_unknown(table: Dict[str, Any], allowed, where: str) -> None:
    extra = sorted(set(table) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _require(table: Dict[str, Any], key: str, where: str):
    if key not in table:
        raise ConfigError(f"missing required field {where}{key}")
    return table[key]


def _floats(value, name: str) -> Tuple[float, ...]:
    try:
        out = tuple(float(x) for x in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a list of numbers") from None
    if not out:
        raise ConfigError(f"{name} must not be empty")
    return out


def _int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer")
    return value


def _parse_environment(table: Dict[str, Any]) -> EnvironmentConfig:
    if not isinstance(table, dict):
        raise ConfigError("environment must be a table")
    kind = _require(table, "kind", "environment.")
    if kind not in ENV_KINDS:
        raise ConfigError(f"environment.kind must be one of {ENV_KINDS}, got {kind!r}")
    _reject_unknown(table, _ENV_KEYS[kind], "[environment]")
    if kind == "bernoulli":
        rows = _require(table, "mu", "environment.")
        if not isinstance(rows, list) or not rows:
            raise ConfigError("environment.mu must be a nonempty K x M list of lists")
        mu = tuple(_floats(r, "environment.mu row") for r in rows)
        q = _floats(_require(table, "q", "environment."), "environment.q")
        return EnvironmentConfig(kind, mu=mu, q=q)
    env = EnvironmentConfig(kind)
    changes = {}
    for key in ("dist_a", "dist_b", "q"):
        if key in table:
            changes[key] = _floats(table[key], f"environment.{key}")
    return replace(env, **changes)


def parse_config(data: Dict[str, Any]) -> ExperimentConfig:
    """Build and validate a config from an already-parsed TOML document."""
    _reject_unknown(data, _TOP_KEYS, "top level")
    solver = data.get("solver", {})
    output = data.get("output", {})
    _reject_unknown(solver, _SOLVER_KEYS, "[solver]")
    _reject_unknown(output, _OUTPUT_KEYS, "[output]")
    eta = data.get("eta", "default")
    cfg = ExperimentConfig(
        name=str(_require(data, "name", "")),
        algorithm=_require(data, "algorithm", ""),
        environment=_parse_environment(_require(data, "environment", "")),
        horizon=_int(_require(data, "horizon", ""), "horizon"),
        v_grid=_floats(_require(data, "v_grid", ""), "v_grid"),
        eta=eta if isinstance(eta, str) else float(eta),
        replications=_int(data.get("replications", 1), "replications"),
        seed=_int(data.get("seed", 0), "seed"),
        mode=data.get("mode", "relaxed"),
        max_iters=_int(solver.get("max_iters", 10_000), "solver.max_iters"),
        gap_tol=float(solver.get("gap_tol", 1e-8)),
        step_rule=solver.get("step_rule", "newton"),
        out_dir=output.get("dir"),
        trace=bool(output.get("trace", False)),
    )
    return validate(cfg)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    env = cfg.environment
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {cfg.algorithm!r}")
    if cfg.mode not in ("relaxed", "conservative"):
        raise ConfigError(f"mode must be 'relaxed' or 'conservative', got {cfg.mode!r}")
    if cfg.horizon < 1:
        raise ConfigError("horizon must be at least 1")
    if cfg.replications < 1:
        raise ConfigError("replications must be at least 1")
    if cfg.seed < 0:
        raise ConfigError("seed must be nonnegative")
    if isinstance(cfg.eta, str):
        if cfg.eta != "default":
            raise ConfigError("eta must be a positive number or \"default\"")
    elif not (cfg.eta > 0 and math.isfinite(cfg.eta)):
        raise ConfigError("eta must be a positive number or \"default\"")
    if not cfg.gap_tol > 0:
        raise ConfigError("solver.gap_tol must be positive")
    if cfg.max_iters < 1:
        raise ConfigError("solver.max_iters must be at least 1")
    if cfg.step_rule not in STEP_RULES:
        raise ConfigError(f"solver.step_rule must be one of {STEP_RULES}")

    q = env.q
    if any(x < 0 for x in q) or abs(sum(q) - 1.0) > 1e-9:
        raise ConfigError("environment.q must be nonnegative and sum to 1")
    if env.kind == "bernoulli":
        widths = {len(r) for r in env.mu}
        if widths != {len(q)}:
            raise ConfigError("environment.mu must have one column per context (len(q))")
        means = [x for r in env.mu for x in r]
    else:
        if len(env.dist_a) != len(env.dist_b):
            raise ConfigError("environment.dist_a and environment.dist_b must have equal length")
        means = list(env.dist_a) + list(env.dist_b)
    if any(not 0.0 <= x <= 1.0 for x in means):
        raise ConfigError("environment means must lie in [0, 1]")
    K = env.n_arms
    if K < 2:
        raise ConfigError("environment must have at least two arms")
    for v in cfg.v_grid:
        if not 0.0 <= v < 1.0 / K:
            raise ConfigError(f"v_grid entry {v!r} outside [0, 1/K) = [0, {1.0 / K:.6g})")
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return parse_config(data)
