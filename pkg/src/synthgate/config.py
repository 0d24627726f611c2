"""Run configuration: an INI file of ``key = value`` pairs grouped in sections.

Precedence, lowest to highest: built-in defaults, the ``--config`` file,
command-line flags. Recognized sections and keys::

    [run]          seed (required), method, workers
    [paths]        input, schema, out
    [simulate]     n, zero_rate, sigma
    [synthesis]    m, offset, value_floor, gap, prior_mean, prior_sd,
                   precision_shape, precision_rate, standardize,
                   categorical, clamp_to_observed
    [mcmc.phase1]  n_iterations, burn_in, adaptation_window,
    [mcmc.phase2]  target_acceptance, n_chains
    [utility]      quantiles, bootstrap_b, level, regression, regression_log
    [risk]         known_vars, radius, neighborhood_size, bin_width, attribute

``paths.input`` and ``paths.schema`` default to the simulator's outputs in
``paths.out``. Lists are comma separated.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .risk import MatchConfig, RiskConfig
from .sampler import McmcConfig
from .simulate import SimSpec
from .synth import METHODS, SynthesisPlan
from .tabular import EncodingOptions
from .utility import UtilityConfig

SIM_CSV = "simulated.csv"
SIM_SCHEMA = "simulated_schema.txt"
SIM_TRUTH = "simulated_truth.json"

_MCMC_KEYS = {
    "n_iterations": int, "burn_in": int, "adaptation_window": int,
    "target_acceptance": float, "n_chains": int,
}

_bool = lambda v: str(v).strip().lower() in ("1", "true", "yes", "on")  # noqa: E731
_floats = lambda v: tuple(float(x) for x in str(v).split(",") if x.strip())  # noqa: E731
_names = lambda v: tuple(x.strip() for x in str(v).split(",") if x.strip())  # noqa: E731
_opt_int = lambda v: None if str(v).strip().lower() in ("", "none", "auto") else int(v)  # noqa: E731

KEYS: dict[str, dict[str, Any]] = {
    "run": {"seed": int, "method": str, "workers": int},
    "paths": {"input": str, "schema": str, "out": str},
    "simulate": {"n": int, "zero_rate": float, "sigma": float},
    "synthesis": {
        "m": int, "offset": float, "value_floor": float, "gap": _opt_int,
        "prior_mean": float, "prior_sd": float, "precision_shape": float, "precision_rate": float,
        "standardize": _bool, "categorical": str, "clamp_to_observed": _bool,
    },
    "mcmc.phase1": _MCMC_KEYS,
    "mcmc.phase2": _MCMC_KEYS,
    "utility": {"quantiles": _floats, "bootstrap_b": int, "level": float, "regression": _bool, "regression_log": _bool},
    "risk": {"known_vars": _names, "radius": float, "neighborhood_size": int, "bin_width": float, "attribute": _bool},
}

DEFAULTS: dict[str, dict[str, str]] = {
    "run": {"method": "both", "workers": "1"},
    "paths": {"input": "", "schema": "", "out": "synthgate-out"},
    "simulate": {"n": "5000", "zero_rate": "0.04", "sigma": "0.8"},
    "synthesis": {
        "m": "20", "offset": "1", "value_floor": "0.01", "gap": "auto", "prior_mean": "0", "prior_sd": "1",
        "precision_shape": "1", "precision_rate": "1", "standardize": "true", "categorical": "dummy",
        "clamp_to_observed": "false",
    },
    "mcmc.phase1": {"n_iterations": "20000", "burn_in": "5000", "adaptation_window": "100",
                    "target_acceptance": "0.234", "n_chains": "1"},
    "mcmc.phase2": {"n_iterations": "20000", "burn_in": "5000", "adaptation_window": "100",
                    "target_acceptance": "0.234", "n_chains": "1"},
    "utility": {"quantiles": "0.1,0.8", "bootstrap_b": "1000", "level": "0.95", "regression": "true",
                "regression_log": "false"},
    "risk": {"known_vars": "Sex,Race,Education", "radius": "0.3", "neighborhood_size": "10", "bin_width": "1",
             "attribute": "true"},
}

# keys that change how work is scheduled but never what is computed
EXECUTION_KEYS = {("run", "workers")}


@dataclass
class ConfigIssue:
    field: str
    message: str

    def to_dict(self) -> dict:
        return {"field": self.field, "message": self.message}

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


class ConfigError(ValueError):
    def __init__(self, issues: list[ConfigIssue]):
        self.issues = issues
        super().__init__("; ".join(str(i) for i in issues))


@dataclass
class RunConfig:
    raw: dict[str, dict[str, str]]
    seed: int
    method: str
    workers: int
    out: Path
    input: Path
    schema: Path
    sim: SimSpec
    plan: SynthesisPlan
    utility: UtilityConfig
    risk: RiskConfig
    issues: list[ConfigIssue] = field(default_factory=list)

    @property
    def methods(self) -> list[str]:
        return list(METHODS) if self.method == "both" else [self.method]

    def effective(self) -> dict[str, dict[str, str]]:
        """Resolved config with execution-only keys removed."""
        out = {}
        for section, keys in self.raw.items():
            kept = {k: v for k, v in keys.items() if (section, k) not in EXECUTION_KEYS}
            if kept:
                out[section] = kept
        return out

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for section, keys in self.effective().items():
            cp[section] = keys
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def read_config_file(path: str | os.PathLike) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    with open(path, encoding="utf-8") as fh:
        cp.read_file(fh)
    return {s: dict(cp[s]) for s in cp.sections()}


def merge(*layers: dict[str, dict[str, str]]) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for layer in layers:
        for section, keys in layer.items():
            out.setdefault(section, {}).update({k: str(v) for k, v in keys.items() if v is not None})
    return out


def _typed(raw: dict[str, dict[str, str]], issues: list[ConfigIssue]) -> dict[str, dict[str, Any]]:
    typed: dict[str, dict[str, Any]] = {}
    for section, keys in raw.items():
        if section not in KEYS:
            issues.append(ConfigIssue(section, "unknown section"))
            continue
        typed[section] = {}
        for key, value in keys.items():
            conv = KEYS[section].get(key)
            if conv is None:
                issues.append(ConfigIssue(f"{section}.{key}", "unknown key"))
                continue
            try:
                typed[section][key] = conv(value)
            except (TypeError, ValueError):
                issues.append(ConfigIssue(f"{section}.{key}", f"cannot parse {value!r}"))
    return typed


def build(
    file_layer: dict[str, dict[str, str]] | None = None,
    cli_layer: dict[str, dict[str, str]] | None = None,
    require_inputs: bool = False,
) -> RunConfig:
    """Resolve layers into a :class:`RunConfig`; raises :class:`ConfigError` listing every problem."""
    raw = merge(DEFAULTS, file_layer or {}, cli_layer or {})
    issues: list[ConfigIssue] = []
    t = _typed(raw, issues)
    run = t.get("run", {})
    if "seed" not in raw.get("run", {}):
        issues.append(ConfigIssue("run.seed", "required (no wall-clock default)"))
    method = run.get("method", "both")
    if method not in (*METHODS, "both"):
        issues.append(ConfigIssue("run.method", f"must be one of {(*METHODS, 'both')}"))
    paths = t.get("paths", {})
    out = Path(paths.get("out") or "synthgate-out")
    input_path = Path(paths["input"]) if paths.get("input") else out / SIM_CSV
    schema_path = Path(paths["schema"]) if paths.get("schema") else out / SIM_SCHEMA
    # explicitly referenced files must exist; simulator defaults only when a command reads them
    for key, path in (("input", input_path), ("schema", schema_path)):
        if (paths.get(key) or require_inputs) and not path.is_file():
            issues.append(ConfigIssue(f"paths.{key}", f"file not found: {path}"))

    def make(label, fn):
        try:
            return fn()
        except (TypeError, ValueError) as exc:
            issues.append(ConfigIssue(label, str(exc)))
            return None

    sim = make("simulate", lambda: SimSpec(**t.get("simulate", {})))
    mc1 = make("mcmc.phase1", lambda: McmcConfig(**t.get("mcmc.phase1", {})))
    mc2 = make("mcmc.phase2", lambda: McmcConfig(**t.get("mcmc.phase2", {})))
    syn = dict(t.get("synthesis", {}))
    enc = make("synthesis", lambda: EncodingOptions(standardize=syn.pop("standardize", True),
                                                     categorical=syn.pop("categorical", "dummy")))
    seed = run.get("seed", 0)
    workers = max(1, run.get("workers", 1))
    plan = None
    if mc1 and mc2 and enc:
        plan = make("synthesis", lambda: SynthesisPlan(phase1_cfg=mc1, phase2_cfg=mc2, seed=seed, encoding=enc,
                                                       workers=workers, **syn))
    if plan is not None:
        for label, mc in (("mcmc.phase1", mc1), ("mcmc.phase2", mc2)):
            gap = plan.gap or (mc.n_iterations - mc.burn_in) // plan.m
            if gap < 1 or mc.burn_in + plan.m * gap > mc.n_iterations:
                issues.append(ConfigIssue(label, f"chain too short for m={plan.m} draws"))
    ucfg = make("utility", lambda: UtilityConfig(seed=seed, workers=workers, **t.get("utility", {})))
    rk = dict(t.get("risk", {}))
    match = make("risk", lambda: MatchConfig(known_vars=rk.pop("known_vars", ("Sex", "Race", "Education")),
                                             radius=rk.pop("radius", 0.3)))
    rcfg = make("risk", lambda: RiskConfig(match=match, seed=seed, **rk)) if match else None
    if ucfg is not None:
        if any(not 0 < q < 1 for q in ucfg.quantiles):
            issues.append(ConfigIssue("utility.quantiles", "levels must lie in (0, 1)"))
        if ucfg.bootstrap_b < 100:
            issues.append(ConfigIssue("utility.bootstrap_b", "must be at least 100"))
    if issues:
        raise ConfigError(issues)
    return RunConfig(raw, seed, method, workers, out, input_path, schema_path, sim, plan, ucfg, rcfg)
