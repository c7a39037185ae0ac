"""YAML run-configuration parsing with strict key validation."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import yaml

from .errors import InputError, RebalfreqError
from .markets import model_from_config
from .simulate import SimulationConfig

__all__ = ["RunConfig", "load_config", "KNOWN_STRATEGIES"]

KNOWN_STRATEGIES = (
    "frictionless",
    "frictionless_sim",
    "time_adaptive",
    "time_constant",
    "buy_hold",
    "move",
    "pasted",
)

_MODEL_KEYS = {
    "kind",
    "mu",
    "vol",
    "correlation",
    "correlation_file",
    "mean_reversion",
    "long_run_mean",
    "state_vol",
    "state_correlation",
    "cutoff_low",
    "cutoff_high",
    "cutoff_width",
}
_SIM_KEYS = {
    "horizon",
    "dt",
    "n_paths",
    "epsilon",
    "gamma",
    "y0",
    "seed",
    "antithetic",
    "n_workers",
    "allow_flagged",
}
_TOP_KEYS = {"model", "simulation", "strategies", "output"}


@dataclass
class RunConfig:
    """A parsed run: the market model, simulation settings, strategy list."""

    model: object
    model_cfg: dict
    simulation: SimulationConfig
    strategies: list
    output: Optional[str]


def _reject_unknown(mapping, allowed, where):
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise InputError(
            f"unknown key{'s' if len(unknown) > 1 else ''} in {where}: "
            + ", ".join(f"{where}.{k}" for k in unknown)
        )


def load_config(path):
    """Parse and validate a YAML run configuration.

    Unknown keys are rejected with their dotted location; YAML syntax errors
    report the line number. The parsed structure uses plain scalars/lists
    only, so a dump/parse round trip is lossless.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise InputError(f"config parse error in {path}{loc}: {exc}") from exc
    if not isinstance(raw, dict):
        raise InputError("config root must be a mapping")
    _reject_unknown(raw, _TOP_KEYS, "config")
    if "model" not in raw or "simulation" not in raw:
        raise InputError("config requires 'model' and 'simulation' sections")
    if not isinstance(raw["model"], dict):
        raise InputError("config.model must be a mapping")
    if not isinstance(raw["simulation"], dict):
        raise InputError("config.simulation must be a mapping")
    _reject_unknown(raw["model"], _MODEL_KEYS, "model")
    _reject_unknown(raw["simulation"], _SIM_KEYS, "simulation")

    try:
        model = model_from_config(
            raw["model"], base_dir=os.path.dirname(os.path.abspath(path))
        )
    except InputError:
        raise
    except RebalfreqError as exc:
        # bad parameter values in the file are input errors, not runtime ones
        raise InputError(f"invalid model settings: {exc}") from exc

    sim_raw = dict(raw["simulation"])
    missing = [k for k in ("horizon", "dt", "n_paths", "epsilon", "gamma") if k not in sim_raw]
    if missing:
        raise InputError(
            "simulation section missing keys: "
            + ", ".join(f"simulation.{k}" for k in missing)
        )
    y0 = sim_raw.get("y0")
    if y0 is not None:
        y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    try:
        sim = SimulationConfig(
            horizon=float(sim_raw["horizon"]),
            dt=float(sim_raw["dt"]),
            n_paths=int(sim_raw["n_paths"]),
            epsilon=float(sim_raw["epsilon"]),
            gamma=float(sim_raw["gamma"]),
            y0=y0,
            seed=int(sim_raw.get("seed", 0)),
            antithetic=bool(sim_raw.get("antithetic", False)),
            n_workers=int(sim_raw.get("n_workers", 1)),
            allow_flagged=bool(sim_raw.get("allow_flagged", False)),
        )
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid simulation settings: {exc}") from exc

    strategies = raw.get("strategies", ["time_adaptive"])
    if not isinstance(strategies, list) or not strategies:
        raise InputError("config.strategies must be a nonempty list")
    for s in strategies:
        if s not in KNOWN_STRATEGIES:
            raise InputError(
                f"unknown strategy {s!r} in config.strategies; "
                f"known: {', '.join(KNOWN_STRATEGIES)}"
            )
    output = raw.get("output")
    return RunConfig(
        model=model,
        model_cfg=raw["model"],
        simulation=sim,
        strategies=list(strategies),
        output=output,
    )
