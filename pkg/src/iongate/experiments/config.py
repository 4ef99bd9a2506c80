"""Experiment configuration files.

Configs are YAML mappings.  Frequencies are ordinary frequencies in Hz,
times are in seconds, phases in radians.  Missing keys fall back to the
desk-scale defaults below; ``full_scale`` swaps in the heavier settings.

Example::

    experiment: fig2b_thermal
    lab:
      delta_L: 800.0e3
      Omega_d: 5.2e6
    thermal:
      nbar: [0, 1, 2]
    drive:
      Omega_d_list: [0.0, 2.0e6, 3.8e6, 5.2e6]
    numerics:
      n_max: 10
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..hamiltonian import LabParams

EXPERIMENTS = ("fig2a_swap", "fig2b_thermal", "fig4a_coherence", "fig4b_noise", "channel_error",
               "modes", "jeff", "custom")

DEFAULTS: dict = {
    "experiment": "custom",
    "num_ions": 2,
    "lab": {
        "omega0": 1.8e9, "omega_x": 4.0e6, "omega_z": 1.0e6, "eta": 0.2,
        "delta_L": 800.0e3, "Omega_L": 500.0e3, "Omega_d": 5.2e6,
        "phi_L": 0.0, "phi_d": 0.0, "B0": 4.0e-3,
    },
    "thermal": {"nbar": [0.0, 1.0, 2.0], "tol": 1.0e-6},
    "drive": {"Omega_d_list": [0.0, 2.0e6, 3.8e6, 5.2e6]},
    "ou": {"T2": [5.0e-3], "tau_ratio": 0.1, "num_traj": 200, "seed": 1234,
           "coherence_traj": 5000, "coherence_points": 200, "coherence_span": 3.0},
    "numerics": {
        "dt": 2.5e-7,
        "n_max": 10,
        "n_max_noise": 6,
        "scan": {"num": 41, "half_width": 0.1, "center": "auto"},
        "swap": {"num": 301, "span": 2.5},
        "threads": 1,
    },
    "haar": {"num_states": 100, "seed": 7},
    "input": None,
    "target": None,
    "output": "out",
}

FULL_SCALE: dict = {
    "fig2a_swap": {"numerics": {"n_max": 20}, "thermal": {"nbar": [0.0, 0.1, 1.0, 2.0, 4.0]}},
    "fig2b_thermal": {"numerics": {"n_max": 14}},
    "fig4a_coherence": {"ou": {"coherence_traj": 5000}},
    "fig4b_noise": {"ou": {"num_traj": 5000}},
    "channel_error": {"ou": {"num_traj": 5000}, "haar": {"num_states": 1000}},
}

EXPERIMENT_DEFAULTS: dict = {
    "fig2a_swap": {"lab": {"Omega_d": 0.0}, "thermal": {"nbar": [0.0, 0.1, 1.0, 2.0, 4.0]},
                   "numerics": {"n_max": 12}},
    "fig4b_noise": {"thermal": {"nbar": [0.0]},
                    "ou": {"T2": [0.5e-3, 1.0e-3, 2.0e-3, 5.0e-3, float("inf")]}},
    "channel_error": {"thermal": {"nbar": [0.0]},
                      "ou": {"T2": [1.0e-3, 2.0e-3, 5.0e-3, float("inf")], "num_traj": 100}},
}


class ConfigError(ValueError):
    pass


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _as_float(x):
    if isinstance(x, str) and x.strip().lower() in ("inf", "infinity", ".inf"):
        return float("inf")
    return float(x)


@dataclass
class ExperimentConfig:
    experiment: str
    lab: LabParams
    num_ions: int
    nbar: list[float]
    thermal_tol: float
    Omega_d_list: list[float]  # rad/s
    T2_list: list[float]
    tau_ratio: float
    num_traj: int
    seed: int
    numerics: dict
    ou_extra: dict
    haar: dict
    input_label: str | None
    target: str | None
    output: Path
    full_scale: bool = False
    raw: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.numerics["dt"])

    @property
    def n_max(self) -> int:
        return int(self.numerics["n_max"])

    @property
    def threads(self) -> int:
        return int(self.numerics.get("threads", 1))

    def with_lab(self, **changes) -> "ExperimentConfig":
        new = copy.copy(self)
        new.lab = self.lab.with_(**changes)
        return new

    def metadata(self) -> dict:
        return {"experiment": self.experiment, "full_scale": self.full_scale, "config": self.raw}


def build_config(data: dict | None = None, experiment: str | None = None,
                 full_scale: bool = False) -> ExperimentConfig:
    data = dict(data or {})
    name = experiment or data.get("experiment") or DEFAULTS["experiment"]
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    merged = deep_merge(DEFAULTS, EXPERIMENT_DEFAULTS.get(name, {}))
    merged = deep_merge(merged, data)
    if full_scale:
        merged = deep_merge(merged, FULL_SCALE.get(name, {}))
    merged["experiment"] = name
    unknown = set(merged) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    lab = merged["lab"]
    try:
        params = LabParams.from_hz(**{k: _as_float(v) for k, v in lab.items()})
    except TypeError as exc:
        raise ConfigError(f"bad lab block: {exc}") from None
    nbar = merged["thermal"]["nbar"]
    nbar = [float(x) for x in (nbar if isinstance(nbar, (list, tuple)) else [nbar])]
    if any(x < 0 for x in nbar):
        raise ConfigError("nbar must be non-negative")
    T2 = merged["ou"]["T2"]
    T2 = [_as_float(x) for x in (T2 if isinstance(T2, (list, tuple)) else [T2])]
    if any(not t > 0 for t in T2):
        raise ConfigError("T2 values must be positive")
    num = merged["numerics"]
    if float(num["dt"]) <= 0 or int(num["n_max"]) < 1:
        raise ConfigError("numerics.dt must be positive and n_max >= 1")
    if int(merged["num_ions"]) != 2 and name not in ("modes", "jeff", "custom"):
        raise ConfigError("gate experiments are defined for two ions")
    return ExperimentConfig(
        experiment=name,
        lab=params,
        num_ions=int(merged["num_ions"]),
        nbar=nbar,
        thermal_tol=float(merged["thermal"]["tol"]),
        Omega_d_list=[2 * np.pi * _as_float(x) for x in merged["drive"]["Omega_d_list"]],
        T2_list=T2,
        tau_ratio=float(merged["ou"]["tau_ratio"]),
        num_traj=int(merged["ou"]["num_traj"]),
        seed=int(merged["ou"]["seed"]),
        numerics=num,
        ou_extra={k: merged["ou"][k] for k in ("coherence_traj", "coherence_points", "coherence_span")},
        haar=merged["haar"],
        input_label=merged.get("input"),
        target=merged.get("target"),
        output=Path(merged["output"]),
        full_scale=full_scale,
        raw=merged,
    )


def load_config(path: str | Path | None, experiment: str | None = None,
                full_scale: bool = False) -> ExperimentConfig:
    data = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError("config file must contain a mapping")
    return build_config(data, experiment, full_scale)
