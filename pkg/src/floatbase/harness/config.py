"""Scenario configuration files.

Plain INI text with four sections. Every key is checked against a fixed
vocabulary so a typo fails loudly instead of silently using a default.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

TASKS = (
    "ik-tracking",
    "map-estimation",
    "stack-of-tasks",
    "trajectory-advancement",
    "partner-aware",
    "standup-free-params",
)

SCENARIO_KEYS = {
    "name": str,
    "task": str,
    "model": str,
    "duration": float,
    "dt": float,
    "seed": int,
    "payload": float,
    "assist_gain": float,
    "push_force": float,
    "upper_bound": float,
    "gain": float,
}
NOISE_KEYS = ("accelerometer", "wrench", "joint_acceleration", "position", "orientation")
COVARIANCE_KEYS = ("model", "prior", "feet", "hands", "momentum", "accelerometer", "wrench", "joint_acceleration")

# tolerance names each task reports; a tolerance is an upper bound on the metric
METRICS = {
    "ik-tracking": ("final_residual", "envelope_violation"),
    "map-estimation": ("rmse_base_acceleration", "rmse_torque", "rmse_feet_wrench"),
    "stack-of-tasks": ("hand_force_relative_error", "feet_deviation_in_std"),
    "trajectory-advancement": ("lyapunov_increase", "psi_dot_bound_violation", "psi_dot_nominal_deviation"),
    "partner-aware": ("vdot_law_max", "vdot_closed_loop_max", "assist_delay"),
    "standup-free-params": ("wrench_realization_error", "final_com_error"),
}


class ConfigError(ValueError):
    """Malformed or inconsistent scenario configuration."""


@dataclass
class ScenarioConfig:
    task: str
    model: str
    duration: float
    dt: float
    seed: int = 0
    name: str = ""
    payload: float = 0.0
    assist_gain: float = 0.0
    push_force: float = 0.0
    upper_bound: float = 10.0
    gain: float = 10.0
    noise: dict = field(default_factory=dict)
    covariance: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {', '.join(TASKS)}")
        if not self.dt > 0.0:
            raise ConfigError("dt must be positive")
        if not self.duration >= self.dt:
            raise ConfigError("duration must be at least dt")
        for k, v in self.noise.items():
            if v < 0.0:
                raise ConfigError(f"noise {k} must be non-negative")
        for k, v in self.covariance.items():
            if v <= 0.0:
                raise ConfigError(f"covariance {k} must be positive")
        allowed = METRICS[self.task]
        for k in self.tolerances:
            if k not in allowed:
                raise ConfigError(f"task {self.task} has no metric {k!r}; expected one of {', '.join(allowed)}")
        if not self.name:
            self.name = self.task

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))

    def noise_std(self, kind: str) -> float:
        return float(self.noise.get(kind, 0.0))


def _section(parser, name, allowed) -> dict:
    if not parser.has_section(name):
        return {}
    out = {}
    for key, raw in parser.items(name):
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        try:
            out[key] = float(raw)
        except ValueError:
            raise ConfigError(f"[{name}] {key} is not a number: {raw!r}") from None
    return out


def parse_config(text: str) -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for s in parser.sections():
        if s not in ("scenario", "noise", "covariance", "tolerances"):
            raise ConfigError(f"unknown section [{s}]")
    if not parser.has_section("scenario"):
        raise ConfigError("missing [scenario] section")
    values = {}
    for key, raw in parser.items("scenario"):
        if key not in SCENARIO_KEYS:
            raise ConfigError(f"unknown key {key!r} in [scenario]")
        try:
            values[key] = SCENARIO_KEYS[key](raw)
        except ValueError:
            raise ConfigError(f"[scenario] {key} has bad value {raw!r}") from None
    for required in ("task", "model", "duration", "dt"):
        if required not in values:
            raise ConfigError(f"[scenario] is missing {required!r}")
    task = values.get("task")
    tol_keys = METRICS.get(task, ())
    return ScenarioConfig(
        **values,
        noise=_section(parser, "noise", NOISE_KEYS),
        covariance=_section(parser, "covariance", COVARIANCE_KEYS),
        tolerances=_section(parser, "tolerances", tol_keys) if task in METRICS else {},
    )


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    cfg = parse_config(text)
    if cfg.name == cfg.task:
        cfg.name = path.stem
    return cfg
