# felrl/config.py
"""
Experiment configs: YAML file → frozen dataclasses.

Every validation error names the 1-based line of the offending key, read
from the YAML node marks.
"""

from __future__ import annotations

import dataclasses
import logging
import re
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Any

import yaml

from .aedyna import AedynaConfig
from .dynamics import EnsembleConfig
from .envs import ENV_NAMES, FEL_VERIFICATION_HORIZON, FelSimConfig, Environment, make_env
from .errors import ConfigError
from .naf import NafConfig
from .sac import SacConfig

log = logging.getLogger(__name__)

ALGORITHMS = ("naf2", "aedyna-sac")
DEFAULT_SEEDS = (0, 1, 2, 3, 4)

_SECTIONS = {
    "naf": NafConfig,
    "ensemble": EnsembleConfig,
    "sac": SacConfig,
    "aedyna": AedynaConfig,
}


@dataclass(frozen=True)
class EnvConfig:
    """
    :param name: "pendulum" or "fel-sim".
    :param obs_noise: Observation noise σ_ε.
    :param fel: Extra `FelSimConfig` fields (target, beam_width, fixed_start, …).
    """
    name: str = "pendulum"
    obs_noise: float = 0.0
    horizon: int | None = None
    fel: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in ENV_NAMES:
            raise ValueError(f"unknown environment name {self.name!r}; expected one of {ENV_NAMES}")
        if self.obs_noise < 0:
            raise ValueError("obs_noise must be non-negative")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be ≥ 1")

    def build(self, seed: int | None = None) -> Environment:
        return make_env(self.name, seed, self.obs_noise, self.horizon, **self.fel)


@dataclass(frozen=True)
class ExperimentConfig:
    """
    One algorithm on one environment over a list of seeds.

    :param episodes: NAF2 training episodes per seed (0 allowed).
    :param verification_episodes: Greedy episodes run on the final policy.
    :param verification_horizon: Episode cap during verification; None means
        200 on the FEL simulator and the environment horizon otherwise.
    :param max_wall_clock: Seconds per seed before the run is aborted.
    """
    experiment_id: str
    algorithm: str
    env: EnvConfig = field(default_factory=EnvConfig)
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    episodes: int = 100
    verification_episodes: int = 50
    verification_horizon: int | None = None
    output_dir: str | None = None
    max_wall_clock: float | None = None
    naf: NafConfig = field(default_factory=NafConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    aedyna: AedynaConfig = field(default_factory=AedynaConfig)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.episodes < 0 or self.verification_episodes < 0:
            raise ValueError("episode budgets must be non-negative")
        if self.max_wall_clock is not None and self.max_wall_clock <= 0:
            raise ValueError("max_wall_clock must be positive")

    def resolved_verification_horizon(self, env: Environment) -> int:
        if self.verification_horizon is not None:
            return self.verification_horizon
        return FEL_VERIFICATION_HORIZON if self.env.name == "fel-sim" else env.spec.horizon

    def to_dict(self) -> dict[str, Any]:
        return _plain(dataclasses.asdict(self))


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


# ─────────────────────────────────────────────────────────────────────────────
# YAML → dataclasses
# ─────────────────────────────────────────────────────────────────────────────
def _key_lines(node: yaml.Node, prefix: tuple[str, ...] = ()) -> dict[tuple[str, ...], int]:
    """Map every mapping-key path to the 1-based line it sits on."""
    lines: dict[tuple[str, ...], int] = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = prefix + (str(key_node.value),)
            lines[path] = key_node.start_mark.line + 1
            lines.update(_key_lines(value_node, path))
    return lines


def _coerce(value: Any, type_name: str, where: str, line: int | None) -> Any:
    """Check a YAML scalar against a dataclass field annotation (as written)."""
    optional = "None" in type_name
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{where} must not be empty", line)
    base = type_name.split("|")[0].strip()
    if base.startswith("tuple"):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list", line)
        return tuple(value)
    if base == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false", line)
        return value
    if base == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer", line)
        return value
    if base == "float":
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a dot (1e-3) as strings
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(f"{where} must be a number", line) from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number", line)
        return float(value)
    if base == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string", line)
        return value
    return value


def _build(cls, data: Any, path: tuple[str, ...], lines: dict, extra: dict | None = None):
    """Instantiate dataclass `cls` from a mapping, rejecting unknown keys."""
    section = ".".join(path) or "top level"
    line = lines.get(path)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be a mapping", line)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = dict(extra or {})
    for key, value in data.items():
        key_path = path + (str(key),)
        if key not in fields or key in kwargs:
            raise ConfigError(f"unknown key {'.'.join(key_path)!r}", lines.get(key_path))
        kwargs[key] = _coerce(value, str(fields[key].type), ".".join(key_path), lines.get(key_path))
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        # point at the first key the message names, else at the section
        named = [k for k in data if re.search(rf"\b{re.escape(str(k))}\b", str(exc))]
        if named:
            line = lines.get(path + (str(named[0]),), line)
        raise ConfigError(f"invalid {section}: {exc}", line) from exc


def config_from_mapping(data: Any, lines: dict | None = None) -> ExperimentConfig:
    lines = lines or {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at the top level", 1)
    data = dict(data)
    nested = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            nested[name] = _build(cls, data.pop(name), (name,), lines)
    env_data = data.pop("env", None)
    if isinstance(env_data, str):
        env_data = {"name": env_data}
    env_extra = None
    if isinstance(env_data, dict) and "fel" in env_data:
        env_data = dict(env_data)
        fel = env_data.pop("fel") or {}
        # validated here so errors point at the fel lines
        _build(FelSimConfig, fel, ("env", "fel"), lines)
        env_extra = {"fel": {k: tuple(v) if isinstance(v, list) else v for k, v in fel.items()}}
    nested["env"] = _build(EnvConfig, env_data, ("env",), lines, extra=env_extra)
    for required in ("experiment_id", "algorithm"):
        if required not in data:
            raise ConfigError(f"missing required key {required!r}", 1)
    return _build(ExperimentConfig, data, (), lines, extra=nested)


def parse_config(text: str) -> ExperimentConfig:
    loader = yaml.SafeLoader(text)
    try:
        node = loader.get_single_node()
        if node is None:
            raise ConfigError("config file is empty", 1)
        data = loader.construct_document(node)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ConfigError(f"YAML syntax error: {exc.problem}", mark.line + 1 if mark else None) from exc
    finally:
        loader.dispose()
    return config_from_mapping(data, _key_lines(node))


def load_config(path: str | PathLike) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    config = parse_config(text)
    log.debug("loaded config %s from %s", config.experiment_id, path)
    return config


def dump_config(config: ExperimentConfig) -> str:
    """YAML text that `parse_config` turns back into `config`."""
    return yaml.safe_dump(config.to_dict(), sort_keys=False)
