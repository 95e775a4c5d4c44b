"""Run configuration with layered sources.

Precedence, highest first: explicit command-line overrides, then
``PANODIAG_<SECTION>_<KEY>`` environment variables, then an INI-style
config file, then the built-in defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Iterator

from .grpo import ClipRange
from .rewards import GateParams, RewardWeights

__all__ = [
    "ConfigError",
    "RunConfig",
    "clip_range",
    "gate_params",
    "iter_keys",
    "load_config",
    "reward_weights",
]

_ENV_PREFIX = "PANODIAG"


class ConfigError(ValueError):
    """A config source named an unknown key or held an unparsable value."""


@dataclass(frozen=True)
class RunConfig:
    # imaging
    pad_factor: float = 1.5
    zoom_min_side: int = 0
    # episode
    max_steps: int = 6
    # reward
    gate_threshold: float = 0.5
    gate_scale: float = 0.3
    gate_ceiling: float = 2.0
    gate_window: int = 32
    weight_rubric: float = 1.0
    weight_format: float = 0.0
    weight_diag: float = 1.0
    # grpo
    clip_low: float = 0.2
    clip_high: float = 0.3
    group_size: int = 8
    advantage_eps: float = 1e-8
    kl_coef: float = 0.001
    kl_enabled: bool = False
    step_size: float = 0.1
    # builder
    kmeans_k: int = 0
    kmeans_n_init: int = 8
    mirror_diff_threshold: float = 4.0
    mirror_quality_threshold: float = 0.5
    # policy
    detection_threshold: float = 15.0
    mirror_threshold: float = 5.0
    max_mirrors: int = 3
    # judge
    judge_backend: str = "local"
    judge_endpoint: str = ""
    judge_model: str = "judge-model"
    judge_api_key_env: str = "PANODIAG_JUDGE_KEY"
    judge_timeout: float = 60.0
    judge_max_retries: int = 3
    judge_backoff: float = 0.5
    judge_max_in_flight: int = 4
    # run
    seed: int = 0
    runs: int = 1


_SECTIONS: dict[str, tuple[str, ...]] = {
    "imaging": ("pad_factor", "zoom_min_side"),
    "episode": ("max_steps",),
    "reward": (
        "gate_threshold",
        "gate_scale",
        "gate_ceiling",
        "gate_window",
        "weight_rubric",
        "weight_format",
        "weight_diag",
    ),
    "grpo": (
        "clip_low",
        "clip_high",
        "group_size",
        "advantage_eps",
        "kl_coef",
        "kl_enabled",
        "step_size",
    ),
    "builder": (
        "kmeans_k",
        "kmeans_n_init",
        "mirror_diff_threshold",
        "mirror_quality_threshold",
    ),
    "policy": ("detection_threshold", "mirror_threshold", "max_mirrors"),
    "judge": (
        "judge_backend",
        "judge_endpoint",
        "judge_model",
        "judge_api_key_env",
        "judge_timeout",
        "judge_max_retries",
        "judge_backoff",
        "judge_max_in_flight",
    ),
    "run": ("seed", "runs"),
}

_FIELD_SECTION = {name: section for section, names in _SECTIONS.items() for name in names}
_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}
_DEFAULTS = RunConfig()

# Keys inside the [judge] section drop the redundant prefix, so the file
# reads "[judge] backend = local" rather than "judge_backend".
def _file_key(field: str, section: str) -> str:
    prefix = section + "_"
    return field[len(prefix):] if field.startswith(prefix) else field


_FILE_KEYS = {
    (section, _file_key(field, section)): field
    for field, section in _FIELD_SECTION.items()
}


def iter_keys() -> Iterator[tuple[str, str, object]]:
    """Yield (dotted key, env var, default) for every config field."""
    for section, names in _SECTIONS.items():
        for field in names:
            dotted = f"{section}.{_file_key(field, section)}"
            env = f"{_ENV_PREFIX}_{section.upper()}_{_file_key(field, section).upper()}"
            yield dotted, env, getattr(_DEFAULTS, field)


def _parse_value(field: str, raw: str) -> object:
    kind = _FIELD_TYPES[field]
    text = raw.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {field}: {exc}") from None


def _resolve_dotted(dotted: str) -> str:
    section, _, key = dotted.partition(".")
    if not key or (section, key) not in _FILE_KEYS:
        raise ConfigError(f"unknown config key {dotted!r}")
    return _FILE_KEYS[(section, key)]


def load_config(
    path: str | None = None,
    *,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, str] | None = None,
) -> RunConfig:
    """Build a RunConfig from the layered sources.

    ``overrides`` maps dotted "section.key" strings to raw values and wins
    over everything else.
    """
    values: dict[str, object] = {}

    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                field = _FILE_KEYS.get((section, key))
                if field is None:
                    raise ConfigError(f"unknown config key {section}.{key}")
                values[field] = _parse_value(field, raw)

    env_map = os.environ if env is None else env
    for field, section in _FIELD_SECTION.items():
        var = f"{_ENV_PREFIX}_{section.upper()}_{_file_key(field, section).upper()}"
        if var in env_map:
            values[field] = _parse_value(field, env_map[var])

    for dotted, raw in (overrides or {}).items():
        field = _resolve_dotted(dotted)
        values[field] = _parse_value(field, raw)

    return RunConfig(**values)


def gate_params(config: RunConfig) -> GateParams:
    return GateParams(
        threshold=config.gate_threshold,
        scale=config.gate_scale,
        ceiling=config.gate_ceiling,
        window=config.gate_window,
    )


def reward_weights(config: RunConfig) -> RewardWeights:
    return RewardWeights(
        rubric=config.weight_rubric,
        format=config.weight_format,
        diagnostic=config.weight_diag,
    )


def clip_range(config: RunConfig) -> ClipRange:
    return ClipRange(low=config.clip_low, high=config.clip_high)
