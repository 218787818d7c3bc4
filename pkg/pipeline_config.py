#!/usr/bin/env python3
"""
Pipeline Configuration

Composes the per-module settings into one PipelineConfig and loads it from,
lowest to highest precedence:

1. Model defaults
2. A flat ``key = value`` config file (``--config``)
3. ``COMOTION_<KEY>`` environment variables (a ``.env`` file is honored)
4. Command-line flags of the same name

Keys are case-insensitive and accept ``-`` or ``_``. One seed governs every
stochastic stage; each stage draws from its own derived stream.
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Tuple, Union

import numpy as np
from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from authenticity_detector import DetectorConfig
from comotion_errors import ConfigError, MissingInputError
from comotion_pattern import PatternConfig
from motion_features import MotionGateConfig
from motion_grouping import GroupingConfig
from optical_flow_solver import FlowSolverConfig
from synthetic_faces import SynthConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "COMOTION_"

STAGE_OFFSETS = {"grouping": 1, "sampling": 2, "template": 3, "adaboost": 4, "synth": 5}

SECTIONS = {
    "flow": FlowSolverConfig,
    "gate": MotionGateConfig,
    "grouping": GroupingConfig,
    "pattern": PatternConfig,
    "detector": DetectorConfig,
    "synth": SynthConfig,
}

# Seeds come from the top-level ``seed`` only
_DERIVED_FIELDS = {"rng_seed"}


def stage_seed(seed: int, stage: str, *extra: int) -> int:
    """Derived 32-bit seed for one stochastic stage (and optional sub-stream)."""
    if stage not in STAGE_OFFSETS:
        raise ConfigError(f"Unknown seed stage: {stage}")
    sequence = np.random.SeedSequence([int(seed), STAGE_OFFSETS[stage], *[int(x) for x in extra]])
    return int(sequence.generate_state(1)[0])


class PipelineConfig(BaseModel):
    """Every module config plus the pattern budget and run settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    flow: FlowSolverConfig = Field(default_factory=FlowSolverConfig)
    gate: MotionGateConfig = Field(default_factory=MotionGateConfig)
    grouping: GroupingConfig = Field(default_factory=GroupingConfig)
    pattern: PatternConfig = Field(default_factory=PatternConfig)
    detector: DetectorConfig = Field(default_factory=DetectorConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)

    n_pairs: int = Field(35, ge=1, description="rho matrices per pattern (N)")
    seed: int = Field(0, ge=0, lt=2 ** 32)
    threads: int = Field(1, ge=1)
    sample_rho: Literal["contiguous", "random"] = "contiguous"
    landmark_count: int = Field(68, description="Landmarks per frame in input CSVs (51 or 68)")

    @field_validator("landmark_count")
    @classmethod
    def _check_landmark_count(cls, v: int) -> int:
        if v not in (51, 68):
            raise ValueError(f"landmark_count must be 51 or 68, got {v}")
        return v

    def seeded_grouping(self) -> GroupingConfig:
        return self.grouping.model_copy(update={"rng_seed": stage_seed(self.seed, "grouping")})

    def stage_seed(self, stage: str, *extra: int) -> int:
        return stage_seed(self.seed, stage, *extra)

    def flat(self) -> Dict[str, Any]:
        """Effective settings as flat key/value pairs."""
        out = {key: getattr(self, key) for key in _TOP_LEVEL_KEYS}
        for key, (section, name) in FLAT_KEYS.items():
            out[key] = getattr(getattr(self, section), name)
        return out


_TOP_LEVEL_KEYS = ("n_pairs", "seed", "threads", "sample_rho", "landmark_count")


def _flat_keys() -> Dict[str, Tuple[str, str]]:
    keys: Dict[str, Tuple[str, str]] = {}
    for section, model in SECTIONS.items():
        for name in model.model_fields:
            if name in _DERIVED_FIELDS:
                continue
            if name in keys or name in _TOP_LEVEL_KEYS:
                raise RuntimeError(f"Config key {name} is defined twice")
            keys[name] = (section, name)
    return keys


FLAT_KEYS = _flat_keys()


def normalize_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def _apply(values: Dict[str, Any], source: Mapping[str, Any], origin: str) -> None:
    for raw_key, value in source.items():
        if value is None:
            continue
        key = normalize_key(raw_key)
        if key not in FLAT_KEYS and key not in _TOP_LEVEL_KEYS:
            raise ConfigError(f"Unknown configuration key '{raw_key}' ({origin})")
        if isinstance(value, str):
            value = value.strip()
            if key == "gaussian_sigma" and value.lower() in ("", "none"):
                continue
        values[key] = value


def read_config_file(path: Union[str, Path]) -> Dict[str, Optional[str]]:
    """Parse a flat ``key = value`` file (``#`` comments allowed)."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"Config file not found: {path}")
    return dict(dotenv_values(path))


def environment_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    environ = os.environ if environ is None else environ
    return {k[len(ENV_PREFIX):]: v for k, v in environ.items() if k.startswith(ENV_PREFIX)}


def build_config(values: Mapping[str, Any]) -> PipelineConfig:
    """Validate flat key/value settings into a PipelineConfig."""
    nested: Dict[str, Any] = {section: {} for section in SECTIONS}
    for key, value in values.items():
        if key in FLAT_KEYS:
            section, name = FLAT_KEYS[key]
            nested[section][name] = value
        else:
            nested[key] = value
    try:
        return PipelineConfig(**nested)
    except ValidationError as e:
        details = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Invalid configuration: {details}") from e


def load_pipeline_config(
    config_file: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
    use_dotenv: bool = True,
) -> PipelineConfig:
    """
    Merge defaults, config file, environment and overrides.

    Args:
        config_file: Optional flat ``key = value`` file
        overrides: Command-line values; ``None`` entries are ignored
        environ: Environment mapping (defaults to ``os.environ``)
        use_dotenv: Load a ``.env`` file into the process environment first

    Returns:
        Validated PipelineConfig
    """
    if use_dotenv and environ is None:
        load_dotenv()

    values: Dict[str, Any] = {}
    if config_file is not None:
        _apply(values, read_config_file(config_file), f"config file {config_file}")
    _apply(values, environment_overrides(environ), "environment")
    _apply(values, overrides or {}, "command line")

    config = build_config(values)
    logger.debug(f"🔧 Effective configuration: {config.flat()}")
    return config
