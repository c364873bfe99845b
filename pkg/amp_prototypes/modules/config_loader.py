"""Utility for loading run configuration from embedded defaults and TOML files.

``ConfigLoader`` centralises access to the default parameters embedded in the
package. Each getter returns a deep copy so callers can modify the result
freely. TOML files and command-line overrides are merged over the defaults;
the section and key names of the defaults are the only ones accepted.

The typed views (:class:`TrainingConfig`, :class:`SyntheticSpec`,
:class:`BaselineConfig` and :class:`~amp_prototypes.amp_head.LossWeights`)
validate their invariants on construction.
"""

import copy
import dataclasses
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..amp_head import LossWeights
from ..config.embedded_defaults import get_default_parameters
from ..errors import ConfigError, SpecError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    """Optimizer schedule and bookkeeping for one training run."""

    epochs: int = 60
    batch_size: int = 32
    lr_max: float = 0.001
    lr_min: float = 0.00001
    K: int = 10
    feature_depth: int = 16
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 10
    freeze_capacity: bool = False
    reorthonormalize_every: int = 100
    capacity_lr_scale: float = 1.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.K < 1:
            raise ConfigError(f"K must be at least 1, got {self.K}")
        if self.feature_depth < self.K:
            raise ConfigError(
                f"feature_depth ({self.feature_depth}) must be at least K ({self.K})"
            )
        if not self.lr_min > 0 or self.lr_max < self.lr_min:
            raise ConfigError(
                f"learning rates must satisfy lr_max >= lr_min > 0, got {self.lr_max}, {self.lr_min}"
            )
        if self.checkpoint_every < 1 or self.reorthonormalize_every < 1:
            raise ConfigError("checkpoint_every and reorthonormalize_every must be at least 1")
        if not self.capacity_lr_scale > 0:
            raise ConfigError(f"capacity_lr_scale must be positive, got {self.capacity_lr_scale}")


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape and noise of a planted-part synthetic dataset."""

    classes: int = 10
    channels: int = 16
    height: int = 6
    width: int = 6
    parts: int = 3
    part_scale: float = 3.0
    noise: float = 0.1
    samples_per_class: int = 40
    seed: int = 0
    visible_parts: int = 0

    def __post_init__(self):
        if self.classes < 1 or self.channels < 1 or self.height < 1 or self.width < 1:
            raise SpecError("classes, channels, height and width must all be positive")
        if not 1 <= self.parts <= min(self.channels, self.height * self.width):
            raise SpecError(
                f"parts must lie in [1, min(channels, height*width)], got {self.parts}"
            )
        if not self.noise >= 0:
            raise SpecError(f"noise must be non-negative, got {self.noise}")
        if not self.part_scale > 0:
            raise SpecError(f"part_scale must be positive, got {self.part_scale}")
        if self.samples_per_class < 1:
            raise SpecError(f"samples_per_class must be at least 1, got {self.samples_per_class}")
        if not 0 <= self.visible_parts <= self.parts:
            raise SpecError(
                f"visible_parts must lie in [0, parts] (0 shows every part), got {self.visible_parts}"
            )


@dataclass(frozen=True)
class BaselineConfig:
    """Euclidean prototype baseline options."""

    init_noise: float = 0.5
    project_every: int = 10

    def __post_init__(self):
        if not self.init_noise >= 0:
            raise ConfigError(f"init_noise must be non-negative, got {self.init_noise}")
        if self.project_every < 1:
            raise ConfigError(f"project_every must be at least 1, got {self.project_every}")


def _check_value(section: str, key: str, value: Any, default: Any) -> Any:
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"[{section}] {key} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"[{section}] {key} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"[{section}] {key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"[{section}] {key} must be a list, got {value!r}")
        return value
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"[{section}] {key} must be a string, got {value!r}")
    return value


def _drop_none(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _drop_none(v) for k, v in value.items() if v is not None}
    return value


class ConfigLoader:
    """Layered run configuration: embedded defaults, then a file, then overrides."""

    def __init__(self):
        self._config = None
        self.source: Optional[Path] = None
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")

    @property
    def config(self) -> Dict[str, Any]:
        """Lazy load configuration from embedded data."""
        if self._config is None:
            self._load_config()
        return self._config

    def _load_config(self) -> None:
        """Load configuration from embedded data."""
        self._config = copy.deepcopy(get_default_parameters())

    def reset(self) -> None:
        self._config = None
        self.source = None

    def load_file(self, path: Union[str, Path]) -> None:
        """Merge a TOML file over the current configuration.

        Raises
        ------
        FileNotFoundError
            If *path* does not exist.
        ConfigError
            If the file is not valid TOML or names unknown sections or keys.
        """
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            with open(path, 'rb') as handle:
                data = tomllib.load(handle)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"invalid TOML in {path}: {e}")
        self.apply_overrides(data)
        self.source = path
        self.logger.info("Loaded configuration from %s", path)

    def apply_overrides(self, overrides: Mapping[str, Mapping[str, Any]]) -> None:
        """Merge ``{section: {key: value}}`` over the current configuration."""
        config = self.config
        for section, values in overrides.items():
            if section not in config:
                raise ConfigError(f"unknown config section [{section}]")
            if not isinstance(values, Mapping):
                raise ConfigError(f"config section [{section}] must be a table")
            for key, value in values.items():
                if key not in config[section]:
                    raise ConfigError(f"unknown key '{key}' in section [{section}]")
                config[section][key] = _check_value(section, key, value, config[section][key])

    def get_section(self, name: str) -> Dict[str, Any]:
        if name not in self.config:
            raise ConfigError(f"unknown config section [{name}]")
        return copy.deepcopy(self.config[name])

    def loss_weights(self) -> LossWeights:
        loss = self.config['loss']
        try:
            return LossWeights(gamma1=loss['gamma1'], gamma2=loss['gamma2'], lam=loss['lambda'])
        except ValueError as e:
            raise ConfigError(str(e))

    def training_config(self) -> TrainingConfig:
        values = self.get_section('training')
        return TrainingConfig(weights=self.loss_weights(), **values)

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(**self.get_section('synthetic'))

    def baseline_config(self) -> BaselineConfig:
        return BaselineConfig(**self.get_section('baseline'))

    def rank_recovery_setup(self) -> Tuple[TrainingConfig, SyntheticSpec]:
        """Training and data for the rank-recovery runs.

        The ``[rank_recovery]`` section overrides the schedule, ``K``, ``lambda``
        and the planted and visible part counts of ``[training]``, ``[loss]`` and
        ``[synthetic]``.
        """
        section = self.get_section('rank_recovery')
        try:
            weights = dataclasses.replace(self.loss_weights(), lam=section.pop('lambda'))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        spec = dataclasses.replace(self.synthetic_spec(), parts=section.pop('parts'),
                                   visible_parts=section.pop('visible_parts'))
        cfg = dataclasses.replace(self.training_config(), weights=weights, **section)
        return cfg, spec

    def to_toml(self) -> str:
        """Effective configuration as TOML text (unset values omitted)."""
        return tomli_w.dumps(_drop_none(self.config))

    def dump(self, path: Union[str, Path]) -> Path:
        """Write the effective configuration to *path*."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'wb') as handle:
            tomli_w.dump(_drop_none(self.config), handle)
        logger.debug("Wrote configuration to %s", path)
        return path


# Global instance for easy access
config_loader = ConfigLoader()
