"""
ConfigLoader module for loading and validating TOML or YAML experiment configuration
"""

import logging

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

logger = logging.getLogger(__name__)


class ConfigurationError(Exception):
    """Raised when configuration is invalid or incomplete"""

    def __init__(self, message: str, keys: Optional[List[str]] = None):
        self.keys = keys or []
        super().__init__(message)


class Variant(str, Enum):
    """Model variants of the ablation table"""
    FULL_AW = 'full-aw'
    FULL_AF = 'full-af'
    REG_AW = 'reg-aw'
    REG_AF = 'reg-af'
    C3D_AW = 'c3d-aw'
    C3D_AF = 'c3d-af'
    STV_AW = 'stv-aw'
    STV_AF = 'stv-af'
    ABLP = 'ablp'

    @property
    def head(self) -> Optional[str]:
        """'aw', 'af', or None when spans come from attention post-processing"""
        return None if self is Variant.ABLP else self.value.split('-')[1]

    @property
    def family(self) -> str:
        return self.value.split('-')[0]

    @property
    def uses_video_lstm(self) -> bool:
        return self.family != 'c3d'

    @property
    def single_vector_sentence(self) -> bool:
        return self.family == 'stv'


VARIANTS = [variant.value for variant in Variant]


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class SynthConfig(_Section):
    """Planted-interval corpus generator settings"""
    clip_count: int = Field(32, ge=4)
    feature_dim: int = Field(16, ge=1)
    concept_count: int = Field(8, ge=1)
    signal_strength: float = Field(3.0, ge=0.0)
    noise_scale: float = Field(1.0, gt=0.0)
    distractor_probability: float = Field(0.5, ge=0.0, le=1.0)
    min_words: int = Field(4, ge=2)
    max_words: int = Field(8, ge=2)
    duration_range: Tuple[float, float] = (30.0, 180.0)
    train_size: int = Field(2000, ge=1)
    val_size: int = Field(300, ge=0)
    test_size: int = Field(500, ge=0)
    seed: int = 0

    @field_validator('duration_range')
    @classmethod
    def _check_duration_range(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if not 0 < value[0] <= value[1]:
            raise ValueError(f"duration range must satisfy 0 < low <= high, got {list(value)}")
        return value

    @model_validator(mode='after')
    def _check_sentence_length(self) -> 'SynthConfig':
        if self.max_words < self.min_words:
            raise ValueError(f"max_words ({self.max_words}) is below min_words ({self.min_words})")
        return self


class TrainConfig(_Section):
    """Model dimensions, loss weights and optimisation settings"""
    variant: Variant = Variant.FULL_AW
    alpha: float = Field(1.0, ge=0.0)
    beta: float = Field(5.0, ge=0.0)
    learning_rate: float = Field(1e-3, gt=0.0)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(50, ge=1)
    hidden_size: int = Field(64, ge=1)
    attention_size: int = Field(64, ge=1)
    regression_size: int = Field(64, ge=1)
    word_dim: int = Field(50, ge=1)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)
    clip_count: int = Field(32, ge=1)
    seed: int = 0
    precision: str = 'float32'
    grad_clip: Optional[float] = Field(5.0, gt=0.0)
    ablp_threshold: float = Field(0.5, gt=0.0, le=1.0)

    @field_validator('precision')
    @classmethod
    def _check_precision(cls, value: str) -> str:
        if value not in ('float32', 'float64'):
            raise ValueError(f"precision must be 'float32' or 'float64', got '{value}'")
        return value

    @model_validator(mode='after')
    def _apply_variant_rules(self) -> 'TrainConfig':
        if self.variant.family == 'reg' and self.beta != 0.0:
            logger.info(f"Variant {self.variant.value} trains without calibration loss: beta {self.beta} -> 0")
            self.beta = 0.0
        if self.variant is Variant.ABLP:
            if self.alpha != 0.0:
                logger.info(f"Variant ablp has no regression head: alpha {self.alpha} -> 0")
                self.alpha = 0.0
            if self.beta == 0.0:
                raise ValueError("variant ablp needs beta > 0, it is trained by the calibration loss alone")
        return self


class ScanConfig(_Section):
    """Sliding-window baseline settings"""
    window_lengths: List[int] = Field(default_factory=lambda: [4, 8, 16])
    stride: int = Field(2, ge=1)
    train_epochs: int = Field(0, ge=0)
    margin: float = Field(0.1, ge=0.0)
    learning_rate: float = Field(1e-3, gt=0.0)
    seed: int = 0

    @field_validator('window_lengths')
    @classmethod
    def _check_windows(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("at least one window length is required")
        if any(length < 1 for length in value):
            raise ValueError(f"window lengths must be >= 1, got {value}")
        return value


class EvalConfig(_Section):
    """Evaluation thresholds"""
    sigmas: List[float] = Field(default_factory=lambda: [0.1, 0.3, 0.5])
    curve_sigmas: List[float] = Field(default_factory=lambda: [round(0.05 * i, 2) for i in range(1, 20)])
    split: str = 'test'

    @field_validator('sigmas', 'curve_sigmas')
    @classmethod
    def _check_sigmas(cls, value: List[float]) -> List[float]:
        if any(not 0.0 <= sigma < 1.0 for sigma in value):
            raise ValueError(f"IoU thresholds must lie in [0, 1), got {value}")
        return sorted(value)


class BenchmarkConfig(_Section):
    """Timing benchmark settings"""
    queries: int = Field(100, ge=1)
    warmup: int = Field(5, ge=0)
    split: str = 'test'


class ExperimentConfig(_Section):
    """Every section is optional and falls back to its defaults"""
    synth: SynthConfig = Field(default_factory=SynthConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    scan: ScanConfig = Field(default_factory=ScanConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    benchmark: BenchmarkConfig = Field(default_factory=BenchmarkConfig)


def _format_validation_error(error: ValidationError) -> List[str]:
    return [f"{'.'.join(str(part) for part in item['loc'])}: {item['msg']}" for item in error.errors()]


def parse_config(data: Dict[str, Any], source: str = '<dict>') -> ExperimentConfig:
    """
    Validate a raw configuration mapping

    Raises:
        ConfigurationError: Listing every offending 'section.key'
    """
    try:
        return ExperimentConfig.model_validate(data or {})
    except ValidationError as e:
        problems = _format_validation_error(e)
        keys = ['.'.join(str(part) for part in item['loc']) for item in e.errors()]
        raise ConfigurationError(f"Invalid configuration in {source}: " + '; '.join(problems), keys)


def read_config_data(config_path: Optional[Path]) -> Dict[str, Any]:
    """
    Read a TOML or YAML experiment file without validating it

    Variant rules rewrite train.alpha and train.beta during validation, so
    callers deriving several configurations from one file start from this
    mapping rather than from a validated ExperimentConfig.

    Raises:
        FileNotFoundError: If config file doesn't exist
        ConfigurationError: If the file cannot be parsed
    """
    if config_path is None:
        return {}
    config_path = Path(config_path)
    if not config_path.exists():
        raise FileNotFoundError(f"Configuration file not found: {config_path}")

    suffix = config_path.suffix.lower()
    try:
        if suffix == '.toml':
            with open(config_path, 'rb') as f:
                data = tomllib.load(f)
        elif suffix in ('.yml', '.yaml'):
            with open(config_path, 'r') as f:
                data = yaml.safe_load(f)
        else:
            raise ConfigurationError(f"Unsupported configuration format '{suffix}' for {config_path}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"Invalid TOML syntax in {config_path}: {e}")
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Invalid YAML syntax in {config_path}: {e}")

    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"Top level of {config_path} must be a table of sections")
    return data


def load_config(config_path: Optional[Path]) -> ExperimentConfig:
    """
    Load experiment configuration from a TOML or YAML file

    Args:
        config_path: Path to the file, or None for the defaults

    Returns:
        ExperimentConfig with every section resolved

    Raises:
        FileNotFoundError: If config file doesn't exist
        ConfigurationError: If the file cannot be parsed or holds unknown or invalid keys
    """
    if config_path is None:
        return ExperimentConfig()
    config = parse_config(read_config_data(config_path), str(config_path))
    logger.debug(f"Loaded configuration from {config_path}")
    return config


def _section(data: Dict[str, Any], name: str) -> Dict[str, Any]:
    section = data.setdefault(name, {})
    if not isinstance(section, dict):
        raise ConfigurationError(f"Section [{name}] must be a table", [name])
    return section


def override_data(data: Dict[str, Any], **overrides: Any) -> Dict[str, Any]:
    """
    Copy of a raw configuration mapping with command-line values applied; None values are ignored

    Keys are 'section.field' or one of the shortcuts 'seed' (every section's seed),
    'variant', 'epochs' and 'precision' (train section).

    Raises:
        ConfigurationError: If an override names an unknown section or shortcut
    """
    data = {section: dict(values) if isinstance(values, dict) else values for section, values in data.items()}
    for key, value in overrides.items():
        if value is None:
            continue
        if key == 'seed':
            for section in ('synth', 'train', 'scan'):
                _section(data, section)['seed'] = value
        elif key in ('variant', 'epochs', 'precision'):
            _section(data, 'train')[key] = value
        elif '.' in key:
            section, name = key.split('.', 1)
            if section not in ExperimentConfig.model_fields:
                raise ConfigurationError(f"Unknown configuration section '{section}'", [key])
            _section(data, section)[name] = value
        else:
            raise ConfigurationError(f"Unknown override '{key}'", [key])
    return data


def apply_overrides(config: ExperimentConfig, **overrides: Any) -> ExperimentConfig:
    """
    Return a copy of a validated configuration with command-line values applied

    Raises:
        ConfigurationError: If an override is invalid
    """
    return parse_config(override_data(config.model_dump(mode='json'), **overrides), 'command line overrides')
