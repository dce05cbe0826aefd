"""
Configuration models for SceneGuard
Every tunable lives here as a validated pydantic model
"""
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from sceneguard.errors import ConfigurationError

logger = logging.getLogger(__name__)

CANONICAL_RATE_HZ = 16000
DEFAULT_SEED = 1337

# TAU Urban Acoustic Scenes taxonomy; a default, not a closed enum
DEFAULT_SCENE_LABELS = (
    "airport",
    "bus",
    "metro",
    "metro_station",
    "park",
    "public_square",
    "shopping_mall",
    "street_pedestrian",
    "street_traffic",
    "tram",
)

EXECUTION_ONLY = {"jobs", "output_dir", "log_dir", "log_level"}

ENV_OVERRIDES = {
    "SCENEGUARD_CODEC_ENCODE_CMD": "encode_cmd",
    "SCENEGUARD_CODEC_DECODE_CMD": "decode_cmd",
    "SCENEGUARD_ASR_CMD": "asr_cmd",
    "SCENEGUARD_ENCODER_CMD": "encoder_cmd",
}


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class OptimConfig(_Model):
    """Hyperparameters of the mask/strength optimization"""
    lr: float = 0.01
    epochs: int = 50
    lambda_sim: float = 1.0
    lambda_reg: float = 0.01
    clip_norm: float = 1.0
    snr_min_db: float = 10.0
    snr_max_db: float = 20.0
    seed: int = DEFAULT_SEED
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init_std: float = 0.1
    normalize_output: bool = False

    @field_validator("lr", "clip_norm", "adam_eps", "init_std")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be > 0")
        return value

    @field_validator("epochs")
    @classmethod
    def _at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ValueError("epochs must be >= 1")
        return value

    @field_validator("adam_beta1", "adam_beta2")
    @classmethod
    def _unit_interval(cls, value: float) -> float:
        if not 0.0 <= value < 1.0:
            raise ValueError("Adam betas must lie in [0, 1)")
        return value

    @model_validator(mode="after")
    def _snr_range(self) -> "OptimConfig":
        if not self.snr_min_db < self.snr_max_db:
            raise ValueError(f"snr_min_db ({self.snr_min_db}) must be < snr_max_db ({self.snr_max_db})")
        return self


class SpectralSubtractionConfig(_Model):
    alpha: float = 2.0
    beta: float = 0.01
    noise_quantile: float = 0.1
    fft_size: int = 512
    hop: int = 128

    @model_validator(mode="after")
    def _check(self) -> "SpectralSubtractionConfig":
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0 <= self.beta < 1:
            raise ValueError("beta must lie in [0, 1)")
        if not 0 < self.noise_quantile <= 1:
            raise ValueError("noise_quantile must lie in (0, 1]")
        if not 0 < self.hop <= self.fft_size:
            raise ValueError("hop must lie in (0, fft_size]")
        return self


class CodecHookConfig(_Model):
    """External lossy codec round-trip, e.g. an mp3 encoder/decoder pair"""
    encode_cmd: Optional[str] = None
    decode_cmd: Optional[str] = None
    bitrate: str = "128k"
    encoded_suffix: str = ".mp3"

    @property
    def configured(self) -> bool:
        return bool(self.encode_cmd and self.decode_cmd)


class CountermeasureSpec(_Model):
    kind: Literal["none", "spectral_subtraction", "lowpass_3400", "downsample_8k", "external_codec"]
    name: Optional[str] = None
    cutoff_hz: float = 3400.0
    order: int = 4
    target_rate_hz: int = 8000
    spectral: SpectralSubtractionConfig = Field(default_factory=SpectralSubtractionConfig)
    codec: CodecHookConfig = Field(default_factory=CodecHookConfig)

    @model_validator(mode="after")
    def _check(self) -> "CountermeasureSpec":
        if self.kind == "lowpass_3400":
            if self.cutoff_hz <= 0:
                raise ValueError("cutoff_hz must be > 0")
            if self.order < 2 or self.order % 2:
                raise ValueError("lowpass order must be even and >= 2")
        if self.kind == "downsample_8k" and self.target_rate_hz <= 0:
            raise ValueError("target_rate_hz must be > 0")
        return self

    @property
    def label(self) -> str:
        return self.name or self.kind


def default_countermeasures() -> List[CountermeasureSpec]:
    return [
        CountermeasureSpec(kind="none"),
        CountermeasureSpec(kind="external_codec", name="mp3_128k", codec=CodecHookConfig(bitrate="128k")),
        CountermeasureSpec(kind="external_codec", name="mp3_64k", codec=CodecHookConfig(bitrate="64k")),
        CountermeasureSpec(kind="spectral_subtraction"),
        CountermeasureSpec(kind="lowpass_3400"),
        CountermeasureSpec(kind="downsample_8k"),
    ]


class EncoderConfig(_Model):
    kind: Literal["builtin_melstats", "external_command"] = "builtin_melstats"
    command: Optional[str] = None
    n_mels: int = 40
    fft_size: int = 512
    hop: int = 160

    @model_validator(mode="after")
    def _check(self) -> "EncoderConfig":
        if self.kind == "external_command" and not self.command:
            raise ValueError("external_command encoder needs 'command'")
        return self


class DefenseCriteria(_Model):
    """Protection and usability thresholds of the defense goal"""
    sim_threshold: float = 0.95
    stoi_threshold: float = 0.85
    wer_threshold: float = 0.15


class AblationConfig(_Model):
    snr_ranges: List[Tuple[float, float]] = [(5.0, 10.0), (10.0, 20.0), (15.0, 25.0), (20.0, 30.0)]
    lambda_grid: List[float] = [0.001, 0.01, 0.1]
    epoch_grid: List[int] = [20, 50, 100]


class ExperimentConfig(_Model):
    corpus_manifest: Path
    noise_manifest: Optional[Path] = None
    output_dir: Path = Path("results")
    seed: int = DEFAULT_SEED
    jobs: int = 0
    optim: OptimConfig = Field(default_factory=OptimConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    countermeasures: List[CountermeasureSpec] = Field(default_factory=default_countermeasures)
    scene_labels: Optional[List[str]] = list(DEFAULT_SCENE_LABELS)
    asr_cmd: Optional[str] = None
    hypothesis_transcripts: Optional[Path] = None
    criteria: DefenseCriteria = Field(default_factory=DefenseCriteria)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    bootstrap_iterations: int = 10000
    permutation_iterations: int = 10000
    ci_level: float = 0.95
    log_dir: Optional[Path] = None
    log_level: str = "INFO"

    @model_validator(mode="before")
    @classmethod
    def _propagate_seed(cls, data: Any) -> Any:
        if isinstance(data, dict) and "seed" in data:
            optim = data.get("optim") or {}
            if isinstance(optim, OptimConfig):
                optim = optim.model_dump()
            data = {**data, "optim": {**optim, "seed": data["seed"]}}
        return data

    @field_validator("ci_level")
    @classmethod
    def _level(cls, value: float) -> float:
        if not 0 < value < 1:
            raise ValueError("ci_level must lie in (0, 1)")
        return value

    @field_validator("bootstrap_iterations", "permutation_iterations")
    @classmethod
    def _iterations(cls, value: int) -> int:
        if value < 1:
            raise ValueError("iterations must be >= 1")
        return value

    @property
    def worker_count(self) -> int:
        return self.jobs if self.jobs > 0 else (os.cpu_count() or 1)

    def resolved(self) -> Dict[str, Any]:
        """Configuration echo for report headers; execution-only settings are left out"""
        return self.model_dump(mode="json", exclude=EXECUTION_ONLY)


def _read_raw(path: Path) -> Dict[str, Any]:
    try:
        if path.suffix.lower() == ".toml":
            with open(path, "rb") as f:
                return tomllib.load(f)
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise ConfigurationError(f"Cannot read config {path}: {e}") from e
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigurationError(f"Cannot parse config {path}: {e}") from e


def _resolve_paths(raw: Dict[str, Any], base: Path) -> Dict[str, Any]:
    for key in ("corpus_manifest", "noise_manifest", "output_dir", "hypothesis_transcripts", "log_dir"):
        value = raw.get(key)
        if value and not Path(value).is_absolute():
            raw[key] = str(base / value)
    return raw


def apply_env_overrides(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Apply hook command overrides from the environment (and a .env file)"""
    load_dotenv()
    env = {key: os.getenv(key) for key in ENV_OVERRIDES if os.getenv(key)}
    if not env:
        return raw

    if "SCENEGUARD_ASR_CMD" in env:
        raw["asr_cmd"] = env["SCENEGUARD_ASR_CMD"]
    if "SCENEGUARD_ENCODER_CMD" in env:
        encoder = dict(raw.get("encoder") or {})
        encoder["kind"] = "external_command"
        encoder["command"] = env["SCENEGUARD_ENCODER_CMD"]
        raw["encoder"] = encoder

    codec_keys = {k: ENV_OVERRIDES[k] for k in ("SCENEGUARD_CODEC_ENCODE_CMD", "SCENEGUARD_CODEC_DECODE_CMD") if k in env}
    if codec_keys:
        specs = raw.get("countermeasures")
        if specs is None:
            specs = [spec.model_dump() for spec in default_countermeasures()]
        for spec in specs:
            if spec.get("kind") == "external_codec":
                codec = dict(spec.get("codec") or {})
                for env_key, field in codec_keys.items():
                    codec[field] = env[env_key]
                spec["codec"] = codec
        raw["countermeasures"] = specs

    logger.info(f"Applied environment overrides: {sorted(env)}")
    return raw


def build_config(raw: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid experiment config: {e}") from e


def load_config(path, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Load an experiment configuration

    Args:
        path: TOML or JSON file
        overrides: top-level keys replacing file values (CLI flags)

    Returns:
        Validated ExperimentConfig
    """
    path = Path(path)
    raw = _resolve_paths(_read_raw(path), path.parent)
    raw = apply_env_overrides(raw)
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    config = build_config(raw)

    if not config.corpus_manifest.exists():
        raise ConfigurationError(f"Corpus manifest not found: {config.corpus_manifest}")
    if config.noise_manifest is not None and not config.noise_manifest.exists():
        raise ConfigurationError(f"Noise manifest not found: {config.noise_manifest}")
    if config.hypothesis_transcripts is not None and not config.hypothesis_transcripts.exists():
        raise ConfigurationError(f"Hypothesis transcripts not found: {config.hypothesis_transcripts}")

    logger.info(f"Loaded config from {path}")
    return config
