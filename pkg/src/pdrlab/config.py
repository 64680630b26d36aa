"""Configuration management for pdrlab."""

import json
import os
from dataclasses import field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Literal

from dotenv import load_dotenv
from pydantic import ConfigDict, TypeAdapter, ValidationError
from pydantic.dataclasses import dataclass

_STRICT = ConfigDict(extra="forbid")


class ConfigError(ValueError):
    """Configuration is invalid; ``errors`` lists every problem found."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("invalid configuration: " + "; ".join(errors))


class LooccMode(str, Enum):
    NONE = "none"
    L = "loocc-l"
    LV = "loocc-lv"


class ProbeMode(str, Enum):
    FROZEN = "frozen"
    FINETUNE = "finetune"


@dataclass(config=_STRICT)
class PerturbRanges:
    """Half-widths of the uniform deltas added to light and camera."""

    ambient: float = 0.5
    diffuse: float = 0.5
    light_pitch: float = 45.0
    light_yaw: float = 45.0
    camera_pitch: float = 22.5
    camera_yaw: float = 45.0


@dataclass(config=_STRICT)
class GeneratorConfig:
    n_shape_classes: int = 5
    n_albedo_classes: int = 4
    max_bumps: int = 4
    hue_jitter: float = 0.08
    # Widens light/camera sampling around the canonical pose (1.0 = training ranges)
    range_scale: float = 1.0
    ranges: PerturbRanges = field(default_factory=PerturbRanges)


@dataclass(config=_STRICT)
class RenderConfig:
    fov_deg: float = 30.0
    sigma_z: float = 0.02
    eps_w: float = 1e-3
    background: float = 0.5
    # Multiplies depth differences before normals are formed (1.0 = unit pixel spacing)
    normal_scale: float = 1.0
    pivot_depth: float = 1.0
    near: float = 1e-3


@dataclass(config=_STRICT)
class ArchConfig:
    # one stride-2 block per entry; image_size must be divisible by 2 ** len(enc_channels)
    enc_channels: tuple[int, ...] = (32, 64, 128, 256)
    dec_channels: tuple[int, ...] = (256, 128, 64, 32)
    mlp_hidden: int = 256


@dataclass(config=_STRICT)
class LooccConfig:
    mode: LooccMode = LooccMode.NONE
    tau: float = 0.5
    alpha: float = 0.01
    beta: float = 1.0
    batch_size: int = 16
    lr: float = 1e-3
    patience: int = 10
    detach_aug: bool = False
    perturb: PerturbRanges = field(default_factory=PerturbRanges)


@dataclass(config=_STRICT)
class TrainConfig:
    max_epochs: int = 100
    # Raise at the first op producing NaN/Inf (slow)
    detect_anomaly: bool = False


@dataclass(config=_STRICT)
class ProbeConfig:
    n_train: int = 100
    mode: ProbeMode = ProbeMode.FROZEN
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-3
    hidden_dim: int = 0
    label: Literal["shape", "albedo"] = "albedo"


@dataclass(config=_STRICT)
class SeedConfig:
    data: int = 0
    init: int = 1
    train: int = 2


@dataclass(config=_STRICT)
class DatasetConfig:
    n: int = 1000
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)


@dataclass(config=_STRICT)
class ExperimentConfig:
    """Everything a run depends on; persisted with every artifact."""

    image_size: int = 64
    feature_dim: int = 256
    precision: Literal["float32", "float64"] = "float32"
    threads: int = 1
    output_dir: Path = Path("localdata")
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    render: RenderConfig = field(default_factory=lambda: RenderConfig(normal_scale=16.0))
    model: ArchConfig = field(default_factory=ArchConfig)
    loocc: LooccConfig = field(default_factory=LooccConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)

    @property
    def db_path(self) -> Path:
        return self.output_dir / "runs.db"

    @property
    def log_path(self) -> Path:
        return self.output_dir / "pdrlab.log"

    @property
    def dataset_dir(self) -> Path:
        return self.output_dir / "dataset"

    def run_dir(self, mode: LooccMode | None = None) -> Path:
        return self.output_dir / f"run-{(mode or self.loocc.mode).value}"


_ADAPTER = TypeAdapter(ExperimentConfig)


def config_to_dict(config: ExperimentConfig) -> dict[str, Any]:
    """JSON-ready dict (paths as strings, enums as values, tuples as lists)."""
    return _ADAPTER.dump_python(config, mode="json")


def config_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    """Build a config from a (possibly partial) dict, rejecting unknown keys and bad types."""
    try:
        return _ADAPTER.validate_python(data)
    except ValidationError as e:
        raise ConfigError([
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}"
            for err in e.errors()
        ]) from None


def config_schema() -> dict[str, Any]:
    return _ADAPTER.json_schema()


def load_config(
    config_file: Path | None = None,
    env_file: Path | None = None,
) -> ExperimentConfig:
    """Load configuration: JSON file, then environment overrides.

    An optional ``pdrlab.env`` (cwd first, then repo root) is read into the
    environment; ``PDR_THREADS``, ``PDR_PRECISION``, ``PDR_OUTPUT_DIR`` and
    ``PDR_LOG_LEVEL`` then override the file.
    """
    app_root = Path(__file__).parent.parent.parent

    if env_file is None:
        for candidate in [
            Path.cwd() / "pdrlab.env",
            app_root / "pdrlab.env",
        ]:
            if candidate.exists():
                env_file = candidate
                break

    if env_file and env_file.exists():
        load_dotenv(env_file)

    data: dict[str, Any] = {}
    if config_file is not None:
        try:
            data = json.loads(Path(config_file).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError([f"{config_file}: {e.strerror or e}"]) from e
        except json.JSONDecodeError as e:
            raise ConfigError([f"{config_file}: invalid JSON ({e})"]) from e
        if not isinstance(data, dict):
            raise ConfigError([f"{config_file}: top level must be a JSON object"])

    config = config_from_dict(data)

    # Parse optional integer values
    def get_int(key: str, default: int) -> int:
        try:
            return int(os.getenv(key, str(default)))
        except ValueError:
            return default

    output_dir_str = os.getenv("PDR_OUTPUT_DIR")
    try:
        config = replace(
            config,
            threads=get_int("PDR_THREADS", config.threads),
            precision=os.getenv("PDR_PRECISION", config.precision),
            log_level=os.getenv("PDR_LOG_LEVEL", config.log_level).upper(),
            output_dir=Path(output_dir_str).expanduser() if output_dir_str else config.output_dir,
        )
    except ValidationError as e:
        raise ConfigError([f"environment override: {err['msg']}" for err in e.errors()]) from None
    return config


def validate_config(config: ExperimentConfig) -> list[str]:
    """Validate configuration and return list of errors."""
    errors = []

    arch = config.model
    n_blocks = len(arch.enc_channels)
    if n_blocks < 1 or len(arch.dec_channels) != n_blocks:
        errors.append(
            f"model.enc_channels and model.dec_channels must be non-empty and equally long "
            f"(got: {len(arch.enc_channels)}, {len(arch.dec_channels)})"
        )
    elif config.image_size < 2 ** n_blocks or config.image_size % 2 ** n_blocks:
        errors.append(f"image_size must be a positive multiple of {2 ** n_blocks} (got: {config.image_size})")
    if any(c < 1 for c in (*arch.enc_channels, *arch.dec_channels)) or arch.mlp_hidden < 1:
        errors.append("model channel widths and mlp_hidden must be positive")
    if config.feature_dim < 1:
        errors.append(f"feature_dim must be positive (got: {config.feature_dim})")
    if config.precision not in ("float32", "float64"):
        errors.append(f"precision must be float32 or float64 (got: {config.precision})")
    if config.log_level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        errors.append(f"log_level must be DEBUG, INFO, WARNING or ERROR (got: {config.log_level})")
    if config.threads < 1:
        errors.append(f"threads must be at least 1 (got: {config.threads})")

    gen = config.generator
    if gen.n_shape_classes < 1 or gen.n_shape_classes > 5:
        errors.append(f"generator.n_shape_classes must be in [1, 5] (got: {gen.n_shape_classes})")
    if gen.n_albedo_classes < 1 or gen.n_albedo_classes > 4:
        errors.append(f"generator.n_albedo_classes must be in [1, 4] (got: {gen.n_albedo_classes})")
    if gen.max_bumps < 0 or gen.max_bumps > 4:
        errors.append(f"generator.max_bumps must be in [0, 4] (got: {gen.max_bumps})")
    if gen.range_scale < 0:
        errors.append(f"generator.range_scale must be non-negative (got: {gen.range_scale})")

    render = config.render
    if render.sigma_z <= 0:
        errors.append(f"render.sigma_z must be positive (got: {render.sigma_z})")
    if render.eps_w <= 0:
        errors.append(f"render.eps_w must be positive (got: {render.eps_w})")
    if not 0 < render.fov_deg < 180:
        errors.append(f"render.fov_deg must be in (0, 180) (got: {render.fov_deg})")
    if render.pivot_depth <= 0:
        errors.append(f"render.pivot_depth must be positive (got: {render.pivot_depth})")

    loocc = config.loocc
    if loocc.tau <= 0:
        errors.append(f"loocc.tau must be positive (got: {loocc.tau})")
    if loocc.alpha < 0 or loocc.beta < 0:
        errors.append(f"loocc.alpha and loocc.beta must be non-negative (got: {loocc.alpha}, {loocc.beta})")
    if loocc.batch_size < 1:
        errors.append(f"loocc.batch_size must be at least 1 (got: {loocc.batch_size})")
    elif loocc.mode != LooccMode.NONE and loocc.batch_size < 2:
        errors.append("loocc.batch_size must be at least 2 when a contrastive mode is enabled")
    if loocc.lr <= 0:
        errors.append(f"loocc.lr must be positive (got: {loocc.lr})")
    if loocc.patience < 1:
        errors.append(f"loocc.patience must be at least 1 (got: {loocc.patience})")

    if config.train.max_epochs < 0:
        errors.append(f"train.max_epochs must be non-negative (got: {config.train.max_epochs})")

    probe = config.probe
    if probe.n_train < 1 or probe.epochs < 1 or probe.batch_size < 1:
        errors.append("probe.n_train, probe.epochs and probe.batch_size must be positive")
    if probe.hidden_dim < 0:
        errors.append(f"probe.hidden_dim must be non-negative (got: {probe.hidden_dim})")

    ds = config.dataset
    if ds.n < 10:
        errors.append(f"dataset.n must be at least 10 (got: {ds.n})")
    if any(f < 0 for f in ds.fractions) or abs(sum(ds.fractions) - 1.0) > 1e-9:
        errors.append(f"dataset.fractions must be non-negative and sum to 1 (got: {list(ds.fractions)})")

    return errors


def check_config(config: ExperimentConfig) -> ExperimentConfig:
    """Return ``config`` or raise ConfigError listing every problem."""
    errors = validate_config(config)
    if errors:
        raise ConfigError(errors)
    return config


# Global config instance (lazy loaded)
_config: ExperimentConfig | None = None


def get_config() -> ExperimentConfig:
    """Get the global config instance, loading if necessary."""
    global _config
    if _config is None:
        _config = load_config()
    return _config


def set_config(config: ExperimentConfig | None) -> None:
    """Install ``config`` as the process-wide instance (None resets)."""
    global _config
    _config = config


def ensure_output_dir(config: ExperimentConfig) -> None:
    """Ensure the output directory exists."""
    config.output_dir.mkdir(parents=True, exist_ok=True)
