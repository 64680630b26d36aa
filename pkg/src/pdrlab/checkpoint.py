"""Checkpoint directories: manifest.json plus one PDRT file per tensor."""

import logging
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .ad.optim import Adam
from .config import ExperimentConfig, config_from_dict, config_to_dict
from .nets import InverseRenderer
from .util.tensorio import DatasetError, read_json, read_tensor, write_json, write_tensor

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class CompatibilityError(ValueError):
    """A checkpoint does not fit the dataset or model it is used with."""


@dataclass
class Checkpoint:
    path: Path
    manifest: dict[str, Any]
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]

    @property
    def config(self) -> ExperimentConfig:
        return config_from_dict(self.manifest["config"])

    @property
    def epoch(self) -> int:
        return int(self.manifest["epoch"])

    @property
    def best_val(self) -> float | None:
        return self.manifest["best_val"]

    @property
    def mode(self) -> str:
        return self.manifest["mode"]

    @property
    def rng_state(self) -> dict[str, Any]:
        return self.manifest["rng_state"]

    def build_model(self) -> InverseRenderer:
        cfg = self.config
        model = InverseRenderer(cfg.image_size, cfg.feature_dim, cfg.model, seed=cfg.seeds.init)
        try:
            model.load_state_dict(self.params)
        except ValueError as e:
            raise CompatibilityError(f"{self.path}: {e}") from e
        return model

    def restore_optimizer(self, optimizer: Adam, model: InverseRenderer) -> None:
        names = [name for name, _ in model.named_parameters()]
        optimizer.load_state_dict({
            "t": self.manifest["adam"]["t"],
            "m": [self.adam_m[n] for n in names],
            "v": [self.adam_v[n] for n in names],
        })


def _file_name(name: str) -> str:
    return name.replace(".", "_") + ".pdrt"


def save_checkpoint(
    path: Path,
    model: InverseRenderer,
    optimizer: Adam | None,
    config: ExperimentConfig,
    epoch: int,
    best_val: float | None,
    rng_state: dict[str, Any] | None = None,
    extra: dict[str, Any] | None = None,
) -> None:
    """Write a checkpoint directory, replacing any previous one at ``path``."""
    path = Path(path)
    staging = path.with_name(path.name + ".tmp")
    if staging.exists():
        shutil.rmtree(staging)

    named = list(model.named_parameters())
    parameters = {}
    for name, p in named:
        rel = f"params/{_file_name(name)}"
        write_tensor(staging / rel, p.data)
        parameters[name] = {"file": rel, "shape": list(p.shape), "dtype": p.data.dtype.name}

    adam: dict[str, Any] = {"t": 0, "m": {}, "v": {}}
    if optimizer is not None:
        state = optimizer.state_dict()
        adam["t"] = state["t"]
        for (name, _), m, v in zip(named, state["m"], state["v"]):
            adam["m"][name] = f"adam/m/{_file_name(name)}"
            adam["v"][name] = f"adam/v/{_file_name(name)}"
            write_tensor(staging / adam["m"][name], m)
            write_tensor(staging / adam["v"][name], v)

    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config_to_dict(config),
        "mode": config.loocc.mode.value,
        "epoch": epoch,
        "best_val": best_val,
        "rng_state": rng_state,
        "arch": model.arch,
        "parameters": parameters,
        "adam": adam,
        **(extra or {}),
    }
    write_json(staging / "manifest.json", manifest)
    try:
        if path.exists():
            shutil.rmtree(path)
        staging.rename(path)
    except OSError as e:
        raise DatasetError(path, e.strerror or e) from e
    logger.debug(f"Saved checkpoint epoch {epoch} to {path}")


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    manifest = read_json(path / "manifest.json")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CompatibilityError(f"{path}: unsupported checkpoint format {manifest.get('format_version')}")
    params = {name: read_tensor(path / info["file"]) for name, info in manifest["parameters"].items()}
    adam = manifest["adam"]
    return Checkpoint(
        path=path,
        manifest=manifest,
        params=params,
        adam_m={name: read_tensor(path / rel) for name, rel in adam["m"].items()},
        adam_v={name: read_tensor(path / rel) for name, rel in adam["v"].items()},
    )


def check_compatible(checkpoint: Checkpoint, image_size: int) -> None:
    """Raise CompatibilityError when the checkpoint cannot encode images of ``image_size``."""
    cfg = checkpoint.config
    if cfg.image_size != image_size:
        raise CompatibilityError(
            f"checkpoint {checkpoint.path} was trained on {cfg.image_size}x{cfg.image_size} images, "
            f"dataset has {image_size}x{image_size}"
        )
