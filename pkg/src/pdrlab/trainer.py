"""Optimization loop with early stopping, JSON-lines metrics and resume."""

import logging
import time
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .ad.optim import Adam
from .ad.tensor import as_tensor, detect_anomaly, no_grad
from .checkpoint import check_compatible, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, LooccMode
from .loocc import reconstruction_loss, total_loss
from .nets import InverseRenderer
from .renderer import Renderer
from .reports import EpochMetrics, append_jsonl, read_jsonl
from .scenegen import Dataset, DatasetSplit
from .util.seeding import rng_from_seed

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"

ProgressFn = Callable[[int, int, str], None]


class EarlyStopping:
    """Stops once ``patience`` consecutive observations fail to improve on the best."""

    def __init__(self, patience: int = 10, best: float | None = None, bad_epochs: int = 0):
        self.patience = patience
        self.best = best
        self.bad_epochs = bad_epochs

    def step(self, value: float) -> bool:
        """Record ``value``; True when training should stop."""
        if self.best is None or value < self.best:
            self.best = value
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    def state(self) -> dict:
        return {"best": self.best, "bad_epochs": self.bad_epochs}


@dataclass
class TrainResult:
    """Result of a training run."""
    run_dir: Path
    best_epoch: int = 0
    best_val: float | None = None
    last_epoch: int = 0
    stopped_early: bool = False
    metrics: list[EpochMetrics] = field(default_factory=list)

    @property
    def best_dir(self) -> Path:
        return self.run_dir / "best"

    @property
    def last_dir(self) -> Path:
        return self.run_dir / "last"


def evaluate_recon(
    model: InverseRenderer,
    renderer: Renderer,
    images: np.ndarray,
    batch_size: int = 32,
) -> float:
    """Mean L1 reconstruction error over ``images`` without recording a graph."""
    if len(images) == 0:
        raise ValueError("cannot evaluate on an empty split")
    total = 0.0
    with no_grad():
        for start in range(0, len(images), batch_size):
            x = as_tensor(images[start:start + batch_size])
            _, params = model(x)
            total += reconstruction_loss(x, renderer(params)).item() * x.shape[0]
    return total / len(images)


def _batches(order: np.ndarray, batch_size: int, min_size: int) -> list[np.ndarray]:
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    return [c for c in chunks if len(c) >= min_size]


def train(
    dataset: Dataset,
    config: ExperimentConfig,
    run_dir: Path,
    resume: bool = False,
    on_progress: ProgressFn | None = None,
    on_epoch: Callable[[EpochMetrics], None] | None = None,
) -> TrainResult:
    """Train an InverseRenderer on the dataset's train split.

    Writes ``metrics.jsonl`` plus ``best/`` and ``last/`` checkpoints into
    ``run_dir``. With ``resume`` the run continues from ``last/``.

    Args:
        dataset: Dataset with non-empty train and val splits
        config: Experiment configuration (mode, hyperparameters, seeds)
        run_dir: Output directory for this run
        resume: Continue from run_dir/last
        on_progress: Optional callback(current, total, message) per batch
        on_epoch: Optional callback receiving each EpochMetrics record
    """
    loocc = config.loocc
    train_split: DatasetSplit = dataset.split("train")
    val_split: DatasetSplit = dataset.split("val")
    if len(train_split) == 0 or len(val_split) == 0:
        raise ValueError(
            f"training needs non-empty train and val splits (got {len(train_split)} and {len(val_split)})"
        )
    if dataset.image_size != config.image_size:
        raise ValueError(
            f"dataset image size {dataset.image_size} does not match config image_size {config.image_size}"
        )
    min_batch = 1 if loocc.mode == LooccMode.NONE else 2
    if len(train_split) < min_batch:
        raise ValueError(f"train split too small for mode {loocc.mode.value}")

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = run_dir / METRICS_FILE
    result = TrainResult(run_dir=run_dir)

    model = InverseRenderer(config.image_size, config.feature_dim, config.model, seed=config.seeds.init)
    renderer = Renderer(config.image_size, config.render)
    optimizer = Adam(model.parameters(), lr=loocc.lr)
    rng = rng_from_seed(config.seeds.train)
    stopper = EarlyStopping(loocc.patience)
    start_epoch = 1

    if resume:
        ckpt = load_checkpoint(result.last_dir)
        check_compatible(ckpt, dataset.image_size)
        model.load_state_dict(ckpt.params)
        ckpt.restore_optimizer(optimizer, model)
        rng.bit_generator.state = ckpt.rng_state
        stopper = EarlyStopping(loocc.patience, **ckpt.manifest["stopper"])
        start_epoch = ckpt.epoch + 1
        result.metrics = [m for m in read_jsonl(metrics_path) if m.epoch <= ckpt.epoch] if metrics_path.exists() else []
        best = load_checkpoint(result.best_dir) if result.best_dir.exists() else None
        result.best_epoch = best.epoch if best else 0
        result.best_val = stopper.best
        result.last_epoch = ckpt.epoch
        logger.info(f"Resuming {run_dir} at epoch {start_epoch}")
        if stopper.bad_epochs >= stopper.patience:
            result.stopped_early = True
            return result
    else:
        if metrics_path.exists():
            metrics_path.unlink()
        started = time.perf_counter()
        val_recon = evaluate_recon(model, renderer, val_split.images)
        record = EpochMetrics(
            epoch=0,
            train_recon=evaluate_recon(model, renderer, train_split.images),
            train_cont=None,
            val_recon=val_recon,
            lr=loocc.lr,
            seconds=time.perf_counter() - started,
        )
        stopper.step(val_recon)
        _save(result.best_dir, model, optimizer, config, 0, stopper, rng)
        _save(result.last_dir, model, optimizer, config, 0, stopper, rng)
        result.best_val = val_recon
        _emit(record, metrics_path, result, on_epoch)

    anomaly = detect_anomaly() if config.train.detect_anomaly else nullcontext()
    with anomaly:
        for epoch in range(start_epoch, config.train.max_epochs + 1):
            started = time.perf_counter()
            order = rng.permutation(len(train_split))
            batches = _batches(order, loocc.batch_size, min_batch)
            recon_sum = cont_sum = 0.0
            seen = 0
            for b, idx in enumerate(batches):
                x = as_tensor(train_split.images[idx])
                optimizer.zero_grad()
                loss, terms = total_loss(x, model, renderer, loocc, rng)
                loss.backward()
                optimizer.step()
                recon_sum += terms.recon * len(idx)
                cont_sum += terms.cont * len(idx)
                seen += len(idx)
                if on_progress:
                    on_progress(b + 1, len(batches), f"epoch {epoch}: loss {terms.total:.4f}")

            val_recon = evaluate_recon(model, renderer, val_split.images)
            improved = stopper.best is None or val_recon < stopper.best
            stop = stopper.step(val_recon)
            if improved:
                result.best_epoch = epoch
                result.best_val = val_recon
                _save(result.best_dir, model, optimizer, config, epoch, stopper, rng)
            _save(result.last_dir, model, optimizer, config, epoch, stopper, rng)
            record = EpochMetrics(
                epoch=epoch,
                train_recon=recon_sum / max(seen, 1),
                train_cont=cont_sum / max(seen, 1) if loocc.mode != LooccMode.NONE else None,
                val_recon=val_recon,
                lr=loocc.lr,
                seconds=time.perf_counter() - started,
            )
            _emit(record, metrics_path, result, on_epoch)
            result.last_epoch = epoch
            logger.info(
                f"epoch {epoch}: train_recon={record.train_recon:.5f} val_recon={val_recon:.5f}"
                + (" (best)" if improved else "")
            )
            if stop:
                result.stopped_early = True
                logger.info(f"Early stopping after {stopper.bad_epochs} epochs without improvement")
                break
    return result


def _save(path, model, optimizer, config, epoch, stopper, rng) -> None:
    save_checkpoint(
        path, model, optimizer, config, epoch, stopper.best,
        rng_state=rng.bit_generator.state,
        extra={"stopper": stopper.state()},
    )


def _emit(record: EpochMetrics, path: Path, result: TrainResult, on_epoch) -> None:
    append_jsonl(path, record)
    result.metrics.append(record)
    if on_epoch:
        on_epoch(record)
