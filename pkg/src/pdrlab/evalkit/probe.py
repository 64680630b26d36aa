"""Supervised probes on learned representations."""

import logging
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from ..ad import ops
from ..ad.optim import Adam
from ..ad.tensor import Tensor, as_tensor, no_grad
from ..config import ProbeConfig, ProbeMode
from ..layers import Linear, Module
from ..nets import DEFAULT_BLOCKS, InverseRenderer, extract_representation
from ..util.seeding import rng_from_seed

logger = logging.getLogger(__name__)

ProgressFn = Callable[[int, int, str], None]


class ProbeHead(Module):
    """A linear classifier, or a one-hidden-layer MLP when ``hidden_dim`` > 0."""

    def __init__(self, in_dim: int, n_classes: int, hidden_dim: int, rng: np.random.Generator):
        self.hidden_dim = hidden_dim
        if hidden_dim > 0:
            self.fc1 = Linear(in_dim, hidden_dim, rng)
            self.fc2 = Linear(hidden_dim, n_classes, rng)
        else:
            self.fc = Linear(in_dim, n_classes, rng)

    def forward(self, x: Tensor) -> Tensor:
        if self.hidden_dim > 0:
            return self.fc2(ops.relu(self.fc1(x)))
        return self.fc(x)


@dataclass
class ProbeResult:
    train_accuracy: float
    test_accuracy: float
    n_train: int
    n_test: int
    n_classes: int
    head: ProbeHead
    classes: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    @property
    def chance(self) -> float:
        return 1.0 / self.n_classes

    def scores(self, features: np.ndarray | Tensor) -> Tensor:
        """Class logits for raw (unstandardized) features."""
        return self.head((as_tensor(features) - self.mean) / self.std)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    onehot = np.eye(logits.shape[-1])[targets]
    return -ops.mean(ops.sum(ops.log_softmax(logits, axis=-1) * onehot, axis=-1))


def predict(logits: np.ndarray) -> np.ndarray:
    """Argmax; two-class heads use a 50% threshold on the second class."""
    if logits.shape[-1] == 2:
        return (logits[:, 1] >= logits[:, 0]).astype(np.intp)
    return np.argmax(logits, axis=-1)


def _features(model: InverseRenderer, images: np.ndarray, blocks: tuple[str, ...], batch_size: int = 64) -> np.ndarray:
    with no_grad():
        chunks = [
            extract_representation(model.encode(images[i:i + batch_size]), blocks).data
            for i in range(0, len(images), batch_size)
        ]
    return np.concatenate(chunks, axis=0)


def linear_probe(
    train_inputs: np.ndarray,
    train_labels: np.ndarray,
    test_inputs: np.ndarray,
    test_labels: np.ndarray,
    n_train: int | None = None,
    mode: ProbeMode = ProbeMode.FROZEN,
    model: InverseRenderer | None = None,
    blocks: Iterable[str] = DEFAULT_BLOCKS,
    cfg: ProbeConfig | None = None,
    seed: int = 0,
    on_progress: ProgressFn | None = None,
) -> ProbeResult:
    """Train a classification head with cross-entropy and Adam, report accuracies.

    Without ``model`` the inputs are feature matrices (N, D). With ``model``
    they are images and features come from ``extract_representation``; in
    finetune mode the encoders are updated together with the head, in frozen
    mode they are left untouched. Features are standardized with statistics
    of the selected training subset.

    Args:
        train_inputs: Training features or images
        train_labels: Integer labels for train_inputs
        test_inputs: Held-out features or images
        test_labels: Integer labels for test_inputs
        n_train: Number of labeled training samples to use (default cfg.n_train)
        mode: frozen or finetune
        model: Inverse renderer supplying the encoders
        blocks: Feature blocks forming the representation
        cfg: Epochs, batch size, lr and hidden_dim
        seed: Seeds the subset choice, head init and shuffling
        on_progress: Optional callback(current, total, message) per epoch
    """
    cfg = cfg or ProbeConfig()
    mode = ProbeMode(mode)
    n_train = cfg.n_train if n_train is None else n_train
    train_labels = np.asarray(train_labels).reshape(-1)
    test_labels = np.asarray(test_labels).reshape(-1)
    if len(train_inputs) != len(train_labels) or len(test_inputs) != len(test_labels):
        raise ValueError("inputs and labels differ in length")
    if n_train < 1 or n_train > len(train_inputs):
        raise ValueError(f"n_train must be in [1, {len(train_inputs)}] (got: {n_train})")
    if len(test_inputs) == 0:
        raise ValueError("probe needs a non-empty test set")
    if mode == ProbeMode.FINETUNE and model is None:
        raise ValueError("finetune mode needs a model")
    blocks = tuple(blocks)

    classes = np.unique(np.concatenate([train_labels, test_labels]))
    if len(classes) < 2:
        raise ValueError("probe needs at least two classes")
    y_train = np.searchsorted(classes, train_labels)
    y_test = np.searchsorted(classes, test_labels)

    rng = rng_from_seed(seed)
    subset = np.sort(rng.permutation(len(train_inputs))[:n_train])
    x_train = np.asarray(train_inputs)[subset]
    y_train = y_train[subset]
    x_test = np.asarray(test_inputs)

    finetune = mode == ProbeMode.FINETUNE
    if model is not None and not finetune:
        x_train = _features(model, x_train, blocks)
        x_test = _features(model, x_test, blocks)
    base = _features(model, x_train, blocks) if finetune else x_train
    mean = base.mean(axis=0)
    std = base.std(axis=0)
    std = np.where(std > 1e-8, std, 1.0)

    head = ProbeHead(base.shape[1], len(classes), cfg.hidden_dim, rng)
    params = head.parameters() + (model.encoder_parameters() if finetune else [])
    optimizer = Adam(params, lr=cfg.lr)

    def represent(x: np.ndarray) -> Tensor:
        if finetune:
            return extract_representation(model.encode(x), blocks)
        return as_tensor(x)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            optimizer.zero_grad()
            logits = head((represent(x_train[idx]) - mean) / std)
            loss = cross_entropy(logits, y_train[idx])
            loss.backward()
            optimizer.step()
        if on_progress:
            on_progress(epoch + 1, cfg.epochs, f"probe epoch {epoch + 1}: loss {loss.item():.4f}")

    def accuracy(x: np.ndarray, y: np.ndarray) -> float:
        feats = _features(model, x, blocks) if finetune else x
        with no_grad():
            logits = head((as_tensor(feats) - mean) / std).data
        return float(np.mean(predict(logits) == y))

    result = ProbeResult(
        train_accuracy=accuracy(x_train, y_train),
        test_accuracy=accuracy(x_test, y_test),
        n_train=n_train,
        n_test=len(x_test),
        n_classes=len(classes),
        head=head,
        classes=classes,
        mean=mean,
        std=std,
    )
    logger.info(
        f"{mode.value} probe: train acc {result.train_accuracy:.3f}, test acc {result.test_accuracy:.3f} "
        f"(chance {result.chance:.3f})"
    )
    return result
