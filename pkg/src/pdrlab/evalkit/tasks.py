"""Evaluation tasks run by `pdrlab eval`: checkpoint + dataset -> report."""

import logging
from typing import Callable, Iterable

import numpy as np
from sklearn.decomposition import PCA

from ..ad import ops
from ..ad.tensor import Tensor, no_grad
from ..config import LooccMode, PerturbRanges, ProbeConfig, ProbeMode, RenderConfig
from ..loocc import loo_invariance
from ..nets import BLOCKS, DEFAULT_BLOCKS, InverseRenderer, parse_blocks
from ..renderer import Renderer
from ..reports import (
    AttributionReport,
    ClusterScores,
    DisentanglementReport,
    InvarianceReport,
    MetricsReport,
    ProbeReport,
    RobustnessReport,
)
from ..scenegen import Dataset, DatasetSplit, regenerate_split
from ..util.seeding import rng_from_seed
from .attribution import block_slices, integrated_gradients
from .clustering import hac_ward
from .disentangle import pcc_disentanglement
from .metrics import class_breakdown, cluster_accuracy, cluster_breakdown, nmi, weighted_f1
from .probe import linear_probe

logger = logging.getLogger(__name__)

ProgressFn = Callable[[int, int, str], None]


def extract_features(
    model: InverseRenderer,
    images: np.ndarray,
    batch_size: int = 32,
    on_progress: ProgressFn | None = None,
) -> dict[str, np.ndarray]:
    """All four feature blocks for ``images``, computed without a graph."""
    chunks: dict[str, list[np.ndarray]] = {b: [] for b in BLOCKS}
    total = len(images)
    with no_grad():
        for start in range(0, total, batch_size):
            for name, block in model.encode(images[start:start + batch_size]).numpy().items():
                chunks[name].append(block)
            if on_progress:
                done = min(start + batch_size, total)
                on_progress(done, total, f"encoded {done}/{total}")
    return {name: np.concatenate(parts, axis=0) for name, parts in chunks.items()}


def stack_blocks(features: dict[str, np.ndarray], blocks: Iterable[str]) -> np.ndarray:
    return np.concatenate([features[b] for b in parse_blocks(blocks)], axis=-1)


def pixel_pca_features(images: np.ndarray, n_components: int = 512) -> np.ndarray:
    """Raw pixels projected onto their leading principal components."""
    flat = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    n = min(n_components, flat.shape[0], flat.shape[1])
    return PCA(n_components=n, svd_solver="full").fit_transform(flat)


def _scores(assignments: np.ndarray, labels: np.ndarray) -> ClusterScores:
    return ClusterScores(
        cluster_accuracy=cluster_accuracy(assignments, labels),
        weighted_f1=weighted_f1(assignments, labels),
        nmi=nmi(assignments, labels),
    )


def _cluster(features: np.ndarray, labels: np.ndarray, k: int | None) -> tuple[np.ndarray, int]:
    k = k or len(np.unique(labels))
    return hac_ward(features, k).assignments, k


def cluster_task(
    dataset: Dataset,
    label: str,
    model: InverseRenderer | None = None,
    blocks: Iterable[str] = DEFAULT_BLOCKS,
    split: str = "test",
    k: int | None = None,
    baseline: str = "model",
    checkpoint: str | None = None,
) -> MetricsReport:
    """Ward-cluster a split and score the clusters against shape or albedo labels."""
    data = dataset.split(split)
    if len(data) == 0:
        raise ValueError(f"split '{split}' is empty")
    labels = data.labels(label)
    if baseline == "pixels":
        features, used = pixel_pca_features(data.images), []
    elif model is None:
        raise ValueError("cluster task needs a model unless baseline is 'pixels'")
    else:
        used = list(parse_blocks(blocks))
        features = stack_blocks(extract_features(model, data.images), used)

    assignments, k = _cluster(features, labels, k)
    scores = _scores(assignments, labels)
    return MetricsReport(
        label=label,
        features=baseline,
        blocks=used,
        split=split,
        n_samples=len(data),
        n_classes=len(np.unique(labels)),
        k=k,
        cluster_accuracy=scores.cluster_accuracy,
        weighted_f1=scores.weighted_f1,
        nmi=scores.nmi,
        per_class=class_breakdown(assignments, labels),
        per_cluster=cluster_breakdown(assignments, labels),
        checkpoint=checkpoint,
    )


def probe_task(
    dataset: Dataset,
    model: InverseRenderer,
    cfg: ProbeConfig,
    blocks: Iterable[str] = DEFAULT_BLOCKS,
    seed: int = 0,
    checkpoint: str | None = None,
    on_progress: ProgressFn | None = None,
) -> ProbeReport:
    """Train a probe on the train split, report accuracy on the test split."""
    blocks = parse_blocks(blocks)
    train, test = dataset.split("train"), dataset.split("test")
    result = linear_probe(
        train.images, train.labels(cfg.label), test.images, test.labels(cfg.label),
        n_train=cfg.n_train, mode=cfg.mode, model=model, blocks=blocks, cfg=cfg,
        seed=seed, on_progress=on_progress,
    )
    return ProbeReport(
        label=cfg.label,
        blocks=list(blocks),
        mode=ProbeMode(cfg.mode).value,
        n_train=result.n_train,
        n_test=result.n_test,
        n_classes=result.n_classes,
        epochs=cfg.epochs,
        hidden_dim=cfg.hidden_dim,
        train_accuracy=result.train_accuracy,
        test_accuracy=result.test_accuracy,
        chance=result.chance,
        checkpoint=checkpoint,
    )


def disentangle_task(
    dataset: Dataset,
    model: InverseRenderer,
    split: str = "test",
    checkpoint: str | None = None,
) -> DisentanglementReport:
    data = dataset.split(split)
    result = pcc_disentanglement(extract_features(model, data.images))
    return DisentanglementReport(
        blocks=list(result.blocks),
        matrix=result.as_lists(),
        mean_off_diagonal=result.mean_off_diagonal,
        undefined_pairs=[list(p) for p in result.undefined_pairs],
        n_samples=len(data),
        checkpoint=checkpoint,
    )


def attribute_task(
    dataset: Dataset,
    model: InverseRenderer,
    cfg: ProbeConfig,
    steps: int = 64,
    target_class: int | None = None,
    split: str = "test",
    seed: int = 0,
    checkpoint: str | None = None,
    on_progress: ProgressFn | None = None,
) -> AttributionReport:
    """Share of each feature block in a frozen probe's class score.

    The probe is trained on all four blocks of the train split. Each test
    sample's score is the logit of ``target_class``, or of its true class
    when no target is given.
    """
    train, data = dataset.split("train"), dataset.split(split)
    train_feats = stack_blocks(extract_features(model, train.images), BLOCKS)
    test_raw = extract_features(model, data.images)
    test_feats = stack_blocks(test_raw, BLOCKS)
    labels = data.labels(cfg.label)
    probe = linear_probe(
        train_feats, train.labels(cfg.label), test_feats, labels,
        n_train=min(cfg.n_train, len(train)), mode=ProbeMode.FROZEN, cfg=cfg, seed=seed,
        on_progress=on_progress,
    )
    if target_class is not None and target_class not in probe.classes:
        raise ValueError(f"target class {target_class} not among labels {probe.classes.tolist()}")
    targets = np.searchsorted(probe.classes, np.full(len(labels), target_class) if target_class is not None else labels)
    onehot = np.eye(probe.n_classes)[targets]

    def scorer(z: Tensor) -> Tensor:
        return ops.sum(probe.scores(z) * onehot, axis=-1)

    slices = block_slices({b: test_raw[b].shape[1] for b in BLOCKS})
    report = integrated_gradients(scorer, test_feats, slices, steps=steps)
    logger.info(
        "IG contributions: " + ", ".join(f"{b} {v:.1f}%" for b, v in report.contributions.items())
    )
    return report.model_copy(update={"label": cfg.label, "target_class": target_class, "checkpoint": checkpoint})


def invariance_task(
    dataset: Dataset,
    model: InverseRenderer,
    render_cfg: RenderConfig,
    ranges: PerturbRanges | None = None,
    mode: LooccMode = LooccMode.LV,
    split: str = "test",
    seed: int = 0,
    checkpoint: str | None = None,
) -> InvarianceReport:
    if mode == LooccMode.NONE:
        mode = LooccMode.LV
    data = dataset.split(split)
    renderer = Renderer(dataset.image_size, render_cfg)
    value = loo_invariance(model, renderer, data.images, rng_from_seed(seed), ranges, mode)
    return InvarianceReport(perturb_mode=mode.value, mean_cosine=value, n_samples=len(data), checkpoint=checkpoint)


def robustness_task(
    dataset: Dataset,
    model: InverseRenderer,
    label: str,
    blocks: Iterable[str] = DEFAULT_BLOCKS,
    range_scale: float = 2.0,
    split: str = "test",
    threads: int = 1,
    checkpoint: str | None = None,
) -> RobustnessReport:
    """Cluster a split and its re-rendering under widened light and camera ranges."""
    blocks = parse_blocks(blocks)
    data: DatasetSplit = dataset.split(split)
    wide = regenerate_split(data, dataset, range_scale, threads)
    labels = data.labels(label)
    scores = []
    for part in (data, wide):
        assignments, _ = _cluster(stack_blocks(extract_features(model, part.images), blocks), labels, None)
        scores.append(_scores(assignments, labels))
    return RobustnessReport(
        label=label,
        blocks=list(blocks),
        range_scale=range_scale,
        n_samples=len(data),
        in_distribution=scores[0],
        out_of_distribution=scores[1],
        checkpoint=checkpoint,
    )
