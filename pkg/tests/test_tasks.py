import numpy as np
import pytest

from pdrlab.config import LooccMode, PerturbRanges, ProbeConfig
from pdrlab.evalkit.tasks import (
    attribute_task,
    cluster_task,
    disentangle_task,
    extract_features,
    invariance_task,
    pixel_pca_features,
    probe_task,
    robustness_task,
    stack_blocks,
)
from pdrlab.nets import BLOCKS
from pdrlab.reports import MetricsReport


def test_extract_features_batches_consistently(tiny_model, tiny_dataset):
    images = tiny_dataset.split("train").images
    calls = []
    whole = extract_features(tiny_model, images, batch_size=64)
    parts = extract_features(tiny_model, images, batch_size=5, on_progress=lambda *a: calls.append(a))
    for name in BLOCKS:
        assert whole[name].shape == (len(images), 8)
        np.testing.assert_allclose(parts[name], whole[name], rtol=1e-5, atol=1e-6)
    assert calls[-1][:2] == (len(images), len(images))
    assert stack_blocks(whole, "alb,geom").shape == (len(images), 16)


def test_pixel_pca_features(rng):
    feats = pixel_pca_features(rng.uniform(size=(6, 4, 4, 3)), n_components=3)
    assert feats.shape == (6, 3)
    np.testing.assert_allclose(feats.mean(axis=0), 0.0, atol=1e-12)


def test_cluster_task_with_pixel_baseline(tiny_dataset):
    report = cluster_task(tiny_dataset, "shape", baseline="pixels")
    MetricsReport.model_validate(report.model_dump())
    assert report.features == "pixels" and report.blocks == []
    assert report.n_samples == len(tiny_dataset.split("test"))
    assert report.k == report.n_classes
    for value in (report.cluster_accuracy, report.weighted_f1, report.nmi):
        assert 0.0 <= value <= 1.0
    assert sum(row.size for row in report.per_cluster) == report.n_samples


def test_cluster_task_on_model_features(tiny_model, tiny_dataset):
    report = cluster_task(tiny_dataset, "albedo", model=tiny_model, split="val", k=2, checkpoint="ck")
    assert report.blocks == ["geom", "alb"]
    assert report.k == 2 and report.split == "val" and report.checkpoint == "ck"
    assert len(report.per_cluster) == 2


def test_cluster_task_needs_a_model(tiny_dataset):
    with pytest.raises(ValueError, match="needs a model"):
        cluster_task(tiny_dataset, "shape")


def test_disentangle_task(tiny_model, tiny_dataset):
    report = disentangle_task(tiny_dataset, tiny_model, split="train")
    assert report.blocks == list(BLOCKS)
    assert len(report.matrix) == 4 and all(len(row) == 4 for row in report.matrix)
    assert report.matrix[0][0] == 1.0
    assert 0.0 <= report.mean_off_diagonal <= 1.0


def test_probe_task(tiny_model, tiny_dataset):
    cfg = ProbeConfig(n_train=20, epochs=3, label="shape")
    report = probe_task(tiny_dataset, tiny_model, cfg, blocks="geom,alb")
    assert report.n_train == 20 and report.mode == "frozen"
    assert report.n_test == len(tiny_dataset.split("test"))
    assert report.chance == pytest.approx(1.0 / report.n_classes)
    assert 0.0 <= report.test_accuracy <= 1.0


def test_attribute_task(tiny_model, tiny_dataset):
    cfg = ProbeConfig(n_train=100, epochs=3, label="albedo")
    report = attribute_task(tiny_dataset, tiny_model, cfg, steps=8)
    assert set(report.contributions) == set(BLOCKS)
    assert sum(report.contributions.values()) == pytest.approx(100.0)
    assert report.label == "albedo" and report.target_class is None
    assert report.n_samples == len(tiny_dataset.split("test"))


def test_attribute_task_rejects_unknown_class(tiny_model, tiny_dataset):
    with pytest.raises(ValueError, match="target class"):
        attribute_task(tiny_dataset, tiny_model, ProbeConfig(epochs=1), steps=2, target_class=17)


def test_invariance_task(tiny_model, tiny_dataset, tiny_config):
    report = invariance_task(tiny_dataset, tiny_model, tiny_config.render, mode=LooccMode.NONE)
    assert report.perturb_mode == LooccMode.LV.value
    assert -1.0 <= report.mean_cosine <= 1.0
    fixed = invariance_task(tiny_dataset, tiny_model, tiny_config.render, PerturbRanges(), mode=LooccMode.L, seed=3)
    assert fixed.perturb_mode == LooccMode.L.value


def test_robustness_task(tiny_model, tiny_dataset):
    report = robustness_task(tiny_dataset, tiny_model, "shape", range_scale=2.0)
    assert report.range_scale == 2.0
    for scores in (report.in_distribution, report.out_of_distribution):
        assert 0.0 <= scores.cluster_accuracy <= 1.0
