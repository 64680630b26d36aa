import math
from itertools import combinations

import numpy as np
import pytest

from pdrlab.ad import ops, parameter
from pdrlab.config import ProbeConfig, ProbeMode
from pdrlab.evalkit import (
    cluster_accuracy,
    hac_ward,
    integrated_gradients,
    linear_probe,
    nmi,
    pcc_disentanglement,
    weighted_f1,
)
from pdrlab.evalkit.attribution import block_slices
from pdrlab.evalkit.metrics import class_breakdown, cluster_breakdown, majority_predictions
from pdrlab.evalkit.probe import cross_entropy, predict

A, B = 0, 1


def naive_ward(X, k):
    """Recompute every cluster-pair ward cost from scratch at each merge."""
    clusters = {i: [i] for i in range(len(X))}
    while len(clusters) > k:
        best = None
        for i, j in combinations(sorted(clusters), 2):
            a, b = X[clusters[i]], X[clusters[j]]
            cost = 2 * len(a) * len(b) / (len(a) + len(b)) * np.sum((a.mean(0) - b.mean(0)) ** 2)
            if best is None or cost < best[0]:
                best = (cost, i, j)
        _, i, j = best
        clusters[i] += clusters.pop(j)
    owner = np.empty(len(X), dtype=int)
    for slot, members in clusters.items():
        owner[members] = slot
    return np.unique(owner, return_inverse=True)[1]


def brute_nmi(a, y):
    n = len(a)
    pa = {v: np.mean(a == v) for v in set(a)}
    py = {v: np.mean(y == v) for v in set(y)}
    mi = 0.0
    for u in pa:
        for v in py:
            p = np.mean((a == u) & (y == v))
            if p > 0:
                mi += p * math.log(p / (pa[u] * py[v]))
    ha = -sum(p * math.log(p) for p in pa.values())
    hy = -sum(p * math.log(p) for p in py.values())
    assert n > 0
    if ha == 0 and hy == 0:
        return 1.0
    if ha == 0 or hy == 0:
        return 0.0
    return mi / math.sqrt(ha * hy)


# --- clustering ---


def test_hac_with_k_equal_n_merges_nothing(rng):
    result = hac_ward(rng.normal(size=(6, 3)), 6)
    assert result.assignments.tolist() == list(range(6))
    assert result.merges == []


def test_hac_separates_two_blobs(rng):
    X = np.concatenate([rng.normal(size=(15, 2)), rng.normal(size=(15, 2)) + 10.0])
    order = rng.permutation(30)
    result = hac_ward(X[order], 2)
    truth = (order >= 15).astype(int)
    assert cluster_accuracy(result.assignments, truth) == 1.0


@pytest.mark.parametrize("seed", range(20))
def test_hac_matches_naive_ward(seed):
    X = np.random.default_rng(seed).normal(size=(30, 4))
    for k in (1, 3, 7):
        assert hac_ward(X, k).assignments.tolist() == naive_ward(X, k).tolist()


def test_hac_heights_never_decrease(rng):
    result = hac_ward(rng.normal(size=(25, 3)), 1)
    assert len(result.merges) == 24
    assert np.all(np.diff(result.heights) >= -1e-12)
    assert all(i < j for i, j, _ in result.merges)


def test_hac_is_order_invariant(rng):
    X = rng.normal(size=(20, 2))
    perm = rng.permutation(20)
    a = hac_ward(X, 4).assignments
    b = np.empty(20, dtype=int)
    b[perm] = hac_ward(X[perm], 4).assignments
    assert nmi(a, b) == pytest.approx(1.0)


def test_hac_preconditions(rng):
    with pytest.raises(ValueError, match="k <= N"):
        hac_ward(rng.normal(size=(3, 2)), 4)
    with pytest.raises(ValueError):
        hac_ward(rng.normal(size=(3, 2)), 0)
    with pytest.raises(ValueError, match="2-d"):
        hac_ward(np.zeros(5), 1)


# --- metrics ---


def test_hand_enumerated_scores():
    assignments = [0, 0, 0, 1, 1]
    labels = [A, A, B, B, B]
    assert cluster_accuracy(assignments, labels) == pytest.approx(0.8, abs=1e-12)
    assert weighted_f1(assignments, labels) == pytest.approx(0.8, abs=1e-12)
    f1 = {row.label: row.f1 for row in class_breakdown(assignments, labels)}
    assert f1 == pytest.approx({A: 0.8, B: 0.8}, abs=1e-12)


def test_single_cluster_scores():
    labels = [A, A, B, B]
    assert weighted_f1([0] * 4, labels) == pytest.approx(1 / 3, abs=1e-12)
    assert cluster_accuracy([0] * 4, labels) == 0.5
    assert cluster_accuracy([5] * 5, [A, B, B, B, A]) == pytest.approx(0.6)
    assert majority_predictions([0] * 4, labels).tolist() == [A] * 4


def test_perfect_clustering():
    labels = np.array([3, 1, 1, 2, 3, 2])
    renamed = np.array([7, 0, 0, 9, 7, 9])
    assert cluster_accuracy(renamed, labels) == 1.0
    assert weighted_f1(renamed, labels) == 1.0
    assert nmi(renamed, labels) == pytest.approx(1.0, abs=1e-12)


def test_scores_ignore_cluster_names(rng):
    labels = rng.integers(0, 4, size=50)
    assignments = rng.integers(0, 6, size=50)
    renamed = rng.permutation(6)[assignments] + 100
    for score in (cluster_accuracy, weighted_f1, nmi):
        assert score(renamed, labels) == pytest.approx(score(assignments, labels), abs=1e-12)


def test_singletons_are_perfectly_accurate(rng):
    labels = rng.integers(0, 3, size=17)
    assert cluster_accuracy(np.arange(17), labels) == 1.0


def test_nmi_edge_cases():
    assert nmi([0, 0, 0], [1, 1, 1]) == 1.0
    assert nmi([0, 0, 0, 0], [0, 1, 0, 1]) == 0.0


def test_nmi_of_independent_assignments():
    rng = np.random.default_rng(0)
    assert nmi(rng.integers(0, 2, 10_000), rng.integers(0, 2, 10_000)) < 0.01


@pytest.mark.parametrize("seed", range(5))
def test_nmi_matches_contingency_table(seed):
    rng = np.random.default_rng(seed)
    a, y = rng.integers(0, 3, 20), rng.integers(0, 4, 20)
    assert nmi(a, y) == pytest.approx(brute_nmi(a, y), abs=1e-12)


def test_metric_preconditions():
    for score in (cluster_accuracy, weighted_f1, nmi):
        with pytest.raises(ValueError, match="empty"):
            score([], [])
        with pytest.raises(ValueError, match="length"):
            score([0, 1], [0])


def test_cluster_breakdown():
    rows = cluster_breakdown([4, 4, 4, 9, 9], [A, A, B, B, B])
    assert [(r.cluster, r.size, r.majority_label) for r in rows] == [(4, 3, A), (9, 2, B)]
    assert rows[0].purity == pytest.approx(2 / 3)


# --- disentanglement ---


def test_copied_block_is_fully_correlated(rng):
    t = rng.normal(size=(50, 1))
    geom = t * rng.normal(size=(1, 4))
    blocks = {"geom": geom, "alb": geom.copy(), "cam": rng.normal(size=(50, 4)), "light": rng.normal(size=(50, 4))}
    result = pcc_disentanglement(blocks)
    assert result.blocks == ("geom", "alb", "cam", "light")
    assert result.matrix[0, 1] == pytest.approx(1.0)
    np.testing.assert_allclose(result.matrix, result.matrix.T)
    np.testing.assert_array_equal(np.diag(result.matrix), 1.0)


def test_independent_blocks_are_uncorrelated():
    rng = np.random.default_rng(0)
    blocks = {name: rng.normal(size=(10_000, 4)) for name in ("geom", "alb", "cam", "light")}
    result = pcc_disentanglement(blocks)
    assert result.mean_off_diagonal < 0.02
    assert result.undefined_pairs == []


def test_constant_block_is_undefined(rng):
    blocks = {"geom": rng.normal(size=(20, 3)), "alb": rng.normal(size=(20, 3)),
              "cam": np.ones((20, 3)), "light": rng.normal(size=(20, 3))}
    result = pcc_disentanglement(blocks)
    assert set(result.undefined_pairs) == {("geom", "cam"), ("alb", "cam"), ("cam", "light")}
    defined = [result.matrix[0, 1], result.matrix[0, 3], result.matrix[1, 3]]
    assert result.mean_off_diagonal == pytest.approx(np.mean(defined))
    assert result.as_lists()[2][0] is None


def test_pcc_needs_three_samples(rng):
    with pytest.raises(ValueError, match="at least 3"):
        pcc_disentanglement({"geom": rng.normal(size=(2, 3)), "alb": rng.normal(size=(2, 3))})


# --- attribution ---


def test_block_slices():
    assert block_slices({"geom": 3, "alb": 2}) == {"geom": slice(0, 3), "alb": slice(3, 5)}


def test_linear_scorer_is_exact(f64, rng):
    w = rng.normal(size=6)
    z = rng.normal(size=(3, 6))
    report = integrated_gradients(lambda t: ops.sum(t * w, axis=-1), z, block_slices({"geom": 4, "alb": 2}), steps=3)
    ig = w * z
    np.testing.assert_allclose(report.raw["geom"], ig[:, :4].sum(axis=0), atol=1e-12)
    assert report.completeness_residual < 1e-12
    expected = 100 * np.abs(ig[:, :4]).sum() / np.abs(ig).sum()
    assert report.contributions["geom"] == pytest.approx(expected)
    assert sum(report.contributions.values()) == pytest.approx(100.0)


def test_nonlinear_scorer_converges(f64):
    z = np.array([[0.8, -1.2, 0.5, 1.5, -0.3]])

    def scorer(t):
        return ops.sum(ops.tanh(t), axis=-1) + ops.sum(t * t, axis=-1) * 0.1

    report = integrated_gradients(scorer, z, block_slices({"geom": 2, "cam": 3}), steps=1024)
    assert abs(report.score_delta) > 1.0
    assert report.completeness_residual < 1e-4 * abs(report.score_delta)


def test_constant_scorer_splits_evenly(f64, rng):
    report = integrated_gradients(lambda t: ops.sum(t * 0.0, axis=-1), rng.normal(size=(2, 4)),
                                  block_slices({"geom": 2, "alb": 2}), steps=4)
    assert report.contributions == {"geom": 50.0, "alb": 50.0}


def test_steps_must_be_positive(rng):
    with pytest.raises(ValueError, match="steps"):
        integrated_gradients(lambda t: ops.sum(t, axis=-1), rng.normal(size=(1, 2)), {"geom": slice(0, 2)}, steps=0)


# --- probe ---


def test_cross_entropy_and_predict(f64):
    logits = parameter(np.array([[2.0, 0.0], [0.0, 0.0]]))
    loss = cross_entropy(logits, np.array([0, 1]))
    expected = (math.log(1 + math.exp(-2)) + math.log(2)) / 2
    assert loss.item() == pytest.approx(expected)
    assert predict(np.array([[0.1, 0.1], [1.0, 0.0]])).tolist() == [1, 0]
    assert predict(np.array([[0.0, 2.0, 1.0]])).tolist() == [1]


def _blobs(rng, n, dim=5):
    y = rng.integers(0, 2, size=n)
    return rng.normal(size=(n, dim)) + 3.0 * (2 * y[:, None] - 1), y


def test_probe_on_separable_features(rng):
    x_train, y_train = _blobs(rng, 200)
    x_test, y_test = _blobs(rng, 200)
    result = linear_probe(x_train, y_train, x_test, y_test, n_train=100, cfg=ProbeConfig(epochs=100))
    assert result.train_accuracy == 1.0
    assert result.test_accuracy >= 0.95
    assert result.chance == 0.5 and result.n_train == 100


def test_probe_on_shuffled_labels_is_at_chance(rng):
    x_train, y_train = rng.normal(size=(300, 8)), rng.integers(0, 2, 300)
    x_test, y_test = rng.normal(size=(1000, 8)), rng.integers(0, 2, 1000)
    result = linear_probe(x_train, y_train, x_test, y_test, n_train=300, cfg=ProbeConfig(epochs=20))
    assert 0.4 <= result.test_accuracy <= 0.6


def test_probe_with_hidden_layer(rng):
    x_train, y_train = _blobs(rng, 100)
    x_test, y_test = _blobs(rng, 50)
    result = linear_probe(x_train, y_train, x_test, y_test, n_train=100, cfg=ProbeConfig(epochs=30, hidden_dim=16))
    assert result.head.num_parameters() == 5 * 16 + 16 + 16 * 2 + 2
    assert result.test_accuracy >= 0.9


def test_frozen_probe_leaves_encoders_untouched(tiny_model, rng):
    images = rng.uniform(size=(12, 16, 16, 3))
    labels = np.arange(12) % 2
    before = {name: p.data.copy() for name, p in tiny_model.named_parameters()}
    linear_probe(images, labels, images[:4], labels[:4], n_train=8, model=tiny_model, cfg=ProbeConfig(epochs=2))
    for name, p in tiny_model.named_parameters():
        assert p.data.tobytes() == before[name].tobytes(), name


def test_finetune_probe_updates_only_encoders(tiny_model, rng):
    images = rng.uniform(size=(12, 16, 16, 3))
    labels = np.arange(12) % 2
    before = {name: p.data.copy() for name, p in tiny_model.named_parameters()}
    linear_probe(images, labels, images[:4], labels[:4], n_train=8, mode=ProbeMode.FINETUNE,
                 model=tiny_model, blocks=("geom", "alb"), cfg=ProbeConfig(epochs=2))
    changed = {name for name, p in tiny_model.named_parameters() if p.data.tobytes() != before[name].tobytes()}
    assert any(name.startswith("enc_geom") for name in changed)
    assert any(name.startswith("enc_alb") for name in changed)
    assert not any(name.startswith(("enc_cam", "enc_light", "dec_")) for name in changed)


def test_probe_preconditions(rng):
    x, y = _blobs(rng, 20)
    with pytest.raises(ValueError, match="n_train"):
        linear_probe(x, y, x, y, n_train=21)
    with pytest.raises(ValueError, match="two classes"):
        linear_probe(x, np.zeros(20, dtype=int), x, np.zeros(20, dtype=int), n_train=10)
    with pytest.raises(ValueError, match="finetune"):
        linear_probe(x, y, x, y, n_train=10, mode=ProbeMode.FINETUNE)
