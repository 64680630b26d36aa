"""Agglomerative clustering with minimum-variance (ward) linkage."""

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics.pairwise import euclidean_distances

logger = logging.getLogger(__name__)


@dataclass
class ClusteringResult:
    """Flat clustering plus the merge sequence that produced it.

    ``merges`` holds ``(i, j, height)`` with ``i < j`` the slots of the two
    merged clusters; a merged cluster keeps slot ``i``, which is always the
    smallest sample index it contains.
    """

    assignments: np.ndarray
    k: int
    merges: list[tuple[int, int, float]] = field(default_factory=list)

    @property
    def heights(self) -> np.ndarray:
        return np.array([h for _, _, h in self.merges])


def hac_ward(features: np.ndarray, k: int) -> ClusteringResult:
    """Merge singletons with the Lance-Williams ward update until ``k`` clusters remain.

    Distances are squared Euclidean; the reported merge height is the square
    root of the ward distance. Equal distances are broken by the smallest
    ``(i, j)`` pair in lexicographic order. Assignments are numbered
    0..k-1 in order of first appearance.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"features must be a 2-d (N, D) array (got shape {X.shape})")
    n = X.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"need 1 <= k <= N (got k={k}, N={n})")

    dist = np.maximum(euclidean_distances(X, squared=True), 0.0)
    np.fill_diagonal(dist, 0.0)
    # candidate pairs live in the strict upper triangle
    work = np.where(np.triu(np.ones((n, n), dtype=bool), k=1), dist, np.inf)
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    owner = np.arange(n)
    merges: list[tuple[int, int, float]] = []

    for _ in range(n - k):
        i, j = np.unravel_index(np.argmin(work), work.shape)
        i, j = int(i), int(j)
        merges.append((i, j, float(np.sqrt(max(dist[i, j], 0.0)))))

        ni, nj = size[i], size[j]
        updated = ((ni + size) * dist[i] + (nj + size) * dist[j] - size * dist[i, j]) / (ni + nj + size)
        dist[i, :] = updated
        dist[:, i] = updated
        dist[i, i] = 0.0
        size[i] = ni + nj
        active[j] = False
        owner[owner == j] = i

        work[j, :] = np.inf
        work[:, j] = np.inf
        row = np.where(active, updated, np.inf)
        work[i, i + 1:] = row[i + 1:]
        work[:i, i] = row[:i]

    _, assignments = np.unique(owner, return_inverse=True)
    logger.debug(f"ward HAC: {n} samples -> {k} clusters")
    return ClusteringResult(assignments=assignments.astype(np.intp), k=k, merges=merges)
