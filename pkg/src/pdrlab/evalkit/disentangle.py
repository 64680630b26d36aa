"""Correlation between learned feature blocks."""

import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Mapping

import numpy as np

from ..nets import BLOCKS, FeatureSet

logger = logging.getLogger(__name__)


@dataclass
class PccResult:
    blocks: tuple[str, ...]
    matrix: np.ndarray  # NaN where undefined
    mean_off_diagonal: float | None
    undefined_pairs: list[tuple[str, str]]

    def as_lists(self) -> list[list[float | None]]:
        return [[None if np.isnan(v) else float(v) for v in row] for row in self.matrix]


def _standardize(x: np.ndarray) -> np.ndarray:
    """Columns scaled to zero mean, unit variance; constant columns dropped."""
    x = np.asarray(x, dtype=np.float64)
    std = x.std(axis=0)
    keep = std > 1e-12 * np.maximum(1.0, np.abs(x).max(axis=0))
    return (x[:, keep] - x[:, keep].mean(axis=0)) / std[keep]


def mean_abs_pcc(a: np.ndarray, b: np.ndarray) -> float:
    """Mean |Pearson r| over all column pairs (a_i, b_j); NaN if either side is constant."""
    za, zb = _standardize(a), _standardize(b)
    if za.shape[1] == 0 or zb.shape[1] == 0:
        return float("nan")
    r = za.T @ zb / za.shape[0]
    return float(np.clip(np.abs(r), 0.0, 1.0).mean())


def pcc_disentanglement(features: FeatureSet | Mapping[str, np.ndarray]) -> PccResult:
    """Symmetric block-by-block matrix of mean |Pearson r| with unit diagonal.

    Pairs involving an all-constant block are undefined (NaN) and excluded
    from the mean over the distinct off-diagonal pairs.
    """
    arrays = features.numpy() if isinstance(features, FeatureSet) else dict(features)
    names = tuple(b for b in BLOCKS if b in arrays) or tuple(arrays)
    n = len(next(iter(arrays.values())))
    if n < 3:
        raise ValueError(f"PCC needs at least 3 samples (got: {n})")

    matrix = np.full((len(names), len(names)), np.nan)
    for i, name in enumerate(names):
        if _standardize(arrays[name]).shape[1] > 0:
            matrix[i, i] = 1.0
    undefined: list[tuple[str, str]] = []
    values = []
    for i, j in combinations(range(len(names)), 2):
        v = mean_abs_pcc(arrays[names[i]], arrays[names[j]])
        matrix[i, j] = matrix[j, i] = v
        if np.isnan(v):
            undefined.append((names[i], names[j]))
        else:
            values.append(v)
    if undefined:
        logger.warning(f"PCC undefined for constant-block pairs: {undefined}")
    mean = float(np.mean(values)) if values else None
    return PccResult(blocks=names, matrix=matrix, mean_off_diagonal=mean, undefined_pairs=undefined)
