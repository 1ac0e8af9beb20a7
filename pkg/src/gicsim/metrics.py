"""Point-cloud and mask discrepancy metrics."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .errors import InvalidInputError

EMD_EXACT_LIMIT = 2048


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean of squared nearest-neighbor distances, scene units^2."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise InvalidInputError("chamfer distance needs two nonempty clouds")
    # KD-trees locate the neighbor; the value is recomputed with plain
    # arithmetic so results match a brute-force scan exactly
    _, ib = cKDTree(b).query(a, k=1)
    _, ia = cKDTree(a).query(b, k=1)
    d_ab = ((a - b[ib]) ** 2).sum(axis=1)
    d_ba = ((b - a[ia]) ** 2).sum(axis=1)
    return float(d_ab.mean() + d_ba.mean())


def emd(a: np.ndarray, b: np.ndarray) -> float:
    """Minimum mean Euclidean matching cost via exact assignment."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise InvalidInputError("emd needs two nonempty clouds")
    if a.shape[0] != b.shape[0]:
        raise InvalidInputError(f"emd requires equal sizes, got {a.shape[0]} and {b.shape[0]}")
    if a.shape[0] > EMD_EXACT_LIMIT:
        raise InvalidInputError(f"exact emd is limited to {EMD_EXACT_LIMIT} points")
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def mask_l1(rendered: np.ndarray, observed: np.ndarray) -> float:
    """Mean absolute per-pixel difference."""
    rendered = np.asarray(rendered, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    if rendered.shape != observed.shape:
        raise InvalidInputError(
            f"mask dimensions differ: {rendered.shape} vs {observed.shape}")
    return float(np.abs(rendered - observed).mean())
