"""Brute-force references the production code is tested against.

Nothing here may call the blocked or chunked production paths:
``exact_logits`` is a deliberate scalar triple loop, ``topk_hard_negatives``
ranks a plain dense product, and ``finite_diff_grad`` is central
differences per coordinate.  ``plan_recall`` quantifies how much of each
row's true hard-negative set a chunk plan actually scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .partition import ChunkPlan

__all__ = [
    "DEFAULT_ELEMENT_CAP",
    "HardNegativeReport",
    "exact_logits",
    "finite_diff",
    "finite_diff_grad",
    "plan_recall",
    "topk_hard_negatives",
]

DEFAULT_ELEMENT_CAP = 10_000_000


@dataclass(frozen=True)
class HardNegativeReport:
    """Per-row fraction of the true top-k negatives a plan scores."""

    k: int
    per_row_recall: np.ndarray
    mean_recall: float


def exact_logits(x, y, cap: int = DEFAULT_ELEMENT_CAP) -> np.ndarray:
    """All pairwise inner products by scalar triple loop.

    Intentionally avoids any blocked matrix product so it stays
    independent of the code paths it is used to check.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    m, d = x.shape
    n_items = y.shape[0]
    if m * n_items > cap:
        raise ValueError(
            f"{m} x {n_items} logits exceed the cap of {cap} elements; use a smaller instance"
        )
    out = np.empty((m, n_items), dtype=np.float64)
    for i in range(m):
        for j in range(n_items):
            acc = 0.0
            for k in range(d):
                acc += float(x[i, k]) * float(y[j, k])
            out[i, j] = acc
    return out


def topk_hard_negatives(x, y, targets, k: int) -> np.ndarray:
    """Exact top-k non-target items per row, ties broken by lowest item index."""
    x = np.asarray(x)
    y = np.asarray(y)
    targets = np.asarray(targets, dtype=np.int64)
    n_items = y.shape[0]
    if not 1 <= k <= n_items - 1:
        raise ValueError(f"k must be in [1, {n_items - 1}], got {k}")
    scores = x @ y.T  # plain dense product, not the chunked path under test
    out = np.empty((x.shape[0], k), dtype=np.int64)
    for i in range(x.shape[0]):
        row = scores[i].copy()
        row[targets[i]] = -np.inf
        # stable argsort of the negated scores keeps ties in index order
        out[i] = np.argsort(-row, kind="stable")[:k]
    return out


def plan_recall(plan: ChunkPlan, x, y, targets, k: int) -> HardNegativeReport:
    """Recall of the true top-k hard negatives within a plan's pair sets."""
    x = np.asarray(x)
    y = np.asarray(y)
    top = topk_hard_negatives(x, y, targets, k)
    covered = np.zeros((plan.n_rows, plan.n_items), dtype=bool)
    for x_rows, y_items in plan.iter_blocks():
        if x_rows.size and y_items.size:
            covered[np.ix_(x_rows, y_items)] = True

    rows = np.unique(np.concatenate([rp.sorted_x_rows for rp in plan.rounds]))
    rows = rows[rows >= 0]
    per_row = np.array([covered[i, top[i]].mean() for i in rows])
    return HardNegativeReport(k=k, per_row_recall=per_row, mean_recall=float(per_row.mean()))


def finite_diff(fn: Callable[[np.ndarray], float], arr: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function over one array.

    Double precision only; the estimate is O(step^2).
    """
    arr = np.array(arr, dtype=np.float64)  # private copy; perturbed in place below
    grad = np.zeros_like(arr)
    flat = arr.ravel()
    gflat = grad.ravel()
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + step
        up = fn(arr)
        flat[idx] = orig - step
        down = fn(arr)
        flat[idx] = orig
        gflat[idx] = (up - down) / (2.0 * step)
    return grad


def finite_diff_grad(
    loss_fn: Callable[[np.ndarray, np.ndarray], float],
    x,
    y,
    step: float = 1e-5,
) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradients of ``loss_fn(x, y)`` w.r.t. both arrays."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    gx = finite_diff(lambda a: loss_fn(a, y), x, step)
    gy = finite_diff(lambda a: loss_fn(x, a), y, step)
    return gx, gy
