"""Numpy reference backend for the per-block scoring kernels.

Both backends share one contract.  ``forward_block`` folds a raw logit
block into per-row streaming log-sum-exp state: positives are masked out,
duplicate-scored pairs are discounted by ``log(count)``, and the running
(max, sum) pair per row is advanced.  ``backward_block`` recomputes the
corrected block and turns it into scaled softmax weights in place.

Blocks are mutated in place; ``x_rows`` ids are distinct within a block
(each row lives in exactly one chunk per round), which makes the fancy
indexing below race-free.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def _positive_hits(block, x_rows, y_items, targets, mask_positives):
    if not mask_positives:
        return None
    hits = y_items[None, :] == targets[x_rows][:, None]
    return hits if hits.any() else None


def _apply_duplicate_discount(block, x_rows, y_items, dup_keys, dup_log_counts, n_items):
    if dup_keys.size == 0:
        return
    keys = x_rows[:, None] * np.int64(n_items) + y_items[None, :]
    pos = np.searchsorted(dup_keys, keys)
    pos_c = np.minimum(pos, dup_keys.size - 1)
    found = dup_keys[pos_c] == keys
    if found.any():
        discount = np.zeros(block.shape, dtype=block.dtype)
        discount[found] = dup_log_counts[pos_c[found]].astype(block.dtype)
        block -= discount


def forward_block(
    block,
    x_rows,
    y_items,
    targets,
    dup_keys,
    dup_log_counts,
    n_items,
    run_max,
    run_sum,
    neg_max,
    mask_positives,
):
    """Fold one raw logit block into the per-row log-sum-exp state.

    Returns the number of masked positive entries.  ``run_max``/``run_sum``
    hold the streaming state (init -inf / 0); ``neg_max`` tracks the
    largest raw negative logit seen per row.
    """
    hits = _positive_hits(block, x_rows, y_items, targets, mask_positives)
    masked = 0
    if hits is not None:
        masked = int(np.count_nonzero(hits))
        block[hits] = -np.inf

    raw_max = block.max(axis=1)
    neg_max[x_rows] = np.maximum(neg_max[x_rows], raw_max)

    _apply_duplicate_discount(block, x_rows, y_items, dup_keys, dup_log_counts, n_items)

    block_max = block.max(axis=1)
    has_content = block_max > -np.inf
    if not has_content.any():
        return masked
    rows = x_rows[has_content]
    new_max = np.maximum(run_max[rows], block_max[has_content])
    carry = run_sum[rows] * np.exp(run_max[rows] - new_max)  # exp(-inf - finite) == 0
    fresh = np.exp(
        block[has_content] - new_max[:, None], dtype=np.float64
    ).sum(axis=1)
    run_sum[rows] = carry + fresh
    run_max[rows] = new_max
    return masked


def backward_block(
    block,
    x_rows,
    y_items,
    targets,
    dup_keys,
    dup_log_counts,
    n_items,
    log_denom,
    scale,
    mask_positives,
):
    """Turn a recomputed raw logit block into scaled softmax weights in place."""
    hits = _positive_hits(block, x_rows, y_items, targets, mask_positives)
    if hits is not None:
        block[hits] = -np.inf
    _apply_duplicate_discount(block, x_rows, y_items, dup_keys, dup_log_counts, n_items)
    w = np.exp(block.astype(np.float64) - log_denom[x_rows][:, None]) * scale
    block[...] = w.astype(block.dtype)
