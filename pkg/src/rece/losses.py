"""Forward values and analytic gradients for the catalog-scoring losses.

Four losses share one numerically stable log-sum-exp core:

* ``ce_full``    -- exact softmax cross-entropy over the whole catalog,
* ``bce_plus``   -- binary cross-entropy with sampled negatives,
* ``ce_sampled`` -- softmax cross-entropy restricted to sampled negatives,
* ``rece``       -- chunk-planned cross-entropy: the denominator sums
  ``exp(logit - log(count))`` over exactly the pairs a
  :class:`~rece.partition.ChunkPlan` selects, so pairs scored in several
  rounds contribute once.

Every loss returns a :class:`LossResult` with the mean loss over valid
rows, per-row losses, dense gradients w.r.t. the query rows, sparse
row-indexed gradients w.r.t. the catalog, and the number of catalog
logits it actually computed (positives are scored once per row and are
not part of that count).

Losses accept float32 or float64 inputs; the loss scalar and the
log-sum-exp state always accumulate in double precision, gradients come
back in the input dtype.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import kernels
from .partition import ChunkPlan, DimensionMismatchError, plan_rounds

__all__ = [
    "LossResult",
    "ReceParams",
    "SparseRowGrad",
    "bce_plus",
    "ce_full",
    "ce_sampled",
    "rece",
    "sample_uniform_negatives",
]


@dataclass(frozen=True)
class ReceParams:
    """Knobs of the chunk-planned loss.

    ``n_b`` random bucket directions, ``n_c`` chunks, ``n_ec`` neighbor
    chunks per side, ``rounds`` independent repetitions.  Any ``n_b`` to
    ``n_c`` ratio is allowed; ``alpha_bc`` reports it.  When
    ``mask_positives_in_negatives`` is set (default) a row's target item
    is removed from its negative blocks, so the exhaustive configuration
    (``n_c=1, n_ec=0, rounds=1``) reproduces ``ce_full``.
    """

    n_b: int
    n_c: int
    n_ec: int
    rounds: int
    seed: int
    mask_positives_in_negatives: bool = True

    def __post_init__(self):
        if self.n_b < 1:
            raise ValueError(f"n_b must be >= 1, got {self.n_b}")
        if self.n_c < 1:
            raise ValueError(f"n_c must be >= 1, got {self.n_c}")
        if self.n_ec < 0:
            raise ValueError(f"n_ec must be >= 0, got {self.n_ec}")
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")

    @property
    def alpha_bc(self) -> Fraction:
        return Fraction(self.n_b, self.n_c)


@dataclass
class SparseRowGrad:
    """Row-indexed gradient contributions to the catalog matrix."""

    rows: np.ndarray  # sorted unique catalog ids with nonzero gradient
    values: np.ndarray  # (len(rows), d)
    n_rows: int  # catalog size

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.values.shape[1]), dtype=self.values.dtype)
        out[self.rows] = self.values
        return out

    def add_into(self, out: np.ndarray) -> None:
        out[self.rows] += self.values


@dataclass
class LossResult:
    """Loss value plus everything a training step or a memory audit needs.

    ``row_loss`` is 0 at invalid rows.  ``computed_logits`` counts the
    catalog-side logit elements evaluated (for ``ce_full`` the full
    ``m * C`` matrix, which contains the target column; sampled and
    chunk-planned losses count their negative blocks).
    ``max_negative_logit`` is the largest raw negative logit per row,
    ``-inf`` where a row saw no negatives; such rows contribute loss 0
    and are tallied in ``empty_negative_rows``.
    """

    loss: float
    row_loss: np.ndarray
    grad_x: np.ndarray
    grad_y: SparseRowGrad
    computed_logits: int
    max_negative_logit: np.ndarray | None = None
    empty_negative_rows: int = 0


def _prepare(x, y, targets, valid_mask):
    x = np.asarray(x)
    y = np.asarray(y)
    if x.ndim != 2 or y.ndim != 2:
        raise ValueError("x and y must be 2-d")
    if x.shape[1] != y.shape[1]:
        raise DimensionMismatchError("x", x.shape[1], "y", y.shape[1])
    m = x.shape[0]
    n_items = y.shape[0]
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (m,):
        raise ValueError(f"targets must have shape ({m},), got {targets.shape}")
    if valid_mask is None:
        valid = np.ones(m, dtype=bool)
    else:
        valid = np.asarray(valid_mask, dtype=bool)
        if valid.shape != (m,):
            raise ValueError(f"valid_mask must have shape ({m},), got {valid.shape}")
    valid_idx = np.flatnonzero(valid)
    if valid_idx.size == 0:
        raise ValueError("at least one valid row is required")
    tv = targets[valid_idx]
    bad = (tv < 0) | (tv >= n_items)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        row = int(valid_idx[first])
        raise ValueError(
            f"target {int(targets[row])} at row {row} is outside the catalog [0, {n_items})"
        )
    return x, y, targets, valid_idx


def _sparse_from_dense(dense: np.ndarray, touched: np.ndarray) -> SparseRowGrad:
    rows = np.flatnonzero(touched).astype(np.int64)
    return SparseRowGrad(rows=rows, values=dense[rows], n_rows=dense.shape[0])


def _empty_rows(neg_max: np.ndarray, valid_idx: np.ndarray) -> int:
    return int(np.count_nonzero(neg_max[valid_idx] == -np.inf))


def ce_full(x, y, targets, valid_mask=None) -> LossResult:
    """Exact softmax cross-entropy over the full catalog.

    Per valid row: ``-log softmax(x_i . Y^T)[target_i]`` via a row-max
    shifted log-sum-exp; the per-logit gradient is ``softmax - onehot``.
    """
    x, y, targets, valid_idx = _prepare(x, y, targets, valid_mask)
    n_valid = valid_idx.size
    n_items = y.shape[0]
    xv = x[valid_idx]
    tv = targets[valid_idx]

    logits = xv @ y.T
    row_max = logits.max(axis=1)
    shifted = logits - row_max[:, None]
    sum_exp = np.exp(shifted, dtype=np.float64).sum(axis=1)
    log_denom = row_max.astype(np.float64) + np.log(sum_exp)
    pos = logits[np.arange(n_valid), tv].astype(np.float64)

    row_loss = np.zeros(x.shape[0], dtype=np.float64)
    row_loss[valid_idx] = log_denom - pos
    loss = float(row_loss[valid_idx].mean())

    probs = np.exp(shifted - (log_denom - row_max)[:, None]).astype(x.dtype)
    grad_logits = probs
    grad_logits[np.arange(n_valid), tv] -= 1
    grad_logits *= np.asarray(1.0 / n_valid, dtype=x.dtype)

    grad_x = np.zeros_like(x)
    grad_x[valid_idx] = grad_logits @ y
    grad_y_dense = grad_logits.T @ xv

    neg = logits.copy()
    neg[np.arange(n_valid), tv] = -np.inf
    neg_max = np.full(x.shape[0], -np.inf)
    neg_max[valid_idx] = neg.max(axis=1)

    return LossResult(
        loss=loss,
        row_loss=row_loss,
        grad_x=grad_x,
        grad_y=SparseRowGrad(
            rows=np.arange(n_items, dtype=np.int64), values=grad_y_dense, n_rows=n_items
        ),
        computed_logits=int(n_valid) * n_items,
        max_negative_logit=neg_max,
        empty_negative_rows=_empty_rows(neg_max, valid_idx),
    )


def sample_uniform_negatives(targets, n_items: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. uniform draws per row from the catalog, excluding each row's target.

    Draws from ``[0, n_items - 1)`` and shifts values at or above the
    target up by one, which is exactly uniform over the non-target items.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if n < 1:
        raise ValueError(f"need at least one negative, got {n}")
    if n >= n_items:
        raise ValueError(
            f"cannot draw {n} negatives from a catalog of {n_items} while excluding the target"
        )
    draws = rng.integers(0, n_items - 1, size=(targets.size, n), dtype=np.int64)
    draws += draws >= targets[:, None]
    return draws


def _check_negatives(negatives, targets, valid_idx, n_items):
    negatives = np.asarray(negatives, dtype=np.int64)
    if negatives.ndim != 2 or negatives.shape[0] != targets.size:
        raise ValueError(f"negatives must be (m, n), got {negatives.shape}")
    n = negatives.shape[1]
    if n < 1:
        raise ValueError("need at least one negative per row")
    if n >= n_items:
        raise ValueError(
            f"{n} negatives per row with a catalog of {n_items} cannot exclude the target"
        )
    nv = negatives[valid_idx]
    if ((nv < 0) | (nv >= n_items)).any():
        raise ValueError("negative ids outside the catalog")
    if (nv == targets[valid_idx][:, None]).any():
        raise ValueError("negatives must exclude each row's target")
    return negatives


def _scatter_grad_y(dense, ids, contributions):
    # ids may repeat across rows; np.add.at accumulates deterministically.
    np.add.at(dense, ids.ravel(), contributions.reshape(-1, contributions.shape[-1]))


def _sigmoid(z):
    out = np.empty_like(z)
    nonneg = z >= 0
    out[nonneg] = 1.0 / (1.0 + np.exp(-z[nonneg]))
    ez = np.exp(z[~nonneg])
    out[~nonneg] = ez / (1.0 + ez)
    return out


def bce_plus(x, y, targets, negatives, valid_mask=None) -> LossResult:
    """Binary cross-entropy with a positive and ``n`` sampled negatives per row.

    ``-log sigmoid(pos) - sum_j log(1 - sigmoid(neg_j))``, evaluated as
    softplus terms so large logits cannot overflow.
    """
    x, y, targets, valid_idx = _prepare(x, y, targets, valid_mask)
    negatives = _check_negatives(negatives, targets, valid_idx, y.shape[0])
    n_valid = valid_idx.size
    xv = x[valid_idx]
    tv = targets[valid_idx]
    nv = negatives[valid_idx]

    pos = np.einsum("id,id->i", xv, y[tv], dtype=np.float64)
    neg = np.einsum("id,ind->in", xv, y[nv], dtype=np.float64)

    row_loss = np.zeros(x.shape[0], dtype=np.float64)
    row_loss[valid_idx] = np.logaddexp(0.0, -pos) + np.logaddexp(0.0, neg).sum(axis=1)
    loss = float(row_loss[valid_idx].mean())

    scale = 1.0 / n_valid
    g_pos = ((_sigmoid(pos) - 1.0) * scale).astype(x.dtype)
    g_neg = (_sigmoid(neg) * scale).astype(x.dtype)

    grad_x = np.zeros_like(x)
    grad_x[valid_idx] = g_pos[:, None] * y[tv] + np.einsum("in,ind->id", g_neg, y[nv])

    grad_y_dense = np.zeros_like(y)
    _scatter_grad_y(grad_y_dense, tv, g_pos[:, None] * xv)
    _scatter_grad_y(grad_y_dense, nv, g_neg[:, :, None] * xv[:, None, :])
    touched = np.zeros(y.shape[0], dtype=bool)
    touched[tv] = True
    touched[nv.ravel()] = True

    neg_max = np.full(x.shape[0], -np.inf)
    neg_max[valid_idx] = neg.max(axis=1)

    return LossResult(
        loss=loss,
        row_loss=row_loss,
        grad_x=grad_x,
        grad_y=_sparse_from_dense(grad_y_dense, touched),
        computed_logits=int(n_valid) * negatives.shape[1],
        max_negative_logit=neg_max,
    )


def ce_sampled(x, y, targets, negatives, valid_mask=None) -> LossResult:
    """Softmax cross-entropy over the positive and ``n`` sampled negatives."""
    x, y, targets, valid_idx = _prepare(x, y, targets, valid_mask)
    negatives = _check_negatives(negatives, targets, valid_idx, y.shape[0])
    n_valid = valid_idx.size
    xv = x[valid_idx]
    tv = targets[valid_idx]
    nv = negatives[valid_idx]

    pos = np.einsum("id,id->i", xv, y[tv], dtype=np.float64)
    neg = np.einsum("id,ind->in", xv, y[nv], dtype=np.float64)

    both = np.concatenate([pos[:, None], neg], axis=1)
    row_max = both.max(axis=1)
    sum_exp = np.exp(both - row_max[:, None]).sum(axis=1)
    log_denom = row_max + np.log(sum_exp)

    row_loss = np.zeros(x.shape[0], dtype=np.float64)
    row_loss[valid_idx] = log_denom - pos
    loss = float(row_loss[valid_idx].mean())

    scale = 1.0 / n_valid
    probs = np.exp(both - log_denom[:, None])
    g_pos = ((probs[:, 0] - 1.0) * scale).astype(x.dtype)
    g_neg = (probs[:, 1:] * scale).astype(x.dtype)

    grad_x = np.zeros_like(x)
    grad_x[valid_idx] = g_pos[:, None] * y[tv] + np.einsum("in,ind->id", g_neg, y[nv])

    grad_y_dense = np.zeros_like(y)
    _scatter_grad_y(grad_y_dense, tv, g_pos[:, None] * xv)
    _scatter_grad_y(grad_y_dense, nv, g_neg[:, :, None] * xv[:, None, :])
    touched = np.zeros(y.shape[0], dtype=bool)
    touched[tv] = True
    touched[nv.ravel()] = True

    neg_max = np.full(x.shape[0], -np.inf)
    neg_max[valid_idx] = neg.max(axis=1)

    return LossResult(
        loss=loss,
        row_loss=row_loss,
        grad_x=grad_x,
        grad_y=_sparse_from_dense(grad_y_dense, touched),
        computed_logits=int(n_valid) * negatives.shape[1],
        max_negative_logit=neg_max,
    )


def rece(
    x,
    y,
    targets,
    params: ReceParams,
    valid_mask=None,
    round_salts: Sequence[int] | None = None,
    plan: ChunkPlan | None = None,
) -> LossResult:
    """Chunk-planned cross-entropy with duplicate-aware round aggregation.

    The denominator of each valid row sums ``exp(positive_logit)``
    (computed once, regardless of the number of rounds) plus
    ``exp(logit - log(count))`` over every (row, item) pair the plan
    scores, so a pair appearing in ``count`` blocks still contributes a
    single ``exp(logit)``.  Rows whose negative set is empty after
    positive masking contribute loss 0 with zero gradient and are counted
    in ``empty_negative_rows``.

    ``plan`` and ``round_salts`` are hooks for tests and audits; normally
    the plan is rebuilt from ``params`` on every call.
    """
    x, y, targets, valid_idx = _prepare(x, y, targets, valid_mask)
    m, _ = x.shape
    n_items = y.shape[0]
    n_valid = valid_idx.size

    if plan is None:
        plan = plan_rounds(
            x,
            y,
            params.n_b,
            params.n_c,
            params.n_ec,
            params.rounds,
            params.seed,
            valid_mask=valid_mask,
            round_salts=round_salts,
        )
    dup_keys, dup_log_counts = plan.duplicate_corrections()
    ops = kernels.active()
    mask_positives = params.mask_positives_in_negatives

    # positive logits, once per row
    pos = np.full(m, -np.inf)
    pos[valid_idx] = np.einsum("id,id->i", x[valid_idx], y[targets[valid_idx]], dtype=np.float64)

    run_max = np.full(m, -np.inf)
    run_sum = np.zeros(m, dtype=np.float64)
    neg_max = np.full(m, -np.inf)
    computed = 0
    for x_rows, y_items in plan.iter_blocks():
        if x_rows.size == 0 or y_items.size == 0:
            continue
        block = x[x_rows] @ y[y_items].T
        ops.forward_block(
            block, x_rows, y_items, targets, dup_keys, dup_log_counts,
            n_items, run_max, run_sum, neg_max, mask_positives,
        )
        computed += x_rows.size * y_items.size

    # fold the positive into the streamed negative state
    merged_max = np.maximum(run_max[valid_idx], pos[valid_idx])
    denom = run_sum[valid_idx] * np.exp(run_max[valid_idx] - merged_max) + np.exp(
        pos[valid_idx] - merged_max
    )
    log_denom = np.full(m, -np.inf)
    log_denom[valid_idx] = merged_max + np.log(denom)

    row_loss = np.zeros(m, dtype=np.float64)
    row_loss[valid_idx] = log_denom[valid_idx] - pos[valid_idx]
    loss = float(row_loss[valid_idx].mean())

    scale = 1.0 / n_valid
    tv = targets[valid_idx]
    p_pos = np.exp(pos[valid_idx] - log_denom[valid_idx])
    g_pos = ((p_pos - 1.0) * scale).astype(x.dtype)

    grad_x = np.zeros_like(x)
    grad_x[valid_idx] = g_pos[:, None] * y[tv]
    grad_y_dense = np.zeros_like(y)
    _scatter_grad_y(grad_y_dense, tv, g_pos[:, None] * x[valid_idx])
    touched = np.zeros(n_items, dtype=bool)
    touched[tv] = True

    for x_rows, y_items in plan.iter_blocks():
        if x_rows.size == 0 or y_items.size == 0:
            continue
        block = x[x_rows] @ y[y_items].T
        ops.backward_block(
            block, x_rows, y_items, targets, dup_keys, dup_log_counts,
            n_items, log_denom, scale, mask_positives,
        )
        grad_x[x_rows] += block @ y[y_items]
        grad_y_dense[y_items] += block.T @ x[x_rows]
        touched[y_items] = True

    return LossResult(
        loss=loss,
        row_loss=row_loss,
        grad_x=grad_x,
        grad_y=_sparse_from_dense(grad_y_dense, touched),
        computed_logits=computed,
        max_negative_logit=neg_max,
        empty_negative_rows=_empty_rows(neg_max, valid_idx),
    )


def rece_params_with_seed(params: ReceParams, seed: int) -> ReceParams:
    """The same knobs with a fresh seed (training draws one per step)."""
    return replace(params, seed=seed)
