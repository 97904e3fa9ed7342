"""Desk-scale trainer for a tied-embedding next-item model.

The encoder is deliberately minimal: the representation of a position is
an affine map of the current item's embedding, ``x = A y_item + b``, with
the same embedding table scoring the catalog side.  That is exactly
first-order-Markov capacity, which is enough to exercise and compare the
losses, and keeps every gradient analytic:

* d loss / dA accumulates ``grad_x  y_in^T`` over valid positions,
* d loss / db accumulates ``grad_x``,
* the embedding table receives both the loss's catalog-side gradient and
  the encoder-input path ``A^T grad_x`` scattered to the items consumed.

Optimization is Adam (decoupled first/second moments); early stopping
watches validation NDCG@10 and the best-scoring epoch's parameters are
returned, not the last.  Checkpoints are ``.npz`` containers and
round-trip bit-exactly.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import asdict, dataclass, replace
from typing import Callable

import numpy as np

from .data import SequenceBatch, SplitBundle, make_batches
from .evaluate import Scorer, evaluate_examples
from .losses import (
    LossResult,
    ReceParams,
    bce_plus,
    ce_full,
    ce_sampled,
    rece,
    sample_uniform_negatives,
)

__all__ = [
    "CHECKPOINT_VERSION",
    "EncoderParams",
    "TrainConfig",
    "TrainingDiverged",
    "encode",
    "encode_backward",
    "load_checkpoint",
    "model_scorer",
    "save_checkpoint",
    "train",
]

CHECKPOINT_VERSION = 1

_SEED_MASK = 0xFFFFFFFFFFFFFFFF

LOSS_KINDS = ("ce", "bce+", "ce-", "rece")


class TrainingDiverged(RuntimeError):
    """The loss became non-finite."""


@dataclass
class EncoderParams:
    """Tied item embeddings plus the affine map producing position states."""

    item_embeddings: np.ndarray  # (C, d)
    projection: np.ndarray  # (d, d)
    bias: np.ndarray  # (d,)

    @property
    def n_items(self) -> int:
        return self.item_embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.item_embeddings.shape[1]

    @classmethod
    def initialize(cls, n_items: int, dim: int, seed: int, scale: float = 0.02, dtype=np.float32):
        rng = np.random.default_rng([seed & _SEED_MASK, 0xE17C0DE])
        return cls(
            item_embeddings=(rng.standard_normal((n_items, dim)) * scale).astype(dtype),
            projection=(rng.standard_normal((dim, dim)) * scale).astype(dtype),
            bias=(rng.standard_normal(dim) * scale).astype(dtype),
        )


@dataclass
class TrainConfig:
    """Everything a training run needs; defaults are deliberately small."""

    loss: str = "ce"  # ce | bce+ | ce- | rece
    dim: int = 32
    batch_size: int = 64
    max_len: int = 16
    learning_rate: float = 1e-3
    max_epochs: int = 20
    patience: int = 5
    seed: int = 0
    negatives: int = 16  # bce+ / ce-
    rece: ReceParams | None = None
    dtype: str = "float32"
    init_scale: float = 0.02
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_k: int = 10
    exclude_seen: bool = True

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if min(self.dim, self.batch_size, self.max_len, self.max_epochs) < 1:
            raise ValueError("dim, batch_size, max_len and max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.loss == "rece" and self.rece is None:
            raise ValueError("loss 'rece' needs ReceParams")


def encode(batch: SequenceBatch, params: EncoderParams) -> np.ndarray:
    """Position states as an affine map of the current item's embedding.

    Returns an ``(s*l, d)`` matrix, row-major over (row, position); padding
    positions are zero.
    """
    items = batch.items.ravel()
    x = np.zeros((items.size, params.dim), dtype=params.item_embeddings.dtype)
    present = items > 0
    x[present] = params.item_embeddings[items[present] - 1] @ params.projection.T + params.bias
    return x


def encode_backward(
    batch: SequenceBatch, params: EncoderParams, grad_x: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the encoder: (d projection, d bias, input-path d embeddings)."""
    items = batch.items.ravel()
    present = items > 0
    gx = grad_x[present]
    emb_in = params.item_embeddings[items[present] - 1]
    grad_proj = gx.T @ emb_in
    grad_bias = gx.sum(axis=0)
    grad_emb = np.zeros_like(params.item_embeddings)
    np.add.at(grad_emb, items[present] - 1, gx @ params.projection)
    return grad_proj, grad_bias, grad_emb


class _Adam:
    def __init__(self, shapes_like: dict[str, np.ndarray], beta1, beta2, eps):
        self.m = {k: np.zeros_like(v) for k, v in shapes_like.items()}
        self.v = {k: np.zeros_like(v) for k, v in shapes_like.items()}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction = np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        for key, p in params.items():
            g = grads[key]
            self.m[key] = b1 * self.m[key] + (1 - b1) * g
            self.v[key] = b2 * self.v[key] + (1 - b2) * g * g
            p -= (lr * correction * self.m[key] / (np.sqrt(self.v[key]) + self.eps)).astype(
                p.dtype
            )


def _loss_step_fn(config: TrainConfig, n_items: int) -> Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray, int], LossResult]:
    """Bind the configured loss into a uniform (x, y, targets, valid, step) call."""
    if config.loss == "ce":
        return lambda x, y, t, valid, step: ce_full(x, y, t, valid)

    if config.loss in ("bce+", "ce-"):
        neg_rng = np.random.default_rng([config.seed & _SEED_MASK, 0x5A3B1E])
        fn = bce_plus if config.loss == "bce+" else ce_sampled

        def sampled(x, y, t, valid, step):
            safe_t = np.where((t >= 0) & (t < n_items), t, 0)
            negs = sample_uniform_negatives(safe_t, n_items, config.negatives, neg_rng)
            return fn(x, y, t, negs, valid)

        return sampled

    step_seeds = np.random.default_rng([config.seed & _SEED_MASK, 0xC4A0])

    def rece_step(x, y, t, valid, step):
        # short batches (few valid rows) cannot support the configured chunk
        # count; clamp so every chunk keeps at least one row
        n_valid = int(np.count_nonzero(valid)) if valid is not None else x.shape[0]
        n_c = min(config.rece.n_c, n_valid, n_items)
        params = replace(config.rece, n_c=n_c, seed=int(step_seeds.integers(2**63)))
        return rece(x, y, t, params, valid)

    return rece_step


def model_scorer(params: EncoderParams) -> Scorer:
    """Score the full catalog from the last prefix item's encoded state."""

    def score(ex) -> np.ndarray:
        emb = params.item_embeddings[ex.prefix[-1]]
        state = params.projection @ emb + params.bias
        return params.item_embeddings @ state

    return score


def train(split: SplitBundle, config: TrainConfig) -> tuple[EncoderParams, list[dict]]:
    """Optimize the encoder under the configured loss with early stopping.

    Returns the parameters of the best validation epoch and a per-epoch
    history (mean train loss, validation NDCG@K, timing).  Raises
    :class:`TrainingDiverged` on a non-finite loss.
    """
    dtype = np.dtype(config.dtype)
    params = EncoderParams.initialize(
        split.n_items, config.dim, config.seed, config.init_scale, dtype
    )
    opt = _Adam(
        {"emb": params.item_embeddings, "proj": params.projection, "bias": params.bias},
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    )
    loss_step = _loss_step_fn(config, split.n_items)

    history: list[dict] = []
    best_metric = -np.inf
    best_params: EncoderParams | None = None
    epochs_since_best = 0
    global_step = 0

    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        loss_sum = 0.0
        n_steps = 0
        for batch in make_batches(split, config.batch_size, config.max_len, config.seed, epoch):
            if not batch.valid_mask.any():
                continue
            x = encode(batch, params)
            targets = batch.targets.ravel() - 1  # to 0-based; invalid rows hold -1
            valid = batch.valid_mask.ravel()
            result = loss_step(x, params.item_embeddings, targets, valid, global_step)
            if not np.isfinite(result.loss):
                raise TrainingDiverged(
                    f"non-finite loss {result.loss} at epoch {epoch}, step {global_step}"
                )
            grad_proj, grad_bias, grad_emb = encode_backward(batch, params, result.grad_x)
            result.grad_y.add_into(grad_emb)
            opt.step(
                {"emb": params.item_embeddings, "proj": params.projection, "bias": params.bias},
                {"emb": grad_emb, "proj": grad_proj, "bias": grad_bias},
                config.learning_rate,
            )
            loss_sum += result.loss
            n_steps += 1
            global_step += 1

        val = evaluate_examples(
            model_scorer(params), split.validation, ks=(config.eval_k,),
            exclude_seen=config.exclude_seen,
        )
        metric = val.ndcg[config.eval_k]
        history.append(
            {
                "epoch": epoch,
                "train_loss": loss_sum / max(1, n_steps),
                f"val_ndcg@{config.eval_k}": metric,
                "seconds": time.perf_counter() - t0,
            }
        )
        if metric > best_metric:
            best_metric = metric
            best_params = copy.deepcopy(params)
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                break

    assert best_params is not None
    return best_params, history


# --------------------------------------------------------------------------
# checkpoints

def _config_to_json(config: TrainConfig) -> str:
    payload = asdict(config)
    return json.dumps(payload, sort_keys=True)


def save_checkpoint(path: str, params: EncoderParams, config: TrainConfig, extra: dict | None = None) -> None:
    """Write a versioned ``.npz`` with all parameter matrices and a config echo."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "n_items": params.n_items,
        "dim": params.dim,
        "config": json.loads(_config_to_json(config)),
        "extra": extra or {},
    }
    np.savez(
        path,
        item_embeddings=params.item_embeddings,
        projection=params.projection,
        bias=params.bias,
        meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8),
    )


def load_checkpoint(path: str) -> tuple[EncoderParams, dict]:
    with np.load(path) as payload:
        meta = json.loads(bytes(payload["meta"]).decode("utf-8"))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        params = EncoderParams(
            item_embeddings=payload["item_embeddings"],
            projection=payload["projection"],
            bias=payload["bias"],
        )
    return params, meta
