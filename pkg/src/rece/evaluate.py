"""Unsampled top-K ranking metrics over the full catalog.

One relevant item per evaluation point; ranks are 1-based and ties break
toward the lowest item index.  Items from a user's history can be
excluded from the candidate set (default), but never the current target.
Popularity and random scorers provide calibration baselines.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import EvalExample, SplitBundle

__all__ = [
    "MetricReport",
    "evaluate_examples",
    "hr_at_k",
    "ndcg_at_k",
    "popularity_scores",
    "random_scorer",
    "rank_full_catalog",
    "target_rank",
]

_SEED_MASK = 0xFFFFFFFFFFFFFFFF

Scorer = Callable[[EvalExample], np.ndarray]


@dataclass
class MetricReport:
    """Mean NDCG@K and HR@K over the evaluated users."""

    ndcg: dict[int, float]
    hr: dict[int, float]
    n_users: int

    def lines(self) -> list[str]:
        out = [f"n_users={self.n_users}"]
        for k in sorted(self.ndcg):
            out.append(f"ndcg@{k}={self.ndcg[k]:.6f}")
        for k in sorted(self.hr):
            out.append(f"hr@{k}={self.hr[k]:.6f}")
        return out


def ndcg_at_k(rank_of_target: int, k: int) -> float:
    """Single-relevant-item NDCG: ``1 / log2(rank + 1)`` inside the cutoff."""
    if rank_of_target < 1:
        raise ValueError(f"ranks are 1-based, got {rank_of_target}")
    if rank_of_target > k:
        return 0.0
    return 1.0 / np.log2(rank_of_target + 1.0)


def hr_at_k(rank_of_target: int, k: int) -> float:
    if rank_of_target < 1:
        raise ValueError(f"ranks are 1-based, got {rank_of_target}")
    return 1.0 if rank_of_target <= k else 0.0


def rank_full_catalog(x: np.ndarray, catalog: np.ndarray, exclusions: Iterable[int] = ()) -> np.ndarray:
    """Items ranked by score ``catalog @ x`` with excluded ids removed."""
    scores = catalog @ np.asarray(x)
    order = np.argsort(-scores, kind="stable")  # stable: ties keep index order
    excluded = set(int(e) for e in exclusions)
    if not excluded:
        return order.astype(np.int64)
    keep = np.fromiter((int(i) not in excluded for i in order), dtype=bool, count=order.size)
    return order[keep].astype(np.int64)


def target_rank(scores: np.ndarray, target: int, exclusions: Iterable[int] = ()) -> int:
    """1-based rank of ``target`` under ``scores`` without sorting.

    Ties break toward the lowest item index; excluded items (minus the
    target itself) do not compete.
    """
    scores = np.asarray(scores)
    allowed = np.ones(scores.size, dtype=bool)
    for e in exclusions:
        allowed[int(e)] = False
    allowed[target] = True
    s_t = scores[target]
    better = (scores > s_t) & allowed
    tied_before = (scores == s_t) & allowed
    tied_before[target:] = False
    return 1 + int(np.count_nonzero(better)) + int(np.count_nonzero(tied_before))


def evaluate_examples(
    scorer: Scorer,
    examples: Sequence[EvalExample],
    ks: Sequence[int] = (1, 5, 10),
    exclude_seen: bool = True,
) -> MetricReport:
    """Mean metrics of a scorer over held-out examples.

    ``exclude_seen`` removes each user's prefix items from the candidate
    set before ranking (the current target always stays rankable).
    """
    if not examples:
        raise ValueError("no examples to evaluate")
    ks = sorted(set(int(k) for k in ks))
    ndcg_sum = {k: 0.0 for k in ks}
    hr_sum = {k: 0.0 for k in ks}
    for ex in examples:
        scores = scorer(ex)
        rank = target_rank(scores, ex.target, ex.prefix if exclude_seen else ())
        for k in ks:
            ndcg_sum[k] += ndcg_at_k(rank, k)
            hr_sum[k] += hr_at_k(rank, k)
    n = len(examples)
    return MetricReport(
        ndcg={k: ndcg_sum[k] / n for k in ks},
        hr={k: hr_sum[k] / n for k in ks},
        n_users=n,
    )


def popularity_scores(split: SplitBundle) -> np.ndarray:
    """Static scores from training interaction counts (a non-personalized baseline)."""
    counts = np.zeros(split.n_items, dtype=np.float64)
    for seq in split.train.values():
        np.add.at(counts, seq, 1.0)
    return counts


def random_scorer(n_items: int, seed: int) -> Scorer:
    """Per-user random scores, deterministic given (seed, user)."""

    def score(ex: EvalExample) -> np.ndarray:
        rng = np.random.default_rng([seed & _SEED_MASK, ex.user])
        return rng.random(n_items)

    return score
