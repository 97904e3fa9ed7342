"""Bucket / sort / chunk planning for selective catalog scoring.

Query rows and catalog items are each assigned to the random direction
they align with best (max dot product), stably sorted by that bucket
index, and cut into ``n_c`` equal chunks (sentinel-padded).  A row is then
scored only against the items of its own chunk and ``n_ec`` neighboring
chunks on each side.  Repeating the procedure over independent rounds
enriches the scored pair set; :class:`PairCountTable` records how often
each pair was scored so the loss can discount duplicates.

Everything here is pure index bookkeeping: deterministic given the seed,
no floating-point reductions involved.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "ChunkingError",
    "ChunkPlan",
    "DimensionMismatchError",
    "PairCountTable",
    "RandomBucketSet",
    "RoundPlan",
    "assign_buckets",
    "build_multi_round_plan",
    "build_plan",
]

SENTINEL = -1

_SEED_MASK = 0xFFFFFFFFFFFFFFFF  # seeds are treated as unsigned 64-bit


class DimensionMismatchError(ValueError):
    """Two matrices that must share their trailing dimension do not."""

    def __init__(self, name_a: str, dim_a: int, name_b: str, dim_b: int):
        self.dims = {name_a: dim_a, name_b: dim_b}
        super().__init__(
            f"{name_a} has dimension {dim_a} but {name_b} has dimension {dim_b}"
        )


class ChunkingError(ValueError):
    """A chunk layout cannot be built from the given sizes."""


@dataclass(frozen=True)
class RandomBucketSet:
    """A set of random directions used as bucket anchors.

    ``vectors`` holds one row per bucket; entries are i.i.d. standard
    normal and fully determined by ``(seed, round_id)``.
    """

    vectors: np.ndarray
    seed: int
    round_id: int = 0

    @classmethod
    def generate(cls, n_buckets: int, dim: int, seed: int, round_id: int = 0) -> "RandomBucketSet":
        if n_buckets < 1:
            raise ValueError(f"n_buckets must be >= 1, got {n_buckets}")
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        if round_id < 0:
            raise ValueError(f"round_id must be >= 0, got {round_id}")
        rng = np.random.default_rng([seed & _SEED_MASK, round_id])
        vectors = rng.standard_normal((n_buckets, dim))
        return cls(vectors=vectors, seed=seed, round_id=round_id)

    @property
    def n_buckets(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def assign_buckets(vectors: np.ndarray, buckets: "RandomBucketSet | np.ndarray") -> np.ndarray:
    """Index of the best-aligned bucket direction for every row.

    Best-aligned means maximum dot product; ties resolve to the lowest
    bucket index.
    """
    anchor = buckets.vectors if isinstance(buckets, RandomBucketSet) else np.asarray(buckets)
    v = np.asarray(vectors)
    if v.ndim != 2 or anchor.ndim != 2:
        raise ValueError("assign_buckets expects 2-d arrays")
    if v.shape[0] < 1:
        raise ValueError("need at least one row to bucket")
    if v.shape[1] != anchor.shape[1]:
        raise DimensionMismatchError("rows", v.shape[1], "bucket set", anchor.shape[1])
    scores = v @ anchor.T
    # np.argmax returns the first maximum, i.e. the lowest bucket index.
    return np.argmax(scores, axis=1).astype(np.int64)


@dataclass(frozen=True)
class RoundPlan:
    """One round of sorted chunk assignments for rows and catalog items.

    ``sorted_x_rows`` / ``sorted_y_items`` are the sorted id sequences,
    padded with :data:`SENTINEL` to ``n_chunks * chunk_size`` so every
    chunk has equal width.  Sentinel slots never contribute scored pairs.
    """

    round_id: int
    bucket_index_x: np.ndarray  # bucket per valid row, original relative order
    bucket_index_y: np.ndarray  # bucket per catalog item
    perm_x: np.ndarray  # stable argsort of bucket_index_x
    perm_y: np.ndarray  # stable argsort of bucket_index_y
    sorted_x_rows: np.ndarray  # global row ids in sorted order, sentinel-padded
    sorted_y_items: np.ndarray  # item ids in sorted order, sentinel-padded
    n_chunks: int
    chunk_size_x: int
    chunk_size_y: int
    neighbor_radius: int

    @property
    def chunk_boundaries_x(self) -> np.ndarray:
        return np.arange(self.n_chunks + 1, dtype=np.int64) * self.chunk_size_x

    @property
    def chunk_boundaries_y(self) -> np.ndarray:
        return np.arange(self.n_chunks + 1, dtype=np.int64) * self.chunk_size_y

    def chunk_x_rows(self, chunk: int) -> np.ndarray:
        """Real (non-sentinel) global row ids of one chunk."""
        seg = self.sorted_x_rows[chunk * self.chunk_size_x : (chunk + 1) * self.chunk_size_x]
        return seg[seg != SENTINEL]

    def chunk_y_items(self, chunk: int) -> np.ndarray:
        seg = self.sorted_y_items[chunk * self.chunk_size_y : (chunk + 1) * self.chunk_size_y]
        return seg[seg != SENTINEL]

    def neighbor_y_items(self, chunk: int) -> np.ndarray:
        """Items of the chunk and its neighbors, clamped at the boundary (no wrap)."""
        lo = max(0, chunk - self.neighbor_radius) * self.chunk_size_y
        hi = min(self.n_chunks, chunk + self.neighbor_radius + 1) * self.chunk_size_y
        seg = self.sorted_y_items[lo:hi]
        return seg[seg != SENTINEL]


@dataclass(frozen=True)
class ChunkPlan:
    """Per-round chunk assignments plus the knobs they were built with.

    ``alpha_bc`` is the bucket-to-chunk ratio when known (plans built
    directly from bucket indices leave it ``None``).
    """

    rounds: tuple[RoundPlan, ...]
    n_chunks: int
    neighbor_radius: int
    n_rows: int  # full row-space size, including invalid rows
    n_items: int
    alpha_bc: Fraction | None = None

    def iter_blocks(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield (row ids, item ids) for every scored block, in a fixed order."""
        for rp in self.rounds:
            for c in range(self.n_chunks):
                yield rp.chunk_x_rows(c), rp.neighbor_y_items(c)

    def pair_keys(self) -> np.ndarray:
        """All scored (row, item) pairs as ``row * n_items + item`` keys, with multiplicity."""
        parts = []
        for x_rows, y_items in self.iter_blocks():
            if x_rows.size and y_items.size:
                parts.append((x_rows[:, None] * self.n_items + y_items[None, :]).ravel())
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(parts)

    def duplicate_corrections(self) -> tuple[np.ndarray, np.ndarray]:
        """Keys scored more than once, with ``log(count)`` per key.

        Within a single round every pair occurs at most once (a row lives
        in exactly one chunk, an item in exactly one sorted position), so
        single-round plans short-circuit to empty tables.
        """
        if len(self.rounds) == 1:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
        keys, counts = np.unique(self.pair_keys(), return_counts=True)
        dup = counts > 1
        return keys[dup], np.log(counts[dup].astype(np.float64))


class PairCountTable:
    """How many times each (row, item) pair is scored across all rounds.

    Keys are encoded ``row * n_items + item`` and kept sorted; lookups are
    binary searches.  Built by sort-based counting of the plan's pair
    stream.
    """

    def __init__(self, keys: np.ndarray, counts: np.ndarray, n_items: int):
        self.keys = np.asarray(keys, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.n_items = int(n_items)
        if self.keys.shape != self.counts.shape:
            raise ValueError("keys and counts must align")

    @classmethod
    def from_plan(cls, plan: ChunkPlan) -> "PairCountTable":
        keys, counts = np.unique(plan.pair_keys(), return_counts=True)
        return cls(keys, counts, plan.n_items)

    def __len__(self) -> int:
        return self.keys.size

    @property
    def total_pairs(self) -> int:
        """Scored pair occurrences summed over rounds (duplicates included)."""
        return int(self.counts.sum())

    def count(self, row: int, item: int) -> int:
        """Occurrence count of one pair; 0 if the pair was never scored."""
        key = np.int64(row) * self.n_items + item
        pos = int(np.searchsorted(self.keys, key))
        if pos < self.keys.size and self.keys[pos] == key:
            return int(self.counts[pos])
        return 0

    def items_for_row(self, row: int) -> np.ndarray:
        """Distinct catalog items scored against one row."""
        lo = int(np.searchsorted(self.keys, np.int64(row) * self.n_items))
        hi = int(np.searchsorted(self.keys, np.int64(row + 1) * self.n_items))
        return (self.keys[lo:hi] - np.int64(row) * self.n_items).astype(np.int64)


def _sorted_padded(ids: np.ndarray, bucket_index: np.ndarray, n_chunks: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Stable-sort ids by bucket index and pad to ``n_chunks`` equal chunks."""
    perm = np.argsort(bucket_index, kind="stable")
    chunk_size = -(-ids.size // n_chunks)  # ceil division
    padded = np.full(n_chunks * chunk_size, SENTINEL, dtype=np.int64)
    padded[: ids.size] = ids[perm]
    return perm.astype(np.int64), padded, chunk_size


def build_plan(
    bucket_index_x: np.ndarray,
    bucket_index_y: np.ndarray,
    n_chunks: int,
    neighbor_radius: int,
    valid_mask: np.ndarray | None = None,
    round_id: int = 0,
) -> ChunkPlan:
    """Build a single-round chunk plan from precomputed bucket indices.

    ``bucket_index_x`` covers every row of the batch; rows flagged invalid
    by ``valid_mask`` are dropped before sorting so they cannot pollute
    chunk composition.
    """
    ix = np.asarray(bucket_index_x, dtype=np.int64)
    iy = np.asarray(bucket_index_y, dtype=np.int64)
    if n_chunks < 1:
        raise ChunkingError(f"n_chunks must be >= 1, got {n_chunks}")
    if neighbor_radius < 0:
        raise ChunkingError(f"neighbor_radius must be >= 0, got {neighbor_radius}")

    n_rows = ix.size
    if valid_mask is None:
        valid_rows = np.arange(n_rows, dtype=np.int64)
    else:
        mask = np.asarray(valid_mask, dtype=bool)
        if mask.shape != (n_rows,):
            raise ValueError("valid_mask must match bucket_index_x length")
        valid_rows = np.flatnonzero(mask).astype(np.int64)

    if n_chunks > valid_rows.size:
        raise ChunkingError(
            f"n_chunks={n_chunks} exceeds the {valid_rows.size} valid rows; chunk size would be < 1"
        )
    if n_chunks > iy.size:
        raise ChunkingError(
            f"n_chunks={n_chunks} exceeds the catalog size {iy.size}; chunk size would be < 1"
        )

    ix_valid = ix[valid_rows]
    perm_x, sorted_x, chunk_x = _sorted_padded(valid_rows, ix_valid, n_chunks)
    perm_y, sorted_y, chunk_y = _sorted_padded(np.arange(iy.size, dtype=np.int64), iy, n_chunks)

    rp = RoundPlan(
        round_id=round_id,
        bucket_index_x=ix_valid,
        bucket_index_y=iy,
        perm_x=perm_x,
        perm_y=perm_y,
        sorted_x_rows=sorted_x,
        sorted_y_items=sorted_y,
        n_chunks=n_chunks,
        chunk_size_x=chunk_x,
        chunk_size_y=chunk_y,
        neighbor_radius=neighbor_radius,
    )
    return ChunkPlan(
        rounds=(rp,),
        n_chunks=n_chunks,
        neighbor_radius=neighbor_radius,
        n_rows=n_rows,
        n_items=iy.size,
    )


def build_multi_round_plan(
    x: np.ndarray,
    y: np.ndarray,
    n_buckets: int,
    n_chunks: int,
    neighbor_radius: int,
    rounds: int,
    seed: int,
    valid_mask: np.ndarray | None = None,
    round_salts: Sequence[int] | None = None,
) -> tuple[ChunkPlan, PairCountTable]:
    """Bucket, sort and chunk ``rounds`` times with round-distinct directions.

    ``round_salts`` overrides the per-round randomness (normally
    ``0..rounds-1``); passing repeated salts forces identical rounds,
    which is useful for exercising the duplicate-count bookkeeping.
    """
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    plan = plan_rounds(x, y, n_buckets, n_chunks, neighbor_radius, rounds, seed, valid_mask, round_salts)
    return plan, PairCountTable.from_plan(plan)


def plan_rounds(
    x: np.ndarray,
    y: np.ndarray,
    n_buckets: int,
    n_chunks: int,
    neighbor_radius: int,
    rounds: int,
    seed: int,
    valid_mask: np.ndarray | None = None,
    round_salts: Sequence[int] | None = None,
) -> ChunkPlan:
    """Like :func:`build_multi_round_plan` but without counting pairs.

    The loss path uses this together with
    :meth:`ChunkPlan.duplicate_corrections`, which skips the full count
    table for single-round plans.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if x.ndim != 2 or y.ndim != 2:
        raise ValueError("x and y must be 2-d")
    if x.shape[1] != y.shape[1]:
        raise DimensionMismatchError("x", x.shape[1], "y", y.shape[1])
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    if round_salts is None:
        salts = list(range(rounds))
    else:
        salts = [int(s) for s in round_salts]
        if len(salts) != rounds:
            raise ValueError(f"round_salts must have length {rounds}, got {len(salts)}")

    n_rows = x.shape[0]
    if valid_mask is None:
        valid_rows = np.arange(n_rows, dtype=np.int64)
    else:
        valid_rows = np.flatnonzero(np.asarray(valid_mask, dtype=bool)).astype(np.int64)
    if valid_rows.size == 0:
        raise ValueError("no valid rows to plan")

    x_valid = x[valid_rows]
    round_plans = []
    for salt in salts:
        anchors = RandomBucketSet.generate(n_buckets, x.shape[1], seed, round_id=salt)
        ix = np.full(n_rows, SENTINEL, dtype=np.int64)
        ix[valid_rows] = assign_buckets(x_valid, anchors)
        iy = assign_buckets(y, anchors)
        sub = build_plan(ix, iy, n_chunks, neighbor_radius, valid_mask=valid_mask, round_id=salt)
        round_plans.append(sub.rounds[0])

    return ChunkPlan(
        rounds=tuple(round_plans),
        n_chunks=n_chunks,
        neighbor_radius=neighbor_radius,
        n_rows=n_rows,
        n_items=y.shape[0],
        alpha_bc=Fraction(n_buckets, n_chunks),
    )
