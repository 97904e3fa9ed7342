"""Interaction-log ingestion, filtering, splitting and batch assembly.

Input files are UTF-8 text with one ``user<sep>item<sep>timestamp``
interaction per line (tab or comma separated).  Item and user ids are
remapped to dense integers by first appearance; timestamps are integer
seconds.  Splits are either temporal (train/test cut at a global
timestamp quantile, test users removed from train entirely) or
leave-one-out (per-user holdout of the last two interactions).

Batches hold 1-based item ids; 0 is the padding sentinel.  Sequences are
right-aligned inside the length-``l`` window so the most recent item sits
at the last position, whose next-item target is unknown and therefore
masked.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterator

import numpy as np

__all__ = [
    "EvalExample",
    "IngestError",
    "InteractionLog",
    "SequenceBatch",
    "SplitBundle",
    "ingest",
    "leave_one_out_split",
    "load_split",
    "make_batches",
    "preprocess",
    "temporal_split",
    "write_split",
]

_SEED_MASK = 0xFFFFFFFFFFFFFFFF


class IngestError(ValueError):
    """A malformed input line, reported with its 1-based line number."""

    def __init__(self, lineno: int, message: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


@dataclass
class InteractionLog:
    """(user, item, timestamp) records with dense integer vocabularies."""

    users: np.ndarray  # int64 user indices in [0, n_users)
    items: np.ndarray  # int64 item indices in [0, n_items)
    timestamps: np.ndarray  # int64 seconds
    user_ids: list[str]  # index -> original id
    item_ids: list[str]

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_interactions(self) -> int:
        return int(self.users.size)

    def density(self) -> float:
        return self.n_interactions / (self.n_users * self.n_items)


@dataclass(frozen=True)
class EvalExample:
    """One held-out prediction: rank ``target`` given the ``prefix`` history."""

    user: int
    prefix: np.ndarray  # 0-based item indices, time order
    target: int


@dataclass
class SplitBundle:
    """Training sequences plus per-user validation and test holdouts."""

    train: dict[int, np.ndarray]  # user -> 0-based item sequence in time order
    validation: list[EvalExample]
    test: list[EvalExample]
    threshold_ts: int
    n_items: int
    n_users: int


@dataclass
class SequenceBatch:
    """Padded training window: items, next-item targets and validity.

    ``items``/``targets`` hold 1-based ids (0 = padding).  A position is
    valid when it carries both an item and a target.  ``users`` is -1 for
    padding rows appended to fill the batch.
    """

    items: np.ndarray  # (s, l) int64
    targets: np.ndarray  # (s, l) int64
    valid_mask: np.ndarray  # (s, l) bool
    users: np.ndarray  # (s,) int64


def ingest(path: str, fmt: str = "tsv") -> InteractionLog:
    """Parse an interaction file; malformed lines raise with their line number.

    Vocabulary indices follow first appearance.  Duplicate records are
    kept.  Blank lines are skipped.
    """
    if fmt not in ("tsv", "csv"):
        raise ValueError(f"format must be 'tsv' or 'csv', got {fmt!r}")
    sep = "\t" if fmt == "tsv" else ","

    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    users: list[int] = []
    items: list[int] = []
    timestamps: list[int] = []

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line:
                continue
            parts = line.split(sep)
            if len(parts) != 3:
                raise IngestError(lineno, f"expected 3 columns, got {len(parts)}")
            user, item, ts_text = (p.strip() for p in parts)
            if not user or not item:
                raise IngestError(lineno, "empty user or item id")
            try:
                ts = int(ts_text)
            except ValueError:
                raise IngestError(lineno, f"unparseable timestamp {ts_text!r}") from None
            if ts < 0:
                raise IngestError(lineno, f"negative timestamp {ts}")
            users.append(user_index.setdefault(user, len(user_index)))
            items.append(item_index.setdefault(item, len(item_index)))
            timestamps.append(ts)

    return InteractionLog(
        users=np.asarray(users, dtype=np.int64),
        items=np.asarray(items, dtype=np.int64),
        timestamps=np.asarray(timestamps, dtype=np.int64),
        user_ids=list(user_index),
        item_ids=list(item_index),
    )


def _recompact(log: InteractionLog, keep: np.ndarray) -> InteractionLog:
    """Restrict a log to ``keep`` records and rebuild dense vocabularies."""
    users = log.users[keep]
    items = log.items[keep]
    ts = log.timestamps[keep]

    def remap(values: np.ndarray, names: list[str]) -> tuple[np.ndarray, list[str]]:
        # first-appearance order among the surviving records
        first = {}
        for v in values:
            v = int(v)
            if v not in first:
                first[v] = len(first)
        mapped = np.fromiter((first[int(v)] for v in values), dtype=np.int64, count=values.size)
        kept_names = [None] * len(first)
        for old, new in first.items():
            kept_names[new] = names[old]
        return mapped, kept_names

    new_users, user_ids = remap(users, log.user_ids)
    new_items, item_ids = remap(items, log.item_ids)
    return InteractionLog(new_users, new_items, ts, user_ids, item_ids)


def preprocess(log: InteractionLog, min_item_count: int = 5, min_user_count: int = 20) -> InteractionLog:
    """Drop rare items, then users left with too few interactions.

    One pass, in that order: items below ``min_item_count`` go first, and
    user counts are taken on what remains, so a user can fall below the
    user threshold because of the item filter.
    """
    item_counts = np.bincount(log.items, minlength=log.n_items)
    keep_items = item_counts[log.items] >= min_item_count
    users_after = log.users[keep_items]
    user_counts = np.bincount(users_after, minlength=log.n_users)
    keep = keep_items & (user_counts[log.users] >= min_user_count)
    if not keep.any():
        raise ValueError(
            "preprocessing removed every interaction; lower min_item_count/min_user_count"
        )
    return _recompact(log, np.flatnonzero(keep))


def _user_sequences(log: InteractionLog) -> dict[int, np.ndarray]:
    """Per-user record indices, stably sorted by timestamp (file order on ties)."""
    order = np.argsort(log.users, kind="stable")
    sorted_users = log.users[order]
    starts = np.flatnonzero(np.diff(sorted_users)) + 1
    segments = np.split(order, starts)
    out: dict[int, np.ndarray] = {}
    for seg in segments:
        u = int(log.users[seg[0]])
        out[u] = seg[np.argsort(log.timestamps[seg], kind="stable")]
    return out


def _nearest_rank_threshold(timestamps: np.ndarray, quantile: float) -> int:
    if not 0 < quantile <= 1:
        raise ValueError(f"quantile must be in (0, 1], got {quantile}")
    ts_sorted = np.sort(timestamps)
    rank = max(1, math.ceil(quantile * ts_sorted.size))
    return int(ts_sorted[rank - 1])


def temporal_split(log: InteractionLog, quantile: float = 0.95) -> SplitBundle:
    """Cut at the global timestamp quantile (nearest rank).

    Users with any interaction strictly after the threshold become test
    users and are removed from training entirely; their last interaction
    is the test target and the second-to-last the validation target,
    regardless of where those fall relative to the threshold.  Test users
    with fewer than 3 interactions cannot supply prefix + validation +
    test and are dropped from evaluation.
    """
    threshold = _nearest_rank_threshold(log.timestamps, quantile)
    sequences = _user_sequences(log)

    train: dict[int, np.ndarray] = {}
    validation: list[EvalExample] = []
    test: list[EvalExample] = []
    for user, rec in sequences.items():
        items = log.items[rec]
        if bool((log.timestamps[rec] > threshold).any()):
            if items.size < 3:
                continue  # cannot supply prefix + validation + test
            validation.append(EvalExample(user, items[:-2].copy(), int(items[-2])))
            test.append(EvalExample(user, items[:-1].copy(), int(items[-1])))
        else:
            train[user] = items.copy()

    if not test:
        raise ValueError("temporal split produced no evaluable test users")
    return SplitBundle(
        train=train,
        validation=validation,
        test=test,
        threshold_ts=threshold,
        n_items=log.n_items,
        n_users=log.n_users,
    )


def leave_one_out_split(log: InteractionLog) -> SplitBundle:
    """Per-user holdout: last interaction to test, second-to-last to validation.

    Users with fewer than 3 interactions keep their full sequence in
    training and are not evaluated.
    """
    sequences = _user_sequences(log)
    train: dict[int, np.ndarray] = {}
    validation: list[EvalExample] = []
    test: list[EvalExample] = []
    for user, rec in sequences.items():
        items = log.items[rec]
        if items.size < 3:
            train[user] = items.copy()
            continue
        train[user] = items[:-2].copy()
        validation.append(EvalExample(user, items[:-2].copy(), int(items[-2])))
        test.append(EvalExample(user, items[:-1].copy(), int(items[-1])))
    if not test:
        raise ValueError("leave-one-out split produced no evaluable users")
    return SplitBundle(
        train=train,
        validation=validation,
        test=test,
        threshold_ts=int(log.timestamps.max()),
        n_items=log.n_items,
        n_users=log.n_users,
    )


def make_batches(
    split: SplitBundle,
    batch_size: int,
    max_len: int,
    seed: int,
    epoch: int = 0,
) -> Iterator[SequenceBatch]:
    """Shuffle training users and yield right-aligned padded windows.

    Each user contributes their last ``max_len`` items; the target at
    every position is the following item, so the final position of each
    window is masked.  The last batch is padded with all-sentinel rows.
    """
    if batch_size < 1 or max_len < 1:
        raise ValueError("batch_size and max_len must be >= 1")
    users = sorted(split.train)
    rng = np.random.default_rng([seed & _SEED_MASK, epoch])
    order = rng.permutation(len(users))

    for start in range(0, len(users), batch_size):
        chosen = [users[i] for i in order[start : start + batch_size]]
        items = np.zeros((batch_size, max_len), dtype=np.int64)
        targets = np.zeros((batch_size, max_len), dtype=np.int64)
        row_users = np.full(batch_size, -1, dtype=np.int64)
        for r, user in enumerate(chosen):
            seq = split.train[user][-max_len:] + 1  # to 1-based, 0 = padding
            w = seq.size
            items[r, max_len - w :] = seq
            targets[r, max_len - w : max_len - 1] = seq[1:]
            row_users[r] = user
        valid = (items > 0) & (targets > 0)
        yield SequenceBatch(items=items, targets=targets, valid_mask=valid, users=row_users)


# --------------------------------------------------------------------------
# split manifests (audit files + what the CLI hands from `prepare` to `train`)

_MANIFEST = "manifest.tsv"
_ITEMS = "items.tsv"
_USERS = "users.tsv"
_STATS = "stats.txt"


def write_split(out_dir: str, log: InteractionLog, split: SplitBundle, kind: str) -> None:
    """Write manifest + vocabularies + stats for a prepared split.

    The manifest has one ``split<TAB>user<TAB>item<TAB>timestamp`` line
    per interaction, using original ids.  Splits are ``train`` (training
    users, in sequence order), ``prefix`` (evaluation users' history up to
    the validation target), ``validation`` and ``test``.
    """
    os.makedirs(out_dir, exist_ok=True)
    sequences = _user_sequences(log)

    def seq_lines(user: int, rec_indices: np.ndarray, tag: str):
        uid = log.user_ids[user]
        for rec in rec_indices:
            yield f"{tag}\t{uid}\t{log.item_ids[log.items[rec]]}\t{log.timestamps[rec]}\n"

    eval_users = {ex.user for ex in split.test}
    with open(os.path.join(out_dir, _MANIFEST), "w", encoding="utf-8") as fh:
        for user in sorted(split.train):
            rec = sequences[user]
            n_train = split.train[user].size
            fh.writelines(seq_lines(user, rec[:n_train], "train"))
        for user in sorted(eval_users):
            rec = sequences[user]
            in_train = split.train[user].size if user in split.train else 0
            fh.writelines(seq_lines(user, rec[in_train:-2], "prefix"))
            fh.writelines(seq_lines(user, rec[-2:-1], "validation"))
            fh.writelines(seq_lines(user, rec[-1:], "test"))

    with open(os.path.join(out_dir, _ITEMS), "w", encoding="utf-8") as fh:
        fh.writelines(f"{i}\t{name}\n" for i, name in enumerate(log.item_ids))
    with open(os.path.join(out_dir, _USERS), "w", encoding="utf-8") as fh:
        fh.writelines(f"{i}\t{name}\n" for i, name in enumerate(log.user_ids))

    density = log.density()
    stats = {
        "split": kind,
        "users": log.n_users,
        "items": log.n_items,
        "interactions": log.n_interactions,
        "density": f"{density:.6f}",
        "density_pct": f"{100.0 * density:.2f}%",
        "threshold_ts": split.threshold_ts,
        "train_users": len(split.train),
        "eval_users": len(split.test),
    }
    with open(os.path.join(out_dir, _STATS), "w", encoding="utf-8") as fh:
        fh.writelines(f"{k}={v}\n" for k, v in stats.items())


def load_split(data_dir: str) -> SplitBundle:
    """Rebuild a :class:`SplitBundle` from a prepared directory."""
    item_index: dict[str, int] = {}
    with open(os.path.join(data_dir, _ITEMS), encoding="utf-8") as fh:
        for line in fh:
            idx, name = line.rstrip("\n").split("\t", 1)
            item_index[name] = int(idx)
    user_index: dict[str, int] = {}
    with open(os.path.join(data_dir, _USERS), encoding="utf-8") as fh:
        for line in fh:
            idx, name = line.rstrip("\n").split("\t", 1)
            user_index[name] = int(idx)

    threshold_ts = 0
    with open(os.path.join(data_dir, _STATS), encoding="utf-8") as fh:
        for line in fh:
            key, _, value = line.rstrip("\n").partition("=")
            if key == "threshold_ts":
                threshold_ts = int(value)

    train: dict[int, list[int]] = {}
    prefix: dict[int, list[int]] = {}
    val_target: dict[int, int] = {}
    test_target: dict[int, int] = {}
    with open(os.path.join(data_dir, _MANIFEST), encoding="utf-8") as fh:
        for line in fh:
            tag, user, item, _ts = line.rstrip("\n").split("\t")
            u = user_index[user]
            i = item_index[item]
            if tag == "train":
                train.setdefault(u, []).append(i)
            elif tag == "prefix":
                prefix.setdefault(u, []).append(i)
            elif tag == "validation":
                val_target[u] = i
            elif tag == "test":
                test_target[u] = i
            else:
                raise ValueError(f"unknown manifest split tag {tag!r}")

    validation: list[EvalExample] = []
    test: list[EvalExample] = []
    for u in sorted(test_target):
        # evaluation prefix = the user's training items (leave-one-out) plus
        # any manifest prefix rows (temporal); test additionally sees the
        # validation item.
        head = train.get(u, []) + prefix.get(u, [])
        validation.append(EvalExample(u, np.asarray(head, dtype=np.int64), val_target[u]))
        test.append(
            EvalExample(u, np.asarray(head + [val_target[u]], dtype=np.int64), test_target[u])
        )

    return SplitBundle(
        train={u: np.asarray(seq, dtype=np.int64) for u, seq in train.items()},
        validation=validation,
        test=test,
        threshold_ts=threshold_ts,
        n_items=len(item_index),
        n_users=len(user_index),
    )
