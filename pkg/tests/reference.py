"""Hand-rolled scalar references shared by the test modules.

Everything here is deliberately naive (python loops, plain math.exp) and
independent of the package's vectorized or chunked code paths.
"""

import math

import numpy as np


def dot(a, b):
    return sum(float(x) * float(y) for x, y in zip(a, b))


def scalar_ce(x, y, targets, valid=None):
    """Full softmax cross-entropy by scalar loops: (mean loss, {row: loss})."""
    m = x.shape[0]
    rows = [i for i in range(m) if valid is None or valid[i]]
    row_losses = {}
    for i in rows:
        logits = [dot(x[i], y[j]) for j in range(y.shape[0])]
        mx = max(logits)
        denom = sum(math.exp(v - mx) for v in logits)
        row_losses[i] = (mx + math.log(denom)) - logits[int(targets[i])]
    return sum(row_losses.values()) / len(rows), row_losses


def scalar_bce(x, y, targets, negatives, valid=None):
    m = x.shape[0]
    rows = [i for i in range(m) if valid is None or valid[i]]
    total = 0.0
    for i in rows:
        pos = dot(x[i], y[int(targets[i])])
        loss = math.log1p(math.exp(-pos))
        for j in negatives[i]:
            loss += math.log1p(math.exp(dot(x[i], y[int(j)])))
        total += loss
    return total / len(rows)


def scalar_ce_sampled(x, y, targets, negatives, valid=None):
    m = x.shape[0]
    rows = [i for i in range(m) if valid is None or valid[i]]
    total = 0.0
    for i in rows:
        pos = dot(x[i], y[int(targets[i])])
        values = [pos] + [dot(x[i], y[int(j)]) for j in negatives[i]]
        mx = max(values)
        total += mx + math.log(sum(math.exp(v - mx) for v in values)) - pos
    return total / len(rows)


def enumerate_plan_pairs(plan):
    """(row, item) -> occurrence count, by walking the plan's chunks."""
    counts = {}
    for rp in plan.rounds:
        for c in range(plan.n_chunks):
            for row in rp.chunk_x_rows(c):
                for item in rp.neighbor_y_items(c):
                    key = (int(row), int(item))
                    counts[key] = counts.get(key, 0) + 1
    return counts


def rece_reference(x, y, targets, plan, mask_positives=True, valid=None):
    """Single-counted union-pair-set loss: each scored pair's exp enters once."""
    pair_counts = enumerate_plan_pairs(plan)
    row_items = {}
    for (row, item) in pair_counts:
        row_items.setdefault(row, set()).add(item)

    m = x.shape[0]
    rows = [i for i in range(m) if valid is None or valid[i]]
    row_losses = {}
    for i in rows:
        t = int(targets[i])
        items = row_items.get(i, set())
        if mask_positives:
            items = items - {t}
        pos = dot(x[i], y[t])
        denom = math.exp(pos) + sum(math.exp(dot(x[i], y[j])) for j in items)
        row_losses[i] = math.log(denom) - pos
    return sum(row_losses.values()) / len(rows), row_losses


def max_rel_error(got, want):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = max(np.abs(want).max(), 1e-12)
    return np.abs(got - want).max() / scale
