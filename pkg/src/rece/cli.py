"""Operator entry point.

Subcommands: ``prepare`` (ingest/filter/split a raw interaction file),
``train``, ``eval``, ``sweep`` (grid of runs with a Pareto summary of
quality per logit budget) and ``bench`` (loss timings including both
kernel backends, and memory-model vs. instrumented counts).

Exit codes: 0 on success, 2 on usage errors, 1 on runtime failures.  The
default seed comes from ``RECE_SEED`` when set.  All result tables are
TSV with a header row; identical invocations produce byte-identical
tables except for wall-time columns.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import os
import sys
import time

import numpy as np

from . import data as data_mod
from . import evaluate as eval_mod
from . import kernels, memcost
from .losses import ReceParams, bce_plus, ce_full, ce_sampled, rece, sample_uniform_negatives
from .train import TrainConfig, load_checkpoint, model_scorer, save_checkpoint, train

__all__ = ["main"]


def _default_seed() -> int:
    return int(os.environ.get("RECE_SEED", "0"))


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--loss", choices=("ce", "bce+", "ce-", "rece"), default="ce")
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--max-len", type=int, default=16)
    p.add_argument("--n-b", type=int, default=None, help="bucket count (rece); defaults to the optimal value")
    p.add_argument("--n-c", type=int, default=None, help="chunk count (rece); defaults to --n-b")
    p.add_argument("--n-ec", type=int, default=1, help="neighbor chunks per side (rece)")
    p.add_argument("--rounds", type=int, default=1, help="independent planning rounds (rece)")
    p.add_argument("--negatives", type=int, default=16, help="sampled negatives per row (bce+/ce-)")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=_default_seed())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rece", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest, filter and split an interaction file")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("tsv", "csv"), default="tsv")
    p.add_argument("--split", choices=("temporal", "loo"), default="temporal")
    p.add_argument("--quantile", type=float, default=0.95)
    p.add_argument("--min-item-count", type=int, default=5)
    p.add_argument("--min-user-count", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared split")
    p.add_argument("--data", required=True)
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint with unsampled metrics")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", default="1,5,10", help="comma-separated cutoffs")
    p.add_argument("--include-seen", action="store_true", help="keep prefix items rankable")
    p.add_argument("--out", default=None, help="metrics file (default: <ckpt>.metrics.txt)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run a grid of configs and summarize the quality/budget front")
    p.add_argument("--grid", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="TSV results table (append, resumable)")
    p.add_argument("--shard", default=None, help="i/n to run a disjoint shard of the grid")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="loss micro-benchmarks and memory-model reports")
    p.add_argument("--mode", choices=("loss", "memory"), required=True)
    p.add_argument("--rows", type=int, default=512, help="query rows m")
    p.add_argument("--catalog", type=int, default=2048)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--negatives", type=int, default=64)
    p.add_argument("--n-b", type=int, default=8)
    p.add_argument("--n-c", type=int, default=8)
    p.add_argument("--n-ec", type=int, default=1)
    p.add_argument("--rounds", type=int, default=2)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.set_defaults(func=cmd_bench)

    return parser


def cmd_prepare(args) -> int:
    log = data_mod.ingest(args.input, args.format)
    log = data_mod.preprocess(log, args.min_item_count, args.min_user_count)
    if args.split == "temporal":
        split = data_mod.temporal_split(log, args.quantile)
    else:
        split = data_mod.leave_one_out_split(log)
    data_mod.write_split(args.out, log, split, args.split)
    for line in open(os.path.join(args.out, "stats.txt"), encoding="utf-8"):
        sys.stdout.write(line)
    return 0


def _resolve_rece_params(args, n_items: int, seed: int) -> ReceParams:
    n_rows = args.batch_size * args.max_len
    n_b, n_c = args.n_b, args.n_c
    if n_b is None and n_c is None:
        n_b = n_c = memcost.optimal_n_b(1, args.n_ec, n_items, n_rows)
    elif n_b is None:
        n_b = n_c
    elif n_c is None:
        n_c = n_b
    return ReceParams(n_b=n_b, n_c=n_c, n_ec=args.n_ec, rounds=args.rounds, seed=seed)


def _train_config(args, n_items: int) -> TrainConfig:
    rece_params = _resolve_rece_params(args, n_items, args.seed) if args.loss == "rece" else None
    return TrainConfig(
        loss=args.loss,
        dim=args.dim,
        batch_size=args.batch_size,
        max_len=args.max_len,
        learning_rate=args.lr,
        max_epochs=args.epochs,
        patience=args.patience,
        seed=args.seed,
        negatives=args.negatives,
        rece=rece_params,
    )


def cmd_train(args) -> int:
    split = data_mod.load_split(args.data)
    config = _train_config(args, split.n_items)
    if config.rece is not None:
        print(f"rece params: n_b={config.rece.n_b} n_c={config.rece.n_c} "
              f"n_ec={config.rece.n_ec} rounds={config.rece.rounds}")
    params, history = train(split, config)
    for row in history:
        print(
            f"epoch {row['epoch']:3d}  train_loss {row['train_loss']:.6f}  "
            f"val_ndcg@{config.eval_k} {row[f'val_ndcg@{config.eval_k}']:.6f}"
        )
    save_checkpoint(args.out, params, config, extra={"epochs_run": len(history)})
    print(f"checkpoint written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    params, _meta = load_checkpoint(args.ckpt)
    split = data_mod.load_split(args.data)
    ks = sorted({int(part) for part in args.k.split(",") if part.strip()})
    report = eval_mod.evaluate_examples(
        model_scorer(params), split.test, ks=ks, exclude_seen=not args.include_seen
    )
    text = "\n".join(report.lines()) + "\n"
    sys.stdout.write(text)
    out = args.out or (args.ckpt + ".metrics.txt")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(text)
    return 0


# --------------------------------------------------------------------------
# sweep

def parse_grid(path: str) -> list[dict[str, str]]:
    """Blocks of ``key=value`` lines separated by blank lines.

    Comma-separated values expand to their cartesian product within a
    block; ``#`` starts a comment line.
    """
    blocks: list[dict[str, list[str]]] = []
    current: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                if current:
                    blocks.append(current)
                    current = {}
                continue
            if line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"grid line without '=': {line!r}")
            current[key.strip()] = [v.strip() for v in value.split(",")]
    if current:
        blocks.append(current)

    configs: list[dict[str, str]] = []
    for block in blocks:
        keys = sorted(block)
        for combo in itertools.product(*(block[k] for k in keys)):
            configs.append(dict(zip(keys, combo)))
    return configs


def config_hash(config: dict[str, str]) -> str:
    canon = "\n".join(f"{k}={config[k]}" for k in sorted(config))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def _args_from_grid(config: dict[str, str]):
    """Map one grid config onto the train subcommand's argument namespace."""
    argv = ["train", "--data", "unused", "--out", "unused"]
    for key, value in config.items():
        argv += [f"--{key.replace('_', '-')}", value]
    return build_parser().parse_args(argv)


def _sweep_logit_elements(config_ns, n_items: int) -> int:
    m = config_ns.batch_size * config_ns.max_len
    if config_ns.loss == "ce":
        return m * n_items
    if config_ns.loss in ("bce+", "ce-"):
        return m * config_ns.negatives
    rp = _resolve_rece_params(config_ns, n_items, config_ns.seed)
    return memcost.exact_logit_elements(m, n_items, rp.n_c, rp.n_ec, rp.rounds)


_SWEEP_COLUMNS = ("hash", "config", "ndcg@10", "hr@10", "logit_elements", "wall_time_seconds", "seed")


def cmd_sweep(args) -> int:
    configs = parse_grid(args.grid)
    if args.shard:
        part, _, total = args.shard.partition("/")
        shard_i, shard_n = int(part), int(total)
        if not 0 <= shard_i < shard_n:
            raise ValueError(f"shard must be i/n with 0 <= i < n, got {args.shard!r}")
        configs = [c for idx, c in enumerate(configs) if idx % shard_n == shard_i]

    done: set[str] = set()
    rows: list[dict] = []
    if os.path.exists(args.out):
        with open(args.out, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split("\t")
            for line in fh:
                row = dict(zip(header, line.rstrip("\n").split("\t")))
                done.add(row["hash"])
                rows.append(row)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("\t".join(_SWEEP_COLUMNS) + "\n")

    split = data_mod.load_split(args.data)
    for config in configs:
        h = config_hash(config)
        if h in done:
            print(f"skip {h} (already in table)")
            continue
        ns = _args_from_grid(config)
        train_config = _train_config(ns, split.n_items)
        t0 = time.perf_counter()
        params, _history = train(split, train_config)
        report = eval_mod.evaluate_examples(model_scorer(params), split.test, ks=(10,))
        wall = time.perf_counter() - t0
        row = {
            "hash": h,
            "config": ";".join(f"{k}={config[k]}" for k in sorted(config)),
            "ndcg@10": f"{report.ndcg[10]:.6f}",
            "hr@10": f"{report.hr[10]:.6f}",
            "logit_elements": str(_sweep_logit_elements(ns, split.n_items)),
            "wall_time_seconds": f"{wall:.3f}",
            "seed": str(ns.seed),
        }
        with open(args.out, "a", encoding="utf-8") as fh:
            fh.write("\t".join(row[c] for c in _SWEEP_COLUMNS) + "\n")
        rows.append(row)
        print(f"done {h}: ndcg@10={row['ndcg@10']} logit_elements={row['logit_elements']}")

    print("pareto front (best ndcg@10 per logit budget):")
    print("logit_elements\tndcg@10\thash")
    best = -1.0
    for row in sorted(rows, key=lambda r: (int(r["logit_elements"]), float(r["ndcg@10"]))):
        value = float(row["ndcg@10"])
        if value > best:
            best = value
            print(f"{row['logit_elements']}\t{row['ndcg@10']}\t{row['hash']}")
    return 0


# --------------------------------------------------------------------------
# bench

def _synthetic(args):
    rng = np.random.default_rng(args.seed)
    dtype = np.dtype(args.dtype)
    x = rng.standard_normal((args.rows, args.dim)).astype(dtype)
    y = rng.standard_normal((args.catalog, args.dim)).astype(dtype)
    targets = rng.integers(0, args.catalog, size=args.rows)
    return x, y, targets


def cmd_bench(args) -> int:
    if args.mode == "loss":
        return _bench_loss(args)
    return _bench_memory(args)


def _bench_loss(args) -> int:
    x, y, targets = _synthetic(args)
    rng = np.random.default_rng(args.seed + 1)
    negatives = sample_uniform_negatives(targets, args.catalog, args.negatives, rng)
    rece_params = ReceParams(
        n_b=args.n_b, n_c=args.n_c, n_ec=args.n_ec, rounds=args.rounds, seed=args.seed
    )

    def timed(fn):
        fn()  # warm-up
        samples = []
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - t0)
        return float(np.median(samples))

    print("loss\tbackend\tcomputed_logits\tseconds_per_call")
    rows = [
        ("ce", "numpy", lambda: ce_full(x, y, targets)),
        ("bce+", "numpy", lambda: bce_plus(x, y, targets, negatives)),
        ("ce-", "numpy", lambda: ce_sampled(x, y, targets, negatives)),
    ]
    for name, backend, fn in rows:
        result = fn()
        print(f"{name}\t{backend}\t{result.computed_logits}\t{timed(fn):.6f}")
    for backend in kernels.available_backends():
        with kernels.use_backend(backend):
            fn = lambda: rece(x, y, targets, rece_params)  # noqa: E731
            result = fn()
            print(f"rece\t{backend}\t{result.computed_logits}\t{timed(fn):.6f}")
    return 0


def _bench_memory(args) -> int:
    x, y, targets = _synthetic(args)
    m, n_items = args.rows, args.catalog
    print(
        "n_c\tn_ec\trounds\tmodel_exact\tinstrumented\tequal\t"
        "full_over_exact\tpeak_model\treduction_factor"
    )
    grid_c = sorted({1, args.n_c, 2 * args.n_c})
    for n_c in grid_c:
        for n_ec in (0, args.n_ec, args.n_ec + 1):
            for rounds in (1, args.rounds, args.rounds + 1):
                params = ReceParams(n_b=n_c, n_c=n_c, n_ec=n_ec, rounds=rounds, seed=args.seed)
                estimate = memcost.peak_elements(params, n_items, m)
                result = rece(x, y, targets, params)
                counted = memcost.instrumented_count(result)
                full_over_exact = estimate.logit_elements_full / counted
                print(
                    f"{n_c}\t{n_ec}\t{rounds}\t{estimate.logit_elements_rece}\t{counted}\t"
                    f"{estimate.logit_elements_rece == counted}\t{full_over_exact:.4f}\t"
                    f"{estimate.peak_elements_model:.1f}\t{estimate.reduction_factor:.4f}"
                )
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures exit 1; argparse exits 2 itself
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
