"""Memory-bounded cross-entropy over large catalogs.

Instead of materializing the full (rows x catalog) logit tensor, query
rows and catalog items are bucketed by random directions, stably sorted,
cut into equal chunks, and each row is scored only against its own and
neighboring chunks, over one or more independent rounds.  Pairs scored in
several rounds are discounted by the log of their occurrence count so
every pair contributes once to the softmax denominator.

The package ships the chunk planner, four losses with analytic gradients
sharing one stable log-sum-exp core, brute-force oracles, a closed-form
memory model validated against instrumented counts, a small
sequential-recommendation pipeline (ingest / split / train / evaluate),
and a CLI with micro-benchmarks and quality-vs-budget sweeps.
"""

from .kernels import active_backend, available_backends, use_backend
from .losses import (
    LossResult,
    ReceParams,
    SparseRowGrad,
    bce_plus,
    ce_full,
    ce_sampled,
    rece,
    sample_uniform_negatives,
)
from .memcost import (
    MemoryEstimate,
    exact_logit_elements,
    instrumented_count,
    optimal_n_b,
    peak_elements,
)
from .oracles import (
    HardNegativeReport,
    exact_logits,
    finite_diff,
    finite_diff_grad,
    plan_recall,
    topk_hard_negatives,
)
from .partition import (
    ChunkPlan,
    PairCountTable,
    RandomBucketSet,
    RoundPlan,
    assign_buckets,
    build_multi_round_plan,
    build_plan,
)

__version__ = "0.1.0"

__all__ = [
    "ChunkPlan",
    "HardNegativeReport",
    "LossResult",
    "MemoryEstimate",
    "PairCountTable",
    "RandomBucketSet",
    "ReceParams",
    "RoundPlan",
    "SparseRowGrad",
    "active_backend",
    "assign_buckets",
    "available_backends",
    "bce_plus",
    "build_multi_round_plan",
    "build_plan",
    "ce_full",
    "ce_sampled",
    "exact_logit_elements",
    "exact_logits",
    "finite_diff",
    "finite_diff_grad",
    "instrumented_count",
    "optimal_n_b",
    "peak_elements",
    "plan_recall",
    "rece",
    "sample_uniform_negatives",
    "topk_hard_negatives",
    "use_backend",
    "__version__",
]
