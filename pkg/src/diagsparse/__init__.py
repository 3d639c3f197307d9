"""Diagonally sparse dynamic training: selection, kernels, training, analysis."""

from .analysis import (
    BipartiteGraph,
    SmallWorldReport,
    layer_to_graph,
    mcnemar_test,
    random_bipartite_graph,
    ring_graph,
    small_world_sigma,
)
from .bcsr import (
    BcsrMatrix,
    BlockingConfig,
    bcsr_spmm,
    bcsr_stats,
    reorder_rows,
    to_bcsr,
)
from .bench import BenchResult, bench_spmm, bench_train_step
from .diagcore import (
    DiagonalPattern,
    DiagSparseMatrix,
    candidate_count,
    coverage_check,
    materialize,
    reference_spmm,
    required_diagonals,
    transpose,
)
from .errors import DiagSparseError
from .layers import DenseLayer, DiagHeurLayer, DynaDiagLayer, FrozenLayer
from .selection import (
    BudgetAllocation,
    SparsitySchedule,
    TemperatureSchedule,
    allocate_budgets,
    select_hard,
    soft_topk,
    soft_topk_grad,
)
from .training import (
    Dataset,
    ModelConfig,
    OptimizerConfig,
    TrainConfig,
    evaluate,
    load_dataset,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BcsrMatrix",
    "BenchResult",
    "BipartiteGraph",
    "BlockingConfig",
    "BudgetAllocation",
    "Dataset",
    "DenseLayer",
    "DiagHeurLayer",
    "DiagSparseError",
    "DiagSparseMatrix",
    "DiagonalPattern",
    "DynaDiagLayer",
    "FrozenLayer",
    "ModelConfig",
    "OptimizerConfig",
    "SmallWorldReport",
    "SparsitySchedule",
    "TemperatureSchedule",
    "TrainConfig",
    "allocate_budgets",
    "bcsr_spmm",
    "bcsr_stats",
    "bench_spmm",
    "bench_train_step",
    "candidate_count",
    "coverage_check",
    "evaluate",
    "layer_to_graph",
    "load_dataset",
    "materialize",
    "mcnemar_test",
    "random_bipartite_graph",
    "reference_spmm",
    "ring_graph",
    "reorder_rows",
    "required_diagonals",
    "select_hard",
    "small_world_sigma",
    "soft_topk",
    "soft_topk_grad",
    "to_bcsr",
    "train",
    "transpose",
]
