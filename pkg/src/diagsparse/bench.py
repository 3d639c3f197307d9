"""Wall-clock microbenchmarks for the SpMM kernels and training steps.

Kernels are validated against the dense product before timing; a result
row is only emitted for a validated kernel.  Conversion cost for the
blocked kernel is reported separately and folded into an amortized
speedup (conversion plus repeated products, averaged per product).
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor
from .bcsr import bcsr_spmm, to_bcsr
from .diagcore import (
    DiagonalPattern,
    DiagSparseMatrix,
    materialize,
    reference_spmm,
    required_diagonals,
)
from .selection import TemperatureSchedule
from .training import AdamW, TrainConfig, build_model, clip_global_norm


@dataclass
class BenchResult:
    dim: int
    sparsity: float
    batch: int
    kernel: str
    reps: int
    median_ms: float
    mean_ms: float
    speedup: float
    convert_ms: float | None = None
    amortized_speedup: float | None = None


CSV_HEADER = "dim,sparsity,batch,kernel,reps,median_ms,mean_ms,speedup"


def _time(fn, reps: int, warmup: int = 3) -> tuple[float, float]:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1000.0)
    return float(np.median(samples)), float(np.mean(samples))


def _random_matrix(dim: int, sparsity: float, rng: np.random.Generator) -> DiagSparseMatrix:
    k = required_diagonals(dim, dim, sparsity)
    offsets = np.sort(rng.choice(dim, k, replace=False))
    pattern = DiagonalPattern(dim, dim, tuple(int(o) for o in offsets))
    return DiagSparseMatrix(pattern, rng.standard_normal((k, dim)))


def _validate(candidate: np.ndarray, oracle: np.ndarray) -> None:
    scale = max(1.0, float(np.abs(oracle).max()))
    if np.abs(candidate - oracle).max() > 1e-10 * scale:
        raise RuntimeError("kernel failed validation against the dense oracle")


def bench_spmm(
    dims: list[int],
    sparsities: list[float],
    batch: int = 64,
    reps: int = 20,
    seed: int = 0,
    threads: int = 1,
) -> list[BenchResult]:
    """Time dense vs reference vs blocked products per (dim, sparsity).

    Emits three rows per case (four with threads > 1, adding the
    column-partitioned multithreaded kernel as bcsr_mt).
    """
    if reps < 10:
        raise ValueError("reps must be at least 10")
    rng = np.random.default_rng(seed)
    results: list[BenchResult] = []
    for dim in dims:
        for sparsity in sparsities:
            m = _random_matrix(dim, sparsity, rng)
            X = rng.standard_normal((dim, batch))
            W = materialize(m)
            oracle = W @ X

            _validate(reference_spmm(m, X), oracle)
            t_conv0 = time.perf_counter()
            b = to_bcsr(m)
            convert_ms = (time.perf_counter() - t_conv0) * 1000.0
            _validate(bcsr_spmm(b, X), oracle)

            dense_med, dense_mean = _time(lambda: W @ X, reps)
            ref_med, ref_mean = _time(lambda: reference_spmm(m, X), reps)
            bcsr_med, bcsr_mean = _time(lambda: bcsr_spmm(b, X), reps)
            amortized = bcsr_med + convert_ms / reps
            case = dict(dim=dim, sparsity=sparsity, batch=batch, reps=reps)
            results.append(
                BenchResult(
                    kernel="dense",
                    median_ms=dense_med,
                    mean_ms=dense_mean,
                    speedup=1.0,
                    **case,
                )
            )
            results.append(
                BenchResult(
                    kernel="reference_diag",
                    median_ms=ref_med,
                    mean_ms=ref_mean,
                    speedup=dense_med / ref_med,
                    **case,
                )
            )
            results.append(
                BenchResult(
                    kernel="bcsr",
                    median_ms=bcsr_med,
                    mean_ms=bcsr_mean,
                    speedup=dense_med / bcsr_med,
                    convert_ms=convert_ms,
                    amortized_speedup=dense_med / amortized,
                    **case,
                )
            )
            if threads > 1:
                _validate(bcsr_spmm(b, X, threads=threads), oracle)
                mt_med, mt_mean = _time(
                    lambda: bcsr_spmm(b, X, threads=threads), reps
                )
                results.append(
                    BenchResult(
                        kernel="bcsr_mt",
                        median_ms=mt_med,
                        mean_ms=mt_mean,
                        speedup=dense_med / mt_med,
                        **case,
                    )
                )
    return results


def bench_train_step(config: TrainConfig, reps: int = 10, seed: int = 0):
    """Median per-step wall time, dense model vs its diagonal-sparse twin.

    The sparse model is measured in the post-annealing regime (hard
    selection at a tiny constant temperature); the exploration phase is a
    training-time transient, not the steady-state step cost.
    """
    if reps < 10:
        raise ValueError("reps must be at least 10")
    rng = np.random.default_rng(seed)
    sizes = config.model.layer_sizes
    batch = config.batch_size
    x_np = rng.standard_normal((batch, sizes[0]))
    y_np = rng.integers(0, sizes[-1], batch)

    def step_fn(model, params, opt):
        def run():
            x = Tensor(x_np)
            tape = Tape()
            logits = model.forward(x, tape, 0)
            loss = tape.softmax_cross_entropy(logits, y_np, config.label_smoothing)
            for pen in model.penalties(tape):
                loss = tape.add(loss, pen)
            opt.zero_grad()
            tape.backward(loss)
            clip_global_norm(params, config.grad_clip)
            opt.step(config.optimizer.lr)

        return run

    results = []
    for kernel, kinds in (
        ("dense_step", tuple("dense" for _ in config.model.layer_kinds)),
        ("dynadiag_step", config.model.layer_kinds),
    ):
        cfg = dataclasses.replace(
            config,
            model=dataclasses.replace(config.model, layer_kinds=kinds),
            t_schedule=TemperatureSchedule(
                kind="constant", t_init=1e-9, t_final=1e-9
            ),
        )
        model = build_model(cfg, total_steps=1)
        params = model.parameters()
        opt = AdamW(params, cfg.optimizer)
        med, mean = _time(step_fn(model, params, opt), reps)
        results.append(
            BenchResult(
                dim=max(sizes),
                sparsity=config.sparsity,
                batch=batch,
                kernel=kernel,
                reps=reps,
                median_ms=med,
                mean_ms=mean,
                speedup=1.0 if kernel == "dense_step" else results[0].median_ms / med,
            )
        )
    return results


def results_to_csv(results: list[BenchResult], path: str) -> None:
    lines = [CSV_HEADER]
    for r in results:
        lines.append(
            f"{r.dim},{r.sparsity},{r.batch},{r.kernel},{r.reps},"
            f"{r.median_ms:.6f},{r.mean_ms:.6f},{r.speedup:.6f}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def results_to_json(results: list[BenchResult], path: str) -> None:
    with open(path, "w") as fh:
        json.dump([dataclasses.asdict(r) for r in results], fh, indent=2)
