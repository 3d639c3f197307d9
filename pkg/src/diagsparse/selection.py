"""Differentiable diagonal selection and scheduling.

The soft top-k weighting is a temperature-controlled, budget-capped softmax:
starting from k * softmax(alpha / T), any entry that would exceed 1 is
clamped there and its surplus budget is redistributed over the remaining
entries (capped water-filling).  When no entry clamps this is exactly
min(k * softmax(alpha / T), 1); as T -> 0 it converges to hard top-k
selection with the k largest entries at 1 and the rest at 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diagcore import required_diagonals
from .errors import (
    EmptyLayerList,
    NonPositiveTemperature,
    StepOutOfRange,
)


@dataclass
class SelectorState:
    """Learnable importance logits for one layer's candidate diagonals."""

    alpha: np.ndarray
    k: int
    l1_coeff: float = 1e-4

    def __post_init__(self) -> None:
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.ndim != 1:
            raise ValueError("alpha must be a vector")
        if not 1 <= self.k <= self.alpha.size:
            raise ValueError(f"k={self.k} outside [1, {self.alpha.size}]")
        if self.l1_coeff < 0:
            raise ValueError("l1_coeff must be nonnegative")


@dataclass(frozen=True)
class TemperatureSchedule:
    kind: str = "cosine"
    t_init: float = 4.0
    t_final: float = 0.05
    total_steps: int = 1

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "linear", "cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.t_init >= self.t_final > 0:
            raise NonPositiveTemperature(
                f"need t_init >= t_final > 0, got {self.t_init}, {self.t_final}"
            )
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")


@dataclass(frozen=True)
class SparsitySchedule:
    kind: str = "constant"
    s_init: float = 0.0
    s_final: float = 0.9
    total_steps: int = 1

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "linear", "cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not (0 <= self.s_init < 1 and 0 <= self.s_final < 1):
            raise ValueError("sparsities must lie in [0, 1)")
        if self.s_init > self.s_final:
            raise ValueError("s_init must not exceed s_final")
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")


@dataclass(frozen=True)
class BudgetAllocation:
    method: str = "uniform"
    global_sparsity: float = 0.9

    def __post_init__(self) -> None:
        if self.method not in ("uniform", "erk", "compute_fraction"):
            raise ValueError(f"unknown allocation method {self.method!r}")
        if not 0 <= self.global_sparsity < 1:
            raise ValueError("global_sparsity must be in [0, 1)")


def _check_topk_args(alpha: np.ndarray, k: int, temperature: float) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    if temperature <= 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {temperature}")
    if not 1 <= k <= alpha.size:
        raise ValueError(f"k={k} outside [1, {alpha.size}]")
    return alpha


def _waterfill(z: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Capped redistribution of budget k over softmax(z).

    Returns (tilde, clamped_mask).  Entries in the clamped set sit at
    exactly 1; the rest carry (k - #clamped) * softmax restricted to the
    unclamped entries.  Computed on sorted logits via suffix logsumexp so
    arbitrarily cold temperatures stay finite.
    """
    n = z.size
    order = np.argsort(-z, kind="stable")
    zs = z[order]
    # suffix[i] = logsumexp(zs[i:])
    suffix = np.logaddexp.accumulate(zs[::-1])[::-1]
    limit = min(k, n)
    ms = np.arange(limit)
    keeps = (k - ms) * np.exp(zs[:limit] - suffix[:limit]) >= 1.0
    m = int(np.argmin(keeps)) if not keeps.all() else limit
    tilde = np.empty(n)
    clamped = np.zeros(n, dtype=bool)
    clamped[order[:m]] = True
    tilde[order[:m]] = 1.0
    if m < n:
        rest = order[m:]
        tilde[rest] = (k - m) * np.exp(zs[m:] - suffix[m])
    return tilde, clamped


def soft_topk(alpha: np.ndarray, k: int, temperature: float) -> np.ndarray:
    """Soft selection weights in [0, 1] summing to at most k.

    Args:
        alpha: importance logits.
        k: target selection count, 1 <= k <= len(alpha).
        temperature: positive softness parameter T.

    Returns:
        Vector of the same length; equals min(k * softmax(alpha/T), 1)
        whenever that expression stays below 1 everywhere, with clamped
        surplus redistributed otherwise.
    """
    alpha = _check_topk_args(alpha, k, temperature)
    tilde, _ = _waterfill(alpha / temperature, k)
    return tilde


def soft_topk_grad(
    alpha: np.ndarray, k: int, temperature: float, upstream: np.ndarray
) -> np.ndarray:
    """Gradient of <upstream, soft_topk(alpha, k, T)> with respect to alpha.

    Clamped entries get zero local derivative (min-subgradient choice); the
    rest flow through the softmax Jacobian of the unclamped set scaled by
    the remaining budget over T.
    """
    alpha = _check_topk_args(alpha, k, temperature)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != alpha.shape:
        raise ValueError("upstream must match alpha's shape")
    _, clamped = _waterfill(alpha / temperature, k)
    grad = np.zeros_like(alpha)
    active = ~clamped
    n_active = int(active.sum())
    if n_active == 0:
        return grad
    budget = k - int(clamped.sum())
    if budget <= 0:
        return grad
    z = alpha[active] / temperature
    z = z - z.max()
    q = np.exp(z)
    q /= q.sum()
    w = upstream[active] * q
    grad[active] = (budget / temperature) * (w - q * w.sum())
    return grad


def select_hard(alpha: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, ties toward the smaller index.

    Returned sorted ascending so the result is directly usable as a
    pattern offset list.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if not 1 <= k <= alpha.size:
        raise ValueError(f"k={k} outside [1, {alpha.size}]")
    order = np.argsort(-alpha, kind="stable")
    return np.sort(order[:k])


def temperature_at(step: int, sched: TemperatureSchedule) -> float:
    """Temperature at a training step under the given schedule."""
    if not 0 <= step <= sched.total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {sched.total_steps}]")
    if sched.kind == "constant":
        return sched.t_init
    frac = step / sched.total_steps
    if sched.kind == "linear":
        return sched.t_init + (sched.t_final - sched.t_init) * frac
    return sched.t_final + 0.5 * (sched.t_init - sched.t_final) * (
        1.0 + np.cos(np.pi * frac)
    )


def sparsity_at(step: int, sched: SparsitySchedule) -> float:
    """Scheduled global sparsity; constant schedules hold the target."""
    if not 0 <= step <= sched.total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {sched.total_steps}]")
    if sched.kind == "constant":
        return sched.s_final
    frac = step / sched.total_steps
    if sched.kind == "linear":
        return sched.s_init + (sched.s_final - sched.s_init) * frac
    return sched.s_final + 0.5 * (sched.s_init - sched.s_final) * (
        1.0 + np.cos(np.pi * frac)
    )


def l1_term(alpha: np.ndarray, coeff: float) -> tuple[float, np.ndarray]:
    """(penalty, gradient) of coeff * sum(|alpha|); sign(0) taken as 0."""
    if coeff < 0:
        raise ValueError("l1 coefficient must be nonnegative")
    alpha = np.asarray(alpha, dtype=np.float64)
    return coeff * float(np.abs(alpha).sum()), coeff * np.sign(alpha)


def allocate_budgets(layer_shapes, alloc: BudgetAllocation) -> list[float]:
    """Per-layer sparsities realizing a global nonzero budget.

    uniform assigns the global sparsity everywhere.  erk distributes
    density proportionally to (M+N)/(M*N); compute_fraction proportionally
    to each layer's share of multiply-accumulate work (M*N).  Both are
    rescaled so total nonzeros match the global budget, with any layer
    whose share would exceed density 1 capped dense and the remainder
    redistributed.
    """
    shapes = [(int(m), int(n)) for m, n in layer_shapes]
    if not shapes:
        raise EmptyLayerList("need at least one layer shape")
    density_global = 1.0 - alloc.global_sparsity
    if alloc.method == "uniform":
        return [alloc.global_sparsity for _ in shapes]

    sizes = np.array([m * n for m, n in shapes], dtype=np.float64)
    if alloc.method == "erk":
        raw = np.array([(m + n) / (m * n) for m, n in shapes])
    else:  # compute_fraction: density proportional to MAC share
        raw = sizes / sizes.sum()
    budget = density_global * sizes.sum()

    dense = np.zeros(len(shapes), dtype=bool)
    densities = np.ones(len(shapes))
    for _ in range(len(shapes)):
        free = ~dense
        if not free.any():
            break
        scale = (budget - sizes[dense].sum()) / float((raw[free] * sizes[free]).sum())
        cand = scale * raw
        over = free & (cand >= 1.0)
        if not over.any():
            densities[free] = cand[free]
            break
        dense |= over
    return [float(1.0 - d) for d in densities]


def layer_diagonal_counts(layer_shapes, alloc: BudgetAllocation) -> list[int]:
    """Convenience: per-layer K after quantizing allocated sparsities."""
    rhos = allocate_budgets(layer_shapes, alloc)
    return [
        required_diagonals(m, n, rho) for (m, n), rho in zip(layer_shapes, rhos)
    ]
