"""Trainable layers: soft-selected diagonal, prune/regrow diagonal, dense.

The DynaDiag layer keeps a value vector for every candidate diagonal
(dense-equivalent storage) so re-selection never loses learned weights,
and multiplies each by its soft selection score.  While few diagonals are
active the product runs through the blocked kernel; during exploration it
falls back to the reference product.  Gradients are recorded on the tape
as one custom op, with the input gradient computed through the transpose
matrix (which is again diagonal, so the same kernels apply).
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from math import ceil, sqrt

import numpy as np

from .autodiff import Tape, Tensor
from .bcsr import BlockingConfig, assemble_bcsr, bcsr_spmm, blocking_plan, to_bcsr
from .diagcore import (
    DiagonalPattern,
    DiagSparseMatrix,
    candidate_count,
    diagonal_entries,
    reference_spmm,
    required_diagonals,
    transpose,
)
from .errors import ShapeMismatch
from .selection import (
    TemperatureSchedule,
    l1_term,
    select_hard,
    soft_topk,
    soft_topk_grad,
    temperature_at,
)

EPS_ACTIVE = 1e-3


@dataclass
class ParamSpec:
    """One trainable tensor plus its optimizer treatment."""

    tensor: Tensor
    decay: bool
    name: str


def _entry_indices(rows: int, cols: int, offsets) -> tuple[np.ndarray, np.ndarray]:
    """Stacked (n_offsets, diag_len) row/col index arrays."""
    r_list, c_list = [], []
    for off in offsets:
        r, c = diagonal_entries(rows, cols, off)
        r_list.append(r)
        c_list.append(c)
    return np.array(r_list), np.array(c_list)


class _DiagOpCache:
    """Per-active-set structure reused across steps.

    BCSR plans are only built for sets small enough to take the blocked
    path; the entry index arrays (needed for value gradients) are cached
    for the most recent set only, since exploration-phase sets are large.
    """

    def __init__(self, rows: int, cols: int, cfg: BlockingConfig, capacity: int = 16):
        self.rows = rows
        self.cols = cols
        self.cfg = cfg
        self.capacity = capacity
        self._plans: OrderedDict[tuple, tuple] = OrderedDict()
        self._last_idx: tuple | None = None

    def pattern(self, offsets: tuple[int, ...]) -> DiagonalPattern:
        return DiagonalPattern(self.rows, self.cols, offsets)

    def plans(self, offsets: tuple[int, ...]):
        """(forward plan, transpose plan, transpose pattern) for one set."""
        hit = self._plans.get(offsets)
        if hit is not None:
            self._plans.move_to_end(offsets)
            return hit
        pat = self.pattern(offsets)
        dummy = DiagSparseMatrix(pat, np.zeros((len(offsets), pat.diag_length)))
        pat_t = transpose(dummy).pattern
        entry = (
            blocking_plan(pat, self.cfg),
            blocking_plan(pat_t, self.cfg),
            pat_t,
        )
        self._plans[offsets] = entry
        if len(self._plans) > self.capacity:
            self._plans.popitem(last=False)
        return entry

    def entry_indices(self, offsets: tuple[int, ...]):
        if self._last_idx is None or self._last_idx[0] != offsets:
            r, c = _entry_indices(self.rows, self.cols, offsets)
            self._last_idx = (offsets, r, c)
        return self._last_idx[1], self._last_idx[2]


def _record_diag_matmul(
    tape: Tape,
    x: Tensor,
    values: Tensor,
    weights: np.ndarray,
    active: np.ndarray,
    cache: _DiagOpCache,
    use_bcsr: bool,
    alpha: Tensor | None = None,
    alpha_soft: np.ndarray | None = None,
    k: int | None = None,
    temperature: float | None = None,
) -> Tensor:
    """Record y = x @ W^T for W built from the active diagonals.

    With ``alpha`` given, weights are alpha_soft * values and gradients
    flow to alpha through the soft selection; otherwise only values and
    the input receive gradients.
    """
    M, N = cache.rows, cache.cols
    if x.value.ndim != 2 or x.value.shape[1] != N:
        raise ShapeMismatch(f"input has shape {x.value.shape}, expected (B, {N})")
    offsets = tuple(int(a) for a in active)
    pattern = cache.pattern(offsets)
    m = DiagSparseMatrix(pattern, weights)
    if use_bcsr:
        plan_f, plan_t, pat_t = cache.plans(offsets)
        y = bcsr_spmm(assemble_bcsr(plan_f, weights), x.value.T).T
    else:
        y = reference_spmm(m, x.value.T).T
    out = Tensor(y)
    xv = x.value
    n_act = len(offsets)
    diag_len = pattern.diag_length

    def backward(up):
        mt = transpose(m)
        if use_bcsr:
            gx = bcsr_spmm(assemble_bcsr(plan_t, mt.values), up.T).T
        else:
            gx = reference_spmm(mt, up.T).T
        # per-entry weight gradient dW[r, c] = sum_b up[b, r] * x[b, c]
        if 4 * n_act * diag_len >= M * N:
            dW = up.T @ xv
            r_idx, c_idx = cache.entry_indices(offsets)
            gw = dW[r_idx, c_idx]
        else:
            r_idx, c_idx = cache.entry_indices(offsets)
            gw = np.empty((n_act, diag_len))
            for j in range(n_act):
                gw[j] = (up[:, r_idx[j]] * xv[:, c_idx[j]]).sum(axis=0)
        g_values = np.zeros_like(values.value)
        if alpha is None:
            g_values[active] = gw
            return gx, g_values
        g_values[active] = alpha_soft[active, None] * gw
        g_soft = np.zeros(values.value.shape[0])
        g_soft[active] = (gw * values.value[active]).sum(axis=1)
        g_alpha = soft_topk_grad(alpha.value, k, temperature, g_soft)
        return gx, g_values, g_alpha

    inputs = (x, values) if alpha is None else (x, values, alpha)
    return tape.record(out, inputs, backward)


class DynaDiagLayer:
    """Linear layer on soft-selected wrap-around diagonals.

    Computes y = x W^T + bias with W = sum over active diagonals of
    alpha_soft_j P_j diag(V_j); the active set is every candidate whose
    soft score reaches EPS_ACTIVE.
    """

    def __init__(
        self,
        in_features: int,
        out_features: int,
        sparsity: float = 0.9,
        *,
        t_schedule: TemperatureSchedule | None = None,
        l1_coeff: float = 1e-4,
        bias: bool = True,
        seed: int = 0,
        blocking: BlockingConfig | None = None,
    ):
        self.in_features = in_features
        self.out_features = out_features
        M, N = out_features, in_features
        self.candidates = candidate_count(M, N)
        self.diag_len = min(M, N)
        self.k = required_diagonals(M, N, sparsity)
        self.t_schedule = t_schedule or TemperatureSchedule()
        self.l1_coeff = l1_coeff
        rng = np.random.default_rng(seed)
        bound = sqrt(1.0 / N)
        self.values = Tensor(
            rng.uniform(-bound, bound, (self.candidates, self.diag_len)),
            requires_grad=True,
        )
        self.alpha = Tensor(rng.normal(0.0, 0.01, self.candidates), requires_grad=True)
        self.bias = Tensor(np.zeros(M), requires_grad=True) if bias else None
        self._cache = _DiagOpCache(M, N, blocking or BlockingConfig())
        self.last_step = 0

    def set_k(self, k: int) -> None:
        if not 1 <= k <= self.candidates:
            raise ValueError(f"k={k} outside [1, {self.candidates}]")
        self.k = k

    def _temperature(self, step: int) -> float:
        # Past the schedule horizon the layer keeps training at t_final.
        return temperature_at(min(step, self.t_schedule.total_steps), self.t_schedule)

    def soft_scores(self, step: int) -> np.ndarray:
        return soft_topk(self.alpha.value, self.k, self._temperature(step))

    def active_set(self, step: int) -> np.ndarray:
        return np.flatnonzero(self.soft_scores(step) >= EPS_ACTIVE)

    def active_count(self, step: int) -> int:
        return int(self.active_set(step).size)

    def forward(self, x: Tensor, tape: Tape, step: int) -> Tensor:
        self.last_step = step
        T = self._temperature(step)
        a_soft = soft_topk(self.alpha.value, self.k, T)
        active = np.flatnonzero(a_soft >= EPS_ACTIVE)
        weights = a_soft[active, None] * self.values.value[active]
        out = _record_diag_matmul(
            tape,
            x,
            self.values,
            weights,
            active,
            self._cache,
            use_bcsr=active.size <= 2 * self.k,
            alpha=self.alpha,
            alpha_soft=a_soft,
            k=self.k,
            temperature=T,
        )
        if self.bias is not None:
            out = tape.add_bias(out, self.bias)
        return out

    def penalty(self, tape: Tape) -> Tensor:
        """Scalar l1 pressure on the selection logits, recorded on the tape."""
        pen, grad = l1_term(self.alpha.value, self.l1_coeff)
        out = Tensor(pen)
        return tape.record(out, (self.alpha,), lambda up: (float(up) * grad,))

    def parameters(self) -> list[ParamSpec]:
        params = [
            ParamSpec(self.values, True, "values"),
            ParamSpec(self.alpha, False, "alpha"),
        ]
        if self.bias is not None:
            params.append(ParamSpec(self.bias, False, "bias"))
        return params

    def effective_matrix(self, step: int) -> DiagSparseMatrix:
        """The active-set weight matrix exactly as the forward pass uses it."""
        a_soft = self.soft_scores(step)
        active = np.flatnonzero(a_soft >= EPS_ACTIVE)
        pattern = DiagonalPattern(
            self.out_features, self.in_features, tuple(int(a) for a in active)
        )
        return DiagSparseMatrix(pattern, a_soft[active, None] * self.values.value[active])

    def freeze(self) -> "FrozenLayer":
        """Hard-select the top K diagonals and bake the soft scores into V."""
        sel = select_hard(self.alpha.value, self.k)
        a_soft = soft_topk(self.alpha.value, self.k, self.t_schedule.t_final)
        pattern = DiagonalPattern(
            self.out_features, self.in_features, tuple(int(s) for s in sel)
        )
        vals = a_soft[sel, None] * self.values.value[sel]
        weight = DiagSparseMatrix(pattern, vals)
        bias = None if self.bias is None else self.bias.value.copy()
        return FrozenLayer(weight, bias)


class FrozenLayer:
    """Inference-only layer with cached blocked forms of W and W^T."""

    def __init__(self, weight: DiagSparseMatrix, bias: np.ndarray | None = None,
                 blocking: BlockingConfig | None = None):
        self.weight = weight
        self.bias = bias
        cfg = blocking or BlockingConfig()
        self.bcsr = to_bcsr(weight, cfg)
        self.bcsr_t = to_bcsr(transpose(weight), cfg)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.weight.cols:
            raise ShapeMismatch(
                f"input has shape {x.shape}, expected (B, {self.weight.cols})"
            )
        y = bcsr_spmm(self.bcsr, x.T).T
        if self.bias is not None:
            y = y + self.bias
        return y


class DiagHeurLayer:
    """Magnitude-prune / random-regrow baseline over whole diagonals.

    Exactly k diagonals are active at all times; values use the same
    dense-equivalent storage as the soft layer so regrown diagonals start
    from zero without disturbing optimizer bookkeeping.
    """

    def __init__(
        self,
        in_features: int,
        out_features: int,
        sparsity: float = 0.9,
        *,
        update_every: int = 100,
        prune_fraction: float = 0.3,
        bias: bool = True,
        seed: int = 0,
        blocking: BlockingConfig | None = None,
    ):
        if not 0.0 < prune_fraction < 1.0:
            raise ValueError("prune_fraction must lie in (0, 1)")
        self.in_features = in_features
        self.out_features = out_features
        M, N = out_features, in_features
        self.candidates = candidate_count(M, N)
        self.diag_len = min(M, N)
        self.k = required_diagonals(M, N, sparsity)
        self.update_every = update_every
        self.prune_fraction = prune_fraction
        rng = np.random.default_rng(seed)
        bound = sqrt(1.0 / N)
        self.values = Tensor(
            rng.uniform(-bound, bound, (self.candidates, self.diag_len)),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(M), requires_grad=True) if bias else None
        self.active = np.sort(rng.choice(self.candidates, self.k, replace=False))
        self._cache = _DiagOpCache(M, N, blocking or BlockingConfig())

    def forward(self, x: Tensor, tape: Tape, step: int = 0) -> Tensor:
        weights = self.values.value[self.active]
        out = _record_diag_matmul(
            tape,
            x,
            self.values,
            weights,
            self.active,
            self._cache,
            use_bcsr=True,
        )
        if self.bias is not None:
            out = tape.add_bias(out, self.bias)
        return out

    def parameters(self) -> list[ParamSpec]:
        params = [ParamSpec(self.values, True, "values")]
        if self.bias is not None:
            params.append(ParamSpec(self.bias, False, "bias"))
        return params

    def effective_matrix(self, step: int = 0) -> DiagSparseMatrix:
        pattern = DiagonalPattern(
            self.out_features, self.in_features, tuple(int(a) for a in self.active)
        )
        return DiagSparseMatrix(pattern, self.values.value[self.active])


def diagheur_update(
    layer: DiagHeurLayer,
    rng: np.random.Generator,
    step: int | None = None,
    total_steps: int | None = None,
) -> DiagHeurLayer:
    """Swap the weakest active diagonals for random inactive ones.

    Prunes the ceil(fraction * k) active diagonals with the smallest L2
    value norm (ties to the smaller offset) and regrows the same count of
    uniformly random inactive offsets with zero values.  With step and
    total_steps given, the fraction follows a cosine decay of the base
    prune fraction; the swap count is capped by the number of inactive
    candidates.
    """
    frac = layer.prune_fraction
    if step is not None and total_steps:
        frac = frac * 0.5 * (1.0 + np.cos(np.pi * min(step, total_steps) / total_steps))
    n = ceil(frac * layer.k)
    n = min(n, layer.candidates - layer.k)
    if n <= 0:
        return layer
    norms = np.linalg.norm(layer.values.value[layer.active], axis=1)
    order = np.lexsort((layer.active, norms))
    pruned = layer.active[order[:n]]
    survivors = np.setdiff1d(layer.active, pruned)
    inactive_mask = np.ones(layer.candidates, dtype=bool)
    inactive_mask[layer.active] = False
    pool = np.flatnonzero(inactive_mask)
    grown = rng.choice(pool, n, replace=False)
    layer.values.value[grown] = 0.0
    layer.active = np.sort(np.concatenate([survivors, grown]))
    return layer


class DenseLayer:
    """Plain affine baseline, gradient-checked through the tape primitives."""

    def __init__(self, in_features: int, out_features: int, *,
                 bias: bool = True, seed: int = 0):
        self.in_features = in_features
        self.out_features = out_features
        rng = np.random.default_rng(seed)
        bound = sqrt(1.0 / in_features)
        self.weight = Tensor(
            rng.uniform(-bound, bound, (in_features, out_features)),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_features), requires_grad=True) if bias else None

    def forward(self, x: Tensor, tape: Tape, step: int = 0) -> Tensor:
        out = tape.matmul(x, self.weight)
        if self.bias is not None:
            out = tape.add_bias(out, self.bias)
        return out

    def parameters(self) -> list[ParamSpec]:
        params = [ParamSpec(self.weight, True, "weight")]
        if self.bias is not None:
            params.append(ParamSpec(self.bias, False, "bias"))
        return params
