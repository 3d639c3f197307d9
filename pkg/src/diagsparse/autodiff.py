"""Minimal reverse-mode autodiff over rank-0/1/2 float64 arrays.

A Tape records operations in execution order; reverse iteration is then a
valid topological order for backpropagation.  Tapes are rebuilt every
step -- nothing persists across iterations, which keeps custom sparse ops
(recorded via ``Tape.record``) free to change structure between steps.
"""

from __future__ import annotations

import numpy as np

from .errors import NotScalarLoss, ShapeMismatch

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_GELU_C = 0.044715


class Tensor:
    """Value plus accumulated gradient."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        if self.value.ndim > 2:
            raise ValueError("only rank <= 2 supported")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None


class Tape:
    def __init__(self):
        self._ops: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward) -> Tensor:
        """Register a custom op.

        ``backward(upstream)`` must return one gradient array (or None)
        per input, aligned positionally.
        """
        self._ops.append((out, tuple(inputs), backward))
        return out

    # ---- primitives -------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.value.shape[-1] != b.value.shape[0]:
            raise ShapeMismatch(
                f"matmul: {a.value.shape} x {b.value.shape}"
            )
        out = Tensor(a.value @ b.value)

        def backward(up):
            return up @ b.value.T, a.value.T @ up

        return self.record(out, (a, b), backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.value.shape != b.value.shape:
            raise ShapeMismatch(f"add: {a.value.shape} vs {b.value.shape}")
        out = Tensor(a.value + b.value)
        return self.record(out, (a, b), lambda up: (up, up))

    def add_bias(self, x: Tensor, bias: Tensor) -> Tensor:
        if bias.value.ndim != 1 or bias.value.shape[0] != x.value.shape[-1]:
            raise ShapeMismatch("bias must match trailing dim")
        out = Tensor(x.value + bias.value)

        def backward(up):
            bgrad = up.sum(axis=0) if up.ndim == 2 else up
            return up, bgrad

        return self.record(out, (x, bias), backward)

    def relu(self, x: Tensor) -> Tensor:
        out = Tensor(np.maximum(x.value, 0.0))
        mask = x.value > 0.0
        return self.record(out, (x,), lambda up: (up * mask,))

    def gelu(self, x: Tensor) -> Tensor:
        """Gaussian error linear unit, tanh approximation."""
        v = x.value
        inner = _SQRT_2_OVER_PI * (v + _GELU_C * v**3)
        t = np.tanh(inner)
        out = Tensor(0.5 * v * (1.0 + t))

        def backward(up):
            dinner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * v**2)
            local = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t**2) * dinner
            return (up * local,)

        return self.record(out, (x,), backward)

    def scale(self, x: Tensor, s: float) -> Tensor:
        out = Tensor(x.value * s)
        return self.record(out, (x,), lambda up: (up * s,))

    def mean(self, x: Tensor) -> Tensor:
        out = Tensor(x.value.mean())
        n = x.value.size

        def backward(up):
            return (np.full_like(x.value, float(up) / n),)

        return self.record(out, (x,), backward)

    def softmax_cross_entropy(
        self, logits: Tensor, labels: np.ndarray, label_smoothing: float = 0.0
    ) -> Tensor:
        """Mean cross-entropy of softmax(logits) against integer labels.

        With smoothing eps the target distribution is
        (1 - eps) * onehot + eps / C.
        """
        z = logits.value
        labels = np.asarray(labels, dtype=np.int64)
        B, C = z.shape
        zmax = z.max(axis=1, keepdims=True)
        logsumexp = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
        logp = z - logsumexp[:, None]
        q = np.full((B, C), label_smoothing / C)
        q[np.arange(B), labels] += 1.0 - label_smoothing
        out = Tensor(-(q * logp).sum() / B)
        p = np.exp(logp)

        def backward(up):
            return (float(up) * (p - q) / B,)

        return self.record(out, (logits,), backward)

    # ---- reverse pass ------------------------------------------------

    def backward(self, loss: Tensor) -> None:
        if loss.value.ndim != 0:
            raise NotScalarLoss(f"loss has shape {loss.value.shape}")
        loss.grad = np.asarray(1.0)
        for out, inputs, fn in reversed(self._ops):
            if out.grad is None:
                continue
            grads = fn(out.grad)
            for tensor, g in zip(inputs, grads):
                if g is None:
                    continue
                if tensor.grad is None:
                    tensor.grad = np.array(g, dtype=np.float64)
                else:
                    tensor.grad = tensor.grad + g


def grad_check(f, xs: list[Tensor], eps: float = 1e-5) -> float:
    """Worst elementwise relative error of tape gradients vs central differences.

    ``f(xs, tape)`` must build a scalar loss on the given tape.  Error is
    |analytic - numeric| / max(1e-12, |numeric|), maximised over every
    element of every input.
    """
    tape = Tape()
    for x in xs:
        x.zero_grad()
    loss = f(xs, tape)
    tape.backward(loss)
    analytic = [
        np.zeros_like(x.value) if x.grad is None else np.array(x.grad)
        for x in xs
    ]

    def eval_loss() -> float:
        return float(f(xs, Tape()).value)

    worst = 0.0
    for xi, x in enumerate(xs):
        if not x.requires_grad:
            continue
        flat = x.value.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = eval_loss()
            flat[j] = orig - eps
            down = eval_loss()
            flat[j] = orig
            numeric = (up - down) / (2.0 * eps)
            err = abs(analytic[xi].reshape(-1)[j] - numeric) / max(
                1e-12, abs(numeric)
            )
            worst = max(worst, err)
    return worst
