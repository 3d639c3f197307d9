"""Desk-scale training: datasets, AdamW, LR schedule, loop, checkpoints.

A model is a stack of linear layers (diagonal-sparse or dense) with ReLU
between them.  The loop schedules temperature, sparsity, and learning
rate per step, applies l1 pressure on selection logits, clips gradients
at a global norm, and emits one metrics record per epoch.
"""

from __future__ import annotations

import dataclasses
import gzip
import json
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .diagcore import (
    DiagSparseMatrix,
    from_json_dict,
    reference_spmm,
    required_diagonals,
    to_json_dict,
)
from .errors import MalformedFile, UnknownSource
from .layers import (
    DenseLayer,
    DiagHeurLayer,
    DynaDiagLayer,
    FrozenLayer,
    ParamSpec,
    diagheur_update,
)
from .selection import (
    BudgetAllocation,
    SparsitySchedule,
    TemperatureSchedule,
    allocate_budgets,
    sparsity_at,
    temperature_at,
)

# Class means sit on a scaled simplex; this scale against unit-variance
# noise keeps the task learnable but not saturated for sparse models.
SYNTHETIC_MEAN_SCALE = 4.25

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


# --------------------------------------------------------------------- config


@dataclass
class ModelConfig:
    layer_sizes: tuple[int, ...] = (784, 256, 256, 10)
    layer_kinds: tuple[str, ...] = ("dynadiag", "dynadiag", "dense")

    def __post_init__(self) -> None:
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        self.layer_kinds = tuple(self.layer_kinds)
        if len(self.layer_kinds) != len(self.layer_sizes) - 1:
            raise ValueError("need one layer kind per consecutive size pair")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError("layer sizes must be positive")
        for kind in self.layer_kinds:
            if kind not in ("dynadiag", "diagheur", "dense"):
                raise ValueError(f"unknown layer kind {kind!r}")


@dataclass
class OptimizerConfig:
    kind: str = "adamw"
    lr: float = 1e-3
    lr_final: float = 1e-6
    betas: tuple[float, float] = (0.9, 0.99)
    weight_decay: float = 5e-5
    eps: float = 1e-8

    def __post_init__(self) -> None:
        self.betas = tuple(self.betas)
        if self.kind != "adamw":
            raise ValueError(f"unsupported optimizer {self.kind!r}")
        if self.lr <= 0 or self.lr_final < 0:
            raise ValueError("learning rates must be positive")
        if not all(0 <= b < 1 for b in self.betas):
            raise ValueError("betas must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be nonnegative")


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    sparsity: float = 0.9
    budget_method: str = "uniform"
    t_schedule: TemperatureSchedule | None = None
    s_schedule: SparsitySchedule | None = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    warmup_epochs: float = 5.0
    label_smoothing: float = 0.1
    epochs: int = 15
    batch_size: int = 128
    seed: int = 0
    dataset: str = "synthetic:10:784:6000:0"
    l1_coeff: float = 1e-4
    grad_clip: float = 1.0
    update_every: int = 100
    prune_fraction: float = 0.3
    checkpoint_path: str | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.sparsity < 1:
            raise ValueError("sparsity must lie in [0, 1)")
        BudgetAllocation(self.budget_method, self.sparsity)  # validates method
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch size >= 1")
        if not 0 <= self.label_smoothing < 1:
            raise ValueError("label smoothing must lie in [0, 1)")
        if self.warmup_epochs < 0 or self.grad_clip <= 0:
            raise ValueError("warmup must be >= 0 and grad clip positive")
        if self.l1_coeff < 0 or self.update_every < 1:
            raise ValueError("l1_coeff >= 0 and update_every >= 1 required")


_SCHEDULE_TYPES = {
    "model": ModelConfig,
    "optimizer": OptimizerConfig,
    "t_schedule": TemperatureSchedule,
    "s_schedule": SparsitySchedule,
}


def config_to_dict(config: TrainConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(data: dict) -> TrainConfig:
    """Build a TrainConfig from nested plain dicts; unknown keys rejected."""
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(data) - known
    if unknown:
        raise MalformedFile(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(data)
    for key, cls in _SCHEDULE_TYPES.items():
        if key in kwargs and isinstance(kwargs[key], dict):
            sub_known = {f.name for f in dataclasses.fields(cls)}
            sub_unknown = set(kwargs[key]) - sub_known
            if sub_unknown:
                raise MalformedFile(
                    f"unknown keys under {key!r}: {sorted(sub_unknown)}"
                )
            kwargs[key] = cls(**kwargs[key])
    try:
        return TrainConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise MalformedFile(f"bad config: {exc}") from exc


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply repeatable dotted-key overrides like optimizer.lr=0.01.

    Values parse as JSON when possible, else stay strings; last override
    of a key wins.  Unknown keys are rejected.
    """
    for item in overrides:
        if "=" not in item:
            raise MalformedFile(f"override {item!r} is not key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise MalformedFile(f"unknown config key {dotted!r}")
            node = node[part]
        leaf = parts[-1]
        if leaf not in node:
            raise MalformedFile(f"unknown config key {dotted!r}")
        node[leaf] = value
    return data


# -------------------------------------------------------------------- dataset


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    split: str

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise MalformedFile("features/labels shape mismatch")
        if np.isnan(self.features).any():
            raise MalformedFile("NaN in features")
        if self.labels.size and self.labels.min() < 0:
            raise MalformedFile("negative label")

    def __len__(self) -> int:
        return self.features.shape[0]


def _scale_unit(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def _synthetic(classes: int, dims: int, samples: int, seed: int):
    rng = np.random.default_rng(seed)
    means = np.zeros((classes, dims))
    for c in range(classes):
        means[c, c % dims] = SYNTHETIC_MEAN_SCALE
    labels = np.arange(samples) % classes
    feats = means[labels] + rng.standard_normal((samples, dims))
    feats = _scale_unit(feats)
    n_train = samples * 5 // 6
    return (
        Dataset(feats[:n_train], labels[:n_train], "train"),
        Dataset(feats[n_train:], labels[n_train:], "test"),
    )


def _open_maybe_gz(path: str):
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_idx(path: str, expect_magic: int) -> np.ndarray:
    try:
        with _open_maybe_gz(path) as fh:
            raw = fh.read()
    except OSError as exc:
        raise MalformedFile(f"cannot read {path}: {exc}") from exc
    if len(raw) < 8:
        raise MalformedFile(f"{path}: truncated header")
    magic = int.from_bytes(raw[:4], "big")
    if magic != expect_magic:
        raise MalformedFile(
            f"{path}: magic {magic:#010x}, expected {expect_magic:#010x}"
        )
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    dims = [
        int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim)
    ]
    data = np.frombuffer(raw[header:], dtype=np.uint8)
    if data.size != int(np.prod(dims)):
        raise MalformedFile(f"{path}: payload size mismatch")
    return data.reshape(dims)


def _load_idx_pair(images_path: str, labels_path: str, split: str) -> Dataset:
    images = _read_idx(images_path, _IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, _IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise MalformedFile("image/label counts differ")
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(feats, labels.astype(np.int64), split)


def _load_csv(path: str, split: str) -> Dataset:
    try:
        with open(path) as fh:
            header = fh.readline().strip()
            if not header.startswith("label"):
                raise MalformedFile(f"{path}: header must start with 'label'")
            with warnings.catch_warnings():
                # an empty body is reported as MalformedFile below
                warnings.simplefilter("ignore", UserWarning)
                body = np.loadtxt(fh, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        if isinstance(exc, MalformedFile):
            raise
        raise MalformedFile(f"{path}: {exc}") from exc
    if body.size == 0:
        raise MalformedFile(f"{path}: no data rows")
    return Dataset(_scale_unit(body[:, 1:]), body[:, 0].astype(np.int64), split)


def load_dataset(source: str) -> tuple[Dataset, Dataset]:
    """Load a (train, test) pair from one of the supported sources.

    synthetic:<classes>:<dims>:<samples>:<seed> draws unit-variance
    Gaussian blobs with class means on a scaled simplex and splits 5/6
    train.  idx:<img>:<lab>[:<img>:<lab>] reads MNIST-format IDX files
    (.gz transparent).  csv:<train>[:<test>] reads `label,f0,...` files;
    a single CSV splits 80/20.  Features always land in [0, 1].
    """
    kind, _, rest = source.partition(":")
    if kind == "synthetic":
        parts = rest.split(":")
        if len(parts) != 4:
            raise UnknownSource(f"synthetic needs 4 fields, got {source!r}")
        try:
            classes, dims, samples, seed = (int(p) for p in parts)
        except ValueError as exc:
            raise UnknownSource(f"bad synthetic spec {source!r}") from exc
        if classes < 2 or dims < 1 or samples < classes:
            raise UnknownSource(f"degenerate synthetic spec {source!r}")
        return _synthetic(classes, dims, samples, seed)
    if kind == "idx":
        parts = rest.split(":")
        if len(parts) == 4:
            return (
                _load_idx_pair(parts[0], parts[1], "train"),
                _load_idx_pair(parts[2], parts[3], "test"),
            )
        if len(parts) == 2:
            full = _load_idx_pair(parts[0], parts[1], "train")
            cut = len(full) * 5 // 6
            return (
                Dataset(full.features[:cut], full.labels[:cut], "train"),
                Dataset(full.features[cut:], full.labels[cut:], "test"),
            )
        raise UnknownSource(f"idx needs 2 or 4 paths, got {source!r}")
    if kind == "csv":
        parts = rest.split(":")
        if len(parts) == 2:
            return _load_csv(parts[0], "train"), _load_csv(parts[1], "test")
        if len(parts) == 1 and parts[0]:
            full = _load_csv(parts[0], "train")
            cut = len(full) * 4 // 5
            return (
                Dataset(full.features[:cut], full.labels[:cut], "train"),
                Dataset(full.features[cut:], full.labels[cut:], "test"),
            )
        raise UnknownSource(f"csv needs 1 or 2 paths, got {source!r}")
    raise UnknownSource(f"unknown dataset source {source!r}")


# ------------------------------------------------------------------ optimizer


def adamw_step(param, grad, state: dict, *, lr, beta1, beta2, eps, weight_decay):
    """One decoupled-weight-decay Adam update; mutates state, returns param."""
    if param.shape != grad.shape:
        from .errors import ShapeMismatch

        raise ShapeMismatch(f"param {param.shape} vs grad {grad.shape}")
    state["t"] += 1
    t = state["t"]
    state["m"] = beta1 * state["m"] + (1.0 - beta1) * grad
    state["v"] = beta2 * state["v"] + (1.0 - beta2) * grad * grad
    m_hat = state["m"] / (1.0 - beta1**t)
    v_hat = state["v"] / (1.0 - beta2**t)
    return param - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * param)


class AdamW:
    """Decoupled weight decay; decay applies only where ParamSpec asks."""

    def __init__(self, params: list[ParamSpec], config: OptimizerConfig):
        self.params = params
        self.config = config
        self.state = [
            {"m": np.zeros_like(p.tensor.value), "v": np.zeros_like(p.tensor.value), "t": 0}
            for p in params
        ]

    def step(self, lr: float) -> None:
        b1, b2 = self.config.betas
        for spec, st in zip(self.params, self.state):
            if spec.tensor.grad is None:
                continue
            spec.tensor.value = adamw_step(
                spec.tensor.value,
                spec.tensor.grad,
                st,
                lr=lr,
                beta1=b1,
                beta2=b2,
                eps=self.config.eps,
                weight_decay=self.config.weight_decay if spec.decay else 0.0,
            )

    def zero_grad(self) -> None:
        for spec in self.params:
            spec.tensor.zero_grad()


def lr_at(step: int, total: int, warmup: float, lr_peak: float,
          lr_final: float = 0.0) -> float:
    """Linear warmup to the peak, then cosine decay to the final rate."""
    if step > total:
        raise ValueError(f"step {step} beyond total {total}")
    if warmup > 0 and step < warmup:
        return lr_peak * step / warmup
    if total <= warmup:
        return lr_peak
    frac = (step - warmup) / (total - warmup)
    return lr_final + 0.5 * (lr_peak - lr_final) * (1.0 + np.cos(np.pi * frac))


def clip_global_norm(params: list[ParamSpec], max_norm: float) -> float:
    total = 0.0
    for spec in params:
        if spec.tensor.grad is not None:
            total += float((spec.tensor.grad**2).sum())
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for spec in params:
            if spec.tensor.grad is not None:
                spec.tensor.grad = spec.tensor.grad * scale
    return norm


# ---------------------------------------------------------------------- model


class MLPModel:
    """Linear layers joined by ReLU; the last layer emits logits."""

    def __init__(self, layers: list, config: TrainConfig):
        self.layers = layers
        self.config = config
        self.current_step = 0

    def forward(self, x: Tensor, tape: Tape, step: int) -> Tensor:
        h = x
        for i, layer in enumerate(self.layers):
            h = layer.forward(h, tape, step)
            if i < len(self.layers) - 1:
                h = tape.relu(h)
        return h

    def penalties(self, tape: Tape) -> list[Tensor]:
        return [
            layer.penalty(tape)
            for layer in self.layers
            if isinstance(layer, DynaDiagLayer) and layer.l1_coeff > 0
        ]

    def parameters(self) -> list[ParamSpec]:
        out: list[ParamSpec] = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def sparse_layers(self) -> list:
        return [
            lyr for lyr in self.layers if isinstance(lyr, (DynaDiagLayer, DiagHeurLayer))
        ]

    def predict_logits(self, features: np.ndarray, batch: int = 1024) -> np.ndarray:
        outs = []
        for lo in range(0, features.shape[0], batch):
            x = Tensor(features[lo : lo + batch])
            outs.append(self.forward(x, Tape(), self.current_step).value)
        return np.vstack(outs)

    def freeze(self) -> "InferenceModel":
        frozen = []
        for layer in self.layers:
            if isinstance(layer, DynaDiagLayer):
                frozen.append(layer.freeze())
            elif isinstance(layer, DiagHeurLayer):
                bias = None if layer.bias is None else layer.bias.value.copy()
                frozen.append(FrozenLayer(layer.effective_matrix(), bias))
            else:
                bias = None if layer.bias is None else layer.bias.value.copy()
                frozen.append(_FrozenDense(layer.weight.value.copy(), bias))
        return InferenceModel(frozen)


class _FrozenDense:
    def __init__(self, weight: np.ndarray, bias: np.ndarray | None):
        self.weight = weight
        self.bias = bias

    def forward(self, x: np.ndarray) -> np.ndarray:
        y = x @ self.weight
        return y if self.bias is None else y + self.bias


class InferenceModel:
    """Stack of frozen layers; numpy only."""

    def __init__(self, layers: list):
        self.layers = layers

    def predict_logits(self, features: np.ndarray, batch: int = 1024) -> np.ndarray:
        outs = []
        for lo in range(0, features.shape[0], batch):
            h = np.asarray(features[lo : lo + batch], dtype=np.float64)
            for i, layer in enumerate(self.layers):
                h = layer.forward(h)
                if i < len(self.layers) - 1:
                    h = np.maximum(h, 0.0)
            outs.append(h)
        return np.vstack(outs)

    def layer_matrices(self) -> list[DiagSparseMatrix | None]:
        return [
            layer.weight if isinstance(layer, FrozenLayer) else None
            for layer in self.layers
        ]


def build_model(config: TrainConfig, total_steps: int) -> MLPModel:
    # A schedule left at the placeholder span (total_steps=1) stretches over
    # the whole run; an explicit span is kept, so annealing can finish early
    # and the final structure trains at t_final for the remaining steps.
    t_sched = config.t_schedule or TemperatureSchedule()
    if t_sched.total_steps <= 1:
        t_sched = dataclasses.replace(t_sched, total_steps=max(total_steps, 1))
    seeds = np.random.SeedSequence(config.seed).generate_state(
        len(config.model.layer_kinds)
    )
    layers = []
    sizes = config.model.layer_sizes
    for i, kind in enumerate(config.model.layer_kinds):
        n_in, n_out = sizes[i], sizes[i + 1]
        seed = int(seeds[i])
        if kind == "dynadiag":
            layers.append(
                DynaDiagLayer(
                    n_in,
                    n_out,
                    config.sparsity,
                    t_schedule=t_sched,
                    l1_coeff=config.l1_coeff,
                    seed=seed,
                )
            )
        elif kind == "diagheur":
            layers.append(
                DiagHeurLayer(
                    n_in,
                    n_out,
                    config.sparsity,
                    update_every=config.update_every,
                    prune_fraction=config.prune_fraction,
                    seed=seed,
                )
            )
        else:
            layers.append(DenseLayer(n_in, n_out, seed=seed))
    return MLPModel(layers, config)


# ------------------------------------------------------------------- training


@dataclass
class MetricsRecord:
    step: int
    epoch: int
    train_loss: float
    test_accuracy: float
    active_counts: tuple[int, ...]
    temperature: float
    sparsity: float
    wall_ms_per_step: float

    CSV_HEADER = (
        "step,epoch,train_loss,test_accuracy,active_counts,"
        "temperature,sparsity,wall_ms_per_step"
    )

    def to_csv_row(self) -> str:
        counts = ";".join(str(c) for c in self.active_counts)
        return (
            f"{self.step},{self.epoch},{self.train_loss:.6f},"
            f"{self.test_accuracy:.6f},{counts},{self.temperature:.6g},"
            f"{self.sparsity:.6g},{self.wall_ms_per_step:.3f}"
        )


def metrics_to_csv(records: list[MetricsRecord], path: str) -> None:
    lines = [MetricsRecord.CSV_HEADER] + [r.to_csv_row() for r in records]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _spot_check_paths(model: MLPModel, probe: np.ndarray, step: int) -> None:
    """Blocked path must match the reference product on live layer state."""
    from .bcsr import to_bcsr, bcsr_spmm

    for layer in model.layers:
        if not isinstance(layer, DynaDiagLayer):
            continue
        if layer.active_count(step) > 2 * layer.k:
            continue
        m = layer.effective_matrix(step)
        x = probe[:, : m.cols] if probe.shape[1] >= m.cols else None
        if x is None:
            continue
        ref = reference_spmm(m, x.T)
        blocked = bcsr_spmm(to_bcsr(m), x.T)
        scale = max(1.0, float(np.abs(ref).max()))
        if np.abs(blocked - ref).max() > 1e-10 * scale:
            raise RuntimeError("blocked forward diverged from reference")


def _schedule_layer_budgets(model: MLPModel, config: TrainConfig, step: int,
                            s_sched: SparsitySchedule) -> float:
    s_t = sparsity_at(min(step, s_sched.total_steps), s_sched)
    dyna = [lyr for lyr in model.layers if isinstance(lyr, DynaDiagLayer)]
    if dyna:
        shapes = [(lyr.out_features, lyr.in_features) for lyr in dyna]
        budgets = allocate_budgets(
            shapes, BudgetAllocation(config.budget_method, s_t)
        )
        for lyr, s_layer in zip(dyna, budgets):
            lyr.set_k(required_diagonals(lyr.out_features, lyr.in_features, s_layer))
    return s_t


def train(config: TrainConfig, datasets: tuple[Dataset, Dataset] | None = None):
    """Run the configured training; returns (model, metrics records)."""
    train_ds, test_ds = datasets or load_dataset(config.dataset)
    n = len(train_ds)
    steps_per_epoch = max(1, n // config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    model = build_model(config, total_steps)
    if config.epochs == 0:
        return model, []
    t_sched = config.t_schedule or TemperatureSchedule()
    if t_sched.total_steps <= 1:
        t_sched = dataclasses.replace(t_sched, total_steps=total_steps)
    s_sched = config.s_schedule or SparsitySchedule(
        kind="constant", s_final=config.sparsity
    )
    if s_sched.total_steps <= 1:
        s_sched = dataclasses.replace(s_sched, total_steps=total_steps)
    params = model.parameters()
    opt = AdamW(params, config.optimizer)
    rng = np.random.default_rng(config.seed)
    warmup_steps = config.warmup_epochs * steps_per_epoch
    metrics: list[MetricsRecord] = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        t0 = time.perf_counter()
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            _schedule_layer_budgets(model, config, step, s_sched)
            x = Tensor(train_ds.features[idx])
            tape = Tape()
            logits = model.forward(x, tape, step)
            loss = tape.softmax_cross_entropy(
                logits, train_ds.labels[idx], config.label_smoothing
            )
            for pen in model.penalties(tape):
                loss = tape.add(loss, pen)
            opt.zero_grad()
            tape.backward(loss)
            clip_global_norm(params, config.grad_clip)
            opt.step(lr_at(step, total_steps, warmup_steps,
                           config.optimizer.lr, config.optimizer.lr_final))
            losses.append(float(loss.value))
            step += 1
            model.current_step = min(step, total_steps)
            if step % config.update_every == 0:
                for lyr in model.layers:
                    if isinstance(lyr, DiagHeurLayer):
                        diagheur_update(lyr, rng, step, total_steps)
        wall_ms = (time.perf_counter() - t0) * 1000.0 / steps_per_epoch
        _spot_check_paths(model, train_ds.features[:8], model.current_step)
        ev = evaluate(model, test_ds)
        counts = tuple(
            lyr.active_count(model.current_step)
            if isinstance(lyr, DynaDiagLayer)
            else len(lyr.active)
            for lyr in model.sparse_layers()
        )
        metrics.append(
            MetricsRecord(
                step=step,
                epoch=epoch + 1,
                train_loss=float(np.mean(losses)),
                test_accuracy=ev["accuracy"],
                active_counts=counts,
                temperature=temperature_at(
                    min(model.current_step, t_sched.total_steps), t_sched
                ),
                sparsity=sparsity_at(
                    min(model.current_step, s_sched.total_steps), s_sched
                ),
                wall_ms_per_step=wall_ms,
            )
        )
    if config.checkpoint_path:
        save_checkpoint(model, config, config.checkpoint_path)
    return model, metrics


def evaluate(model, dataset: Dataset) -> dict:
    """Accuracy, mean cross-entropy, and the per-sample correctness vector."""
    logits = model.predict_logits(dataset.features)
    zmax = logits.max(axis=1, keepdims=True)
    logp = logits - (zmax + np.log(np.exp(logits - zmax).sum(axis=1, keepdims=True)))
    n = len(dataset)
    mean_loss = float(-logp[np.arange(n), dataset.labels].mean()) if n else 0.0
    pred = logits.argmax(axis=1)
    correct = pred == dataset.labels
    return {
        "accuracy": float(correct.mean()) if n else 0.0,
        "mean_loss": mean_loss,
        "correct": correct,
    }


# ----------------------------------------------------------------- checkpoint


def save_checkpoint(model: MLPModel, config: TrainConfig, path: str) -> None:
    """Frozen-layer JSON bundle plus an echo of the resolved config."""
    inference = model.freeze()
    layers = []
    for layer in inference.layers:
        if isinstance(layer, FrozenLayer):
            layers.append(
                {
                    "kind": "frozen_diag",
                    "weight": to_json_dict(layer.weight),
                    "bias": None if layer.bias is None else layer.bias.tolist(),
                }
            )
        else:
            layers.append(
                {
                    "kind": "dense",
                    "weight": layer.weight.tolist(),
                    "bias": None if layer.bias is None else layer.bias.tolist(),
                }
            )
    payload = {"config": config_to_dict(config), "layers": layers}
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[InferenceModel, dict]:
    try:
        with open(path) as fh:
            payload = json.load(fh)
        layers = []
        for entry in payload["layers"]:
            bias = None if entry["bias"] is None else np.asarray(entry["bias"])
            if entry["kind"] == "frozen_diag":
                layers.append(FrozenLayer(from_json_dict(entry["weight"]), bias))
            elif entry["kind"] == "dense":
                layers.append(_FrozenDense(np.asarray(entry["weight"]), bias))
            else:
                raise MalformedFile(f"unknown layer kind {entry['kind']!r}")
    except (OSError, KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        if isinstance(exc, MalformedFile):
            raise
        raise MalformedFile(f"bad checkpoint {path}: {exc}") from exc
    return InferenceModel(layers), payload["config"]
