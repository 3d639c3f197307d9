"""Tests for dataset loading, config plumbing, the optimizer, and training."""

import gzip

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diagsparse.errors import MalformedFile, ShapeMismatch, UnknownSource
from diagsparse.selection import SparsitySchedule, TemperatureSchedule
from diagsparse.training import (
    AdamW,
    Dataset,
    ModelConfig,
    OptimizerConfig,
    TrainConfig,
    adamw_step,
    apply_overrides,
    build_model,
    clip_global_norm,
    config_from_dict,
    config_to_dict,
    evaluate,
    load_checkpoint,
    load_dataset,
    lr_at,
    train,
)
from diagsparse.layers import DynaDiagLayer, ParamSpec
from diagsparse.autodiff import Tensor


# ------------------------------------------------------------------- configs


class TestConfigValidation:
    def test_defaults_are_valid(self):
        cfg = TrainConfig()
        assert cfg.model.layer_sizes == (784, 256, 256, 10)
        assert cfg.model.layer_kinds == ("dynadiag", "dynadiag", "dense")

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"sparsity": 1.0},
            {"sparsity": -0.1},
            {"epochs": -1},
            {"batch_size": 0},
            {"label_smoothing": 1.0},
            {"warmup_epochs": -0.5},
            {"grad_clip": 0.0},
            {"l1_coeff": -1e-4},
            {"update_every": 0},
            {"budget_method": "alphabetical"},
        ],
    )
    def test_bad_train_config(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    def test_model_config_kind_count(self):
        with pytest.raises(ValueError):
            ModelConfig(layer_sizes=(8, 8), layer_kinds=("dense", "dense"))

    def test_model_config_unknown_kind(self):
        with pytest.raises(ValueError):
            ModelConfig(layer_sizes=(8, 8), layer_kinds=("mixture",))

    def test_model_config_positive_sizes(self):
        with pytest.raises(ValueError):
            ModelConfig(layer_sizes=(8, 0), layer_kinds=("dense",))

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"kind": "sgd"},
            {"lr": 0.0},
            {"lr_final": -1.0},
            {"betas": (0.9, 1.0)},
            {"weight_decay": -0.1},
        ],
    )
    def test_bad_optimizer_config(self, kwargs):
        with pytest.raises(ValueError):
            OptimizerConfig(**kwargs)


class TestConfigSerialization:
    def test_round_trip(self):
        cfg = TrainConfig(
            model=ModelConfig((32, 16, 4), ("dynadiag", "dense")),
            t_schedule=TemperatureSchedule("cosine", 2.0, 0.1, 50),
            s_schedule=SparsitySchedule("linear", 0.0, 0.8, 50),
            epochs=3,
            seed=7,
        )
        back = config_from_dict(config_to_dict(cfg))
        assert config_to_dict(back) == config_to_dict(cfg)

    def test_round_trip_none_schedules(self):
        cfg = TrainConfig()
        back = config_from_dict(config_to_dict(cfg))
        assert back.t_schedule is None
        assert config_to_dict(back) == config_to_dict(cfg)

    def test_unknown_top_level_key(self):
        data = config_to_dict(TrainConfig())
        data["momentum"] = 0.9
        with pytest.raises(MalformedFile, match="momentum"):
            config_from_dict(data)

    def test_unknown_nested_key(self):
        data = config_to_dict(TrainConfig())
        data["optimizer"]["nesterov"] = True
        with pytest.raises(MalformedFile, match="nesterov"):
            config_from_dict(data)

    def test_invalid_value_reported_as_malformed(self):
        data = config_to_dict(TrainConfig())
        data["sparsity"] = 1.5
        with pytest.raises(MalformedFile):
            config_from_dict(data)

    def test_nested_dicts_become_dataclasses(self):
        data = config_to_dict(TrainConfig(t_schedule=TemperatureSchedule()))
        cfg = config_from_dict(data)
        assert isinstance(cfg.t_schedule, TemperatureSchedule)
        assert isinstance(cfg.optimizer, OptimizerConfig)


class TestApplyOverrides:
    def test_dotted_numeric_override(self):
        data = config_to_dict(TrainConfig())
        out = apply_overrides(data, ["optimizer.lr=0.01", "epochs=3"])
        assert out["optimizer"]["lr"] == 0.01
        assert out["epochs"] == 3

    def test_string_fallback(self):
        data = config_to_dict(TrainConfig())
        out = apply_overrides(data, ["dataset=csv:points.csv"])
        assert out["dataset"] == "csv:points.csv"

    def test_json_values_parse(self):
        data = config_to_dict(TrainConfig())
        out = apply_overrides(data, ["checkpoint_path=null", "l1_coeff=1e-3"])
        assert out["checkpoint_path"] is None
        assert out["l1_coeff"] == 1e-3

    def test_last_override_wins(self):
        data = config_to_dict(TrainConfig())
        out = apply_overrides(data, ["epochs=3", "epochs=9"])
        assert out["epochs"] == 9

    def test_missing_equals_rejected(self):
        with pytest.raises(MalformedFile):
            apply_overrides(config_to_dict(TrainConfig()), ["epochs"])

    @pytest.mark.parametrize("item", ["bogus=1", "optimizer.bogus=1", "optimizer.lr.deep=1"])
    def test_unknown_key_rejected(self, item):
        with pytest.raises(MalformedFile):
            apply_overrides(config_to_dict(TrainConfig()), [item])


# ------------------------------------------------------------------- datasets


class TestDatasetValidation:
    def test_shape_mismatch(self):
        with pytest.raises(MalformedFile):
            Dataset(np.zeros((4, 3)), np.zeros(5, dtype=int), "train")

    def test_nan_rejected(self):
        feats = np.zeros((4, 3))
        feats[2, 1] = np.nan
        with pytest.raises(MalformedFile):
            Dataset(feats, np.zeros(4, dtype=int), "train")

    def test_negative_label_rejected(self):
        with pytest.raises(MalformedFile):
            Dataset(np.zeros((4, 3)), np.array([0, 1, -1, 0]), "train")

    def test_len(self):
        ds = Dataset(np.zeros((4, 3)), np.zeros(4, dtype=int), "test")
        assert len(ds) == 4


class TestSyntheticSource:
    def test_deterministic(self):
        """The same spec string must produce byte-identical data."""
        a_train, a_test = load_dataset("synthetic:2:2:100:7")
        b_train, b_test = load_dataset("synthetic:2:2:100:7")
        assert np.array_equal(a_train.features, b_train.features)
        assert np.array_equal(a_train.labels, b_train.labels)
        assert np.array_equal(a_test.features, b_test.features)

    def test_seed_changes_data(self):
        a, _ = load_dataset("synthetic:2:2:100:7")
        b, _ = load_dataset("synthetic:2:2:100:8")
        assert not np.array_equal(a.features, b.features)

    def test_split_sizes(self):
        train, test = load_dataset("synthetic:10:784:6000:0")
        assert len(train) == 5000
        assert len(test) == 1000
        assert train.features.shape == (5000, 784)

    def test_features_in_unit_range(self):
        train, test = load_dataset("synthetic:3:8:120:1")
        allfeat = np.vstack([train.features, test.features])
        assert allfeat.min() >= 0.0
        assert allfeat.max() <= 1.0

    def test_labels_round_robin(self):
        train, test = load_dataset("synthetic:4:8:120:1")
        labels = np.concatenate([train.labels, test.labels])
        np.testing.assert_array_equal(labels, np.arange(120) % 4)

    @pytest.mark.parametrize(
        "source",
        [
            "synthetic:2:2:100",          # missing seed
            "synthetic:2:2:100:7:9",      # extra field
            "synthetic:two:2:100:7",      # non-integer
            "synthetic:1:2:100:7",        # single class
            "synthetic:5:2:4:7",          # fewer samples than classes
            "parquet:foo",                # unknown kind
            "csv:",                       # empty path
            "idx:a:b:c",                  # 3 idx paths
        ],
    )
    def test_bad_sources(self, source):
        with pytest.raises(UnknownSource):
            load_dataset(source)


def _write_idx_images(path, arr):
    dims = arr.shape
    header = (0x00000803).to_bytes(4, "big") + b"".join(
        d.to_bytes(4, "big") for d in dims
    )
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(header + arr.astype(np.uint8).tobytes())


def _write_idx_labels(path, labels):
    header = (0x00000801).to_bytes(4, "big") + len(labels).to_bytes(4, "big")
    with open(path, "wb") as fh:
        fh.write(header + np.asarray(labels, dtype=np.uint8).tobytes())


class TestIdxSource:
    def test_pair_with_split(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(12, 4, 4), dtype=np.uint8)
        labels = rng.integers(0, 3, size=12, dtype=np.uint8)
        img_p, lab_p = tmp_path / "img.idx", tmp_path / "lab.idx"
        _write_idx_images(img_p, images)
        _write_idx_labels(lab_p, labels)
        train, test = load_dataset(f"idx:{img_p}:{lab_p}")
        assert len(train) == 10 and len(test) == 2
        np.testing.assert_allclose(
            train.features, images[:10].reshape(10, -1) / 255.0
        )
        np.testing.assert_array_equal(test.labels, labels[10:])

    def test_four_paths(self, tmp_path):
        rng = np.random.default_rng(1)
        for name, n in (("tr", 6), ("te", 3)):
            _write_idx_images(tmp_path / f"{name}.img", rng.integers(0, 256, (n, 2, 2), dtype=np.uint8))
            _write_idx_labels(tmp_path / f"{name}.lab", rng.integers(0, 2, n, dtype=np.uint8))
        train, test = load_dataset(
            f"idx:{tmp_path}/tr.img:{tmp_path}/tr.lab:{tmp_path}/te.img:{tmp_path}/te.lab"
        )
        assert len(train) == 6 and len(test) == 3
        assert train.split == "train" and test.split == "test"

    def test_gzip_transparent(self, tmp_path):
        images = np.arange(16, dtype=np.uint8).reshape(1, 4, 4)
        img_p = tmp_path / "img.idx.gz"
        lab_p = tmp_path / "lab.idx"
        _write_idx_images(img_p, images)
        _write_idx_labels(lab_p, [1])
        train, test = load_dataset(f"idx:{img_p}:{lab_p}")
        assert len(train) == 0  # 5/6 of one sample
        np.testing.assert_allclose(test.features[0], np.arange(16) / 255.0)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.idx"
        with open(path, "wb") as fh:
            fh.write((0x00000999).to_bytes(4, "big") + (0).to_bytes(4, "big"))
        lab_p = tmp_path / "lab.idx"
        _write_idx_labels(lab_p, [0])
        with pytest.raises(MalformedFile, match="magic"):
            load_dataset(f"idx:{path}:{lab_p}")

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "short.idx"
        path.write_bytes(b"\x00\x00")
        with pytest.raises(MalformedFile, match="truncated"):
            load_dataset(f"idx:{path}:{path}")

    def test_payload_size_mismatch(self, tmp_path):
        path = tmp_path / "img.idx"
        header = (0x00000803).to_bytes(4, "big") + b"".join(
            d.to_bytes(4, "big") for d in (2, 3, 3)
        )
        with open(path, "wb") as fh:
            fh.write(header + bytes(5))  # needs 18 bytes
        lab_p = tmp_path / "lab.idx"
        _write_idx_labels(lab_p, [0, 1])
        with pytest.raises(MalformedFile, match="payload"):
            load_dataset(f"idx:{path}:{lab_p}")

    def test_missing_file(self, tmp_path):
        with pytest.raises(MalformedFile):
            load_dataset(f"idx:{tmp_path}/nope.idx:{tmp_path}/nope.lab")

    def test_count_mismatch(self, tmp_path):
        _write_idx_images(tmp_path / "img.idx", np.zeros((3, 2, 2), dtype=np.uint8))
        _write_idx_labels(tmp_path / "lab.idx", [0, 1])
        with pytest.raises(MalformedFile, match="counts differ"):
            load_dataset(f"idx:{tmp_path}/img.idx:{tmp_path}/lab.idx")


class TestCsvSource:
    def _write(self, path, rows, header="label,f0,f1"):
        lines = [header] + [",".join(str(v) for v in row) for row in rows]
        path.write_text("\n".join(lines) + "\n")

    def test_single_file_splits(self, tmp_path):
        path = tmp_path / "data.csv"
        rows = [(i % 2, i, 10 - i) for i in range(10)]
        self._write(path, rows)
        train, test = load_dataset(f"csv:{path}")
        assert len(train) == 8 and len(test) == 2
        np.testing.assert_array_equal(train.labels, [r[0] for r in rows[:8]])

    def test_two_files(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        self._write(a, [(0, 1.0, 2.0), (1, 3.0, 4.0)])
        self._write(b, [(1, 5.0, 6.0)])
        train, test = load_dataset(f"csv:{a}:{b}")
        assert len(train) == 2 and len(test) == 1
        assert test.split == "test"

    def test_features_rescaled(self, tmp_path):
        path = tmp_path / "data.csv"
        self._write(path, [(0, 0.0, 50.0), (1, 100.0, 25.0)])
        train, _ = load_dataset(f"csv:{path}")
        assert train.features.max() <= 1.0
        assert train.features.min() >= 0.0

    def test_bad_header(self, tmp_path):
        path = tmp_path / "data.csv"
        self._write(path, [(0, 1.0, 2.0)], header="x,y,z")
        with pytest.raises(MalformedFile, match="header"):
            load_dataset(f"csv:{path}")

    def test_no_rows(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("label,f0\n")
        with pytest.raises(MalformedFile, match="no data"):
            load_dataset(f"csv:{path}")

    def test_ragged_rows(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("label,f0,f1\n0,1.0,2.0\n1,3.0\n")
        with pytest.raises(MalformedFile):
            load_dataset(f"csv:{path}")


# ------------------------------------------------------------------ optimizer


def _reference_adamw(param, grads, *, lr, beta1, beta2, eps, weight_decay):
    """Straight-line decoupled AdamW, kept independent of the implementation."""
    m = np.zeros_like(param)
    v = np.zeros_like(param)
    p = param.copy()
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mh = m / (1 - beta1**t)
        vh = v / (1 - beta2**t)
        p = p - lr * (mh / (np.sqrt(vh) + eps) + weight_decay * p)
    return p


class TestAdamW:
    def test_matches_reference_over_ten_steps(self):
        rng = np.random.default_rng(3)
        param = rng.standard_normal((4, 5))
        grads = [rng.standard_normal((4, 5)) for _ in range(10)]
        kw = dict(lr=1e-2, beta1=0.9, beta2=0.99, eps=1e-8, weight_decay=0.01)
        expected = _reference_adamw(param, grads, **kw)
        state = {"m": np.zeros_like(param), "v": np.zeros_like(param), "t": 0}
        p = param.copy()
        for g in grads:
            p = adamw_step(p, g, state, **kw)
        np.testing.assert_allclose(p, expected, rtol=1e-12)
        assert state["t"] == 10

    def test_first_step_is_signlike(self):
        """Bias correction makes the first update ~lr * sign(grad)."""
        param = np.zeros(4)
        grad = np.array([1.0, -2.0, 0.5, -0.1])
        state = {"m": np.zeros(4), "v": np.zeros(4), "t": 0}
        out = adamw_step(
            param, grad, state, lr=0.1, beta1=0.9, beta2=0.99, eps=1e-12,
            weight_decay=0.0,
        )
        np.testing.assert_allclose(out, -0.1 * np.sign(grad), atol=1e-9)

    def test_decay_is_decoupled(self):
        """Zero gradient still shrinks the parameter when decay is on."""
        param = np.full(3, 2.0)
        state = {"m": np.zeros(3), "v": np.zeros(3), "t": 0}
        out = adamw_step(
            param, np.zeros(3), state, lr=0.1, beta1=0.9, beta2=0.99,
            eps=1e-8, weight_decay=0.5,
        )
        np.testing.assert_allclose(out, param * (1 - 0.1 * 0.5))

    def test_shape_mismatch(self):
        state = {"m": np.zeros(3), "v": np.zeros(3), "t": 0}
        with pytest.raises(ShapeMismatch):
            adamw_step(np.zeros(3), np.zeros(4), state, lr=0.1, beta1=0.9,
                       beta2=0.99, eps=1e-8, weight_decay=0.0)

    def test_wrapper_skips_missing_grads_and_decay_flag(self):
        decayed = ParamSpec(Tensor(np.full((2, 2), 4.0)), True, "w")
        frozen = ParamSpec(Tensor(np.full((2, 2), 4.0)), False, "alpha")
        skipped = ParamSpec(Tensor(np.full((2, 2), 4.0)), True, "b")
        decayed.tensor.grad = np.zeros((2, 2))
        frozen.tensor.grad = np.zeros((2, 2))
        opt = AdamW([decayed, frozen, skipped],
                    OptimizerConfig(weight_decay=0.25))
        opt.step(lr=0.1)
        assert decayed.tensor.value[0, 0] < 4.0
        np.testing.assert_allclose(frozen.tensor.value, 4.0)
        np.testing.assert_allclose(skipped.tensor.value, 4.0)
        opt.zero_grad()
        assert decayed.tensor.grad is None


class TestLrSchedule:
    def test_warmup_starts_at_zero(self):
        assert lr_at(0, 100, 10, 1e-3) == 0.0

    def test_warmup_hits_peak(self):
        np.testing.assert_allclose(lr_at(10, 100, 10, 1e-3), 1e-3)

    def test_end_hits_final(self):
        np.testing.assert_allclose(lr_at(100, 100, 10, 1e-3, 1e-6), 1e-6)

    def test_no_warmup_starts_at_peak(self):
        assert lr_at(0, 100, 0, 1e-3) == 1e-3

    def test_run_shorter_than_warmup_never_peaks(self):
        """total <= warmup leaves the whole run on the linear ramp."""
        np.testing.assert_allclose(lr_at(10, 10, 20, 1e-3), 5e-4)

    def test_warmup_equal_to_total_ends_at_peak(self):
        assert lr_at(10, 10, 10, 1e-3) == 1e-3

    def test_beyond_total_raises(self):
        with pytest.raises(ValueError):
            lr_at(101, 100, 10, 1e-3)

    def test_cosine_segment_monotone(self):
        vals = [lr_at(s, 200, 20, 1e-3, 1e-6) for s in range(20, 201)]
        diffs = np.diff(vals)
        assert (diffs <= 1e-15).all()

    @given(st.integers(min_value=0, max_value=300))
    @settings(max_examples=50, deadline=None)
    def test_within_bounds(self, step):
        lr = lr_at(step, 300, 30, 1e-3, 1e-6)
        assert 0.0 <= lr <= 1e-3 + 1e-15


class TestClipGlobalNorm:
    def test_scales_down_to_max(self):
        spec = ParamSpec(Tensor(np.zeros(4)), True, "w")
        spec.tensor.grad = np.full(4, 3.0)  # norm 6
        norm = clip_global_norm([spec], 1.5)
        np.testing.assert_allclose(norm, 6.0)
        np.testing.assert_allclose(np.linalg.norm(spec.tensor.grad), 1.5)

    def test_small_norm_untouched(self):
        spec = ParamSpec(Tensor(np.zeros(2)), True, "w")
        spec.tensor.grad = np.array([0.3, 0.4])
        norm = clip_global_norm([spec], 1.0)
        np.testing.assert_allclose(norm, 0.5)
        np.testing.assert_allclose(spec.tensor.grad, [0.3, 0.4])

    def test_none_grads_ignored(self):
        spec = ParamSpec(Tensor(np.zeros(2)), True, "w")
        assert clip_global_norm([spec], 1.0) == 0.0


# ------------------------------------------------------------------- training


def _tiny_config(**kwargs):
    base = dict(
        model=ModelConfig((16, 8, 2), ("dense", "dense")),
        dataset="synthetic:2:16:240:0",
        epochs=2,
        batch_size=32,
        warmup_epochs=0.5,
        seed=0,
    )
    base.update(kwargs)
    return TrainConfig(**base)


class TestTrainLoop:
    def test_zero_epochs_returns_empty_metrics(self):
        model, metrics = train(_tiny_config(epochs=0))
        assert metrics == []
        assert len(model.layers) == 2

    def test_deterministic_given_seed(self):
        cfg = _tiny_config(epochs=1)
        model_a, metrics_a = train(cfg)
        model_b, metrics_b = train(cfg)
        for pa, pb in zip(model_a.parameters(), model_b.parameters()):
            np.testing.assert_array_equal(pa.tensor.value, pb.tensor.value)
        assert [m.train_loss for m in metrics_a] == [m.train_loss for m in metrics_b]

    def test_seed_changes_init(self):
        model_a, _ = train(_tiny_config(epochs=0))
        model_b, _ = train(_tiny_config(epochs=0, seed=1))
        pa = model_a.parameters()[0].tensor.value
        pb = model_b.parameters()[0].tensor.value
        assert not np.array_equal(pa, pb)

    def test_metrics_record_fields(self):
        cfg = _tiny_config(epochs=2)
        _, metrics = train(cfg)
        assert [m.epoch for m in metrics] == [1, 2]
        for rec in metrics:
            assert rec.step > 0
            assert 0.0 <= rec.test_accuracy <= 1.0
            assert rec.train_loss > 0.0
            assert rec.wall_ms_per_step > 0.0
            assert rec.temperature > 0.0
            assert 0.0 <= rec.sparsity < 1.0

    def test_explicit_datasets_bypass_loader(self):
        rng = np.random.default_rng(0)
        feats = rng.random((64, 16))
        labels = rng.integers(0, 2, 64)
        pair = (
            Dataset(feats[:48], labels[:48], "train"),
            Dataset(feats[48:], labels[48:], "test"),
        )
        cfg = _tiny_config(dataset="csv:does-not-exist.csv", epochs=1)
        model, metrics = train(cfg, datasets=pair)
        assert len(metrics) == 1

    def test_logistic_regression_learns_separable_blobs(self):
        """A bare linear softmax layer must nail well-separated clusters."""
        cfg = TrainConfig(
            model=ModelConfig((16, 2), ("dense",)),
            dataset="synthetic:2:16:240:3",
            epochs=20,
            batch_size=32,
            warmup_epochs=1.0,
            label_smoothing=0.0,
            seed=0,
            optimizer=OptimizerConfig(lr=1e-2),
        )
        model, _ = train(cfg)
        train_ds, _ = load_dataset(cfg.dataset)
        ev = evaluate(model, train_ds)
        assert ev["accuracy"] >= 0.95

    def test_dense_loss_non_increasing_first_epochs(self):
        """Epoch-mean loss of the all-dense baseline falls for 5 epochs."""
        cfg = TrainConfig(model=ModelConfig(layer_kinds=("dense",) * 3), epochs=5)
        _, metrics = train(cfg)
        losses = [m.train_loss for m in metrics]
        diffs = np.diff(losses)
        assert (diffs <= 1e-6).all(), f"epoch losses increased: {losses}"

    def test_evaluate_on_known_logits(self):
        class Stub:
            def predict_logits(self, feats, batch=1024):
                return np.array([[2.0, 0.0], [0.0, 3.0], [1.0, 0.0]])

        ds = Dataset(np.zeros((3, 4)), np.array([0, 1, 1]), "test")
        ev = evaluate(Stub(), ds)
        np.testing.assert_allclose(ev["accuracy"], 2 / 3)
        np.testing.assert_array_equal(ev["correct"], [True, True, False])
        # cross-entropy of the three rows, mean
        z = np.array([[2.0, 0.0], [0.0, 3.0], [1.0, 0.0]])
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        expect = -np.log(p[[0, 1, 2], [0, 1, 1]]).mean()
        np.testing.assert_allclose(ev["mean_loss"], expect)


class TestSparseTraining:
    def test_dynadiag_budgets_follow_allocation(self):
        cfg = TrainConfig(
            model=ModelConfig((32, 24, 4), ("dynadiag", "dense")),
            dataset="synthetic:4:32:240:0",
            sparsity=0.75,
            epochs=1,
            batch_size=32,
            warmup_epochs=0.0,
            l1_coeff=0.0,
            seed=0,
        )
        model, _ = train(cfg)
        layer = model.layers[0]
        assert isinstance(layer, DynaDiagLayer)
        # uniform budget at 75% on a 24x32 layer: (1-0.75)*768/24 = 8
        assert layer.k == 8
        frozen = model.freeze()
        assert len(frozen.layers[0].weight.pattern.offsets) == 8

    def test_diagheur_stays_on_budget(self):
        cfg = TrainConfig(
            model=ModelConfig((32, 24, 4), ("diagheur", "dense")),
            dataset="synthetic:4:32:240:0",
            sparsity=0.75,
            epochs=2,
            batch_size=32,
            warmup_epochs=0.0,
            update_every=3,
            seed=0,
        )
        model, metrics = train(cfg)
        assert all(m.active_counts[0] == 8 for m in metrics)

    def test_l1_shrinks_unselected_scores(self):
        """Default lambda drives non-selected importance scores toward zero.

        Determinism makes a 1-epoch run identical to the 6-epoch run's
        state after its first epoch, so two runs give the two snapshots.
        """
        from diagsparse.selection import select_hard

        def mean_unselected(epochs):
            cfg = TrainConfig(
                model=ModelConfig((32, 24, 4), ("dynadiag", "dense")),
                dataset="synthetic:4:32:480:0",
                epochs=epochs,
                batch_size=32,
                warmup_epochs=0.5,
                seed=0,
            )
            model, _ = train(cfg)
            layer = model.layers[0]
            mask = np.ones(layer.alpha.value.shape, dtype=bool)
            mask[select_hard(layer.alpha.value, layer.k)] = False
            return np.abs(layer.alpha.value[mask]).mean()

        assert mean_unselected(6) < mean_unselected(1)

    def test_checkpoint_round_trip(self, tmp_path):
        path = tmp_path / "model.ckpt"
        cfg = TrainConfig(
            model=ModelConfig((16, 12, 2), ("dynadiag", "dense")),
            dataset="synthetic:2:16:120:0",
            sparsity=0.5,
            epochs=1,
            batch_size=24,
            warmup_epochs=0.0,
            seed=0,
            checkpoint_path=str(path),
        )
        model, _ = train(cfg)
        assert path.exists()
        restored, cfg_echo = load_checkpoint(str(path))
        probe = np.random.default_rng(5).random((7, 16))
        np.testing.assert_allclose(
            restored.predict_logits(probe),
            model.freeze().predict_logits(probe),
            atol=1e-12,
        )
        assert cfg_echo["sparsity"] == 0.5

    def test_checkpoint_garbage_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_text("not json at all {")
        with pytest.raises(MalformedFile):
            load_checkpoint(str(path))

    def test_checkpoint_unknown_layer_kind(self, tmp_path):
        path = tmp_path / "odd.ckpt"
        path.write_text('{"config": {}, "layers": [{"kind": "conv", "bias": null}]}')
        with pytest.raises(MalformedFile, match="conv"):
            load_checkpoint(str(path))

    def test_build_model_respects_kinds(self):
        cfg = TrainConfig(
            model=ModelConfig((16, 12, 8, 2), ("dynadiag", "diagheur", "dense"))
        )
        model = build_model(cfg, total_steps=10)
        names = [type(lyr).__name__ for lyr in model.layers]
        assert names == ["DynaDiagLayer", "DiagHeurLayer", "DenseLayer"]
