#!/usr/bin/env python3
"""
Unit tests for training.py
"""

import math
import os

import numpy as np
import pytest

import training
from corpus import Chunk, batch
from errors import ConfigError, NonFiniteGradientError, TrainingDivergedError
from model import TranslationModel
from numerics import ComputationTape, Tensor, backward, parameter
from training import (
    METRICS_HEADER,
    OptimizerState,
    TrainConfig,
    adam_step,
    clip_grad_norm,
    compute_loss,
    evaluate_loss,
    lr,
    train,
)


@pytest.fixture
def chunks():
    """Six single-batch training chunks and two dev chunks over a 16-token vocabulary"""
    train_chunks = [Chunk(0, i + 1, [5 + i, 6 + i, 3, 7], [5 + i, 6 + i, 3, 7]) for i in range(6)]
    dev_chunks = [Chunk(1, 1, [6, 5, 3, 8], [6, 5, 3, 8]), Chunk(1, 2, [9, 3, 10], [9, 3, 10])]
    return train_chunks, dev_chunks


@pytest.fixture
def quick_config():
    def _make(**overrides):
        values = dict(epochs=2, max_tokens=8, warmup_steps=4, lr_scale=0.5, log_every=0)
        values.update(overrides)
        return TrainConfig(**values)

    return _make


def _params_equal(a, b):
    return all(np.array_equal(tensor.data, b.params[name].data) for name, tensor in a.params)


class TestLearningRate:
    """Test suite for the warmup schedule"""

    def test_base_setting_at_warmup(self):
        assert lr(16000, 512, 16000, 4.0) == pytest.approx(4 / (math.sqrt(512) * math.sqrt(16000)), rel=1e-12)
        assert lr(16000, 512, 16000, 4.0) == pytest.approx(1.398e-3, abs=1e-6)

    def test_linear_regime(self):
        assert lr(1, 512, 16000, 4.0) == pytest.approx(4.0 * 512 ** -0.5 * 16000 ** -1.5, rel=1e-12)

    def test_continuous_at_warmup(self):
        warmup = 400
        assert warmup ** -0.5 == pytest.approx(warmup * warmup ** -1.5, rel=1e-12)
        assert lr(warmup, 64, warmup, 1.0) == pytest.approx(64 ** -0.5 * warmup ** -0.5, rel=1e-12)

    def test_decay_after_warmup(self):
        assert lr(4000, 512, 1000, 4.0) == pytest.approx(lr(1000, 512, 1000, 4.0) / 2, rel=1e-12)

    def test_step_zero(self):
        with pytest.raises(ValueError):
            lr(0, 512, 16000, 4.0)


class TestAdam:
    """Test suite for the optimizer step"""

    @staticmethod
    def _state(params, **overrides):
        return OptimizerState.for_parameters(params, 512, TrainConfig(**overrides))

    def test_zero_gradient_leaves_parameters(self):
        params = [("w", parameter(np.array([1.0, -2.0])))]
        params[0][1].grad = np.zeros(2)
        adam_step(params, self._state(params))
        assert params[0][1].data.tolist() == [1.0, -2.0]

    def test_missing_gradient_counts_as_zero(self):
        params = [("w", parameter(np.array([1.0])))]
        state = self._state(params)
        adam_step(params, state)
        assert params[0][1].data.tolist() == [1.0]
        assert state.step == 1

    def test_first_step_moves_by_learning_rate(self):
        params = [("w", parameter(np.array(0.0)))]
        params[0][1].grad = np.array(1.0)
        state = self._state(params)
        rate = adam_step(params, state)
        assert rate == lr(1, 512, 16000, 4.0)
        assert params[0][1].data == pytest.approx(-rate, rel=1e-6)

    def test_zero_betas_normalize_the_gradient(self):
        rng = np.random.default_rng(0)
        w = parameter(rng.normal(size=5))
        start = w.data.copy()
        params = [("w", w)]
        state = self._state(params, beta1=0.0, beta2=0.0, eps=1e-9)
        for _ in range(3):
            g = rng.normal(size=5)
            w.grad = g
            before = w.data.copy()
            rate = adam_step(params, state)
            assert np.allclose(w.data, before - rate * g / (np.abs(g) + 1e-9), rtol=0, atol=1e-15)
        assert not np.array_equal(w.data, start)

    def test_non_finite_gradient_names_tensor(self):
        a, b = parameter(np.ones(2)), parameter(np.ones(3))
        a.grad = np.ones(2)
        b.grad = np.array([0.0, np.inf, np.nan])
        params = [("a", a), ("b", b)]
        state = self._state(params)
        with pytest.raises(NonFiniteGradientError, match="b has 2 non-finite") as excinfo:
            adam_step(params, state)
        assert excinfo.value.tensor_name == "b"
        assert a.data.tolist() == [1.0, 1.0]
        assert state.step == 0

    def test_moments_round_trip(self):
        params = [("w", parameter(np.ones(2)))]
        params[0][1].grad = np.array([0.5, -0.5])
        state = self._state(params)
        adam_step(params, state)
        other = self._state(params)
        other.load_moments(state.moment_tensors())
        assert np.array_equal(other.m["w"], state.m["w"])
        assert np.array_equal(other.v["w"], state.v["w"])

    def test_clip_grad_norm(self):
        w = parameter(np.zeros(2))
        w.grad = np.array([3.0, 4.0])
        total = clip_grad_norm([("w", w)], 1.0)
        assert total == pytest.approx(5.0)
        assert np.allclose(w.grad, [0.6, 0.8])

    def test_clip_leaves_small_gradients(self):
        w = parameter(np.zeros(2))
        w.grad = np.array([0.3, 0.4])
        clip_grad_norm([("w", w)], 1.0)
        assert w.grad.tolist() == [0.3, 0.4]

    def test_descent_on_fixed_batch(self, make_model, chunks):
        """One small step lowers the loss for at least 9 of 10 random initializations"""
        b = batch(chunks[0][:2], 32)[0]
        passed = 0
        for seed in range(10):
            model = make_model(seed=seed)
            before = compute_loss(model, b).item()
            state = OptimizerState.for_parameters(
                model.params, model.config.d_model, TrainConfig(warmup_steps=1, lr_scale=0.003)
            )
            model.params.zero_grad()
            with ComputationTape() as tape:
                backward(compute_loss(model, b), tape)
            adam_step(model.params, state)
            passed += compute_loss(model, b).item() < before
        assert passed >= 9


class TestTrainConfig:
    """Test suite for training configuration checks"""

    @pytest.mark.parametrize("overrides", [{"select_by": "accuracy"}, {"epochs": -1}, {"label_smoothing": 1.0}])
    def test_invalid(self, overrides):
        with pytest.raises(ConfigError):
            TrainConfig(**overrides)


class TestTrainLoop:
    """Test suite for the epoch loop, checkpoints and metrics"""

    def test_epochs_zero_writes_initialization_only(self, make_model, chunks, quick_config, tmp_path):
        model = make_model()
        result = train(model, *chunks, quick_config(epochs=0), str(tmp_path))
        ckpt_dir = tmp_path / "checkpoints"
        assert sorted(os.listdir(ckpt_dir)) == ["best.ckpt", "epoch-0000.ckpt", "last.ckpt"]
        assert (ckpt_dir / "best.ckpt").read_bytes() == (ckpt_dir / "epoch-0000.ckpt").read_bytes()
        assert not (tmp_path / "metrics.log").exists()
        assert result.steps == 0

    def test_metrics_and_checkpoints(self, make_model, chunks, quick_config, tmp_path):
        model = make_model()
        result = train(model, *chunks, quick_config(), str(tmp_path))
        lines = (tmp_path / "metrics.log").read_text().splitlines()
        assert lines[0] == METRICS_HEADER
        rows = [line.split("\t") for line in lines[1:]]
        assert [row[1] for row in rows] == ["1", "2"]
        assert [int(row[0]) for row in rows] == [6, 12]
        assert all(len(row) == 5 for row in rows)
        for name in ("epoch-0001.ckpt", "epoch-0002.ckpt", "last.ckpt", "best.ckpt"):
            assert (tmp_path / "checkpoints" / name).exists()
        assert result.steps == 12
        assert result.epochs_completed == 2
        assert len(result.history) == 2

    def test_best_checkpoint_has_lowest_dev_loss(self, make_model, chunks, quick_config, tmp_path):
        model = make_model()
        result = train(model, *chunks, quick_config(epochs=3), str(tmp_path))
        best_model, checkpoint = TranslationModel.load(result.best_checkpoint)
        losses = [entry["dev_loss"] for entry in result.history]
        assert checkpoint.metadata["dev_loss"] == pytest.approx(min(losses))
        dev_batches = batch(chunks[1], 8)
        assert evaluate_loss(best_model, dev_batches) == pytest.approx(min(losses), rel=1e-9)

    def test_max_steps(self, make_model, chunks, quick_config, tmp_path):
        result = train(make_model(), *chunks, quick_config(epochs=5, max_steps=4), str(tmp_path))
        assert result.steps == 4
        assert result.epochs_completed == 0
        _, checkpoint = TranslationModel.load(tmp_path / "checkpoints" / "last.ckpt")
        assert (checkpoint.metadata["epoch"], checkpoint.metadata["batch_index"]) == (1, 4)
        assert not (tmp_path / "checkpoints" / "epoch-0001.ckpt").exists()
        assert not (tmp_path / "metrics.log").exists()

    def test_max_steps_at_epoch_end(self, make_model, chunks, quick_config, tmp_path):
        result = train(make_model(), *chunks, quick_config(epochs=5, max_steps=6), str(tmp_path))
        assert result.epochs_completed == 1
        assert (tmp_path / "checkpoints" / "epoch-0001.ckpt").exists()

    def test_select_by_bleu(self, make_model, chunks, quick_config, tmp_path):
        result = train(make_model(), *chunks, quick_config(epochs=1, select_by="bleu"), str(tmp_path))
        assert os.path.exists(result.best_checkpoint)
        assert result.best_score <= 0.0

    def test_identical_runs_are_bit_identical(self, make_model, chunks, quick_config, tmp_path):
        a, b = make_model(seed=4, dropout=0.1), make_model(seed=4, dropout=0.1)
        train(a, *chunks, quick_config(), str(tmp_path / "a"), seed=2)
        train(b, *chunks, quick_config(), str(tmp_path / "b"), seed=2)
        assert _params_equal(a, b)

    def test_resume_matches_uninterrupted_run(self, make_model, chunks, quick_config, tmp_path):
        full = make_model(seed=1, dropout=0.1)
        train(full, *chunks, quick_config(epochs=2), str(tmp_path / "full"), seed=3)

        first = make_model(seed=1, dropout=0.1)
        train(first, *chunks, quick_config(epochs=1), str(tmp_path / "split"), seed=3)
        resumed = make_model(seed=99, dropout=0.1)
        result = train(resumed, *chunks, quick_config(epochs=2), str(tmp_path / "split"), seed=3, resume=True)
        assert result.steps == 12
        assert _params_equal(full, resumed)

    def test_resume_after_max_steps_inside_an_epoch(self, make_model, chunks, quick_config, tmp_path):
        full = make_model(seed=1, dropout=0.1)
        train(full, *chunks, quick_config(epochs=2), str(tmp_path / "full"), seed=3)

        first = make_model(seed=1, dropout=0.1)
        train(first, *chunks, quick_config(epochs=2, max_steps=4), str(tmp_path / "split"), seed=3)
        resumed = make_model(seed=99, dropout=0.1)
        result = train(resumed, *chunks, quick_config(epochs=2), str(tmp_path / "split"), seed=3, resume=True)
        assert result.steps == 12
        assert _params_equal(full, resumed)
        assert (tmp_path / "split" / "metrics.log").read_text() == (tmp_path / "full" / "metrics.log").read_text()


class TestInterruptions:
    """Test suite for divergence and keyboard interrupts"""

    def test_nan_loss_writes_postmortem(self, make_model, chunks, quick_config, tmp_path, mocker):
        mocker.patch("training.compute_loss", return_value=Tensor(np.array(np.nan)))
        with pytest.raises(TrainingDivergedError) as excinfo:
            train(make_model(), *chunks, quick_config(), str(tmp_path))
        assert excinfo.value.checkpoint_path.endswith("postmortem.ckpt")
        assert os.path.exists(excinfo.value.checkpoint_path)

    def test_keyboard_interrupt_saves_and_resumes(self, make_model, chunks, quick_config, tmp_path, mocker):
        full = make_model(seed=2, dropout=0.1)
        train(full, *chunks, quick_config(), str(tmp_path / "full"), seed=5)

        real_step = training.adam_step
        calls = {"n": 0}

        def flaky_step(params, state):
            calls["n"] += 1
            if calls["n"] == 3:
                raise KeyboardInterrupt
            return real_step(params, state)

        mocker.patch("training.adam_step", side_effect=flaky_step)
        run_dir = str(tmp_path / "split")
        with pytest.raises(KeyboardInterrupt):
            train(make_model(seed=2, dropout=0.1), *chunks, quick_config(), run_dir, seed=5)
        mocker.stopall()

        _, checkpoint = TranslationModel.load(os.path.join(run_dir, "checkpoints", "last.ckpt"))
        assert checkpoint.metadata["step"] == 2
        assert checkpoint.metadata["batch_index"] == 2

        resumed = make_model(seed=7, dropout=0.1)
        train(resumed, *chunks, quick_config(), run_dir, seed=5, resume=True)
        assert _params_equal(full, resumed)
        full_metrics = (tmp_path / "full" / "metrics.log").read_text()
        assert (tmp_path / "split" / "metrics.log").read_text() == full_metrics
