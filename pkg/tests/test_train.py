"""Encoder, optimizer plumbing, early stopping and checkpoints."""

import numpy as np
import pytest

import rece.train as train_mod
from rece.data import SequenceBatch, leave_one_out_split
from rece.evaluate import evaluate_examples, popularity_scores, target_rank
from rece.losses import ce_full
from rece.oracles import finite_diff
from rece.train import (
    EncoderParams,
    TrainConfig,
    TrainingDiverged,
    encode,
    encode_backward,
    load_checkpoint,
    model_scorer,
    save_checkpoint,
    train,
)

from synthetic import markov_log


def toy_batch():
    items = np.array([[0, 1, 2, 3], [0, 0, 4, 5], [0, 0, 0, 0]], dtype=np.int64)
    targets = np.array([[0, 2, 3, 0], [0, 0, 5, 0], [0, 0, 0, 0]], dtype=np.int64)
    valid = (items > 0) & (targets > 0)
    return SequenceBatch(items=items, targets=targets, valid_mask=valid,
                         users=np.array([0, 1, -1]))


def toy_params(n_items=6, dim=3, seed=0, dtype=np.float64):
    return EncoderParams.initialize(n_items, dim, seed=seed, dtype=dtype)


class TestEncode:
    def test_identity_projection_returns_embeddings(self):
        params = toy_params()
        params.projection = np.eye(3)
        params.bias = np.zeros(3)
        batch = toy_batch()
        x = encode(batch, params)
        np.testing.assert_allclose(x[1], params.item_embeddings[0])  # item 1 at flat pos 1
        np.testing.assert_allclose(x[0], 0.0)  # padding

    def test_all_padding_row_is_invalid_and_zero(self):
        batch = toy_batch()
        x = encode(batch, toy_params())
        np.testing.assert_allclose(x[8:], 0.0)
        assert not batch.valid_mask[2].any()

    def test_projection_gradient_matches_finite_differences(self):
        batch = toy_batch()
        params = toy_params()
        targets = batch.targets.ravel() - 1
        valid = batch.valid_mask.ravel()

        def loss_of_projection(proj):
            trial = EncoderParams(params.item_embeddings, proj, params.bias)
            x = encode(batch, trial)
            return ce_full(x, trial.item_embeddings, targets, valid).loss

        fd = finite_diff(loss_of_projection, params.projection)
        x = encode(batch, params)
        result = ce_full(x, params.item_embeddings, targets, valid)
        grad_proj, grad_bias, _ = encode_backward(batch, params, result.grad_x)
        np.testing.assert_allclose(grad_proj, fd, rtol=1e-4, atol=1e-8)

        fd_bias = finite_diff(
            lambda b: ce_full(
                encode(batch, EncoderParams(params.item_embeddings, params.projection, b)),
                params.item_embeddings, targets, valid,
            ).loss,
            params.bias,
        )
        np.testing.assert_allclose(grad_bias, fd_bias, rtol=1e-4, atol=1e-8)

    def test_tied_embedding_gradient_sums_both_paths(self):
        # d loss / d embeddings must include the encoder-input path and the
        # catalog-side path; finite differences over the shared table see both
        batch = toy_batch()
        params = toy_params()
        targets = batch.targets.ravel() - 1
        valid = batch.valid_mask.ravel()

        def loss_of_embeddings(emb):
            trial = EncoderParams(emb, params.projection, params.bias)
            x = encode(batch, trial)
            return ce_full(x, emb, targets, valid).loss

        fd = finite_diff(loss_of_embeddings, params.item_embeddings)
        x = encode(batch, params)
        result = ce_full(x, params.item_embeddings, targets, valid)
        _, _, grad_emb = encode_backward(batch, params, result.grad_x)
        result.grad_y.add_into(grad_emb)
        np.testing.assert_allclose(grad_emb, fd, rtol=1e-4, atol=1e-8)


class TestTrainLoop:
    def _split(self, seed=0, n_items=40, n_users=60):
        return leave_one_out_split(markov_log(n_items, n_users, seed=seed, min_len=5, max_len=12))

    def _config(self, **overrides):
        base = dict(
            loss="ce", dim=8, batch_size=16, max_len=8, learning_rate=1e-2,
            max_epochs=3, patience=2, seed=1, dtype="float64",
        )
        base.update(overrides)
        return TrainConfig(**base)

    def test_single_step_decreases_batch_loss(self):
        split = self._split()
        config = self._config(learning_rate=1e-4, max_epochs=1)
        params = EncoderParams.initialize(split.n_items, config.dim, config.seed,
                                          dtype=np.float64)
        batch = next(iter(train_mod.make_batches(split, config.batch_size, config.max_len,
                                                  config.seed, 0)))
        targets = batch.targets.ravel() - 1
        valid = batch.valid_mask.ravel()

        def batch_loss():
            return ce_full(encode(batch, params), params.item_embeddings, targets, valid).loss

        before = batch_loss()
        result = ce_full(encode(batch, params), params.item_embeddings, targets, valid)
        grad_proj, grad_bias, grad_emb = encode_backward(batch, params, result.grad_x)
        result.grad_y.add_into(grad_emb)
        opt = train_mod._Adam(
            {"emb": params.item_embeddings, "proj": params.projection, "bias": params.bias},
            0.9, 0.999, 1e-8,
        )
        opt.step(
            {"emb": params.item_embeddings, "proj": params.projection, "bias": params.bias},
            {"emb": grad_emb, "proj": grad_proj, "bias": grad_bias},
            1e-4,
        )
        assert batch_loss() < before

    def test_zero_learning_rate_keeps_parameters(self):
        split = self._split()
        config = self._config(learning_rate=0.0, max_epochs=2, patience=5)
        params, history = train(split, config)
        fresh = EncoderParams.initialize(split.n_items, config.dim, config.seed,
                                         config.init_scale, np.float64)
        np.testing.assert_array_equal(params.item_embeddings, fresh.item_embeddings)
        np.testing.assert_array_equal(params.projection, fresh.projection)
        metrics = [row["val_ndcg@10"] for row in history]
        assert len(set(metrics)) == 1  # flat history

    def test_same_seed_identical_histories(self):
        split = self._split()
        _, h1 = train(split, self._config())
        _, h2 = train(split, self._config())
        for a, b in zip(h1, h2):
            assert a["train_loss"] == b["train_loss"]
            assert a["val_ndcg@10"] == b["val_ndcg@10"]

    def test_returns_best_validation_epoch(self):
        split = self._split(seed=3)
        config = self._config(max_epochs=6, patience=2, learning_rate=5e-2)
        params, history = train(split, config)
        best = max(row["val_ndcg@10"] for row in history)
        report = evaluate_examples(model_scorer(params), split.validation, ks=(10,))
        assert abs(report.ndcg[10] - best) < 1e-12

    def test_divergence_raises_with_diagnostic(self, monkeypatch):
        split = self._split()

        def poisoned(x, y, targets, valid):
            result = ce_full(x, y, targets, valid)
            result.loss = float("nan")
            return result

        monkeypatch.setattr(train_mod, "ce_full", poisoned)
        with pytest.raises(TrainingDiverged, match="epoch 0"):
            train(split, self._config())

    def test_rece_loss_trains(self):
        from rece.losses import ReceParams

        split = self._split(seed=5)
        config = self._config(
            loss="rece",
            rece=ReceParams(n_b=4, n_c=4, n_ec=1, rounds=2, seed=0),
            max_epochs=2,
        )
        params, history = train(split, config)
        assert len(history) == 2
        assert np.isfinite(history[-1]["train_loss"])

    def test_sampled_losses_train(self):
        split = self._split(seed=6)
        for loss in ("bce+", "ce-"):
            config = self._config(loss=loss, negatives=8, max_epochs=1)
            _, history = train(split, config)
            assert np.isfinite(history[0]["train_loss"])

    def test_markov_model_beats_popularity(self):
        split = self._split(seed=7, n_items=50, n_users=120)
        config = self._config(max_epochs=8, patience=8, learning_rate=5e-2, dim=16)
        params, _ = train(split, config)
        model_report = evaluate_examples(model_scorer(params), split.test, ks=(10,))
        pop = popularity_scores(split)
        pop_report = evaluate_examples(lambda ex: pop, split.test, ks=(10,))
        assert model_report.ndcg[10] > pop_report.ndcg[10]


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        params = toy_params(dtype=np.float32)
        config = TrainConfig(loss="ce", dim=3)
        path = str(tmp_path / "model.npz")
        save_checkpoint(path, params, config, extra={"note": "test"})
        loaded, meta = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.item_embeddings, params.item_embeddings)
        np.testing.assert_array_equal(loaded.projection, params.projection)
        np.testing.assert_array_equal(loaded.bias, params.bias)
        assert loaded.item_embeddings.dtype == np.float32
        assert meta["version"] == 1
        assert meta["config"]["loss"] == "ce"
        assert meta["extra"]["note"] == "test"

    def test_rece_config_round_trips(self, tmp_path):
        from rece.losses import ReceParams

        params = toy_params()
        config = TrainConfig(loss="rece", dim=3,
                             rece=ReceParams(n_b=2, n_c=2, n_ec=1, rounds=2, seed=9))
        path = str(tmp_path / "model.npz")
        save_checkpoint(path, params, config)
        _, meta = load_checkpoint(path)
        assert meta["config"]["rece"]["n_b"] == 2
        assert meta["config"]["rece"]["rounds"] == 2
