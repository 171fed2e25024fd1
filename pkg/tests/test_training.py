"""Training loops: determinism, schedules, divergence handling, logs."""

import csv
import json

import numpy as np
import pytest
import torch

from oracles import small_descriptor
from reconad.data import Dataset
from reconad.errors import ContractError, TrainingDivergedError
from reconad.models import Hyperparameters, load_checkpoint, save_checkpoint
from reconad.training import TrainConfig, TrainLog, train, train_aae, train_vae


def _dataset(n=32, seed=0, size=8):
    rng = np.random.default_rng(seed)
    return Dataset(images=rng.normal(0, 1, size=(n, size, size)).astype(np.float32))


def _vae_config(**overrides):
    settings = dict(
        model_kind="vae",
        architecture=small_descriptor(),
        hyper=Hyperparameters(batch_size=8, learning_rate=1e-3),
        epochs=2,
        seed=7,
    )
    settings.update(overrides)
    return TrainConfig(**settings)


def _aae_config(**overrides):
    settings = dict(
        model_kind="aae",
        architecture=small_descriptor(),
        hyper=Hyperparameters(batch_size=8, learning_rate=1e-3, n_critic=2),
        epochs=1,
        seed=7,
    )
    settings.update(overrides)
    return TrainConfig(**settings)


class TestTrainConfig:
    def test_zero_epochs_rejected(self):
        with pytest.raises(ContractError):
            _vae_config(epochs=0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ContractError):
            TrainConfig(model_kind="flow")


class TestTrainVae:
    def test_deterministic_logs(self):
        dataset = _dataset()
        _, log_a = train_vae(_vae_config(), dataset)
        _, log_b = train_vae(_vae_config(), dataset)
        assert log_a.term_records() == log_b.term_records()

    def test_seed_changes_logs(self):
        dataset = _dataset()
        _, log_a = train_vae(_vae_config(seed=1), dataset)
        _, log_b = train_vae(_vae_config(seed=2), dataset)
        assert log_a.term_records() != log_b.term_records()

    def test_loss_decreases_on_repeated_image(self):
        """Memorizing a single repeated image: epoch-mean reconstruction drops."""
        rng = np.random.default_rng(3)
        image = rng.normal(0, 1, size=(8, 8)).astype(np.float32)
        dataset = Dataset(images=np.repeat(image[None], 32, axis=0))
        _, log = train_vae(_vae_config(epochs=3), dataset)
        bounds = [0] + log.epoch_boundaries
        epoch_means = [
            np.mean([r["reconstruction"] for r in log.records[lo:hi]])
            for lo, hi in zip(bounds[:-1], bounds[1:])
        ]
        assert epoch_means[-1] < epoch_means[0]
        assert log.records[-1]["total"] <= log.records[0]["total"]

    def test_step_count_and_boundaries(self):
        dataset = _dataset(n=20)
        config = _vae_config(epochs=2)  # batch 8 -> 3 steps per epoch
        _, log = train_vae(config, dataset)
        assert len(log.records) == 6
        assert log.epoch_boundaries == [3, 6]
        assert [r["step"] for r in log.records] == list(range(1, 7))

    def test_divergence_aborts_with_checkpoint(self):
        """A float32-overflowing dataset must abort, not propagate NaN."""
        dataset = Dataset(images=np.full((8, 8, 8), 1e20, dtype=np.float32))
        with pytest.raises(TrainingDivergedError) as excinfo:
            train_vae(_vae_config(), dataset)
        error = excinfo.value
        assert error.checkpoint is not None
        assert error.diagnostics["step"] == 1
        for parameter in error.checkpoint.encoder.parameters():
            assert torch.isfinite(parameter).all()

    def test_wrong_kind_rejected(self):
        with pytest.raises(ContractError):
            train_vae(_aae_config(), _dataset())


class TestTrainAae:
    def test_deterministic_logs(self):
        dataset = _dataset()
        _, log_a = train_aae(_aae_config(), dataset)
        _, log_b = train_aae(_aae_config(), dataset)
        assert log_a.term_records() == log_b.term_records()

    def test_schedule_interleaving(self):
        """Each auto-encoder step is preceded by exactly n_critic critic steps."""
        dataset = _dataset(n=16)
        config = _aae_config()  # batch 8 -> 2 main batches, n_critic 2
        _, log = train_aae(config, dataset)
        kinds = [r["kind"] for r in log.records]
        assert kinds == ["critic", "critic", "ae"] * 2
        assert all(np.isfinite(r["critic_loss"]) for r in log.records if r["kind"] == "critic")

    def test_lambda_zero_logs_zero_consistency(self):
        dataset = _dataset(n=16)
        _, log = train_aae(_aae_config(), dataset)
        ae_records = [r for r in log.records if r["kind"] == "ae"]
        assert all(r["latent_consistency"] == 0.0 for r in ae_records)

    def test_lambda_choice_first_diverges_at_first_ae_step(self):
        """Identical seeds: logs agree bitwise until the constraint first applies."""
        dataset = _dataset(n=24)
        config_plain = _aae_config(epochs=2)
        config_constrained = _aae_config(
            epochs=2, hyper=Hyperparameters(batch_size=8, learning_rate=1e-3,
                                            n_critic=2, lambda_lc=1.0)
        )
        _, log_plain = train_aae(config_plain, dataset)
        _, log_lc = train_aae(config_constrained, dataset)

        first_ae = next(i for i, r in enumerate(log_plain.records) if r["kind"] == "ae")
        assert log_plain.records[:first_ae] == log_lc.records[:first_ae]

        plain_first, lc_first = log_plain.records[first_ae], log_lc.records[first_ae]
        # shared weights up to here: identical reconstruction and adversarial terms
        assert plain_first["reconstruction"] == lc_first["reconstruction"]
        assert plain_first["encoder_adversarial_loss"] == lc_first["encoder_adversarial_loss"]
        # but the constraint itself changes the optimized objective
        assert lc_first["latent_consistency"] > 0.0
        assert lc_first["autoencoder_loss"] != plain_first["autoencoder_loss"]
        # and the runs genuinely diverge afterwards
        assert log_plain.records[first_ae + 1 :] != log_lc.records[first_ae + 1 :]

    def test_divergence_aborts(self):
        dataset = Dataset(images=np.full((8, 8, 8), 1e20, dtype=np.float32))
        with pytest.raises(TrainingDivergedError) as excinfo:
            train_aae(_aae_config(), dataset)
        assert excinfo.value.checkpoint is not None

    def test_wrong_kind_rejected(self):
        with pytest.raises(ContractError):
            train_aae(_vae_config(), _dataset())


class TestTrainDispatch:
    def test_dispatches_by_kind(self):
        dataset = _dataset(n=8)
        checkpoint, _ = train(_vae_config(epochs=1), dataset)
        assert checkpoint.kind == "vae"
        checkpoint, _ = train(_aae_config(), dataset)
        assert checkpoint.kind == "aae"


class TestCheckpointing:
    def test_round_trip_preserves_outputs(self, tmp_path):
        dataset = _dataset(n=16)
        checkpoint, _ = train_aae(_aae_config(), dataset)
        path = tmp_path / "trained.pt"
        save_checkpoint(path, checkpoint.kind, checkpoint.descriptor, checkpoint.hyper,
                        checkpoint.encoder, checkpoint.decoder, checkpoint.critic)
        restored = load_checkpoint(path)
        probe = torch.from_numpy(dataset.images[:4])
        with torch.no_grad():
            original = checkpoint.decoder(checkpoint.encoder(probe))
            loaded = restored.decoder(restored.encoder(probe))
        assert torch.equal(original, loaded)

    def test_periodic_checkpoints_written(self, tmp_path):
        dataset = _dataset(n=16)
        config = _vae_config(epochs=2, checkpoint_every=1)
        train_vae(config, dataset, checkpoint_dir=tmp_path)
        files = sorted(p.name for p in tmp_path.glob("checkpoint_epoch_*.pt"))
        assert files == ["checkpoint_epoch_0001.pt", "checkpoint_epoch_0002.pt"]
        load_checkpoint(tmp_path / files[0])


class TestTrainLogPersistence:
    def test_csv_round_trip(self, tmp_path):
        dataset = _dataset(n=16)
        _, log = train_vae(_vae_config(epochs=1), dataset)
        path = tmp_path / "log.csv"
        log.to_csv(path)
        with open(path, newline="") as handle:
            rows = list(csv.DictReader(handle))
        by_step = {}
        for row in rows:
            by_step.setdefault(int(row["step"]), {})[row["term"]] = float(row["value"])
        for record in log.records:
            for term in ("total", "reconstruction", "kl"):
                assert by_step[record["step"]][term] == record[term]

    def test_summary_json(self, tmp_path):
        dataset = _dataset(n=16)
        _, log = train_vae(_vae_config(epochs=1), dataset)
        path = tmp_path / "summary.json"
        log.save_summary(path)
        summary = json.loads(path.read_text())
        assert summary["steps"] == len(log.records)
        assert summary["epochs"] == 1
        assert summary["final_record"]["step"] == log.records[-1]["step"]

    def test_timestamps_do_not_affect_equality(self):
        log = TrainLog()
        log.append({"step": 1, "kind": "vae", "total": 1.0}, elapsed=0.123)
        other = TrainLog()
        other.append({"step": 1, "kind": "vae", "total": 1.0}, elapsed=9.876)
        assert log.term_records() == other.term_records()
        assert log.timestamps != other.timestamps
