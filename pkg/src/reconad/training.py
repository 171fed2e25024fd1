"""Optimization loops producing trained checkpoints for VAE and AAE models.

All stochasticity (weight init, shuffling, reparameterization noise,
prior draws, gradient-penalty interpolation) is derived from the config
seed, so a (config, seed, dataset) triple reproduces training bit for bit
on a fixed platform.

The adversarial schedule follows WGAN-GP practice: ``n_critic`` critic
updates on independently drawn batches per one encoder/decoder update;
the encoder receives both the auto-encoder and the adversarial gradient.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import Dataset
from .errors import ContractError, TrainingDivergedError
from .losses import (
    gradient_penalty,
    latent_consistency_loss,
    reconstruction_loss,
    vae_loss,
)
from .models import (
    ArchitectureDescriptor,
    Checkpoint,
    Hyperparameters,
    build_models,
    save_checkpoint,
)


@dataclass
class TrainConfig:
    """Everything that determines a training run."""

    model_kind: str = "vae"
    architecture: ArchitectureDescriptor = field(default_factory=ArchitectureDescriptor)
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    epochs: int = 1
    seed: int = 0
    checkpoint_every: int = 0  # epochs between periodic checkpoints; 0 = final only
    stop_consistency_gradient: bool = False

    def __post_init__(self):
        if self.model_kind not in ("vae", "aae"):
            raise ContractError(f"model_kind must be 'vae' or 'aae', got {self.model_kind!r}")
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class TrainLog:
    """Per-optimization-step loss records plus timing metadata.

    ``records`` holds one dict per optimizer step (deterministic given the
    seed); ``timestamps`` holds the matching wall-clock offsets and is the
    only non-reproducible part.
    """

    records: list = field(default_factory=list)
    timestamps: list = field(default_factory=list)
    epoch_boundaries: list = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    def append(self, record: dict, elapsed: float):
        self.records.append(record)
        self.timestamps.append(elapsed)

    def term_records(self):
        """The deterministic part of the log, for equality comparisons."""
        return self.records

    def to_csv(self, path):
        """Write long-format (step, term, value) rows; excludes wall clock."""
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["step", "term", "value"])
            for record in self.records:
                step = record["step"]
                for term, value in record.items():
                    if term in ("step", "epoch", "kind"):
                        continue
                    writer.writerow([step, term, repr(float(value))])

    def summary(self) -> dict:
        final = self.records[-1] if self.records else {}
        return {
            "steps": len(self.records),
            "epochs": len(self.epoch_boundaries),
            "wall_clock_seconds": self.wall_clock_seconds,
            "final_record": {k: v for k, v in final.items()},
        }

    def save_summary(self, path):
        Path(path).write_text(json.dumps(self.summary(), indent=2))


def _as_tensor(dataset: Dataset) -> torch.Tensor:
    images = torch.from_numpy(np.ascontiguousarray(dataset.images, dtype=np.float32))
    if images.dim() != 3:
        raise ContractError("training dataset must be (n, H, W)")
    return images


def _init_optimizer(params, hyper: Hyperparameters):
    return torch.optim.Adam(params, lr=hyper.learning_rate, betas=(hyper.beta1, hyper.beta2))


def _abort_if_nonfinite(value: torch.Tensor, record: dict, kind, descriptor, hyper,
                        encoder, decoder, critic):
    if torch.isfinite(value).all():
        return
    checkpoint = Checkpoint(kind, descriptor, hyper, encoder, decoder, critic)
    raise TrainingDivergedError(
        f"non-finite loss at step {record.get('step')} (epoch {record.get('epoch')})",
        checkpoint=checkpoint,
        diagnostics=record,
    )


def _maybe_checkpoint(directory, epoch, config, encoder, decoder, critic):
    if directory is None or config.checkpoint_every <= 0:
        return
    if (epoch + 1) % config.checkpoint_every == 0:
        path = Path(directory) / f"checkpoint_epoch_{epoch + 1:04d}.pt"
        save_checkpoint(path, config.model_kind, config.architecture, config.hyper,
                        encoder, decoder, critic)


class _BatchStream:
    """Endless shuffled batch index stream driven by a seeded generator."""

    def __init__(self, count: int, batch_size: int, generator: torch.Generator):
        self.count = count
        self.batch_size = batch_size
        self.generator = generator
        self._order = torch.randperm(count, generator=generator)
        self._cursor = 0

    def next_indices(self) -> torch.Tensor:
        if self._cursor >= self.count:
            self._order = torch.randperm(self.count, generator=self.generator)
            self._cursor = 0
        indices = self._order[self._cursor : self._cursor + self.batch_size]
        self._cursor += self.batch_size
        return indices


def train_vae(config: TrainConfig, dataset: Dataset, checkpoint_dir=None):
    """Train a VAE; returns (Checkpoint, TrainLog).

    Aborts with :class:`TrainingDivergedError` (carrying the last good
    weights) if any loss term goes non-finite.
    """
    if config.model_kind != "vae":
        raise ContractError("train_vae requires model_kind 'vae'")
    images = _as_tensor(dataset)
    torch.manual_seed(config.seed)
    encoder, decoder, _ = build_models("vae", config.architecture)
    sampler = torch.Generator().manual_seed(config.seed + 1)
    optimizer = _init_optimizer(
        list(encoder.parameters()) + list(decoder.parameters()), config.hyper
    )
    log = TrainLog()
    start = time.perf_counter()
    step = 0
    d_z = config.architecture.latent_dim
    for epoch in range(config.epochs):
        order = torch.randperm(len(images), generator=sampler)
        for begin in range(0, len(images), config.hyper.batch_size):
            batch = images[order[begin : begin + config.hyper.batch_size]]
            noise = torch.randn(batch.shape[0], d_z, generator=sampler)
            total, terms = vae_loss(encoder, decoder, batch, noise,
                                    kl_weight=config.hyper.kl_weight)
            step += 1
            record = {
                "step": step,
                "epoch": epoch,
                "kind": "vae",
                "total": total.item(),
                "reconstruction": terms["reconstruction"].item(),
                "kl": terms["kl"].item(),
            }
            _abort_if_nonfinite(total, record, "vae", config.architecture, config.hyper,
                                encoder, decoder, None)
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            log.append(record, time.perf_counter() - start)
        log.epoch_boundaries.append(step)
        _maybe_checkpoint(checkpoint_dir, epoch, config, encoder, decoder, None)
    log.wall_clock_seconds = time.perf_counter() - start
    encoder.eval()
    decoder.eval()
    checkpoint = Checkpoint("vae", config.architecture, config.hyper, encoder, decoder, None)
    return checkpoint, log


def train_aae(config: TrainConfig, dataset: Dataset, checkpoint_dir=None):
    """Train an AAE (constrained when ``hyper.lambda_lc > 0``).

    Schedule: for each main-stream batch, ``n_critic`` critic updates on
    batches from an independent shuffled stream, then one encoder/decoder
    update whose encoder gradient combines the auto-encoder loss and the
    adversarial term.
    """
    if config.model_kind != "aae":
        raise ContractError("train_aae requires model_kind 'aae'")
    images = _as_tensor(dataset)
    hyper = config.hyper
    torch.manual_seed(config.seed)
    encoder, decoder, critic = build_models("aae", config.architecture)
    sampler = torch.Generator().manual_seed(config.seed + 1)
    opt_ae = _init_optimizer(list(encoder.parameters()) + list(decoder.parameters()), hyper)
    opt_critic = _init_optimizer(critic.parameters(), hyper)
    critic_stream = _BatchStream(len(images), hyper.batch_size, sampler)
    log = TrainLog()
    start = time.perf_counter()
    step = 0
    d_z = config.architecture.latent_dim
    for epoch in range(config.epochs):
        order = torch.randperm(len(images), generator=sampler)
        for begin in range(0, len(images), hyper.batch_size):
            batch = images[order[begin : begin + hyper.batch_size]]
            for _ in range(hyper.n_critic):
                critic_batch = images[critic_stream.next_indices()]
                with torch.no_grad():
                    z_fake = encoder(critic_batch)
                prior = torch.randn(len(critic_batch), d_z, generator=sampler)
                eps = torch.rand(len(critic_batch), 1, generator=sampler)
                penalty = gradient_penalty(critic, prior, z_fake, eps)
                gap = critic(z_fake).mean() - critic(prior).mean()
                critic_loss = gap + hyper.lambda_gp * penalty
                step += 1
                record = {
                    "step": step,
                    "epoch": epoch,
                    "kind": "critic",
                    "critic_loss": critic_loss.item(),
                    "wasserstein_gap": gap.item(),
                    "gradient_penalty": penalty.item(),
                }
                _abort_if_nonfinite(critic_loss, record, "aae", config.architecture,
                                    hyper, encoder, decoder, critic)
                opt_critic.zero_grad()
                critic_loss.backward()
                opt_critic.step()
                log.append(record, time.perf_counter() - start)

            z = encoder(batch)
            x_prime = decoder(z)
            recon = reconstruction_loss(batch, x_prime).mean()
            if hyper.lambda_lc > 0:
                reencoded = x_prime.detach() if config.stop_consistency_gradient else x_prime
                consistency = latent_consistency_loss(z, encoder(reencoded)).mean()
                ae_loss = recon + hyper.lambda_lc * consistency
            else:
                consistency = torch.zeros(())
                ae_loss = recon
            adversarial = -critic(z).mean()
            total = ae_loss + adversarial
            step += 1
            record = {
                "step": step,
                "epoch": epoch,
                "kind": "ae",
                "autoencoder_loss": ae_loss.item(),
                "reconstruction": recon.item(),
                "latent_consistency": consistency.item(),
                "encoder_adversarial_loss": adversarial.item(),
            }
            _abort_if_nonfinite(total, record, "aae", config.architecture, hyper,
                                encoder, decoder, critic)
            opt_ae.zero_grad()
            opt_critic.zero_grad()  # adversarial term also reaches critic weights
            total.backward()
            opt_ae.step()
            log.append(record, time.perf_counter() - start)
        log.epoch_boundaries.append(step)
        _maybe_checkpoint(checkpoint_dir, epoch, config, encoder, decoder, critic)
    log.wall_clock_seconds = time.perf_counter() - start
    encoder.eval()
    decoder.eval()
    critic.eval()
    checkpoint = Checkpoint("aae", config.architecture, hyper, encoder, decoder, critic)
    return checkpoint, log


def train(config: TrainConfig, dataset: Dataset, checkpoint_dir=None):
    """Dispatch to the trainer matching ``config.model_kind``."""
    if config.model_kind == "vae":
        return train_vae(config, dataset, checkpoint_dir)
    return train_aae(config, dataset, checkpoint_dir)
