"""Loss terms for the variational and adversarial auto-encoder objectives.

Conventions, stated once:

* Reconstruction error is the squared L2 norm (sum of squared pixel
  differences per image), the log-likelihood of a unit-variance Gaussian
  decoder up to constants.
* The critic is trained to score prior samples above encoded codes:
  its loss is ``mean D(encoded) - mean D(prior) + lambda_gp * penalty``
  and the encoder's adversarial loss is ``-mean D(encoded)``.
* The latent-consistency term ties an image's code to the code of its own
  reconstruction: ``||z - encode(decode(z))||^2``, weighted by
  ``lambda_lc``. With ``lambda_lc == 0`` the combined objective reduces
  bitwise to the unconstrained one (the term is skipped, not multiplied
  out).
"""

from __future__ import annotations

import torch

from .errors import ContractError
from .models import Critic, Decoder, Encoder, Hyperparameters, LatentDistribution


def reparameterize(dist: LatentDistribution, noise: torch.Tensor) -> torch.Tensor:
    """Draw z = mean + exp(log_variance / 2) * noise (pathwise sampling)."""
    if noise.shape != dist.mean.shape:
        raise ContractError(
            f"noise shape {tuple(noise.shape)} does not match mean {tuple(dist.mean.shape)}"
        )
    return dist.mean + torch.exp(0.5 * dist.log_variance) * noise


def kl_divergence(dist: LatentDistribution) -> torch.Tensor:
    """KL(N(mean, diag variance) || N(0, I)), summed over latent dimensions.

    Closed form: -1/2 sum_i (1 + log var_i - mean_i^2 - var_i). Batched
    inputs give one value per row.
    """
    mean, log_variance = dist.mean, dist.log_variance
    if mean.shape != log_variance.shape:
        raise ContractError("mean and log_variance shapes differ")
    return -0.5 * torch.sum(1 + log_variance - mean**2 - log_variance.exp(), dim=-1)


def reconstruction_loss(x: torch.Tensor, x_prime: torch.Tensor) -> torch.Tensor:
    """Sum of squared pixel differences per image (squared L2)."""
    if x.shape != x_prime.shape:
        raise ContractError(f"image shapes differ: {tuple(x.shape)} vs {tuple(x_prime.shape)}")
    diff = (x - x_prime).flatten(start_dim=-2)
    return torch.sum(diff**2, dim=-1)


def latent_consistency_loss(z: torch.Tensor, z_prime: torch.Tensor) -> torch.Tensor:
    """Squared Euclidean distance between a code and its re-encoded reconstruction."""
    if z.shape != z_prime.shape:
        raise ContractError(f"latent shapes differ: {tuple(z.shape)} vs {tuple(z_prime.shape)}")
    return torch.sum((z - z_prime) ** 2, dim=-1)


def critic_score(critic: Critic, z: torch.Tensor) -> torch.Tensor:
    """Unbounded per-sample critic value D(z)."""
    return critic(z)


def gradient_penalty(critic: Critic, z_real: torch.Tensor, z_fake: torch.Tensor,
                     interpolation: torch.Tensor) -> torch.Tensor:
    """Mean squared deviation of the critic's gradient norm from 1.

    Evaluated at per-sample interpolations
    ``eps * z_real + (1 - eps) * z_fake`` with ``eps`` given as a
    (batch, 1) tensor of uniforms supplied by the caller (so training can
    seed it and tests can pin it).
    """
    if z_real.shape != z_fake.shape:
        raise ContractError("real and fake latent batches must have the same shape")
    eps = interpolation.reshape(-1, 1)
    if eps.shape[0] != z_real.shape[0]:
        raise ContractError("one interpolation coefficient per batch row is required")
    mixed = (eps * z_real + (1.0 - eps) * z_fake).detach().requires_grad_(True)
    scores = critic(mixed)
    grads, = torch.autograd.grad(
        scores, mixed, grad_outputs=torch.ones_like(scores), create_graph=True
    )
    norms = grads.norm(2, dim=-1)
    return torch.mean((norms - 1.0) ** 2)


def vae_loss(encoder: Encoder, decoder: Decoder, batch: torch.Tensor,
             noise: torch.Tensor, kl_weight: float = 1.0):
    """Batch-mean reconstruction + KL objective with a per-term breakdown.

    The total is assembled from the reported terms, so
    ``total == breakdown['reconstruction'] + kl_weight * breakdown['kl']``
    holds exactly.
    """
    dist = encoder(batch)
    z = reparameterize(dist, noise)
    x_prime = decoder(z)
    recon = reconstruction_loss(batch, x_prime).mean()
    kl = kl_divergence(dist).mean()
    total = recon + kl_weight * kl
    return total, {"reconstruction": recon, "kl": kl}


def aae_losses(encoder: Encoder, decoder: Decoder, critic: Critic,
               hyper: Hyperparameters, batch: torch.Tensor,
               prior_samples: torch.Tensor, interpolation: torch.Tensor,
               stop_consistency_gradient: bool = False) -> dict:
    """All adversarial auto-encoder loss terms for one batch.

    Returns a dict with the three optimized objectives
    (``autoencoder_loss`` for encoder+decoder, ``critic_loss`` for the
    critic, ``encoder_adversarial_loss`` added to the encoder) plus
    unweighted diagnostics. The critic terms see detached codes; the
    adversarial term propagates into the encoder only.
    """
    z = encoder(batch)
    x_prime = decoder(z)
    recon = reconstruction_loss(batch, x_prime).mean()

    if hyper.lambda_lc > 0:
        reencoded_input = x_prime.detach() if stop_consistency_gradient else x_prime
        z_prime = encoder(reencoded_input)
        consistency = latent_consistency_loss(z, z_prime).mean()
        autoencoder_loss = recon + hyper.lambda_lc * consistency
    else:
        consistency = torch.zeros((), dtype=recon.dtype, device=recon.device)
        autoencoder_loss = recon

    z_detached = z.detach()
    penalty = gradient_penalty(critic, prior_samples, z_detached, interpolation)
    wasserstein_gap = critic(z_detached).mean() - critic(prior_samples).mean()
    critic_loss = wasserstein_gap + hyper.lambda_gp * penalty
    encoder_adversarial_loss = -critic(z).mean()

    return {
        "autoencoder_loss": autoencoder_loss,
        "critic_loss": critic_loss,
        "encoder_adversarial_loss": encoder_adversarial_loss,
        "reconstruction": recon,
        "latent_consistency": consistency,
        "gradient_penalty": penalty,
        "wasserstein_gap": wasserstein_gap,
    }
