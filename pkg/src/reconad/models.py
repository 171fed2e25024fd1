"""Encoder / decoder / latent-critic networks and checkpoint IO.

The encoder is a small residual CNN with stride-2 downsampling
(32 -> 16 -> 8 -> 4 -> 2 spatial with the default four blocks) feeding a
dense head; the decoder mirrors it with nearest-neighbor upsampling. The
critic scoring latent codes is a plain MLP without normalization layers,
which would break the per-sample gradient penalty.

SiLU activations are used throughout: they are smooth, so analytic
gradients can be validated against central finite differences tightly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import torch
from torch import nn

from .errors import CheckpointError, ContractError, NumericalOverflowError

CHECKPOINT_FORMAT_VERSION = 1

LOG_VARIANCE_RANGE = (-10.0, 10.0)


class LatentDistribution(NamedTuple):
    """Diagonal-Gaussian encoder output (variational head)."""

    mean: torch.Tensor
    log_variance: torch.Tensor


@dataclass
class ArchitectureDescriptor:
    """Everything needed to rebuild the networks with matching shapes."""

    image_size: int = 32
    channels: tuple[int, ...] = (32, 64, 128, 256)
    latent_dim: int = 64
    critic_hidden: int = 256
    critic_layers: int = 3
    norm_groups: int = 8

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.image_size % (2 ** len(self.channels)) != 0:
            raise ContractError(
                f"image_size {self.image_size} not divisible by 2^{len(self.channels)} blocks"
            )
        if self.latent_dim < 1:
            raise ContractError("latent_dim must be >= 1")

    @property
    def bottleneck_size(self) -> int:
        return self.image_size // (2 ** len(self.channels))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "ArchitectureDescriptor":
        return cls(**{**data, "channels": tuple(data["channels"])})


@dataclass
class Hyperparameters:
    """Loss weights and optimization constants.

    ``lambda_lc`` weighs the latent-consistency term (0 recovers the plain
    adversarial auto-encoder); ``lambda_gp`` is the critic gradient-penalty
    coefficient. The latent prior is a unit Gaussian of the architecture's
    latent dimension.
    """

    lambda_lc: float = 0.0
    lambda_gp: float = 10.0
    learning_rate: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    batch_size: int = 64
    n_critic: int = 5
    kl_weight: float = 1.0

    def __post_init__(self):
        if self.lambda_lc < 0:
            raise ContractError("lambda_lc must be >= 0")
        for name in ("lambda_gp", "learning_rate", "batch_size", "n_critic", "kl_weight"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Hyperparameters":
        return cls(**data)


def _group_norm(channels: int, groups: int) -> nn.GroupNorm:
    while channels % groups != 0:
        groups -= 1
    return nn.GroupNorm(groups, channels)


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with a projected skip; optional stride-2."""

    def __init__(self, in_channels, out_channels, stride=1, groups=8):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1)
        self.norm1 = _group_norm(out_channels, groups)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.norm2 = _group_norm(out_channels, groups)
        self.act = nn.SiLU()
        if stride != 1 or in_channels != out_channels:
            self.skip = nn.Conv2d(in_channels, out_channels, 1, stride=stride)
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        h = self.act(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return self.act(h + self.skip(x))


class Encoder(nn.Module):
    """Image -> latent map; Gaussian parameters or a point code.

    ``variational=True`` yields (mean, log_variance) with the log-variance
    clamped to a safe range; otherwise a deterministic code.
    """

    def __init__(self, descriptor: ArchitectureDescriptor, variational: bool):
        super().__init__()
        self.descriptor = descriptor
        self.variational = variational
        channels = descriptor.channels
        stem_channels = max(channels[0] // 2, 4)
        layers = [nn.Conv2d(1, stem_channels, 3, padding=1), nn.SiLU()]
        previous = stem_channels
        for width in channels:
            layers.append(ResidualBlock(previous, width, stride=2, groups=descriptor.norm_groups))
            previous = width
        self.features = nn.Sequential(*layers)
        flat = channels[-1] * descriptor.bottleneck_size**2
        out_dim = 2 * descriptor.latent_dim if variational else descriptor.latent_dim
        self.head = nn.Linear(flat, out_dim)

    def forward(self, images: torch.Tensor):
        squeeze = images.dim() == 2
        if squeeze:
            images = images.unsqueeze(0)
        if images.dim() == 3:
            images = images.unsqueeze(1)
        h = self.features(images)
        out = self.head(h.flatten(1))
        if self.variational:
            mean, log_variance = out.chunk(2, dim=-1)
            log_variance = log_variance.clamp(*LOG_VARIANCE_RANGE)
            if squeeze:
                mean, log_variance = mean[0], log_variance[0]
            return LatentDistribution(mean, log_variance)
        return out[0] if squeeze else out


class Decoder(nn.Module):
    """Latent code -> image, mirroring the encoder with 2x upsampling."""

    def __init__(self, descriptor: ArchitectureDescriptor):
        super().__init__()
        self.descriptor = descriptor
        channels = descriptor.channels
        self.bottleneck = descriptor.bottleneck_size
        self.head = nn.Linear(descriptor.latent_dim, channels[-1] * self.bottleneck**2)
        stem_channels = max(channels[0] // 2, 4)
        widths = list(channels[::-1][1:]) + [stem_channels]
        layers = []
        previous = channels[-1]
        for width in widths:
            layers.append(nn.Upsample(scale_factor=2, mode="nearest"))
            layers.append(ResidualBlock(previous, width, groups=descriptor.norm_groups))
            previous = width
        layers.append(nn.Conv2d(previous, 1, 3, padding=1))
        self.features = nn.Sequential(*layers)

    def forward(self, codes: torch.Tensor):
        squeeze = codes.dim() == 1
        if squeeze:
            codes = codes.unsqueeze(0)
        h = self.head(codes)
        h = h.view(-1, self.descriptor.channels[-1], self.bottleneck, self.bottleneck)
        images = self.features(h).squeeze(1)
        return images.squeeze(0) if squeeze else images


class Critic(nn.Module):
    """Unbounded Wasserstein critic over latent codes (no normalization)."""

    def __init__(self, descriptor: ArchitectureDescriptor):
        super().__init__()
        layers = []
        previous = descriptor.latent_dim
        for _ in range(descriptor.critic_layers):
            layers += [nn.Linear(previous, descriptor.critic_hidden), nn.SiLU()]
            previous = descriptor.critic_hidden
        layers.append(nn.Linear(previous, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, codes: torch.Tensor):
        return self.net(codes).squeeze(-1)


def build_models(kind: str, descriptor: ArchitectureDescriptor):
    """Construct (encoder, decoder, critic-or-None) for a model kind."""
    if kind == "vae":
        return Encoder(descriptor, variational=True), Decoder(descriptor), None
    if kind == "aae":
        return Encoder(descriptor, variational=False), Decoder(descriptor), Critic(descriptor)
    raise ContractError(f"unknown model kind {kind!r} (expected 'vae' or 'aae')")


def _locate_nonfinite(module: nn.Module, x: torch.Tensor) -> str:
    """Re-run a failed forward pass with hooks to name the first bad leaf layer."""
    first_bad = []
    handles = []

    def probe(name):
        def hook(_mod, _inp, out):
            tensors = out if isinstance(out, tuple) else (out,)
            if not first_bad and any(
                isinstance(t, torch.Tensor) and not torch.isfinite(t).all() for t in tensors
            ):
                first_bad.append(name)
        return hook

    for name, child in module.named_modules():
        if name and not any(True for _ in child.children()):
            handles.append(child.register_forward_hook(probe(name)))
    try:
        with torch.no_grad():
            module(x)
    finally:
        for handle in handles:
            handle.remove()
    return first_bad[0] if first_bad else "unknown"


def _check_finite(module: nn.Module, inputs: torch.Tensor, outputs) -> None:
    tensors = outputs if isinstance(outputs, tuple) else (outputs,)
    if all(torch.isfinite(t).all() for t in tensors):
        return
    layer = _locate_nonfinite(module, inputs)
    raise NumericalOverflowError(
        f"non-finite activations in {module.__class__.__name__} (first bad layer: {layer})",
        layer=layer,
    )


def encode(encoder: Encoder, images: torch.Tensor):
    """Forward through the encoder with a non-finite activation check."""
    if not torch.isfinite(images).all():
        raise ContractError("encoder input contains non-finite values")
    out = encoder(images)
    _check_finite(encoder, images, out)
    return out


def decode(decoder: Decoder, codes: torch.Tensor):
    """Forward through the decoder with a non-finite activation check."""
    if not torch.isfinite(codes).all():
        raise ContractError("decoder input contains non-finite values")
    out = decoder(codes)
    _check_finite(decoder, codes, out)
    return out


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, kind: str, descriptor: ArchitectureDescriptor,
                    hyper: Hyperparameters, encoder: Encoder, decoder: Decoder,
                    critic: Critic | None = None):
    """Serialize descriptor + hyperparameters + all weights with a version tag."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": kind,
        "architecture": descriptor.to_dict(),
        "hyperparameters": hyper.to_dict(),
        "encoder": encoder.state_dict(),
        "decoder": decoder.state_dict(),
        "critic": critic.state_dict() if critic is not None else None,
    }
    torch.save(payload, path)


@dataclass
class Checkpoint:
    """A loaded model bundle: rebuilt modules plus their provenance."""

    kind: str
    descriptor: ArchitectureDescriptor
    hyper: Hyperparameters
    encoder: Encoder
    decoder: Decoder
    critic: Critic | None

    def modules(self):
        return self.encoder, self.decoder, self.critic


def load_checkpoint(path) -> Checkpoint:
    """Load a checkpoint, validating weight shapes against the descriptor."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    version = payload.get("format_version") if isinstance(payload, dict) else None
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r}")
    try:
        descriptor = ArchitectureDescriptor.from_dict(payload["architecture"])
        hyper = Hyperparameters.from_dict(payload["hyperparameters"])
        kind = payload["kind"]
        encoder, decoder, critic = build_models(kind, descriptor)
        encoder.load_state_dict(payload["encoder"])
        decoder.load_state_dict(payload["decoder"])
        if critic is not None and payload.get("critic") is not None:
            critic.load_state_dict(payload["critic"])
    except (KeyError, TypeError, RuntimeError, ContractError) as exc:
        raise CheckpointError(f"checkpoint {path} disagrees with its descriptor: {exc}") from exc
    encoder.eval()
    decoder.eval()
    if critic is not None:
        critic.eval()
    return Checkpoint(kind, descriptor, hyper, encoder, decoder, critic)
