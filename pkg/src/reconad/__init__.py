"""reconad: unsupervised anomaly detection via reconstruction residuals.

Models of "healthy" image distributions (VAE, adversarial auto-encoder,
and the AAE with a latent-consistency constraint) are trained on clean
data; anomalies in test images show up as per-pixel reconstruction error.
"""

from .config import ExperimentConfig, load_config
from .data import Dataset, Volume, load_volume, read_archive, save_volume, write_archive
from .detection import DetectionResult, detect, reconstruct, residual_map
from .evaluation import (
    ErrorDistributions,
    LatentEmbedding,
    RocResult,
    error_distributions,
    export_latents,
    overlap_metric,
    roc_auc,
)
from .losses import (
    aae_losses,
    gradient_penalty,
    kl_divergence,
    latent_consistency_loss,
    reconstruction_loss,
    reparameterize,
    vae_loss,
)
from .models import (
    ArchitectureDescriptor,
    Checkpoint,
    Critic,
    Decoder,
    Encoder,
    Hyperparameters,
    LatentDistribution,
    build_models,
    load_checkpoint,
    save_checkpoint,
)
from .phantom import PhantomSpec, generate_healthy, inject_anomaly, make_benchmark
from .preprocess import (
    build_reference_profile,
    downsample,
    extract_slices,
    histogram_normalize,
    standardize,
    unstandardize,
)
from .training import TrainConfig, TrainLog, train, train_aae, train_vae

__version__ = "0.1.0"
