"""Network construction, forward contracts, and checkpoint round-trips."""

import numpy as np
import pytest
import torch

from oracles import small_descriptor, zero_module
from reconad.errors import CheckpointError, ContractError, NumericalOverflowError
from reconad.models import (
    ArchitectureDescriptor,
    Hyperparameters,
    LatentDistribution,
    build_models,
    decode,
    encode,
    load_checkpoint,
    save_checkpoint,
)


class TestArchitectureDescriptor:
    def test_defaults(self):
        descriptor = ArchitectureDescriptor()
        assert descriptor.image_size == 32
        assert descriptor.latent_dim == 64
        assert descriptor.bottleneck_size == 2  # 32 / 2^4

    def test_bottleneck_follows_block_count(self):
        descriptor = ArchitectureDescriptor(image_size=16, channels=(8, 16))
        assert descriptor.bottleneck_size == 4

    def test_indivisible_image_size_rejected(self):
        with pytest.raises(ContractError):
            ArchitectureDescriptor(image_size=30)

    def test_dict_round_trip(self):
        descriptor = small_descriptor()
        assert ArchitectureDescriptor.from_dict(descriptor.to_dict()) == descriptor


class TestHyperparameters:
    def test_defaults_valid(self):
        hyper = Hyperparameters()
        assert hyper.lambda_lc == 0.0
        assert hyper.lambda_gp == 10.0

    def test_negative_lambda_lc_rejected(self):
        with pytest.raises(ContractError):
            Hyperparameters(lambda_lc=-0.1)

    def test_nonpositive_fields_rejected(self):
        with pytest.raises(ContractError):
            Hyperparameters(lambda_gp=0.0)
        with pytest.raises(ContractError):
            Hyperparameters(learning_rate=-1e-4)
        with pytest.raises(ContractError):
            Hyperparameters(n_critic=0)

    def test_dict_round_trip(self):
        hyper = Hyperparameters(lambda_lc=1.0, batch_size=16)
        assert Hyperparameters.from_dict(hyper.to_dict()) == hyper


class TestEncoder:
    def test_zero_weight_variational_encoder(self):
        """All-zero weights force mean = 0 and log_variance = 0."""
        torch.manual_seed(0)
        encoder, _, _ = build_models("vae", small_descriptor())
        zero_module(encoder)
        dist = encode(encoder, torch.randn(2, 8, 8))
        assert isinstance(dist, LatentDistribution)
        np.testing.assert_array_equal(dist.mean.detach().numpy(), 0.0)
        np.testing.assert_array_equal(dist.log_variance.detach().numpy(), 0.0)

    def test_deterministic(self):
        torch.manual_seed(1)
        encoder, _, _ = build_models("aae", small_descriptor())
        image = torch.randn(1, 8, 8)
        a = encode(encoder, image).detach()
        b = encode(encoder, image).detach()
        assert torch.equal(a, b)

    def test_single_pixel_sensitivity(self):
        """Generic weights: changing one pixel changes the code."""
        torch.manual_seed(2)
        encoder, _, _ = build_models("aae", small_descriptor())
        image = torch.randn(1, 8, 8)
        bumped = image.clone()
        bumped[0, 3, 4] += 0.5
        assert not torch.equal(
            encode(encoder, image).detach(), encode(encoder, bumped).detach()
        )

    def test_output_dimension(self):
        torch.manual_seed(3)
        descriptor = small_descriptor(latent_dim=5)
        aae_encoder, _, _ = build_models("aae", descriptor)
        assert encode(aae_encoder, torch.randn(4, 8, 8)).shape == (4, 5)
        vae_encoder, _, _ = build_models("vae", descriptor)
        dist = encode(vae_encoder, torch.randn(4, 8, 8))
        assert dist.mean.shape == (4, 5)
        assert dist.log_variance.shape == (4, 5)

    def test_unbatched_image(self):
        torch.manual_seed(4)
        encoder, _, _ = build_models("aae", small_descriptor())
        single = encode(encoder, torch.randn(8, 8))
        assert single.shape == (3,)

    def test_log_variance_clamped(self):
        """Scaled-up head weights cannot push log_variance outside [-10, 10]."""
        torch.manual_seed(5)
        encoder, _, _ = build_models("vae", small_descriptor())
        with torch.no_grad():
            encoder.head.weight.mul_(1e4)
            encoder.head.bias.mul_(1e4)
        dist = encode(encoder, torch.randn(8, 8, 8))
        assert dist.log_variance.max().item() <= 10.0
        assert dist.log_variance.min().item() >= -10.0

    def test_nonfinite_input_rejected(self):
        torch.manual_seed(6)
        encoder, _, _ = build_models("aae", small_descriptor())
        bad = torch.randn(1, 8, 8)
        bad[0, 0, 0] = float("nan")
        with pytest.raises(ContractError):
            encode(encoder, bad)

    def test_nonfinite_activation_names_layer(self):
        torch.manual_seed(7)
        encoder, _, _ = build_models("aae", small_descriptor())
        with torch.no_grad():
            encoder.head.weight.fill_(float("inf"))
        with pytest.raises(NumericalOverflowError) as excinfo:
            encode(encoder, torch.randn(1, 8, 8))
        assert excinfo.value.layer == "head"


class TestDecoder:
    def test_zero_weight_decoder_outputs_bias(self):
        """Zero weights and a fixed output bias give a constant image."""
        torch.manual_seed(10)
        _, decoder, _ = build_models("aae", small_descriptor())
        zero_module(decoder)
        with torch.no_grad():
            decoder.features[-1].bias.fill_(0.25)
        image = decode(decoder, torch.randn(1, 3))
        np.testing.assert_allclose(image.detach().numpy(), 0.25, atol=1e-7)

    def test_deterministic(self):
        torch.manual_seed(11)
        _, decoder, _ = build_models("aae", small_descriptor())
        z = torch.randn(2, 3)
        assert torch.equal(decode(decoder, z).detach(), decode(decoder, z).detach())

    def test_output_shape(self):
        torch.manual_seed(12)
        _, decoder, _ = build_models("aae", small_descriptor())
        assert decode(decoder, torch.randn(5, 3)).shape == (5, 8, 8)
        assert decode(decoder, torch.randn(3)).shape == (8, 8)

    def test_nonfinite_code_rejected(self):
        torch.manual_seed(13)
        _, decoder, _ = build_models("aae", small_descriptor())
        with pytest.raises(ContractError):
            decode(decoder, torch.tensor([float("inf"), 0.0, 0.0]))


class TestBuildModels:
    def test_vae_bundle(self):
        encoder, decoder, critic = build_models("vae", small_descriptor())
        assert encoder.variational
        assert critic is None
        assert decoder is not None

    def test_aae_bundle(self):
        encoder, decoder, critic = build_models("aae", small_descriptor())
        assert not encoder.variational
        assert critic is not None

    def test_unknown_kind(self):
        with pytest.raises(ContractError):
            build_models("gan", small_descriptor())


class TestCheckpoints:
    @pytest.mark.parametrize("kind", ["vae", "aae"])
    def test_round_trip_preserves_forward_outputs(self, kind, tmp_path):
        torch.manual_seed(20)
        descriptor = small_descriptor()
        hyper = Hyperparameters(lambda_lc=0.5)
        encoder, decoder, critic = build_models(kind, descriptor)
        path = tmp_path / "model.pt"
        save_checkpoint(path, kind, descriptor, hyper, encoder, decoder, critic)

        loaded = load_checkpoint(path)
        assert loaded.kind == kind
        assert loaded.descriptor == descriptor
        assert loaded.hyper == hyper

        probe = torch.randn(4, 8, 8)
        if kind == "vae":
            original, restored = encoder(probe), loaded.encoder(probe)
            assert torch.equal(original.mean.detach(), restored.mean.detach())
            assert torch.equal(
                original.log_variance.detach(), restored.log_variance.detach()
            )
            codes = original.mean.detach()
        else:
            original, restored = encoder(probe), loaded.encoder(probe)
            assert torch.equal(original.detach(), restored.detach())
            codes = original.detach()
            assert torch.equal(
                critic(codes).detach(), loaded.critic(codes).detach()
            )
        assert torch.equal(
            decoder(codes).detach(), loaded.decoder(codes).detach()
        )

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "bad.pt"
        torch.save({"format_version": 999}, path)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_tampered_architecture_rejected(self, tmp_path):
        """Weights that disagree with the descriptor must not load."""
        torch.manual_seed(21)
        descriptor = small_descriptor()
        encoder, decoder, critic = build_models("aae", descriptor)
        path = tmp_path / "model.pt"
        save_checkpoint(path, "aae", descriptor, Hyperparameters(), encoder, decoder, critic)
        payload = torch.load(path, weights_only=True)
        payload["architecture"]["latent_dim"] = 7
        torch.save(payload, path)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.pt")

    def test_loaded_modules_in_eval_mode(self, tmp_path):
        torch.manual_seed(22)
        descriptor = small_descriptor()
        encoder, decoder, critic = build_models("aae", descriptor)
        path = tmp_path / "model.pt"
        save_checkpoint(path, "aae", descriptor, Hyperparameters(), encoder, decoder, critic)
        loaded = load_checkpoint(path)
        assert not loaded.encoder.training
        assert not loaded.decoder.training
        assert not loaded.critic.training
