import numpy as np
import pytest
import torch

from stemdiff.audio.corpus import ToyCorpusSpec
from stemdiff.audio.stacks import MelConfig
from stemdiff.codec import LatentCodecConfig
from stemdiff.pipeline.config import (
    ExperimentConfig,
    InferenceParams,
    ScheduleParams,
    TrainingParams,
    validate_config,
)
from stemdiff.unet import UNetConfig


def micro_config(n_examples: int = 4, **overrides) -> ExperimentConfig:
    """Tiny geometry that exercises the full pipeline in seconds."""
    corpus = ToyCorpusSpec(n_examples=n_examples, duration_samples=10240)
    cfg = ExperimentConfig(
        profile="toy",
        clip_samples=10240,
        stem_names=("bass", "drums", "guitar", "piano"),
        mel=MelConfig(window_length=1024, hop=160, mel_bins=32, sample_rate=16000),
        codec=LatentCodecConfig(compression_ratio=4, latent_channels=2, widths=(8, 16)),
        schedule=ScheduleParams(n_steps=100),
        unet=UNetConfig(
            stems=4, latent_channels=2, widths=(8, 16), attention_levels=(),
            timestep_embed_dim=16, res_blocks=1,
        ),
        vae_training=TrainingParams(learning_rate=2e-3, epochs=2, batch_size=8),
        ldm_training=TrainingParams(learning_rate=1e-3, epochs=2, batch_size=4),
        inference=InferenceParams(steps=8, resample=2, griffin_lim_iters=4),
        corpus=corpus,
        **overrides,
    )
    validate_config(cfg)
    return cfg


@pytest.fixture(scope="session")
def micro_cfg():
    return micro_config()


@pytest.fixture(scope="session")
def micro_bundle_path(tmp_path_factory, micro_cfg):
    """Trained-enough micro checkpoint: real VAE + a few LDM steps."""
    from stemdiff.pipeline.training import train_ldm, train_vae

    root = tmp_path_factory.mktemp("micro_ckpt")
    codec_path, _ = train_vae(micro_cfg, root / "codec.pt")
    bundle_path, _ = train_ldm(micro_cfg, codec_path, root / "bundle.pt")
    return bundle_path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_determinism():
    torch.manual_seed(0)
