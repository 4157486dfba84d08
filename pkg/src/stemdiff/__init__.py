"""stemdiff: multi-track latent diffusion for music stems.

One trained model covers three tasks over a four-stem latent space:
conditional sampling separates a mixture into stems, unconditional
sampling generates coherent multi-stem music, and replacement inpainting
completes missing stems given others.
"""
from .audio import (
    MelConfig,
    MelStack,
    ToyCorpusSpec,
    WaveformStack,
    mel_forward,
    mel_invert,
    mix_stack,
    synth_toy_example,
)
from .codec import LatentCodecConfig, LatentStack, MelCodec, vae_decode, vae_encode
from .diffusion import (
    NoiseSchedule,
    SamplerRun,
    TrackMask,
    build_schedule,
    cfg_blend,
    ddim_sample,
    ddpm_loss,
    forward_diffuse,
    inpaint_sample,
)
from .evaluation import (
    Embedder,
    GaussianStats,
    ToyEmbedder,
    arrangement_fad,
    embed_stats,
    frechet_distance,
    mel_mse,
)
from .pipeline import (
    ExperimentConfig,
    Pipeline,
    load_checkpoint,
    load_config,
    save_checkpoint,
    train_ldm,
    train_vae,
)
from .unet import UNet3D, UNetConfig, inject_condition, timestep_embed

__version__ = "0.1.0"
