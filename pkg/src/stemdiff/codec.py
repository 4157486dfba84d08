"""Per-stem variational autoencoder between log-Mel and the diffusion latent.

One 2D codec is shared by every stem (and by the mixture): a stack is
encoded by running the encoder over the stem axis as a batch. Latents are
standardized by a global scale calibrated after training so diffusion
sees roughly unit-variance inputs; the scale is part of the codec state
and round-trips transparently through decode.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .audio.stacks import MelConfig, MelStack
from .errors import ConfigError, ShapeError, StateError, TrainingDivergedError


@dataclass(frozen=True)
class LatentCodecConfig:
    compression_ratio: int = 4
    latent_channels: int = 8
    widths: tuple[int, ...] = (64, 128)  # one entry per stride-2 encoder stage
    kl_weight: float = 1e-4

    def __post_init__(self):
        r = self.compression_ratio
        if r < 2 or (r & (r - 1)) != 0:
            raise ConfigError(f"compression ratio must be a power of 2 >= 2, got {r}")
        if len(self.widths) != int(math.log2(r)):
            raise ConfigError(
                f"width schedule must have log2(r)={int(math.log2(r))} stages, got {len(self.widths)}"
            )
        if self.latent_channels < 1:
            raise ConfigError("latent_channels must be >= 1")


@dataclass
class PosteriorParams:
    """Diagonal-Gaussian posterior over one latent block."""

    mean: torch.Tensor
    log_variance: torch.Tensor

    def sample(self, generator: torch.Generator | None = None) -> torch.Tensor:
        noise = torch.empty_like(self.mean).normal_(generator=generator)
        return self.mean + torch.exp(0.5 * self.log_variance) * noise

    def kl(self) -> torch.Tensor:
        """Mean per-element KL against the standard normal (always >= 0)."""
        m, lv = self.mean, self.log_variance
        return 0.5 * torch.mean(m**2 + torch.exp(lv) - 1.0 - lv)


@dataclass
class LatentStack:
    """Per-stem latents [S, C, T/r, F/r] plus the producing codec's fingerprint."""

    values: torch.Tensor
    codec_id: str = ""

    def __post_init__(self):
        if self.values.ndim != 4:
            raise ShapeError(f"latent stack must be rank-4 [S, C, T', F'], got {tuple(self.values.shape)}")
        if not torch.isfinite(self.values).all():
            raise ValueError("latent stack contains non-finite values")

    @property
    def n_stems(self) -> int:
        return self.values.shape[0]


def _norm(ch: int) -> nn.Module:
    groups = math.gcd(ch, 8) if ch >= 8 else 1
    return nn.GroupNorm(groups, ch)


class MelCodec(nn.Module):
    """Conv VAE: [B, 1, T, F] log-Mel (normalized) <-> [B, C, T/r, F/r]."""

    def __init__(self, config: LatentCodecConfig, mel_config: MelConfig | None = None):
        super().__init__()
        self.config = config
        self.mel_config = mel_config if mel_config is not None else MelConfig()
        c = config.latent_channels
        widths = config.widths

        enc = []
        in_ch = 1
        for w in widths:
            enc += [nn.Conv2d(in_ch, w, 3, stride=2, padding=1), _norm(w), nn.SiLU()]
            in_ch = w
        enc += [nn.Conv2d(in_ch, in_ch, 3, padding=1), _norm(in_ch), nn.SiLU()]
        self.encoder = nn.Sequential(*enc)
        self.post_head = nn.Conv2d(in_ch, 2 * c, 1)

        dec = [nn.Conv2d(c, in_ch, 3, padding=1), _norm(in_ch), nn.SiLU()]
        for w_out in list(widths[:-1])[::-1] + [widths[0]]:
            dec += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(in_ch, w_out, 3, padding=1),
                _norm(w_out),
                nn.SiLU(),
            ]
            in_ch = w_out
        dec += [nn.Conv2d(in_ch, 1, 3, padding=1)]
        self.decoder = nn.Sequential(*dec)

        # frozen data statistics; identity until calibrated
        self.register_buffer("mel_mean", torch.zeros(()))
        self.register_buffer("mel_std", torch.ones(()))
        self.register_buffer("latent_scale", torch.ones(()))
        self.register_buffer("trained", torch.zeros((), dtype=torch.bool))

    def set_mel_normalization(self, mean: float, std: float) -> None:
        if std <= 0:
            raise ValueError("mel std must be positive")
        self.mel_mean.fill_(mean)
        self.mel_std.fill_(std)

    def set_latent_scale(self, scale: float) -> None:
        if scale <= 0:
            raise ValueError("latent scale must be positive")
        self.latent_scale.fill_(scale)

    def mark_trained(self) -> None:
        self.trained.fill_(True)

    def normalize(self, mel_values: torch.Tensor) -> torch.Tensor:
        return (mel_values - self.mel_mean) / self.mel_std

    def denormalize(self, normalized: torch.Tensor) -> torch.Tensor:
        return normalized * self.mel_std + self.mel_mean

    def posterior(self, x: torch.Tensor) -> PosteriorParams:
        """x: normalized [B, 1, T, F] with T, F divisible by r."""
        r = self.config.compression_ratio
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"expected [B, 1, T, F], got {tuple(x.shape)}")
        if x.shape[2] % r or x.shape[3] % r:
            raise ShapeError(
                f"mel geometry {tuple(x.shape[2:])} not divisible by compression ratio {r}"
            )
        h = self.post_head(self.encoder(x))
        mean, log_var = torch.chunk(h, 2, dim=1)
        return PosteriorParams(mean=mean, log_variance=torch.clamp(log_var, -30.0, 20.0))

    def decode_latent(self, z: torch.Tensor) -> torch.Tensor:
        """z: [B, C, T/r, F/r] (scaled space) -> normalized [B, 1, T, F]."""
        if z.ndim != 4 or z.shape[1] != self.config.latent_channels:
            raise ShapeError(
                f"expected [B, {self.config.latent_channels}, T', F'], got {tuple(z.shape)}"
            )
        return self.decoder(z * self.latent_scale)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(
            {
                "r": self.config.compression_ratio,
                "c": self.config.latent_channels,
                "widths": list(self.config.widths),
            },
            sort_keys=True,
        ).encode())
        for name, param in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(param.numpy().tobytes())
        return h.hexdigest()[:16]


def vae_encode(
    codec: MelCodec,
    mel: MelStack,
    mode: str = "mean",
    generator: torch.Generator | None = None,
) -> LatentStack:
    """Encode each stem independently; `mean` mode is deterministic."""
    if mode not in ("mean", "sample"):
        raise ValueError(f"mode must be 'mean' or 'sample', got '{mode}'")
    if not bool(codec.trained):
        raise StateError("codec has not been trained or loaded from a checkpoint")
    x = torch.from_numpy(mel.values).unsqueeze(1)  # [S, 1, T, F]
    with torch.no_grad():
        post = codec.posterior(codec.normalize(x))
        z = post.mean if mode == "mean" else post.sample(generator)
        z = z / codec.latent_scale
    return LatentStack(values=z, codec_id=codec.fingerprint())


def vae_decode(codec: MelCodec, latent: LatentStack) -> MelStack:
    """Decode each stem back to a log-Mel stack (clamped at the log floor)."""
    if latent.codec_id and latent.codec_id != codec.fingerprint():
        raise StateError(
            f"latent was produced by codec {latent.codec_id}, loaded codec is {codec.fingerprint()}"
        )
    with torch.no_grad():
        mel = codec.denormalize(codec.decode_latent(latent.values)).squeeze(1)
        mel = torch.clamp(mel, min=codec.mel_config.log_floor_value)
    return MelStack(values=mel.numpy(), config=codec.mel_config)


def vae_loss_terms(
    codec: MelCodec,
    batch: torch.Tensor,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """(reconstruction MSE, KL) on a raw log-Mel batch [B, 1, T, F]."""
    x = codec.normalize(batch)
    post = codec.posterior(x)
    recon = codec.decoder(post.sample(generator))
    recon_loss = torch.mean((recon - x) ** 2)
    return recon_loss, post.kl()


def vae_train_step(
    codec: MelCodec,
    optimizer: torch.optim.Optimizer,
    batch: torch.Tensor,
    step: int = 0,
    generator: torch.Generator | None = None,
) -> dict:
    """One gradient step on recon + kl_weight * KL; returns both terms."""
    optimizer.zero_grad()
    recon_loss, kl_loss = vae_loss_terms(codec, batch, generator)
    loss = recon_loss + codec.config.kl_weight * kl_loss
    if not torch.isfinite(loss):
        raise TrainingDivergedError(step, "VAE loss")
    assert kl_loss.item() >= 0.0, "KL against the standard normal must be nonnegative"
    loss.backward()
    optimizer.step()
    return {
        "reconstruction_loss": float(recon_loss.detach()),
        "kl_loss": float(kl_loss.detach()),
    }
