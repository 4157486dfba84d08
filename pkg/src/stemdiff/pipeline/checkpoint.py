"""Checkpoint persistence: named parameter blobs + config snapshot.

One format serves both stages: a codec-only checkpoint (after VAE
training) and a full bundle (codec + denoiser + optimizer state). The
config fingerprint is stored alongside the snapshot and re-verified on
load; geometry mismatches against a requested config are rejected.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch

from ..codec import MelCodec
from ..errors import CompatibilityError, FormatError
from ..unet import UNet3D
from .config import ExperimentConfig, config_fingerprint, config_from_dict, config_to_dict

FORMAT_VERSION = 1


@dataclass
class CheckpointBundle:
    config: ExperimentConfig
    fingerprint: str
    step: int
    codec_state: dict
    denoiser_state: dict | None = None
    optimizer_state: dict | None = None
    format_version: int = FORMAT_VERSION

    @property
    def has_denoiser(self) -> bool:
        return self.denoiser_state is not None

    def build_codec(self) -> MelCodec:
        codec = MelCodec(self.config.codec, self.config.mel)
        codec.load_state_dict(self.codec_state)
        return codec

    def build_denoiser(self) -> UNet3D:
        if not self.has_denoiser:
            raise CompatibilityError("checkpoint holds no denoiser parameters")
        net = UNet3D(self.config.unet, total_steps=self.config.schedule.n_steps)
        net.load_state_dict(self.denoiser_state)
        return net


def make_bundle(
    config: ExperimentConfig,
    codec: MelCodec,
    denoiser: UNet3D | None = None,
    optimizer: torch.optim.Optimizer | None = None,
    step: int = 0,
) -> CheckpointBundle:
    return CheckpointBundle(
        config=config,
        fingerprint=config_fingerprint(config),
        step=step,
        codec_state={k: v.clone() for k, v in codec.state_dict().items()},
        denoiser_state=(
            {k: v.clone() for k, v in denoiser.state_dict().items()} if denoiser else None
        ),
        optimizer_state=optimizer.state_dict() if optimizer else None,
    )


def save_checkpoint(bundle: CheckpointBundle, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": bundle.format_version,
        "config": config_to_dict(bundle.config),
        "fingerprint": bundle.fingerprint,
        "step": bundle.step,
        "codec_state": bundle.codec_state,
        "denoiser_state": bundle.denoiser_state,
        "optimizer_state": bundle.optimizer_state,
    }
    torch.save(payload, path)
    return path


def _geometry_pairs(a: ExperimentConfig, b: ExperimentConfig):
    return [
        ("latent_channels", a.codec.latent_channels, b.codec.latent_channels),
        ("compression_ratio", a.codec.compression_ratio, b.codec.compression_ratio),
        ("mel_bins", a.mel.mel_bins, b.mel.mel_bins),
        ("clip_samples", a.clip_samples, b.clip_samples),
        ("stems", len(a.stem_names), len(b.stem_names)),
        ("unet_widths", tuple(a.unet.widths), tuple(b.unet.widths)),
    ]


def load_checkpoint(
    path: str | Path,
    expected_config: ExperimentConfig | None = None,
) -> CheckpointBundle:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu")
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise FormatError(f"{path} is not a stemdiff checkpoint")
    version = payload["format_version"]
    if version != FORMAT_VERSION:
        raise CompatibilityError(
            f"unsupported checkpoint format version {version}; this build reads {FORMAT_VERSION}"
        )
    try:
        config = config_from_dict(payload["config"])
        bundle = CheckpointBundle(
            config=config,
            fingerprint=payload["fingerprint"],
            step=int(payload["step"]),
            codec_state=payload["codec_state"],
            denoiser_state=payload.get("denoiser_state"),
            optimizer_state=payload.get("optimizer_state"),
            format_version=version,
        )
    except KeyError as exc:
        raise FormatError(f"checkpoint {path} is missing field {exc}") from exc
    actual = config_fingerprint(bundle.config)
    if actual != bundle.fingerprint:
        raise FormatError(
            f"checkpoint fingerprint {bundle.fingerprint} does not match its config ({actual})"
        )
    if expected_config is not None:
        for name, want, got in _geometry_pairs(expected_config, bundle.config):
            if want != got:
                raise CompatibilityError(
                    f"checkpoint {name} is {got}, requested config has {want}"
                )
    return bundle
