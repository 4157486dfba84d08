"""Experiment configuration: profiles, YAML loading, geometry validation.

Two built-in profiles: ``paper`` pins the full-scale constants
(10.24 s clips, 64 mel bins, latent 4x8x256x16, U-Net widths
128/256/384/640, lr 3e-5, N=1000 train / 200 inference) and ``toy`` pins
desk-scale constants that train end-to-end on one machine
(2.56 s clips, 32 mel bins, latent 4x4x64x8, widths 32/64).

A config file inherits from its ``profile`` and overrides fields:

    profile: toy
    ldm_training:
      epochs: 12
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from ..audio.corpus import ToyCorpusSpec
from ..audio.stacks import DEFAULT_STEM_NAMES, MelConfig
from ..codec import LatentCodecConfig
from ..diffusion import VP_LINEAR
from ..errors import ConfigError
from ..unet import UNetConfig


@dataclass(frozen=True)
class TrainingParams:
    learning_rate: float
    epochs: int
    batch_size: int
    drop_prob: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ConfigError(f"drop_prob must be in [0, 1], got {self.drop_prob}")
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("training params must be positive")


@dataclass(frozen=True)
class ScheduleParams:
    kind: str = VP_LINEAR
    n_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    sigma_max: float = 1.0


@dataclass(frozen=True)
class InferenceParams:
    steps: int = 200
    w_separate: float = 2.0
    eta_separate: float = 0.0
    eta_inpaint: float = 1.0
    resample: int = 16
    griffin_lim_iters: int = 32


@dataclass(frozen=True)
class ExperimentConfig:
    profile: str
    clip_samples: int
    stem_names: tuple[str, ...]
    mel: MelConfig
    codec: LatentCodecConfig
    schedule: ScheduleParams
    unet: UNetConfig
    vae_training: TrainingParams
    ldm_training: TrainingParams
    inference: InferenceParams
    corpus: ToyCorpusSpec | None = None
    stems_dir: str | None = None

    @property
    def mel_frames(self) -> int:
        return self.clip_samples // self.mel.hop

    @property
    def latent_shape(self) -> tuple[int, int, int, int]:
        r = self.codec.compression_ratio
        return (
            len(self.stem_names),
            self.codec.latent_channels,
            self.mel_frames // r,
            self.mel.mel_bins // r,
        )


def validate_config(cfg: ExperimentConfig) -> None:
    """Check that mel -> codec -> U-Net geometry chains consistently."""
    if cfg.clip_samples % cfg.mel.hop:
        raise ConfigError(f"clip_samples {cfg.clip_samples} not divisible by hop {cfg.mel.hop}")
    r = cfg.codec.compression_ratio
    t, f = cfg.mel_frames, cfg.mel.mel_bins
    if t % r or f % r:
        raise ConfigError(f"mel geometry {t}x{f} not divisible by compression ratio {r}")
    if cfg.unet.latent_channels != cfg.codec.latent_channels:
        raise ConfigError(
            f"U-Net latent channels {cfg.unet.latent_channels} != codec {cfg.codec.latent_channels}"
        )
    if cfg.unet.stems != len(cfg.stem_names):
        raise ConfigError(f"U-Net stems {cfg.unet.stems} != {len(cfg.stem_names)} stem names")
    d = cfg.unet.spatial_divisor
    if (t // r) % d or (f // r) % d:
        raise ConfigError(
            f"latent spatial {(t // r, f // r)} not divisible by 2^(levels-1) = {d}"
        )
    if cfg.corpus is not None:
        if cfg.corpus.duration_samples != cfg.clip_samples:
            raise ConfigError(
                f"corpus clip length {cfg.corpus.duration_samples} != {cfg.clip_samples}"
            )
        if cfg.corpus.sample_rate != cfg.mel.sample_rate:
            raise ConfigError("corpus sample rate differs from mel sample rate")
        if tuple(cfg.corpus.stem_recipes.keys()) != cfg.stem_names:
            raise ConfigError("corpus stems differ from configured stem names")


def paper_profile() -> ExperimentConfig:
    return ExperimentConfig(
        profile="paper",
        clip_samples=163840,
        stem_names=DEFAULT_STEM_NAMES,
        mel=MelConfig(window_length=1024, hop=160, mel_bins=64, sample_rate=16000),
        codec=LatentCodecConfig(compression_ratio=4, latent_channels=8, widths=(64, 128)),
        schedule=ScheduleParams(kind=VP_LINEAR, n_steps=1000),
        unet=UNetConfig(
            stems=4,
            latent_channels=8,
            widths=(128, 256, 384, 640),
            attention_levels=(3,),
            timestep_embed_dim=256,
            res_blocks=2,
        ),
        vae_training=TrainingParams(learning_rate=1e-4, epochs=50, batch_size=16),
        ldm_training=TrainingParams(learning_rate=3e-5, epochs=100, batch_size=8, drop_prob=0.1),
        inference=InferenceParams(steps=200, w_separate=2.0),
        corpus=None,
    )


def toy_profile() -> ExperimentConfig:
    return ExperimentConfig(
        profile="toy",
        clip_samples=40960,
        stem_names=DEFAULT_STEM_NAMES,
        mel=MelConfig(window_length=1024, hop=160, mel_bins=32, sample_rate=16000),
        codec=LatentCodecConfig(compression_ratio=4, latent_channels=4, widths=(16, 32)),
        schedule=ScheduleParams(kind=VP_LINEAR, n_steps=1000),
        unet=UNetConfig(
            stems=4,
            latent_channels=4,
            widths=(32, 64),
            attention_levels=(),
            timestep_embed_dim=128,
            res_blocks=1,
        ),
        vae_training=TrainingParams(learning_rate=1e-3, epochs=6, batch_size=32),
        ldm_training=TrainingParams(learning_rate=2e-4, epochs=40, batch_size=16, drop_prob=0.1),
        inference=InferenceParams(steps=100, w_separate=2.0),
        corpus=ToyCorpusSpec(n_examples=2000, duration_samples=40960),
    )


PROFILES = {"paper": paper_profile, "toy": toy_profile}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["corpus"] = cfg.corpus.to_dict() if cfg.corpus is not None else None
    return d


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def _tupled(d: dict, keys: tuple[str, ...]) -> dict:
    return {k: tuple(v) if k in keys and v is not None else v for k, v in d.items()}


def config_from_dict(d: dict) -> ExperimentConfig:
    try:
        corpus = d.get("corpus")
        return ExperimentConfig(
            profile=d["profile"],
            clip_samples=int(d["clip_samples"]),
            stem_names=tuple(d["stem_names"]),
            mel=MelConfig(**d["mel"]),
            codec=LatentCodecConfig(**_tupled(d["codec"], ("widths",))),
            schedule=ScheduleParams(**d["schedule"]),
            unet=UNetConfig(**_tupled(d["unet"], ("widths", "attention_levels"))),
            vae_training=TrainingParams(**d["vae_training"]),
            ldm_training=TrainingParams(**d["ldm_training"]),
            inference=InferenceParams(**d["inference"]),
            corpus=ToyCorpusSpec.from_dict(corpus) if corpus else None,
            stems_dir=d.get("stems_dir"),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad config structure: {exc}") from exc


def config_fingerprint(cfg: ExperimentConfig) -> str:
    canon = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def load_config(
    path: str | Path | None = None,
    profile: str | None = None,
    overrides: dict | None = None,
) -> ExperimentConfig:
    """Resolve profile -> config file -> explicit overrides, then validate."""
    file_dict: dict = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ConfigError(f"config file {path} must contain a mapping")
            file_dict = loaded

    name = profile or file_dict.get("profile", "toy")
    if name not in PROFILES:
        raise ConfigError(f"unknown profile '{name}' (choose from {sorted(PROFILES)})")
    base = config_to_dict(PROFILES[name]())

    merged = _merge(base, {k: v for k, v in file_dict.items() if k != "profile"})
    if overrides:
        merged = _merge(merged, overrides)
    merged["profile"] = name
    cfg = config_from_dict(merged)
    validate_config(cfg)
    return cfg
