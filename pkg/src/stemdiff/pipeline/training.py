"""Training loops for the codec and the latent diffusion model.

Both loops draw every random decision (batch order, diffusion steps,
noise, condition dropout) from generators keyed on (seed, epoch/step), so
a run is reproducible end to end and resuming from a checkpoint continues
the interrupted run's trajectory.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch

from ..codec import MelCodec, vae_train_step
from ..diffusion import build_schedule, ddpm_loss
from ..errors import TrainingDivergedError
from ..unet import UNet3D
from .checkpoint import CheckpointBundle, load_checkpoint, make_bundle, save_checkpoint
from .config import ExperimentConfig
from .data import collect_vae_bank, encode_corpus

log = logging.getLogger(__name__)


def _step_seed(seed: int, step: int) -> int:
    return (seed * 1_000_003 + 7919 * step + 1) % (2**63)


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def build_experiment_schedule(cfg: ExperimentConfig):
    return build_schedule(
        kind=cfg.schedule.kind,
        n_steps=cfg.schedule.n_steps,
        beta_start=cfg.schedule.beta_start,
        beta_end=cfg.schedule.beta_end,
        sigma_max=cfg.schedule.sigma_max,
    )


def train_vae(
    cfg: ExperimentConfig,
    out_path: str | Path,
    progress=None,
) -> tuple[Path, list[dict]]:
    """Train the mel codec; returns (checkpoint path, per-epoch loss trace)."""
    params = cfg.vae_training
    bank = collect_vae_bank(cfg, include_mixture=True, progress=progress)
    codec = MelCodec(cfg.codec, cfg.mel)
    codec.set_mel_normalization(float(bank.mean()), float(bank.std()) or 1.0)

    optimizer = torch.optim.Adam(codec.parameters(), lr=params.learning_rate)
    n = bank.shape[0]
    steps_per_epoch = max(1, n // params.batch_size)
    trace = []
    step = 0
    epochs = range(params.epochs) if progress is None else progress(range(params.epochs))
    for epoch in epochs:
        order = _epoch_order(params.seed, epoch, n)
        recon_sum = kl_sum = 0.0
        for k in range(steps_per_epoch):
            idx = order[k * params.batch_size : (k + 1) * params.batch_size]
            gen = torch.Generator().manual_seed(_step_seed(params.seed, step))
            losses = vae_train_step(codec, optimizer, bank[idx], step=step, generator=gen)
            recon_sum += losses["reconstruction_loss"]
            kl_sum += losses["kl_loss"]
            step += 1
        trace.append(
            {
                "epoch": epoch,
                "reconstruction_loss": recon_sum / steps_per_epoch,
                "kl_loss": kl_sum / steps_per_epoch,
            }
        )

    _calibrate_latent_scale(codec, bank, seed=params.seed)
    codec.mark_trained()
    bundle = make_bundle(cfg, codec, step=step)
    path = save_checkpoint(bundle, out_path)
    return path, trace


def _calibrate_latent_scale(codec: MelCodec, bank: torch.Tensor, seed: int, max_specs: int = 512):
    idx = np.random.default_rng([seed, 999_983]).permutation(bank.shape[0])[:max_specs]
    with torch.no_grad():
        post = codec.posterior(codec.normalize(bank[idx]))
        scale = float(post.mean.std())
    codec.set_latent_scale(scale if scale > 0 else 1.0)


def train_ldm(
    cfg: ExperimentConfig,
    codec_checkpoint: str | Path,
    out_path: str | Path,
    resume: str | Path | None = None,
    progress=None,
    checkpoint_every_epochs: int = 0,
) -> tuple[Path, list[dict]]:
    """Train the denoiser on mean-mode latents; returns (path, loss trace)."""
    params = cfg.ldm_training
    codec_bundle = load_checkpoint(codec_checkpoint, expected_config=cfg)
    codec = codec_bundle.build_codec()
    codec.eval()

    z0_all, cond_all = encode_corpus(cfg, codec, progress=progress)
    n = z0_all.shape[0]
    schedule = build_experiment_schedule(cfg)
    denoiser = UNet3D(cfg.unet, total_steps=cfg.schedule.n_steps)
    optimizer = torch.optim.Adam(denoiser.parameters(), lr=params.learning_rate)

    start_step = 0
    if resume is not None:
        prev = load_checkpoint(resume, expected_config=cfg)
        if not prev.has_denoiser:
            raise TrainingDivergedError(0, "resume checkpoint holds no denoiser")
        denoiser.load_state_dict(prev.denoiser_state)
        if prev.optimizer_state is not None:
            optimizer.load_state_dict(prev.optimizer_state)
        start_step = prev.step
        log.info("resuming LDM training from step %d", start_step)

    steps_per_epoch = max(1, n // params.batch_size)
    total_steps = params.epochs * steps_per_epoch
    trace = []
    step = start_step
    start_epoch = start_step // steps_per_epoch
    epochs = range(start_epoch, params.epochs)
    if progress is not None:
        epochs = progress(epochs)
    for epoch in epochs:
        order = _epoch_order(params.seed, epoch, n)
        loss_sum = 0.0
        count = 0
        for k in range(step % steps_per_epoch, steps_per_epoch):
            idx = order[k * params.batch_size : (k + 1) * params.batch_size]
            gen = torch.Generator().manual_seed(_step_seed(params.seed, step))
            optimizer.zero_grad()
            loss = ddpm_loss(
                denoiser, z0_all[idx], cond_all[idx], params.drop_prob, schedule, gen
            )
            if not torch.isfinite(loss):
                raise TrainingDivergedError(step, "LDM loss")
            loss.backward()
            optimizer.step()
            loss_sum += float(loss.detach())
            count += 1
            step += 1
        trace.append({"epoch": epoch, "loss": loss_sum / max(count, 1)})
        if checkpoint_every_epochs and (epoch + 1) % checkpoint_every_epochs == 0 and step < total_steps:
            save_checkpoint(make_bundle(cfg, codec, denoiser, optimizer, step=step), out_path)

    bundle = make_bundle(cfg, codec, denoiser, optimizer, step=step)
    path = save_checkpoint(bundle, out_path)
    return path, trace
