"""Example iteration and feature preparation for training and evaluation."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from ..audio import ClipSelector, load_stems, mel_forward, mix_stack, synth_toy_example
from ..audio.stacks import WaveformStack
from ..codec import MelCodec, vae_encode
from ..errors import ConfigError
from .config import ExperimentConfig


def corpus_size(cfg: ExperimentConfig) -> int:
    if cfg.corpus is not None:
        return cfg.corpus.n_examples
    if cfg.stems_dir is not None:
        return len(_song_dirs(cfg.stems_dir))
    raise ConfigError("config names neither a synthetic corpus nor a stems directory")


def _song_dirs(stems_dir: str) -> list[Path]:
    root = Path(stems_dir)
    if not root.is_dir():
        raise ConfigError(f"stems directory {root} does not exist")
    return sorted(p for p in root.iterdir() if p.is_dir())


def example_stack(cfg: ExperimentConfig, index: int, jitter_seed: int | None = None) -> WaveformStack:
    """Example `index` as a waveform stack, synthetic or loaded from disk."""
    if cfg.corpus is not None:
        return synth_toy_example(cfg.corpus, index)
    dirs = _song_dirs(cfg.stems_dir)
    clip = ClipSelector() if jitter_seed is None else ClipSelector(
        jitter=cfg.clip_samples // 4, seed=jitter_seed
    )
    return load_stems(
        dirs[index],
        expected_stems=cfg.stem_names,
        clip=clip,
        sample_rate=cfg.mel.sample_rate,
        clip_samples=cfg.clip_samples,
    )


def stem_mel_values(stack: WaveformStack, cfg: ExperimentConfig) -> np.ndarray:
    return mel_forward(stack, cfg.mel).values


def mixture_mel_values(stack: WaveformStack, cfg: ExperimentConfig) -> np.ndarray:
    mixture = WaveformStack(
        samples=mix_stack(stack)[None, :],
        sample_rate=stack.sample_rate,
        stem_names=("mixture",),
    )
    return mel_forward(mixture, cfg.mel).values


def collect_vae_bank(cfg: ExperimentConfig, include_mixture: bool = True, progress=None) -> torch.Tensor:
    """All training spectrograms as one [n, 1, T, F] tensor (stems + mixtures)."""
    specs = []
    n = corpus_size(cfg)
    iterator = range(n) if progress is None else progress(range(n))
    for i in iterator:
        stack = example_stack(cfg, i)
        specs.append(stem_mel_values(stack, cfg))
        if include_mixture:
            specs.append(mixture_mel_values(stack, cfg))
    bank = np.concatenate(specs, axis=0)[:, None]  # [n_specs, 1, T, F]
    return torch.from_numpy(bank)


def encode_corpus(
    cfg: ExperimentConfig, codec: MelCodec, progress=None, chunk: int = 16
) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean-mode latents for every example: (z0 [N,S,C,T',F'], cond [N,C,T',F'])."""
    n = corpus_size(cfg)
    n_stems = len(cfg.stem_names)
    z_all, c_all = [], []
    starts = range(0, n, chunk)
    iterator = starts if progress is None else progress(starts)
    for start in iterator:
        idx = range(start, min(start + chunk, n))
        mels = []
        for i in idx:
            stack = example_stack(cfg, i)
            mels.append(stem_mel_values(stack, cfg))
            mels.append(mixture_mel_values(stack, cfg))
        batch = torch.from_numpy(np.concatenate(mels, axis=0)).unsqueeze(1)
        with torch.no_grad():
            z = codec.posterior(codec.normalize(batch)).mean / codec.latent_scale
        per_ex = z.split(n_stems + 1)
        z_all += [p[:n_stems] for p in per_ex]
        c_all += [p[n_stems] for p in per_ex]
    return torch.stack(z_all), torch.stack(c_all)
