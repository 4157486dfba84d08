"""Evaluation protocols: Mel-domain MSE and Fréchet distance over embeddings.

The built-in embedder is deliberately simple (log-Mel band energies
averaged over one-second windows), so Fréchet scores computed here are
internally comparable across runs of this codebase but NOT comparable to
published numbers from reference audio embedders.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .audio import mel_forward
from .audio.stacks import MelConfig, WaveformStack
from .diffusion import TrackMask
from .errors import NumericError, ShapeError


def mel_mse(estimate: WaveformStack, reference: WaveformStack, cfg: MelConfig) -> np.ndarray:
    """Per-stem mean squared log-Mel distance between two stem stacks."""
    if estimate.samples.shape != reference.samples.shape:
        raise ShapeError(
            f"estimate {estimate.samples.shape} vs reference {reference.samples.shape}"
        )
    if estimate.stem_names != reference.stem_names:
        raise ShapeError(
            f"stem order differs: {estimate.stem_names} vs {reference.stem_names}"
        )
    est = mel_forward(estimate, cfg).values
    ref = mel_forward(reference, cfg).values
    return ((est - ref) ** 2).mean(axis=(1, 2)).astype(np.float64)


class Embedder(Protocol):
    """Deterministic map from a fixed-length waveform to [n_frames, dim]."""

    identifier: str
    dim: int

    def embed(self, waveform: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class ToyEmbedder:
    """Log-Mel band energies averaged over fixed windows (dim = mel bins)."""

    mel_config: MelConfig = field(default_factory=MelConfig)
    window_seconds: float = 1.0

    @property
    def identifier(self) -> str:
        return f"toy-logmel-{self.mel_config.mel_bins}x{self.window_seconds:g}s"

    @property
    def dim(self) -> int:
        return self.mel_config.mel_bins

    @property
    def frames_per_window(self) -> int:
        return max(1, round(self.window_seconds * self.mel_config.sample_rate / self.mel_config.hop))

    def embed(self, waveform: np.ndarray) -> np.ndarray:
        stack = WaveformStack(
            samples=np.asarray(waveform, dtype=np.float32)[None, :],
            sample_rate=self.mel_config.sample_rate,
            stem_names=("audio",),
        )
        mel = mel_forward(stack, self.mel_config).values[0]  # [T, F]
        fpw = self.frames_per_window
        n_windows = mel.shape[0] // fpw
        if n_windows < 1:
            raise ShapeError("clip shorter than one embedding window")
        trimmed = mel[: n_windows * fpw].reshape(n_windows, fpw, -1)
        return trimmed.mean(axis=1).astype(np.float64)


@dataclass
class GaussianStats:
    """Sample mean and covariance of pooled embedding frames."""

    mean: np.ndarray
    covariance: np.ndarray
    count: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.shape != (self.mean.size, self.mean.size):
            raise ShapeError(f"covariance {cov.shape} does not match mean dim {self.mean.size}")
        cov = 0.5 * (cov + cov.T)
        vals, vecs = np.linalg.eigh(cov)
        self.covariance = (vecs * np.clip(vals, 0.0, None)) @ vecs.T

    @property
    def dim(self) -> int:
        return self.mean.size


def embed_stats(audio_set, embedder: Embedder) -> GaussianStats:
    """Pool frame embeddings from all clips into one Gaussian fit."""
    frames = [embedder.embed(np.asarray(clip)) for clip in audio_set]
    if frames:
        lengths = {f.shape[0] for f in frames}
        widths = {f.shape[1] for f in frames}
        if len(widths) != 1:
            raise ShapeError(f"inconsistent embedding dims: {sorted(widths)}")
        if len(lengths) != 1:
            raise ShapeError("clips must share one length (frame counts differ)")
    pooled = np.concatenate(frames, axis=0) if frames else np.empty((0, embedder.dim))
    if pooled.shape[0] < 2:
        raise ValueError("need at least 2 embedding frames to fit covariance")
    mean = pooled.mean(axis=0)
    cov = np.cov(pooled, rowvar=False)  # unbiased
    return GaussianStats(
        mean=mean,
        covariance=np.atleast_2d(cov),
        count=pooled.shape[0],
        metadata={
            "embedder_id": embedder.identifier,
            "n_clips": len(frames),
            "n_frames": int(pooled.shape[0]),
        },
    )


def _psd_sqrt(cov: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < -tol:
        raise NumericError(f"covariance not PSD: eigenvalue {vals.min():.3e}")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), clamped at 0."""
    if a.dim != b.dim:
        raise ShapeError(f"stats dims differ: {a.dim} vs {b.dim}")
    root_a = _psd_sqrt(a.covariance)
    inner = root_a @ b.covariance @ root_a  # similar to Sa Sb; symmetric PSD
    vals = np.linalg.eigvalsh(inner)
    if vals.min() < -1e-8:
        raise NumericError(f"product matrix not PSD: eigenvalue {vals.min():.3e}")
    tr_sqrt = np.sum(np.sqrt(np.clip(vals, 0.0, None)))
    delta = a.mean - b.mean
    d = float(delta @ delta + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * tr_sqrt)
    return max(d, 0.0)


def proper_given_subsets(stem_names) -> list[TrackMask]:
    """All nonempty proper given-subsets, ordered by size then stem order."""
    n = len(stem_names)
    masks = []
    for size in range(1, n):
        for combo in itertools.combinations(range(n), size):
            given = np.zeros(n, dtype=bool)
            given[list(combo)] = True
            masks.append(TrackMask(given))
    return masks


def subset_label(mask: TrackMask, stem_names) -> str:
    return "".join(name[0].upper() for name, g in zip(stem_names, mask.given) if g)


def arrangement_fad(
    generate_fn,
    eval_set: list[WaveformStack],
    subset: TrackMask,
    embedder: Embedder,
) -> float:
    """SingSong-style protocol: generated missing stems are mixed with the
    ORIGINAL given stems, and the mixtures are scored against real mixtures.

    ``generate_fn(example, mask, index) -> WaveformStack`` supplies the
    model (or an oracle stub) producing the full stack.
    """
    from .audio.stacks import mix_stack

    real_mixes = [mix_stack(stack) for stack in eval_set]
    gen_mixes = []
    given = subset.given
    for i, stack in enumerate(eval_set):
        produced = generate_fn(stack, subset, i)
        if produced.samples.shape != stack.samples.shape:
            raise ShapeError("generated stack geometry differs from the reference")
        blended = np.where(given[:, None], stack.samples, produced.samples)
        gen_mixes.append(mix_stack(WaveformStack(samples=blended, sample_rate=stack.sample_rate,
                                                 stem_names=stack.stem_names)))
    return frechet_distance(
        embed_stats(gen_mixes, embedder), embed_stats(real_mixes, embedder)
    )


def noise_mixtures_like(references: list[np.ndarray], seed: int = 0) -> list[np.ndarray]:
    """White-noise baseline clips, RMS-matched to each reference mixture."""
    rng = np.random.default_rng(seed)
    out = []
    for ref in references:
        rms = float(np.sqrt(np.mean(np.square(ref)))) or 1.0
        noise = rng.standard_normal(len(ref))
        noise *= rms / float(np.sqrt(np.mean(np.square(noise))))
        out.append(np.clip(noise, -1.0, 1.0).astype(np.float32))
    return out
