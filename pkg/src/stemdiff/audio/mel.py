"""Log-Mel forward transform and Griffin-Lim inversion.

Framing convention: the waveform is center-padded (reflect) and the STFT
frame at position k*hop has its window centered there, so a clip of
T_mix samples yields exactly T_mix/hop frames.
"""
from __future__ import annotations

import numpy as np
import torch

from ..errors import ShapeError
from .stacks import MelConfig, MelStack, WaveformStack


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_centers(cfg: MelConfig) -> np.ndarray:
    """Center frequencies (Hz) of the triangular filters, mel-spaced."""
    pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.effective_fmax), cfg.mel_bins + 2)
    return mel_to_hz(pts)[1:-1]


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular mel filterbank [mel_bins, window/2+1], peak-normalized to 1."""
    n_freqs = cfg.window_length // 2 + 1
    freqs = np.linspace(0.0, cfg.sample_rate / 2.0, n_freqs)
    pts = mel_to_hz(
        np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.effective_fmax), cfg.mel_bins + 2)
    )
    fb = np.zeros((cfg.mel_bins, n_freqs))
    for m in range(cfg.mel_bins):
        lo, ctr, hi = pts[m], pts[m + 1], pts[m + 2]
        up = (freqs - lo) / max(ctr - lo, 1e-12)
        down = (hi - freqs) / max(hi - ctr, 1e-12)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb.astype(np.float32)


def _stft_mag(samples: torch.Tensor, cfg: MelConfig) -> torch.Tensor:
    window = torch.hann_window(cfg.window_length, dtype=samples.dtype)
    spec = torch.stft(
        samples,
        n_fft=cfg.window_length,
        hop_length=cfg.hop,
        window=window,
        center=True,
        pad_mode="reflect",
        return_complex=True,
    )
    return spec.abs()  # [S, n_freqs, T+1]


def mel_forward(stack: WaveformStack, cfg: MelConfig) -> MelStack:
    """Magnitude STFT -> mel projection -> log with floor, per stem."""
    if stack.n_samples < cfg.window_length:
        raise ShapeError(
            f"clip of {stack.n_samples} samples is shorter than one window ({cfg.window_length})"
        )
    n_frames = cfg.frame_count(stack.n_samples)
    samples = torch.from_numpy(stack.samples)
    mag = _stft_mag(samples, cfg)
    fb = torch.from_numpy(mel_filterbank(cfg))
    mel = torch.matmul(fb, mag)  # [S, F, T+1]
    mel = mel[:, :, :n_frames].transpose(1, 2)  # [S, T, F]
    logmel = torch.log(torch.clamp(mel, min=cfg.log_floor))
    return MelStack(values=logmel.numpy(), config=cfg)


def _lift_to_linear(mag_mel: np.ndarray, fb: np.ndarray, n_iter: int = 100) -> np.ndarray:
    """Nonnegative least-squares lift mel->linear magnitudes (multiplicative
    updates), vectorized over frames. [.., F] -> [.., n_freqs]."""
    lead = mag_mel.shape[:-1]
    target = mag_mel.reshape(-1, mag_mel.shape[-1]).T  # [F, frames]
    x = np.maximum(fb.T @ target, 1e-12)
    numer = fb.T @ target
    gram = fb.T @ fb
    for _ in range(n_iter):
        x *= numer / np.maximum(gram @ x, 1e-30)
    return x.T.reshape(*lead, -1)


def mel_invert(mel: MelStack, cfg: MelConfig, iterations: int = 32) -> WaveformStack:
    """Griffin-Lim phase reconstruction per stem, zero initial phase.

    The mel magnitudes are lifted back to the linear-frequency grid with a
    nonnegative least-squares fit against the filterbank before the phase
    loop.
    """
    if iterations < 1:
        raise ValueError("mel_invert needs at least one iteration")
    if mel.n_bins != cfg.mel_bins:
        raise ShapeError(f"mel stack has {mel.n_bins} bins, config expects {cfg.mel_bins}")
    n_samples = mel.n_frames * cfg.hop

    fb = mel_filterbank(cfg).astype(np.float64)
    mag_mel = np.exp(mel.values.astype(np.float64))  # [S, T, F]
    mag_lin = _lift_to_linear(mag_mel, fb)
    # one extra frame so the frame count matches a center-padded STFT of the clip
    mag_lin = np.concatenate([mag_lin, mag_lin[:, -1:, :]], axis=1)  # [S, T+1, n_freqs]

    target = torch.from_numpy(mag_lin.transpose(0, 2, 1)).to(torch.float32)  # [S, K, T+1]
    window = torch.hann_window(cfg.window_length)
    spec = target * torch.exp(1j * torch.zeros_like(target))
    wave = None
    for _ in range(iterations):
        wave = torch.istft(
            spec,
            n_fft=cfg.window_length,
            hop_length=cfg.hop,
            window=window,
            center=True,
            length=n_samples,
        )
        rebuilt = torch.stft(
            wave,
            n_fft=cfg.window_length,
            hop_length=cfg.hop,
            window=window,
            center=True,
            pad_mode="reflect",
            return_complex=True,
        )
        phase = torch.angle(rebuilt)
        spec = target * torch.exp(1j * phase)
    wave = torch.istft(
        spec,
        n_fft=cfg.window_length,
        hop_length=cfg.hop,
        window=window,
        center=True,
        length=n_samples,
    )
    return WaveformStack(
        samples=wave.numpy(),
        sample_rate=cfg.sample_rate,
        stem_names=tuple(f"stem{i}" for i in range(mel.n_stems)),
    )
