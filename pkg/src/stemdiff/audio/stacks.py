"""Core audio containers: stem waveform stacks and log-Mel stacks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError

DEFAULT_STEM_NAMES = ("bass", "drums", "guitar", "piano")
DEFAULT_SAMPLE_RATE = 16000
DEFAULT_CLIP_SAMPLES = 163840  # 10.24 s at 16 kHz


@dataclass
class WaveformStack:
    """S time-domain stems sharing one clip length, in [-1, 1] nominally."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    stem_names: tuple[str, ...] = DEFAULT_STEM_NAMES

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 2:
            raise ShapeError(f"stem stack must be rank-2 [S, T], got shape {self.samples.shape}")
        if self.samples.shape[0] < 1:
            raise ShapeError("stem stack needs at least one stem")
        if not np.isfinite(self.samples).all():
            raise ValueError("stem stack contains non-finite samples")
        self.stem_names = tuple(self.stem_names)
        if len(self.stem_names) != self.samples.shape[0]:
            raise ShapeError(
                f"{len(self.stem_names)} stem names for {self.samples.shape[0]} stems"
            )

    @property
    def n_stems(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def stem(self, name: str) -> np.ndarray:
        return self.samples[self.stem_names.index(name)]


def mix_stack(stack: WaveformStack) -> np.ndarray:
    """Unnormalized mixture: elementwise sum over the stem axis.

    Accumulates in float64 (exact for a handful of stems in [-1, 1]) so
    the sum is independent of stem order, then rounds once.
    """
    return stack.samples.astype(np.float64).sum(axis=0).astype(np.float32)


@dataclass(frozen=True)
class MelConfig:
    """STFT and Mel filterbank geometry for the spectrogram frontend."""

    window_length: int = 1024
    hop: int = 160
    mel_bins: int = 64
    sample_rate: int = DEFAULT_SAMPLE_RATE
    log_floor: float = 1e-5
    fmin: float = 0.0
    fmax: float | None = None  # None = Nyquist

    def __post_init__(self):
        if self.hop >= self.window_length:
            raise ConfigError(f"hop ({self.hop}) must be smaller than window ({self.window_length})")
        if self.mel_bins < 1:
            raise ConfigError("mel_bins must be >= 1")
        if self.mel_bins > self.window_length // 2 + 1:
            raise ConfigError(
                f"mel_bins ({self.mel_bins}) exceeds STFT bins ({self.window_length // 2 + 1})"
            )
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")
        if self.effective_fmax <= self.fmin:
            raise ConfigError("fmax must exceed fmin")

    @property
    def effective_fmax(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else self.fmax

    @property
    def log_floor_value(self) -> float:
        return math.log(self.log_floor)

    def frame_count(self, n_samples: int) -> int:
        if n_samples % self.hop != 0:
            raise ConfigError(f"clip length {n_samples} is not a multiple of hop {self.hop}")
        return n_samples // self.hop


@dataclass
class MelStack:
    """Per-stem log-Mel magnitudes, rank-3 [S, T frames, F bins]."""

    values: np.ndarray
    config: MelConfig = field(default_factory=MelConfig)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ShapeError(f"mel stack must be rank-3 [S, T, F], got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValueError("mel stack contains non-finite values")
        # log floor invariant, with a little float32 slack
        floor = self.config.log_floor_value
        if self.values.min() < floor - 1e-4:
            raise ValueError(
                f"mel stack dips below the log floor: min {self.values.min():.4f} < {floor:.4f}"
            )

    @property
    def n_stems(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def n_bins(self) -> int:
        return self.values.shape[2]
