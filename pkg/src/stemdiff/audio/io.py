"""WAV input/output and stem-directory loading.

Canonical on-disk form is mono 16-bit PCM at 16 kHz, one file per stem:
``<song>/bass.wav|drums.wav|guitar.wav|piano.wav``. Absent stem files load
as silence (a song may simply lack an instrument).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from ..errors import FormatError
from .stacks import DEFAULT_CLIP_SAMPLES, DEFAULT_SAMPLE_RATE, WaveformStack


@dataclass(frozen=True)
class ClipSelector:
    """Picks the clip start offset: fixed for eval, jittered for training."""

    offset: int = 0
    jitter: int = 0  # max extra random shift in samples; 0 = fixed
    seed: int | None = None

    def pick(self, available: int, clip_samples: int) -> int:
        start = self.offset
        if self.jitter > 0:
            rng = np.random.default_rng(self.seed)
            headroom = max(0, min(self.jitter, available - clip_samples - self.offset))
            if headroom > 0:
                start += int(rng.integers(0, headroom + 1))
        return max(0, start)


def read_wav(path: Path | str) -> tuple[np.ndarray, int]:
    """Read a mono WAV as float32 in [-1, 1]. Raises FormatError on stereo."""
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise FormatError(f"cannot parse WAV file {path}: {exc}") from exc
    if data.ndim != 1:
        raise FormatError(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype == np.int16:
        audio = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        audio = data.astype(np.float32) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        audio = data.astype(np.float32)
    else:
        raise FormatError(f"{path}: unsupported WAV sample format {data.dtype}")
    return audio, int(rate)


def write_wav(path: Path | str, samples: np.ndarray, sample_rate: int) -> None:
    """Write float samples as mono 16-bit PCM, hard-clipped to [-1, 1]."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype(np.int16)
    wavfile.write(str(path), sample_rate, pcm)


def resample(audio: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    if src_rate == dst_rate:
        return audio
    g = math.gcd(src_rate, dst_rate)
    try:
        out = resample_poly(audio.astype(np.float64), dst_rate // g, src_rate // g)
    except Exception as exc:
        raise FormatError(f"resampling {src_rate} Hz -> {dst_rate} Hz failed: {exc}") from exc
    return out.astype(np.float32)


def _fit_length(audio: np.ndarray, clip_samples: int, start: int) -> np.ndarray:
    start = min(start, max(0, len(audio) - 1))
    clip = audio[start : start + clip_samples]
    if len(clip) < clip_samples:
        clip = np.pad(clip, (0, clip_samples - len(clip)))
    return clip


def load_stems(
    dir_path: Path | str,
    expected_stems: tuple[str, ...] = ("bass", "drums", "guitar", "piano"),
    clip: ClipSelector = ClipSelector(),
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    clip_samples: int = DEFAULT_CLIP_SAMPLES,
) -> WaveformStack:
    """Load one WAV per expected stem; missing files become silent stems."""
    if len(expected_stems) == 0:
        raise ValueError("expected_stems must name at least one stem")
    dir_path = Path(dir_path)
    stems = []
    for name in expected_stems:
        path = dir_path / f"{name}.wav"
        if not path.exists():
            stems.append(np.zeros(clip_samples, dtype=np.float32))
            continue
        try:
            audio, rate = read_wav(path)
        except FormatError:
            raise
        except OSError as exc:
            raise OSError(f"cannot read stem '{name}' from {path}: {exc}") from exc
        audio = resample(audio, rate, sample_rate)
        # offsets are expressed at the target rate; apply after resampling
        start = clip.pick(len(audio), clip_samples)
        stems.append(_fit_length(audio, clip_samples, start))
    return WaveformStack(
        samples=np.stack(stems),
        sample_rate=sample_rate,
        stem_names=tuple(expected_stems),
    )
