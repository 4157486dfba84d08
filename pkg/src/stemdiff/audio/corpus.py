"""Synthetic four-stem corpus with shared tempo and key per example.

Every example draws one tempo (quantized to the latent time lattice so
rhythmic onsets are representable) and one key; all four stems follow
them. That cross-stem dependence is what makes separation and
arrangement tasks learnable on synthetic data.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import write_wav
from .stacks import WaveformStack

# onsets land on multiples of this many samples: 4 STFT hops = 1 latent time pixel
BEAT_LATTICE = 640

DEFAULT_RECIPES = {
    "bass": "low_sine_riff",
    "drums": "beat_noise_bursts",
    "guitar": "mid_plucks",
    "piano": "sustained_chords",
}

# scale degrees (semitones above the key root) cycled per bar
_PROGRESSION = (0, 5, 7, 0)
_TRIAD = (0, 4, 7)


@dataclass(frozen=True)
class ToyCorpusSpec:
    n_examples: int = 2000
    tempo_range: tuple[float, float] = (90.0, 150.0)
    key_set: tuple[int, ...] = (0, 2, 5, 7, 9)
    stem_recipes: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_RECIPES))
    seed: int = 0
    sample_rate: int = 16000
    duration_samples: int = 40960

    def to_dict(self) -> dict:
        return {
            "n_examples": self.n_examples,
            "tempo_range": list(self.tempo_range),
            "key_set": list(self.key_set),
            "stem_recipes": dict(self.stem_recipes),
            "seed": self.seed,
            "sample_rate": self.sample_rate,
            "duration_samples": self.duration_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyCorpusSpec":
        return cls(
            n_examples=int(d["n_examples"]),
            tempo_range=tuple(d["tempo_range"]),
            key_set=tuple(d["key_set"]),
            stem_recipes=dict(d["stem_recipes"]),
            seed=int(d["seed"]),
            sample_rate=int(d.get("sample_rate", 16000)),
            duration_samples=int(d.get("duration_samples", 40960)),
        )


def _pitch_hz(midi: float) -> float:
    return 440.0 * 2.0 ** ((midi - 69.0) / 12.0)


def _decaying_tone(freq, sr, length, decay, phase=0.0, amp=1.0):
    t = np.arange(length) / sr
    return amp * np.exp(-t / decay) * np.sin(2 * np.pi * freq * t + phase)


def _add_at(buf, start, burst):
    end = min(len(buf), start + len(burst))
    if end > start:
        buf[start:end] += burst[: end - start]


class _MusicalState:
    """Shared per-example musical context derived from (seed, index)."""

    def __init__(self, spec: ToyCorpusSpec, rng: np.random.Generator):
        lo, hi = spec.tempo_range
        bpm = rng.uniform(lo, hi)
        beat = 60.0 * spec.sample_rate / bpm
        self.beat = max(BEAT_LATTICE, int(round(beat / BEAT_LATTICE)) * BEAT_LATTICE)
        self.key = int(rng.choice(np.asarray(spec.key_set)))
        self.n_samples = spec.duration_samples
        self.sr = spec.sample_rate

    def beats(self):
        return range(0, self.n_samples, self.beat)

    def half_beats(self):
        return range(0, self.n_samples, self.beat // 2)

    def chord_root(self, sample_pos: int) -> int:
        bar = sample_pos // (4 * self.beat)
        return self.key + _PROGRESSION[bar % len(_PROGRESSION)]


def _recipe_low_sine_riff(st: _MusicalState, rng):
    out = np.zeros(st.n_samples)
    for start in st.beats():
        root_pc = st.chord_root(start) % 12
        midi = 33 + (root_pc - 9) % 12  # 55..104 Hz, well below 400 Hz
        tone = _decaying_tone(_pitch_hz(midi), st.sr, st.beat, decay=0.25, amp=0.22)
        _add_at(out, start, tone)
    return out


def _recipe_beat_noise_bursts(st: _MusicalState, rng):
    out = np.zeros(st.n_samples)
    for i, start in enumerate(st.beats()):
        if i % 2 == 0:  # kick: low thump
            _add_at(out, start, _decaying_tone(55.0, st.sr, int(0.08 * st.sr), 0.03, amp=0.17))
        else:  # snare: noise burst
            burst = rng.standard_normal(int(0.06 * st.sr)) * 0.14
            burst *= np.exp(-np.arange(len(burst)) / (0.015 * st.sr))
            _add_at(out, start, burst)
    for start in st.half_beats():  # hats on eighths
        burst = rng.standard_normal(int(0.015 * st.sr)) * 0.06
        burst *= np.exp(-np.arange(len(burst)) / (0.004 * st.sr))
        _add_at(out, start, burst)
    return np.clip(out, -0.25, 0.25)


def _recipe_mid_plucks(st: _MusicalState, rng):
    out = np.zeros(st.n_samples)
    arp = 0
    for start in st.half_beats():
        root = st.chord_root(start)
        midi = 57 + (root - 9) % 12 + _TRIAD[arp % 3]  # roughly 220..550 Hz
        arp += 1
        f = _pitch_hz(midi)
        length = st.beat // 2
        tone = _decaying_tone(f, st.sr, length, 0.10, amp=0.16)
        tone += _decaying_tone(2 * f, st.sr, length, 0.06, amp=0.05)
        _add_at(out, start, tone)
    return np.clip(out, -0.25, 0.25)


def _recipe_sustained_chords(st: _MusicalState, rng):
    out = np.zeros(st.n_samples)
    bar = 4 * st.beat
    for start in range(0, st.n_samples, bar):
        root = st.chord_root(start)
        length = min(bar, st.n_samples - start)
        t = np.arange(length) / st.sr
        env = np.minimum(t / 0.02, 1.0) * np.exp(-t / 1.2)
        chord = np.zeros(length)
        for iv in _TRIAD:
            f = _pitch_hz(48 + (root - 0) % 12 + iv)  # roughly 130..330 Hz
            chord += 0.07 * np.sin(2 * np.pi * f * t)
            chord += 0.015 * np.sin(2 * np.pi * 2 * f * t)
        _add_at(out, start, env * chord)
    return np.clip(out, -0.25, 0.25)


_RECIPE_FNS = {
    "low_sine_riff": _recipe_low_sine_riff,
    "beat_noise_bursts": _recipe_beat_noise_bursts,
    "mid_plucks": _recipe_mid_plucks,
    "sustained_chords": _recipe_sustained_chords,
}


def synth_toy_example(spec: ToyCorpusSpec, index: int) -> WaveformStack:
    """Deterministically synthesize example `index`; peak <= 0.25 per stem."""
    if not 0 <= index < spec.n_examples:
        raise ValueError(f"index {index} out of range for corpus of {spec.n_examples}")
    rng = np.random.default_rng([spec.seed, index])
    st = _MusicalState(spec, rng)
    stems = []
    for name, recipe in spec.stem_recipes.items():
        try:
            fn = _RECIPE_FNS[recipe]
        except KeyError:
            raise ValueError(f"unknown stem recipe '{recipe}' for stem '{name}'") from None
        stems.append(fn(st, rng).astype(np.float32))
    return WaveformStack(
        samples=np.stack(stems),
        sample_rate=spec.sample_rate,
        stem_names=tuple(spec.stem_recipes.keys()),
    )


def example_beat_samples(spec: ToyCorpusSpec, index: int) -> int:
    """Beat period (in samples) example `index` was synthesized with."""
    rng = np.random.default_rng([spec.seed, index])
    return _MusicalState(spec, rng).beat


def write_corpus(spec: ToyCorpusSpec, out_dir: Path | str) -> Path:
    """Render every example to per-stem WAVs plus a checksum manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(spec.n_examples):
        stack = synth_toy_example(spec, i)
        ex_dir = out_dir / f"ex{i:05d}"
        ex_dir.mkdir(exist_ok=True)
        checksums = {}
        for s, name in enumerate(stack.stem_names):
            path = ex_dir / f"{name}.wav"
            write_wav(path, stack.samples[s], stack.sample_rate)
            checksums[name] = hashlib.sha256(path.read_bytes()).hexdigest()
        entries.append({"name": ex_dir.name, "checksums": checksums})
    manifest = {"seed": spec.seed, "spec": spec.to_dict(), "examples": entries}
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    return manifest_path
