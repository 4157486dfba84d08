from .corpus import ToyCorpusSpec, example_beat_samples, synth_toy_example, write_corpus
from .io import ClipSelector, load_stems, read_wav, resample, write_wav
from .mel import mel_filter_centers, mel_filterbank, mel_forward, mel_invert
from .stacks import (
    DEFAULT_CLIP_SAMPLES,
    DEFAULT_SAMPLE_RATE,
    DEFAULT_STEM_NAMES,
    MelConfig,
    MelStack,
    WaveformStack,
    mix_stack,
)

__all__ = [
    "ClipSelector",
    "DEFAULT_CLIP_SAMPLES",
    "DEFAULT_SAMPLE_RATE",
    "DEFAULT_STEM_NAMES",
    "MelConfig",
    "MelStack",
    "ToyCorpusSpec",
    "WaveformStack",
    "example_beat_samples",
    "load_stems",
    "mel_filter_centers",
    "mel_filterbank",
    "mel_forward",
    "mel_invert",
    "mix_stack",
    "read_wav",
    "resample",
    "synth_toy_example",
    "write_corpus",
    "write_wav",
]
