import hashlib
import json

import numpy as np
import pytest

from stemdiff.audio import ToyCorpusSpec, example_beat_samples, synth_toy_example, write_corpus

SPEC = ToyCorpusSpec(n_examples=8, seed=7, duration_samples=40960)


def test_deterministic_bit_identical():
    a = synth_toy_example(SPEC, 3)
    b = synth_toy_example(SPEC, 3)
    assert np.array_equal(a.samples, b.samples)


def test_distinct_examples_differ():
    a = synth_toy_example(SPEC, 0)
    b = synth_toy_example(SPEC, 1)
    assert not np.array_equal(a.samples, b.samples)


def test_mixture_amplitude_budget():
    for i in range(SPEC.n_examples):
        stack = synth_toy_example(SPEC, i)
        assert np.abs(stack.samples).max() <= 0.25 + 1e-6
        assert np.abs(stack.samples.sum(axis=0)).max() <= 1.0


def test_bass_energy_below_400hz():
    # DFT oracle on the synthesis rule: >= 90% of spectral energy under 400 Hz
    stack = synth_toy_example(SPEC, 2)
    bass = stack.stem("bass")
    spectrum = np.abs(np.fft.rfft(bass)) ** 2
    freqs = np.fft.rfftfreq(len(bass), 1 / stack.sample_rate)
    ratio = spectrum[freqs < 400.0].sum() / spectrum.sum()
    assert ratio >= 0.90


def test_index_out_of_range():
    with pytest.raises(ValueError):
        synth_toy_example(SPEC, SPEC.n_examples)


def test_unknown_recipe_rejected():
    bad = ToyCorpusSpec(n_examples=1, stem_recipes={"bass": "no_such_recipe"})
    with pytest.raises(ValueError):
        synth_toy_example(bad, 0)


def test_shared_tempo_is_hop_aligned():
    beat = example_beat_samples(SPEC, 4)
    assert beat % 640 == 0  # onsets land on the latent time lattice


def test_stems_keep_recipe_order():
    stack = synth_toy_example(SPEC, 0)
    assert stack.stem_names == ("bass", "drums", "guitar", "piano")


def test_write_corpus_manifest(tmp_path):
    spec = ToyCorpusSpec(n_examples=2, seed=5, duration_samples=10240)
    manifest_path = write_corpus(spec, tmp_path / "corpus")
    manifest = json.loads(manifest_path.read_text())
    assert manifest["seed"] == 5
    assert ToyCorpusSpec.from_dict(manifest["spec"]) == spec
    assert len(manifest["examples"]) == 2
    for entry in manifest["examples"]:
        for stem, digest in entry["checksums"].items():
            path = tmp_path / "corpus" / entry["name"] / f"{stem}.wav"
            assert hashlib.sha256(path.read_bytes()).hexdigest() == digest
