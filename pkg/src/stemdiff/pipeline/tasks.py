"""End-to-end task pipelines over a trained checkpoint.

Each task is a thin composition over the diffusion engine:
separation = conditional DDIM (w >= 1 recommended), total generation =
unconditional DDIM (w = 0), partial generation = unconditional
replacement inpainting. Emitted audio is hard-clipped to [-1, 1]; clipped
sample counts are reported, not hidden.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..audio import mel_forward, mel_invert, mix_stack
from ..audio.stacks import MelStack, WaveformStack
from ..codec import LatentStack, vae_decode, vae_encode
from ..diffusion import SamplerRun, TrackMask, ddim_sample, inpaint_sample
from ..errors import ShapeError
from .checkpoint import CheckpointBundle, load_checkpoint
from .config import ExperimentConfig
from .training import build_experiment_schedule

log = logging.getLogger(__name__)


@dataclass
class TaskResult:
    stems: WaveformStack
    mixture: np.ndarray | None = None
    seed: int = 0
    clipped_samples: int = 0
    diagnostics: dict = field(default_factory=dict)


class Pipeline:
    """Loaded model bundle plus the three inference tasks."""

    def __init__(self, bundle: CheckpointBundle):
        self.config: ExperimentConfig = bundle.config
        self.fingerprint = bundle.fingerprint
        self.codec = bundle.build_codec()
        self.codec.eval()
        self.denoiser = bundle.build_denoiser()
        self.denoiser.eval()
        self.schedule = build_experiment_schedule(self.config)

    @classmethod
    def from_checkpoint(cls, path: str | Path, expected_config: ExperimentConfig | None = None):
        return cls(load_checkpoint(path, expected_config=expected_config))

    # -- helpers ---------------------------------------------------------

    def default_run(self, seed: int = 0, **overrides) -> SamplerRun:
        kw = {"steps": self.config.inference.steps, "seed": seed}
        kw.update(overrides)
        return SamplerRun(**kw)

    def encode_stack(self, stack: WaveformStack, mode: str = "mean") -> LatentStack:
        return vae_encode(self.codec, mel_forward(stack, self.config.mel), mode=mode)

    def encode_mixture(self, mixture: np.ndarray) -> torch.Tensor:
        stack = WaveformStack(
            samples=np.asarray(mixture, dtype=np.float32)[None, :],
            sample_rate=self.config.mel.sample_rate,
            stem_names=("mixture",),
        )
        return self.encode_stack(stack).values[0]

    def decode_to_waveforms(self, latents: torch.Tensor) -> tuple[WaveformStack, int]:
        """[S, C, T', F'] latents -> clipped waveform stack + clip count."""
        mel = vae_decode(self.codec, LatentStack(values=latents, codec_id=""))
        stack = mel_invert(mel, self.config.mel, iterations=self.config.inference.griffin_lim_iters)
        raw = stack.samples
        clipped = int((np.abs(raw) > 1.0).sum())
        return (
            WaveformStack(
                samples=np.clip(raw, -1.0, 1.0),
                sample_rate=self.config.mel.sample_rate,
                stem_names=self.config.stem_names,
            ),
            clipped,
        )

    def _check_clip_length(self, n: int):
        if n != self.config.clip_samples:
            raise ShapeError(
                f"expected a {self.config.clip_samples}-sample clip, got {n} "
                "(chunking is out of scope)"
            )

    # -- tasks -----------------------------------------------------------

    def separate(self, mixture: np.ndarray, w: float | None = None, run: SamplerRun | None = None,
                 seed: int = 0) -> TaskResult:
        """Decompose a mixture into stems by conditional sampling."""
        mixture = np.asarray(mixture, dtype=np.float32)
        self._check_clip_length(len(mixture))
        if w is None:
            w = run.w if run is not None else self.config.inference.w_separate
        if w < 1.0:
            log.warning("separation with w=%.3g < 1 weakens mixture adherence", w)
        cond = self.encode_mixture(mixture)
        if run is None:
            run = self.default_run(seed=seed, eta=self.config.inference.eta_separate)
        run = SamplerRun(steps=run.steps, eta=run.eta, seed=run.seed, w=w, condition=cond)
        shape = (1, *self.config.latent_shape)
        with torch.no_grad():
            z = ddim_sample(self.denoiser, run, self.schedule, shape)
        stems, clipped = self.decode_to_waveforms(z[0])
        residual = float(np.linalg.norm(mixture - mix_stack(stems)))
        return TaskResult(
            stems=stems,
            seed=run.seed,
            clipped_samples=clipped,
            diagnostics={"w": w, "mixture_residual_l2": residual},
        )

    def generate_total(self, count: int, seed: int = 0, run: SamplerRun | None = None) -> list[TaskResult]:
        """Unconditional multi-stem generation; mixtures are exact stem sums."""
        results = []
        base = run if run is not None else self.default_run(seed=seed)
        for i in range(count):
            run_i = SamplerRun(steps=base.steps, eta=base.eta, seed=base.seed + i, w=0.0)
            shape = (1, *self.config.latent_shape)
            with torch.no_grad():
                z = ddim_sample(self.denoiser, run_i, self.schedule, shape)
            stems, clipped = self.decode_to_waveforms(z[0])
            results.append(
                TaskResult(stems=stems, mixture=mix_stack(stems), seed=run_i.seed,
                           clipped_samples=clipped)
            )
        return results

    def generate_partial(
        self,
        given: WaveformStack,
        mask: TrackMask,
        run: SamplerRun | None = None,
        seed: int = 0,
        resample: int | None = None,
    ) -> TaskResult:
        """Generate the missing stems coherent with the given ones."""
        self._check_clip_length(given.n_samples)
        if mask.n_stems != len(self.config.stem_names):
            raise ShapeError(
                f"mask covers {mask.n_stems} stems, model has {len(self.config.stem_names)}"
            )
        if run is None:
            run = self.default_run(seed=seed, eta=self.config.inference.eta_inpaint)
        if run.w != 0.0:
            raise ValueError("partial generation uses the unconditional prior (w must be 0)")
        if resample is None:
            resample = self.config.inference.resample

        z_full = self.encode_stack(given).values
        if mask.all_given:
            log.warning("all stems given: returning the codec round-trip of the input")
            stems, clipped = self.decode_to_waveforms(z_full)
            return TaskResult(stems=stems, seed=run.seed, clipped_samples=clipped,
                              diagnostics={"note": "all stems given"})
        z_known = z_full.clone()
        z_known[~torch.from_numpy(mask.given)] = 0.0
        with torch.no_grad():
            z = inpaint_sample(
                self.denoiser, z_known.unsqueeze(0), mask, run, self.schedule, resample=resample
            )
        stems, clipped = self.decode_to_waveforms(z[0])
        return TaskResult(
            stems=stems,
            seed=run.seed,
            clipped_samples=clipped,
            diagnostics={"given": list(mask.names(self.config.stem_names)), "resample": resample},
        )
