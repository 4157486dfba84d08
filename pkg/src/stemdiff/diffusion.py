"""Noise schedules, forward diffusion, training loss, CFG, DDIM, inpainting.

Everything here is denoiser-agnostic: a denoiser is any callable
``denoiser(z, n, cond) -> eps_hat`` where ``z`` is a tensor whose leading
axis is the batch, ``n`` is an int step (or per-sample LongTensor in the
training loss), and ``cond`` is an optional conditioning tensor.

Two schedule kinds are supported. The variance-preserving kind
(``z_n = sqrt(alpha_bar_n) z_0 + sqrt(1-alpha_bar_n) eps``) is the default
used for training and sampling; the variance-exploding kind
(``z_n = z_0 + sigma_n eps``) is kept available.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigError, NumericError, ShapeError

VP_LINEAR = "variance_preserving_linear"
VE_LINEAR = "variance_exploding"


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed per-step noise coefficients, indexable for n in 0..N."""

    kind: str
    n_steps: int
    alpha_bar: np.ndarray | None = None  # VP: [N+1], alpha_bar[0] == 1
    betas: np.ndarray | None = None      # VP: [N], beta for steps 1..N
    sigmas: np.ndarray | None = None     # VE: [N+1], sigmas[0] == 0

    def __post_init__(self):
        if self.kind == VP_LINEAR:
            ab = self.alpha_bar
            if ab is None or len(ab) != self.n_steps + 1:
                raise ConfigError("VP schedule needs alpha_bar of length N+1")
            if ab[0] != 1.0:
                raise ConfigError("alpha_bar_0 must be exactly 1")
            if not (np.diff(ab) < 0).all():
                raise ConfigError("alpha_bar must be strictly decreasing")
        elif self.kind == VE_LINEAR:
            sg = self.sigmas
            if sg is None or len(sg) != self.n_steps + 1:
                raise ConfigError("VE schedule needs sigmas of length N+1")
            if sg[0] != 0.0:
                raise ConfigError("sigma_0 must be exactly 0")
            if not (np.diff(sg) > 0).all():
                raise ConfigError("sigmas must be strictly increasing")
        else:
            raise ConfigError(f"unknown schedule kind '{self.kind}'")

    @property
    def is_vp(self) -> bool:
        return self.kind == VP_LINEAR

    def signal_noise_coeffs(self, n) -> tuple:
        """(signal coefficient, noise coefficient) at step n, float64."""
        if self.is_vp:
            ab = self.alpha_bar[n]
            return np.sqrt(ab), np.sqrt(1.0 - ab)
        return np.ones_like(np.asarray(n, dtype=np.float64)), self.sigmas[n]


def build_schedule(
    kind: str = VP_LINEAR,
    n_steps: int = 1000,
    beta_start: float = 1e-4,
    beta_end: float = 2e-2,
    sigma_max: float = 1.0,
) -> NoiseSchedule:
    if n_steps < 1:
        raise ConfigError("schedule needs at least one step")
    if kind in (VP_LINEAR, "vp"):
        if beta_start > beta_end:
            raise ConfigError(f"beta_start ({beta_start}) must not exceed beta_end ({beta_end})")
        if not (0 < beta_start and beta_end < 1):
            raise ConfigError("betas must lie in (0, 1)")
        betas = np.linspace(beta_start, beta_end, n_steps, dtype=np.float64)
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        return NoiseSchedule(kind=VP_LINEAR, n_steps=n_steps, alpha_bar=alpha_bar, betas=betas)
    if kind in (VE_LINEAR, "ve"):
        if sigma_max <= 0:
            raise ConfigError("sigma_max must be positive")
        sigmas = np.linspace(0.0, sigma_max, n_steps + 1, dtype=np.float64)
        return NoiseSchedule(kind=VE_LINEAR, n_steps=n_steps, sigmas=sigmas)
    raise ConfigError(f"unknown schedule kind '{kind}'")


def _coeff_tensor(values, z: torch.Tensor) -> torch.Tensor:
    """Lift per-sample coefficients to z's dtype/shape for broadcasting."""
    t = torch.as_tensor(values, dtype=z.dtype)
    if t.ndim == 0:
        return t
    return t.view(-1, *([1] * (z.ndim - 1)))


def forward_diffuse(z0: torch.Tensor, n, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Noise z0 to step n: pure function of (z0, n, eps)."""
    if eps.shape != z0.shape:
        raise ShapeError(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")
    n_arr = n.cpu().numpy() if isinstance(n, torch.Tensor) else np.asarray(n)
    if (n_arr < 0).any() or (n_arr > schedule.n_steps).any():
        raise ValueError(f"step out of range 0..{schedule.n_steps}")
    sig, noi = schedule.signal_noise_coeffs(n_arr)
    return _coeff_tensor(sig, z0) * z0 + _coeff_tensor(noi, z0) * eps


def cfg_blend(eps_c: torch.Tensor, eps_u: torch.Tensor, w: float) -> torch.Tensor:
    """Classifier-free guidance: w * eps_c + (1 - w) * eps_u."""
    if eps_c.shape != eps_u.shape:
        raise ShapeError(
            f"conditional {tuple(eps_c.shape)} vs unconditional {tuple(eps_u.shape)}"
        )
    return w * eps_c + (1.0 - w) * eps_u


def ddpm_loss(
    denoiser,
    z0: torch.Tensor,
    condition: torch.Tensor | None,
    drop_prob: float,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Noise-prediction MSE with per-sample steps and condition dropout."""
    if not 0.0 <= drop_prob <= 1.0:
        raise ValueError(f"drop_prob must be in [0, 1], got {drop_prob}")
    batch = z0.shape[0]
    n = torch.randint(1, schedule.n_steps + 1, (batch,), generator=generator)
    eps = torch.empty_like(z0).normal_(generator=generator)
    z_n = forward_diffuse(z0, n, eps, schedule)

    cond = condition
    if cond is not None and drop_prob > 0.0:
        keep = torch.rand(batch, generator=generator) >= drop_prob
        if not keep.any():
            cond = None
        elif not keep.all():
            # the null condition is the all-zeros map, so zeroing rows drops them
            cond = cond * keep.to(cond.dtype).view(-1, *([1] * (cond.ndim - 1)))

    pred = denoiser(z_n, n, cond)
    if pred.shape != z0.shape:
        raise ShapeError(f"denoiser returned {tuple(pred.shape)}, expected {tuple(z0.shape)}")
    if not torch.isfinite(pred).all():
        bad = (~torch.isfinite(pred)).view(batch, -1).any(dim=1)
        raise NumericError(
            f"non-finite denoiser prediction at steps n={n[bad].tolist()[:8]}"
        )
    return torch.mean((eps - pred) ** 2)


def reverse_grid(n_total: int, steps: int) -> np.ndarray:
    """Evenly spaced, strictly decreasing step grid from N to 0 (steps+1 points)."""
    if steps < 1:
        raise ValueError("need at least one sampling step")
    if steps > n_total:
        raise ValueError(f"steps ({steps}) cannot exceed schedule steps ({n_total})")
    grid = np.round(np.linspace(n_total, 0, steps + 1)).astype(int)
    if not (np.diff(grid) < 0).all():
        raise ValueError("reverse grid is not strictly decreasing")
    return grid


@dataclass
class SamplerRun:
    """One sampling run: grid size, stochasticity, guidance, and seed."""

    steps: int = 200
    eta: float = 0.0
    seed: int = 0
    w: float = 0.0
    condition: torch.Tensor | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")
        if self.w < 0:
            raise ValueError(f"CFG weight must be >= 0, got {self.w}")


@dataclass(frozen=True)
class TrackMask:
    """Boolean vector over stems: True = stem is given (set I)."""

    given: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "given", np.asarray(self.given, dtype=bool))
        if self.given.ndim != 1 or len(self.given) < 1:
            raise ShapeError("track mask must be a rank-1 boolean vector over stems")

    @classmethod
    def from_names(cls, stem_names, given_names) -> "TrackMask":
        unknown = set(given_names) - set(stem_names)
        if unknown:
            raise ValueError(f"unknown stem names in mask: {sorted(unknown)}")
        return cls(np.asarray([n in set(given_names) for n in stem_names]))

    @property
    def n_stems(self) -> int:
        return len(self.given)

    @property
    def all_given(self) -> bool:
        return bool(self.given.all())

    @property
    def none_given(self) -> bool:
        return bool(~self.given.any())

    def complement(self) -> "TrackMask":
        return TrackMask(~self.given)

    def names(self, stem_names) -> tuple[str, ...]:
        return tuple(n for n, g in zip(stem_names, self.given) if g)


def _predict_eps(denoiser, z, n: int, w: float, condition):
    # one call suffices at the blend's endpoints
    if w == 0.0:
        return denoiser(z, n, None)
    if w == 1.0:
        return denoiser(z, n, condition)
    eps_c = denoiser(z, n, condition)
    eps_u = denoiser(z, n, None)
    return cfg_blend(eps_c, eps_u, w)


def _ddim_update(z, eps_hat, schedule, n: int, m: int, eta: float, generator):
    if schedule.is_vp:
        ab_n = float(schedule.alpha_bar[n])
        ab_m = float(schedule.alpha_bar[m])
        z0_pred = (z - math.sqrt(1.0 - ab_n) * eps_hat) / math.sqrt(ab_n)
        sigma = eta * math.sqrt((1.0 - ab_m) / (1.0 - ab_n) * (1.0 - ab_n / ab_m))
        dir_coef = math.sqrt(max(1.0 - ab_m - sigma**2, 0.0))
        out = math.sqrt(ab_m) * z0_pred + dir_coef * eps_hat
    else:
        s_n = float(schedule.sigmas[n])
        s_m = float(schedule.sigmas[m])
        z0_pred = z - s_n * eps_hat
        sigma = eta * s_m * math.sqrt(max(1.0 - (s_m / s_n) ** 2, 0.0)) if s_n > 0 else 0.0
        dir_coef = math.sqrt(max(s_m**2 - sigma**2, 0.0))
        out = z0_pred + dir_coef * eps_hat
    if sigma > 0:
        out = out + sigma * torch.empty_like(z).normal_(generator=generator)
    return out


def _check_finite(z, n: int):
    if not torch.isfinite(z).all():
        raise NumericError(f"sampler state became non-finite at step n={n}")


def ddim_sample(
    denoiser,
    run: SamplerRun,
    schedule: NoiseSchedule,
    shape: tuple,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """DDIM sampling over the decreasing step grid; eta=0 is deterministic."""
    if run.w != 0.0 and run.condition is None:
        raise ValueError(f"CFG weight w={run.w} requires a condition")
    grid = reverse_grid(schedule.n_steps, run.steps)
    if generator is None:
        generator = torch.Generator().manual_seed(run.seed)
    z = torch.empty(shape).normal_(generator=generator)
    for i in range(run.steps):
        n, m = int(grid[i]), int(grid[i + 1])
        eps_hat = _predict_eps(denoiser, z, n, run.w, run.condition)
        z = _ddim_update(z, eps_hat, schedule, n, m, run.eta, generator)
        _check_finite(z, n)
    return z


def inpaint_sample(
    denoiser,
    z_known: torch.Tensor,
    mask: TrackMask,
    run: SamplerRun,
    schedule: NoiseSchedule,
    resample: int = 16,
) -> torch.Tensor:
    """Replacement inpainting: given stems are pinned to forward-noised truth.

    After every sampler update to step m, rows in the given set are
    overwritten with ``forward_diffuse(z_known, m, fresh noise)``, so at
    m=0 they equal ``z_known`` exactly. ``resample`` > 1 re-noises back to
    step n and repeats the update, harmonizing generated rows with the
    pinned ones; plain one-pass replacement is ``resample=1``.
    """
    if run.w != 0.0:
        raise ValueError("inpainting runs on the unconditional prior (w must be 0)")
    if resample < 1:
        raise ValueError("resample must be >= 1")
    if z_known.ndim < 2 or z_known.shape[1] != mask.n_stems:
        raise ShapeError(
            f"z_known stem axis {tuple(z_known.shape)} does not match mask of {mask.n_stems}"
        )
    idx = torch.from_numpy(mask.given)
    if mask.all_given:
        return z_known.clone()
    if mask.none_given:
        return ddim_sample(denoiser, run, schedule, z_known.shape)
    if not torch.isfinite(z_known[:, idx]).all():
        raise ValueError("given rows of z_known contain non-finite values")
    if not schedule.is_vp:
        raise ConfigError("replacement inpainting is implemented for the VP schedule")

    generator = torch.Generator().manual_seed(run.seed)
    known = z_known[:, idx]
    grid = reverse_grid(schedule.n_steps, run.steps)
    z = torch.empty(z_known.shape).normal_(generator=generator)
    for i in range(run.steps):
        n, m = int(grid[i]), int(grid[i + 1])
        ab_n = float(schedule.alpha_bar[n])
        ab_m = float(schedule.alpha_bar[m])
        for u in range(resample):
            eps_hat = _predict_eps(denoiser, z, n, 0.0, None)
            z = _ddim_update(z, eps_hat, schedule, n, m, run.eta, generator)
            noise = torch.empty_like(known).normal_(generator=generator)
            z[:, idx] = math.sqrt(ab_m) * known + math.sqrt(1.0 - ab_m) * noise
            if u < resample - 1:
                # jump back m -> n through the forward process
                ratio = ab_n / ab_m
                jump = torch.empty_like(z).normal_(generator=generator)
                z = math.sqrt(ratio) * z + math.sqrt(1.0 - ratio) * jump
        _check_finite(z, n)
    return z
