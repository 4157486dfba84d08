"""3D-convolutional U-Net noise predictor with mixture conditioning.

The latent stack [S, C, T', F'] enters with the stem axis S as the
convolution channel axis and (C, T', F') as three spatial axes. Down- and
up-sampling act on T' and F' only, so C survives every level. The mixture
latent [C, T', F'] conditions the network additively: per level it is
average-pooled to the level's (T', F'), its C axis is tiled up to the
level's channel width, and the result is broadcast-added over the C
spatial axis before that level's residual blocks. The null condition is
the all-zeros map.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class UNetConfig:
    """Geometry and capacity of the denoiser.

    ``attention_levels`` lists encoder/decoder levels that get a simple
    attention layer; the bottleneck always has one.
    """

    stems: int = 4
    latent_channels: int = 8
    widths: tuple[int, ...] = (128, 256, 384, 640)
    attention_levels: tuple[int, ...] = (3,)
    timestep_embed_dim: int = 128
    res_blocks: int = 1
    dropout: float = 0.0

    def __post_init__(self):
        if len(self.widths) < 1:
            raise ConfigError("width schedule must not be empty")
        if self.timestep_embed_dim % 2:
            raise ConfigError("timestep embedding dimension must be even")
        bad = [i for i in self.attention_levels if not 0 <= i < len(self.widths)]
        if bad:
            raise ConfigError(f"attention level indices {bad} out of range")
        if self.res_blocks < 1:
            raise ConfigError("need at least one residual block per level")

    @property
    def levels(self) -> int:
        return len(self.widths)

    @property
    def spatial_divisor(self) -> int:
        return 2 ** (self.levels - 1)


def timestep_embed(n, dim: int, total_steps: int) -> torch.Tensor:
    """Sinusoidal step encoding [.., dim]: sines first, then cosines."""
    if dim % 2:
        raise ConfigError("sinusoidal embedding dimension must be even")
    n_t = torch.as_tensor(n, dtype=torch.float64)
    if (n_t < 0).any() or (n_t > total_steps).any():
        raise ValueError(f"step out of range 0..{total_steps}")
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    angles = n_t.reshape(-1, 1) * freqs
    emb = torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)
    if n_t.ndim == 0:
        emb = emb.squeeze(0)
    return emb


def inject_condition(
    cond: torch.Tensor | None,
    layer_channels: int,
    layer_spatial: tuple[int, int],
) -> torch.Tensor:
    """Pool the mixture latent to a layer's (T', F') and tile its C axis
    up to the layer's channel count (truncating the last repeat)."""
    t_out, f_out = layer_spatial
    if cond is None:
        return torch.zeros(layer_channels, t_out, f_out)
    batched = cond.ndim == 4
    x = cond if batched else cond.unsqueeze(0)
    if x.ndim != 4:
        raise ShapeError(f"condition must be [C, T, F] or [B, C, T, F], got {tuple(cond.shape)}")
    _, c, t_in, f_in = x.shape
    if t_in % t_out or f_in % f_out:
        raise ShapeError(
            f"layer spatial {layer_spatial} does not evenly divide condition spatial {(t_in, f_in)}"
        )
    pooled = nn.functional.avg_pool2d(x, kernel_size=(t_in // t_out, f_in // f_out))
    repeats = -(-layer_channels // c)  # ceil
    tiled = pooled.repeat(1, repeats, 1, 1)[:, :layer_channels]
    return tiled if batched else tiled.squeeze(0)


class ResBlock3d(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int, dropout: float):
        super().__init__()
        self.norm1 = _norm(in_ch)
        self.conv1 = nn.Conv3d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = _norm(out_ch)
        self.dropout = nn.Dropout(dropout)
        self.conv2 = nn.Conv3d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv3d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, t):
        h = self.conv1(nn.functional.silu(self.norm1(x)))
        h = h + self.time_proj(nn.functional.silu(t))[:, :, None, None, None]
        h = self.conv2(self.dropout(nn.functional.silu(self.norm2(h))))
        return self.skip(x) + h


class SimpleAttention(nn.Module):
    """Single-head self-attention over flattened spatial positions."""

    def __init__(self, ch: int):
        super().__init__()
        self.norm = _norm(ch)
        self.qkv = nn.Conv1d(ch, 3 * ch, 1)
        self.proj = nn.Conv1d(ch, ch, 1)

    def forward(self, x):
        b, c = x.shape[:2]
        flat = x.reshape(b, c, -1)
        q, k, v = self.qkv(self.norm(flat)).chunk(3, dim=1)
        attn = torch.softmax(torch.einsum("bcp,bcq->bpq", q, k) / math.sqrt(c), dim=-1)
        out = torch.einsum("bcq,bpq->bcp", v, attn)
        return x + self.proj(out).reshape(x.shape)


def _norm(ch: int) -> nn.Module:
    groups = math.gcd(ch, 8) if ch >= 8 else 1
    return nn.GroupNorm(groups, ch)


class _Level(nn.Module):
    def __init__(self, ch: int, cfg: UNetConfig, in_ch: int | None = None):
        super().__init__()
        first_in = ch if in_ch is None else in_ch
        blocks = [ResBlock3d(first_in, ch, cfg.timestep_embed_dim, cfg.dropout)]
        blocks += [
            ResBlock3d(ch, ch, cfg.timestep_embed_dim, cfg.dropout)
            for _ in range(cfg.res_blocks - 1)
        ]
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x, t):
        for block in self.blocks:
            x = block(x, t)
        return x


class UNet3D(nn.Module):
    """Noise predictor eps_theta(z_n, n, [mixture latent])."""

    def __init__(self, config: UNetConfig, total_steps: int = 1000):
        super().__init__()
        self.config = config
        self.total_steps = total_steps
        w = config.widths
        levels = config.levels
        tdim = config.timestep_embed_dim

        self.time_mlp = nn.Sequential(nn.Linear(tdim, tdim), nn.SiLU(), nn.Linear(tdim, tdim))
        self.in_conv = nn.Conv3d(config.stems, w[0], 3, padding=1)

        self.enc_levels = nn.ModuleList([_Level(w[i], config) for i in range(levels)])
        self.enc_attn = nn.ModuleList(
            [SimpleAttention(w[i]) if i in config.attention_levels else nn.Identity()
             for i in range(levels)]
        )
        self.downs = nn.ModuleList(
            [nn.Conv3d(w[i], w[i + 1], 3, stride=(1, 2, 2), padding=1)
             for i in range(levels - 1)]
        )

        self.mid_block1 = ResBlock3d(w[-1], w[-1], tdim, config.dropout)
        self.mid_attn = SimpleAttention(w[-1])
        self.mid_block2 = ResBlock3d(w[-1], w[-1], tdim, config.dropout)

        self.ups = nn.ModuleList(
            [nn.Conv3d(w[i + 1], w[i], 3, padding=1) for i in range(levels - 1)]
        )
        self.fuses = nn.ModuleList([nn.Conv3d(2 * w[i], w[i], 1) for i in range(levels)])
        self.dec_levels = nn.ModuleList([_Level(w[i], config) for i in range(levels)])
        self.dec_attn = nn.ModuleList(
            [SimpleAttention(w[i]) if i in config.attention_levels else nn.Identity()
             for i in range(levels)]
        )

        self.out_norm = _norm(w[0])
        self.out_conv = nn.Conv3d(w[0], config.stems, 3, padding=1)
        # zero init stabilizes early training and makes the untrained net emit zeros
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def _inject(self, x, cond):
        if cond is None:
            return x
        cmap = inject_condition(cond, x.shape[1], (x.shape[3], x.shape[4]))
        return x + cmap.to(x.dtype).unsqueeze(-3)

    def _check_input(self, z):
        cfg = self.config
        if z.ndim != 5:
            raise ShapeError(f"expected [B, S, C, T, F], got {tuple(z.shape)}")
        _, s, c, t, f = z.shape
        if s != cfg.stems or c != cfg.latent_channels:
            raise ShapeError(
                f"input stems/channels {(s, c)} do not match config {(cfg.stems, cfg.latent_channels)}"
            )
        d = cfg.spatial_divisor
        if t % d or f % d:
            raise ShapeError(f"spatial dims {(t, f)} must be divisible by {d}")

    def forward(self, z, n, cond=None):
        self._check_input(z)
        if cond is not None and cond.ndim not in (3, 4):
            raise ShapeError(f"condition must be [C, T, F] or [B, C, T, F], got {tuple(cond.shape)}")
        n_t = torch.as_tensor(n)
        if n_t.ndim == 0:
            n_t = n_t.expand(z.shape[0])
        raw = timestep_embed(n_t, self.config.timestep_embed_dim, self.total_steps)
        t = self.time_mlp(raw.to(z.dtype))

        x = self.in_conv(z)
        skips = []
        for i, level in enumerate(self.enc_levels):
            x = self._inject(x, cond)
            x = level(x, t)
            x = self.enc_attn[i](x)
            skips.append(x)
            if i < len(self.downs):
                x = self.downs[i](x)

        x = self._inject(x, cond)
        x = self.mid_block1(x, t)
        x = self.mid_attn(x)
        x = self.mid_block2(x, t)

        for i in reversed(range(self.config.levels)):
            if i < len(self.ups):
                x = nn.functional.interpolate(x, scale_factor=(1, 2, 2), mode="nearest")
                x = self.ups[i](x)
            x = self.fuses[i](torch.cat([x, skips[i]], dim=1))
            x = self._inject(x, cond)
            x = self.dec_levels[i](x, t)
            x = self.dec_attn[i](x)

        return self.out_conv(nn.functional.silu(self.out_norm(x)))
