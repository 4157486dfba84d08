import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from stemdiff.audio import ToyCorpusSpec, mel_forward, synth_toy_example
from stemdiff.audio.stacks import MelConfig, MelStack
from stemdiff.codec import (
    LatentCodecConfig,
    LatentStack,
    MelCodec,
    PosteriorParams,
    vae_decode,
    vae_encode,
    vae_loss_terms,
    vae_train_step,
)
from stemdiff.errors import ConfigError, ShapeError, StateError, TrainingDivergedError

PAPER_MEL = MelConfig(mel_bins=64)
PAPER_CODEC = LatentCodecConfig(compression_ratio=4, latent_channels=8, widths=(16, 32))


def ready_codec(config=PAPER_CODEC, mel=PAPER_MEL) -> MelCodec:
    torch.manual_seed(0)
    codec = MelCodec(config, mel)
    codec.mark_trained()
    codec.eval()
    return codec


def random_mel(shape, mel=PAPER_MEL, seed=0) -> MelStack:
    rng = np.random.default_rng(seed)
    floor = np.log(mel.log_floor)
    values = rng.uniform(floor, 2.0, shape).astype(np.float32)
    return MelStack(values=values, config=mel)


class TestConfig:
    def test_ratio_must_be_power_of_two(self):
        with pytest.raises(ConfigError):
            LatentCodecConfig(compression_ratio=3, latent_channels=4, widths=(8,))

    def test_width_schedule_must_match_ratio(self):
        with pytest.raises(ConfigError):
            LatentCodecConfig(compression_ratio=4, latent_channels=4, widths=(8,))


class TestShapes:
    def test_paper_geometry(self):
        codec = ready_codec()
        latent = vae_encode(codec, random_mel((4, 1024, 64)), mode="mean")
        assert latent.values.shape == (4, 8, 256, 16)
        decoded = vae_decode(codec, latent)
        assert decoded.values.shape == (4, 1024, 64)

    def test_single_stem(self):
        codec = ready_codec()
        latent = vae_encode(codec, random_mel((1, 1024, 64)), mode="mean")
        assert latent.values.shape == (1, 8, 256, 16)
        assert vae_decode(codec, latent).values.shape == (1, 1024, 64)

    def test_geometry_not_divisible(self):
        codec = ready_codec()
        with pytest.raises(ShapeError):
            vae_encode(codec, random_mel((1, 1022, 64)), mode="mean")

    @given(
        r_exp=st.integers(1, 2),
        channels=st.integers(1, 3),
        stems=st.integers(1, 3),
        t_blocks=st.integers(1, 3),
        f_blocks=st.integers(1, 3),
    )
    @settings(max_examples=12, deadline=None)
    def test_shape_law_random_configs(self, r_exp, channels, stems, t_blocks, f_blocks):
        r = 2**r_exp
        cfg = LatentCodecConfig(compression_ratio=r, latent_channels=channels,
                                widths=(4,) * r_exp)
        codec = MelCodec(cfg, PAPER_MEL)
        codec.mark_trained()
        t, f = r * t_blocks, r * f_blocks
        latent = vae_encode(codec, random_mel((stems, t, f)), mode="mean")
        assert latent.values.shape == (stems, channels, t // r, f // r)
        assert vae_decode(codec, latent).values.shape == (stems, t, f)


class TestEncodeDecode:
    def test_stem_permutation_equivariance(self):
        codec = ready_codec()
        mel = random_mel((4, 64, 64), seed=1)
        perm = [2, 0, 3, 1]
        a = vae_encode(codec, MelStack(values=mel.values[perm], config=PAPER_MEL), mode="mean")
        b = vae_encode(codec, mel, mode="mean")
        assert torch.equal(a.values, b.values[perm])

    def test_mean_mode_deterministic(self):
        codec = ready_codec()
        mel = random_mel((2, 64, 64), seed=2)
        a = vae_encode(codec, mel, mode="mean")
        b = vae_encode(codec, mel, mode="mean")
        assert torch.equal(a.values, b.values)

    def test_sample_mode_uses_generator(self):
        codec = ready_codec()
        mel = random_mel((1, 64, 64), seed=3)
        g1 = torch.Generator().manual_seed(5)
        g2 = torch.Generator().manual_seed(5)
        a = vae_encode(codec, mel, mode="sample", generator=g1)
        b = vae_encode(codec, mel, mode="sample", generator=g2)
        assert torch.equal(a.values, b.values)

    def test_untrained_codec_rejected(self):
        codec = MelCodec(PAPER_CODEC, PAPER_MEL)
        with pytest.raises(StateError):
            vae_encode(codec, random_mel((1, 64, 64)))

    def test_codec_id_mismatch_rejected(self):
        codec = ready_codec()
        latent = vae_encode(codec, random_mel((1, 64, 64)), mode="mean")
        other = ready_codec(LatentCodecConfig(compression_ratio=4, latent_channels=8,
                                              widths=(8, 16)))
        with pytest.raises(StateError):
            vae_decode(other, latent)

    def test_stem_mutation_is_local(self):
        codec = ready_codec()
        mel = random_mel((3, 64, 64), seed=4)
        base = vae_encode(codec, mel, mode="mean").values
        mutated = mel.values.copy()
        mutated[1] += 0.5
        out = vae_encode(codec, MelStack(values=mutated, config=PAPER_MEL), mode="mean").values
        assert torch.equal(out[0], base[0])
        assert torch.equal(out[2], base[2])
        assert not torch.equal(out[1], base[1])

    def test_decode_respects_log_floor(self):
        codec = ready_codec()
        latent = vae_encode(codec, random_mel((1, 64, 64)), mode="mean")
        decoded = vae_decode(codec, latent)
        assert decoded.values.min() >= np.log(PAPER_MEL.log_floor) - 1e-6

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            vae_encode(ready_codec(), random_mel((1, 64, 64)), mode="typo")


class TestPosterior:
    def test_kl_zero_for_standard_normal_posterior(self):
        p = PosteriorParams(mean=torch.zeros(4, 4), log_variance=torch.zeros(4, 4))
        assert float(p.kl()) == 0.0

    def test_kl_nonnegative(self, rng):
        for seed in range(5):
            r = np.random.default_rng(seed)
            p = PosteriorParams(
                mean=torch.from_numpy(r.standard_normal((3, 3))),
                log_variance=torch.from_numpy(r.uniform(-2, 2, (3, 3))),
            )
            assert float(p.kl()) >= 0.0

    def test_reparameterized_sample(self):
        p = PosteriorParams(mean=torch.full((2, 2), 3.0), log_variance=torch.full((2, 2), -60.0))
        sample = p.sample(torch.Generator().manual_seed(0))
        assert torch.allclose(sample, p.mean, atol=1e-6)


class PerfectCodec:
    """Stub whose decoder reproduces the input exactly."""

    class _Cfg:
        kl_weight = 1e-4

    config = _Cfg()

    def normalize(self, x):
        return x

    def posterior(self, x):
        return PosteriorParams(mean=x, log_variance=torch.full_like(x, -np.inf))

    def decoder(self, z):
        return z


class TestTraining:
    def test_perfect_reconstruction_zero_loss(self, rng):
        batch = torch.from_numpy(rng.standard_normal((2, 1, 8, 4)).astype(np.float32))
        recon, kl = vae_loss_terms(PerfectCodec(), batch)
        assert float(recon) == 0.0

    def test_smoke_training_halves_reconstruction(self):
        # 200 steps on 64 toy clips
        torch.manual_seed(0)
        spec = ToyCorpusSpec(n_examples=64, duration_samples=10240)
        mel_cfg = MelConfig(mel_bins=32)
        mels = np.concatenate(
            [mel_forward(synth_toy_example(spec, i), mel_cfg).values for i in range(64)]
        )
        bank = torch.from_numpy(mels).unsqueeze(1)
        codec = MelCodec(LatentCodecConfig(compression_ratio=4, latent_channels=4,
                                           widths=(8, 16)), mel_cfg)
        codec.set_mel_normalization(float(bank.mean()), float(bank.std()))
        opt = torch.optim.Adam(codec.parameters(), lr=2e-3)
        rng = np.random.default_rng(0)
        first = None
        for step in range(200):
            idx = rng.integers(0, bank.shape[0], size=16)
            gen = torch.Generator().manual_seed(step)
            losses = vae_train_step(codec, opt, bank[idx], step=step, generator=gen)
            if first is None:
                first = losses["reconstruction_loss"]
        assert losses["reconstruction_loss"] <= 0.5 * first

    def test_divergence_raises_with_step(self):
        codec = MelCodec(LatentCodecConfig(compression_ratio=2, latent_channels=2,
                                           widths=(4,)), PAPER_MEL)
        with torch.no_grad():
            codec.post_head.weight.fill_(np.nan)
        opt = torch.optim.Adam(codec.parameters(), lr=1e-3)
        batch = torch.zeros(2, 1, 8, 4)
        with pytest.raises(TrainingDivergedError) as err:
            vae_train_step(codec, opt, batch, step=17)
        assert err.value.step == 17


class TestGradients:
    def test_vae_losses_match_finite_differences(self):
        torch.manual_seed(3)
        cfg = LatentCodecConfig(compression_ratio=2, latent_channels=2, widths=(4,))
        codec = MelCodec(cfg, PAPER_MEL).double()
        batch = torch.randn(2, 1, 8, 4, dtype=torch.float64)

        def loss_value():
            gen = torch.Generator().manual_seed(11)
            recon, kl = vae_loss_terms(codec, batch, gen)
            return recon + 0.5 * kl  # both terms in one scalar

        loss = loss_value()
        loss.backward()
        params = [p for p in codec.parameters() if p.grad is not None]
        rng = np.random.default_rng(0)
        checked = 0
        h = 1e-6
        while checked < 100:
            p = params[rng.integers(len(params))]
            idx = tuple(rng.integers(s) for s in p.shape)
            analytic = float(p.grad[idx])
            with torch.no_grad():
                orig = float(p[idx])
                p[idx] = orig + h
                up = float(loss_value())
                p[idx] = orig - h
                down = float(loss_value())
                p[idx] = orig
            fd = (up - down) / (2 * h)
            denom = max(abs(analytic), abs(fd), 1e-8)
            assert abs(analytic - fd) / denom <= 1e-3, (analytic, fd)
            checked += 1


def test_latent_stack_validation():
    with pytest.raises(ShapeError):
        LatentStack(values=torch.zeros(3, 4, 4))
    with pytest.raises(ValueError):
        LatentStack(values=torch.full((1, 2, 2, 2), np.nan))
