"""Closed-form noise predictors for Gaussian data, used as sampler oracles.

For z0 ~ N(mu, Sigma) under the variance-preserving forward process
z_n = sqrt(ab_n) z0 + sqrt(1 - ab_n) eps, the posterior mean of the noise
given z_n is linear:

    E[eps | z_n] = sqrt(1 - ab_n) (ab_n Sigma + (1 - ab_n) I)^{-1}
                   (z_n - sqrt(ab_n) mu)

(derived from the joint Gaussian of (z0, eps, z_n); validated against a
brute-force numerical posterior in the tests before use).
"""
import numpy as np
import torch


class ScalarGaussianDenoiser:
    """Optimal eps predictor for scalar data z0 ~ N(mu, s^2)."""

    def __init__(self, schedule, mu: float, s: float):
        self.alpha_bar = schedule.alpha_bar
        self.mu = mu
        self.s = s

    def __call__(self, z, n, cond=None):
        ab = float(self.alpha_bar[int(n) if not torch.is_tensor(n) else int(n.reshape(-1)[0])])
        num = np.sqrt(1.0 - ab) * (z - np.sqrt(ab) * self.mu)
        return num / (ab * self.s**2 + 1.0 - ab)


class JointGaussianDenoiser:
    """Optimal eps predictor for z0 ~ N(0, Sigma) over the last axis."""

    def __init__(self, schedule, covariance: np.ndarray):
        self.alpha_bar = schedule.alpha_bar
        self.cov = torch.as_tensor(covariance, dtype=torch.float32)
        self.eye = torch.eye(self.cov.shape[0])

    def __call__(self, z, n, cond=None):
        ab = float(self.alpha_bar[int(n)])
        moment = ab * self.cov + (1.0 - ab) * self.eye
        solve = torch.linalg.solve(moment, z.T).T
        return np.sqrt(1.0 - ab) * solve


def brute_force_eps_posterior(schedule, mu: float, s: float, z: float, n: int) -> float:
    """E[eps | z_n] by numerical integration over the prior (scalar case)."""
    ab = schedule.alpha_bar[n]
    z0 = np.linspace(mu - 10 * s, mu + 10 * s, 40001)
    log_post = -0.5 * ((z0 - mu) / s) ** 2 - 0.5 * (z - np.sqrt(ab) * z0) ** 2 / (1.0 - ab)
    weights = np.exp(log_post - log_post.max())
    eps = (z - np.sqrt(ab) * z0) / np.sqrt(1.0 - ab)
    return float((weights * eps).sum() / weights.sum())


def ancestral_ddpm_gaussian(schedule, mu: float, s: float, n_runs: int, seed: int) -> np.ndarray:
    """Independent ancestral DDPM oracle (full grid, posterior variance)."""
    rng = np.random.default_rng(seed)
    ab = schedule.alpha_bar
    betas = schedule.betas
    z = rng.standard_normal(n_runs)
    for n in range(schedule.n_steps, 0, -1):
        eps = np.sqrt(1 - ab[n]) * (z - np.sqrt(ab[n]) * mu) / (ab[n] * s**2 + 1 - ab[n])
        alpha_n = 1.0 - betas[n - 1]
        mean = (z - betas[n - 1] / np.sqrt(1 - ab[n]) * eps) / np.sqrt(alpha_n)
        if n > 1:
            var = (1 - ab[n - 1]) / (1 - ab[n]) * betas[n - 1]
            z = mean + np.sqrt(var) * rng.standard_normal(n_runs)
        else:
            z = mean
    return z
