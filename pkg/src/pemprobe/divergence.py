"""Closed-form divergences between factorized diagonal Gaussians.

Implements KL and the skew-geometric Jensen-Shannon divergence through the
weighted geometric-mean intermediate, plus Monte-Carlo estimators used as
independent oracles in the test suite.

Convention (fixed so the alpha endpoints recover both KL directions):
the intermediate ``G_alpha`` carries precision ``(1 - alpha) / sigma_p^2 +
alpha / sigma_q^2`` (so ``G_0 = p`` and ``G_1 = q``), and::

    js_galpha(p, q, alpha) = alpha * kl(p, G_alpha) + (1 - alpha) * kl(q, G_alpha)

which gives ``js_galpha(p, q, 0) = kl(q, p)`` and ``js_galpha(p, q, 1) = kl(p, q)``.

All functions accept leading batch dimensions and reduce over the final
(latent) dimension only. Standard deviations are floored at STDEV_FLOOR and
the closed forms are evaluated through log-variances for stability.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

STDEV_FLOOR = 1e-4


@dataclass
class DiagGaussian:
    """A diagonal Gaussian with mean and stdev of shape (..., d)."""

    mean: torch.Tensor
    stdev: torch.Tensor

    def __init__(self, mean, stdev):
        mean = torch.as_tensor(mean, dtype=torch.get_default_dtype() if not torch.is_tensor(mean) else None)
        stdev = torch.as_tensor(stdev, dtype=torch.get_default_dtype() if not torch.is_tensor(stdev) else None)
        if mean.shape != stdev.shape:
            raise ValueError(f"mean shape {tuple(mean.shape)} != stdev shape {tuple(stdev.shape)}")
        if mean.dtype != stdev.dtype:
            stdev = stdev.to(mean.dtype)
        self.mean = mean
        self.stdev = stdev.clamp_min(STDEV_FLOOR)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def log_prob(self, z: torch.Tensor) -> torch.Tensor:
        """Summed log density over the final dimension."""
        log_sigma = torch.log(self.stdev)
        u = (z - self.mean) / self.stdev
        const = 0.5 * torch.log(torch.tensor(2.0 * torch.pi, dtype=self.mean.dtype))
        return (-0.5 * u ** 2 - log_sigma - const).sum(dim=-1)

    def sample(self, generator: torch.Generator | None = None) -> torch.Tensor:
        eps = torch.randn(self.mean.shape, generator=generator, dtype=self.mean.dtype)
        return self.mean + self.stdev * eps


def _check_dims(p: DiagGaussian, q: DiagGaussian) -> None:
    if p.mean.shape[-1] != q.mean.shape[-1]:
        raise ValueError(f"dimension mismatch: {p.mean.shape[-1]} vs {q.mean.shape[-1]}")


def kl(p: DiagGaussian, q: DiagGaussian) -> torch.Tensor:
    """Closed-form KL(p || q), summed over the final dimension."""
    _check_dims(p, q)
    log_sp = torch.log(p.stdev)
    log_sq = torch.log(q.stdev)
    var_ratio = torch.exp(2.0 * (log_sp - log_sq))
    mean_term = ((p.mean - q.mean) / q.stdev) ** 2
    return (log_sq - log_sp + 0.5 * (var_ratio + mean_term) - 0.5).sum(dim=-1)


def geometric_mean(p: DiagGaussian, q: DiagGaussian, alpha: float) -> DiagGaussian:
    """The normalized weighted geometric mean G_alpha of two diagonal Gaussians.

    Precision is the convex combination ``(1 - alpha) * prec_p + alpha * prec_q``,
    so G_0 = p and G_1 = q.
    """
    _check_dims(p, q)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    prec_p = p.stdev ** -2
    prec_q = q.stdev ** -2
    prec = (1.0 - alpha) * prec_p + alpha * prec_q
    var = 1.0 / prec
    mean = var * ((1.0 - alpha) * prec_p * p.mean + alpha * prec_q * q.mean)
    return DiagGaussian(mean, torch.sqrt(var))


def js_galpha(p: DiagGaussian, q: DiagGaussian, alpha: float) -> torch.Tensor:
    """Skew-geometric Jensen-Shannon divergence, summed over the final dimension.

    Interpolates between the two KL directions: alpha -> 0 gives kl(q, p),
    alpha -> 1 gives kl(p, q); alpha = 0.5 is symmetric in (p, q).
    """
    _check_dims(p, q)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    g = geometric_mean(p, q, alpha)
    return alpha * kl(p, g) + (1.0 - alpha) * kl(q, g)


# ---------------------------------------------------------------------------
# Monte-Carlo oracles (test-side estimators, independent of the closed forms)
# ---------------------------------------------------------------------------

def mc_kl(p: DiagGaussian, q: DiagGaussian, n_samples: int,
          generator: torch.Generator | None = None) -> float:
    """Monte-Carlo estimate of KL(p || q) as E_p[log p - log q]."""
    _check_dims(p, q)
    shape = (n_samples,) + tuple(p.mean.shape)
    eps = torch.randn(shape, generator=generator, dtype=p.mean.dtype)
    z = p.mean + p.stdev * eps
    return float((p.log_prob(z) - q.log_prob(z)).mean())


def mc_js_galpha(p: DiagGaussian, q: DiagGaussian, alpha: float, n_samples: int,
                 generator: torch.Generator | None = None) -> float:
    """Monte-Carlo estimate of js_galpha from sampled log-density ratios."""
    g = geometric_mean(p, q, alpha)
    shape = (n_samples,) + tuple(p.mean.shape)
    eps_p = torch.randn(shape, generator=generator, dtype=p.mean.dtype)
    eps_q = torch.randn(shape, generator=generator, dtype=q.mean.dtype)
    zp = p.mean + p.stdev * eps_p
    zq = q.mean + q.stdev * eps_q
    term_p = float((p.log_prob(zp) - g.log_prob(zp)).mean())
    term_q = float((q.log_prob(zq) - g.log_prob(zq)).mean())
    return alpha * term_p + (1.0 - alpha) * term_q
