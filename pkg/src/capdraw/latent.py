"""Diagonal-Gaussian latents: heads, reparameterized draws, analytic KL.

The head parameterization is mean = tanh(W_mu h) and the standard
deviation sigma = exp(tanh(W_sigma h)), which pins sigma inside
[e^-1, e^1]. ``log_std`` is carried alongside sigma so the KL can form
log-ratios and reciprocals without re-taking logarithms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class GaussianHead:
    w_mean: Tensor  # (D, n)
    w_std: Tensor   # (D, n)

    def __post_init__(self):
        if self.w_mean.shape != self.w_std.shape:
            raise ad.ShapeMismatch(
                f"GaussianHead: maps {self.w_mean.shape} and {self.w_std.shape} differ"
            )

    @property
    def latent_dim(self) -> int:
        return self.w_mean.shape[0]


@dataclass
class DiagGaussian:
    mean: Tensor     # (D,)
    std: Tensor      # (D,), strictly positive
    log_std: Tensor  # (D,)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def standard(cls, dim: int) -> "DiagGaussian":
        zero = ad.constant(np.zeros(dim))
        return cls(mean=zero, std=ad.constant(np.ones(dim)), log_std=zero)

    @classmethod
    def from_arrays(cls, mean, std) -> "DiagGaussian":
        std = np.asarray(std, dtype=np.float64)
        if np.any(std <= 0):
            raise ValueError("DiagGaussian: std must be strictly positive")
        return cls(mean=ad.constant(mean), std=ad.constant(std), log_std=ad.constant(np.log(std)))


def gaussian_params(hidden: Tensor, head: GaussianHead) -> DiagGaussian:
    """Bounded mean/std of a diagonal Gaussian from a hidden state."""
    log_std = ad.tanh(ad.matmul(head.w_std, hidden))
    return DiagGaussian(
        mean=ad.tanh(ad.matmul(head.w_mean, hidden)),
        std=ad.exp(log_std),
        log_std=log_std,
    )


def sample_reparam(g: DiagGaussian, noise: np.ndarray) -> Tensor:
    """mean + std * noise with the noise held constant, so the draw stays
    differentiable in the distribution parameters."""
    if noise.shape != (g.dim,):
        raise ad.ShapeMismatch(f"sample_reparam: noise {noise.shape} for dim {g.dim}")
    return g.mean + g.std * ad.constant(noise)


def kl_diag_gauss(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    """KL(q || p) in nats, as a scalar node differentiable in all params.

    The variance ratio is formed in log space so identical parameters give
    exactly zero rather than rounding noise.
    """
    if q.dim != p.dim:
        raise ad.ShapeMismatch(f"kl_diag_gauss: dims {q.dim} and {p.dim} differ")
    log_ratio = p.log_std - q.log_std
    var_ratio = ad.exp(ad.constant(-2.0) * log_ratio)  # (sigma_q / sigma_p)^2
    mean_diff = q.mean - p.mean
    inv_p_var = ad.exp(ad.constant(-2.0) * p.log_std)
    per_dim = log_ratio + var_ratio * 0.5 + (mean_diff * mean_diff) * inv_p_var * 0.5 - 0.5
    return ad.total(per_dim)


def gaussian_log_density(value: np.ndarray, g: DiagGaussian) -> float:
    """log N(value; mean, std^2), plain float (no tape)."""
    mean = g.mean.data
    std = g.std.data
    z = (np.asarray(value) - mean) / std
    return float(-0.5 * np.sum(z * z) - np.sum(np.log(std)) - 0.5 * g.dim * np.log(2.0 * np.pi))
