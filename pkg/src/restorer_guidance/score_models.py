"""Score estimators and the Tweedie one-step denoiser.

Two closed-form priors are provided:

* :class:`GmmPrior` -- a mixture of diagonal Gaussians. Diffusing it by the
  forward kernel keeps it a mixture, so both the marginal score and the
  posterior mean ``E[x0 | x_t]`` are exact.
* :class:`SpectralGaussianPrior` -- a stationary Gaussian over 2-D grids whose
  covariance is diagonal in the Fourier basis (a power spectrum). It is the
  natural "fit to an image corpus" prior and gives exact scores for images.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidArgumentError, NumericError
from .numerics import as_grid
from .schedule import NoiseSchedule

__all__ = [
    "ScoreModel",
    "GmmPrior",
    "GmmScore",
    "SpectralGaussianPrior",
    "SpectralGaussianScore",
    "gmm_log_density",
    "gmm_marginal_score",
    "gmm_posterior_mean",
    "tweedie_denoise",
]


@runtime_checkable
class ScoreModel(Protocol):
    """Anything that maps ``(x_t, t)`` to an estimate of ``grad log p(x_t)``."""

    def evaluate(self, x: np.ndarray, t: int) -> np.ndarray: ...


@dataclass(frozen=True)
class GmmPrior:
    """Mixture of diagonal Gaussians over grids of a fixed shape.

    ``means`` and ``variances`` have shape ``(K, *grid_shape)``.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.means, dtype=np.float64)
        var = np.asarray(self.variances, dtype=np.float64)
        if w.ndim != 1 or mu.shape[0] != w.size or var.shape != mu.shape:
            raise InvalidArgumentError("weights/means/variances have inconsistent shapes")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError("mixture weights must be positive and sum to 1")
        if np.any(var <= 0) or not np.all(np.isfinite(var)):
            raise InvalidArgumentError("component variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @classmethod
    def isotropic(cls, weights, means, variance: float | Sequence[float] = 1.0) -> "GmmPrior":
        means = np.asarray(means, dtype=np.float64)
        var = np.broadcast_to(
            np.asarray(variance, dtype=np.float64).reshape((-1,) + (1,) * (means.ndim - 1)),
            means.shape,
        ).copy()
        w = np.asarray(weights, dtype=np.float64)
        return cls(w / w.sum(), means, var)

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def shape(self) -> tuple[int, ...]:
        return self.means.shape[1:]

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        comps = rng.choice(self.K, size=count, p=self.weights)
        noise = rng.standard_normal((count,) + self.shape)
        return self.means[comps] + np.sqrt(self.variances[comps]) * noise

    def mean(self) -> np.ndarray:
        return np.tensordot(self.weights, self.means, axes=1)

    def covariance_diag(self) -> np.ndarray:
        m = self.mean()
        second = np.tensordot(self.weights, self.variances + self.means**2, axes=1)
        return second - m**2


def _diffused(prior: GmmPrior, s: NoiseSchedule, t: int) -> tuple[np.ndarray, np.ndarray]:
    ab = s.alpha_bar[s.check_step(t)]
    means = np.sqrt(ab) * prior.means
    var = ab * prior.variances + (1.0 - ab)
    if np.any(var <= 0):
        raise NumericError("degenerate diffused covariance")
    return means, var


def _responsibilities(prior, means, var, x) -> tuple[np.ndarray, np.ndarray]:
    axes = tuple(range(1, means.ndim))
    log_comp = -0.5 * np.sum((x - means) ** 2 / var + np.log(2.0 * np.pi * var), axis=axes)
    log_joint = np.log(prior.weights) + log_comp
    log_total = logsumexp(log_joint)
    resp = np.exp(log_joint - log_total)
    return resp, log_total


def _check_x(prior: GmmPrior, x) -> np.ndarray:
    x = as_grid(x, name="x")
    if x.shape != prior.shape:
        raise InvalidArgumentError(f"state shape {x.shape} does not match prior {prior.shape}")
    return x


def gmm_log_density(prior: GmmPrior, s: NoiseSchedule, x: np.ndarray, t: int) -> float:
    """``log p_t(x)`` of the diffused mixture."""
    x = _check_x(prior, x)
    means, var = _diffused(prior, s, t)
    return float(_responsibilities(prior, means, var, x)[1])


def gmm_marginal_score(prior: GmmPrior, s: NoiseSchedule, x: np.ndarray, t: int) -> np.ndarray:
    """Exact ``grad log p_t(x)`` via responsibility-weighted Gaussian scores."""
    x = _check_x(prior, x)
    means, var = _diffused(prior, s, t)
    resp, _ = _responsibilities(prior, means, var, x)
    comp_scores = -(x - means) / var
    return np.tensordot(resp, comp_scores, axes=1)


def gmm_posterior_mean(prior: GmmPrior, s: NoiseSchedule, x_t: np.ndarray, t: int) -> np.ndarray:
    """Exact ``E[x0 | x_t]`` as a responsibility-weighted conjugate update."""
    x_t = _check_x(prior, x_t)
    ab = s.alpha_bar[s.check_step(t)]
    means, var = _diffused(prior, s, t)
    resp, _ = _responsibilities(prior, means, var, x_t)
    comp_post = prior.means + prior.variances * np.sqrt(ab) * (x_t - means) / var
    return np.tensordot(resp, comp_post, axes=1)


@dataclass(frozen=True)
class GmmScore:
    """:class:`ScoreModel` backed by the exact mixture score."""

    prior: GmmPrior
    schedule: NoiseSchedule

    def evaluate(self, x: np.ndarray, t: int) -> np.ndarray:
        return gmm_marginal_score(self.prior, self.schedule, x, t)


@dataclass(frozen=True)
class SpectralGaussianPrior:
    """Stationary Gaussian on 2-D grids: constant mean plus circulant covariance.

    ``power[k]`` is the covariance eigenvalue for DFT frequency ``k``; a
    sample is ``mean + ifft2(sqrt(power) * fft2(white))``.
    """

    mean: float
    power: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.power, dtype=np.float64)
        if p.ndim != 2 or np.any(p < 0) or not np.all(np.isfinite(p)):
            raise InvalidArgumentError("power spectrum must be a finite non-negative 2-D grid")
        object.__setattr__(self, "power", p)

    @property
    def shape(self) -> tuple[int, int]:
        return self.power.shape

    @classmethod
    def fit(cls, corpus: Sequence[np.ndarray], floor: float = 1e-6) -> "SpectralGaussianPrior":
        """Maximum-likelihood stationary fit; ``floor`` keeps every eigenvalue positive."""
        stack = np.stack([as_grid(c) for c in corpus])
        if stack.ndim != 3:
            raise InvalidArgumentError("spectral prior needs a corpus of 2-D grids")
        mean = float(stack.mean())
        n = stack.shape[1] * stack.shape[2]
        spec = np.abs(np.fft.fft2(stack - mean)) ** 2 / n
        return cls(mean, np.maximum(spec.mean(axis=0), floor))

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        white = rng.standard_normal((count,) + self.shape)
        colored = np.fft.ifft2(np.sqrt(self.power) * np.fft.fft2(white)).real
        return self.mean + colored

    def _filter(self, x: np.ndarray, gain: np.ndarray) -> np.ndarray:
        return np.fft.ifft2(gain * np.fft.fft2(x)).real

    def score(self, s: NoiseSchedule, x: np.ndarray, t: int) -> np.ndarray:
        ab = s.alpha_bar[s.check_step(t)]
        var = ab * self.power + (1.0 - ab)
        return -self._filter(x - np.sqrt(ab) * self.mean, 1.0 / var)

    def posterior_mean(self, s: NoiseSchedule, x_t: np.ndarray, t: int) -> np.ndarray:
        ab = s.alpha_bar[s.check_step(t)]
        var = ab * self.power + (1.0 - ab)
        return self.mean + self._filter(x_t - np.sqrt(ab) * self.mean, np.sqrt(ab) * self.power / var)


@dataclass(frozen=True)
class SpectralGaussianScore:
    prior: SpectralGaussianPrior
    schedule: NoiseSchedule

    def evaluate(self, x: np.ndarray, t: int) -> np.ndarray:
        x = as_grid(x, name="x")
        if x.shape != self.prior.shape:
            raise InvalidArgumentError(f"state shape {x.shape} does not match prior {self.prior.shape}")
        return self.prior.score(self.schedule, x, t)


def tweedie_denoise(m: ScoreModel, s: NoiseSchedule, x_t: np.ndarray, t: int) -> np.ndarray:
    """One-step denoising ``(x_t + (1 - alpha_bar_t) * score) / sqrt(alpha_bar_t)``."""
    t = s.check_step(t)
    score = m.evaluate(x_t, t)
    return tweedie_from_score(s, x_t, t, score)


def tweedie_from_score(s: NoiseSchedule, x_t: np.ndarray, t: int, score: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(score)):
        raise NumericError(f"score model returned non-finite values at t={t}")
    ab = s.alpha_bar[t]
    return (x_t + (1.0 - ab) * score) / np.sqrt(ab)
