"""Discrete variance-preserving noise schedule.

Timesteps are 1-indexed, ``t in {1..N}``. Every table carries an extra entry
at index 0 standing for the clean signal (``alpha_bar[0] == 1``) so that the
last reverse step ``t=1 -> 0`` needs no special casing.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .numerics import as_grid, gaussian_noise

__all__ = [
    "NoiseSchedule",
    "linear_beta_schedule",
    "forward_marginal",
    "timestep_sequence",
]

DEFAULT_STEPS = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
MAX_STEPS = 10000


@dataclass(frozen=True)
class NoiseSchedule:
    """Tables of a linear-beta DDPM schedule, each of length ``N + 1``."""

    N: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    tilde_sigma: np.ndarray
    sigma: np.ndarray

    def check_step(self, t: int) -> int:
        if not 1 <= int(t) <= self.N:
            raise InvalidArgumentError(f"timestep {t} outside [1, {self.N}]")
        return int(t)

    def transition(self, t: int, t_prev: int) -> tuple[float, float, float]:
        """Effective ``(alpha, beta, tilde_sigma)`` for a jump from ``t`` to ``t_prev``.

        For ``t_prev == t - 1`` these are the table entries; for sub-sampled
        step sequences they are the respaced equivalents.
        """
        if not 0 <= t_prev < t <= self.N:
            raise InvalidArgumentError(f"invalid transition {t} -> {t_prev}")
        ab_t = self.alpha_bar[t]
        ab_prev = self.alpha_bar[t_prev]
        alpha = ab_t / ab_prev
        beta = 1.0 - alpha
        tilde_var = beta * (1.0 - ab_prev) / (1.0 - ab_t)
        return float(alpha), float(beta), float(np.sqrt(tilde_var))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,beta,alpha,alpha_bar,tilde_sigma,sigma\n")
        for t in range(1, self.N + 1):
            buf.write(
                f"{t},{self.beta[t]!r},{self.alpha[t]!r},{self.alpha_bar[t]!r},"
                f"{self.tilde_sigma[t]!r},{self.sigma[t]!r}\n"
            )
        return buf.getvalue()


def linear_beta_schedule(
    N: int = DEFAULT_STEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    if not 1 <= N <= MAX_STEPS:
        raise InvalidArgumentError(f"N must lie in [1, {MAX_STEPS}], got {N}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise InvalidArgumentError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    beta = np.zeros(N + 1)
    beta[1:] = np.linspace(beta_start, beta_end, N) if N > 1 else beta_start
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    tilde_sigma = np.zeros(N + 1)
    # t = 1 has alpha_bar[0] = 1, so its ancestral variance is exactly zero
    tilde_sigma[1:] = np.sqrt(beta[1:] * (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]))
    sigma = np.sqrt(1.0 - alpha_bar)
    for arr in (beta, alpha, alpha_bar, tilde_sigma, sigma):
        arr.setflags(write=False)
    return NoiseSchedule(N, beta, alpha, alpha_bar, tilde_sigma, sigma)


def forward_marginal(
    s: NoiseSchedule, x0: np.ndarray, t: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Samples ``x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps``.

    Returns ``(x_t, eps)`` so the noise can serve as a score-matching target.
    """
    t = s.check_step(t)
    x0 = as_grid(x0, name="x0")
    eps = gaussian_noise(x0.shape, rng)
    return np.sqrt(s.alpha_bar[t]) * x0 + s.sigma[t] * eps, eps


def timestep_sequence(N: int, count: int | None = None) -> list[int]:
    """Strictly decreasing timesteps from ``N`` down to 1.

    ``count=None`` (or ``count >= N``) gives every step; otherwise ``count``
    evenly spaced steps that always include ``N`` and ``1``.
    """
    if N < 1:
        raise InvalidArgumentError("N must be at least 1")
    if count is None or count >= N:
        return list(range(N, 0, -1))
    if count < 2:
        raise InvalidArgumentError("a sub-sampled sequence needs at least 2 steps")
    raw = np.round(np.linspace(N, 1, count)).astype(int)
    steps = sorted(set(int(v) for v in raw), reverse=True)
    return steps
