"""Likelihood scores and their combination with the prior score.

Sign conventions follow the sampler update
``x_{t-1} = eta * x' - direction * r_t + measurement_sign * m_t``:
:func:`restoration_likelihood_score` and :func:`measurement_boost_score`
both return the gradient of a squared distance, and the caller decides
whether to subtract (descent toward the anchor) or add it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .degradations import LinearOperator
from .errors import InvalidArgumentError, NumericError
from .schedule import NoiseSchedule
from .score_models import ScoreModel, tweedie_denoise

__all__ = [
    "GuidanceParams",
    "GuidanceTerms",
    "COMBINE_MODES",
    "restoration_likelihood_score",
    "measurement_boost_score",
    "combine_conditional_score",
    "measurement_likelihood_score_baseline",
]

COMBINE_MODES = ("weighted", "stepsize", "classifier_free")
BASELINE_FD_STEP = 1e-4


@dataclass(frozen=True)
class GuidanceParams:
    """Step sizes and switches for restorer guidance.

    ``direction=-1`` reverses the restorer term (deterioration control).
    ``measurement_sign=+1`` adds the measurement term as written in the
    reference algorithm (gradient ascent); ``-1`` flips it to descent.
    ``eta_on`` selects whether ``eta`` scales the whole unconditional update
    (``"update"``) or only the prior score inside it (``"score"``).
    """

    eta: float = 1.0
    rho: float = 0.0
    zeta: float = 0.0
    w: float = 1.0
    direction: int = 1
    normalize_likelihood: bool = False
    measurement_sign: int = 1
    eta_on: str = "update"

    def __post_init__(self):
        for name in ("eta", "rho", "zeta"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise InvalidArgumentError(f"{name} must be finite and non-negative")
        if self.direction not in (1, -1):
            raise InvalidArgumentError("direction must be +1 or -1")
        if self.measurement_sign not in (1, -1):
            raise InvalidArgumentError("measurement_sign must be +1 or -1")
        if self.eta_on not in ("update", "score"):
            raise InvalidArgumentError("eta_on must be 'update' or 'score'")
        if self.zeta > self.rho / 10.0:
            warnings.warn(
                f"measurement step zeta={self.zeta:g} exceeds rho/10={self.rho / 10:g}",
                stacklevel=3,
            )


@dataclass(frozen=True)
class GuidanceTerms:
    prior_term: np.ndarray
    restorer_term: np.ndarray
    measurement_term: np.ndarray
    norms: dict = field(init=False)

    def __post_init__(self):
        norms = {
            "prior": float(np.linalg.norm(self.prior_term)),
            "restorer": float(np.linalg.norm(self.restorer_term)),
            "measurement": float(np.linalg.norm(self.measurement_term)),
        }
        if not all(math.isfinite(v) for v in norms.values()):
            raise NumericError("guidance term norm is not finite")
        object.__setattr__(self, "norms", norms)


def _same_shape(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def restoration_likelihood_score(
    x_eval: np.ndarray,
    restored: np.ndarray,
    s: NoiseSchedule,
    t: int,
    normalize: bool = False,
) -> np.ndarray:
    """Gradient of ``||x_eval - sqrt(alpha_bar_t) * restored||^2``.

    With ``normalize`` the result is divided by ``sigma_t^2``, giving the
    (negated) score of ``N(sqrt(alpha_bar_t) R(y), sigma_t^2 I)`` up to the
    factor 2; by default that normalization is dropped.
    """
    x_eval, restored = _same_shape(x_eval, restored)
    t = s.check_step(t)
    grad = 2.0 * (x_eval - np.sqrt(s.alpha_bar[t]) * restored)
    if normalize:
        grad = grad / s.sigma[t] ** 2
    return grad


def measurement_boost_score(x_eval: np.ndarray, y: np.ndarray, s: NoiseSchedule, t: int) -> np.ndarray:
    """Gradient of ``||x_eval - sqrt(alpha_bar_t) * y||^2``."""
    x_eval, y = _same_shape(x_eval, y)
    t = s.check_step(t)
    return 2.0 * (x_eval - np.sqrt(s.alpha_bar[t]) * y)


def combine_conditional_score(
    prior_score: np.ndarray,
    likelihood_score: np.ndarray,
    p: GuidanceParams,
    mode: str = "weighted",
) -> np.ndarray:
    """Combines prior and likelihood terms.

    ``weighted``: ``(1 - w) prior + w likelihood`` where ``likelihood`` is a
    score. ``classifier_free``: ``(w + 1) likelihood - w prior``.
    ``stepsize``: ``eta * prior - direction * rho * likelihood`` where
    ``likelihood`` is the squared-distance gradient returned by
    :func:`restoration_likelihood_score`.
    """
    prior_score, likelihood_score = _same_shape(prior_score, likelihood_score)
    if mode == "weighted":
        return (1.0 - p.w) * prior_score + p.w * likelihood_score
    if mode == "stepsize":
        return p.eta * prior_score - p.direction * (p.rho * likelihood_score)
    if mode == "classifier_free":
        return (p.w + 1.0) * likelihood_score - p.w * prior_score
    raise InvalidArgumentError(f"unknown combination mode {mode!r}; expected one of {COMBINE_MODES}")


def measurement_likelihood_score_baseline(
    x_t: np.ndarray,
    y: np.ndarray,
    h: LinearOperator,
    m: ScoreModel,
    s: NoiseSchedule,
    t: int,
    step_size: float,
    fd_step: float = BASELINE_FD_STEP,
) -> np.ndarray:
    """``step_size * grad_{x_t} ||y - H x0_hat(x_t)||^2`` through the Tweedie map.

    The Tweedie Jacobian ``(I + (1 - alpha_bar) Hess log p) / sqrt(alpha_bar)``
    is symmetric for a true score, so the vector-Jacobian product equals a
    Jacobian-vector product, which is taken by one central difference of the
    Tweedie map along the residual direction.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    t = s.check_step(t)
    if step_size == 0.0:
        return np.zeros_like(x_t)
    x0_hat = tweedie_denoise(m, s, x_t, t)
    resid = np.asarray(y, dtype=np.float64) - h.apply(x0_hat)
    # d/dx0 ||y - H x0||^2
    v = -2.0 * h.apply_adjoint(resid)
    scale = float(np.linalg.norm(v))
    if scale == 0.0:
        return np.zeros_like(x_t)
    direction = v / scale
    plus = tweedie_denoise(m, s, x_t + fd_step * direction, t)
    minus = tweedie_denoise(m, s, x_t - fd_step * direction, t)
    grad = scale * (plus - minus) / (2.0 * fd_step)
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite baseline gradient at t={t}")
    return step_size * grad
