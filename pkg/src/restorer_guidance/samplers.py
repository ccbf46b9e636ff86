"""Posterior sampling loops driven by a restorer.

All loops use 1-indexed timesteps and run ``t -> t_prev`` over a strictly
decreasing sequence ending at ``t = 1`` (whose successor is the clean level
``0``). Sub-sampled sequences use the respaced transition coefficients from
:meth:`NoiseSchedule.transition`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .degradations import LinearOperator, Restorer
from .errors import InvalidArgumentError, NumericError
from .guidance import (
    GuidanceParams,
    GuidanceTerms,
    measurement_boost_score,
    measurement_likelihood_score_baseline,
    restoration_likelihood_score,
)
from .numerics import as_grid, checksum, make_rng
from .schedule import NoiseSchedule, timestep_sequence
from .score_models import ScoreModel, tweedie_from_score

__all__ = [
    "SamplerConfig",
    "NullspaceConfig",
    "StepRecord",
    "Trajectory",
    "init_from_measurement",
    "unconditional_step",
    "restorer_guided_step",
    "sample",
    "sample_nullspace",
    "sample_dps_baseline",
    "sample_unconditional",
    "deteriorate",
]

SAMPLER_KINDS = ("ancestral", "deterministic")


@dataclass(frozen=True)
class SamplerConfig:
    """Everything one guided run needs besides the score model and restorer.

    ``steps=None`` walks every timestep of the schedule; an integer picks
    that many evenly spaced steps (always including ``N`` and ``1``).
    ``ddim_literal`` switches the deterministic update to the uncorrected
    form ``anchor - sqrt(1-ab_t) sqrt(1-ab_prev-tilde_sigma) * score``.
    """

    schedule: NoiseSchedule
    kind: str = "ancestral"
    steps: int | None = None
    guidance: GuidanceParams = field(default_factory=GuidanceParams)
    gradient_orientation: bool = True
    restorer_traveling: bool = False
    measurement_boosting: bool = False
    ddim_literal: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise InvalidArgumentError(f"unknown sampler kind {self.kind!r}")
        self.timesteps()

    def timesteps(self) -> list[int]:
        return timestep_sequence(self.schedule.N, self.steps)

    def pairs(self) -> list[tuple[int, int]]:
        seq = self.timesteps()
        return list(zip(seq, seq[1:] + [0]))

    def with_(self, **changes) -> "SamplerConfig":
        return replace(self, **changes)

    def with_guidance(self, **changes) -> "SamplerConfig":
        return replace(self, guidance=replace(self.guidance, **changes))


@dataclass(frozen=True)
class NullspaceConfig:
    """Range-space correction strengths ``sigma`` and noise scales ``phi``.

    Each may be a scalar or a sequence aligned with the step sequence.
    ``phi=None`` uses the ancestral ``tilde_sigma`` (or 0 for the
    deterministic kind).
    """

    schedule: NoiseSchedule
    sigma: float | Sequence[float] = 1.0
    phi: float | Sequence[float] | None = None
    kind: str = "ancestral"
    steps: int | None = None
    ddim_literal: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise InvalidArgumentError(f"unknown sampler kind {self.kind!r}")
        n = len(self.pairs())
        sig = self.sigma_values()
        if np.any(sig < 0) or np.any(sig > 1):
            raise InvalidArgumentError("range-space strengths must lie in [0, 1]")
        if self.phi is not None:
            phi = np.broadcast_to(np.asarray(self.phi, dtype=np.float64), (n,))
            if np.any(phi < 0):
                raise InvalidArgumentError("noise scales must be non-negative")

    def pairs(self) -> list[tuple[int, int]]:
        seq = timestep_sequence(self.schedule.N, self.steps)
        return list(zip(seq, seq[1:] + [0]))

    def sigma_values(self) -> np.ndarray:
        n = len(self.pairs())
        try:
            return np.broadcast_to(np.asarray(self.sigma, dtype=np.float64), (n,))
        except ValueError as exc:
            raise InvalidArgumentError(f"need {n} range-space strengths") from exc

    def phi_values(self) -> np.ndarray:
        pairs = self.pairs()
        if self.phi is None:
            if self.kind == "deterministic":
                return np.zeros(len(pairs))
            return np.array([self.schedule.transition(t, tp)[2] for t, tp in pairs])
        try:
            return np.broadcast_to(np.asarray(self.phi, dtype=np.float64), (len(pairs),))
        except ValueError as exc:
            raise InvalidArgumentError(f"need {len(pairs)} noise scales") from exc


@dataclass
class StepRecord:
    t: int
    x_t: np.ndarray | None
    x0_hat: np.ndarray | None
    norms: dict

    def to_json(self) -> dict:
        row = {"t": self.t, **{k: v for k, v in self.norms.items()}}
        if self.x_t is not None:
            row["checksum"] = checksum(self.x_t)
        return row


@dataclass
class Trajectory:
    records: list[StepRecord] = field(default_factory=list)
    final: np.ndarray | None = None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in self.records)


def init_from_measurement(y: np.ndarray, s: NoiseSchedule, N_start: int, rng: np.random.Generator) -> np.ndarray:
    """``x_N ~ N(sqrt(alpha_bar_N) y, (1 - alpha_bar_N) I)``."""
    y = as_grid(y, name="y")
    t = s.check_step(N_start)
    return np.sqrt(s.alpha_bar[t]) * y + s.sigma[t] * rng.standard_normal(y.shape)


def _prior_update(
    x_t: np.ndarray,
    score: np.ndarray,
    anchor: np.ndarray,
    s: NoiseSchedule,
    t: int,
    t_prev: int,
    kind: str,
    ddim_literal: bool,
    rng: np.random.Generator,
) -> np.ndarray:
    ab_t = s.alpha_bar[t]
    ab_prev = s.alpha_bar[t_prev]
    alpha, beta, tilde_sigma = s.transition(t, t_prev)
    if kind == "ancestral":
        c_state = math.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t)
        c_anchor = math.sqrt(ab_prev) * beta / (1.0 - ab_t)
        out = c_state * x_t + c_anchor * anchor
        if tilde_sigma > 0.0:
            out = out + tilde_sigma * rng.standard_normal(x_t.shape)
        return out
    if ddim_literal:
        return anchor - math.sqrt(1.0 - ab_t) * math.sqrt(1.0 - ab_prev) * score
    eps_hat = -math.sqrt(1.0 - ab_t) * score
    return math.sqrt(ab_prev) * anchor + math.sqrt(1.0 - ab_prev) * eps_hat


def unconditional_step(
    x_t: np.ndarray,
    t: int,
    t_prev: int,
    m: ScoreModel,
    s: NoiseSchedule,
    kind: str,
    rng: np.random.Generator,
    ddim_literal: bool = False,
) -> np.ndarray:
    """Plain reverse step with no guidance and no restorer."""
    score = m.evaluate(x_t, t)
    x0_hat = tweedie_from_score(s, x_t, t, score)
    return _prior_update(x_t, score, x0_hat, s, t, t_prev, kind, ddim_literal, rng)


def restorer_guided_step(
    x_t: np.ndarray,
    t: int,
    t_prev: int,
    m: ScoreModel,
    r: Restorer,
    y: np.ndarray,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    restored_y: np.ndarray | None = None,
    keep_states: bool = True,
) -> tuple[np.ndarray, StepRecord]:
    """One iteration of restorer-guided posterior sampling.

    ``restored_y`` caches ``R(y)`` across steps; it is computed on demand
    when omitted.
    """
    s = cfg.schedule
    g = cfg.guidance
    score = m.evaluate(x_t, t)
    prior_score = g.eta * score if g.eta_on == "score" else score
    x0_hat = tweedie_from_score(s, x_t, t, prior_score)
    anchor = r.restore(x0_hat) if cfg.restorer_traveling else x0_hat
    x_uncond = _prior_update(x_t, prior_score, anchor, s, t, t_prev, cfg.kind, cfg.ddim_literal, rng)

    x_eval = x_uncond if cfg.gradient_orientation else x_t
    if g.rho != 0.0:
        if restored_y is None:
            restored_y = r.restore(y)
        r_t = g.rho * restoration_likelihood_score(x_eval, restored_y, s, t, g.normalize_likelihood)
    else:
        r_t = np.zeros_like(x_t)
    if cfg.measurement_boosting and g.zeta != 0.0:
        m_t = g.zeta * measurement_boost_score(x_eval, y, s, t)
    else:
        m_t = np.zeros_like(x_t)

    scale = g.eta if g.eta_on == "update" else 1.0
    x_prev = scale * x_uncond - g.direction * r_t + g.measurement_sign * m_t
    if not np.all(np.isfinite(x_prev)):
        raise NumericError(f"non-finite state after step t={t}")
    terms = GuidanceTerms(prior_score, r_t, m_t)
    record = StepRecord(t, x_t if keep_states else None, x0_hat if keep_states else None, terms.norms)
    return x_prev, record


def sample(
    y: np.ndarray,
    m: ScoreModel,
    r: Restorer,
    cfg: SamplerConfig,
    rng: np.random.Generator | None = None,
    keep_states: bool = True,
) -> tuple[np.ndarray, Trajectory]:
    """Runs the full guided loop from ``x_N`` drawn around ``sqrt(alpha_bar_N) y``."""
    y = as_grid(y, name="y")
    rng = make_rng(cfg.seed) if rng is None else rng
    pairs = cfg.pairs()
    x = init_from_measurement(y, cfg.schedule, pairs[0][0], rng)
    restored_y = r.restore(y) if cfg.guidance.rho != 0.0 else None
    traj = Trajectory()
    for t, t_prev in pairs:
        x, rec = restorer_guided_step(x, t, t_prev, m, r, y, cfg, rng, restored_y, keep_states)
        traj.records.append(rec)
    traj.final = x
    return x, traj


def sample_unconditional(
    shape: Sequence[int] | np.ndarray,
    m: ScoreModel,
    s: NoiseSchedule,
    kind: str = "ancestral",
    steps: int | None = None,
    rng: np.random.Generator | None = None,
    x_init: np.ndarray | None = None,
) -> np.ndarray:
    """Draws from the score model alone, starting from ``x_init`` or pure noise."""
    rng = make_rng(0) if rng is None else rng
    seq = timestep_sequence(s.N, steps)
    x = rng.standard_normal(tuple(shape)) if x_init is None else np.array(x_init, dtype=np.float64)
    for t, t_prev in zip(seq, seq[1:] + [0]):
        x = unconditional_step(x, t, t_prev, m, s, kind, rng)
    return x


def sample_nullspace(
    y: np.ndarray,
    m: ScoreModel,
    r: Restorer,
    nc: NullspaceConfig,
    rng: np.random.Generator | None = None,
    keep_states: bool = True,
) -> tuple[np.ndarray, Trajectory]:
    """Range/null-space variant: pull the Tweedie estimate toward ``R(y)`` by ``sigma_t``."""
    y = as_grid(y, name="y")
    s = nc.schedule
    rng = make_rng(nc.seed) if rng is None else rng
    pairs = nc.pairs()
    sig = nc.sigma_values()
    phi = nc.phi_values()
    restored_y = r.restore(y)
    x = init_from_measurement(y, s, pairs[0][0], rng)
    traj = Trajectory()
    for i, (t, t_prev) in enumerate(pairs):
        score = m.evaluate(x, t)
        x0_t = tweedie_from_score(s, x, t, score)
        x0_hat = x0_t - sig[i] * (x0_t - restored_y)
        ab_t = s.alpha_bar[t]
        ab_prev = s.alpha_bar[t_prev]
        noise = phi[i] * rng.standard_normal(x.shape) if phi[i] > 0 else 0.0
        if nc.kind == "ancestral":
            alpha, beta, _ = s.transition(t, t_prev)
            c_state = math.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t)
            c_anchor = math.sqrt(ab_prev) * beta / (1.0 - ab_t)
            x_next = c_state * x + c_anchor * x0_hat + noise
        elif nc.ddim_literal:
            x_next = x0_hat + noise - math.sqrt(1.0 - ab_t) * math.sqrt(1.0 - ab_prev) * score
        else:
            eps_hat = -math.sqrt(1.0 - ab_t) * score
            rest = max(1.0 - ab_prev - phi[i] ** 2, 0.0)
            x_next = math.sqrt(ab_prev) * x0_hat + math.sqrt(rest) * eps_hat + noise
        if not np.all(np.isfinite(x_next)):
            raise NumericError(f"non-finite state after null-space step t={t}")
        norms = {"prior": float(np.linalg.norm(score)), "restorer": float(np.linalg.norm(x0_t - x0_hat)), "measurement": 0.0}
        traj.records.append(StepRecord(t, x if keep_states else None, x0_hat if keep_states else None, norms))
        x = x_next
    traj.final = x
    return x, traj


def sample_dps_baseline(
    y: np.ndarray,
    m: ScoreModel,
    h: LinearOperator,
    s: NoiseSchedule,
    step_size: float,
    seed: int = 0,
    kind: str = "ancestral",
    steps: int | None = None,
    rng: np.random.Generator | None = None,
    keep_states: bool = True,
) -> tuple[np.ndarray, Trajectory]:
    """Measurement-likelihood baseline: unconditional step minus the residual gradient."""
    y = as_grid(y, name="y")
    rng = make_rng(seed) if rng is None else rng
    seq = timestep_sequence(s.N, steps)
    x = init_from_measurement(y, s, seq[0], rng)
    traj = Trajectory()
    for t, t_prev in zip(seq, seq[1:] + [0]):
        grad = measurement_likelihood_score_baseline(x, y, h, m, s, t, step_size)
        x_uncond = unconditional_step(x, t, t_prev, m, s, kind, rng)
        norms = {"prior": 0.0, "restorer": 0.0, "measurement": float(np.linalg.norm(grad))}
        traj.records.append(StepRecord(t, x if keep_states else None, None, norms))
        x = x_uncond - grad
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite state after baseline step t={t}")
    traj.final = x
    return x, traj


def deteriorate(
    x_clean: np.ndarray,
    m: ScoreModel,
    r: Restorer,
    cfg: SamplerConfig,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, Trajectory]:
    """Strengthens the degradation ``r`` removes by reversing the restorer term.

    Restorer traveling is always disabled here.
    """
    cfg = replace(cfg, restorer_traveling=False, guidance=replace(cfg.guidance, direction=-1))
    return sample(x_clean, m, r, cfg, rng)


def run_many(
    ys: Iterable[np.ndarray], m: ScoreModel, r: Restorer, cfg: SamplerConfig
) -> list[np.ndarray]:
    """Solves each measurement with its own stream ``(cfg.seed, index)``."""
    return [sample(y, m, r, cfg, make_rng(cfg.seed, i), keep_states=False)[0] for i, y in enumerate(ys)]
