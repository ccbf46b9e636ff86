"""Experiment orchestration: corpora, configured runs, ablations, OOD studies, reports."""

from __future__ import annotations

import csv
import io
import json
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import config as config_mod
from .degradations import (
    DegradationSpec,
    DehazeRestorer,
    DerainRestorer,
    IdentityRestorer,
    LinearOperator,
    Restorer,
    degrade,
    mismatched_restorer,
    tikhonov_restorer,
)
from .errors import ConfigError, InvalidArgumentError, TrialFailure
from .guidance import GuidanceParams
from .mlp import MlpScoreNet
from .numerics import high_frequency_ratio, make_rng, psnr, ssim, write_grd, write_pgm
from .samplers import NullspaceConfig, SamplerConfig, deteriorate, sample, sample_dps_baseline, sample_nullspace
from .schedule import NoiseSchedule, linear_beta_schedule
from .score_models import GmmPrior, GmmScore, ScoreModel, SpectralGaussianPrior, SpectralGaussianScore

__all__ = [
    "CORPUS_KINDS",
    "CSV_HEADER",
    "make_corpus",
    "default_gmm",
    "RestorerSpec",
    "PriorSpec",
    "DpsSpec",
    "ExperimentConfig",
    "MetricsReport",
    "run_experiment",
    "run_ablation",
    "run_ood_study",
    "run_control",
    "ControlResult",
    "degraded_inputs",
    "experiment_from_values",
]

CORPUS_KINDS = ("smooth-blobs", "checkerboards", "gmm-draws")
IMAGE_KINDS = ("smooth-blobs", "checkerboards")
CSV_HEADER = ("trial", "task", "sampler", "rt", "mb", "psnr", "ssim", "seconds")
AGG_TOL = 1e-12
# stream offset separating degradation noise from sampler noise
DEGRADE_STREAM = 1_000_000


def default_gmm(size: int) -> GmmPrior:
    """Two-component mixture used for ``gmm-draws`` when none is given."""
    means = np.stack([np.full(size, -1.0), np.full(size, 1.0)])
    return GmmPrior.isotropic([0.5, 0.5], means, 0.25)


def _blobs(count: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    yy, xx = np.mgrid[0:size, 0:size]
    out = []
    for _ in range(count):
        img = np.zeros((size, size))
        for _ in range(int(rng.integers(3, 7))):
            cy, cx = rng.uniform(0, size, 2)
            r = rng.uniform(2, 6)
            a = rng.uniform(-1, 1)
            # periodic distances so the images suit circular operators
            dy = np.minimum(abs(yy - cy), size - abs(yy - cy))
            dx = np.minimum(abs(xx - cx), size - abs(xx - cx))
            img += a * np.exp(-(dy**2 + dx**2) / (2 * r * r))
        img = (img - img.min()) / (img.max() - img.min() + 1e-12)
        out.append(img)
    return out


def _checkerboards(count: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    yy, xx = np.mgrid[0:size, 0:size]
    out = []
    for _ in range(count):
        cell = int(rng.integers(2, size // 4 + 1))
        oy, ox = rng.integers(0, cell, 2)
        lo, hi = np.sort(rng.uniform(0.0, 1.0, 2))
        parity = ((yy + oy) // cell + (xx + ox) // cell) % 2
        out.append(np.where(parity == 1, hi, lo).astype(np.float64))
    return out


def make_corpus(
    kind: str, count: int, size: int, seed: int, gmm: GmmPrior | None = None
) -> list[np.ndarray]:
    """Deterministic synthetic clean signals.

    Image kinds give ``size x size`` grids in ``[0, 1]``; ``gmm-draws`` gives
    vectors of length ``size`` drawn from ``gmm`` (default :func:`default_gmm`).
    """
    if kind not in CORPUS_KINDS:
        raise InvalidArgumentError(f"unknown corpus kind {kind!r}; expected one of {CORPUS_KINDS}")
    if count < 0:
        raise InvalidArgumentError("count must be non-negative")
    if kind in IMAGE_KINDS and size < 16:
        raise InvalidArgumentError("image corpora need size >= 16")
    if size < 1:
        raise InvalidArgumentError("size must be positive")
    if count == 0:
        return []
    rng = make_rng(seed)
    if kind == "smooth-blobs":
        return _blobs(count, size, rng)
    if kind == "checkerboards":
        return _checkerboards(count, size, rng)
    gmm = default_gmm(size) if gmm is None else gmm
    return list(gmm.sample(count, rng))


@dataclass(frozen=True)
class RestorerSpec:
    """Which prototype to build and the degradation it was designed for.

    ``built_for=None`` means the task's own degradation (matched).
    """

    kind: str = "tikhonov"
    lam: float = 0.2
    regularizer: str = "gradient"
    threshold: float = 0.1
    built_for: DegradationSpec | None = None

    def build(self, task: DegradationSpec) -> Restorer:
        target = task if self.built_for is None else self.built_for
        if self.kind == "identity":
            base: Restorer = IdentityRestorer()
        elif self.kind == "tikhonov":
            base = tikhonov_restorer(target.operator(), self.lam, target.noise_std, regularizer=self.regularizer)
        elif self.kind == "dehaze":
            base = DehazeRestorer(target.transmission, target.airlight)
        elif self.kind == "derain":
            base = DerainRestorer(self.threshold)
        else:
            raise InvalidArgumentError(f"unknown restorer kind {self.kind!r}")
        if self.built_for is not None and self.built_for != task:
            return mismatched_restorer(base, self.built_for)
        return base


@dataclass(frozen=True)
class PriorSpec:
    """``spectral``: stationary Gaussian fitted to a training corpus of the
    evaluation kind. ``gmm``: the exact generating mixture of ``gmm-draws``.
    ``net``: a saved :class:`MlpScoreNet` directory."""

    source: str = "spectral"
    path: str = ""
    train_count: int = 400
    train_seed: int = 1


@dataclass(frozen=True)
class DpsSpec:
    """Measurement-likelihood baseline; ``operator=None`` uses the task's own operator."""

    step_size: float = 1.0
    operator: DegradationSpec | None = None
    kind: str = "ancestral"
    steps: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    task: DegradationSpec
    sampler: SamplerConfig | NullspaceConfig | DpsSpec
    restorer: RestorerSpec = field(default_factory=RestorerSpec)
    prior: PriorSpec = field(default_factory=PriorSpec)
    trials: int = 50
    corpus_kind: str = "smooth-blobs"
    corpus_size: int = 32
    corpus_seed: int = 2
    seed: int = 7
    schedule: NoiseSchedule | None = None
    output_dir: str | Path | None = None
    write_images: bool = True
    label: str = ""
    digest: str = ""

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trial count must be at least 1")
        if self.prior.source == "net" and not Path(self.prior.path).is_dir():
            raise ConfigError(f"prior network directory {self.prior.path!r} does not exist")
        if isinstance(self.sampler, DpsSpec) and self.schedule is None:
            raise ConfigError("the measurement baseline needs an explicit schedule")

    @property
    def the_schedule(self) -> NoiseSchedule:
        if self.schedule is not None:
            return self.schedule
        return self.sampler.schedule

    @property
    def variant(self) -> str:
        if isinstance(self.sampler, NullspaceConfig):
            return "nullspace"
        if isinstance(self.sampler, DpsSpec):
            return "dps"
        return "bayesian"

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


@dataclass
class MetricsReport:
    """Per-trial rows plus aggregates keyed by ``(task, sampler, rt, mb)``."""

    rows: list[dict] = field(default_factory=list)
    config_digest: str = ""
    wall_clock: float = 0.0

    def aggregates(self) -> dict[tuple, dict[str, float]]:
        groups: dict[tuple, list[dict]] = {}
        for row in self.rows:
            groups.setdefault((row["task"], row["sampler"], row["rt"], row["mb"]), []).append(row)
        out = {}
        for key, rows in groups.items():
            p = np.array([r["psnr"] for r in rows], dtype=np.float64)
            q = np.array([r["ssim"] for r in rows], dtype=np.float64)
            out[key] = {
                "n": len(rows),
                "psnr_mean": float(p.mean()),
                "psnr_std": float(p.std()),
                "ssim_mean": float(q.mean()),
                "ssim_std": float(q.std()),
            }
        return out

    def mean_psnr(self, task: str | None = None, sampler: str | None = None, rt=None, mb=None) -> float:
        vals = [
            r["psnr"]
            for r in self.rows
            if (task is None or r["task"] == task)
            and (sampler is None or r["sampler"] == sampler)
            and (rt is None or r["rt"] == int(rt))
            and (mb is None or r["mb"] == int(mb))
        ]
        if not vals:
            raise InvalidArgumentError("no rows match")
        return float(np.mean(vals))

    def to_csv(self, timing: bool = True) -> str:
        """CSV text; ``timing=False`` zeroes the wall-clock column for byte comparisons."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.rows:
            writer.writerow(
                [
                    r["trial"],
                    r["task"],
                    r["sampler"],
                    r["rt"],
                    r["mb"],
                    repr(float(r["psnr"])),
                    repr(float(r["ssim"])),
                    repr(float(r["seconds"])) if timing else "0",
                ]
            )
        return buf.getvalue()

    def summary(self) -> dict:
        aggs = self.aggregates()
        return {
            "config_digest": self.config_digest,
            "wall_clock": self.wall_clock,
            "aggregates": [
                {"task": k[0], "sampler": k[1], "rt": k[2], "mb": k[3], **v} for k, v in aggs.items()
            ],
        }

    def write(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.csv").write_text(self.to_csv())
        (directory / "summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, text: str) -> "MetricsReport":
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader, ()))
        if header != CSV_HEADER:
            raise InvalidArgumentError(f"unexpected report header {header}")
        rows = []
        for rec in reader:
            if not rec:
                continue
            rows.append(
                {
                    "trial": int(rec[0]),
                    "task": rec[1],
                    "sampler": rec[2],
                    "rt": int(rec[3]),
                    "mb": int(rec[4]),
                    "psnr": float(rec[5]),
                    "ssim": float(rec[6]),
                    "seconds": float(rec[7]),
                }
            )
        return cls(rows)

    @classmethod
    def load(cls, directory: str | Path) -> "MetricsReport":
        """Reads ``report.csv`` and checks ``summary.json`` aggregates against the rows."""
        directory = Path(directory)
        report = cls.from_csv((directory / "report.csv").read_text())
        summary_path = directory / "summary.json"
        if summary_path.exists():
            summary = json.loads(summary_path.read_text())
            report.config_digest = summary.get("config_digest", "")
            report.wall_clock = summary.get("wall_clock", 0.0)
            fresh = report.aggregates()
            for agg in summary["aggregates"]:
                key = (agg["task"], agg["sampler"], agg["rt"], agg["mb"])
                if key not in fresh:
                    raise InvalidArgumentError(f"summary group {key} has no rows")
                for name, value in fresh[key].items():
                    stored = agg[name]
                    if not (stored == value or abs(stored - value) <= AGG_TOL):
                        raise InvalidArgumentError(f"aggregate {name} of {key} disagrees with rows")
        return report


def _score_model(cfg: ExperimentConfig) -> ScoreModel:
    s = cfg.the_schedule
    if cfg.prior.source == "spectral":
        if cfg.corpus_kind not in IMAGE_KINDS:
            raise ConfigError("the spectral prior needs an image corpus")
        train = make_corpus(cfg.corpus_kind, cfg.prior.train_count, cfg.corpus_size, cfg.prior.train_seed)
        return SpectralGaussianScore(SpectralGaussianPrior.fit(train), s)
    if cfg.prior.source == "gmm":
        if cfg.corpus_kind != "gmm-draws":
            raise ConfigError("the gmm prior needs the gmm-draws corpus")
        return GmmScore(default_gmm(cfg.corpus_size), s)
    if cfg.prior.source == "net":
        return MlpScoreNet.load(cfg.prior.path).bind(s)
    raise ConfigError(f"unknown prior source {cfg.prior.source!r}")


def _sampler_tag(cfg: ExperimentConfig) -> tuple[str, int, int]:
    if isinstance(cfg.sampler, SamplerConfig):
        return "bayesian", int(cfg.sampler.restorer_traveling), int(cfg.sampler.measurement_boosting)
    return cfg.variant, 0, 0


def degraded_inputs(cfg: ExperimentConfig) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Clean corpus and its degraded measurements; depends only on task, corpus and seed."""
    clean = make_corpus(cfg.corpus_kind, cfg.trials, cfg.corpus_size, cfg.corpus_seed)
    ys = [degrade(x, cfg.task, make_rng(cfg.seed, DEGRADE_STREAM + i)) for i, x in enumerate(clean)]
    return clean, ys


def _solve(cfg: ExperimentConfig, m: ScoreModel, r: Restorer, y: np.ndarray, i: int) -> np.ndarray:
    rng = make_rng(cfg.seed, i)
    if isinstance(cfg.sampler, SamplerConfig):
        return sample(y, m, r, cfg.sampler, rng, keep_states=False)[0]
    if isinstance(cfg.sampler, NullspaceConfig):
        return sample_nullspace(y, m, r, cfg.sampler, rng, keep_states=False)[0]
    spec = cfg.sampler.operator if cfg.sampler.operator is not None else cfg.task
    op: LinearOperator = spec.operator()
    d = cfg.sampler
    return sample_dps_baseline(y, m, op, cfg.the_schedule, d.step_size, kind=d.kind, steps=d.steps, rng=rng, keep_states=False)[0]


def _metric_row(i, task, sampler, rt, mb, estimate, clean, seconds) -> dict:
    return {
        "trial": i,
        "task": task,
        "sampler": sampler,
        "rt": rt,
        "mb": mb,
        "psnr": psnr(estimate, clean),
        "ssim": ssim(estimate, clean) if estimate.ndim == 2 else float("nan"),
        "seconds": seconds,
    }


def _write_image(directory: Path, name: str, x: np.ndarray) -> None:
    write_grd(directory / f"{name}.grd", x)
    if x.ndim == 2:
        write_pgm(directory / f"{name}.pgm", x)


def run_experiment(
    cfg: ExperimentConfig,
    *,
    task_label: str | None = None,
    include_prototype: bool = True,
    model: ScoreModel | None = None,
) -> MetricsReport:
    """Degrades the corpus, solves every item and scores it against ground truth.

    The raw restorer output ``R(y)`` is scored as an extra ``prototype``
    row per trial. Any exception inside a trial is re-raised as
    :class:`TrialFailure` carrying the trial index.
    """
    start = time.perf_counter()
    task = task_label or cfg.label or cfg.task.family
    m = _score_model(cfg) if model is None else model
    r = cfg.restorer.build(cfg.task)
    clean, ys = degraded_inputs(cfg)
    sampler, rt, mb = _sampler_tag(cfg)
    image_dir = None
    if cfg.output_dir is not None and cfg.write_images:
        image_dir = Path(cfg.output_dir) / "images"
        image_dir.mkdir(parents=True, exist_ok=True)
    report = MetricsReport(config_digest=cfg.digest)
    for i, (x, y) in enumerate(zip(clean, ys)):
        try:
            t0 = time.perf_counter()
            proto = r.restore(y)
            t1 = time.perf_counter()
            est = _solve(cfg, m, r, y, i)
            t2 = time.perf_counter()
            if include_prototype:
                report.rows.append(_metric_row(i, task, "prototype", 0, 0, proto, x, t1 - t0))
            report.rows.append(_metric_row(i, task, sampler, rt, mb, est, x, t2 - t1))
        except Exception as exc:  # noqa: BLE001 - any trial failure aborts with its index
            raise TrialFailure(i, exc) from exc
        if image_dir is not None:
            tag = f"{task}_{sampler}_rt{rt}_mb{mb}"
            _write_image(image_dir, f"trial{i:03d}_clean", x)
            _write_image(image_dir, f"trial{i:03d}_degraded", y)
            _write_image(image_dir, f"trial{i:03d}_prototype", proto)
            _write_image(image_dir, f"trial{i:03d}_{tag}", est)
    report.wall_clock = time.perf_counter() - start
    if cfg.output_dir is not None:
        report.write(cfg.output_dir)
    return report


ABLATION_GRID = ((False, False), (True, False), (False, True), (True, True))


def run_ablation(cfg: ExperimentConfig) -> MetricsReport:
    """Restorer traveling x measurement boosting, rows ordered ✗✗, ✓✗, ✗✓, ✓✓.

    All four runs see the same degraded inputs and sampler streams. The
    prototype rows are emitted once.
    """
    if not isinstance(cfg.sampler, SamplerConfig):
        raise InvalidArgumentError("the ablation grid needs the bayesian sampler")
    m = _score_model(cfg)
    report = MetricsReport(config_digest=cfg.digest)
    start = time.perf_counter()
    for k, (rt, mb) in enumerate(ABLATION_GRID):
        sub = cfg.with_(
            sampler=cfg.sampler.with_(restorer_traveling=rt, measurement_boosting=mb),
            output_dir=None if cfg.output_dir is None else Path(cfg.output_dir) / f"rt{int(rt)}_mb{int(mb)}",
        )
        part = run_experiment(sub, include_prototype=(k == 0), model=m)
        report.rows.extend(part.rows)
    report.wall_clock = time.perf_counter() - start
    if cfg.output_dir is not None:
        report.write(cfg.output_dir)
    return report


def run_ood_study(cfg: ExperimentConfig, mismatched: RestorerSpec, zeta_gain: float = 1.5) -> MetricsReport:
    """Prototype vs guided solver, once with ``cfg.restorer`` and once with ``mismatched``.

    When the two restorer specs differ, the mismatched guided run turns on
    restorer traveling and measurement boosting with ``zeta`` multiplied by
    ``zeta_gain``. Rows are tagged ``matched`` / ``mismatched``.
    """
    if not isinstance(cfg.sampler, SamplerConfig):
        raise InvalidArgumentError("the OOD study needs the bayesian sampler")
    m = _score_model(cfg)
    start = time.perf_counter()
    report = MetricsReport(config_digest=cfg.digest)
    out = None if cfg.output_dir is None else Path(cfg.output_dir)
    matched = run_experiment(
        cfg.with_(output_dir=None if out is None else out / "matched"), task_label="matched", model=m
    )
    if mismatched == cfg.restorer:
        mis_cfg = cfg
    else:
        sc = cfg.sampler
        g = sc.guidance
        boosted = _quiet_guidance(g, g.zeta * zeta_gain)
        mis_cfg = cfg.with_(
            restorer=mismatched,
            sampler=sc.with_(restorer_traveling=True, measurement_boosting=True, guidance=boosted),
        )
    mis = run_experiment(
        mis_cfg.with_(output_dir=None if out is None else out / "mismatched"), task_label="mismatched", model=m
    )
    report.rows = matched.rows + mis.rows
    report.wall_clock = time.perf_counter() - start
    if out is not None:
        report.write(out)
    return report


def _quiet_guidance(g: GuidanceParams, zeta: float) -> GuidanceParams:
    """Amplified boosting deliberately exceeds the usual zeta bound; skip the warning."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return replace(g, zeta=zeta)


@dataclass
class ControlResult:
    rhos: tuple[float, ...]
    images: list[np.ndarray]
    metric: list[float]

    def monotone(self) -> bool:
        d = np.diff(self.metric)
        return bool(np.all(d >= 0) or np.all(d <= 0))

    def to_csv(self) -> str:
        lines = ["rho,high_frequency_ratio"]
        lines += [f"{r!r},{v!r}" for r, v in zip(self.rhos, self.metric)]
        return "\n".join(lines) + "\n"


def run_control(
    cfg: ExperimentConfig, rhos: Sequence[float] = (0.0, 0.3, 1.0), item: int = 0
) -> ControlResult:
    """Deterioration sweep: reversed restorer guidance on one clean item per ``rho``.

    Every ``rho`` uses the same sampler stream. The metric is the
    high-frequency energy ratio of the output.
    """
    if not isinstance(cfg.sampler, SamplerConfig):
        raise InvalidArgumentError("deterioration control needs the bayesian sampler")
    m = _score_model(cfg)
    r = cfg.restorer.build(cfg.task)
    clean = make_corpus(cfg.corpus_kind, item + 1, cfg.corpus_size, cfg.corpus_seed)[item]
    images, metric = [], []
    for rho in rhos:
        sc = cfg.sampler.with_guidance(rho=float(rho), zeta=0.0)
        out = deteriorate(clean, m, r, sc, make_rng(cfg.seed, item))[0]
        images.append(out)
        metric.append(high_frequency_ratio(out))
    result = ControlResult(tuple(float(v) for v in rhos), images, metric)
    if cfg.output_dir is not None:
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_image(out_dir, "clean", clean)
        for rho, img in zip(rhos, images):
            _write_image(out_dir, f"rho_{rho:g}", img)
        if clean.ndim == 2:
            write_pgm(out_dir / "strip.pgm", np.concatenate(images, axis=1))
        (out_dir / "control.csv").write_text(result.to_csv())
    return result


def experiment_from_values(values: Mapping[str, Any], output_dir: str | Path | None = None) -> ExperimentConfig:
    """Builds an :class:`ExperimentConfig` from resolved config values."""
    try:
        return _build_experiment(values, output_dir)
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc


def _task_override(task: DegradationSpec, blur_len: int, blur_angle: float, **extra) -> DegradationSpec:
    changes = dict(extra)
    if blur_len > 0:
        changes["blur_len"] = blur_len
    if blur_angle >= 0:
        changes["blur_angle"] = blur_angle
    return task.with_(**changes) if changes else task


def _build_experiment(v: Mapping[str, Any], output_dir) -> ExperimentConfig:
    s = linear_beta_schedule(v["schedule.N"], v["schedule.beta_start"], v["schedule.beta_end"])
    task = DegradationSpec(
        family=v["task.family"],
        blur_len=v["task.blur_len"],
        blur_angle=v["task.blur_angle"],
        transmission=v["task.transmission"],
        airlight=v["task.airlight"],
        streaks=v["task.streaks"],
        streak_angle=v["task.streak_angle"],
        intensity=v["task.intensity"],
        noise_std=v["task.noise_std"],
    )
    extra = {}
    if v["restorer.transmission"] > 0:
        extra["transmission"] = v["restorer.transmission"]
    if v["restorer.airlight"] >= 0:
        extra["airlight"] = v["restorer.airlight"]
    built_for = _task_override(task, v["restorer.blur_len"], v["restorer.blur_angle"], **extra)
    restorer = RestorerSpec(
        kind=v["restorer.kind"],
        lam=v["restorer.lam"],
        regularizer=v["restorer.regularizer"],
        threshold=v["restorer.threshold"],
        built_for=None if built_for == task else built_for,
    )
    prior = PriorSpec(v["prior.source"], v["prior.path"], v["prior.train_count"], v["prior.train_seed"])
    steps = v["sampler.steps"] or None
    seed = v["sampler.seed"]
    variant = v["sampler.variant"]
    if variant == "bayesian":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            g = GuidanceParams(
                eta=v["guidance.eta"],
                rho=v["guidance.rho"],
                zeta=v["guidance.zeta"],
                direction=v["guidance.direction"],
                normalize_likelihood=v["guidance.normalize_likelihood"],
                measurement_sign=v["guidance.measurement_sign"],
                eta_on=v["guidance.eta_on"],
            )
        sampler: Any = SamplerConfig(
            s,
            kind=v["sampler.kind"],
            steps=steps,
            guidance=g,
            gradient_orientation=v["sampler.gradient_orientation"],
            restorer_traveling=v["sampler.restorer_traveling"],
            measurement_boosting=v["sampler.measurement_boosting"],
            ddim_literal=v["sampler.ddim_literal"],
            seed=seed,
        )
    elif variant == "nullspace":
        phi = v["nullspace.phi"]
        sampler = NullspaceConfig(
            s,
            sigma=v["nullspace.sigma"],
            phi=None if phi < 0 else phi,
            kind=v["sampler.kind"],
            steps=steps,
            ddim_literal=v["sampler.ddim_literal"],
            seed=seed,
        )
    else:
        op = _task_override(task, v["dps.blur_len"], v["dps.blur_angle"])
        sampler = DpsSpec(v["dps.step_size"], None if op == task else op, v["sampler.kind"], steps)
    return ExperimentConfig(
        task=task,
        sampler=sampler,
        restorer=restorer,
        prior=prior,
        trials=v["experiment.trials"],
        corpus_kind=v["corpus.kind"],
        corpus_size=v["corpus.size"],
        corpus_seed=v["corpus.seed"],
        seed=seed,
        schedule=s,
        output_dir=output_dir,
        write_images=v["experiment.write_images"],
        digest=config_mod.digest(values=v),
    )
