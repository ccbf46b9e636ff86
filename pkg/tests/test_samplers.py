import json
import math
import time

import numpy as np
import pytest

from restorer_guidance.degradations import IdentityRestorer, motion_blur_operator, tikhonov_restorer
from restorer_guidance.errors import InvalidArgumentError
from restorer_guidance.guidance import GuidanceParams, restoration_likelihood_score
from restorer_guidance.harness import make_corpus
from restorer_guidance.numerics import high_frequency_ratio, make_rng
from restorer_guidance.samplers import (
    NullspaceConfig,
    SamplerConfig,
    deteriorate,
    init_from_measurement,
    restorer_guided_step,
    run_many,
    sample,
    sample_dps_baseline,
    sample_nullspace,
    sample_unconditional,
    unconditional_step,
)
from restorer_guidance.schedule import linear_beta_schedule
from restorer_guidance.score_models import GmmPrior, GmmScore, SpectralGaussianPrior, SpectralGaussianScore


@pytest.fixture(scope="module")
def gmm(sched):
    prior = GmmPrior.isotropic([0.3, 0.7], [[-1.0, 0.5], [1.0, -0.5]], [0.2, 0.3])
    return prior, GmmScore(prior, sched)


@pytest.fixture(scope="module")
def blobs(sched):
    train = make_corpus("smooth-blobs", 200, 32, 1)
    return SpectralGaussianScore(SpectralGaussianPrior.fit(train), sched), make_corpus("smooth-blobs", 4, 32, 2)


def test_config_validation(sched):
    with pytest.raises(InvalidArgumentError):
        SamplerConfig(sched, kind="euler")
    with pytest.raises(InvalidArgumentError):
        SamplerConfig(sched, steps=1)
    cfg = SamplerConfig(sched, steps=10)
    pairs = cfg.pairs()
    assert pairs[0][0] == 1000 and pairs[-1] == (1, 0)
    with pytest.raises(InvalidArgumentError):
        NullspaceConfig(sched, sigma=1.5)
    with pytest.raises(InvalidArgumentError):
        NullspaceConfig(sched, sigma=[0.5, 0.5], steps=10)
    assert NullspaceConfig(sched, steps=10, kind="deterministic").phi_values().tolist() == [0.0] * 10


@pytest.mark.parametrize("kind", ["ancestral", "deterministic"])
@pytest.mark.parametrize("literal", [False, True])
def test_guidance_off_is_unconditional_step(sched, gmm, kind, literal):
    _, m = gmm
    x = make_rng(1).standard_normal(2)
    cfg = SamplerConfig(sched, kind=kind, steps=20, ddim_literal=literal, guidance=GuidanceParams(eta=1.0))
    for t, tp in cfg.pairs()[:5]:
        a, _ = restorer_guided_step(x, t, tp, m, IdentityRestorer(), np.zeros(2), cfg, make_rng(9, t))
        b = unconditional_step(x, t, tp, m, sched, kind, make_rng(9, t), literal)
        assert a.tobytes() == b.tobytes()


def test_direction_reversal_negates_restorer_term(sched, gmm):
    _, m = gmm
    x, y = np.array([0.3, -0.2]), np.array([1.0, 1.0])
    base = SamplerConfig(sched, kind="deterministic", steps=10, guidance=GuidanceParams(rho=0.4))
    t, tp = base.pairs()[3]
    x_u = unconditional_step(x, t, tp, m, sched, "deterministic", make_rng(0))
    r_t = 0.4 * restoration_likelihood_score(x_u, y, sched, t)
    fwd, rec = restorer_guided_step(x, t, tp, m, IdentityRestorer(), y, base, make_rng(0))
    rev, _ = restorer_guided_step(x, t, tp, m, IdentityRestorer(), y, base.with_guidance(direction=-1), make_rng(0))
    assert fwd.tobytes() == (x_u - r_t).tobytes()
    assert rev.tobytes() == (x_u + r_t).tobytes()
    assert rec.norms["restorer"] == pytest.approx(float(np.linalg.norm(r_t)))


def test_perfect_restorer_pulls_toward_truth(sched):
    prior = GmmPrior(np.ones(1), np.zeros((1, 6)), np.ones((1, 6)))
    m = GmmScore(prior, sched)
    x0 = make_rng(2).standard_normal(6)

    class Oracle:
        descriptor = "oracle"

        def restore(self, y):
            return x0

    closer = 0
    for i in range(20):
        t, tp = 600, 599
        x_t = math.sqrt(sched.alpha_bar[t]) * x0 + sched.sigma[t] * make_rng(3, i).standard_normal(6)
        cfg = SamplerConfig(sched, guidance=GuidanceParams(rho=0.4))
        guided, _ = restorer_guided_step(x_t, t, tp, m, Oracle(), x0, cfg, make_rng(4, i))
        plain = unconditional_step(x_t, t, tp, m, sched, "ancestral", make_rng(4, i))
        target = math.sqrt(sched.alpha_bar[tp]) * x0
        closer += np.linalg.norm(guided - target) < np.linalg.norm(plain - target)
    assert closer == 20


def test_trajectory_records(sched, gmm):
    _, m = gmm
    cfg = SamplerConfig(sched, steps=12, guidance=GuidanceParams(rho=0.1))
    out, traj = sample(np.zeros(2), m, IdentityRestorer(), cfg)
    assert len(traj.records) == 12 and out.shape == (2,)
    assert traj.final is out
    rows = [json.loads(line) for line in traj.to_jsonl().splitlines()]
    assert [r["t"] for r in rows] == cfg.timesteps()
    assert {"prior", "restorer", "measurement", "checksum"} <= set(rows[0])


def test_deterministic_reproducible(sched, gmm):
    _, m = gmm
    cfg = SamplerConfig(sched, kind="deterministic", steps=10, guidance=GuidanceParams(rho=0.2), seed=5)
    a = sample(np.ones(2), m, IdentityRestorer(), cfg)
    b = sample(np.ones(2), m, IdentityRestorer(), cfg)
    assert a[0].tobytes() == b[0].tobytes()
    assert a[1].to_jsonl() == b[1].to_jsonl()


def test_init_from_measurement_limits():
    noisy = linear_beta_schedule(10, 0.9, 0.99)
    y = np.full(1000, 5.0)
    x = init_from_measurement(y, noisy, 10, make_rng(0))
    assert noisy.alpha_bar[10] < 1e-9
    assert np.mean(x**2) == pytest.approx(1.0, abs=0.1)
    clean = linear_beta_schedule(1, 1e-14, 1e-14)
    assert np.allclose(init_from_measurement(y, clean, 1, make_rng(0)), y, atol=1e-5)
    assert init_from_measurement(y, noisy, 10, make_rng(3)).tobytes() == init_from_measurement(y, noisy, 10, make_rng(3)).tobytes()


def test_unguided_sampling_matches_prior_moments(sched, gmm):
    prior, m = gmm
    cfg = SamplerConfig(sched, steps=100)
    draws = np.stack([sample(np.zeros(2), m, IdentityRestorer(), cfg, make_rng(11, i), keep_states=False)[0] for i in range(1000)])
    ref = prior.sample(100000, make_rng(12))
    se = ref.std(axis=0) / math.sqrt(1000)
    assert np.all(np.abs(draws.mean(axis=0) - ref.mean(axis=0)) < 4 * se)
    assert np.allclose(draws.var(axis=0), ref.var(axis=0), rtol=0.15)


def test_ten_step_budget(sched, blobs):
    m, clean = blobs
    r = tikhonov_restorer(motion_blur_operator(5), 0.2, regularizer="gradient")
    cfg = SamplerConfig(sched, kind="deterministic", steps=10, guidance=GuidanceParams(rho=0.45))
    start = time.perf_counter()
    sample(clean[0], m, r, cfg)
    assert time.perf_counter() - start < 1.0


@pytest.mark.parametrize("kind", ["ancestral", "deterministic"])
def test_nullspace_zero_strength_is_unconditional(sched, gmm, kind):
    _, m = gmm
    y = np.array([0.5, -0.5])
    nc = NullspaceConfig(sched, sigma=0.0, kind=kind, steps=25)
    out, _ = sample_nullspace(y, m, IdentityRestorer(), nc, make_rng(6))
    rng = make_rng(6)
    x_n = init_from_measurement(y, sched, 1000, rng)
    ref = sample_unconditional((2,), m, sched, kind, 25, rng, x_init=x_n)
    assert out.tobytes() == ref.tobytes()


def test_nullspace_full_replacement(sched, gmm):
    _, m = gmm
    y = np.array([0.25, 0.75])
    out, traj = sample_nullspace(y, m, IdentityRestorer(), NullspaceConfig(sched, sigma=1.0, phi=0.0, steps=50))
    assert np.allclose(out, y, atol=1e-12)
    assert all(np.array_equal(r.x0_hat, y) for r in traj.records)


def test_dps_step_zero_is_unconditional(sched, gmm):
    _, m = gmm
    y = np.array([0.1, 0.2])
    from restorer_guidance.degradations import IdentityOperator

    out, _ = sample_dps_baseline(y, m, IdentityOperator(), sched, 0.0, steps=30, rng=make_rng(8))
    rng = make_rng(8)
    ref = sample_unconditional((2,), m, sched, "ancestral", 30, rng, x_init=init_from_measurement(y, sched, 1000, rng))
    assert out.tobytes() == ref.tobytes()


def test_dps_reduces_residual(sched, blobs):
    m, clean = blobs
    h = motion_blur_operator(5)
    res_dps, res_free = [], []
    for i, x in enumerate(clean):
        y = h.apply(x) + 0.01 * make_rng(20, i).standard_normal(x.shape)
        guided, _ = sample_dps_baseline(y, m, h, sched, 0.1, steps=100, rng=make_rng(21, i), keep_states=False)
        free = sample_unconditional(x.shape, m, sched, "ancestral", 100, make_rng(21, i))
        res_dps.append(np.linalg.norm(h.apply(guided) - y))
        res_free.append(np.linalg.norm(h.apply(free) - y))
    assert np.mean(res_dps) < np.mean(res_free)


def _control(sched, m, x, rho, direction=-1, steps=10):
    r = tikhonov_restorer(motion_blur_operator(5), 0.2, regularizer="gradient")
    cfg = SamplerConfig(sched, steps=steps, guidance=GuidanceParams(rho=rho, direction=direction))
    if direction == -1:
        return deteriorate(x, m, r, cfg, make_rng(3))[0]
    return sample(x, m, r, cfg, make_rng(3), keep_states=False)[0]


def test_deteriorate_rho_zero_matches_plain_reconstruction(sched, blobs):
    m, clean = blobs
    assert _control(sched, m, clean[0], 0.0).tobytes() == _control(sched, m, clean[0], 0.0, direction=1).tobytes()


def test_deteriorate_monotone_and_opposite(sched, blobs):
    m, clean = blobs
    for x in clean[:3]:
        hf = [high_frequency_ratio(_control(sched, m, x, rho)) for rho in (0.1, 0.3, 1.0)]
        assert hf[0] > hf[1] > hf[2]
        plain = high_frequency_ratio(_control(sched, m, x, 0.0))
        assert high_frequency_ratio(_control(sched, m, x, 0.3)) < plain
        assert high_frequency_ratio(_control(sched, m, x, 0.3, direction=1)) > high_frequency_ratio(_control(sched, m, x, 0.3))


def test_run_many_uses_separate_streams(sched, gmm):
    _, m = gmm
    cfg = SamplerConfig(sched, steps=10, guidance=GuidanceParams(rho=0.1))
    outs = run_many([np.zeros(2), np.zeros(2)], m, IdentityRestorer(), cfg)
    assert not np.array_equal(outs[0], outs[1])
    assert np.array_equal(outs[0], sample(np.zeros(2), m, IdentityRestorer(), cfg, make_rng(0, 0))[0])
