import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from restorer_guidance.degradations import IdentityOperator, motion_blur_operator
from restorer_guidance.errors import InvalidArgumentError, NumericError
from restorer_guidance.guidance import (
    GuidanceParams,
    GuidanceTerms,
    combine_conditional_score,
    measurement_boost_score,
    measurement_likelihood_score_baseline,
    restoration_likelihood_score,
)
from restorer_guidance.numerics import finite_diff_grad, make_rng
from restorer_guidance.score_models import GmmPrior, GmmScore, tweedie_denoise

from conftest import rel_err


def test_params_validation():
    with pytest.raises(InvalidArgumentError):
        GuidanceParams(rho=-1)
    with pytest.raises(InvalidArgumentError):
        GuidanceParams(direction=0)
    with pytest.raises(InvalidArgumentError):
        GuidanceParams(measurement_sign=2)
    with pytest.raises(InvalidArgumentError):
        GuidanceParams(eta_on="both")
    with pytest.warns(UserWarning):
        GuidanceParams(rho=0.1, zeta=0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        GuidanceParams(rho=1.0, zeta=0.1)


def test_terms_norms():
    terms = GuidanceTerms(np.ones(4), np.zeros(4), 2 * np.ones(4))
    assert terms.norms == {"prior": 2.0, "restorer": 0.0, "measurement": 4.0}
    with pytest.raises(NumericError):
        GuidanceTerms(np.array([np.inf]), np.zeros(1), np.zeros(1))


def test_restoration_score_minimum(sched):
    r = make_rng(0).random((4, 4))
    x = math.sqrt(sched.alpha_bar[40]) * r
    assert np.allclose(restoration_likelihood_score(x, r, sched, 40), 0.0, atol=1e-15)


@given(st.integers(0, 10**6), st.integers(1, 1000))
def test_restoration_score_matches_fd(seed, t):
    from restorer_guidance.schedule import linear_beta_schedule

    s = linear_beta_schedule()
    rng = make_rng(seed)
    x, r = rng.standard_normal(5), rng.standard_normal(5)
    c = math.sqrt(s.alpha_bar[t])
    fd = finite_diff_grad(lambda z: float(np.sum((z - c * r) ** 2)), x)
    assert rel_err(restoration_likelihood_score(x, r, s, t), fd) < 1e-6


def test_normalized_ratio(sched):
    t = int(np.argmin(np.abs(sched.sigma**2 - 0.5)))
    rng = make_rng(1)
    x, r = rng.standard_normal(3), rng.standard_normal(3)
    plain = restoration_likelihood_score(x, r, sched, t)
    norm = restoration_likelihood_score(x, r, sched, t, normalize=True)
    assert np.allclose(norm * sched.sigma[t] ** 2, plain, rtol=1e-14)


def test_measurement_boost(sched):
    rng = make_rng(2)
    y = rng.standard_normal(6)
    t = 77
    c = math.sqrt(sched.alpha_bar[t])
    assert np.allclose(measurement_boost_score(c * y, y, sched, t), 0.0, atol=1e-15)
    x = rng.standard_normal(6)
    fd = finite_diff_grad(lambda z: float(np.sum((z - c * y) ** 2)), x)
    assert rel_err(measurement_boost_score(x, y, sched, t), fd) < 1e-6
    assert np.all(0.0 * measurement_boost_score(x, y, sched, t) == 0)


def test_shape_mismatch(sched):
    with pytest.raises(InvalidArgumentError):
        restoration_likelihood_score(np.zeros(3), np.zeros(4), sched, 5)


def test_combine_modes():
    rng = make_rng(3)
    p, lik = rng.standard_normal(4), rng.standard_normal(4)
    assert np.array_equal(combine_conditional_score(p, lik, GuidanceParams(w=0.0)), p)
    assert np.array_equal(combine_conditional_score(p, lik, GuidanceParams(w=1.0)), lik)
    assert np.allclose(combine_conditional_score(p, lik, GuidanceParams(w=0.0), "classifier_free"), lik)
    w = 2.5
    cf = combine_conditional_score(p, lik, GuidanceParams(w=w), "classifier_free")
    assert np.allclose(cf, p + (w + 1) * (lik - p), rtol=1e-13)
    with pytest.raises(InvalidArgumentError):
        combine_conditional_score(p, lik, GuidanceParams(), "mystery")


@given(st.floats(0, 1))
def test_weighted_lies_on_segment(w):
    rng = make_rng(4)
    p, lik = rng.standard_normal(4), rng.standard_normal(4)
    out = combine_conditional_score(p, lik, GuidanceParams(w=w))
    assert np.allclose(out, p + w * (lik - p), atol=1e-12)


def test_stepsize_mode_direction_and_degeneracy():
    rng = make_rng(5)
    p, lik = rng.standard_normal(4), rng.standard_normal(4)
    fwd = combine_conditional_score(p, lik, GuidanceParams(eta=0.7, rho=0.3), "stepsize")
    rev = combine_conditional_score(p, lik, GuidanceParams(eta=0.7, rho=0.3, direction=-1), "stepsize")
    assert np.allclose(fwd - 0.7 * p, -(rev - 0.7 * p), atol=1e-15)
    off = combine_conditional_score(p, lik, GuidanceParams(eta=0.7), "stepsize")
    assert np.array_equal(off, 0.7 * p)


def gaussian(sched, d=3):
    mu = np.array([0.2, -0.4, 0.1])[:d]
    var = np.array([0.5, 1.2, 0.8])[:d]
    return mu, var, GmmScore(GmmPrior(np.ones(1), mu[None], var[None]), sched)


def test_baseline_zero_residual(sched):
    _, _, m = gaussian(sched)
    x = make_rng(6).standard_normal(3)
    y = tweedie_denoise(m, sched, x, 300)
    g = measurement_likelihood_score_baseline(x, y, IdentityOperator(), m, sched, 300, 1.0)
    assert np.max(np.abs(g)) < 1e-8


def test_baseline_gaussian_closed_form(sched):
    mu, var, m = gaussian(sched)
    t, step = 250, 0.7
    rng = make_rng(7)
    x, y = rng.standard_normal(3), rng.standard_normal(3)
    ab = sched.alpha_bar[t]
    jac = var * math.sqrt(ab) / (ab * var + 1 - ab)
    x0 = mu + jac * (x - math.sqrt(ab) * mu)
    expected = step * jac * (-2.0) * (y - x0)
    got = measurement_likelihood_score_baseline(x, y, IdentityOperator(), m, sched, t, step)
    assert rel_err(got, expected) < 1e-5


def test_baseline_step_zero(sched):
    _, _, m = gaussian(sched)
    g = measurement_likelihood_score_baseline(np.ones(3), np.zeros(3), IdentityOperator(), m, sched, 9, 0.0)
    assert not g.any()


def test_baseline_matches_fd_with_mixture(sched):
    rng = make_rng(8)
    prior = GmmPrior(np.array([0.4, 0.6]), rng.standard_normal((2, 4, 4)), rng.uniform(0.3, 1.0, (2, 4, 4)))
    m = GmmScore(prior, sched)
    h = motion_blur_operator(2, 0)
    x, y = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    t = 400

    def loss(z):
        return float(np.sum((y - h.apply(tweedie_denoise(m, sched, z, t))) ** 2))

    fd = finite_diff_grad(loss, x, 1e-5)
    got = measurement_likelihood_score_baseline(x, y, h, m, sched, t, 1.0)
    assert rel_err(got, fd) < 1e-5
