import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochattn import bayesopt
from stochattn.bayesopt import (DEFAULT_PRIOR, SearchDomain, SurrogatePosterior, SurrogatePrior,
                                acquisition_minimizer, avoid_repeat, calibrate_nu, continuous_minimizer,
                                fit_surrogate, initial_points, project, select_best,
                                space_filling_point, suggest_next, surrogate_objective, thompson_draw)
from stochattn.backbone import InputCase
from stochattn.calibration import CalibrationBatch, CalibrationRecord
from stochattn.errors import DegenerateDesign, NonPositiveScale, ZeroExponent


def _records(nus, a=-0.5, b=2.0, loss=None):
    return [CalibrationRecord(nu, 0.0 if loss is None else loss(nu), b * nu ** a, 1.0) for nu in nus]


def test_noiseless_line_recovered():
    post = fit_surrogate(_records([1, 4, 16, 64]))
    assert post.mean[0] == pytest.approx(-0.5, abs=1e-6)
    assert post.mean[1] == pytest.approx(math.log(2.0), abs=1e-6)


def test_two_points_interpolated():
    recs = [CalibrationRecord(3, 0, 0.9, 1), CalibrationRecord(40, 0, 0.2, 1)]
    post = fit_surrogate(recs)
    for r in recs:
        assert post.mean[0] * math.log(r.nu) + post.mean[1] == pytest.approx(math.log(r.scale_estimate), abs=1e-6)


def test_duplicate_observation_tightens_only():
    rng = np.random.default_rng(0)
    nus = [2, 5, 11, 30, 90]
    recs = [CalibrationRecord(n, 0, 1.5 * n ** -0.7 * math.exp(0.1 * rng.standard_normal()), 1) for n in nus]
    a = fit_surrogate(recs)
    b = fit_surrogate(recs + recs)
    assert b.mean == pytest.approx(a.mean, abs=1e-8)
    assert b.n_obs == 2 * a.n_obs
    assert np.all(np.diag(b.scale_matrix) < np.diag(a.scale_matrix))


def test_flat_prior_limit_is_ols():
    rng = np.random.default_rng(1)
    nus = np.array([1, 3, 8, 20, 55, 128])
    s = 0.8 * nus ** -0.4 * np.exp(0.2 * rng.standard_normal(nus.size))
    recs = [CalibrationRecord(int(n), 0, float(v), 1) for n, v in zip(nus, s)]
    post = fit_surrogate(recs, SurrogatePrior(precision=1e-14))
    x = np.column_stack([np.log(nus), np.ones(nus.size)])
    ols = np.linalg.lstsq(x, np.log(s), rcond=None)[0]
    assert np.max(np.abs(post.mean - ols) / np.abs(ols)) < 1e-8


def test_fit_errors():
    with pytest.raises(DegenerateDesign):
        fit_surrogate(_records([4, 4, 4]))
    with pytest.raises(NonPositiveScale):
        fit_surrogate([CalibrationRecord(1, 0, 0.0, 1), CalibrationRecord(2, 0, 1.0, 1)])


def test_posterior_invariants():
    post = fit_surrogate(_records([1, 2, 9]))
    cov = post.scale_matrix
    assert np.allclose(cov, cov.T)
    assert np.all(np.linalg.eigvalsh(cov) >= 0)
    assert post.shape > 0 and post.scale > 0
    assert set(post.summary()) == {"a_mean", "ln_b_mean", "scale_matrix", "ig_shape", "ig_scale", "n_obs"}


def test_thompson_collapsed_posterior():
    post = SurrogatePosterior(np.array([-0.5, 0.7]), 1e-10 * np.eye(2), 1e6, 1e-6, 100)
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, ln_b, eps2 = thompson_draw(post, rng)
        assert abs(a + 0.5) < 1e-3 and abs(ln_b - 0.7) < 1e-3 and eps2 < 1e-3


def test_thompson_reproducible():
    post = fit_surrogate(_records([1, 4, 16]))
    assert thompson_draw(post, np.random.default_rng(7)) == thompson_draw(post, np.random.default_rng(7))


def test_thompson_moments():
    rng = np.random.default_rng(2)
    nus = np.arange(1, 41)
    recs = [CalibrationRecord(int(n), 0, float(2 * n ** -0.5 * math.exp(0.3 * rng.standard_normal())), 1)
            for n in nus]
    post = fit_surrogate(recs)
    draws = np.array([thompson_draw(post, rng)[:2] for _ in range(100_000)])
    n = draws.shape[0]
    se_mean = draws.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(draws.mean(axis=0) - post.mean) <= 3 * se_mean)
    centred = draws - draws.mean(axis=0)
    for i in range(2):
        for j in range(2):
            prod = centred[:, i] * centred[:, j]
            assert abs(prod.mean() - post.covariance[i, j]) <= 3 * prod.std() / math.sqrt(n)


def test_acquisition_examples():
    dom = SearchDomain(1, 1000)
    assert acquisition_minimizer(-0.5, math.log(2.0), 0.0, 1.0, dom) == 4
    grid = np.arange(1, 1001)
    assert grid[np.argmin(surrogate_objective(grid, -0.5, math.log(2.0), 0.0, 1.0))] == 4
    for a in (-2.0, -0.3, 0.8):
        assert acquisition_minimizer(a, math.log(3.0), 0.0, 3.0, dom) == 1
    # continuous minimiser 37.2 clamps to the upper end
    ln_b = math.log(37.2 ** 0.5)
    assert math.exp(continuous_minimizer(-0.5, ln_b, 0.0, 1.0)) == pytest.approx(37.2)
    assert acquisition_minimizer(-0.5, ln_b, 0.0, 1.0, SearchDomain(1, 10)) == 10


def test_acquisition_zero_exponent():
    with pytest.raises(ZeroExponent):
        acquisition_minimizer(0.0, 0.0, 0.1, 1.0, SearchDomain(1, 5))


def test_minimiser_satisfies_closed_form():
    a, ln_b, eps2, s0 = -0.8, 0.4, 0.05, 0.6
    nu = math.exp(continuous_minimizer(a, ln_b, eps2, s0))
    assert math.exp(ln_b) * nu ** a == pytest.approx(s0 * math.exp(-1.5 * eps2), rel=1e-12)


@given(st.floats(-2.0, -0.1), st.floats(-3.0, 3.0), st.floats(0.0, 1.0), st.floats(0.05, 5.0))
def test_closed_form_matches_grid(a, ln_b, eps2, s0):
    dom = SearchDomain(1, 2000)
    grid = np.arange(1, 2001)
    best = int(grid[np.argmin(surrogate_objective(grid, a, ln_b, eps2, s0))])
    assert abs(acquisition_minimizer(a, ln_b, eps2, s0, dom) - best) <= 1


def test_projection_ties_go_down():
    dom = SearchDomain(1, 100)
    assert project(math.log(4.5), dom) == 4
    assert project(math.log(4.5000001), dom) == 5
    assert project(-50.0, dom) == 1 and project(50.0, dom) == 100


def test_space_filling():
    assert space_filling_point(SearchDomain(1, 1024)) == 32
    assert initial_points(SearchDomain(1, 1000)) == [10, 100]
    # widest remaining log gap is [16, 1024]
    assert space_filling_point(SearchDomain(1, 1024), {16}) == 128
    # equal gaps either side of 32: the lower one is filled first
    assert space_filling_point(SearchDomain(1, 1024), {32}) == 6


def test_avoid_repeat():
    dom = SearchDomain(1, 10)
    assert avoid_repeat(5, 5.4, dom, {5}) == 6
    assert avoid_repeat(5, 4.6, dom, {5, 4}) == 3
    assert avoid_repeat(10, 30.0, dom, {10}) == 9
    assert avoid_repeat(3, 3.0, SearchDomain(3, 3), {3}) == 3


def test_suggest_examples():
    rng = np.random.default_rng(0)
    assert suggest_next([], SearchDomain(1, 1024), 1.0, rng) == 32
    assert suggest_next(_records([1, 2, 3]), SearchDomain(7, 7), 1.0, rng) == 7
    tight = SurrogatePrior(precision=1e-8, shape=1.0, scale=1e-12)
    picks = [suggest_next(_records([1, 16, 64, 100]), SearchDomain(1, 1024), 1.0,
                          np.random.default_rng(s), tight) for s in range(20)]
    assert picks == [4] * 20


def test_suggest_converges_on_noiseless_line():
    dom = SearchDomain(1, 1024)
    history, rng = [], np.random.default_rng(3)
    for _ in range(5):
        nu = suggest_next(history, dom, 1.0, rng)
        history.extend(_records([nu]))
        if nu == 4:
            break
    assert history[-1].nu == 4


def test_suggest_never_repeats_until_exhausted():
    dom = SearchDomain(1, 6)
    history, rng = [], np.random.default_rng(0)
    for _ in range(6):
        nu = suggest_next(history, dom, 1.0, rng)
        assert nu in dom and nu not in {r.nu for r in history}
        history.extend(_records([nu]))
    assert sorted(r.nu for r in history) == [1, 2, 3, 4, 5, 6]
    assert suggest_next(history, dom, 1.0, rng) in dom


def test_suggest_zero_exponent_falls_back(monkeypatch):
    monkeypatch.setattr(bayesopt, "thompson_draw", lambda post, rng: (0.0, 0.0, 0.1))
    nu = suggest_next(_records([2, 8]), SearchDomain(1, 20), 1.0, np.random.default_rng(0))
    assert nu in SearchDomain(1, 20) and nu not in (2, 8)


def test_select_best_ties_smaller():
    recs = [CalibrationRecord(9, 0.5, 1, 1), CalibrationRecord(3, 0.5, 1, 1), CalibrationRecord(5, 0.7, 1, 1)]
    assert select_best(recs) == 3


def _rigged_eval(c=0.05, s0=1.0, noise=0.02):
    """Analytic stand-in for eval_loss: s(nu) = 2 nu^-0.5, L = (s - s0)^2 + c s^2."""
    def fake(model, batch, nu, seed):
        rng = np.random.default_rng(seed)
        s = 2.0 * nu ** -0.5 * math.exp(noise * rng.standard_normal())
        true = (2.0 * nu ** -0.5 - s0) ** 2 + c * 4.0 / nu
        return CalibrationRecord(int(nu), true * (1 + noise * rng.standard_normal()), s, s0)

    def oracle(nu):
        return (2.0 * nu ** -0.5 - s0) ** 2 + c * 4.0 / nu
    return fake, oracle


@pytest.fixture
def rigged(monkeypatch):
    fake, oracle = _rigged_eval()
    monkeypatch.setattr(bayesopt, "eval_loss", fake)
    batch = CalibrationBatch([InputCase([0.0], 1.0)], 1, 1)
    return batch, oracle


def test_calibrate_single_iteration(rigged):
    batch, _ = rigged
    nu, hist = calibrate_nu(None, batch, SearchDomain(1, 128), 1, 0, s0=1.0)
    assert len(hist) == 1 and nu == hist[0].nu


def test_calibrate_rigged_grid_oracle(rigged):
    batch, oracle = rigged
    dom = SearchDomain(1, 128)
    grid_min = min(oracle(v) for v in range(1, 129))
    for seed in range(5):
        seen = []
        nu, hist = calibrate_nu(None, batch, dom, 20, seed, s0=1.0,
                                on_iteration=lambda k, rec, post: seen.append(k))
        assert seen == list(range(20))
        assert len(hist) == 20 and all(r.nu in dom for r in hist)
        assert nu == select_best(hist)
        assert oracle(nu) <= 1.10 * grid_min


def test_calibrate_singleton_domain(rigged):
    batch, _ = rigged
    nu, hist = calibrate_nu(None, batch, SearchDomain(5, 5), 3, 0, s0=1.0)
    assert nu == 5 and [r.nu for r in hist] == [5, 5, 5]


def test_calibrate_on_model_is_reproducible(toy_model, sinusoid_splits):
    batch = CalibrationBatch(sinusoid_splits[1].cases, 10, 4)
    a = calibrate_nu(toy_model, batch, SearchDomain(1, 64), 4, 2)
    b = calibrate_nu(toy_model, batch, SearchDomain(1, 64), 4, 2)
    assert a == b
    assert a[1][0].nu == initial_points(SearchDomain(1, 64))[0]


def test_default_prior_values():
    assert DEFAULT_PRIOR.mean == (-1.0, 0.0)
    assert DEFAULT_PRIOR.shape == 1.0


def test_domain_validation():
    with pytest.raises(ValueError):
        SearchDomain(0, 5)
    with pytest.raises(ValueError):
        SearchDomain(6, 5)
    assert SearchDomain(2, 9).size == 8
