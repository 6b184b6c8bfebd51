import itertools

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import logsumexp

from nuisreg import bvm as bv
from nuisreg import families as fam
from nuisreg import model as core
from nuisreg import priors as pr
from nuisreg import splines as sp
from nuisreg.errors import NumericalFailure, ParameterRangeError
from nuisreg.model import SparseVector
from nuisreg.posterior import SupportPosterior, all_supports


def _setup(rng, n=40, p=4):
    x = rng.normal(size=(n, p))
    u = rng.normal(size=n)
    theta0 = SparseVector((0,), [0.7], p)
    spec = pr.SpikeSlabSpec(p, 0.9)
    return x, u, theta0, spec


# -- building blocks -------------------------------------------------------------

def test_gram_cases(rng):
    q, _ = np.linalg.qr(rng.normal(size=(10, 3)))
    np.testing.assert_allclose(bv.gram((0, 2), q, None), np.eye(2), atol=1e-14)
    h = q[:, :2] @ q[:, :2].T
    np.testing.assert_allclose(bv.gram((0, 1), q, h), np.zeros((2, 2)), atol=1e-14)
    with pytest.raises(NumericalFailure):
        bv.ls_center((0, 1), q, h, rng.normal(size=10), SparseVector.zeros(3))
    x = rng.normal(size=(12, 4))
    hm = bv.Projection.from_design(rng.normal(size=(12, 2)))
    xs = x[:, [1, 3]]
    triple = xs.T @ (np.eye(12) - hm.matrix()) @ xs
    np.testing.assert_allclose(bv.gram((1, 3), x, hm), triple, atol=1e-12)
    np.testing.assert_allclose(bv.gram((1, 3), x, hm.matrix()), triple, atol=1e-12)


def test_ls_center_cases(rng):
    x = rng.normal(size=(20, 5))
    theta0 = SparseVector((1, 3), [1.0, -2.0], 5)
    np.testing.assert_allclose(bv.ls_center((1, 3), x, None, np.zeros(20), theta0), [1.0, -2.0], atol=1e-12)
    np.testing.assert_allclose(bv.ls_center((0, 2), x, None, np.zeros(20), SparseVector.zeros(5)), 0.0)
    u = rng.normal(size=20)
    y = u + x @ theta0.to_dense()
    xs = x[:, [0, 1, 4]]
    np.testing.assert_allclose(bv.ls_center((0, 1, 4), x, None, u, theta0),
                               np.linalg.solve(xs.T @ xs, xs.T @ y), atol=1e-12)


def test_log_lambda_star_cases(rng):
    x, u, theta0, _ = _setup(rng)
    assert bv.log_lambda_star(theta0, x, None, u, theta0) == 0.0
    for _ in range(20):
        th = rng.normal(size=4)
        assert bv.log_lambda_star(th, x, None, np.zeros(40), theta0) <= 0
    # expansion around the centre of a full support
    s = (0, 1, 2, 3)
    g = bv.gram(s, x, None)
    c = bv.ls_center(s, x, None, u, theta0)
    th = rng.normal(size=4)
    t0 = theta0.to_dense()
    expected = -0.5 * (th - c) @ g @ (th - c) + 0.5 * (c - t0) @ g @ (c - t0)
    assert bv.log_lambda_star(th, x, None, u, theta0) == pytest.approx(expected, rel=1e-10)


def test_weights_match_lambda_star_integral(rng):
    x, u, theta0, spec = _setup(rng, n=30, p=4)
    sups = all_supports(4, 2)
    lw = bv.mixture_weights(sups, spec, x, None, u, theta0)
    t0 = theta0.to_dense()
    ref = []
    for s in sups:
        base = spec.log_dim_table[len(s)] - spec.log_binom_table[len(s)]
        if not s:
            ref.append(base + bv.log_lambda_star(np.zeros(4), x, None, u, theta0))
            continue
        c = np.zeros(4)
        c[list(s)] = bv.ls_center(s, x, None, u, theta0)
        peak = bv.log_lambda_star(c, x, None, u, theta0)

        def f(*t):
            th = np.zeros(4)
            th[list(s)] = t
            return np.exp(bv.log_lambda_star(th, x, None, u, theta0) - peak)
        sd = np.sqrt(np.diag(np.linalg.inv(bv.gram(s, x, None))))
        lims = [(c[j] - 12 * d, c[j] + 12 * d) for j, d in zip(s, sd)]
        val = integrate.nquad(f, lims, opts={"epsrel": 1e-10, "epsabs": 0})[0]
        ref.append(base + len(s) * np.log(spec.lam / 2) + peak + np.log(val))
    ref = np.array(ref) - logsumexp(ref)
    np.testing.assert_allclose(lw, ref, atol=1e-6)


def test_mixture_weights_single_and_exchangeable(rng):
    x, u, theta0, spec = _setup(rng)
    assert bv.mixture_weights([(1,)], spec, x, None, u, theta0) == pytest.approx([0.0])
    a = rng.normal(size=(20, 1))
    xx = np.column_stack([np.concatenate([a[:, 0], -a[:, 0]]), np.concatenate([-a[:, 0], a[:, 0]])])
    uu = rng.normal(size=20)
    uu = np.concatenate([uu, -uu])
    lw = bv.mixture_weights([(0,), (1,)], pr.SpikeSlabSpec(2, 1.0), xx, None, uu, SparseVector.zeros(2))
    assert lw[0] == pytest.approx(lw[1], abs=1e-12)


# -- full mixtures -------------------------------------------------------------------

def test_build_bvm_zero_projection_for_mean_free_family():
    eta = fam.ParamCorrelation("AR", 0.4, 1.0)
    theta0 = SparseVector((1,), [1.0], 5)
    data = fam.simulate(eta, theta0, 30, 5, seed=1, m=3)
    spec = pr.SpikeSlabSpec.from_design(data.x, data.n)
    mix = bv.build_bvm(data, theta0, eta, spec, s_max=2)
    assert mix.h_kind == "zero" and abs(mix.weights.sum() - 1) <= 1e-10
    assert all(np.linalg.eigvalsh(g)[0] > 0 for g in mix.grams if g.size)
    back = bv.SupportMixture.from_dict(mix.to_dict())
    np.testing.assert_allclose(back.log_weights, mix.log_weights)
    with pytest.raises(ParameterRangeError):
        bv.build_bvm(data, theta0, eta, spec, s_max=2, mode="guess")


def test_measurement_error_centre_matches_closed_form():
    q = 2
    eta = fam.MeasurementError(0.3, [1.0, -0.5], [0.2, 0.1], 0.8, [[1.0, 0.3], [0.3, 1.0]], 0.5 * np.eye(q))
    theta0 = SparseVector((0, 2), [1.0, -0.8], 5)
    data = fam.simulate(eta, theta0, 40, 5, seed=3)
    spec = pr.SpikeSlabSpec.from_design(data.x, data.n)
    mix = bv.build_bvm(data, theta0, eta, spec, s_max=2)
    assert mix.h_kind == "design"
    n = data.n
    xs = np.array([data.xs[i][0] for i in range(n)])
    ys = np.array([data.ys[i][0] for i in range(n)])
    w = np.array([data.ys[i][1:] for i in range(n)])
    h_star = np.eye(n) - np.ones((n, n)) / n
    k = eta.beta @ eta.Sigma @ np.linalg.inv(eta.Sigma + eta.Psi)
    resp = ys - (eta.alpha + eta.mu @ eta.beta) - (w - eta.mu) @ k
    for s in [(0,), (0, 2), (1, 4)]:
        xsub = xs[:, list(s)]
        ref = np.linalg.solve(xsub.T @ h_star @ xsub, xsub.T @ h_star @ resp)
        np.testing.assert_allclose(mix.component(s)[0], ref, rtol=1e-10, atol=1e-12)


def test_partial_linear_projection_properties():
    eta = fam.PartialLinear(np.linspace(-1, 1, 6), 0.5)
    data = fam.simulate(eta, SparseVector((0,), [1.0], 4), 40, 4, seed=2)
    h, kind = bv.nuisance_projection(data, eta, "spline")
    assert kind == "spline"
    hm = h.matrix()
    np.testing.assert_allclose(hm @ hm, hm, atol=1e-12)
    blocks = core._whitening_blocks(data, eta)
    wj = core.apply_blocks(blocks, eta.mean_design(data))
    np.testing.assert_allclose(hm @ wj, wj, atol=1e-10)
    with pytest.raises(ParameterRangeError):
        bv.nuisance_projection(data, fam.LinearGaussian(1.0), "spline")


def test_mixture_permutation_invariance(rng):
    x = rng.normal(size=(30, 4))
    theta0 = SparseVector((0, 2), [1.0, 0.5], 4)
    data = core.GroupedDataset(list((x @ theta0.to_dense() + rng.normal(size=30))[:, None]), list(x[:, None, :]))
    spec = pr.SpikeSlabSpec(4, 1.0)
    perm = np.array([2, 0, 3, 1])  # new column k is old column perm[k]
    inv = np.argsort(perm)
    data_p = core.GroupedDataset(data.ys, [xi[:, perm] for xi in data.xs])
    theta_p = SparseVector.from_dense(theta0.to_dense()[perm])
    eta = fam.LinearGaussian(1.0)
    a = bv.build_bvm(data, theta0, eta, spec, s_max=2)
    b = bv.build_bvm(data_p, theta_p, eta, spec, s_max=2)
    for s in a.supports:
        s_new = tuple(sorted(inv[j] for j in s))
        assert b.prob(s_new) == pytest.approx(a.prob(s), rel=1e-10, abs=1e-300)
        if s:
            order = np.argsort([inv[j] for j in s])
            np.testing.assert_allclose(b.component(s_new)[0], a.component(s)[0][order], rtol=1e-10)


def test_single_support_matches_flat_slab_posterior(rng):
    x = rng.normal(size=(25, 2))
    y = x @ [0.5, -1.0] + rng.normal(size=25)
    data = core.GroupedDataset(list(y[:, None]), list(x[:, None, :]))
    mix = bv.build_bvm(data, SparseVector.zeros(2), fam.LinearGaussian(1.0), pr.SpikeSlabSpec(2, 1.0),
                       supports=[(0, 1)])
    mean, cov = mix.component((0, 1))
    np.testing.assert_allclose(cov, np.linalg.inv(x.T @ x), rtol=1e-10)
    np.testing.assert_allclose(mean, np.linalg.solve(x.T @ x, x.T @ y), rtol=1e-10)


# -- TV estimates and intervals --------------------------------------------------------

def test_gaussian_tv_cases():
    assert bv.gaussian_tv([0.0], [[1.0]], [2.0], [[1.0]]) == pytest.approx(2 * stats.norm.cdf(1) - 1)
    # unequal variances: closed form from the two crossing points
    tv = bv.gaussian_tv([0.0], [[1.0]], [0.0], [[4.0]], n_points=2 ** 16)
    c = np.sqrt(8 * np.log(2) / 3)
    exact = 2 * (stats.norm.cdf(c) - stats.norm.cdf(c / 2))
    assert tv == pytest.approx(exact, abs=2e-3)


def test_tv_surrogate_cases(rng):
    x, u, theta0, spec = _setup(rng)
    data = core.GroupedDataset(list((x @ theta0.to_dense() + u)[:, None]), list(x[:, None, :]))
    mix = bv.build_bvm(data, theta0, fam.LinearGaussian(1.0), spec, s_max=2)
    same = mix.as_support_posterior()
    assert bv.tv_support_mixture(same, mix) == pytest.approx(0.0, abs=1e-3)
    other = SupportPosterior(4, [(0, 1, 2)], [0.0], [np.zeros(3)], [np.eye(3)])
    assert bv.tv_support_mixture(other, mix) == pytest.approx(1.0)
    draws = mix.sample(rng, 20_000)
    sups = sorted({s for s, _ in draws})
    counts = {s: 0 for s in sups}
    sums = {s: [] for s in sups}
    for s, v in draws:
        counts[s] += 1
        sums[s].append(v)
    means = [np.mean(sums[s], axis=0) if s else np.empty(0) for s in sups]
    covs = [np.atleast_2d(np.cov(np.array(sums[s]).T)) if s and counts[s] > len(s) + 1 else np.eye(len(s))
            for s in sups]
    emp = SupportPosterior(4, sups, np.log([counts[s] for s in sups]), means, covs)
    assert bv.tv_support_mixture(emp, mix) <= 0.05


def test_credible_interval_cases(rng):
    mix = bv.SupportMixture(2, [(0, 1)], np.array([0.0]), [np.array([1.0, 2.0])], [np.eye(2)])
    np.testing.assert_allclose(bv.credible_intervals(mix, (0, 1), 0.0), [[1, 1], [2, 2]])
    z = stats.norm.ppf(0.975)
    np.testing.assert_allclose(bv.credible_intervals(mix, (0, 1), 0.95), [[1 - z, 1 + z], [2 - z, 2 + z]])
    with pytest.raises(ParameterRangeError):
        bv.credible_intervals(mix, (0, 1), 1.0)
    # orthonormal design with known noise scale: textbook OLS interval
    q, _ = np.linalg.qr(rng.normal(size=(30, 2)))
    sigma = 0.5
    y = q @ [1.0, -1.0] + sigma * rng.normal(size=30)
    data = core.GroupedDataset(list(y[:, None]), list(q[:, None, :]))
    mix = bv.build_bvm(data, SparseVector.zeros(2), fam.LinearGaussian(sigma ** 2), pr.SpikeSlabSpec(2, 1.0),
                       supports=[(0, 1)])
    ci = bv.credible_intervals(mix, (0, 1), 0.9)
    ols = q.T @ y
    half = stats.norm.ppf(0.95) * sigma
    np.testing.assert_allclose(ci, np.column_stack([ols - half, ols + half]), rtol=1e-10)
