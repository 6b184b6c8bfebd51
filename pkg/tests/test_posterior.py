import itertools

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import logsumexp

from nuisreg import families as fam
from nuisreg import posterior as post
from nuisreg import priors as pr
from nuisreg.errors import BudgetExceededError, ParameterRangeError
from nuisreg.model import GroupedDataset, SparseVector


def _linear(n, p, theta, seed, sigma2=1.0):
    return fam.simulate(fam.LinearGaussian(sigma2), theta, n, p, seed=seed)


def _gram(data):
    return data.x.T @ data.x, data.x.T @ data.y


# -- support distributions -----------------------------------------------------

def test_support_posterior_invariants_and_round_trip(rng):
    sp = post.SupportPosterior(3, [(), (0,), (1, 2)], rng.normal(size=3),
                               [np.empty(0), np.array([0.5]), np.array([1.0, -1.0])],
                               [np.empty((0, 0)), np.eye(1), np.eye(2)], [("ridge", (1, 2))])
    assert abs(sp.weights.sum() - 1) <= 1e-10
    assert np.all((sp.inclusion_probs >= 0) & (sp.inclusion_probs <= 1))
    back = post.SupportPosterior.from_dict(sp.to_dict())
    np.testing.assert_allclose(back.log_weights, sp.log_weights)
    assert back.supports == sp.supports and back.flags == sp.flags
    assert sp.support_tv(back) == pytest.approx(0, abs=1e-15)
    assert sp.prob((2, 1)) == pytest.approx(sp.prob((1, 2)))
    assert sp.prob((0, 1)) == 0.0


def test_all_supports_budget():
    assert len(post.all_supports(6, 3)) == 1 + 6 + 15 + 20
    with pytest.raises(BudgetExceededError):
        post.all_supports(60, 5, budget=1000)


# -- normal slab enumeration ----------------------------------------------------

def test_normal_slab_strong_signal():
    data = _linear(60, 1, SparseVector((0,), [2.0], 1), seed=0)
    sp = post.enumerate_posterior_normal_slab(data, pr.SpikeSlabSpec(1, 1.0), fam.LinearGaussian(1.0), 1,
                                              slab_precision=1e-2)
    assert sp.prob((0,)) > sp.prob(())


def test_normal_slab_two_support_bayes_factor():
    data = _linear(40, 1, SparseVector.zeros(1), seed=1)
    spec = pr.SpikeSlabSpec(1, 1.0)
    kappa = 1e-4
    sp = post.enumerate_posterior_normal_slab(data, spec, fam.LinearGaussian(1.0), 1, slab_precision=kappa)
    g, c = _gram(data)
    g, c = g[0, 0], c[0]
    log_bf = 0.5 * np.log(kappa / (g + kappa)) + 0.5 * c * c / (g + kappa)
    expected = log_bf + spec.log_dim_table[1] - spec.log_dim_table[0]
    assert sp.log_weights[sp.supports.index((0,))] - sp.log_weights[0] == pytest.approx(expected, rel=1e-10)


def test_normal_slab_matches_per_support_quadrature():
    theta = SparseVector((1, 4), [0.3, -0.25], 6)
    data = _linear(30, 6, theta, seed=2)
    spec = pr.SpikeSlabSpec(6, 1.0)
    kappa = 2.0
    sp = post.enumerate_posterior_normal_slab(data, spec, fam.LinearGaussian(1.0), 3, slab_precision=kappa)
    g, c = _gram(data)
    prior = spec.log_dim_table - spec.log_binom_table
    logs = {}
    for s in [(), (1,), (4,), (0,), (1, 4), (2, 3)]:
        idx = list(s)
        if not s:
            logs[s] = prior[0]
            continue
        gs, cs = g[np.ix_(idx, idx)], c[idx]
        mode = np.linalg.solve(gs + kappa * np.eye(len(s)), cs)
        peak = cs @ mode - 0.5 * mode @ (gs + kappa * np.eye(len(s))) @ mode

        def f(*t):
            t = np.array(t)
            return np.exp(cs @ t - 0.5 * t @ gs @ t - 0.5 * kappa * t @ t - peak)
        lims = [(m - 12, m + 12) for m in mode]
        val = integrate.nquad(f, lims, opts={"epsabs": 1e-13, "epsrel": 1e-10})[0]
        logs[s] = prior[len(s)] + np.log(val) + peak + 0.5 * len(s) * np.log(kappa / (2 * np.pi))
    ref = np.array(list(logs.values()))
    got = np.array([sp.log_weights[sp.supports.index(s)] for s in logs])
    np.testing.assert_allclose(got - got[0], ref - ref[0], atol=1e-7)


# -- Laplace slab enumeration ---------------------------------------------------

def test_laplace_evidence_one_dimension_matches_trapezoid():
    for a, b, lam in [(40.0, 12.0, 1.5), (5.0, -0.3, 3.0), (200.0, 0.0, 0.5)]:
        log_i, mean, cov, ok = post.laplace_slab_evidence([[a]], [b], lam)
        t = np.linspace(-30, 30, 1_000_001)
        f = np.exp(b * t - 0.5 * a * t * t - lam * np.abs(t))
        z = np.trapezoid(f, t)
        assert ok and log_i == pytest.approx(np.log(z), abs=1e-8)
        assert mean[0] == pytest.approx(np.trapezoid(t * f, t) / z, abs=1e-8)
        assert cov[0, 0] + mean[0] ** 2 == pytest.approx(np.trapezoid(t * t * f, t) / z, abs=1e-8)


@pytest.mark.parametrize("k", [2, 3])
def test_laplace_evidence_matches_grid_oracle(k):
    rng = np.random.default_rng(k)
    m = rng.normal(size=(k + 3, k))
    a = m.T @ m + 0.5 * np.eye(k)
    b = rng.normal(size=k)
    lam = 0.8
    log_i, mean, _, ok = post.laplace_slab_evidence(a, b, lam, rtol=1e-8)
    # dense tensor trapezoid centred on the least-squares point
    centre = np.linalg.solve(a, b)
    sd = np.sqrt(np.diag(np.linalg.inv(a)))
    n_pts = 1201 if k == 2 else 241
    axes = [np.linspace(c - 12 * s - 2, c + 12 * s + 2, n_pts) for c, s in zip(centre, sd)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    lf = pts @ b - 0.5 * np.einsum("ni,ij,nj->n", pts, a, pts) - lam * np.abs(pts).sum(axis=1)
    vol = np.prod([ax[1] - ax[0] for ax in axes])
    ref = logsumexp(lf) + np.log(vol)
    w = np.exp(lf - logsumexp(lf))
    assert ok and log_i == pytest.approx(ref, abs=2e-3 if k == 3 else 1e-4)
    np.testing.assert_allclose(mean, w @ pts, atol=5e-3)


def test_laplace_evidence_dimension_limit():
    with pytest.raises(ParameterRangeError):
        post.laplace_slab_evidence(np.eye(4), np.zeros(4), 1.0)


def test_laplace_slab_small_rate_matches_flat_normal_slab():
    data = _linear(40, 5, SparseVector((0, 3), [0.5, -0.4], 5), seed=4)
    lam = 1e-3
    spec = pr.SpikeSlabSpec(5, lam, a=0.5)
    lap = post.enumerate_posterior_laplace_slab(data, spec, fam.LinearGaussian(1.0), 3)
    # normal slab with the same density height at the origin
    nrm = post.enumerate_posterior_normal_slab(data, spec, fam.LinearGaussian(1.0), 3,
                                               slab_precision=2 * np.pi * (lam / 2) ** 2)
    order_l = sorted(lap.supports, key=lambda s: -lap.prob(s))[:10]
    order_n = sorted(nrm.supports, key=lambda s: -nrm.prob(s))[:10]
    assert order_l == order_n
    assert lap.support_tv(nrm) < 0.01


def test_laplace_slab_exchangeable_columns(rng):
    ab = rng.normal(size=(15, 2))
    yv = rng.normal(size=15)
    xs = [np.array([[a, b]]) for a, b in ab] + [np.array([[b, a]]) for a, b in ab]
    data = GroupedDataset([np.array([v]) for v in np.concatenate([yv, yv])], xs)
    spec = pr.SpikeSlabSpec(2, 1.0)
    sp = post.enumerate_posterior_laplace_slab(data, spec, fam.LinearGaussian(1.0), 2)
    assert sp.prob((0,)) == pytest.approx(sp.prob((1,)), rel=1e-4)


# -- reversible-jump sampler ------------------------------------------------------

def test_rjmcmc_fixed_seed_reproducible():
    data = _linear(40, 5, SparseVector((1,), [1.0], 5), seed=5)
    spec = pr.SpikeSlabSpec.from_design(data.x, data.n)
    eta_prior = pr.default_nuisance_prior(fam.LinearGaussian(1.0))
    run = lambda: post.rjmcmc_sample(data, spec, eta_prior, SparseVector.zeros(5), fam.LinearGaussian(1.0),
                                     2000, seed=9)
    a, b = run(), run()
    assert a.supports == b.supports and a.log_post == b.log_post
    assert len(a.log_post) == len(a)
    assert all(0 <= r <= 1 for r in a.acceptance_rates().values() if np.isfinite(r))


def _prior_chain(n_iter, seed=0):
    data = _linear(30, 4, SparseVector.zeros(4), seed=6)
    spec = pr.SpikeSlabSpec(4, 1.5, a=0.3)
    chain = post.rjmcmc_sample(data, spec, None, SparseVector.zeros(4), fam.LinearGaussian(1.0), n_iter,
                               seed=seed, eta_fixed=True, likelihood=False, add_proposal="zero")
    return spec, chain


def test_rjmcmc_prior_recovery():
    spec, chain = _prior_chain(100_000)
    start = int(0.2 * len(chain))
    sizes = np.array([len(s) for s in chain.supports[start:]])
    probs = np.exp(spec.log_dim_table)
    for k in range(5):
        ind = (sizes == k).astype(float)
        se = np.sqrt(ind.var() / post.effective_sample_size(ind))
        assert abs(ind.mean() - probs[k]) <= 3 * se + 1e-12
    # slab marginal of an active coordinate
    vals = np.array([v[list(s).index(0)] for s, v in zip(chain.supports[start:], chain.values[start:]) if 0 in s])
    ks = stats.kstest(vals, stats.laplace(scale=1 / spec.lam).cdf).statistic
    assert ks <= 0.02


def test_rjmcmc_support_transitions_reversible():
    data = _linear(30, 2, SparseVector((0,), [0.3], 2), seed=7)
    spec = pr.SpikeSlabSpec(2, 1.0, a=0.2)
    chain = post.rjmcmc_sample(data, spec, None, SparseVector.zeros(2), fam.LinearGaussian(1.0), 60_000,
                               seed=3, eta_fixed=True, s_max=1)
    labels = {(): 0, (0,): 1, (1,): 2}
    seq = np.array([labels[s] for s in chain.supports])
    counts = np.zeros((3, 3))
    np.add.at(counts, (seq[:-1], seq[1:]), 1)
    stat = sum((counts[i, j] - counts[j, i]) ** 2 / (counts[i, j] + counts[j, i])
               for i, j in itertools.combinations(range(3), 2) if counts[i, j] + counts[j, i] > 0)
    assert stats.chi2.sf(stat, 3) > 1e-3


def test_rjmcmc_matches_conjugate_enumeration():
    data = _linear(60, 6, SparseVector((0, 3), [0.8, -0.6], 6), seed=8)
    spec = pr.SpikeSlabSpec.from_design(data.x, data.n)
    exact = post.enumerate_posterior_normal_slab(data, spec, fam.LinearGaussian(1.0), 3, slab_precision=1.0)
    chain = post.rjmcmc_sample(data, spec, None, SparseVector.zeros(6), fam.LinearGaussian(1.0), 40_000,
                               seed=2, eta_fixed=True, s_max=3, slab="normal", slab_precision=1.0)
    assert post.support_marginals(chain).support_tv(exact) <= 0.05


def test_rjmcmc_rejects_bad_input():
    data = _linear(20, 3, SparseVector.zeros(3), seed=0)
    spec = pr.SpikeSlabSpec(3, 1.0)
    with pytest.raises(ParameterRangeError):
        post.rjmcmc_sample(data, spec, None, SparseVector.zeros(3), fam.LinearGaussian(1.0), 10,
                           eta_fixed=True, move_mix={"jump": 1.0})
    with pytest.raises(ParameterRangeError):
        post.rjmcmc_sample(data, spec, None, SparseVector.zeros(3), fam.LinearGaussian(1.0), 10)


def _manual_chain(supports):
    vals = [np.ones(len(s)) for s in supports]
    return post.McmcChain(3, supports, vals, [None] * len(supports), [0.0] * len(supports), {}, 0)


def test_support_marginals_trivial_chains():
    sp = post.support_marginals(_manual_chain([(1,)] * 50), burn_in=0)
    assert sp.prob((1,)) == 1.0
    sp = post.support_marginals(_manual_chain([(0,), (2,)] * 50), burn_in=0)
    assert sp.prob((0,)) == pytest.approx(0.5) and sp.prob((2,)) == pytest.approx(0.5)
    np.testing.assert_allclose(post.posterior_mean_theta(_manual_chain([(0,), (2,)] * 50), 0), [0.5, 0, 0.5])


def test_effective_sample_size(rng):
    x = rng.normal(size=20_000)
    assert post.effective_sample_size(x) == pytest.approx(20_000, rel=0.1)
    ar = np.zeros(20_000)
    for i in range(1, 20_000):
        ar[i] = 0.9 * ar[i - 1] + rng.normal()
    # integrated autocorrelation time (1 + 0.9) / (1 - 0.9) = 19
    assert post.effective_sample_size(ar) == pytest.approx(20_000 / 19, rel=0.3)


def test_chain_jsonl(tmp_path):
    ch = _manual_chain([(), (1,)])
    ch.save_jsonl(tmp_path / "c.jsonl")
    lines = (tmp_path / "c.jsonl").read_text().splitlines()
    assert len(lines) == 2 and '"support": [1]' in lines[1]
