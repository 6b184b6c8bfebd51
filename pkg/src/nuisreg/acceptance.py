"""Acceptance checks, shared by the test suite and ``nuisreg verify``.

Each check returns a :class:`CriterionResult`; ``passed`` includes the
runtime limit. Checks are deterministic given their seed.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from . import bvm as bv
from . import diagnostics as dg
from . import divergences as dv
from . import families as fam
from . import harness as hs
from . import posterior as post
from . import priors as pr
from . import splines as sp
from .model import GroupedDataset, SparseVector


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    summary: str
    runtime: float = 0.0
    limit: float = None
    details: dict = field(default_factory=dict)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:>2} {self.name}: {self.summary} ({self.runtime:.1f}s / {self.limit:.0f}s)"


def _timed(number, name, limit):
    def wrap(fn):
        def run(**kw):
            t0 = time.perf_counter()
            ok, summary, details = fn(**kw)
            rt = time.perf_counter() - t0
            return CriterionResult(number, name, bool(ok and rt <= limit), summary, rt, limit, details)
        run.number, run.criterion = number, name
        run.__doc__, run.__name__ = fn.__doc__, fn.__name__
        return run
    return wrap


# ---------------------------------------------------------------------------
# 1: divergences against quadrature and Monte Carlo


def _random_corr_model(rng, r, p):
    kind = str(rng.choice(["CS", "AR", "MA"]))
    lo, hi = fam.ALPHA_RANGES[kind]
    alpha = float(lo + (hi - lo) * rng.uniform(0.1, 0.9))
    return fam.ParamCorrelation(kind, alpha, float(rng.uniform(0.5, 2.0)))


def _one_group(rng, r, p):
    return GroupedDataset([np.zeros(r)], [rng.standard_normal((r, p))])


def _moments(data, theta, eta):
    xi, dl = eta.group_moments(data, 0)
    return data.xs[0] @ theta + xi, dl


def _mc_points(r, n_draws, seed):
    # scrambled Sobol points; the iid standard error quoted below overstates their error
    m = int(math.ceil(math.log2(n_draws)))
    u = stats.qmc.Sobol(r, scramble=True, seed=seed).random_base2(m)[:n_draws]
    return stats.norm.ppf(np.clip(u, 1e-15, 1 - 1e-15))


@_timed(1, "divergence oracle agreement", 60)
def check_divergences(seed=0, instances=100, n_draws=1_000_000):
    """KL, KL variation and Renyi-1/2 vs quadrature (r=1) and Monte Carlo (r=2,3)."""
    rng = fam.make_rng(seed, 1)
    worst_quad, worst_z, fails = 0.0, 0.0, 0
    for k in range(instances):
        r = 1 + k % 3
        p = 2
        data = _one_group(rng, r, p)
        e1, e2 = _random_corr_model(rng, r, p), _random_corr_model(rng, r, p)
        t1, t2 = rng.normal(0, 0.7, p), rng.normal(0, 0.7, p)
        m1, s1 = _moments(data, t1, e1)
        m2, s2 = _moments(data, t2, e2)
        pair = dv.GaussianPair(m1, s1, m2, s2)
        kl, var = dv.gaussian_kl(pair), dv.gaussian_kl_variation(pair)
        ren = dv.avg_renyi(t1, e1, t2, e2, data)
        if r == 1:
            a, b = float(m1[0]), math.sqrt(s1[0, 0])
            c, d = float(m2[0]), math.sqrt(s2[0, 0])
            lo = min(a - 40 * b, c - 40 * d)
            hi = max(a + 40 * b, c + 40 * d)
            f = lambda x: stats.norm.pdf(x, a, b)
            lr = lambda x: stats.norm.logpdf(x, a, b) - stats.norm.logpdf(x, c, d)
            q_kl = integrate.quad(lambda x: f(x) * lr(x), lo, hi, points=[a, c], limit=200,
                                  epsabs=1e-13, epsrel=1e-12)[0]
            q_var = integrate.quad(lambda x: f(x) * (lr(x) - q_kl) ** 2, lo, hi, points=[a, c],
                                   limit=200, epsabs=1e-13, epsrel=1e-12)[0]
            aff = integrate.quad(lambda x: np.sqrt(f(x) * stats.norm.pdf(x, c, d)), lo, hi,
                                 points=[a, c], limit=200, epsabs=1e-14, epsrel=1e-12)[0]
            errs = [abs(kl - q_kl), abs(var - q_var), abs(ren + math.log(aff))]
            worst_quad = max(worst_quad, max(errs))
            fails += sum(e > 1e-6 for e in errs)
        else:
            z = _mc_points(r, n_draws, int(rng.integers(2 ** 31)))
            x = m1 + z @ np.linalg.cholesky(s1).T
            lr = (stats.multivariate_normal.logpdf(x, m1, s1)
                  - stats.multivariate_normal.logpdf(x, m2, s2))
            n = lr.size
            est_kl, se_kl = lr.mean(), lr.std() / math.sqrt(n)
            dev = (lr - est_kl) ** 2
            est_var, se_var = dev.mean(), dev.std() / math.sqrt(n)
            w = np.exp(-0.5 * lr)
            est_ren = -math.log(w.mean())
            se_ren = w.std() / (math.sqrt(n) * w.mean())
            zs = [abs(kl - est_kl) / se_kl, abs(var - est_var) / se_var, abs(ren - est_ren) / se_ren]
            worst_z = max(worst_z, max(zs))
            fails += sum(zz > 3.0 for zz in zs)
    return (fails == 0,
            f"{fails} failures; max quadrature error {worst_quad:.1e}, max |z| {worst_z:.2f}",
            {"max_quad_error": worst_quad, "max_abs_z": worst_z})


# ---------------------------------------------------------------------------
# 2: eigenvalue sandwich


def _random_spd(rng, k):
    a = rng.standard_normal((k, k + 2))
    return a @ a.T / (k + 2) + 0.05 * np.eye(k)


@_timed(2, "eigenvalue sandwich", 10)
def check_sandwich(seed=0, pairs=1000):
    rng = fam.make_rng(seed, 2)
    bad = 0
    for _ in range(pairs):
        k = int(rng.integers(1, 9))
        try:
            dv.eigen_ratio_check(_random_spd(rng, k), _random_spd(rng, k), slack=1e-10)
        except AssertionError:
            bad += 1
    return bad == 0, f"{bad} violations in {pairs} pairs", {"violations": bad}


# ---------------------------------------------------------------------------
# 3: correlation eigenvalue bounds


@_timed(3, "correlation eigen bounds", 10)
def check_correlation_bounds(seed=0, draws=1000):
    rng = fam.make_rng(seed, 3)
    bad = 0
    for _ in range(draws):
        kind = str(rng.choice(["CS", "AR", "MA"]))
        lo, hi = fam.ALPHA_RANGES[kind]
        alpha = float(rng.uniform(lo, hi))
        if not lo < alpha < hi:
            continue
        m = int(rng.integers(1, 31))
        w = np.linalg.eigvalsh(fam.correlation_matrix(kind, alpha, m))
        b_lo, b_hi = fam.correlation_eigen_bounds(kind, alpha, m)
        bad += not (b_lo - 1e-10 <= w[0] and w[-1] <= b_hi + 1e-10)
    return bad == 0, f"{bad} spectra outside bounds in {draws} draws", {"violations": bad}


# ---------------------------------------------------------------------------
# 4: compatibility numbers against exhaustive oracles


def phi2_oracle(x, s):
    """Smallest ``sigma_min(X_S) / ||X||_*`` over all ``1 <= |S| <= s`` via SVD."""
    p = x.shape[1]
    best = np.inf
    for k in range(1, min(s, p) + 1):
        for sup in itertools.combinations(range(p), k):
            best = min(best, np.linalg.svd(x[:, sup], compute_uv=False)[-1])
    return best / pr.x_norm_star(x)


def phi1_grid_oracle(x, s, grid=20_001):
    """Grid search of ``sqrt(|S|) ||X u|| / ||X||_*`` over the l1 sphere, ``|S| <= 2``."""
    if s > 2:
        raise ValueError("grid oracle covers s <= 2")
    p = x.shape[1]
    norms = np.linalg.norm(x, axis=0)
    best = norms.min()
    if s >= 2:
        t = np.linspace(0.0, 1.0, grid)
        for j, k in itertools.combinations(range(p), 2):
            for sg in (1.0, -1.0):
                v = np.outer(t, x[:, j]) + sg * np.outer(1.0 - t, x[:, k])
                best = min(best, math.sqrt(2.0) * np.linalg.norm(v, axis=1).min())
    return best / pr.x_norm_star(x)


@_timed(4, "compatibility numbers", 120)
def check_compatibility(seed=0, designs=50):
    rng = fam.make_rng(seed, 4)
    worst1 = worst2 = 0.0
    order_bad = 0
    for _ in range(designs):
        p = int(rng.integers(2, 7))
        n = int(rng.integers(3, 12))
        x = rng.standard_normal((n, p))
        if rng.random() < 0.3:  # near-collinear pair
            x[:, 1] = x[:, 0] + 0.1 * rng.standard_normal(n)
        for s in (1, 2):
            f2 = dg.phi2(x, s)
            f1 = dg.phi1(x, s)
            worst2 = max(worst2, abs(f2 - phi2_oracle(x, s)))
            worst1 = max(worst1, abs(f1 - phi1_grid_oracle(x, s)))
            order_bad += f1 < f2 - 1e-9
    ok = worst2 < 1e-9 and worst1 < 1e-3 and order_bad == 0
    return ok, (f"max |phi2 - oracle| {worst2:.1e}, max |phi1 - grid| {worst1:.1e}, "
                f"{order_bad} phi1 < phi2"), {"phi1_err": worst1, "phi2_err": worst2}


# ---------------------------------------------------------------------------
# 5: sampler against enumeration


def sampler_benchmarks(seed=0, count=20):
    """Conjugate benchmarks: (data, spec, eta) with p=6 and a varied truth."""
    rng = fam.make_rng(seed, 5)
    out = []
    for k in range(count):
        p = 6
        n = int(rng.choice([20, 40, 80]))
        s0 = int(rng.integers(0, 4))
        sup = tuple(sorted(rng.choice(p, s0, replace=False).tolist()))
        vals = rng.choice([-1.0, 1.0], s0) * rng.uniform(0.2, 1.0, s0)
        eta = fam.LinearGaussian(float(rng.uniform(0.5, 2.0)))
        data = fam.simulate(eta, SparseVector(sup, vals, p), n, p, seed=fam.make_rng(seed, 5, k))
        if k % 4 == 3:  # correlated columns
            xs = np.vstack(data.xs)
            xs[:, 1] = 0.7 * xs[:, 0] + 0.3 * xs[:, 1]
            y = np.concatenate(data.ys)
            data = GroupedDataset([y[i:i + 1] for i in range(n)], [xs[i:i + 1] for i in range(n)])
        spec = pr.SpikeSlabSpec(p, 1.0)
        out.append((data, spec, eta))
    return out


@_timed(5, "sampler vs enumeration", 300)
def check_sampler(seed=0, n_iter=100_000):
    tvs = []
    for k, (data, spec, eta) in enumerate(sampler_benchmarks(seed)):
        exact = post.enumerate_posterior_normal_slab(data, spec, eta, 3)
        chain = post.rjmcmc_sample(data, spec, None, SparseVector.zeros(data.p), eta, n_iter,
                                   seed=fam.make_rng(seed, 55, k), s_max=3, slab="normal",
                                   eta_fixed=True)
        tvs.append(post.support_marginals(chain).support_tv(exact))
    good = sum(t <= 0.05 for t in tvs)
    return good >= 18, f"{good}/20 with TV <= 0.05 (max {max(tvs):.4f})", {"tv": tvs}


# ---------------------------------------------------------------------------
# 6: BvM shape


@_timed(6, "BvM shape check", 600)
def check_bvm_shape(seed=0, replicates=50, ns=(50, 100, 200, 400)):
    eta = fam.LinearGaussian(1.0)
    p = 8
    theta0 = SparseVector((0, 1), [1.0, -1.0], p)
    good, beta_ok = 0, 0
    curves = []
    for rep in range(replicates):
        tv = []
        for n in ns:
            data = fam.simulate(eta, theta0, n, p, seed=fam.make_rng(seed, 6, rep, n))
            spec = pr.SpikeSlabSpec.from_design(data.x, data.n)
            if rep == 0:
                beta_ok += min(abs(theta0.values)) >= dg.beta_min_threshold(data.x, 2)
            exact = post.enumerate_posterior_laplace_slab(data, spec, eta, 3)
            mix = bv.build_bvm(data, theta0, eta, spec, s_max=3)
            tv.append(bv.tv_support_mixture(exact, mix))
        curves.append(tv)
        good += all(a > b for a, b in zip(tv, tv[1:])) and tv[-1] <= 0.15
    frac = good / replicates
    med = np.median(np.array(curves), axis=0)
    return (frac >= 0.8 and beta_ok == len(ns),
            f"{good}/{replicates} decreasing with TV(400) <= 0.15; median TV {np.round(med, 4).tolist()}",
            {"curves": curves, "beta_min_ok": beta_ok})


# ---------------------------------------------------------------------------
# 7: selection consistency


def selection_config(seed=0, replicates=200):
    return hs.ExperimentConfig.from_dict({
        "name": "selection", "family": {"family": "linear", "sigma2": 1.0},
        "truth": {"support": [0, 1, 2], "values": [1.5, -1.5, 1.5]},
        "grid": {"n": [100, 200, 400], "p": [100]},
        "engine": {"kind": "rjmcmc", "n_iter": 30_000, "s_max": 10, "eta_fixed": True},
        "replicates": replicates, "seed": seed})


@_timed(7, "selection consistency", 900)
def check_selection(seed=0, replicates=200, margin_checks=10):
    cfg = selection_config(seed, replicates)
    table = hs.run_experiment(cfg)
    sel = hs.selection_metrics(table)
    last = sel[len(cfg.grid.n) - 1]
    # beta-min margin on a subset of the simulated designs (randomized phi2, so optimistic)
    margins = []
    for gi, n in enumerate(cfg.grid.n):
        for rep in range(margin_checks):
            data = fam.simulate(cfg.eta0(), cfg.theta0(100), n, 100,
                                seed=fam.make_rng(cfg.seed, gi, rep, 0))
            thr = dg.beta_min_threshold(data.x, 3, randomized=True, n_random=5000)
            margins.append(1.5 / thr)
    ok = last["exact"] >= 0.95 and last["superset"] <= 0.05 and min(margins) >= 2.0
    rates = {cfg.grid.n[g]: round(v["exact"], 3) for g, v in sel.items()}
    return ok, (f"exact recovery by n {rates}; superset(400) {last['superset']:.3f}; "
                f"min beta-min margin {min(margins):.2f}"), {"selection": sel, "margins": margins}


# ---------------------------------------------------------------------------
# 8: contraction slopes


def contraction_configs(seed=0, replicates=20):
    common = {"truth": {"support": [0, 1], "values": [1.0, -1.0]}, "replicates": replicates,
              "seed": seed}
    ns = [50, 100, 200, 400, 800]
    return {
        "linear": hs.ExperimentConfig.from_dict({
            **common, "name": "contraction-linear", "family": {"family": "linear", "sigma2": 1.0},
            "grid": {"n": ns, "p": [8]}, "engine": {"kind": "enumeration", "s_max": 3}}),
        "ar-correlation": hs.ExperimentConfig.from_dict({
            **common, "name": "contraction-ar",
            "family": {"family": "param_correlation", "kind": "AR", "alpha": 0.5, "sigma2": 1.0},
            "grid": {"n": ns, "p": [8]}, "simulate": {"m": 3},
            "engine": {"kind": "rjmcmc", "n_iter": 10_000, "s_max": 8, "eta_fixed": False}}),
        "mixed-effects": hs.ExperimentConfig.from_dict({
            **common, "name": "contraction-mixed",
            "family": {"family": "mixed_effects", "psi": [[0.5]], "sigma2": 1.0},
            "grid": {"n": ns, "p": [8]}, "simulate": {"m": 3, "z_design": "intercept"},
            "engine": {"kind": "rjmcmc", "n_iter": 10_000, "s_max": 8, "eta_fixed": False}}),
    }


@_timed(8, "contraction slopes", 2700)
def check_contraction(seed=0, replicates=20, per_family_limit=900.0):
    slopes, times = {}, {}
    for name, cfg in contraction_configs(seed, replicates).items():
        t0 = time.perf_counter()
        table = hs.run_experiment(cfg)
        times[name] = time.perf_counter() - t0
        slopes[name] = hs.contraction_slope(table, "err_l2")
    in_band = {k: -0.65 <= v <= -0.35 for k, v in slopes.items()}
    nuis_ok = sum(in_band[k] for k in ("ar-correlation", "mixed-effects"))
    ok = in_band["linear"] and nuis_ok >= 2 and max(times.values()) <= per_family_limit
    txt = ", ".join(f"{k} {v:.3f} ({times[k]:.0f}s)" for k, v in slopes.items())
    return ok, f"slopes {txt}", {"slopes": slopes, "times": times}


# ---------------------------------------------------------------------------
# 9: coverage


def coverage_config(seed=0, replicates=200):
    return hs.ExperimentConfig.from_dict({
        "name": "coverage", "family": {"family": "linear", "sigma2": 1.0},
        "truth": {"support": [0, 1], "values": [1.0, -1.0]},
        "grid": {"n": [400], "p": [8]},
        "engine": {"kind": "enumeration", "slab": "normal", "s_max": 3},
        "level": 0.95, "replicates": replicates, "seed": seed})


@_timed(9, "credible interval coverage", 600)
def check_coverage(seed=0, replicates=200):
    table = hs.run_experiment(coverage_config(seed, replicates))
    cov = hs.coverage_metrics(table, 0.95)[0]
    ok = all(0.90 <= c <= 0.99 for c in cov)
    return ok, f"coverage per active coordinate {np.round(cov, 3).tolist()}", {"coverage": cov}


# ---------------------------------------------------------------------------
# 10: Neyman-Pearson error bound


def np_configs(seed=0):
    base = {"grid": {"n": [5, 10, 20, 40, 80, 160], "p": [4]}, "seed": seed}
    return {
        "mean-shift": hs.ExperimentConfig.from_dict({
            **base, "family": {"family": "linear", "sigma2": 1.0},
            "truth": {"support": [0], "values": [0.0]},
            "np_test": {"alternative_truth": {"support": [0, 2], "values": [0.4, -0.2]}}}),
        "ar-correlation": hs.ExperimentConfig.from_dict({
            **base, "family": {"family": "param_correlation", "kind": "AR", "alpha": 0.3, "sigma2": 1.0},
            "truth": {"support": [1], "values": [0.5]}, "simulate": {"m": 3},
            "np_test": {"alternative_family": {"family": "param_correlation", "kind": "AR",
                                               "alpha": 0.5, "sigma2": 1.2},
                        "alternative_truth": {"support": [1], "values": [0.6]}}}),
    }


@_timed(10, "Neyman-Pearson bound", 300)
def check_np(seed=0, draws=10_000):
    bad, curves = 0, {}
    for name, cfg in np_configs(seed).items():
        rows = hs.np_error_curve(cfg, draws=draws)
        curves[name] = rows
        bad += sum(not r["ok"] for r in rows)
    txt = "; ".join(f"{k}: " + ", ".join(f"{r['error']:.3f}<={r['bound']:.3f}" for r in v)
                    for k, v in curves.items())
    return bad == 0, f"{bad} grid points above bound + 3 SE; {txt}", {"curves": curves}


# ---------------------------------------------------------------------------
# 11: measurement-error centre identity


def mem_explicit_center(data, eta, support):
    """Closed-form least-squares centre for the measurement-error family."""
    n = data.n
    xs = np.array([data.xs[i][0] for i in range(n)])
    ys = np.array([data.ys[i][0] for i in range(n)])
    w = np.array([data.ys[i][1:] for i in range(n)])
    h_star = np.eye(n) - np.ones((n, n)) / n
    k = eta.beta @ eta.Sigma @ np.linalg.inv(eta.Sigma + eta.Psi)
    xs_s = xs[:, list(support)]
    resp = ys - (eta.alpha + eta.mu @ eta.beta) - (w - eta.mu) @ k
    return np.linalg.solve(xs_s.T @ h_star @ xs_s, xs_s.T @ h_star @ resp)


@_timed(11, "measurement-error centre identity", 60)
def check_mem_identity(seed=0, instances=20):
    rng = fam.make_rng(seed, 11)
    worst = 0.0
    for k in range(instances):
        q = int(rng.integers(1, 4))
        p = int(rng.integers(3, 7))
        n = int(rng.integers(20, 60))
        a = rng.standard_normal((q, q))
        b = rng.standard_normal((q, q))
        eta = fam.MeasurementError(float(rng.normal()), rng.normal(size=q), rng.normal(size=q),
                                   float(rng.uniform(0.3, 2.0)), a @ a.T + 0.5 * np.eye(q),
                                   b @ b.T + 0.5 * np.eye(q))
        s0 = int(rng.integers(1, 3))
        theta0 = SparseVector(tuple(sorted(rng.choice(p, s0, replace=False).tolist())),
                              rng.normal(size=s0), p)
        data = fam.simulate(eta, theta0, n, p, seed=fam.make_rng(seed, 11, k))
        sups = [s for kk in (1, 2) for s in itertools.combinations(range(p), kk)]
        mix = bv.build_bvm(data, theta0, eta, pr.SpikeSlabSpec(p, 1.0), supports=sups)
        for s in sups:
            c, _ = mix.component(s)
            ref = mem_explicit_center(data, eta, s)
            worst = max(worst, float(np.max(np.abs(c - ref)) / max(1.0, np.max(np.abs(ref)))))
    return worst < 1e-10, f"max relative difference {worst:.1e}", {"max_diff": worst}


# ---------------------------------------------------------------------------
# 12: spline rate and exact properties


@_timed(12, "B-spline approximation rate", 60)
def check_splines(q=4, js=(8, 12, 16, 24, 32, 48, 64)):
    f = lambda z: np.sin(2.0 * np.pi * z) + np.exp(z)
    errs = [sp.approx_error(f, sp.SplineBasis(J, q), grid_size=20_000) for J in js]
    slope = float(np.polyfit(np.log(js), np.log(errs), 1)[0])
    z = np.concatenate([np.linspace(0.0, 1.0, 1001), [0.0, 1.0]])
    pu = 0.0
    ends = True
    for J in js:
        B = sp.spline_design(sp.SplineBasis(J, q), z)
        pu = max(pu, float(np.max(np.abs(B.sum(axis=1) - 1.0))))
        e0, e1 = np.zeros(J), np.zeros(J)
        e0[0], e1[-1] = 1.0, 1.0
        b0 = sp.spline_design(sp.SplineBasis(J, q), np.array([0.0, 1.0]))
        ends &= bool(np.allclose(b0[0], e0, atol=1e-15, rtol=0) and np.allclose(b0[1], e1, atol=1e-15, rtol=0))
    ok = slope <= -(q - 0.5) and pu < 1e-13 and ends
    return ok, (f"slope {slope:.2f} (need <= {-(q - 0.5)}), partition-of-unity error {pu:.1e}, "
                f"endpoints {'exact' if ends else 'not exact'}"), {"slope": slope, "errors": errs}


CHECKS = [check_divergences, check_sandwich, check_correlation_bounds, check_compatibility,
          check_sampler, check_bvm_shape, check_selection, check_contraction, check_coverage,
          check_np, check_mem_identity, check_splines]

SUITES = {
    "divergences": [1, 2, 10],
    "correlation": [3],
    "diagnostics": [4],
    "sampler": [5],
    "bvm": [6, 9, 11],
    "selection": [7],
    "contraction": [8],
    "splines": [12],
    "quick": [1, 2, 3, 4, 11, 12],
    "all": list(range(1, 13)),
}


def run_suite(name="all", seed=0, echo=print):
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    out = []
    for num in SUITES[name]:
        res = CHECKS[num - 1](seed=seed) if num != 12 else CHECKS[11]()
        out.append(res)
        if echo:
            echo(res.line())
    return out
