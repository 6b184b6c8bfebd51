"""Posterior computation over supports and coefficients.

Two exact oracles enumerate every support up to a size cap with the nuisance
state held fixed: a conjugate normal slab (closed form) and the Laplace slab
(tensor Gauss-Legendre quadrature, at most three dimensions). The general
tool is a reversible-jump sampler over ``(S, theta_S, eta)``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.special import log_ndtr, logsumexp

from . import model as core
from .errors import (BudgetExceededError, CovarianceNotSPDError, NumericalFailure,
                     ParameterRangeError, QuadratureError)
from .families import make_rng
from .model import SparseVector
from .priors import joint_log_prior, nuisance_prior_log_density

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# support distributions


@dataclass
class SupportPosterior:
    """Normalized distribution over supports with optional per-support moments."""

    p: int
    supports: list
    log_weights: np.ndarray
    means: list = None
    covs: list = None
    flags: list = field(default_factory=list)
    method: str = ""

    def __post_init__(self):
        self.supports = [tuple(int(j) for j in s) for s in self.supports]
        lw = np.asarray(self.log_weights, dtype=float)
        self.log_weights = lw - logsumexp(lw) if lw.size else lw
        self._index = {s: i for i, s in enumerate(self.supports)}

    @property
    def weights(self):
        return np.exp(self.log_weights)

    @property
    def inclusion_probs(self):
        out = np.zeros(self.p)
        for s, w in zip(self.supports, self.weights):
            out[list(s)] += w
        return np.clip(out, 0.0, 1.0)

    def prob(self, support):
        i = self._index.get(tuple(sorted(support)))
        return 0.0 if i is None else float(np.exp(self.log_weights[i]))

    def modal(self):
        return self.supports[int(np.argmax(self.log_weights))]

    def component(self, support):
        i = self._index.get(tuple(sorted(support)))
        if i is None or self.means is None:
            return None
        return self.means[i], None if self.covs is None else self.covs[i]

    def support_tv(self, other):
        """Total variation between the two support distributions."""
        keys = set(self.supports) | set(other.supports)
        return 0.5 * sum(abs(self.prob(s) - other.prob(s)) for s in keys)

    def posterior_mean(self):
        out = np.zeros(self.p)
        if self.means is None:
            raise ValueError("per-support means unavailable")
        for s, w, m in zip(self.supports, self.weights, self.means):
            if s:
                out[list(s)] += w * np.asarray(m)
        return out

    def to_dict(self):
        return {"p": self.p, "method": self.method,
                "supports": [list(s) for s in self.supports],
                "log_weights": self.log_weights.tolist(),
                "means": None if self.means is None else [np.asarray(m).tolist() for m in self.means],
                "covs": None if self.covs is None else [np.asarray(c).tolist() for c in self.covs],
                "flags": [[f[0], list(f[1])] for f in self.flags]}

    @classmethod
    def from_dict(cls, d):
        sups = [tuple(s) for s in d["supports"]]
        means = None if d.get("means") is None else [np.asarray(m, dtype=float) for m in d["means"]]
        covs = None
        if d.get("covs") is not None:
            covs = [np.asarray(c, dtype=float).reshape(len(s), len(s)) for s, c in zip(sups, d["covs"])]
        flags = [(f[0], tuple(f[1])) for f in d.get("flags", [])]
        return cls(int(d["p"]), sups, np.asarray(d["log_weights"], dtype=float), means, covs,
                   flags, d.get("method", ""))


def all_supports(p, s_max, budget=1_000_000):
    s_max = min(int(s_max), p)
    total = sum(comb(p, k) for k in range(s_max + 1))
    if total > budget:
        raise BudgetExceededError(f"{total} supports exceed the enumeration budget {budget}")
    return [c for k in range(s_max + 1) for c in itertools.combinations(range(p), k)]


def _whitened_response(data, eta):
    wd = core.whiten(data, eta, SparseVector.zeros(data.p))
    return wd.x_tilde, wd.u


def _dim_table(spec, s_max):
    return np.asarray(spec.log_dim_table - spec.log_binom_table)[: s_max + 1]


def enumerate_posterior_normal_slab(data, spec, eta, s_max, slab_precision=1.0,
                                    budget=1_000_000, cond_limit=1e12):
    """Exact support posterior under ``theta_S ~ N(0, I / slab_precision)``."""
    kappa = float(slab_precision)
    if not kappa > 0:
        raise ParameterRangeError("slab precision must be positive")
    x, y = _whitened_response(data, eta)
    p = data.p
    s_max = min(int(s_max), p)
    all_supports(p, s_max, budget)
    g = x.T @ x
    c = x.T @ y
    dim = _dim_table(spec, s_max)
    sups, lws, means, covs, flags = [()], [dim[0]], [np.empty(0)], [np.empty((0, 0))], []
    for k in range(1, s_max + 1):
        sup = np.array(list(itertools.combinations(range(p), k)), dtype=int)
        a = g[sup[:, :, None], sup[:, None, :]] + kappa * np.eye(k)
        w = np.linalg.eigvalsh(a)
        bad = w[:, -1] > cond_limit * w[:, 0]
        if bad.any():
            a[bad] += 1e-8 * w[bad, -1:, None] * np.eye(k)
            flags.extend(("ridge", tuple(s)) for s in sup[bad].tolist())
        ch = np.linalg.cholesky(a)
        logdet = 2.0 * np.log(np.diagonal(ch, axis1=1, axis2=2)).sum(axis=1)
        b = c[sup]
        m = np.linalg.solve(a, b[..., None])[..., 0]
        lm = 0.5 * k * np.log(kappa) - 0.5 * logdet + 0.5 * np.sum(b * m, axis=1)
        inv = np.linalg.inv(a)
        for i, s in enumerate(sup):
            sups.append(tuple(s.tolist()))
            lws.append(dim[k] + lm[i])
            means.append(m[i])
            covs.append(inv[i])
    return SupportPosterior(p, sups, np.array(lws), means, covs, flags, "normal-slab-enumeration")


def _gl_axis(segments, panels, order):
    x0, w0 = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for lo, hi in segments:
        edges = np.linspace(lo, hi, panels + 1)
        for a, b in zip(edges[:-1], edges[1:]):
            h = 0.5 * (b - a)
            nodes.append(a + h * (x0 + 1.0))
            weights.append(h * w0)
    return np.concatenate(nodes), np.concatenate(weights)


def _inner_laplace(c, a, lam):
    """Integrate ``exp(c t - a t^2/2 - lam |t|)`` over ``t`` in closed form.

    Returns the log integral and the first two moments of the normalized
    density, which is a two-piece mixture of normals truncated at 0.
    """
    sd = 1.0 / math.sqrt(a)
    mp, mn = (c - lam) / a, (c + lam) / a
    zp, zn = mp / sd, mn / sd
    lp = 0.5 * a * mp * mp + log_ndtr(zp)
    ln = 0.5 * a * mn * mn + log_ndtr(-zn)
    log_i = np.logaddexp(lp, ln) + 0.5 * math.log(2.0 * math.pi / a)
    wp = np.exp(lp - np.logaddexp(lp, ln))
    wn = 1.0 - wp
    rp = np.exp(-0.5 * zp * zp - 0.5 * LOG_2PI - log_ndtr(zp))      # phi/Phi at zp
    rn = np.exp(-0.5 * zn * zn - 0.5 * LOG_2PI - log_ndtr(-zn))     # phi/Phi(-.) at zn
    ep, en = mp + sd * rp, mn - sd * rn
    vp = sd * sd * (1.0 - rp * (rp + zp))
    vn = sd * sd * (1.0 - rn * (rn - zn))
    m1 = wp * ep + wn * en
    m2 = wp * (vp + ep * ep) + wn * (vn + en * en)
    return log_i, m1, m2


def laplace_slab_evidence(a, b, lam, rtol=1e-4, order=16, max_level=5, width=8.0):
    """``log int exp(b't - t'At/2 - lam |t|_1) dt`` with moments of the tilted density.

    Returns ``(log_integral, mean, cov, converged)``. The last coordinate is
    integrated in closed form given the others; the remaining (at most two)
    coordinates use tensor Gauss-Legendre panels on the least-squares centre
    +- ``width`` standard deviations, widened by the largest possible
    shrinkage shift and split at 0 where the slab kinks. Panels double until
    the relative change falls below ``rtol``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    k = b.size
    if k == 0:
        return 0.0, np.empty(0), np.empty((0, 0)), True
    if k > 3:
        raise ParameterRangeError("Laplace-slab quadrature supports at most 3 dimensions")
    att = float(a[-1, -1])
    if k == 1:
        log_i, m1, m2 = _inner_laplace(b[0], att, lam)
        return float(log_i), np.array([m1]), np.array([[m2 - m1 * m1]]), True
    o = k - 1
    aoo, aot, bo, bt = a[:o, :o], a[:o, -1], b[:o], b[-1]
    ainv = np.linalg.inv(a)
    centre = ainv @ b
    sd = np.sqrt(np.diag(ainv))
    shift = lam * np.abs(ainv).sum(axis=1)
    lo, hi = (centre - width * sd - shift)[:o], (centre + width * sd + shift)[:o]
    segs = [[(l, 0.0), (0.0, h)] if l < 0.0 < h else [(l, h)] for l, h in zip(lo, hi)]
    prev = None
    for level in range(max_level + 1):
        axes = [_gl_axis(sg, 2 ** level, order) for sg in segs]
        grids = np.meshgrid(*[ax[0] for ax in axes], indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        logw = sum(np.meshgrid(*[np.log(ax[1]) for ax in axes], indexing="ij")).ravel()
        f = pts @ bo - 0.5 * np.einsum("ni,ij,nj->n", pts, aoo, pts) - lam * np.abs(pts).sum(axis=1)
        li, m1, m2 = _inner_laplace(bt - pts @ aot, att, lam)
        lv = f + li + logw
        log_i = float(logsumexp(lv))
        pw = np.exp(lv - log_i)
        mean = np.append(pw @ pts, pw @ m1)
        full = np.column_stack([pts, m1])
        second = (full * pw[:, None]).T @ full
        second[-1, -1] = pw @ m2
        cov = second - np.outer(mean, mean)
        if prev is not None and abs(math.expm1(log_i - prev)) < rtol:
            return log_i, mean, cov, True
        prev = log_i
    return log_i, mean, cov, False


def enumerate_posterior_laplace_slab(data, spec, eta, s_max=3, rtol=1e-4, budget=1_000_000,
                                     strict=False, **quad_kw):
    """Exact support posterior under the Laplace slab by per-support quadrature."""
    if s_max > 3:
        raise ParameterRangeError("Laplace-slab enumeration is limited to s_max <= 3")
    x, y = _whitened_response(data, eta)
    p = data.p
    s_max = min(int(s_max), p)
    sups = all_supports(p, s_max, budget)
    g = x.T @ x
    c = x.T @ y
    dim = _dim_table(spec, s_max)
    lam = spec.lam
    lws, means, covs, flags = [], [], [], []
    for s in sups:
        idx = list(s)
        log_i, m, cv, ok = laplace_slab_evidence(g[np.ix_(idx, idx)], c[idx], lam, rtol, **quad_kw)
        if not ok:
            if strict:
                raise QuadratureError(f"quadrature did not converge on support {s}")
            flags.append(("quadrature", s))
        lws.append(dim[len(s)] + len(s) * math.log(lam / 2.0) + log_i)
        means.append(m)
        covs.append(cv)
    return SupportPosterior(p, sups, np.array(lws), means, covs, flags, "laplace-slab-quadrature")


# ---------------------------------------------------------------------------
# reversible-jump sampler


MOVES = ("add", "delete", "swap", "within", "nuisance")
DEFAULT_MIX = {"add": 0.25, "delete": 0.25, "swap": 0.2, "within": 0.2, "nuisance": 0.1}


@dataclass
class McmcChain:
    p: int
    supports: list
    values: list
    etas: list
    log_post: list
    accept: dict
    seed: int
    template: object = None
    thin: int = 1

    def __len__(self):
        return len(self.supports)

    def acceptance_rates(self):
        return {m: (a / t if t else float("nan")) for m, (a, t) in self.accept.items()}

    def eta_at(self, i):
        if self.template is None or self.etas[i] is None:
            return self.template
        return self.template.from_unconstrained(np.asarray(self.etas[i]))[0]

    def theta_at(self, i):
        return SparseVector(self.supports[i], self.values[i], self.p)

    def records(self):
        for i in range(len(self)):
            eta = self.etas[i]
            yield {"iter": i * self.thin, "support": list(self.supports[i]),
                   "theta": np.asarray(self.values[i]).tolist(),
                   "eta": None if eta is None else np.asarray(eta).tolist(),
                   "log_post": self.log_post[i]}

    def save_jsonl(self, path):
        with open(path, "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")


def _burn(n, burn_in):
    if burn_in is None:
        return int(0.2 * n)
    if 0 < burn_in < 1:
        return int(burn_in * n)
    return int(burn_in)


def support_marginals(chain, burn_in=None):
    """Empirical support frequencies with per-support sample moments."""
    start = _burn(len(chain), burn_in)
    counts, sums, sq = {}, {}, {}
    for s, v in zip(chain.supports[start:], chain.values[start:]):
        v = np.asarray(v, dtype=float)
        if s in counts:
            counts[s] += 1
            sums[s] += v
            sq[s] += np.outer(v, v)
        else:
            counts[s], sums[s], sq[s] = 1, v.copy(), np.outer(v, v)
    if not counts:
        raise ValueError("no draws left after burn-in")
    sups = list(counts)
    n = np.array([counts[s] for s in sups], dtype=float)
    means = [sums[s] / counts[s] for s in sups]
    covs = [sq[s] / counts[s] - np.outer(m, m) for s, m in zip(sups, means)]
    return SupportPosterior(chain.p, sups, np.log(n), means, covs, [], "mcmc")


def posterior_mean_theta(chain, burn_in=None):
    start = _burn(len(chain), burn_in)
    out = np.zeros(chain.p)
    for s, v in zip(chain.supports[start:], chain.values[start:]):
        if s:
            out[list(s)] += v
    return out / max(1, len(chain) - start)


def effective_sample_size(trace):
    """Initial-positive-sequence ESS of a scalar trace."""
    x = np.asarray(trace, dtype=float)
    n = x.size
    if n < 4 or np.var(x) == 0:
        return float(n)
    x = x - x.mean()
    f = np.fft.rfft(x, 2 * n)
    ac = np.fft.irfft(f * np.conj(f))[:n] / (n * x.var())
    tau = 1.0
    for k in range(1, n - 1, 2):
        pair = ac[k] + ac[k + 1]
        if pair <= 0:
            break
        tau += 2 * pair
    return float(n / tau)


class _State:
    """Whitened quantities at the current nuisance value."""

    def __init__(self, data, eta, theta):
        blocks = core._whitening_blocks(data, eta)
        self.x = core.apply_blocks(blocks, data.x)
        xi = np.empty(data.n_star)
        for _, (rows, _w, xic, _ld) in blocks.items():
            xi[rows] = xic
        self.r = core.apply_blocks(blocks, data.y - data.x @ theta - xi)
        self.logdet = float(sum(bk[3].sum() for bk in blocks.values()))
        self.nn = np.einsum("ij,ij->j", self.x, self.x)
        self.xT = np.ascontiguousarray(self.x.T)

    @staticmethod
    def residual_only(data, eta, theta):
        blocks = core._whitening_blocks(data, eta)
        xi = np.empty(data.n_star)
        for _, (rows, _w, xic, _ld) in blocks.items():
            xi[rows] = xic
        r = core.apply_blocks(blocks, data.y - data.x @ theta - xi)
        return r, float(sum(bk[3].sum() for bk in blocks.values()))


def _norm_logpdf(x, m, sd):
    z = (x - m) / sd
    return -0.5 * z * z - math.log(sd) - 0.5 * LOG_2PI


def rjmcmc_sample(data, spec, eta_prior, init_theta, init_eta, n_iter, seed=0, move_mix=None,
                  s_max=None, slab="laplace", slab_precision=1.0, eta_fixed=False,
                  likelihood=True, add_proposal="conditional", proposal_scale=1.0,
                  zero_sd=None, nuisance_step=0.1, adapt_iters=None, thin=1):
    """Reversible-jump Metropolis-Hastings for the joint posterior.

    Moves: ``add``/``delete`` (birth/death of one coordinate), ``swap``
    (replace an active index by an inactive one, refreshing its value),
    ``within`` (random walk on one active value) and ``nuisance`` (random
    walk on the unconstrained nuisance vector, plus edge toggles for the
    graphical family). New values are drawn from ``N(m_j, (c/sqrt(n_j))^2)``,
    ``m_j`` the conditional least-squares value of coordinate ``j`` given the
    rest (``add_proposal="conditional"``), or from ``N(0, zero_sd^2)``
    (``add_proposal="zero"``). The nuisance step size adapts toward 0.234
    acceptance during the first ``adapt_iters`` iterations only.
    """
    rng = make_rng(seed)
    p = data.p
    s_max = p if s_max is None else min(int(s_max), p)
    mix = dict(DEFAULT_MIX if move_mix is None else move_mix)
    if eta_fixed:
        mix["nuisance"] = 0.0
    unknown = set(mix) - set(MOVES)
    if unknown:
        raise ParameterRangeError(f"unknown moves {sorted(unknown)}")
    tot = sum(mix.values())
    if tot <= 0:
        raise ParameterRangeError("move mixture must have positive mass")
    probs = np.array([mix.get(m, 0.0) / tot for m in MOVES])
    cum = np.cumsum(probs)
    p_add, p_del = probs[0], probs[1]
    log_ratio_ad = math.log(p_del) - math.log(p_add) if p_add > 0 and p_del > 0 else 0.0

    dimtab = np.full(p + 1, -np.inf)
    dimtab[: s_max + 1] = (spec.log_dim_table - spec.log_binom_table)[: s_max + 1]
    if slab == "laplace":
        lam = spec.lam
        c_slab = math.log(lam / 2.0)

        def slab_lp(v):
            return c_slab - lam * abs(v)
    elif slab == "normal":
        kap = float(slab_precision)
        c_slab = 0.5 * math.log(kap) - 0.5 * LOG_2PI

        def slab_lp(v):
            return c_slab - 0.5 * kap * v * v
    else:
        raise ParameterRangeError(f"unknown slab {slab!r}")
    zsd = zero_sd if zero_sd is not None else (1.0 / spec.lam if slab == "laplace" else 1.0 / math.sqrt(slab_precision))

    theta = init_theta.to_dense() if isinstance(init_theta, SparseVector) else np.asarray(init_theta, float).copy()
    active = list(np.flatnonzero(theta))
    mask = theta != 0.0
    if len(active) > s_max:
        raise ParameterRangeError("initial support exceeds s_max")
    eta = init_eta
    st = _State(data, eta, theta)
    n_star = data.n_star
    use_lik = 1.0 if likelihood else 0.0

    def loglik_of(r, logdet):
        return -0.5 * (n_star * LOG_2PI + logdet + float(r @ r))

    ll = loglik_of(st.r, st.logdet)
    lp_theta = joint_log_prior(SparseVector.from_dense(theta), spec) if slab == "laplace" else (
        dimtab[len(active)] + sum(slab_lp(theta[j]) for j in active))
    if not eta_fixed and eta_prior is None:
        raise ParameterRangeError("a nuisance prior is required unless eta is fixed")
    lp_eta = 0.0 if eta_fixed else nuisance_prior_log_density(eta, eta_prior).logpdf
    if not np.isfinite(use_lik * ll + lp_theta + lp_eta):
        raise NumericalFailure("log posterior is not finite at the initial state")

    accept = {m: [0, 0] for m in MOVES}
    sups, vals, etas, trace = [], [], [], []
    adapt_iters = int(0.2 * n_iter) if adapt_iters is None else int(adapt_iters)
    log_step = math.log(nuisance_step)
    sc = float(proposal_scale)
    graphical = getattr(eta, "family", "") == "graphical"
    unif = rng.random(n_iter)
    normals = rng.standard_normal(n_iter)

    def draw_inactive():
        while True:
            k = int(rng.integers(p))
            if not mask[k]:
                return k

    def proposal_params(j, cdot):
        # cdot = x_j . r with coordinate j absent from the fit
        nn = st.nn[j]
        if add_proposal == "conditional":
            return cdot / nn, sc / math.sqrt(nn)
        return 0.0, zsd

    for it in range(n_iter):
        # no-op moves `continue`; the finally clause still records the state
        try:
            u = unif[it]
            move = MOVES[int(np.searchsorted(cum, u, side="right"))] if u < cum[-1] else MOVES[-1]
            s = len(active)
            log_a = None
            if move == "add":
                if s >= s_max or s >= p:
                    accept[move][1] += 1
                    continue
                j = draw_inactive()
                cj = float(st.xT[j] @ st.r)
                m, sd = proposal_params(j, cj)
                v = m + sd * normals[it]
                dll = v * cj - 0.5 * v * v * st.nn[j]
                log_a = (use_lik * dll + dimtab[s + 1] - dimtab[s] + slab_lp(v) - _norm_logpdf(v, m, sd)
                         + log_ratio_ad + math.log((p - s) / (s + 1)))
                accept[move][1] += 1
                if math.log(rng.random()) < log_a:
                    theta[j] = v
                    mask[j] = True
                    active.append(j)
                    st.r -= v * st.x[:, j]
                    ll += dll
                    lp_theta += dimtab[s + 1] - dimtab[s] + slab_lp(v)
                    accept[move][0] += 1
            elif move == "delete":
                accept[move][1] += 1
                if s == 0:
                    continue
                pos = int(rng.integers(s))
                j = active[pos]
                v = theta[j]
                cj = float(st.xT[j] @ st.r) + v * st.nn[j]
                m, sd = proposal_params(j, cj)
                dll = -(v * cj - 0.5 * v * v * st.nn[j])
                log_a = (use_lik * dll + dimtab[s - 1] - dimtab[s] - slab_lp(v) + _norm_logpdf(v, m, sd)
                         - log_ratio_ad - math.log((p - s + 1) / s))
                if math.log(rng.random()) < log_a:
                    theta[j] = 0.0
                    mask[j] = False
                    active.pop(pos)
                    st.r += v * st.x[:, j]
                    ll += dll
                    lp_theta += dimtab[s - 1] - dimtab[s] - slab_lp(v)
                    accept[move][0] += 1
            elif move == "swap":
                accept[move][1] += 1
                if s == 0 or s == p:
                    continue
                pos = int(rng.integers(s))
                j = active[pos]
                k = draw_inactive()
                vj = theta[j]
                xr_j = float(st.xT[j] @ st.r)
                xr_k = float(st.xT[k] @ st.r)
                g_jk = float(st.xT[j] @ st.xT[k])
                # residual with j removed: r0 = r + vj x_j
                c_k = xr_k + vj * g_jk
                c_j = xr_j + vj * st.nn[j]
                mk, sdk = proposal_params(k, c_k)
                vk = mk + sdk * normals[it]
                mj, sdj = proposal_params(j, c_j)
                rr0 = 2.0 * vj * xr_j + vj * vj * st.nn[j]          # |r0|^2 - |r|^2
                rr1 = -2.0 * vk * c_k + vk * vk * st.nn[k]          # |r'|^2 - |r0|^2
                dll = -0.5 * (rr0 + rr1)
                log_a = (use_lik * dll + slab_lp(vk) - slab_lp(vj)
                         + _norm_logpdf(vj, mj, sdj) - _norm_logpdf(vk, mk, sdk))
                if math.log(rng.random()) < log_a:
                    theta[j], theta[k] = 0.0, vk
                    mask[j], mask[k] = False, True
                    active[pos] = k
                    st.r += vj * st.x[:, j] - vk * st.x[:, k]
                    ll += dll
                    lp_theta += slab_lp(vk) - slab_lp(vj)
                    accept[move][0] += 1
            elif move == "within":
                accept[move][1] += 1
                if s == 0:
                    continue
                j = active[int(rng.integers(s))]
                v = theta[j]
                step = sc / math.sqrt(st.nn[j]) if add_proposal == "conditional" else zsd
                d = step * normals[it]
                v2 = v + d
                if v2 == 0.0:
                    continue
                dll = d * float(st.xT[j] @ st.r) - 0.5 * d * d * st.nn[j]
                log_a = use_lik * dll + slab_lp(v2) - slab_lp(v)
                if math.log(rng.random()) < log_a:
                    theta[j] = v2
                    st.r -= d * st.x[:, j]
                    ll += dll
                    lp_theta += slab_lp(v2) - slab_lp(v)
                    accept[move][0] += 1
            else:  # nuisance
                accept[move][1] += 1
                prop, extra, rw = None, 0.0, True
                try:
                    if graphical and rng.random() < 0.5:
                        prop, extra = _toggle_edge(eta, rng)
                        rw = False
                    else:
                        uvec = eta.unconstrained()
                        _, lj0 = eta.from_unconstrained(uvec)
                        u2 = uvec + math.exp(log_step) * rng.standard_normal(uvec.size)
                        prop, lj1 = eta.from_unconstrained(u2)
                        extra = lj1 - lj0
                    lpe2 = nuisance_prior_log_density(prop, eta_prior).logpdf
                    if not np.isfinite(lpe2):
                        raise ParameterRangeError("outside prior support")
                    r2, ld2 = _State.residual_only(data, prop, theta)
                    ll2 = loglik_of(r2, ld2)
                    log_a = use_lik * (ll2 - ll) + lpe2 - lp_eta + extra
                except (ParameterRangeError, CovarianceNotSPDError, np.linalg.LinAlgError):
                    log_a = -np.inf
                ok = math.log(rng.random()) < log_a
                if ok:
                    eta = prop
                    st = _State(data, eta, theta)
                    ll = loglik_of(st.r, st.logdet)
                    lp_eta = lpe2
                    accept[move][0] += 1
                if it < adapt_iters and rw:
                    log_step += (float(ok) - 0.234) / math.sqrt(1.0 + accept[move][1])
        finally:
            if (it + 1) % thin == 0:
                sup = tuple(sorted(active))
                sups.append(sup)
                vals.append(theta[list(sup)].copy())
                etas.append(None if eta_fixed else _encode_eta(eta))
                trace.append(use_lik * ll + lp_theta + lp_eta)

    # the structural template for reconstruction must match the stored vectors
    template = eta if eta_fixed else _EtaCodec(init_eta, etas)
    return McmcChain(p, sups, vals, etas, trace, accept, int(seed) if np.isscalar(seed) else 0,
                     template, thin)


def _encode_eta(eta):
    if eta.family == "graphical":
        return eta.omega.ravel().copy()
    return eta.unconstrained()


class _EtaCodec:
    """Rebuild stored nuisance states; the graphical family stores full matrices."""

    def __init__(self, init_eta, etas):
        self.init = init_eta

    def from_unconstrained(self, u):
        if self.init.family == "graphical":
            return type(self.init)(np.asarray(u).reshape(self.init.mbar, self.init.mbar), self.init.L), 0.0
        return self.init.from_unconstrained(u)


def _toggle_edge(eta, rng, sd=0.3):
    """Birth/death of one off-diagonal precision entry; returns (proposal, log q ratio)."""
    m = eta.mbar
    j, k = sorted(rng.choice(m, size=2, replace=False).tolist())
    om = eta.omega.copy()
    if om[j, k] == 0.0:
        v = sd * rng.standard_normal()
        om[j, k] = om[k, j] = v
        extra = -_norm_logpdf(v, 0.0, sd)
    else:
        v = om[j, k]
        om[j, k] = om[k, j] = 0.0
        extra = _norm_logpdf(v, 0.0, sd)
    return type(eta)(om, eta.L), extra
