"""Design diagnostics: column scale, compatibility numbers, beta-min thresholds.

All minima over supports are computed on submatrices of the Gram matrix
``X'X``. Enumeration is exact while the number of supports fits the budget;
beyond it a random sample of supports is used and the result is tagged
``randomized-lower-bound`` (the sampled minimum can only overstate the
true minimum, so treat it as optimistic).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import BudgetExceededError, ParameterRangeError
from .families import make_rng
from .priors import x_norm_star

EXACT = "exact"
RANDOMIZED = "randomized-lower-bound"
DEFAULT_BUDGET = 1_000_000


def _support_batches(p, k, chunk=4096):
    it = itertools.combinations(range(p), k)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            return
        yield np.array(block, dtype=int).reshape(len(block), k)


def _random_supports(rng, p, k, count, chunk=4096):
    done = 0
    while done < count:
        b = min(chunk, count - done)
        keys = rng.random((b, p))
        yield np.sort(np.argpartition(keys, k - 1, axis=1)[:, :k], axis=1)
        done += b


def _supports(p, k, budget, randomized, n_random, seed):
    total = comb(p, k)
    if total <= budget:
        return _support_batches(p, k), EXACT
    if not randomized:
        raise BudgetExceededError(f"C({p}, {k}) = {total} supports exceed the budget {budget}")
    return _random_supports(make_rng(seed), p, k, n_random), RANDOMIZED


def _size_arg(s, p):
    if s < 1:
        return 0
    return min(int(np.floor(s)), p)


def _sub_gram(g, sup):
    return g[sup[:, :, None], sup[:, None, :]]


def phi2(x, s, budget=DEFAULT_BUDGET, randomized=False, n_random=20_000, seed=0,
         return_method=False):
    """Smallest scaled singular value over supports of size at most ``s``.

    Only ``|S| = s`` is enumerated: by interlacing, removing columns cannot
    lower the smallest singular value.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p = x.shape[1]
    k = _size_arg(s, p)
    if k == 0:
        return (1.0, EXACT) if return_method else 1.0
    if k > x.shape[0]:
        return (0.0, EXACT) if return_method else 0.0
    g = x.T @ x
    best = np.inf
    batches, method = _supports(p, k, budget, randomized, n_random, seed)
    for sup in batches:
        w = np.linalg.eigvalsh(_sub_gram(g, sup))[:, 0]
        best = min(best, float(w.min()))
    val = float(np.sqrt(max(best, 0.0)) / x_norm_star(x))
    return (val, method) if return_method else val


def _simplex_qp_min(g):
    """``min v'Gv`` over the probability simplex, by KKT solves on every face."""
    k = g.shape[0]
    best = float(np.min(np.diag(g)))  # vertices
    for f in range(2, k + 1):
        faces = np.array(list(itertools.combinations(range(k), f)), dtype=int)
        kkt = np.zeros((len(faces), f + 1, f + 1))
        kkt[:, :f, :f] = 2.0 * _sub_gram(g, faces)
        kkt[:, :f, f] = 1.0
        kkt[:, f, :f] = 1.0
        rhs = np.zeros(f + 1)
        rhs[f] = 1.0
        sol = np.linalg.pinv(kkt) @ rhs
        v = sol[:, :f]
        resid = np.abs(np.einsum("nij,nj->ni", kkt, sol) - rhs).max(axis=1)
        ok = (v.min(axis=1) >= -1e-12) & (np.abs(v.sum(axis=1) - 1) < 1e-9) & (resid < 1e-8)
        if ok.any():
            v = np.clip(v[ok], 0.0, None)
            v /= v.sum(axis=1, keepdims=True)
            gf = _sub_gram(g, faces[ok])
            best = min(best, float(np.einsum("ni,nij,nj->n", v, gf, v).min()))
    return max(best, 0.0)


def l1_sphere_min(g):
    """``min ||X u||_2^2`` over ``||u||_1 = 1`` given ``G = X'X``.

    Each sign orthant turns the problem into a quadratic over the simplex
    (``u = sign * v``); the pattern ``-sign`` gives the same value.
    """
    g = np.atleast_2d(g)
    k = g.shape[0]
    best = np.inf
    for tail in itertools.product((1.0, -1.0), repeat=k - 1):
        sgn = np.array((1.0,) + tail)
        best = min(best, _simplex_qp_min(g * np.outer(sgn, sgn)))
    return best


def phi1(x, s, budget=DEFAULT_BUDGET, randomized=False, n_random=2_000, seed=0,
         return_method=False, max_exact_size=6):
    """Uniform compatibility number over supports of size at most ``s``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p = x.shape[1]
    k_max = _size_arg(s, p)
    if k_max == 0:
        return (1.0, EXACT) if return_method else 1.0
    if k_max > max_exact_size:
        raise ParameterRangeError(f"exact compatibility number limited to s <= {max_exact_size}")
    g = x.T @ x
    best = np.inf
    method = EXACT
    total = sum(comb(p, k) for k in range(1, k_max + 1))
    for k in range(1, k_max + 1):
        if total <= budget:
            batches = _support_batches(p, k)
        elif randomized:
            batches, method = _random_supports(make_rng(seed, k), p, k, n_random), RANDOMIZED
        else:
            raise BudgetExceededError(f"{total} supports exceed the budget {budget}")
        for sup in batches:
            if k == 1:
                best = min(best, float(np.diag(g)[sup[:, 0]].min()))
                continue
            for sg in _sub_gram(g, sup):
                best = min(best, k * l1_sphere_min(sg))
    val = float(np.sqrt(max(best, 0.0)) / x_norm_star(x))
    return (val, method) if return_method else val


def joint_min_singular(x, z, s, budget=DEFAULT_BUDGET, randomized=False, n_random=20_000,
                       seed=0, return_method=False):
    """Smallest singular value of ``[X_S, Z]`` over ``|S| <= s`` (unscaled)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, p = x.shape
    z = np.zeros((n, 0)) if z is None else np.asarray(z, dtype=float).reshape(n, -1)
    k = _size_arg(s, p)
    r = z.shape[1]
    if k + r == 0:
        return (np.inf, EXACT) if return_method else np.inf
    if k + r > n:
        return (0.0, EXACT) if return_method else 0.0
    gxx, gxz, gzz = x.T @ x, x.T @ z, z.T @ z
    if k == 0:
        val = float(np.sqrt(max(np.linalg.eigvalsh(gzz)[0], 0.0)))
        return (val, EXACT) if return_method else val
    best = np.inf
    batches, method = _supports(p, k, budget, randomized, n_random, seed)
    for sup in batches:
        b = len(sup)
        big = np.empty((b, k + r, k + r))
        big[:, :k, :k] = _sub_gram(gxx, sup)
        big[:, :k, k:] = gxz[sup]
        big[:, k:, :k] = np.swapaxes(gxz[sup], 1, 2)
        big[:, k:, k:] = gzz
        best = min(best, float(np.linalg.eigvalsh(big)[:, 0].min()))
    val = float(np.sqrt(max(best, 0.0)))
    return (val, method) if return_method else val


def beta_min_threshold(x, s0, K4=1.0, K5=1.0, return_flag=False, **phi_kw):
    """``K5 sqrt(s0 log p) / (phi2((K4 + 1) s0) ||X||_*)``; infinite (flagged) if phi2 = 0."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p = x.shape[1]
    ph = phi2(x, (K4 + 1) * s0, **phi_kw)
    if ph <= 0.0:
        return (np.inf, True) if return_flag else np.inf
    val = float(K5 * np.sqrt(s0 * np.log(p)) / (ph * x_norm_star(x)))
    return (val, False) if return_flag else val


@dataclass
class DiagnosticsReport:
    x_norm_star: float
    phi1: dict = field(default_factory=dict)
    phi2: dict = field(default_factory=dict)
    joint_sv: dict = None
    beta_min_threshold: float = None
    beta_min_flag: bool = False
    methods: dict = field(default_factory=dict)

    def check(self, tol=1e-9):
        for s, v in self.phi1.items():
            if s in self.phi2 and v < self.phi2[s] - tol:
                raise AssertionError(f"phi1({s}) < phi2({s})")
        for name, d in (("phi1", self.phi1), ("phi2", self.phi2)):
            ks = sorted(d)
            for a, b in zip(ks, ks[1:]):
                exact = self.methods.get((name, a)) == self.methods.get((name, b)) == EXACT
                if exact and d[b] > d[a] + tol:
                    raise AssertionError("compatibility numbers must be nonincreasing in s")
        return self

    def to_dict(self):
        return {"x_norm_star": self.x_norm_star,
                "phi1": {str(k): v for k, v in self.phi1.items()},
                "phi2": {str(k): v for k, v in self.phi2.items()},
                "joint_sv": None if self.joint_sv is None else {str(k): v for k, v in self.joint_sv.items()},
                "beta_min_threshold": self.beta_min_threshold, "beta_min_flag": self.beta_min_flag,
                "methods": {f"{a}:{b}": m for (a, b), m in self.methods.items()}}


def diagnose(x, s_values, z=None, s0=None, K4=1.0, K5=1.0, budget=DEFAULT_BUDGET,
             randomized=True, phi1_max=3, seed=0):
    """Collect the design diagnostics for each size in ``s_values``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    rep = DiagnosticsReport(x_norm_star(x))
    for s in s_values:
        v, m = phi2(x, s, budget, randomized, seed=seed, return_method=True)
        rep.phi2[s] = v
        rep.methods[("phi2", s)] = m
        if s <= phi1_max:
            v, m = phi1(x, s, budget, randomized, seed=seed, return_method=True)
            rep.phi1[s] = v
            rep.methods[("phi1", s)] = m
        if z is not None:
            rep.joint_sv = rep.joint_sv or {}
            rep.joint_sv[s] = joint_min_singular(x, z, s, budget, randomized, seed=seed)
    if s0 is not None:
        rep.beta_min_threshold, rep.beta_min_flag = beta_min_threshold(
            x, s0, K4, K5, return_flag=True, budget=budget, randomized=randomized, seed=seed)
    return rep.check()
