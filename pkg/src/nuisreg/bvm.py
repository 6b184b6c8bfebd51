"""Gaussian-mixture approximation of the posterior over supports.

Each support ``S`` gets a component ``N(theta_hat_S, Gamma_S^{-1})`` with
``Gamma_S = Xt_S'(I - H)Xt_S`` and a weight combining the prior of ``S``
with the profile fit of the whitened data. ``H`` is an orthogonal projection
that removes the directions absorbed by the nuisance mean; it is stored as an
orthonormal basis so ``(I - H) v`` never forms an ``n_* x n_*`` matrix.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from . import model as core
from .errors import NumericalFailure, ParameterRangeError, RankError
from .families import make_rng
from .model import SparseVector
from .posterior import SupportPosterior, all_supports, support_marginals

LOG_2PI = math.log(2.0 * math.pi)


class Projection:
    """Orthogonal projection ``H = Q Q'`` onto span(Q)."""

    def __init__(self, basis):
        self.basis = np.asarray(basis, dtype=float)

    @classmethod
    def from_design(cls, z, rtol=1e-10):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        u, sv, _ = np.linalg.svd(z, full_matrices=False)
        rank = int(np.sum(sv > rtol * sv[0])) if sv.size else 0
        if rank < z.shape[1]:
            raise RankError(f"nuisance mean design has rank {rank} < {z.shape[1]}")
        return cls(u)

    @property
    def rank(self):
        return self.basis.shape[1]

    def matrix(self):
        return self.basis @ self.basis.T

    def complement(self, v):
        """``(I - H) v`` for a vector or matrix ``v``."""
        return v - self.basis @ (self.basis.T @ v)


def _complement(h, v):
    if h is None:
        return v
    if isinstance(h, Projection):
        return h.complement(v)
    h = np.asarray(h, dtype=float)
    return v - h @ v


def _dense(theta, p):
    return theta.to_dense() if isinstance(theta, SparseVector) else np.asarray(theta, float).ravel()


def gram(support, x_tilde, h=None):
    """``Xt_S'(I - H)Xt_S``."""
    xs = x_tilde[:, list(support)]
    g = xs.T @ _complement(h, xs)
    return 0.5 * (g + g.T)


def ls_center(support, x_tilde, h, u, theta0):
    """``Gamma_S^{-1} Xt_S'(I - H)(U + Xt theta0)``."""
    xs = x_tilde[:, list(support)]
    g = gram(support, x_tilde, h)
    rhs = xs.T @ _complement(h, u + x_tilde @ _dense(theta0, x_tilde.shape[1]))
    try:
        c = np.linalg.cholesky(g)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"singular Gram matrix on support {tuple(support)}") from exc
    return np.linalg.solve(c.T, np.linalg.solve(c, rhs))


def log_lambda_star(theta, x_tilde, h, u, theta0):
    """``-1/2 |(I-H)Xt(theta-theta0)|^2 + U'(I-H)Xt(theta-theta0)``."""
    p = x_tilde.shape[1]
    v = x_tilde @ (_dense(theta, p) - _dense(theta0, p))
    cv = _complement(h, v)
    return float(-0.5 * cv @ cv + u @ cv)


def _component(support, spec, x_tilde, h, u, theta0):
    s = len(support)
    log_prior = float(spec.log_dim_table[s] - spec.log_binom_table[s])
    if s == 0:
        return log_prior, np.empty(0), np.empty((0, 0))
    g = gram(support, x_tilde, h)
    centre = ls_center(support, x_tilde, h, u, theta0)
    fit = _complement(h, x_tilde[:, list(support)] @ centre)
    _, logdet = np.linalg.slogdet(g)
    lw = (log_prior + s * math.log(spec.lam / 2.0) + 0.5 * s * LOG_2PI
          - 0.5 * logdet + 0.5 * float(fit @ fit))
    return lw, centre, g


def mixture_weights(supports, spec, x_tilde, h, u, theta0):
    """Normalized log-weights of the mixture components."""
    lw = np.array([_component(s, spec, x_tilde, h, u, theta0)[0] for s in supports])
    return lw - logsumexp(lw)


@dataclass
class SupportMixture:
    p: int
    supports: list
    log_weights: np.ndarray
    centers: list
    grams: list
    mode: str = "oracle"
    h_kind: str = "zero"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.supports = [tuple(int(j) for j in s) for s in self.supports]
        lw = np.asarray(self.log_weights, dtype=float)
        self.log_weights = lw - logsumexp(lw)
        self._index = {s: i for i, s in enumerate(self.supports)}

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def prob(self, support):
        i = self._index.get(tuple(sorted(support)))
        return 0.0 if i is None else float(np.exp(self.log_weights[i]))

    def component(self, support):
        i = self._index[tuple(sorted(support))]
        return self.centers[i], np.linalg.inv(self.grams[i]) if len(support) else np.empty((0, 0))

    def as_support_posterior(self):
        covs = [np.linalg.inv(g) if g.size else g for g in self.grams]
        return SupportPosterior(self.p, self.supports, self.log_weights, list(self.centers), covs,
                                [], f"bvm-{self.mode}")

    def sample(self, rng, size):
        """Draw ``size`` pairs ``(support, values)`` from the mixture."""
        rng = make_rng(rng)
        pick = rng.choice(len(self.supports), size=size, p=self.weights)
        out = []
        chol = {}
        for i in pick:
            s = self.supports[i]
            if not s:
                out.append((s, np.empty(0)))
                continue
            if i not in chol:
                chol[i] = np.linalg.cholesky(np.linalg.inv(self.grams[i]))
            out.append((s, self.centers[i] + chol[i] @ rng.standard_normal(len(s))))
        return out

    def to_dict(self):
        return {"p": self.p, "mode": self.mode, "h_kind": self.h_kind, "meta": self.meta,
                "components": [{"support": list(s), "log_weight": float(lw),
                                "center": np.asarray(c).tolist(), "gram": np.asarray(g).tolist()}
                               for s, lw, c, g in zip(self.supports, self.log_weights,
                                                      self.centers, self.grams)]}

    @classmethod
    def from_dict(cls, d):
        comps = d["components"]
        return cls(int(d["p"]), [tuple(c["support"]) for c in comps],
                   np.array([c["log_weight"] for c in comps]),
                   [np.asarray(c["center"], dtype=float) for c in comps],
                   [np.asarray(c["gram"], dtype=float).reshape(len(c["support"]), len(c["support"]))
                    for c in comps],
                   d.get("mode", "oracle"), d.get("h_kind", "zero"), d.get("meta", {}))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def nuisance_projection(data, eta0, kind="auto", h=None):
    """Choose ``H``: zero, a given projection, or the whitened nuisance-mean design.

    ``kind`` is one of ``auto`` (projection when the family has a mean
    design, else zero), ``zero``, ``given`` (``h`` supplied), ``spline`` or
    ``design`` (both project onto the whitened mean design).
    """
    if kind == "zero":
        return None, "zero"
    if kind == "given":
        if h is None:
            raise ParameterRangeError("H_choice 'given' needs a projection")
        return (h if isinstance(h, Projection) else np.asarray(h, dtype=float)), "given"
    z = eta0.mean_design(data) if hasattr(eta0, "mean_design") else None
    if z is None:
        if kind in ("spline", "design"):
            raise ParameterRangeError(f"family {eta0.family!r} has no nuisance-mean design")
        return None, "zero"
    blocks = core._whitening_blocks(data, eta0)
    return Projection.from_design(core.apply_blocks(blocks, z)), "spline" if kind == "spline" else "design"


def build_bvm(data, theta0, eta0, spec, h_choice="auto", s_max=None, h=None, supports=None,
              mode="oracle", budget=1_000_000):
    """Mixture over every support of size at most ``s_max`` (or the given list).

    ``mode`` labels where ``(theta0, eta0)`` came from: ``oracle`` for the
    simulation truth, ``plug-in`` for user estimates.
    """
    if mode not in ("oracle", "plug-in"):
        raise ParameterRangeError("mode must be 'oracle' or 'plug-in'")
    wd = core.whiten(data, eta0, theta0)
    hp, kind = nuisance_projection(data, eta0, h_choice, h)
    if supports is None:
        supports = all_supports(data.p, data.p if s_max is None else s_max, budget)
    lws, centers, grams = [], [], []
    for s in supports:
        lw, c, g = _component(tuple(s), spec, wd.x_tilde, hp, wd.u, theta0)
        lws.append(lw)
        centers.append(c)
        grams.append(g)
    return SupportMixture(data.p, list(supports), np.array(lws), centers, grams, mode, kind,
                          {"lam": spec.lam, "a": spec.a})


def gaussian_tv(m1, s1, m2, s2, n_points=2 ** 14, seed=0):
    """Total variation between two Gaussians.

    Closed form ``2 Phi(delta/2) - 1`` when the covariances agree; otherwise
    a scrambled-Sobol estimate of ``E_1[(1 - p2/p1)_+]``.
    """
    m1, m2 = np.atleast_1d(m1).astype(float), np.atleast_1d(m2).astype(float)
    s1, s2 = np.atleast_2d(s1).astype(float), np.atleast_2d(s2).astype(float)
    k = m1.size
    if k == 0:
        return 0.0
    if np.allclose(s1, s2, rtol=1e-12, atol=0.0):
        d = m1 - m2
        delta = math.sqrt(float(d @ np.linalg.solve(s1, d)))
        return float(2.0 * stats.norm.cdf(0.5 * delta) - 1.0)
    qmc = stats.qmc.Sobol(k, scramble=True, seed=seed)
    z = stats.norm.ppf(np.clip(qmc.random(n_points), 1e-16, 1 - 1e-16))
    x = m1 + z @ np.linalg.cholesky(s1).T
    lp1 = stats.multivariate_normal.logpdf(x, m1, s1)
    lp2 = stats.multivariate_normal.logpdf(x, m2, s2)
    return float(np.mean(np.clip(-np.expm1(np.minimum(lp2 - lp1, 0.0)), 0.0, 1.0)))


def tv_support_mixture(sample, mixture, burn_in=None):
    """Surrogate total variation between a posterior sample and the mixture.

    Support-level TV plus, on the sample's modal support, the Gaussian TV
    between the moment fit of the sample and the mixture component, weighted
    by the smaller of the two support probabilities. Clipped to 1. This is a
    surrogate, not the exact TV.
    """
    if not isinstance(sample, SupportPosterior):
        sample = support_marginals(sample, burn_in)
    keys = set(sample.supports) | set(mixture.supports)
    tv = 0.5 * sum(abs(sample.prob(s) - mixture.prob(s)) for s in keys)
    modal = sample.modal()
    w = min(sample.prob(modal), mixture.prob(modal))
    if modal and w > 0:
        comp = sample.component(modal)
        mean, cov = comp if comp is not None else (None, None)
        m2, c2 = mixture.component(modal)
        if mean is None or cov is None or np.linalg.eigvalsh(np.atleast_2d(cov))[0] <= 0:
            part = 1.0
        else:
            part = gaussian_tv(mean, cov, m2, c2)
        tv += w * part
    return float(min(tv, 1.0))


def credible_intervals(mixture, support, level=0.95):
    """Per-coordinate intervals ``centre +- z * sqrt(diag(Gamma^{-1}))`` on ``support``."""
    if not 0.0 <= level < 1.0:
        raise ParameterRangeError("level must lie in [0, 1)")
    centre, cov = mixture.component(support)
    half = stats.norm.ppf(0.5 * (1.0 + level)) * np.sqrt(np.diag(cov))
    return np.column_stack([centre - half, centre + half])
