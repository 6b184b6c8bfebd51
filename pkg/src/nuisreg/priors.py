"""Spike-and-slab prior on ``(S, theta_S)`` and the nuisance priors of each family."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp

from . import families as fam
from .errors import NumericalFailure, ParameterRangeError
from .model import SparseVector


class PriorValue(NamedTuple):
    logpdf: float
    in_support: bool


OUTSIDE = PriorValue(-np.inf, False)


def log_binom(p, s):
    return float(gammaln(p + 1) - gammaln(s + 1) - gammaln(p - s + 1))


# ---------------------------------------------------------------------------
# spike and slab


def x_norm_star(x):
    """Largest column Euclidean norm."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return float(np.sqrt(np.max(np.sum(x * x, axis=0))))


def lambda_bounds(x_norm, p, n, L1=1.0, L2=2.0, L3=1.0):
    lo = x_norm / (L1 * p ** L2)
    hi = L3 * x_norm / np.sqrt(n)
    if lo > hi:
        raise ParameterRangeError(f"empty slab-rate range: lower {lo:g} > upper {hi:g}")
    return float(lo), float(hi)


@dataclass(frozen=True)
class SpikeSlabSpec:
    """Dimension prior ``pi_p(s) ~ p^{-a s}`` and Laplace slab with rate ``lam``."""

    p: int
    lam: float
    a: float = 2.0
    L: tuple = (1.0, 2.0, 1.0)
    bounds: tuple = None  # legal (lo, hi) for lam, checked when given

    def __post_init__(self):
        if self.p < 1 or not self.a > 0 or not self.lam > 0:
            raise ParameterRangeError("need p >= 1, a > 0 and lam > 0")
        if self.bounds is not None:
            lo, hi = self.bounds
            if not lo * (1 - 1e-12) <= self.lam <= hi * (1 + 1e-12):
                raise ParameterRangeError(f"lam={self.lam:g} outside [{lo:g}, {hi:g}]")

    @classmethod
    def from_design(cls, x, n, a=2.0, L=(1.0, 2.0, 1.0), policy="upper", check=True):
        """Slab rate from its legal range.

        ``policy`` is ``upper`` (default), ``lower``, ``geometric`` (geometric
        midpoint) or a positive number used as is.
        """
        x = np.atleast_2d(x)
        lo, hi = lambda_bounds(x_norm_star(x), x.shape[1], n, *L)
        if isinstance(policy, (int, float)) and not isinstance(policy, bool):
            lam = float(policy)
        elif policy in ("upper", "lower", "geometric"):
            lam = {"upper": hi, "lower": lo, "geometric": float(np.sqrt(lo * hi))}[policy]
        else:
            raise ParameterRangeError(f"unknown slab-rate policy {policy!r}")
        return cls(x.shape[1], lam, a, tuple(L), (lo, hi) if check else None)

    @cached_property
    def log_dim_table(self):
        s = np.arange(self.p + 1)
        logits = -self.a * np.log(self.p) * s
        return logits - logsumexp(logits)

    @cached_property
    def log_binom_table(self):
        s = np.arange(self.p + 1)
        return gammaln(self.p + 1) - gammaln(s + 1) - gammaln(self.p - s + 1)

    def sample(self, rng):
        rng = fam.make_rng(rng)
        s = int(rng.choice(self.p + 1, p=np.exp(self.log_dim_table)))
        sup = np.sort(rng.choice(self.p, size=s, replace=False))
        return SparseVector(tuple(sup), rng.laplace(0.0, 1.0 / self.lam, size=s), self.p)

    def to_dict(self):
        return {"p": self.p, "lam": self.lam, "a": self.a, "L": list(self.L),
                "bounds": None if self.bounds is None else list(self.bounds)}


def dimension_log_prior(s, spec):
    if not 0 <= s <= spec.p:
        raise ParameterRangeError(f"support size {s} outside [0, {spec.p}]")
    return float(spec.log_dim_table[int(s)])


def slab_log_density(theta_s, lam):
    t = np.atleast_1d(np.asarray(theta_s, dtype=float))
    return float(t.size * np.log(lam / 2.0) - lam * np.abs(t).sum())


def joint_log_prior(theta: SparseVector, spec):
    s = theta.s
    return (dimension_log_prior(s, spec) - float(spec.log_binom_table[s])
            + slab_log_density(theta.values, spec.lam))


# ---------------------------------------------------------------------------
# scalar and matrix component priors


@dataclass(frozen=True)
class Normal:
    mean: float = 0.0
    sd: float = 1.0

    def logpdf(self, x):
        return PriorValue(float(np.sum(stats.norm.logpdf(x, self.mean, self.sd))), True)

    def sample(self, rng, shape=()):
        return rng.normal(self.mean, self.sd, size=shape)


@dataclass(frozen=True)
class InverseGamma:
    shape: float = 2.0
    rate: float = 1.0

    def logpdf(self, x):
        if np.any(np.asarray(x) <= 0):
            return OUTSIDE
        return PriorValue(float(np.sum(stats.invgamma.logpdf(x, self.shape, scale=self.rate))), True)

    def sample(self, rng, shape=()):
        return stats.invgamma.rvs(self.shape, scale=self.rate, size=shape, random_state=rng)


@dataclass(frozen=True)
class InverseGaussian:
    """Independent inverse-Gaussian coordinates with given mean and shape."""

    mean: float = 1.0
    shape: float = 1.0

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            return OUTSIDE
        d = stats.invgauss(self.mean / self.shape, scale=self.shape)
        return PriorValue(float(np.sum(d.logpdf(x))), True)

    def sample(self, rng, shape=()):
        return rng.wald(self.mean, self.shape, size=shape)


@dataclass(frozen=True)
class InverseWishart:
    df: float
    scale: np.ndarray

    def __post_init__(self):
        scale = fam._as_spd(self.scale, "inverse-Wishart scale")
        object.__setattr__(self, "scale", scale)
        if not self.df > scale.shape[0] - 1:
            raise ParameterRangeError("inverse-Wishart needs df > dim - 1")

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if not fam.is_spd(x):
            return OUTSIDE
        return PriorValue(float(stats.invwishart.logpdf(x, self.df, self.scale)), True)

    def sample(self, rng, shape=None):
        return np.atleast_2d(stats.invwishart.rvs(self.df, self.scale, random_state=rng))


@dataclass(frozen=True)
class AlphaPrior:
    """Density ``~ exp{-(a - b1)^{-c1} (b2 - a)^{-c2}}`` on ``(b1, b2)``."""

    b1: float
    b2: float
    c1: float = 1.0
    c2: float = 1.0
    grid_size: int = 10_000

    def __post_init__(self):
        if not self.b1 < self.b2 or not (self.c1 > 0 and self.c2 > 0):
            raise ParameterRangeError("alpha prior needs b1 < b2 and c1, c2 > 0")

    def unnormalized(self, alpha):
        a = np.asarray(alpha, dtype=float)
        inside = (a > self.b1) & (a < self.b2)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            val = -np.power(a - self.b1, -self.c1) * np.power(self.b2 - a, -self.c2)
        return np.where(inside, val, -np.inf)

    @cached_property
    def _grid(self):
        # midpoint grid; the density vanishes at both ends
        h = (self.b2 - self.b1) / self.grid_size
        z = self.b1 + h * (np.arange(self.grid_size) + 0.5)
        lu = self.unnormalized(z)
        log_norm = float(logsumexp(lu) + np.log(h))
        cdf = np.concatenate([[0.0], np.cumsum(np.exp(lu - log_norm) * h)])
        cdf /= cdf[-1]
        edges = np.concatenate([[self.b1], z + 0.5 * h])
        return log_norm, edges, cdf

    @property
    def log_normalizer(self):
        return self._grid[0]

    def logpdf(self, alpha):
        v = float(self.unnormalized(alpha))
        if not np.isfinite(v):
            return OUTSIDE
        return PriorValue(v - self.log_normalizer, True)

    def cdf(self, alpha):
        _, edges, cdf = self._grid
        return np.interp(alpha, edges, cdf)

    def sample(self, rng, shape=()):
        _, edges, cdf = self._grid
        return np.interp(rng.random(size=shape), cdf, edges)


def alpha_prior_log_density(alpha, b1, b2, c1=1.0, c2=1.0, normalized=False):
    """Log density of the boundary-avoiding prior, with an out-of-support flag."""
    prior = AlphaPrior(b1, b2, c1, c2)
    if normalized:
        return prior.logpdf(alpha)
    v = float(prior.unnormalized(alpha))
    return PriorValue(v, bool(np.isfinite(v)))


@dataclass(frozen=True)
class GraphicalPrior:
    """Edge-set and entry prior for sparse precision matrices, truncated to M0+(L).

    Given ``|edges| = r`` every edge set is equally likely (a binomial edge
    prior conditioned on its total); ``P(|edges| = r) ~ exp(-r log max(r, 2))``.
    Off-diagonal entries get ``N(0, offdiag_sd^2)`` (or its half on (0, inf)
    with ``positive_offdiag``); diagonal entries ``N(diag_mean, diag_sd^2)``.
    The truncation constant is left implicit, i.e. the joint law is truncated.
    """

    L: float
    offdiag_sd: float = 1.0
    diag_mean: float = 1.0
    diag_sd: float = 1.0
    positive_offdiag: bool = False
    max_tries: int = 100_000

    def size_log_prior(self, r, n_pairs):
        rs = np.arange(n_pairs + 1)
        lw = -rs * np.log(np.maximum(rs, 2))
        return float(lw[r] - logsumexp(lw))

    def logpdf(self, omega):
        omega = np.asarray(omega, dtype=float)
        if not fam.in_m0_plus(omega, self.L):
            return OUTSIDE
        m = omega.shape[0]
        j, k = np.triu_indices(m, 1)
        off = omega[j, k]
        present = off[off != 0.0]
        if self.positive_offdiag and np.any(present < 0):
            return OUTSIDE
        n_pairs = j.size
        r = present.size
        lp = self.size_log_prior(r, n_pairs) - log_binom(n_pairs, r)
        lp += float(np.sum(stats.norm.logpdf(present, 0.0, self.offdiag_sd)))
        if self.positive_offdiag:
            lp += r * np.log(2.0)
        lp += float(np.sum(stats.norm.logpdf(np.diag(omega), self.diag_mean, self.diag_sd)))
        return PriorValue(lp, True)

    def sample(self, rng, m):
        j, k = np.triu_indices(m, 1)
        n_pairs = j.size
        rs = np.arange(n_pairs + 1)
        lw = -rs * np.log(np.maximum(rs, 2))
        probs = np.exp(lw - logsumexp(lw))
        for _ in range(self.max_tries):
            r = int(rng.choice(n_pairs + 1, p=probs))
            pick = rng.choice(n_pairs, size=r, replace=False)
            om = np.diag(rng.normal(self.diag_mean, self.diag_sd, size=m))
            vals = rng.normal(0.0, self.offdiag_sd, size=r)
            if self.positive_offdiag:
                vals = np.abs(vals)
            om[j[pick], k[pick]] = vals
            om[k[pick], j[pick]] = vals
            if fam.in_m0_plus(om, self.L):
                return om
        raise NumericalFailure("graphical prior sampler exhausted its rejection budget")


# ---------------------------------------------------------------------------
# family-level nuisance prior


@dataclass(frozen=True)
class NuisancePriorSpec:
    """Independent component priors keyed by the family field they govern."""

    family: str
    components: dict = field(default_factory=dict)

    def to_dict(self):
        out = {}
        for name, comp in self.components.items():
            d = {"prior": _PRIOR_NAMES[type(comp)]}
            for f in dataclasses.fields(comp):
                v = getattr(comp, f.name)
                d[f.name] = np.asarray(v).tolist() if isinstance(v, np.ndarray) else v
            out[name] = d
        return {"family": self.family, "components": out}

    @classmethod
    def from_dict(cls, d):
        comps = {}
        for name, c in d.get("components", {}).items():
            c = dict(c)
            kind = c.pop("prior")
            if kind not in _PRIOR_TYPES:
                raise ParameterRangeError(f"unknown prior {kind!r}")
            if "scale" in c and isinstance(c["scale"], list):
                c["scale"] = np.asarray(c["scale"], dtype=float)
            comps[name] = _PRIOR_TYPES[kind](**c)
        return cls(d["family"], comps)


_PRIOR_TYPES = {"normal": Normal, "inverse_gamma": InverseGamma, "inverse_gaussian": InverseGaussian,
                "inverse_wishart": InverseWishart, "alpha": AlphaPrior, "graphical": GraphicalPrior}
_PRIOR_NAMES = {v: k for k, v in _PRIOR_TYPES.items()}


def default_nuisance_prior(template):
    """Default priors mirroring the per-family choices of the model class."""
    f = template.family
    ig = InverseGamma(2.0, 1.0)
    if f == "linear":
        comps = {"sigma2": ig}
    elif f == "missing":
        m = template.mbar
        comps = {"sigma": InverseWishart(m + 2.0, np.eye(m))}
    elif f == "measurement_error":
        q = template.q
        comps = {"alpha": Normal(0, 10), "beta": Normal(0, 10), "mu": Normal(0, 10),
                 "sigma2": ig, "Sigma": InverseWishart(q + 2.0, np.eye(q))}
    elif f == "param_correlation":
        lo, hi = fam.ALPHA_RANGES[template.kind]
        comps = {"alpha": AlphaPrior(lo, hi), "sigma2": ig}
    elif f == "mixed_effects":
        q = template.q
        comps = {"psi": InverseWishart(q + 2.0, np.eye(q))}
    elif f == "graphical":
        comps = {"omega": GraphicalPrior(template.L if template.L is not None else 10.0)}
    elif f == "hetero_spline":
        comps = {"beta": InverseGaussian(1.0, 1.0)}
    elif f == "partial_linear":
        comps = {"beta": Normal(0, 1), "sigma2": ig}
    else:
        raise ParameterRangeError(f"no default prior for family {f!r}")
    return NuisancePriorSpec(f, comps)


def nuisance_prior_log_density(eta, spec):
    if eta.family != spec.family:
        raise ParameterRangeError(f"prior for {spec.family!r} applied to {eta.family!r}")
    total = 0.0
    for name, comp in spec.components.items():
        val = comp.logpdf(getattr(eta, name))
        if not val.in_support:
            return OUTSIDE
        total += val.logpdf
    return PriorValue(total, True)


def nuisance_prior_sample(spec, seed, template):
    """Draw every prior-governed field; fixed fields are copied from ``template``."""
    rng = fam.make_rng(seed)
    upd = {}
    for name, comp in spec.components.items():
        cur = getattr(template, name)
        if isinstance(comp, GraphicalPrior):
            upd[name] = comp.sample(rng, np.asarray(cur).shape[0])
        elif isinstance(comp, InverseWishart):
            upd[name] = comp.sample(rng)
        else:
            shape = np.shape(cur)
            v = comp.sample(rng, shape)
            upd[name] = float(v) if shape == () else v
    return dataclasses.replace(template, **upd)
