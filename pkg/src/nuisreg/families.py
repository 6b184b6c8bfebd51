"""Concrete model families: nuisance parameters -> per-group (xi_i, Delta_i).

Every family is an immutable :class:`~nuisreg.model.NuisanceState`. Besides
the moment maps, each one knows how to move to and from an unconstrained
parameter vector (used by the random-walk nuisance updates of the sampler)
and how to simulate a dataset of its own type.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from scipy.special import expit, logit

from . import splines
from .errors import CovarianceNotSPDError, EmptyGroupError, ParameterRangeError, ShapeError
from .model import GroupedDataset, NuisanceState, SparseVector, is_spd

ALPHA_RANGES = {"CS": (0.0, 1.0), "AR": (-1.0, 1.0), "MA": (-0.5, 0.5)}


def make_rng(seed, *counters):
    """Counter-based generator: independent stream per ``(seed, *counters)``."""
    if isinstance(seed, np.random.Generator):
        return seed
    entropy = [int(seed)] + [int(c) for c in counters]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def _as_spd(a, name):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if not is_spd(a):
        raise CovarianceNotSPDError(f"{name} is not symmetric positive definite")
    return a


# ---------------------------------------------------------------------------
# stand-alone structural maps


def missing_covariance(sigma, pattern):
    """Principal submatrix of ``sigma`` at observed coordinates."""
    pattern = np.asarray(pattern).astype(bool).ravel()
    sigma = np.asarray(sigma, dtype=float)
    if pattern.size != sigma.shape[0]:
        raise ShapeError("pattern length differs from covariance dimension")
    if not pattern.any():
        raise EmptyGroupError("observation pattern has no observed coordinate")
    return sigma[np.ix_(pattern, pattern)]


def mem_assemble(alpha, beta, mu, sigma2, Sigma, Psi, x_star):
    """Joint mean shift, covariance and design row block of ``(Y*, W)``."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    Sigma = _as_spd(Sigma, "Sigma")
    Psi = _as_spd(Psi, "Psi")
    q = beta.size
    Sb = Sigma @ beta
    delta = np.empty((q + 1, q + 1))
    delta[0, 0] = beta @ Sb + sigma2
    delta[0, 1:] = Sb
    delta[1:, 0] = Sb
    delta[1:, 1:] = Sigma + Psi
    xi = np.concatenate([[alpha + mu @ beta], mu])
    x_star = np.asarray(x_star, dtype=float).ravel()
    x = np.zeros((q + 1, x_star.size))
    x[0] = x_star
    return xi, delta, x


def correlation_matrix(kind, alpha, m):
    kind = kind.upper()
    if kind not in ALPHA_RANGES:
        raise ParameterRangeError(f"unknown correlation kind {kind!r}")
    lo, hi = ALPHA_RANGES[kind]
    if not lo < alpha < hi:
        raise ParameterRangeError(f"{kind} correlation needs alpha in ({lo}, {hi}), got {alpha}")
    j = np.arange(m)
    lag = np.abs(j[:, None] - j[None, :])
    if kind == "CS":
        return np.where(lag == 0, 1.0, alpha)
    if kind == "AR":
        return np.power(float(alpha), lag)
    return np.where(lag == 0, 1.0, np.where(lag == 1, alpha, 0.0))


def correlation_eigen_bounds(kind, alpha, m):
    """Lower/upper eigenvalue bounds for the correlation families."""
    kind = kind.upper()
    correlation_matrix(kind, alpha, 1)  # range check
    a = abs(alpha)
    if kind == "CS":
        return 1.0 - alpha, 1.0 + (m - 1) * alpha
    if kind == "AR":
        return (1 - alpha ** 2) / (1 + a) ** 2, (1 - alpha ** 2) / (1 - a) ** 2
    return 1.0 - 2 * a, 1.0 + 2 * a


def mixed_effects_cov(sigma2, z, psi):
    z = np.atleast_2d(np.asarray(z, dtype=float))
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    return sigma2 * np.eye(z.shape[0]) + z @ psi @ z.T


def graphical_delta(omega):
    """Covariance ``Omega^{-1}`` through a Cholesky factorization."""
    omega = _as_spd(omega, "Omega")
    c = np.linalg.cholesky(omega)
    ci = np.linalg.solve(c, np.eye(omega.shape[0]))
    return ci.T @ ci


def hetero_variance(beta, basis, z):
    return np.asarray(splines.basis_eval(basis, z)) @ np.asarray(beta, dtype=float)


def partial_linear_mean(beta, basis, z):
    return np.asarray(splines.basis_eval(basis, z)) @ np.asarray(beta, dtype=float)


def in_m0_plus(omega, L):
    """Membership in the eigenvalue/entry-bounded precision class."""
    omega = np.asarray(omega, dtype=float)
    if not np.allclose(omega, omega.T):
        return False
    w = np.linalg.eigvalsh(omega)
    return bool(w[0] >= 1.0 / L and w[-1] <= L and np.abs(omega).max() <= L)


# ---------------------------------------------------------------------------
# SPD reparameterization shared by several families


def chol_log_pack(a):
    """Unconstrained vector: log of the Cholesky diagonal, then strict lower part."""
    c = np.linalg.cholesky(a)
    il = np.tril_indices(a.shape[0], -1)
    return np.concatenate([np.log(np.diag(c)), c[il]])


def chol_log_unpack(u, q):
    """Inverse of :func:`chol_log_pack` plus log|Jacobian| w.r.t. the lower-triangle of A."""
    u = np.asarray(u, dtype=float)
    c = np.zeros((q, q))
    d = np.exp(u[:q])
    c[np.diag_indices(q)] = d
    c[np.tril_indices(q, -1)] = u[q:]
    # d vech(LL^T)/d vech(L) = 2^q prod L_ii^{q-i+1}; d L_ii / d u_i = L_ii
    i = np.arange(1, q + 1)
    logjac = q * np.log(2.0) + np.sum((q - i + 2) * u[:q])
    return c @ c.T, float(logjac)


def vech(a):
    return a[np.tril_indices(a.shape[0])]


def bounded_logit(alpha, lo, hi):
    return float(logit((alpha - lo) / (hi - lo)))


def bounded_expit(u, lo, hi):
    s = float(expit(u))
    alpha = lo + (hi - lo) * s
    logjac = np.log(hi - lo) + np.log(s) + np.log1p(-s) if 0.0 < s < 1.0 else -np.inf
    return alpha, float(logjac)


# ---------------------------------------------------------------------------
# families


class Family(NuisanceState):
    """Shared helpers; subclasses are frozen dataclasses."""

    def unconstrained(self):
        raise NotImplementedError

    def from_unconstrained(self, u):
        """Return ``(state, log|d params / d u|)`` with self as structural template."""
        raise NotImplementedError

    def mean_design(self, data):
        """Stacked ``Z`` with ``xi_eta = Z h(eta)``; None if the family has no mean part."""
        return None

    def to_dict(self):
        out = {"family": self.family}
        for k, v in self.__dict__.items():
            if k.startswith("_"):
                continue
            out[k] = np.asarray(v).tolist() if isinstance(v, np.ndarray) else v
        return out


def _arr(x):
    return np.asarray(x, dtype=float)


@dataclass(frozen=True, eq=False)
class LinearGaussian(Family):
    """Independent errors with common variance ``sigma2``."""

    sigma2: float
    family: ClassVar[str] = "linear"

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ParameterRangeError("sigma2 must be positive")

    def group_moments(self, data, i):
        m = data.sizes[i]
        return np.zeros(m), self.sigma2 * np.eye(m)

    def class_moments(self, data, idx):
        m = int(data.sizes[idx[0]])
        return np.zeros((len(idx), m)), np.broadcast_to(self.sigma2 * np.eye(m), (len(idx), m, m))

    def unconstrained(self):
        return np.array([np.log(self.sigma2)])

    def from_unconstrained(self, u):
        return LinearGaussian(float(np.exp(u[0]))), float(u[0])


@dataclass(frozen=True, eq=False)
class MissingResponse(Family):
    """Multivariate response observed on a subset of ``mbar`` coordinates."""

    sigma: np.ndarray
    family: ClassVar[str] = "missing"

    def __post_init__(self):
        object.__setattr__(self, "sigma", _as_spd(self.sigma, "Sigma"))

    @property
    def mbar(self):
        return self.sigma.shape[0]

    def _pattern(self, data, i):
        pat = data.group_meta(i, "pattern")
        if pat is None:
            pat = np.ones(self.mbar, dtype=int)
        pat = np.asarray(pat).astype(bool)
        if pat.sum() != data.sizes[i]:
            raise ShapeError(f"group {i}: pattern has {pat.sum()} observed entries, y has {data.sizes[i]}")
        return pat

    def group_moments(self, data, i):
        return np.zeros(data.sizes[i]), missing_covariance(self.sigma, self._pattern(data, i))

    def unconstrained(self):
        return chol_log_pack(self.sigma)

    def from_unconstrained(self, u):
        s, lj = chol_log_unpack(u, self.mbar)
        return MissingResponse(s), lj


@dataclass(frozen=True, eq=False)
class MeasurementError(Family):
    """Errors-in-variables model; the response block is ``(Y*, W)``."""

    alpha: float
    beta: np.ndarray
    mu: np.ndarray
    sigma2: float
    Sigma: np.ndarray
    Psi: np.ndarray
    family: ClassVar[str] = "measurement_error"

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(_arr(self.beta)))
        object.__setattr__(self, "mu", np.atleast_1d(_arr(self.mu)))
        object.__setattr__(self, "Sigma", _as_spd(self.Sigma, "Sigma"))
        object.__setattr__(self, "Psi", _as_spd(self.Psi, "Psi"))
        if not self.sigma2 > 0:
            raise ParameterRangeError("sigma2 must be positive")
        q = self.beta.size
        if self.mu.size != q or self.Sigma.shape != (q, q) or self.Psi.shape != (q, q):
            raise ShapeError("measurement-error parameter dimensions disagree")

    @property
    def q(self):
        return self.beta.size

    def _moments(self):
        xi, delta, _ = mem_assemble(self.alpha, self.beta, self.mu, self.sigma2,
                                    self.Sigma, self.Psi, np.zeros(1))
        return xi, delta

    def group_moments(self, data, i):
        return self._moments()

    def class_moments(self, data, idx):
        xi, delta = self._moments()
        if delta.shape[0] != data.sizes[idx[0]]:
            raise ShapeError("group size must equal q + 1")
        k = len(idx)
        return np.broadcast_to(xi, (k, xi.size)), np.broadcast_to(delta, (k,) + delta.shape)

    def mean_design(self, data):
        # xi_i = I_{q+1} h(eta) with h = (alpha + mu'beta, mu)
        return np.tile(np.eye(self.q + 1), (data.n, 1))

    def unconstrained(self):
        return np.concatenate([[self.alpha], self.beta, self.mu, [np.log(self.sigma2)],
                               chol_log_pack(self.Sigma)])

    def from_unconstrained(self, u):
        q = self.q
        alpha = float(u[0])
        beta = u[1:1 + q]
        mu = u[1 + q:1 + 2 * q]
        ls2 = float(u[1 + 2 * q])
        S, lj = chol_log_unpack(u[2 + 2 * q:], q)
        return MeasurementError(alpha, beta, mu, float(np.exp(ls2)), S, self.Psi), lj + ls2


@dataclass(frozen=True, eq=False)
class ParamCorrelation(Family):
    """``Delta_i = sigma2 * G(alpha)`` for CS / AR(1) / MA(1) correlation."""

    kind: str
    alpha: float
    sigma2: float
    family: ClassVar[str] = "param_correlation"

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.upper())
        correlation_matrix(self.kind, self.alpha, 1)
        if not self.sigma2 > 0:
            raise ParameterRangeError("sigma2 must be positive")

    def group_moments(self, data, i):
        m = data.sizes[i]
        return np.zeros(m), self.sigma2 * correlation_matrix(self.kind, self.alpha, m)

    def class_moments(self, data, idx):
        m = int(data.sizes[idx[0]])
        g = self.sigma2 * correlation_matrix(self.kind, self.alpha, m)
        return np.zeros((len(idx), m)), np.broadcast_to(g, (len(idx), m, m))

    def unconstrained(self):
        lo, hi = ALPHA_RANGES[self.kind]
        return np.array([bounded_logit(self.alpha, lo, hi), np.log(self.sigma2)])

    def from_unconstrained(self, u):
        lo, hi = ALPHA_RANGES[self.kind]
        alpha, lj = bounded_expit(u[0], lo, hi)
        if not lo < alpha < hi:
            raise ParameterRangeError("alpha hit the boundary of its range")
        return ParamCorrelation(self.kind, alpha, float(np.exp(u[1]))), lj + float(u[1])


@dataclass(frozen=True, eq=False)
class MixedEffects(Family):
    """Marginal covariance ``sigma2 I + Z_i Psi Z_i'``; ``sigma2`` is known."""

    psi: np.ndarray
    sigma2: float
    family: ClassVar[str] = "mixed_effects"

    def __post_init__(self):
        object.__setattr__(self, "psi", _as_spd(self.psi, "Psi"))
        if not self.sigma2 > 0:
            raise ParameterRangeError("sigma2 must be positive")

    @property
    def q(self):
        return self.psi.shape[0]

    def _z(self, data, i):
        z = data.group_meta(i, "Z")
        if z is None:
            raise ShapeError(f"group {i}: mixed-effects model needs a random-effect design 'Z'")
        return np.atleast_2d(np.asarray(z, dtype=float)).reshape(data.sizes[i], self.q)

    def group_moments(self, data, i):
        return np.zeros(data.sizes[i]), mixed_effects_cov(self.sigma2, self._z(data, i), self.psi)

    def class_moments(self, data, idx):
        m = int(data.sizes[idx[0]])
        z = np.stack([self._z(data, int(i)) for i in idx])
        delta = self.sigma2 * np.eye(m)[None] + np.einsum("kiq,qr,kjr->kij", z, self.psi, z)
        return np.zeros((len(idx), m)), delta

    def unconstrained(self):
        return chol_log_pack(self.psi)

    def from_unconstrained(self, u):
        s, lj = chol_log_unpack(u, self.q)
        return MixedEffects(s, self.sigma2), lj


@dataclass(frozen=True, eq=False)
class Graphical(Family):
    """Sparse precision ``Omega`` shared by all groups; ``Delta = Omega^{-1}``."""

    omega: np.ndarray
    L: float = None
    family: ClassVar[str] = "graphical"
    _delta: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        omega = _as_spd(self.omega, "Omega")
        object.__setattr__(self, "omega", omega)
        if self.L is not None and not in_m0_plus(omega, self.L):
            raise ParameterRangeError("Omega lies outside the bounded precision class")
        object.__setattr__(self, "_delta", graphical_delta(omega))

    @property
    def mbar(self):
        return self.omega.shape[0]

    @property
    def edges(self):
        j, k = np.triu_indices(self.mbar, 1)
        keep = self.omega[j, k] != 0.0
        return list(zip(j[keep].tolist(), k[keep].tolist()))

    def group_moments(self, data, i):
        return np.zeros(self.mbar), self._delta

    def class_moments(self, data, idx):
        k = len(idx)
        return np.zeros((k, self.mbar)), np.broadcast_to(self._delta, (k, self.mbar, self.mbar))

    def unconstrained(self):
        j, k = zip(*self.edges) if self.edges else ((), ())
        return np.concatenate([np.diag(self.omega), self.omega[list(j), list(k)]])

    def from_unconstrained(self, u):
        # natural coordinates (diagonal + present edges); the Jacobian is 1
        om = np.zeros_like(self.omega)
        om[np.diag_indices(self.mbar)] = u[:self.mbar]
        for val, (j, k) in zip(u[self.mbar:], self.edges):
            om[j, k] = om[k, j] = val
        return Graphical(om, self.L), 0.0

    def to_dict(self):
        return {"family": self.family, "omega": self.omega.tolist(), "L": self.L}


def _z_of(data, i):
    z = data.group_meta(i, "z")
    if z is None:
        raise ShapeError(f"group {i}: spline family needs a scalar covariate 'z'")
    return float(z)


@dataclass(frozen=True, eq=False)
class HeteroSpline(Family):
    """Scalar responses with variance function ``v(z) = beta' B_J(z)``."""

    beta: np.ndarray
    q: int = 4
    family: ClassVar[str] = "hetero_spline"

    def __post_init__(self):
        object.__setattr__(self, "beta", _arr(self.beta).ravel())
        if np.any(self.beta <= 0):
            raise ParameterRangeError("variance spline coefficients must be positive")
        splines.SplineBasis(self.beta.size, self.q)

    @property
    def basis(self):
        return splines.SplineBasis(self.beta.size, self.q)

    def variance(self, z):
        return hetero_variance(self.beta, self.basis, z)

    def group_moments(self, data, i):
        return np.zeros(1), np.array([[self.variance(_z_of(data, i))]])

    def class_moments(self, data, idx):
        z = np.array([_z_of(data, int(i)) for i in idx])
        v = self.variance(z)
        return np.zeros((len(idx), 1)), v[:, None, None]

    def unconstrained(self):
        return np.log(self.beta)

    def from_unconstrained(self, u):
        return HeteroSpline(np.exp(u), self.q), float(np.sum(u))


@dataclass(frozen=True, eq=False)
class PartialLinear(Family):
    """Scalar responses with mean shift ``g(z) = beta' B_J(z)``."""

    beta: np.ndarray
    sigma2: float
    q: int = 4
    family: ClassVar[str] = "partial_linear"

    def __post_init__(self):
        object.__setattr__(self, "beta", _arr(self.beta).ravel())
        if not self.sigma2 > 0:
            raise ParameterRangeError("sigma2 must be positive")
        splines.SplineBasis(self.beta.size, self.q)

    @classmethod
    def from_function(cls, f, J, sigma2, q=4, grid_size=2000):
        basis = splines.SplineBasis(J, q)
        z = np.linspace(0, 1, grid_size)
        coef, *_ = np.linalg.lstsq(splines.spline_design(basis, z), f(z), rcond=None)
        return cls(coef, sigma2, q)

    @property
    def basis(self):
        return splines.SplineBasis(self.beta.size, self.q)

    def mean(self, z):
        return partial_linear_mean(self.beta, self.basis, z)

    def group_moments(self, data, i):
        return np.array([self.mean(_z_of(data, i))]), np.array([[self.sigma2]])

    def class_moments(self, data, idx):
        z = np.array([_z_of(data, int(i)) for i in idx])
        k = len(idx)
        return self.mean(z)[:, None], np.full((k, 1, 1), self.sigma2)

    def mean_design(self, data):
        z = np.array([_z_of(data, i) for i in range(data.n)])
        return splines.spline_design(self.basis, z)

    def unconstrained(self):
        return np.concatenate([self.beta, [np.log(self.sigma2)]])

    def from_unconstrained(self, u):
        return PartialLinear(u[:-1], float(np.exp(u[-1])), self.q), float(u[-1])


FAMILIES = {cls.family: cls for cls in (LinearGaussian, MissingResponse, MeasurementError,
                                        ParamCorrelation, MixedEffects, Graphical,
                                        HeteroSpline, PartialLinear)}


def family_from_dict(d):
    d = dict(d)
    name = d.pop("family")
    if name not in FAMILIES:
        raise ParameterRangeError(f"unknown family {name!r}; choose from {sorted(FAMILIES)}")
    cls = FAMILIES[name]
    args = {}
    for k, v in d.items():
        args[k] = np.asarray(v, dtype=float) if isinstance(v, list) else v
    return cls(**args)


# ---------------------------------------------------------------------------
# simulation


def gaussian_design(rng, rows, p, rescale=True):
    x = rng.standard_normal((rows, p))
    if rescale:
        x *= np.sqrt(rows) / np.linalg.norm(x, axis=0)
    return x


def _draw_patterns(rng, n, mbar, obs_prob, pair_floor):
    pats = rng.random((n, mbar)) < obs_prob
    empty = ~pats.any(axis=1)
    while empty.any():
        pats[empty] = rng.random((int(empty.sum()), mbar)) < obs_prob
        empty = ~pats.any(axis=1)
    # force full rows until every coordinate pair is co-observed often enough
    i = 0
    while i < n:
        co = (pats.T.astype(float) @ pats.astype(float)) / n
        if co.min() >= pair_floor:
            break
        pats[i] = True
        i += 1
    return pats.astype(int)


def simulate(family, theta0, n, p, seed=0, m=None, rescale=True, obs_prob=0.8,
             pair_floor=0.05, z_design="gaussian", z_cov=None, q_re=None):
    """Draw a dataset from the model at ``(theta0, family)``.

    ``m`` is the group size where the family allows it (linear, parametric
    correlation, mixed effects). Covariates ``z_i`` for spline families are
    equispaced at ``(i - 1/2)/n``. Columns of the stacked design are rescaled
    to Euclidean norm ``sqrt(n_*)`` (``sqrt(n)`` for measurement error).
    """
    rng = make_rng(seed)
    th = theta0.to_dense() if isinstance(theta0, SparseVector) else np.asarray(theta0, float).ravel()
    if th.size != p:
        raise ShapeError("theta0 dimension differs from p")
    meta = [dict() for _ in range(n)]
    if isinstance(family, MeasurementError):
        xs_star = gaussian_design(rng, n, p, rescale)
        xs = [mem_assemble(0, family.beta, family.mu, family.sigma2, family.Sigma,
                           family.Psi, xs_star[i])[2] for i in range(n)]
        sizes = [family.q + 1] * n
    elif isinstance(family, (MissingResponse, Graphical)):
        mbar = family.mbar
        if isinstance(family, MissingResponse):
            pats = _draw_patterns(rng, n, mbar, obs_prob, pair_floor)
        else:
            pats = np.ones((n, mbar), dtype=int)
        x_aug = gaussian_design(rng, n * mbar, p, False).reshape(n, mbar, p)
        xs = [x_aug[i][pats[i].astype(bool)] for i in range(n)]
        for i in range(n):
            if isinstance(family, MissingResponse):
                meta[i]["pattern"] = pats[i]
        sizes = [x.shape[0] for x in xs]
        if rescale:
            stacked = np.vstack(xs)
            scale = np.sqrt(stacked.shape[0]) / np.linalg.norm(stacked, axis=0)
            xs = [x * scale for x in xs]
    else:
        if isinstance(family, (HeteroSpline, PartialLinear)):
            mm = 1
        else:
            mm = 1 if m is None else int(m)
        sizes = [mm] * n
        x_all = gaussian_design(rng, n * mm, p, rescale)
        xs = [x_all[i * mm:(i + 1) * mm] for i in range(n)]
        if isinstance(family, (HeteroSpline, PartialLinear)):
            for i in range(n):
                meta[i]["z"] = (i + 0.5) / n
        if isinstance(family, MixedEffects):
            q = family.q
            for i in range(n):
                if z_design == "intercept" and q == 1:
                    meta[i]["Z"] = np.ones((mm, 1))
                else:
                    meta[i]["Z"] = rng.standard_normal((mm, q))
    ys = [np.zeros(s) for s in sizes]
    data = GroupedDataset(ys, xs, meta)
    xis, deltas = family.moments(data)
    ys = []
    for i in range(n):
        c = np.linalg.cholesky(deltas[i])
        ys.append(xs[i] @ th + xis[i] + c @ rng.standard_normal(sizes[i]))
    return GroupedDataset(ys, xs, meta)
