"""Closed-form divergences between Gaussian models and related checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import CovarianceNotSPDError, ShapeError
from .model import _theta_dense, log_likelihood_ratio, spd_sqrt


@dataclass(frozen=True)
class GaussianPair:
    mu1: np.ndarray
    sigma1: np.ndarray
    mu2: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        for name in ("mu1", "mu2"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        for name in ("sigma1", "sigma2"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        r = self.mu1.size
        if self.mu2.size != r or self.sigma1.shape != (r, r) or self.sigma2.shape != (r, r):
            raise ShapeError("Gaussian pair dimensions disagree")

    @property
    def r(self):
        return self.mu1.size


def _chol(a):
    try:
        return cho_factor(a, lower=True)
    except np.linalg.LinAlgError as exc:
        raise CovarianceNotSPDError("covariance is not positive definite") from exc


def _logdet(cf):
    return 2.0 * float(np.sum(np.log(np.diag(cf[0]))))


def gaussian_kl(pair):
    """KL(N(mu1, S1) || N(mu2, S2))."""
    c1, c2 = _chol(pair.sigma1), _chol(pair.sigma2)
    d = pair.mu1 - pair.mu2
    tr = float(np.trace(cho_solve(c2, pair.sigma1)))
    quad = float(d @ cho_solve(c2, d))
    return 0.5 * (_logdet(c2) - _logdet(c1) + tr - pair.r + quad)


def gaussian_kl_variation(pair):
    """Second central moment of the log-ratio ``log p1/p2`` under ``p1``."""
    _chol(pair.sigma1)
    c2 = _chol(pair.sigma2)
    a = cho_solve(c2, pair.sigma1)  # S2^{-1} S1
    d = pair.mu1 - pair.mu2
    b = cho_solve(c2, d)
    var_quad = 0.5 * (float(np.trace(a @ a)) - 2.0 * float(np.trace(a)) + pair.r)
    return var_quad + float(b @ pair.sigma1 @ b)


def affinity_defect(sigma1, sigma2):
    """``1 - det(S1)^{1/4} det(S2)^{1/4} / det((S1 + S2)/2)^{1/2}``."""
    s1 = np.atleast_2d(np.asarray(sigma1, dtype=float))
    s2 = np.atleast_2d(np.asarray(sigma2, dtype=float))
    if s1.shape != s2.shape:
        raise ShapeError("covariances differ in shape")
    l1, l2 = _logdet(_chol(s1)), _logdet(_chol(s2))
    lm = _logdet(_chol(0.5 * (s1 + s2)))
    return float(-np.expm1(0.25 * (l1 + l2) - 0.5 * lm))


def bhattacharyya(mu1, s1, mu2, s2):
    """``-log int sqrt(p q)`` for two Gaussians."""
    s1, s2 = np.atleast_2d(s1), np.atleast_2d(s2)
    cs = _chol(s1 + s2)
    d = np.atleast_1d(mu1) - np.atleast_1d(mu2)
    l1, l2 = _logdet(_chol(s1)), _logdet(_chol(s2))
    lm = _logdet(cs) - d.size * np.log(2.0)
    return float(-(0.25 * (l1 + l2) - 0.5 * lm) + 0.25 * d @ cho_solve(cs, d))


def avg_renyi(theta, eta, theta0, eta0, data, mean_term=True):
    """Average order-1/2 Renyi divergence between the two product models.

    The mean contribution is ``(1/4) d' (Delta + Delta0)^{-1} d`` per group,
    which is the exact Gaussian value. ``mean_term=False`` keeps only the
    covariance (affinity) part.
    """
    th = _theta_dense(theta, data.p)
    th0 = _theta_dense(theta0, data.p)
    total = 0.0
    for m, (idx, rows) in data.size_classes.items():
        xi, d1 = eta.class_moments(data, idx)
        xi0, d0 = eta0.class_moments(data, idx)
        mdiff = data.x[rows] @ (th - th0) + xi - xi0
        s = d1 + d0
        l1 = np.linalg.slogdet(d1)
        l0 = np.linalg.slogdet(d0)
        ls = np.linalg.slogdet(0.5 * s)
        if np.any(l1[0] <= 0) or np.any(l0[0] <= 0):
            raise CovarianceNotSPDError("covariance is not positive definite")
        total += float(np.sum(0.5 * ls[1] - 0.25 * (l1[1] + l0[1])))
        if mean_term:
            sol = np.linalg.solve(s, mdiff[..., None])[..., 0]
            total += 0.25 * float(np.sum(mdiff * sol))
    return total / data.n


def pseudo_metrics(eta1, eta2, data):
    """``(d_A, d_B, d_n)``: mean, covariance and combined pseudo-distances."""
    a2 = b2 = 0.0
    for m, (idx, rows) in data.size_classes.items():
        xi1, dl1 = eta1.class_moments(data, idx)
        xi2, dl2 = eta2.class_moments(data, idx)
        a2 += float(np.sum((xi1 - xi2) ** 2))
        b2 += float(np.sum((dl1 - dl2) ** 2))
    a2, b2 = a2 / data.n, b2 / data.n
    return float(np.sqrt(a2)), float(np.sqrt(b2)), float(np.sqrt(a2 + b2))


def np_test(data, alt, null):
    """Most powerful test: reject the null when the likelihood ratio is >= 1."""
    return "reject" if log_likelihood_ratio(data, alt, null) >= 0.0 else "accept"


def eigen_ratio_check(sigma1, sigma2, slack=1e-10):
    """Sandwich of the squared eigenvalue gaps by Frobenius distances.

    Returns ``(lhs, mid, rhs)`` with ``mid = sum_k (1/d_k - 1)^2`` where
    ``d_k`` are the eigenvalues of ``S2^{1/2} S1^{-1} S2^{1/2}``.
    """
    s1 = np.atleast_2d(np.asarray(sigma1, dtype=float))
    s2 = np.atleast_2d(np.asarray(sigma2, dtype=float))
    w2 = np.linalg.eigvalsh(s2)
    r = spd_sqrt(s2)
    d = np.linalg.eigvalsh(r @ np.linalg.solve(s1, r))
    fro = float(np.sum((s1 - s2) ** 2))
    lhs, rhs = fro / w2[-1] ** 2, fro / w2[0] ** 2
    mid = float(np.sum((1.0 / d - 1.0) ** 2))
    scale = max(1.0, rhs)
    if not (lhs <= mid + slack * scale and mid <= rhs + slack * scale):
        raise AssertionError(f"eigenvalue sandwich violated: {lhs} <= {mid} <= {rhs}")
    return lhs, mid, rhs
