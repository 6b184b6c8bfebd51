"""B-spline bases on [0, 1] with equispaced interior knots."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterRangeError, RankError


@dataclass(frozen=True)
class SplineBasis:
    """``J`` B-splines of order ``q`` (degree ``q - 1``) on [0, 1]."""

    J: int
    q: int

    def __post_init__(self):
        if self.q < 1 or self.J < self.q:
            raise ParameterRangeError(f"need J >= q >= 1, got J={self.J}, q={self.q}")

    @property
    def knots(self):
        n_inner = self.J - self.q
        inner = np.linspace(0.0, 1.0, n_inner + 2)[1:-1]
        return np.concatenate([np.zeros(self.q), inner, np.ones(self.q)])

    def greville(self):
        t = self.knots
        return np.array([t[j + 1:j + self.q].mean() if self.q > 1 else 0.5 * (t[j] + t[j + 1])
                         for j in range(self.J)])

    def __call__(self, z):
        return basis_eval(self, z)


def _check_z(z):
    z = np.asarray(z, dtype=float)
    if np.any((z < 0.0) | (z > 1.0)) or not np.isfinite(z).all():
        raise ParameterRangeError("spline argument outside [0, 1]")
    return z


def basis_eval(basis, z):
    """Cox-de Boor evaluation; returns shape (J,) for scalar z, else (len(z), J)."""
    z = _check_z(z)
    scalar = z.ndim == 0
    zz = np.atleast_1d(z)
    t = basis.knots
    q, J = basis.q, basis.J
    # span index: t[k] <= z < t[k+1], with z = 1 assigned to the last span
    k = np.searchsorted(t, zz, side="right") - 1
    k = np.clip(k, q - 1, J - 1)
    # de Boor triangular scheme on the q non-zero functions of each span
    N = np.zeros((zz.size, q))
    N[:, 0] = 1.0
    left = np.zeros((zz.size, q))
    right = np.zeros((zz.size, q))
    for d in range(1, q):
        left[:, d] = zz - t[k + 1 - d]
        right[:, d] = t[k + d] - zz
        saved = np.zeros(zz.size)
        for r in range(d):
            denom = right[:, r + 1] + left[:, d - r]
            tmp = np.divide(N[:, r], denom, out=np.zeros(zz.size), where=denom != 0)
            N[:, r] = saved + right[:, r + 1] * tmp
            saved = left[:, d - r] * tmp
        N[:, d] = saved
    out = np.zeros((zz.size, J))
    cols = k[:, None] - (q - 1) + np.arange(q)[None, :]
    np.put_along_axis(out, cols, N, axis=1)
    return out[0] if scalar else out


def spline_design(basis, z):
    """Design matrix with rows ``B_J(z_i)``."""
    return basis_eval(basis, np.atleast_1d(np.asarray(z, dtype=float)))


def projection(w, pinv_fallback=False, rtol=1e-10):
    """Orthogonal projection onto span(W), built from a reduced QR factor.

    Returns ``(H, flagged)``; ``flagged`` is True only when a rank-deficient
    ``W`` was handled through the pseudo-inverse fallback.
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    u, sv, _ = np.linalg.svd(w, full_matrices=False)
    rank = int(np.sum(sv > rtol * max(sv[0], 1e-300))) if sv.size else 0
    if rank < w.shape[1]:
        if not pinv_fallback:
            raise RankError(f"W has rank {rank} < {w.shape[1]} columns")
        basis = u[:, :rank]
        return basis @ basis.T, True
    qm, _ = np.linalg.qr(w)
    return qm @ qm.T, False


def approx_error(f, basis, grid_size=10_000):
    """Sup-norm error on a grid of the least-squares spline fit to ``f``."""
    z = np.linspace(0.0, 1.0, grid_size)
    B = spline_design(basis, z)
    fz = np.asarray(f(z), dtype=float)
    coef, *_ = np.linalg.lstsq(B, fz, rcond=None)
    return float(np.max(np.abs(B @ coef - fz)))
