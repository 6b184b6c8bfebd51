"""Grouped Gaussian regression: data containers, likelihood and whitening.

Each group ``i`` contributes ``y_i = X_i theta + xi_i + eps_i`` with
``eps_i ~ N(0, Delta_i)``, where ``(xi_i, Delta_i)`` are produced by a
nuisance state (see :mod:`nuisreg.families`). Indices are 0-based throughout.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import CovarianceNotSPDError, ShapeError

LOG_2PI = float(np.log(2.0 * np.pi))
EIG_REL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SparseVector:
    """Canonical sparse vector: sorted support, no stored zeros."""

    support: tuple
    values: np.ndarray
    p: int

    def __post_init__(self):
        sup = np.asarray(self.support, dtype=int).ravel()
        vals = np.asarray(self.values, dtype=float).ravel()
        if sup.shape != vals.shape:
            raise ShapeError("support and values differ in length")
        if sup.size and (sup.min() < 0 or sup.max() >= self.p):
            raise ShapeError(f"support index outside [0, {self.p})")
        order = np.argsort(sup, kind="stable")
        sup, vals = sup[order], vals[order]
        if sup.size > 1 and np.any(np.diff(sup) == 0):
            raise ShapeError("duplicate support index")
        keep = vals != 0.0
        object.__setattr__(self, "support", tuple(int(j) for j in sup[keep]))
        object.__setattr__(self, "values", vals[keep])

    @classmethod
    def zeros(cls, p):
        return cls((), np.empty(0), p)

    @classmethod
    def from_dense(cls, theta):
        theta = np.asarray(theta, dtype=float).ravel()
        sup = np.flatnonzero(theta)
        return cls(tuple(sup), theta[sup], theta.size)

    def to_dense(self):
        out = np.zeros(self.p)
        out[list(self.support)] = self.values
        return out

    @property
    def s(self):
        return len(self.support)

    def __eq__(self, other):
        if not isinstance(other, SparseVector):
            return NotImplemented
        return (self.p == other.p and self.support == other.support
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.p, self.support, self.values.tobytes()))

    def __repr__(self):
        return f"SparseVector(p={self.p}, support={self.support}, values={self.values.tolist()})"


@dataclass(eq=False)
class GroupedDataset:
    """Responses ``ys[i]`` (length m_i) and designs ``xs[i]`` (m_i x p).

    ``meta[i]`` is an optional dict with any of ``pattern`` (0/1 vector of
    observed coordinates), ``z`` (scalar covariate in [0, 1]) and ``Z``
    (random-effect design, m_i x q).
    """

    ys: list
    xs: list
    meta: list = field(default=None)

    def __post_init__(self):
        self.ys = [np.atleast_1d(np.asarray(y, dtype=float)) for y in self.ys]
        self.xs = [np.atleast_2d(np.asarray(x, dtype=float)) for x in self.xs]
        if len(self.ys) != len(self.xs):
            raise ShapeError("ys and xs have different numbers of groups")
        if not self.ys:
            raise ShapeError("dataset needs at least one group")
        p = self.xs[0].shape[1]
        for i, (y, x) in enumerate(zip(self.ys, self.xs)):
            if y.ndim != 1 or y.size < 1:
                raise ShapeError(f"group {i}: response must be a non-empty vector")
            if x.shape != (y.size, p):
                raise ShapeError(f"group {i}: design shape {x.shape}, expected {(y.size, p)}")
        if self.meta is None:
            self.meta = [{} for _ in self.ys]
        elif len(self.meta) != len(self.ys):
            raise ShapeError("meta length differs from number of groups")
        else:
            self.meta = [dict(m) if m else {} for m in self.meta]

    @property
    def n(self):
        return len(self.ys)

    @property
    def p(self):
        return self.xs[0].shape[1]

    @cached_property
    def sizes(self):
        return np.array([y.size for y in self.ys], dtype=int)

    @property
    def n_star(self):
        return int(self.sizes.sum())

    @cached_property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.sizes)])

    @cached_property
    def size_classes(self):
        """Map m -> (group indices, row positions (k, m)) for batched work."""
        out = {}
        for m in np.unique(self.sizes):
            idx = np.flatnonzero(self.sizes == m)
            rows = self.offsets[idx][:, None] + np.arange(m)[None, :]
            out[int(m)] = (idx, rows)
        return out

    @cached_property
    def x(self):
        """Stacked n_* x p design."""
        return np.vstack(self.xs)

    @cached_property
    def y(self):
        return np.concatenate(self.ys)

    def group_meta(self, i, key, default=None):
        return self.meta[i].get(key, default)

    def permuted(self, order):
        order = list(order)
        return GroupedDataset([self.ys[i] for i in order], [self.xs[i] for i in order],
                              [self.meta[i] for i in order])

    # serialization -------------------------------------------------------

    def to_dict(self):
        groups = []
        for y, x, meta in zip(self.ys, self.xs, self.meta):
            g = {"y": y.tolist(), "x": x.ravel().tolist(), "m": int(y.size)}
            if meta:
                g["meta"] = {k: np.asarray(v).tolist() for k, v in meta.items()}
            groups.append(g)
        return {"p": self.p, "n": self.n, "groups": groups}

    @classmethod
    def from_dict(cls, d):
        p = int(d["p"])
        ys, xs, metas = [], [], []
        for g in d["groups"]:
            y = np.asarray(g["y"], dtype=float)
            ys.append(y)
            xs.append(np.asarray(g["x"], dtype=float).reshape(y.size, p))
            meta = {}
            for k, v in g.get("meta", {}).items():
                meta[k] = np.asarray(v, dtype=int if k == "pattern" else float)
                if k == "z":
                    meta[k] = float(meta[k])
            metas.append(meta)
        ds = cls(ys, xs, metas)
        if ds.n != int(d["n"]):
            raise ShapeError("group count disagrees with header")
        return ds

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class NuisanceState:
    """Base class for nuisance parameters; subclasses live in ``families``.

    A state maps each group to its mean shift ``xi_i`` and covariance
    ``Delta_i``. Subclasses implement :meth:`group_moments` and may override
    :meth:`class_moments` with a vectorized version.
    """

    family = "abstract"

    def group_moments(self, data, i):
        raise NotImplementedError

    def class_moments(self, data, idx):
        pairs = [self.group_moments(data, int(i)) for i in idx]
        xi = np.stack([np.asarray(a, dtype=float).reshape(-1) for a, _ in pairs])
        delta = np.stack([np.atleast_2d(b) for _, b in pairs])
        return xi, delta

    def moments(self, data):
        """Per-group lists ``(xi, delta)`` in group order."""
        xis, deltas = [None] * data.n, [None] * data.n
        for _, (idx, _rows) in data.size_classes.items():
            xi, delta = self.class_moments(data, idx)
            for k, i in enumerate(idx):
                xis[i], deltas[i] = xi[k], delta[k]
        return xis, deltas

    def xi_stacked(self, data):
        out = np.empty(data.n_star)
        for _, (idx, rows) in data.size_classes.items():
            xi, _ = self.class_moments(data, idx)
            out[rows] = xi
        return out


# ---------------------------------------------------------------------------
# matrix helpers

def _check_eigs(w, groups=None):
    w = np.asarray(w)
    top = np.max(np.abs(w), axis=-1, keepdims=True)
    bad = (w <= EIG_REL_TOL * top).any(axis=-1) | ~np.isfinite(w).all(axis=-1)
    if np.any(bad):
        k = int(np.flatnonzero(np.atleast_1d(bad))[0])
        g = None if groups is None else int(np.atleast_1d(groups)[k])
        raise CovarianceNotSPDError(
            f"covariance not positive definite (group {g})", group=g)


def spd_inv_sqrt(a, group=None):
    """Symmetric inverse square root and log-determinant of an SPD matrix."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    _check_eigs(w, None if group is None else [group])
    return (v / np.sqrt(w)) @ v.T, float(np.sum(np.log(w)))


def spd_sqrt(a):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    _check_eigs(w)
    return (v * np.sqrt(w)) @ v.T


def batched_inv_sqrt(deltas, groups=None):
    """Inverse square roots and log-dets for a stack (k, m, m)."""
    d = np.asarray(deltas, dtype=float)
    w, v = np.linalg.eigh(0.5 * (d + np.swapaxes(d, -1, -2)))
    _check_eigs(w, groups)
    w_is = 1.0 / np.sqrt(w)
    return np.einsum("kij,kj,klj->kil", v, w_is, v), np.log(w).sum(axis=-1)


def is_spd(a, tol=EIG_REL_TOL):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or not np.allclose(a, a.T, atol=1e-10 * max(1.0, np.abs(a).max())):
        return False
    w = np.linalg.eigvalsh(a)
    return bool(np.isfinite(w).all() and w[0] > tol * abs(w[-1]))


# ---------------------------------------------------------------------------
# likelihood


def _theta_dense(theta, p):
    if isinstance(theta, SparseVector):
        if theta.p != p:
            raise ShapeError(f"theta has dimension {theta.p}, data has p={p}")
        return theta.to_dense()
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != p:
        raise ShapeError(f"theta has dimension {theta.size}, data has p={p}")
    return theta


def log_likelihood(data, theta, eta):
    """Gaussian log-likelihood summed over groups."""
    th = _theta_dense(theta, data.p)
    total = 0.0
    for m, (idx, rows) in data.size_classes.items():
        xi, delta = eta.class_moments(data, idx)
        if delta.shape[1:] != (m, m) or xi.shape[1:] != (m,):
            raise ShapeError(f"nuisance moments have wrong shape for group size {m}")
        w, logdet = batched_inv_sqrt(delta, idx)
        resid = data.y[rows] - data.x[rows] @ th - xi
        z = np.einsum("kij,kj->ki", w, resid)
        total += -0.5 * (len(idx) * m * LOG_2PI + logdet.sum() + np.sum(z * z))
    return float(total)


def log_likelihood_ratio(data, num, den):
    """``log p_num(Y) - log p_den(Y)`` for parameter pairs ``(theta, eta)``."""
    return log_likelihood(data, *num) - log_likelihood(data, *den)


@dataclass
class WhitenedDesign:
    x_tilde: np.ndarray
    xi_tilde: np.ndarray
    u: np.ndarray = None
    logdet: float = 0.0  # sum_i log det Delta_{eta0, i}


def _whitening_blocks(data, eta0):
    blocks = {}
    for m, (idx, rows) in data.size_classes.items():
        xi, delta = eta0.class_moments(data, idx)
        w, logdet = batched_inv_sqrt(delta, idx)
        blocks[m] = (rows, w, xi, logdet)
    return blocks


def apply_blocks(blocks, v):
    """Apply block-diagonal ``Delta^{-1/2}`` to a stacked vector or matrix."""
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    for _, (rows, w, _xi, _ld) in blocks.items():
        if v.ndim == 1:
            out[rows] = np.einsum("kij,kj->ki", w, v[rows])
        else:
            out[rows] = np.einsum("kij,kjp->kip", w, v[rows])
    return out


def whiten(data, eta0, theta0=None):
    """Whitened design ``Delta_{eta0,i}^{-1/2} X_i`` stacked over groups.

    ``xi_tilde`` is the whitened mean shift of ``eta0``; when ``theta0`` is
    given the standardized residual ``u`` is filled in as well.
    """
    blocks = _whitening_blocks(data, eta0)
    x_tilde = apply_blocks(blocks, data.x)
    xi = np.empty(data.n_star)
    for _, (rows, _w, xi_c, _ld) in blocks.items():
        xi[rows] = xi_c
    xi_tilde = apply_blocks(blocks, xi)
    logdet = float(sum(b[3].sum() for b in blocks.values()))
    u = None
    if theta0 is not None:
        th = _theta_dense(theta0, data.p)
        u = apply_blocks(blocks, data.y - data.x @ th - xi)
    return WhitenedDesign(x_tilde, xi_tilde, u, logdet)


def whiten_mean(data, eta0, eta):
    """Stack of ``Delta_{eta0,i}^{-1/2} xi_{eta,i}``."""
    blocks = _whitening_blocks(data, eta0)
    return apply_blocks(blocks, eta.xi_stacked(data))


def standardized_residual(data, theta0, eta0):
    """Stack of ``Delta_{eta0,i}^{-1/2}(y_i - X_i theta0 - xi_{eta0,i})``."""
    return whiten(data, eta0, theta0).u


def stack_groups(vectors: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.atleast_1d(v) for v in vectors])


def iter_groups(data: GroupedDataset, v: np.ndarray) -> Iterable[np.ndarray]:
    off = data.offsets
    for i in range(data.n):
        yield v[off[i]:off[i + 1]]
