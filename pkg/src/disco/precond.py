"""Sampled-Hessian preconditioner applied exactly through the Woodbury identity.

    P = (lam + mu) I + (1/tau) sum_i h_i x_i x_i^T

over tau designated samples with curvature coefficients h_i. The scaling
sqrt(h_i / tau) is folded into the stored columns, so P = shift*I + C C^T
and a solve only needs the tau x tau matrix I + C^T C / shift.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .losses import LossModel


def _mul(A, v):
    return np.asarray(A @ v).ravel()


@dataclass
class WoodburyPrecond:
    shift: float
    columns: object  # d' x tau, dense or sparse
    gram_factor: tuple  # cho_factor of I + C^T C / shift
    gram_eigmax: float
    tau: int
    mu: float

    @property
    def dim(self):
        return self.columns.shape[0]

    def solve(self, r):
        r = np.asarray(r, dtype=float)
        if r.shape != (self.dim,):
            raise ValueError(f"rhs has shape {r.shape}, expected ({self.dim},)")
        y = r / self.shift
        v = la.cho_solve(self.gram_factor, _mul(self.columns.T, y))
        # (D + C C^T)^-1 r = y - D^-1 C v
        return y - _mul(self.columns, v) / self.shift

    def matvec(self, s):
        s = np.asarray(s, dtype=float)
        return self.shift * s + _mul(self.columns, _mul(self.columns.T, s))

    @property
    def lambda_max(self):
        # eig(C C^T) and eig(C^T C) share their nonzero part
        return self.shift * self.gram_eigmax

    def dense(self):
        C = self.columns.toarray() if sp.issparse(self.columns) else np.asarray(self.columns)
        return self.shift * np.eye(self.dim) + C @ C.T


def _factor(columns, shift, tau, mu):
    G = columns.T @ columns
    G = G.toarray() if sp.issparse(G) else np.asarray(G)
    gram = np.eye(tau) + G / shift
    try:
        factor = la.cho_factor(gram, lower=False)
    except la.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"preconditioner Gram matrix not positive definite: {exc}")
    eigmax = float(la.eigvalsh(gram, subset_by_index=[tau - 1, tau - 1])[0])
    return WoodburyPrecond(float(shift), columns, factor, eigmax, tau, float(mu))


def build_preconditioner(X, labels, margins, loss, lam, mu, tau):
    """Preconditioner from the first ``tau`` columns of ``X``.

    ``margins`` and ``labels`` are indexed like the columns of ``X``; only
    the first ``tau`` entries are read. Feature-sliced ``X`` (a block of rows)
    yields the matching diagonal block of the full preconditioner.
    """
    tau = int(tau)
    if tau < 1:
        raise ValueError("tau must be at least 1")
    if tau > X.shape[1]:
        raise ValueError(f"tau={tau} exceeds the {X.shape[1]} available samples")
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    shift = lam + mu
    if not shift > 0:
        raise ValueError("lam + mu must be positive")
    loss = LossModel.parse(loss)
    h = loss.second_derivative(np.asarray(margins)[:tau], np.asarray(labels)[:tau])
    scale = np.sqrt(h / tau)
    if sp.issparse(X):
        columns = (X[:, :tau] @ sp.diags(scale)).tocsc()
    else:
        columns = np.asarray(X, dtype=float)[:, :tau] * scale
    return _factor(columns, shift, tau, mu)


def woodbury_solve(p, r):
    return p.solve(r)


def block_preconditioner(p, lo, hi):
    """Diagonal block of ``p`` on coordinates [lo, hi)."""
    if not 0 <= lo < hi <= p.dim:
        raise ValueError(f"block [{lo}, {hi}) outside dimension {p.dim}")
    cols = p.columns[lo:hi, :]
    if sp.issparse(cols):
        cols = cols.tocsc()
    return _factor(cols, p.shift, p.tau, p.mu)


class BlockDiagonalPrecond:
    """Independent preconditioner blocks on contiguous coordinate ranges."""

    def __init__(self, blocks, boundaries):
        self.blocks = list(blocks)
        self.boundaries = np.asarray(boundaries, dtype=int)
        if len(self.boundaries) != len(self.blocks) + 1:
            raise ValueError("need one more boundary than blocks")

    @classmethod
    def from_full(cls, p, boundaries):
        bounds = np.asarray(boundaries, dtype=int)
        if bounds[0] != 0 or bounds[-1] != p.dim:
            raise ValueError("boundaries must cover the full dimension")
        return cls([block_preconditioner(p, lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])], bounds)

    @property
    def dim(self):
        return int(self.boundaries[-1])

    def solve(self, r):
        r = np.asarray(r, dtype=float)
        if r.shape != (self.dim,):
            raise ValueError(f"rhs has shape {r.shape}, expected ({self.dim},)")
        return np.concatenate([
            b.solve(r[lo:hi]) for b, lo, hi in zip(self.blocks, self.boundaries[:-1], self.boundaries[1:])
        ])

    def matvec(self, s):
        return np.concatenate([
            b.matvec(s[lo:hi]) for b, lo, hi in zip(self.blocks, self.boundaries[:-1], self.boundaries[1:])
        ])

    @property
    def lambda_max(self):
        return max(b.lambda_max for b in self.blocks)


class IdentityPrecond:
    """P = I; turns PCG into plain CG."""

    def __init__(self, dim):
        self.dim = dim
        self.lambda_max = 1.0

    def solve(self, r):
        return np.array(r, dtype=float)

    def matvec(self, s):
        return np.array(s, dtype=float)
