"""Scalar loss kernels and the L2-regularized empirical objective.

The data matrix ``X`` is stored with one column per sample (shape ``d x n``),
either as a dense array or a scipy sparse matrix. All kernels take the raw
margin ``w @ x_i`` and the label separately; the logistic kernels fold the
label in internally.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit


class LossModel(enum.Enum):
    QUADRATIC = "quadratic"
    SQUARED_HINGE = "squared-hinge"
    LOGISTIC = "logistic"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "-")
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown loss {name!r}")

    @property
    def self_concordance(self):
        """Self-concordance constant M of the per-sample loss."""
        return 1.0 if self is LossModel.LOGISTIC else 0.0

    def loss(self, margin, label):
        margin = np.asarray(margin, dtype=float)
        label = np.asarray(label, dtype=float)
        if self is LossModel.QUADRATIC:
            return (label - margin) ** 2
        if self is LossModel.SQUARED_HINGE:
            return np.maximum(0.0, label - margin) ** 2
        # log(1 + exp(-t)) without overflow
        return np.logaddexp(0.0, -label * margin)

    def derivative(self, margin, label):
        margin = np.asarray(margin, dtype=float)
        label = np.asarray(label, dtype=float)
        if self is LossModel.QUADRATIC:
            return -2.0 * (label - margin)
        if self is LossModel.SQUARED_HINGE:
            return -2.0 * np.maximum(0.0, label - margin)
        return -label * expit(-label * margin)

    def second_derivative(self, margin, label):
        margin = np.asarray(margin, dtype=float)
        label = np.asarray(label, dtype=float)
        if self is LossModel.QUADRATIC:
            return np.full(np.broadcast(margin, label).shape, 2.0)
        if self is LossModel.SQUARED_HINGE:
            # kink counts as inactive
            return np.where(label - margin > 0.0, 2.0, 0.0)
        t = label * margin
        # sigma(t) * sigma(-t) == exp(-t) / (1 + exp(-t))**2, both factors stable
        return label * label * expit(t) * expit(-t)


def loss_value(model, margin, label):
    return LossModel.parse(model).loss(margin, label)


def loss_derivative(model, margin, label):
    return LossModel.parse(model).derivative(margin, label)


def loss_second_derivative(model, margin, label):
    return LossModel.parse(model).second_derivative(margin, label)


def _check_dims(X, y, w):
    d, n = X.shape
    if np.shape(y) != (n,):
        raise ValueError(f"labels have shape {np.shape(y)}, expected ({n},)")
    if np.shape(w) != (d,):
        raise ValueError(f"weights have shape {np.shape(w)}, expected ({d},)")
    return d, n


@dataclass(frozen=True)
class Objective:
    """f(w) = (1/n) sum_i loss(w @ x_i, y_i) + (lam/2) ||w||^2."""

    loss: LossModel
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "loss", LossModel.parse(self.loss))
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")

    def value(self, X, y, w):
        d, n = _check_dims(X, y, w)
        margins = X.T @ w
        return float(np.sum(self.loss.loss(margins, y)) / n + 0.5 * self.lam * (w @ w))

    def gradient(self, X, y, w):
        d, n = _check_dims(X, y, w)
        margins = X.T @ w
        return np.asarray(X @ self.loss.derivative(margins, y)).ravel() / n + self.lam * w

    def hessian_vec(self, X, y, w, u, sample_subset=None):
        """Hessian-vector product, optionally over a subset of samples.

        The d x d Hessian is never formed.
        """
        d, n = _check_dims(X, y, w)
        if np.shape(u) != (d,):
            raise ValueError(f"direction has shape {np.shape(u)}, expected ({d},)")
        if sample_subset is not None:
            idx = np.asarray(sample_subset, dtype=np.intp)
            if idx.size == 0:
                raise ValueError("sample_subset is empty")
            if idx.min() < 0 or idx.max() >= n:
                raise ValueError("sample_subset index out of range")
            X = X[:, idx]
            y = np.asarray(y)[idx]
        count = X.shape[1]
        coef = self.loss.second_derivative(X.T @ w, y)
        return np.asarray(X @ (coef * (X.T @ u))).ravel() / count + self.lam * u

    def hessian_dense(self, X, y, w):
        """Explicit d x d Hessian; for small problems and test oracles only."""
        d, n = _check_dims(X, y, w)
        Xd = X.toarray() if hasattr(X, "toarray") else np.asarray(X)
        coef = self.loss.second_derivative(Xd.T @ w, y)
        return (Xd * coef) @ Xd.T / n + self.lam * np.eye(d)


def full_gradient(obj, X, y, w):
    return obj.gradient(X, y, w)


def hessian_vec(obj, X, y, w, u, sample_subset=None):
    return obj.hessian_vec(X, y, w, u, sample_subset)
