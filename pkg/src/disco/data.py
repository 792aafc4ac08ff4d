"""libsvm parsing and sample/feature partitioning of a d x n data matrix."""
from __future__ import annotations

import bz2
import enum
import gzip
import io
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class LibsvmError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyFileError(LibsvmError):
    pass


class MalformedLineError(LibsvmError):
    pass


class NonAscendingIndexError(LibsvmError):
    pass


@dataclass
class SparseDataset:
    """Labelled samples stored as a CSC matrix with features as rows."""

    X: sp.csc_matrix  # d x n
    y: np.ndarray

    def __post_init__(self):
        self.X = sp.csc_matrix(self.X, dtype=float)
        self.X.sort_indices()
        self.y = np.asarray(self.y, dtype=float)
        if self.y.shape != (self.X.shape[1],):
            raise ValueError("label count does not match sample count")

    @classmethod
    def from_dense(cls, X, y):
        return cls(sp.csc_matrix(np.asarray(X, dtype=float)), y)

    @property
    def d(self):
        return self.X.shape[0]

    @property
    def n(self):
        return self.X.shape[1]

    @property
    def nnz(self):
        return self.X.nnz


def parse_libsvm(stream, n_features=None):
    """Parse ``label idx:val ...`` lines with 1-based ascending indices.

    ``stream`` is any iterable of text lines. Blank lines are skipped.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    labels = []
    rows, cols, vals = [], [], []
    d = 0
    for lineno, line in enumerate(stream, start=1):
        parts = line.split()
        if not parts:
            continue
        try:
            label = float(parts[0])
        except ValueError:
            raise MalformedLineError(f"bad label {parts[0]!r}", lineno) from None
        sample = len(labels)
        prev = 0
        for tok in parts[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise MalformedLineError(f"expected idx:val, got {tok!r}", lineno)
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise MalformedLineError(f"bad pair {tok!r}", lineno) from None
            if idx < 1:
                raise MalformedLineError(f"index {idx} is not 1-based", lineno)
            if idx <= prev:
                raise NonAscendingIndexError(f"index {idx} after {prev}", lineno)
            prev = idx
            rows.append(idx - 1)
            cols.append(sample)
            vals.append(val)
        d = max(d, prev)
        labels.append(label)
    if not labels:
        raise EmptyFileError("no samples in input")
    if n_features is not None:
        if n_features < d:
            raise LibsvmError(f"feature index {d} exceeds n_features={n_features}")
        d = n_features
    X = sp.csc_matrix((vals, (rows, cols)), shape=(d, len(labels)))
    return SparseDataset(X, np.array(labels))


_OPENERS = {".gz": gzip.open, ".bz2": bz2.open}


def _open_text(path, mode="rt"):
    path = os.fspath(path)
    opener = _OPENERS.get(os.path.splitext(path)[1], open)
    return opener(path, mode)


def load_libsvm(path, n_features=None):
    with _open_text(path) as fh:
        return parse_libsvm(fh, n_features=n_features)


def write_libsvm(ds, path):
    X = ds.X.tocsc()
    with _open_text(path, "wt") as fh:
        for i in range(ds.n):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            pairs = " ".join(f"{j + 1}:{float(v)!r}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi]))
            label = ds.y[i]
            label = int(label) if float(label).is_integer() else repr(float(label))
            fh.write(f"{label} {pairs}\n" if pairs else f"{label}\n")


class PartitionMode(enum.Enum):
    BY_SAMPLES = "samples"
    BY_FEATURES = "features"


def block_boundaries(size, m):
    """Offsets of m contiguous blocks whose sizes differ by at most one."""
    if m < 1:
        raise ValueError("need at least one block")
    if m > size:
        raise ValueError(f"cannot split {size} indices into {m} nonempty blocks")
    base, extra = divmod(size, m)
    sizes = [base + 1] * extra + [base] * (m - extra)
    return np.concatenate([[0], np.cumsum(sizes)]).astype(int)


@dataclass(frozen=True)
class DatasetShard:
    node_id: int
    mode: PartitionMode
    X: sp.csc_matrix  # d x n_j (samples) or d_j x n (features), local indexing
    y: np.ndarray  # local labels (samples) or all labels (features)
    offset: int  # global index of the first local sample / feature
    n: int  # global sample count
    d: int  # global feature count

    @property
    def size(self):
        return self.X.shape[1] if self.mode is PartitionMode.BY_SAMPLES else self.X.shape[0]


def partition(ds, m, mode):
    mode = PartitionMode(mode)
    if mode is PartitionMode.BY_SAMPLES:
        bounds = block_boundaries(ds.n, m)
        X = ds.X.tocsc()
        return [
            DatasetShard(j, mode, X[:, lo:hi].tocsc(), ds.y[lo:hi].copy(), int(lo), ds.n, ds.d)
            for j, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:]))
        ]
    bounds = block_boundaries(ds.d, m)
    Xr = ds.X.tocsr()
    return [
        DatasetShard(j, mode, Xr[lo:hi, :].tocsc(), ds.y.copy(), int(lo), ds.n, ds.d)
        for j, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:]))
    ]


def reassemble(shards):
    shards = sorted(shards, key=lambda s: s.node_id)
    if shards[0].mode is PartitionMode.BY_SAMPLES:
        X = sp.hstack([s.X for s in shards], format="csc")
        y = np.concatenate([s.y for s in shards])
    else:
        X = sp.vstack([s.X for s in shards], format="csc")
        y = shards[0].y.copy()
    return SparseDataset(X, y)
