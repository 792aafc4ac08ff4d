"""Seeded synthetic datasets for demos and tests."""
import numpy as np
import scipy.sparse as sp

from .data import SparseDataset


def make_classification(n, d, seed=0, noise=0.1, density=None):
    """Binary +-1 labels from a noisy linear model; unit-norm samples.

    With ``density`` set the features are sparse with that fill fraction.
    """
    rng = np.random.default_rng(seed)
    if density is None:
        X = rng.standard_normal((d, n))
    else:
        X = sp.random(d, n, density=density, random_state=rng, data_rvs=rng.standard_normal).toarray()
    norms = np.linalg.norm(X, axis=0)
    X /= np.where(norms > 0, norms, 1.0)
    w_true = rng.standard_normal(d)
    score = X.T @ w_true * np.sqrt(d) + noise * rng.standard_normal(n) * np.sqrt(d)
    y = np.where(score >= 0, 1.0, -1.0)
    flip = rng.random(n) < noise
    y[flip] = -y[flip]
    return SparseDataset.from_dense(X, y)


def make_regression(n, d, seed=0, noise=0.1, label_scale=1.0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((d, n)) / np.sqrt(d)
    w_true = rng.standard_normal(d)
    y = label_scale * (X.T @ w_true + noise * rng.standard_normal(n))
    return SparseDataset.from_dense(X, y)


def make_text_like(n, d, nnz_per_sample=60, seed=0, zipf=1.1, noise=0.05):
    """Bag-of-words style data: Zipf feature frequencies, log-tf weights, unit rows.

    Shaped like news20 (many more features than samples) at desk scale.
    """
    rng = np.random.default_rng(seed)
    ranks = np.arange(1, d + 1, dtype=float)
    popularity = ranks ** (-zipf)
    popularity /= popularity.sum()
    perm = rng.permutation(d)
    rows, cols, vals = [], [], []
    for i in range(n):
        k = max(1, rng.poisson(nnz_per_sample))
        feats = np.unique(perm[rng.choice(d, size=k, p=popularity)])
        tf = 1.0 + np.log1p(rng.poisson(1.0, size=feats.size))
        tf /= np.linalg.norm(tf)
        rows.append(feats)
        cols.append(np.full(feats.size, i))
        vals.append(tf)
    X = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(d, n))
    w_true = rng.standard_normal(d)
    score = X.T @ w_true
    y = np.where(score >= np.median(score), 1.0, -1.0)
    flip = rng.random(n) < noise
    y[flip] = -y[flip]
    return SparseDataset(X, y)
