"""Quality (Frechet distance) and diversity (mean squared distance) metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .fileformats import read_embeddings
from .linalg import eig_sym, psd_sqrt

PSD_TOL = 1e-8


@dataclass(frozen=True)
class GaussianStats:
    mu: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if cov.shape != (mu.size, mu.size):
            raise ValueError("covariance shape does not match mean")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mu.size


def fit_gaussian(features, ridge: float = 1e-6) -> GaussianStats:
    """Sample mean and unbiased covariance plus ``ridge * trace/d`` on the diagonal."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n < 2:
        raise ValueError("need at least 2 vectors")
    mu = x.mean(axis=0)
    xc = x - mu
    cov = xc.T @ xc / (n - 1)
    cov = 0.5 * (cov + cov.T)
    cov += (ridge * np.trace(cov) / d) * np.eye(d)
    return GaussianStats(mu, cov)


def frechet_distance(g1: GaussianStats, g2: GaussianStats) -> float:
    """``|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)``.

    The trace of the matrix square root is the sum of square roots of the
    eigenvalues of the symmetric product ``S1^1/2 S2 S1^1/2``.
    """
    if g1.dim != g2.dim:
        raise ValueError(f"dimension mismatch: {g1.dim} vs {g2.dim}")
    s1 = psd_sqrt(g1.cov, PSD_TOL)
    inner = s1 @ g2.cov @ s1
    w, _ = eig_sym(0.5 * (inner + inner.T))
    scale = max(1.0, float(np.max(np.abs(w))))
    if w.min() < -PSD_TOL * scale:
        raise ValueError(f"covariance product is not PSD (eigenvalue {w.min():.3g})")
    tr_sqrt = float(np.sqrt(np.maximum(w, 0.0)).sum())
    diff = g1.mu - g2.mu
    d = float(diff @ diff + np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * tr_sqrt)
    total = float(diff @ diff + np.trace(g1.cov) + np.trace(g2.cov))
    if d < -PSD_TOL * max(1.0, total):
        raise ValueError(f"negative Frechet distance {d:.3g}")
    return max(d, 0.0)


def msd(features) -> float:
    """Mean over unordered pairs of squared Euclidean distance."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 vectors")
    total = 0.0
    for i in range(n - 1):
        diff = x[i + 1:] - x[i]
        total += float((diff * diff).sum())
    return 2.0 * total / (n * (n - 1))


def msd_external(embedding_file) -> float:
    """MSD over vectors from a ``sonolab-emb`` file (e.g. external audio embeddings)."""
    vectors = read_embeddings(embedding_file)
    if vectors.shape[0] < 2:
        raise ValueError(f"{embedding_file}: need at least 2 rows")
    return msd(vectors)


def write_report(path, rows):
    """CSV with columns ``metric, scope, value``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "scope", "value"])
        for metric, scope, value in rows:
            w.writerow([metric, scope, repr(float(value))])


def read_report(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["metric", "scope", "value"]:
            raise ValueError(f"{path}: unexpected header {header}")
        return [(m, s, float(v)) for m, s, v in reader]
