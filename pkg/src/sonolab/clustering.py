"""Spectral clustering of a category's clips into fine-grained subcategories."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .fileformats import FormatError, read_jsonl, write_jsonl
from .linalg import eig_sym

K_MIN, K_MAX = 2, 4


@dataclass
class SubcategoryAssignment:
    category: str
    members: dict = field(default_factory=dict)  # clip id -> subcategory index
    K: int = 0

    def __post_init__(self):
        if self.members:
            used = set(self.members.values())
            if used != set(range(self.K)):
                raise ValueError(f"subcategories {sorted(used)} do not cover 0..{self.K - 1}")

    def labels(self, ids):
        return np.array([self.members[i] for i in ids], dtype=int)


class KMeansResult(NamedTuple):
    labels: np.ndarray
    centers: np.ndarray
    inertia_trace: list


def standardize(features):
    """Per-dimension z-score with population std; constant dimensions map to 0."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least 2 feature vectors")
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    out = np.zeros_like(x)
    ok = sd > 1e-12 * np.maximum(1.0, np.abs(mu))
    out[:, ok] = (x[:, ok] - mu[ok]) / sd[ok]
    return out


def pairwise_sq_dists(x, y=None):
    """Squared Euclidean distances from explicit differences (exact zeros for equal rows)."""
    x = np.asarray(x, dtype=np.float64)
    y = x if y is None else np.asarray(y, dtype=np.float64)
    out = np.empty((x.shape[0], y.shape[0]))
    step = max(1, 2 ** 22 // max(1, y.size))
    for s in range(0, x.shape[0], step):
        diff = x[s:s + step, None, :] - y[None, :, :]
        out[s:s + step] = (diff * diff).sum(axis=-1)
    return out


def _bandwidth(d, method):
    n = d.shape[0]
    pairwise = d[np.triu_indices(n, k=1)]
    if method == "median":
        return float(np.median(pairwise))
    if method == "local":
        # median distance to the k-th nearest neighbour (column 0 is self)
        k = min(n - 1, max(2, int(np.sqrt(n))))
        sigma = float(np.median(np.sort(d, axis=1)[:, k]))
        return sigma if sigma > 0.0 else float(np.median(pairwise))
    raise ValueError(f"unknown bandwidth method {method!r}")


def build_affinity(features, sigma="local"):
    """Gaussian kernel affinity ``exp(-d^2 / (2 sigma^2))``.

    ``sigma`` may be a positive number, ``"median"`` (median pairwise
    distance) or ``"local"`` (median distance to the ``max(2, floor(sqrt(n)))``-th
    nearest neighbour). Returns ``(A, sigma)``.
    """
    x = np.asarray(features, dtype=np.float64)
    d2 = pairwise_sq_dists(x)
    np.fill_diagonal(d2, 0.0)
    if isinstance(sigma, str):
        sigma = _bandwidth(np.sqrt(d2), sigma)
        if sigma <= 0.0:
            raise ValueError("all points identical: bandwidth is 0")
    sigma = float(sigma)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    a = np.exp(-d2 / (2.0 * sigma * sigma))
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 1.0)
    return a, sigma


def normalized_laplacian(affinity):
    a = np.asarray(affinity, dtype=np.float64)
    deg = a.sum(axis=1)
    if np.any(deg <= 0):
        raise ValueError("affinity has a zero row sum")
    inv_sqrt = 1.0 / np.sqrt(deg)
    lap = np.eye(a.shape[0]) - inv_sqrt[:, None] * a * inv_sqrt[None, :]
    return 0.5 * (lap + lap.T)


def choose_k(eigenvalues, kmin: int = K_MIN, kmax: int = K_MAX) -> int:
    """Largest eigengap ``lambda_{k+1} - lambda_k`` over ``k`` in [kmin, kmax]; ties go to smaller k."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if lam.size < kmax + 1:
        raise ValueError(f"need at least {kmax + 1} eigenvalues, got {lam.size}")
    ks = np.arange(kmin, kmax + 1)
    gaps = lam[ks] - lam[ks - 1]
    return int(ks[np.argmax(gaps)])


def _kmeanspp(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = x[idx]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def kmeans(rows, K: int, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm from a seeded k-means++ start.

    An emptied cluster is moved onto the point farthest from its current
    center. ``inertia_trace`` holds the within-cluster sum of squares after
    each assignment step.
    """
    x = np.asarray(rows, dtype=np.float64)
    n = x.shape[0]
    if K < 1 or n < K:
        raise ValueError(f"cannot form {K} clusters from {n} points")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(x, K, rng)
    labels = None
    trace = []
    for _ in range(max_iter):
        d2 = pairwise_sq_dists(x, centers)
        new = np.argmin(d2, axis=1)
        best = d2[np.arange(n), new]
        for j in range(K):
            if not np.any(new == j):
                far = int(np.argmax(best))
                centers[j] = x[far]
                new[far] = j
                best[far] = 0.0
        trace.append(float(((x - centers[new]) ** 2).sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(K):
            centers[j] = x[labels == j].mean(axis=0)
    return KMeansResult(labels, centers, trace)


def spectral_embedding(laplacian_vectors, K):
    """Row-normalized first-K eigenvectors; zero rows become the first basis vector."""
    emb = np.array(laplacian_vectors[:, :K], dtype=np.float64)
    norms = np.linalg.norm(emb, axis=1)
    zero = norms <= 1e-300
    emb[~zero] /= norms[~zero, None]
    emb[zero] = 0.0
    emb[zero, 0] = 1.0
    return emb


def _canonical(labels):
    """Relabel clusters in order of first appearance."""
    mapping = {}
    out = np.empty(len(labels), dtype=int)
    for i, lab in enumerate(labels):
        out[i] = mapping.setdefault(int(lab), len(mapping))
    return out


def cluster_category(features, seed: int = 0, ids=None, category: str = "",
                     kmin: int = K_MIN, kmax: int = K_MAX, sigma="local",
                     return_details: bool = False):
    """Split one category's clip features into ``kmin..kmax`` subcategories.

    Standardize, Gaussian affinity, symmetric normalized Laplacian, eigengap
    choice of K, row-normalized spectral embedding, then k-means. Cluster
    indices are canonicalized by first appearance in input order.
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if n < kmax + 1:
        raise ValueError(f"category {category!r} too small: {n} clips, need at least {kmax + 1}")
    ids = [str(i) for i in range(n)] if ids is None else list(ids)
    z = standardize(x)
    if np.unique(z, axis=0).shape[0] < kmin:
        # duplicates only: every partition is equally good, split by position
        labels = np.arange(n) % kmin
        assignment = SubcategoryAssignment(category, dict(zip(ids, labels.tolist())), kmin)
        if return_details:
            return assignment, {"eigenvalues": np.zeros(n), "sigma": 0.0, "embedding": None}
        return assignment
    affinity, sigma = build_affinity(z, sigma)
    lap = normalized_laplacian(affinity)
    evals, evecs = eig_sym(lap)
    K = choose_k(evals, kmin, kmax)
    labels = None
    for k in range(K, kmin - 1, -1):
        emb = spectral_embedding(evecs, k)
        for attempt in range(3):
            res = kmeans(emb, k, seed=seed + attempt)
            if len(np.unique(res.labels)) == k:
                labels, K = res.labels, k
                break
        if labels is not None:
            break
    if labels is None:
        raise RuntimeError(f"could not form non-empty subcategories for {category!r}")
    labels = _canonical(labels)
    assignment = SubcategoryAssignment(category, dict(zip(ids, labels.tolist())), K)
    if return_details:
        return assignment, {"eigenvalues": evals, "sigma": sigma, "embedding": emb}
    return assignment


def save_assignments(path, assignments):
    """JSON-lines: one ``{category, clip_id, subcategory}`` row per clip, then ``{category, K}`` per category."""
    rows = []
    for cat in sorted(assignments):
        asg = assignments[cat]
        rows += [{"category": cat, "clip_id": cid, "subcategory": k} for cid, k in asg.members.items()]
    rows += [{"category": cat, "K": assignments[cat].K} for cat in sorted(assignments)]
    write_jsonl(path, rows)


def load_assignments(path):
    members, ks = {}, {}
    for rec in read_jsonl(path):
        if "clip_id" in rec:
            members.setdefault(rec["category"], {})[str(rec["clip_id"])] = int(rec["subcategory"])
        elif "K" in rec:
            ks[rec["category"]] = int(rec["K"])
        else:
            raise FormatError(f"{path}: unrecognized record {rec!r}")
    if set(members) != set(ks):
        raise FormatError(f"{path}: clip rows and summary records disagree on categories")
    return {cat: SubcategoryAssignment(cat, members[cat], ks[cat]) for cat in sorted(members)}
