"""Patchwise linear-Gaussian latent codec and its VQ codebook.

The codec is closed-form probabilistic PCA over ``2^c x 2^c`` mel patches.
Encoding gives a posterior mean grid ``mu`` and posterior std grid
``sigma`` of shape ``(M/2^c, T/2^c, D/2)``; decoding maps a latent point
back onto the principal subspace, so ``decode(encode(x).mu)`` is the
orthogonal projection of ``x`` onto that subspace.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import kmeans
from .fileformats import read_binary, write_binary
from .linalg import eig_sym

EPS = 1e-12


@dataclass
class PatchGrid:
    patches: np.ndarray  # (M/b, T/b, b*b)
    c: int
    n_frames: int  # unpadded T

    @property
    def block(self) -> int:
        return 2 ** self.c


@dataclass
class CodecParams:
    mean: np.ndarray  # (p,)
    basis: np.ndarray  # W, (p, q)
    posterior_std: np.ndarray  # (q,)
    noise_var: float
    eigenvalues: np.ndarray  # covariance spectrum, descending
    c: int
    pad_value: float

    @property
    def latent_dim(self) -> int:
        return self.basis.shape[1]

    @property
    def D(self) -> int:
        return 2 * self.latent_dim

    def _posterior_scale(self):
        # W^T W is diagonal by construction: w_j^2
        w2 = (self.basis ** 2).sum(axis=0)
        return w2, w2 + self.noise_var


@dataclass
class GaussianLatent:
    mu: np.ndarray  # (M/b, T/b, q)
    sigma: np.ndarray
    n_frames: int


def patchify(mel, c: int, pad_value: float | None = None) -> PatchGrid:
    """Cut an ``(M, T)`` grid into ``2^c x 2^c`` patches, padding T at the end."""
    x = np.asarray(getattr(mel, "values", mel), dtype=np.float64)
    if pad_value is None:
        pad_value = float(np.log(getattr(mel, "floor", 1e-10)))
    b = 2 ** c
    M, T = x.shape
    if M % b:
        raise ValueError(f"n_mels={M} is not divisible by 2^c={b}")
    Tp = -(-T // b) * b
    if Tp != T:
        x = np.concatenate([x, np.full((M, Tp - T), pad_value)], axis=1)
    patches = x.reshape(M // b, b, Tp // b, b).transpose(0, 2, 1, 3).reshape(M // b, Tp // b, b * b)
    return PatchGrid(patches, c, T)


def unpatchify(grid: PatchGrid) -> np.ndarray:
    b = grid.block
    hm, ht, _ = grid.patches.shape
    x = grid.patches.reshape(hm, ht, b, b).transpose(0, 2, 1, 3).reshape(hm * b, ht * b)
    return x[:, :grid.n_frames]


def fit_codec(patches, D: int, c: int = 2, pad_value: float = float(np.log(1e-10))) -> CodecParams:
    """Maximum-likelihood PPCA on flattened patches.

    ``patches`` is an ``(n, p)`` array (or a list of PatchGrids). The basis
    columns are the top ``D/2`` covariance eigenvectors scaled by
    ``sqrt(max(lambda_j - v, eps))``, where ``v`` is the mean discarded
    eigenvalue (the noise variance).
    """
    if D % 2:
        raise ValueError("D must be even")
    x = _stack_patches(patches)
    n, p = x.shape
    q = D // 2
    if q > p:
        raise ValueError(f"D/2={q} exceeds patch dimension {p}")
    if n < q + 1:
        raise ValueError(f"need at least {q + 1} patches, got {n}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / n
    evals, evecs = eig_sym(cov)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    evals = np.maximum(evals, 0.0)
    noise = float(evals[q:].mean()) if q < p else 0.0
    noise = max(noise, EPS)
    scales = np.sqrt(np.maximum(evals[:q] - noise, EPS))
    basis = evecs[:, :q] * scales
    # signs fixed so the largest-magnitude entry of each column is positive
    flip = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(q)])
    # contiguous so a reloaded codec takes the same BLAS path and decodes bit-identically
    basis = np.ascontiguousarray(basis * np.where(flip == 0, 1.0, flip))
    w2 = scales ** 2
    post_std = np.sqrt(noise / (w2 + noise))
    return CodecParams(mean, basis, post_std, noise, evals, c, pad_value)


def _stack_patches(patches):
    if isinstance(patches, PatchGrid):
        patches = [patches]
    if isinstance(patches, (list, tuple)):
        return np.concatenate([g.patches.reshape(-1, g.patches.shape[-1]) for g in patches], axis=0)
    return np.asarray(patches, dtype=np.float64)


def encode(mel, params: CodecParams) -> GaussianLatent:
    grid = mel if isinstance(mel, PatchGrid) else patchify(mel, params.c, params.pad_value)
    if grid.patches.shape[-1] != params.mean.size:
        raise ValueError("patch dimension does not match the codec")
    w2, m = params._posterior_scale()
    mu = ((grid.patches - params.mean) @ params.basis) / m
    sigma = np.broadcast_to(params.posterior_std, mu.shape).copy()
    return GaussianLatent(mu, sigma, grid.n_frames)


def sample_latent(latent: GaussianLatent, seed: int = 0) -> np.ndarray:
    """Reparameterized draw ``mu + sigma * eps``."""
    rng = np.random.default_rng(seed)
    return latent.mu + latent.sigma * rng.standard_normal(latent.mu.shape)


def decode(z, params: CodecParams, n_frames: int | None = None) -> np.ndarray:
    """Map a latent grid ``(M/b, T/b, q)`` back to an ``(M, T)`` log-mel grid."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3 or z.shape[-1] != params.latent_dim:
        raise ValueError(f"latent grid must be (H, W, {params.latent_dim})")
    w2, m = params._posterior_scale()
    patches = (z * (m / w2)) @ params.basis.T + params.mean
    b = 2 ** params.c
    n_frames = z.shape[1] * b if n_frames is None else n_frames
    return unpatchify(PatchGrid(patches, params.c, n_frames))


def save_codec(path, params: CodecParams, meta=None):
    write_binary(path, "SLC1", {
        "mean": params.mean, "basis": params.basis, "posterior_std": params.posterior_std,
        "eigenvalues": params.eigenvalues,
        "scalars": np.array([params.noise_var, params.c, params.pad_value]),
    }, meta)


def load_codec(path):
    arrays, meta = read_binary(path, "SLC1")
    noise, c, pad = arrays["scalars"]
    return CodecParams(arrays["mean"], arrays["basis"], arrays["posterior_std"], float(noise),
                       arrays["eigenvalues"], int(c), float(pad)), meta


@dataclass
class Codebook:
    entries: np.ndarray  # (K_cb, q)

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def fit_codebook(latents, K_cb: int, seed: int = 0, max_iter: int = 100) -> Codebook:
    """k-means centroids over latent mean vectors (any array with last axis q)."""
    x = np.asarray(latents, dtype=np.float64)
    x = x.reshape(-1, x.shape[-1])
    if x.shape[0] < K_cb:
        raise ValueError(f"need at least {K_cb} latent vectors, got {x.shape[0]}")
    return Codebook(kmeans(x, K_cb, seed=seed, max_iter=max_iter).centers.copy())


def vq_encode(latent, codebook: Codebook) -> np.ndarray:
    """Nearest codebook entry per latent vector; ties go to the lowest index."""
    z = np.asarray(getattr(latent, "mu", latent), dtype=np.float64)
    flat = z.reshape(-1, z.shape[-1])
    out = np.empty(flat.shape[0], dtype=np.intp)
    step = max(1, 2 ** 22 // max(1, codebook.entries.size))
    for s in range(0, flat.shape[0], step):
        diff = flat[s:s + step, None, :] - codebook.entries[None, :, :]
        out[s:s + step] = np.argmin((diff * diff).sum(axis=-1), axis=1)
    return out.reshape(z.shape[:-1])


def vq_decode(tokens, codebook: Codebook) -> np.ndarray:
    return codebook.entries[np.asarray(tokens, dtype=np.intp)]


def save_codebook(path, codebook: Codebook, meta=None):
    write_binary(path, "SLB1", {"entries": codebook.entries}, meta)


def load_codebook(path):
    arrays, meta = read_binary(path, "SLB1")
    return Codebook(arrays["entries"]), meta
