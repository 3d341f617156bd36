"""Symmetric eigensolver used by clustering, the latent codec and FAD."""
from __future__ import annotations

import numpy as np


class ConvergenceError(RuntimeError):
    pass


def _round_robin(m: int):
    """Yield m-1 rounds of m/2 disjoint pairs covering every pair once (m even)."""
    players = list(range(m))
    for _ in range(m - 1):
        yield [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        players = [players[0], players[-1]] + players[1:-1]


def _pair_schedule(n: int):
    m = n + (n % 2)
    rounds = []
    for pairs in _round_robin(m):
        pq = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        if pq:
            arr = np.array(pq, dtype=np.intp)
            rounds.append((arr[:, 0], arr[:, 1]))
    return rounds


def eig_sym(matrix, tol: float = 1e-10, max_sweeps: int = 64):
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, in round-robin order so
    that the n/2 rotations of one round touch disjoint rows and can be
    applied together. Iteration stops once the largest off-diagonal entry
    is at most ``tol`` times the Frobenius norm of the input.

    Returns
    -------
    (eigenvalues, eigenvectors)
        Eigenvalues ascending; eigenvectors as orthonormal columns.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError("expected a non-empty square matrix")
    norm = np.linalg.norm(a)
    if not np.isfinite(norm):
        raise ValueError("matrix has non-finite entries")
    if np.linalg.norm(a - a.T) > 1e-12 * max(norm, np.finfo(float).tiny):
        raise ValueError("matrix is not symmetric")
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    threshold = tol * norm
    rounds = _pair_schedule(n)
    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps + 1):
        if np.max(np.abs(a[off_mask])) <= threshold:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = np.abs(apq) > 0.0
            if not active.any():
                continue
            app, aqq = a[p, p], a[q, q]
            theta = np.divide(aqq - app, 2.0 * apq, out=np.zeros_like(apq), where=active)
            t = np.where(theta >= 0.0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            ap, aq = a[:, p], a[:, q]
            a[:, p], a[:, q] = c * ap - s * aq, s * ap + c * aq
            ap, aq = a[p, :], a[q, :]
            a[p, :], a[q, :] = c[:, None] * ap - s[:, None] * aq, s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p], v[:, q]
            v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
    else:
        raise ConvergenceError(f"Jacobi iteration did not converge within {max_sweeps} sweeps")
    w = a.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def psd_sqrt(matrix, clamp: float = 1e-8):
    """Symmetric square root of a PSD matrix.

    Eigenvalues down to ``-clamp`` (relative to the largest magnitude) are
    treated as zero; anything more negative raises ``ValueError``.
    """
    w, v = eig_sym(matrix)
    scale = max(1.0, float(np.max(np.abs(w))))
    if w.min() < -clamp * scale:
        raise ValueError(f"matrix is not positive semi-definite (eigenvalue {w.min():.3g})")
    w = np.maximum(w, 0.0)
    return (v * np.sqrt(w)) @ v.T
