"""Synthetic corpus with planted subcategories, and a matching image pool.

Each category has two timbre modes (for example a low and a high tonal
family) so the acoustic clustering has a ground truth to recover. The
image pool stands in for manually retrieved pictures: every (category,
mode) gets a direction in embedding space and images are noisy mixtures
of that direction and the category centre, the most representative one
being the prototype.
"""
from __future__ import annotations

from collections import Counter
from pathlib import Path

import numpy as np

from .dsp import AudioClip
from .fileformats import read_jsonl, write_embeddings, write_jsonl
from .reconstruct import write_wav

CATEGORIES = ("bark", "footstep", "keyboard", "rain")
N_MODES = 2


def _band_noise(rng, n, sr, center, width):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sr)
    spec *= np.exp(-0.5 * ((f - center) / width) ** 2)
    x = np.fft.irfft(spec, n)
    return x / (np.abs(x).max() + 1e-12)


def _bursts(n, sr, rate, decay, rng, jitter=0.1):
    """Train of exponentially decaying envelopes at ``rate`` Hz."""
    env = np.zeros(n)
    t = np.arange(n) / sr
    start = rng.uniform(0.0, 1.0 / rate)
    while start < n / sr:
        on = t >= start
        env[on] += np.exp(-(t[on] - start) / decay)
        start += (1.0 + rng.uniform(-jitter, jitter)) / rate
    return np.minimum(env, 1.0)


def synth_clip(category: str, mode: int, rng, sample_rate=22050, duration=1.0) -> np.ndarray:
    n = int(round(sample_rate * duration))
    t = np.arange(n) / sample_rate
    j = lambda s: 1.0 + rng.uniform(-s, s)  # noqa: E731
    if category == "bark":
        f0 = (320.0 if mode == 0 else 900.0) * j(0.06)
        tone = sum(np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / h for h in range(1, 5))
        x = tone * _bursts(n, sample_rate, 3.0 * j(0.2), 0.12, rng)
    elif category == "footstep":
        center = (250.0 if mode == 0 else 2500.0) * j(0.08)
        x = _band_noise(rng, n, sample_rate, center, 0.4 * center) * _bursts(n, sample_rate, 2.0 * j(0.2), 0.05, rng)
    elif category == "keyboard":
        center = (1800.0 if mode == 0 else 5000.0) * j(0.08)
        rate = (8.0 if mode == 0 else 14.0) * j(0.15)
        x = _band_noise(rng, n, sample_rate, center, 0.3 * center) * _bursts(n, sample_rate, rate, 0.012, rng)
    elif category == "rain":
        center = (6000.0 if mode == 0 else 600.0) * j(0.08)
        x = _band_noise(rng, n, sample_rate, center, 0.5 * center)
        x *= 0.7 + 0.3 * _bursts(n, sample_rate, 20.0, 0.01, rng)
    else:
        raise ValueError(f"unknown category {category!r}")
    x = x + 0.01 * rng.standard_normal(n)
    return 0.8 * j(0.2) / 1.2 * x / (np.abs(x).max() + 1e-12)


def make_corpus(out_dir, seed: int = 0, per_mode: int = 25, categories=CATEGORIES,
                sample_rate=22050, duration=1.0):
    """Write WAV clips plus ``manifest.jsonl``; rows also carry the planted ``mode``."""
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for cat in categories:
        for mode in range(N_MODES):
            for i in range(per_mode):
                cid = f"{cat}_{mode}_{i:03d}"
                x = synth_clip(cat, mode, rng, sample_rate, duration)
                write_wav(AudioClip(x, sample_rate, cid), out / "audio" / f"{cid}.wav")
                rows.append({"id": cid, "path": f"audio/{cid}.wav", "category": cat, "mode": mode})
    write_jsonl(out / "manifest.jsonl", rows)
    return out / "manifest.jsonl"


def make_image_pool(out_dir, seed: int = 0, categories=CATEGORIES, n_images: int = 6, dim: int = 32,
                    noise: float = 0.15):
    """Image embeddings per (category, mode).

    Image ``j`` is ``r_j u_mode + (1 - r_j) u_cat + noise`` where ``u_cat``
    is the mean of the category's mode directions and ``r_j`` falls from 1
    (the prototype) to 0.2. Writes ``pool.jsonl`` and ``pool.emb``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows, vectors = [], []
    reps = np.linspace(1.0, 0.2, n_images)
    for cat in categories:
        dirs = rng.standard_normal((N_MODES, dim))
        centre = dirs.mean(axis=0)
        for mode in range(N_MODES):
            for j, r in enumerate(reps):
                v = r * dirs[mode] + (1.0 - r) * centre + noise * rng.standard_normal(dim)
                rows.append({"category": cat, "mode": mode, "image_id": f"{cat}_m{mode}_img{j}",
                             "row": len(vectors), "prototype": j == 0})
                vectors.append(v)
    write_jsonl(out / "pool.jsonl", rows)
    write_embeddings(out / "pool.emb", np.array(vectors))
    return out / "pool.jsonl", out / "pool.emb"


def allocate_images(assignments, modes, pool_manifest):
    """Map mode-level image pools onto discovered subcategories.

    ``assignments`` maps category -> SubcategoryAssignment and ``modes``
    maps clip id -> planted mode. Each subcategory takes the images of the
    majority mode among its members (ties to the lower mode). Returns visual
    manifest rows in the ``load_visual_embeddings`` format.
    """
    pool = read_jsonl(pool_manifest)
    rows = []
    for cat in sorted(assignments):
        asg = assignments[cat]
        for k in range(asg.K):
            counts = Counter(modes[cid] for cid, lab in asg.members.items() if lab == k)
            best = min(counts, key=lambda m: (-counts[m], m))
            for rec in pool:
                if rec["category"] == cat and rec["mode"] == best:
                    rows.append({"category": cat, "subcategory": k, "image_id": rec["image_id"],
                                 "row": rec["row"], "prototype": bool(rec.get("prototype", False))})
    return rows
