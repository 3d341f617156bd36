"""Discrete tokens and an autoregressive model over them.

Vector quantization turns latent vectors into codebook indices; the AR
model then learns which index tends to follow which.
"""
import numpy as np

from sonolab.ar import ArConfig, perplexity, sample_ar, train_ar
from sonolab.codec import fit_codebook, vq_decode, vq_encode

rng = np.random.default_rng(0)
centers = rng.standard_normal((4, 3)) * 3
pts = centers[rng.integers(0, 4, 200)] + 0.1 * rng.standard_normal((200, 3))
cb = fit_codebook(pts, 4, seed=0)
print("VQ mean squared error:", np.mean((vq_decode(vq_encode(pts, cb), cb) - pts) ** 2).round(4))

# sequences that cycle 0 -> 1 -> 2 -> 3 with a little noise
seqs = []
for _ in range(60):
    s = [int(rng.integers(0, 4))]
    for _ in range(15):
        s.append((s[-1] + 1) % 4 if rng.random() < 0.9 else int(rng.integers(0, 4)))
    seqs.append(s)
conds = np.zeros((60, 1))
model = train_ar(seqs, conds, 4, ArConfig(context=2, token_dim=4, hidden=16, epochs=60, lr=3e-3))
print(f"perplexity {perplexity(model, seqs, conds):.2f} (uniform would be 4.00)")
print("sample:", sample_ar(model, np.zeros(1), 12, seed=3))
