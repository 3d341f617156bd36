"""A tiny conditional diffusion model and what the guidance scale does.

Two labels, data near -2 and +2. At w=0 the label is ignored, at w=1 we
get the plain conditional model, and larger w pushes samples harder
toward the labelled mode.
"""
import numpy as np

from sonolab.conditions import LabelVocab
from sonolab.diffusion import LatentDataset, TrainConfig, ddpm_sample, desk_schedule, train

rng = np.random.default_rng(0)
labels = rng.integers(0, 2, 400)
data = np.where(labels == 0, -2.0, 2.0)[:, None] + 0.3 * rng.standard_normal((400, 1))

sched = desk_schedule(50)
vocab = LabelVocab.create(["neg", "pos"], dim=4, seed=0)
# in a run this short the default 10% label dropout leaves the null branch
# under-trained (it drifts toward one mode), so drop half the labels here
res = train(LatentDataset(data, labels, np.zeros((400, 1))), sched,
            TrainConfig(epochs=60, batch_size=32, lr=2e-3, seed=0, p_uncond=0.5), vocab, hidden=(64, 64, 64), gaussian_skip=True)
print("best epoch:", res.best_epoch)

null = np.concatenate([res.vocab.null, [0.0]])
pos = np.concatenate([res.vocab.table[1], [0.0]])
for w in (0.0, 1.0, 3.0):
    x = ddpm_sample(res.model, np.tile(pos, (300, 1)), null, w=w, schedule=sched, seed=np.arange(300))
    print(f"w={w:.0f}: mean {x.mean():+.2f}, std {x.std():.2f}, share above 0 {np.mean(x > 0):.2f}")
