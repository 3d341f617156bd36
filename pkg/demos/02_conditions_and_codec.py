"""Condition vectors and the spectrogram codec.

A condition is a label embedding next to a visual block. The visual block
is empty (label only), the mean of a subcategory's images, or its prototype
image. The codec squeezes log-mel patches into a small Gaussian latent.
"""
import numpy as np

from sonolab.codec import decode, encode, fit_codec, patchify
from sonolab.conditions import LabelVocab, VisualRegistry, fuse_average, fuse_prototype, label_only
from sonolab.dsp import AudioClip, mel_spectrogram, stft
from sonolab.synth import synth_clip

rng = np.random.default_rng(1)
vocab = LabelVocab.create(["bark", "rain"], dim=4, seed=0)
reg = VisualRegistry(dim=3)
for i, v in enumerate(rng.standard_normal((3, 3))):
    reg.add("bark", 0, f"img{i}", v, prototype=(i == 0))

for cond in (label_only(vocab, "bark", 3), fuse_average(vocab, reg, "bark", 0), fuse_prototype(vocab, reg, "bark", 0)):
    print(f"{cond.kind:10s}", np.round(cond.values, 3))

# codec: reconstruction error falls as the latent width D grows
mels = [mel_spectrogram(stft(AudioClip(synth_clip("rain", m, rng), 22050)), 40, 0, 11025).values
        for m in (0, 1) * 6]
for D in (2, 4, 8, 16):
    params = fit_codec([patchify(m, 2) for m in mels], D=D, c=2)
    err = np.mean([np.mean((decode(encode(m, params).mu, params, m.shape[1]) - m) ** 2) for m in mels])
    print(f"D={D:2d}  mean squared log-mel error {err:.4f}")
