"""Conditional DDPM over flattened latent vectors.

Timesteps are 1-based: ``n = 1..N``; array index ``n - 1`` holds step n.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conditions import LabelVocab
from .fileformats import read_binary, write_binary
from .nn import MLP, Adam

TIME_EMBED_DIM = 32


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ValueError("beta must be a non-empty vector")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise ValueError("every beta must lie in (0, 1)")
        if np.any(np.diff(beta) <= 0):
            raise ValueError("beta must be strictly increasing")
        object.__setattr__(self, "beta", beta)

    @property
    def N(self) -> int:
        return self.beta.size

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.beta

    @property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(self.alpha)

    @property
    def snr(self) -> np.ndarray:
        ab = self.alpha_bar
        return ab / (1.0 - ab)

    def _check(self, n):
        n = np.asarray(n)
        if np.any(n < 1) or np.any(n > self.N):
            raise ValueError(f"timestep must be in [1, {self.N}]")
        return n


def make_schedule(N: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02,
                  kind: str = "linear") -> NoiseSchedule:
    if kind != "linear":
        raise ValueError(f"unsupported schedule kind {kind!r}")
    if N < 1:
        raise ValueError("N must be at least 1")
    if not 0 < beta_start < beta_end < 1:
        raise ValueError("need 0 < beta_start < beta_end < 1")
    return NoiseSchedule(np.linspace(beta_start, beta_end, N))


def desk_schedule(N: int = 50) -> NoiseSchedule:
    """Short linear schedule with the default schedule's total noise, betas scaled by 1000/N.

    Only valid for ``N > 20``; shorter chains would need betas of 1 or more.
    """
    scale = 1000.0 / N
    return make_schedule(N, 1e-4 * scale, 0.02 * scale)


def q_sample(P0, n, eps, schedule: NoiseSchedule):
    """Closed-form forward marginal ``sqrt(abar_n) P0 + sqrt(1 - abar_n) eps``.

    ``n`` may be a scalar or one timestep per row of ``P0``.
    """
    n = schedule._check(n)
    ab = schedule.alpha_bar[n - 1]
    P0 = np.asarray(P0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != P0.shape:
        raise ValueError("eps must have the shape of P0")
    if np.ndim(ab) and P0.ndim > 1:
        ab = ab.reshape((-1,) + (1,) * (P0.ndim - 1))
    return np.sqrt(ab) * P0 + np.sqrt(1.0 - ab) * eps


def snr_weight(n, schedule: NoiseSchedule, gamma: float = 5.0):
    """Min-SNR-gamma weight for epsilon prediction: ``min(snr, gamma) / snr``."""
    n = schedule._check(n)
    snr = schedule.snr[n - 1]
    return np.minimum(snr, gamma) / snr


def timestep_embedding(n, dim: int = TIME_EMBED_DIM):
    n = np.atleast_1d(np.asarray(n, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = n[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class Denoiser:
    """Noise estimator over ``[latent, timestep embedding, condition]``.

    Calling ``model(x, n, cond)`` returns the predicted noise for a latent
    batch ``x`` at timestep(s) ``n``.

    With a ``schedule`` given, the output gains the fixed skip term
    ``sqrt(1 - abar_n) x``, the exact noise estimate for unit-Gaussian
    data, so the network only learns the residual. Without one it is the
    plain dense network.
    """

    def __init__(self, latent_dim, cond_dim, hidden=(256, 256, 256), seed=0, params=None,
                 schedule: NoiseSchedule | None = None):
        self.latent_dim = int(latent_dim)
        self.cond_dim = int(cond_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.schedule = schedule
        sizes = (self.latent_dim + TIME_EMBED_DIM + self.cond_dim,) + self.hidden + (self.latent_dim,)
        self.mlp = MLP(sizes, seed=seed, params=params)

    @property
    def params(self):
        return self.mlp.params

    def _inputs(self, x, n, cond):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        B = x.shape[0]
        if x.shape[1] != self.latent_dim:
            raise ValueError(f"latent dim {x.shape[1]} != {self.latent_dim}")
        cond = np.asarray(cond, dtype=np.float64)
        cond = np.broadcast_to(cond, (B, self.cond_dim)) if cond.ndim < 2 else cond
        if cond.shape != (B, self.cond_dim):
            raise ValueError(f"condition shape {cond.shape} != ({B}, {self.cond_dim})")
        n = np.broadcast_to(np.asarray(n), (B,))
        return np.concatenate([x, timestep_embedding(n), cond], axis=1)

    def _skip(self, x, n):
        if self.schedule is None:
            return 0.0
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n = np.broadcast_to(np.asarray(self.schedule._check(n)), (x.shape[0],))
        return np.sqrt(1.0 - self.schedule.alpha_bar[n - 1])[:, None] * x

    def __call__(self, x, n, cond):
        single = np.ndim(x) == 1
        out = self.mlp.forward(self._inputs(x, n, cond)) + self._skip(x, n)
        return out[0] if single else out

    def forward_cached(self, x, n, cond):
        out, cache = self.mlp.forward(self._inputs(x, n, cond), cache=True)
        return out + self._skip(x, n), cache

    def backward(self, grad_out, cache):
        """Parameter grads and the gradient w.r.t. the condition block."""
        grads, g_in = self.mlp.backward(grad_out, cache)
        return grads, g_in[:, self.latent_dim + TIME_EMBED_DIM:]


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    p_uncond: float = 0.1
    seed: int = 0
    guidance: float = 2.0
    gamma: float = 5.0
    weighted: bool = True

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0 <= self.p_uncond < 1:
            raise ValueError("p_uncond must lie in [0, 1)")
        if self.guidance < 0:
            raise ValueError("guidance scale must be non-negative")


@dataclass
class LatentDataset:
    """Training pairs: latent rows with a label index and a visual block each.

    ``visuals`` may be an ``(n, d_v)`` array, or a callable
    ``visuals(rng, idx) -> (len(idx), d_v)`` that draws a visual block per
    example each time a batch is formed.
    """
    latents: np.ndarray
    labels: np.ndarray
    visuals: object
    visual_dim: int = field(init=False)

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.latents.ndim != 2 or self.latents.shape[0] == 0:
            raise ValueError("dataset is empty")
        if self.labels.shape != (self.latents.shape[0],):
            raise ValueError("labels must align with latents")
        if callable(self.visuals):
            self.visual_dim = int(self.visuals(np.random.default_rng(0), np.arange(1)).shape[1])
        else:
            self.visuals = np.asarray(self.visuals, dtype=np.float64)
            if self.visuals.shape[0] != self.latents.shape[0]:
                raise ValueError("visual blocks must align with latents")
            self.visual_dim = self.visuals.shape[1]

    def __len__(self):
        return self.latents.shape[0]

    def visual_batch(self, rng, idx):
        if callable(self.visuals):
            return np.asarray(self.visuals(rng, idx), dtype=np.float64)
        return self.visuals[idx]


def build_conditions(vocab: LabelVocab, labels, visuals, drop):
    """Condition rows: ``[label_emb, visual]`` or ``[null_emb, 0]`` where ``drop``."""
    lab = np.where(drop[:, None], vocab.null[None, :], vocab.table[labels])
    vis = np.where(drop[:, None], 0.0, visuals)
    return np.concatenate([lab, vis], axis=1)


def loss_and_grads(model: Denoiser, vocab: LabelVocab, P0, labels, visuals, n, eps, drop,
                   schedule: NoiseSchedule, gamma=5.0, weighted=True):
    """Weighted noise-estimation loss and gradients for every trainable array.

    Returns ``(loss, grads)`` where ``grads`` covers the MLP weights plus
    ``label_table`` and ``null_label``.
    """
    B = P0.shape[0]
    cond = build_conditions(vocab, labels, visuals, drop)
    Pn = q_sample(P0, n, eps, schedule)
    pred, cache = model.forward_cached(Pn, n, cond)
    lam = snr_weight(n, schedule, gamma) if weighted else np.ones(B)
    resid = pred - eps
    per = (resid * resid).sum(axis=1)
    loss = float(np.mean(lam * per))
    g_out = (2.0 / B) * lam[:, None] * resid
    grads, g_cond = model.backward(g_out, cache)
    g_lab = g_cond[:, :vocab.dim]
    table_grad = np.zeros_like(vocab.table)
    keep = ~drop
    np.add.at(table_grad, labels[keep], g_lab[keep])
    grads["label_table"] = table_grad
    grads["null_label"] = g_lab[drop].sum(axis=0) if drop.any() else np.zeros_like(vocab.null)
    return loss, grads


def trainable(model: Denoiser, vocab: LabelVocab):
    """Name -> array view over everything the optimizer updates."""
    return {**model.params, "label_table": vocab.table, "null_label": vocab.null}


def train_step(model: Denoiser, vocab: LabelVocab, batch, schedule: NoiseSchedule,
               config: TrainConfig, rng: np.random.Generator, optimizer: Adam) -> float:
    """One stochastic step on ``batch = (P0, labels, visuals)``; updates in place and returns the loss."""
    P0, labels, visuals = batch
    B = P0.shape[0]
    n = rng.integers(1, schedule.N + 1, size=B)
    eps = rng.standard_normal(P0.shape)
    drop = rng.random(B) < config.p_uncond
    loss, grads = loss_and_grads(model, vocab, P0, labels, visuals, n, eps, drop, schedule,
                                 config.gamma, config.weighted)
    if not np.isfinite(loss):
        raise NonFiniteLossError(
            f"non-finite loss {loss} at step {optimizer.t + 1} "
            f"(max |P0|={np.abs(P0).max():.3g}, timesteps {n.min()}..{n.max()})"
        )
    optimizer.step(trainable(model, vocab), grads)
    return loss


@dataclass
class TrainResult:
    model: Denoiser
    vocab: LabelVocab
    loss_trace: list  # (epoch, batch, loss)
    best_epoch: int


def train(dataset: LatentDataset, schedule: NoiseSchedule, config: TrainConfig, vocab: LabelVocab,
          hidden=(256, 256, 256), model: Denoiser | None = None, smoothing: float = 0.9,
          gaussian_skip: bool = False) -> TrainResult:
    """Epoch loop over seeded shuffles; keeps the parameters with the lowest smoothed loss.

    The smoothed loss is an exponential moving average of batch losses,
    compared at the end of each epoch.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(config.seed)
    vocab = vocab.copy()
    if model is None:
        model = Denoiser(dataset.latents.shape[1], vocab.dim + dataset.visual_dim, hidden,
                         seed=int(rng.integers(2 ** 31)), schedule=schedule if gaussian_skip else None)
    opt = Adam(config.lr, config.beta1, config.beta2, config.adam_eps)
    trace = []
    best = (np.inf, 0, _snapshot(model, vocab))
    ema = None
    n = len(dataset)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            batch = (dataset.latents[idx], dataset.labels[idx], dataset.visual_batch(rng, idx))
            loss = train_step(model, vocab, batch, schedule, config, rng, opt)
            trace.append((epoch, b, loss))
            ema = loss if ema is None else smoothing * ema + (1.0 - smoothing) * loss
        if ema < best[0]:
            best = (ema, epoch + 1, _snapshot(model, vocab))
    _, best_epoch, (mlp_params, table, null) = best
    model.mlp.params = mlp_params
    vocab = LabelVocab(vocab.labels, table, null)
    return TrainResult(model, vocab, trace, best_epoch)


def _snapshot(model, vocab):
    return ({k: v.copy() for k, v in model.params.items()}, vocab.table.copy(), vocab.null.copy())


def cfg_epsilon(eps_cond, eps_uncond, w):
    """Guided noise ``eps_u + w (eps_c - eps_u)``.

    The endpoints are returned as-is so ``w = 1`` gives ``eps_cond`` and
    ``w = 0`` gives ``eps_uncond`` bit for bit; equal branches give that
    branch for any ``w``.
    """
    if w < 0:
        raise ValueError("guidance scale must be non-negative")
    eps_cond, eps_uncond = np.asarray(eps_cond), np.asarray(eps_uncond)
    if w == 1.0:
        return eps_cond
    if w == 0.0:
        return eps_uncond
    return eps_uncond + w * (eps_cond - eps_uncond)


def ddpm_sample(model, cond, uncond=None, w: float = 1.0, schedule: NoiseSchedule | None = None,
                seed=0, dim: int | None = None):
    """Ancestral sampling with classifier-free guidance.

    ``cond`` is one condition vector or a batch ``(B, c)``; ``seed`` is an
    int or one int per batch row, and each row draws its noise from its own
    generator, so a row's result does not depend on the rest of the batch.
    At ``w == 0`` the conditional branch is skipped, at ``w == 1`` the
    unconditional one.
    """
    if schedule is None:
        raise ValueError("a noise schedule is required")
    if w < 0:
        raise ValueError("guidance scale must be non-negative")
    dim = getattr(model, "latent_dim", dim)
    if dim is None:
        raise ValueError("latent dimension unknown; pass dim")
    cond = np.asarray(cond, dtype=np.float64)
    single = cond.ndim == 1
    cond = np.atleast_2d(cond)
    B = cond.shape[0]
    seeds = np.broadcast_to(np.asarray(seed), (B,))
    rngs = [np.random.default_rng(int(s)) for s in seeds]

    def noise():
        return np.stack([r.standard_normal(dim) for r in rngs])

    if w != 1.0:
        if uncond is None:
            raise ValueError("unconditional (null) condition needed for w != 1")
        uncond = np.broadcast_to(np.asarray(uncond, dtype=np.float64), cond.shape)
    beta, alpha, ab = schedule.beta, schedule.alpha, schedule.alpha_bar
    x = noise()
    for n in range(schedule.N, 0, -1):
        if w == 0.0:
            eps = model(x, n, uncond)
        elif w == 1.0:
            eps = model(x, n, cond)
        else:
            eps = cfg_epsilon(model(x, n, cond), model(x, n, uncond), w)
        i = n - 1
        mean = (x - beta[i] / np.sqrt(1.0 - ab[i]) * eps) / np.sqrt(alpha[i])
        if n > 1:
            var = beta[i] * (1.0 - ab[i - 1]) / (1.0 - ab[i])
            x = mean + np.sqrt(var) * noise()
        else:
            x = mean
    return x[0] if single else x


def save_checkpoint(path, model: Denoiser, vocab: LabelVocab, extra=None, meta=None):
    arrays = dict(model.params)
    arrays["label_table"] = vocab.table
    arrays["null_label"] = vocab.null
    if model.schedule is not None:
        arrays["skip_beta"] = model.schedule.beta
    for k, v in (extra or {}).items():
        arrays[f"extra:{k}"] = v
    meta = dict(meta or {})
    meta.update({"latent_dim": model.latent_dim, "cond_dim": model.cond_dim,
                 "hidden": list(model.hidden), "labels": list(vocab.labels)})
    write_binary(path, "SLD1", arrays, meta)


def load_checkpoint(path):
    """Return ``(model, vocab, extra, meta)``."""
    arrays, meta = read_binary(path, "SLD1")
    mlp = {k: v for k, v in arrays.items() if k[0] in "Wb" and k[1:].isdigit()}
    skip = NoiseSchedule(arrays["skip_beta"]) if "skip_beta" in arrays else None
    model = Denoiser(meta["latent_dim"], meta["cond_dim"], meta["hidden"], params=mlp, schedule=skip)
    vocab = LabelVocab(tuple(meta["labels"]), arrays["label_table"], arrays["null_label"])
    extra = {k[6:]: v for k, v in arrays.items() if k.startswith("extra:")}
    return model, vocab, extra, meta
