"""Fixed-context conditional autoregressive model over VQ token sequences.

Each next token is predicted from the embeddings of the previous ``k``
tokens (left-padded with a BOS token) concatenated with a linear projection
of the condition vector, through one tanh hidden layer and a softmax.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fileformats import read_binary, write_binary
from .nn import Adam


@dataclass
class ArConfig:
    context: int = 8
    token_dim: int = 32
    hidden: int = 64
    epochs: int = 20
    batch_size: int = 256
    lr: float = 3e-3
    seed: int = 0


class ArModel:
    def __init__(self, vocab_size, cond_dim, context=8, token_dim=32, hidden=64, seed=0, params=None):
        self.vocab_size = int(vocab_size)
        self.cond_dim = int(cond_dim)
        self.context = int(context)
        self.token_dim = int(token_dim)
        self.hidden = int(hidden)
        if params is not None:
            self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
            return
        rng = np.random.default_rng(seed)
        d_in = (self.context + 1) * self.token_dim
        self.params = {
            "token_emb": 0.1 * rng.standard_normal((self.vocab_size + 1, self.token_dim)),
            "cond_W": rng.standard_normal((self.cond_dim, self.token_dim)) / np.sqrt(max(1, self.cond_dim)),
            "cond_b": np.zeros(self.token_dim),
            "W_h": rng.standard_normal((d_in, self.hidden)) / np.sqrt(d_in),
            "b_h": np.zeros(self.hidden),
            "W_o": rng.standard_normal((self.hidden, self.vocab_size)) / np.sqrt(self.hidden),
            "b_o": np.zeros(self.vocab_size),
        }

    @property
    def bos(self) -> int:
        return self.vocab_size

    def _forward(self, ctx, cond):
        p = self.params
        B = ctx.shape[0]
        emb = p["token_emb"][ctx].reshape(B, -1)
        proj = cond @ p["cond_W"] + p["cond_b"]
        x = np.concatenate([emb, proj], axis=1)
        h = np.tanh(x @ p["W_h"] + p["b_h"])
        logits = h @ p["W_o"] + p["b_o"]
        return logits, (ctx, cond, x, h)

    def logits(self, ctx, cond):
        ctx = np.atleast_2d(np.asarray(ctx, dtype=np.intp))
        cond = np.broadcast_to(np.asarray(cond, dtype=np.float64), (ctx.shape[0], self.cond_dim))
        return self._forward(ctx, cond)[0]

    def probs(self, ctx, cond):
        return softmax(self.logits(ctx, cond))

    def loss_and_grads(self, ctx, cond, targets):
        """Mean cross-entropy (nats) and gradients of every parameter."""
        p = self.params
        B = ctx.shape[0]
        logits, (ctx, cond, x, h) = self._forward(ctx, cond)
        logp = log_softmax(logits)
        loss = -float(logp[np.arange(B), targets].mean())
        g = np.exp(logp)
        g[np.arange(B), targets] -= 1.0
        g /= B
        grads = {"W_o": h.T @ g, "b_o": g.sum(axis=0)}
        gh = (g @ p["W_o"].T) * (1.0 - h * h)
        grads["W_h"] = x.T @ gh
        grads["b_h"] = gh.sum(axis=0)
        gx = gh @ p["W_h"].T
        k, d = self.context, self.token_dim
        g_emb = gx[:, :k * d].reshape(B * k, d)
        emb_grad = np.zeros_like(p["token_emb"])
        np.add.at(emb_grad, ctx.reshape(-1), g_emb)
        grads["token_emb"] = emb_grad
        g_proj = gx[:, k * d:]
        grads["cond_W"] = cond.T @ g_proj
        grads["cond_b"] = g_proj.sum(axis=0)
        return loss, grads


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def make_examples(sequences, conds, context, bos):
    """Flatten sequences into (context window, condition row, target) triples."""
    ctxs, cidx, targets = [], [], []
    for i, seq in enumerate(sequences):
        seq = np.asarray(seq, dtype=np.intp).ravel()
        padded = np.concatenate([np.full(context, bos, dtype=np.intp), seq])
        idx = np.arange(seq.size)[:, None] + np.arange(context)[None, :]
        ctxs.append(padded[idx])
        cidx.append(np.full(seq.size, i, dtype=np.intp))
        targets.append(seq)
    conds = np.atleast_2d(np.asarray(conds, dtype=np.float64))
    ci = np.concatenate(cidx)
    return np.concatenate(ctxs), conds[ci], np.concatenate(targets)


def train_ar(sequences, conds, vocab_size, config: ArConfig = ArConfig(), return_trace=False):
    """Fit by Adam on mean token cross-entropy over all positions."""
    if len(sequences) == 0:
        raise ValueError("empty corpus")
    conds = np.atleast_2d(np.asarray(conds, dtype=np.float64))
    if conds.shape[0] != len(sequences):
        raise ValueError("one condition row per sequence required")
    for s in sequences:
        s = np.asarray(s)
        if s.size == 0 or s.min() < 0 or s.max() >= vocab_size:
            raise ValueError(f"tokens must lie in [0, {vocab_size})")
    rng = np.random.default_rng(config.seed)
    model = ArModel(vocab_size, conds.shape[1], config.context, config.token_dim, config.hidden,
                    seed=int(rng.integers(2 ** 31)))
    ctx, cond, tgt = make_examples(sequences, conds, config.context, model.bos)
    opt = Adam(config.lr)
    trace = []
    n = tgt.size
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = model.loss_and_grads(ctx[idx], cond[idx], tgt[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite cross-entropy at epoch {epoch}")
            opt.step(model.params, grads)
            trace.append((epoch, start // config.batch_size, loss))
    return (model, trace) if return_trace else model


def cross_entropy(model: ArModel, sequences, conds) -> float:
    ctx, cond, tgt = make_examples(sequences, conds, model.context, model.bos)
    logp = log_softmax(model.logits(ctx, cond))
    return -float(logp[np.arange(tgt.size), tgt].mean())


def perplexity(model: ArModel, sequences, conds) -> float:
    if len(sequences) == 0:
        raise ValueError("empty evaluation set")
    return float(np.exp(cross_entropy(model, sequences, conds)))


def sample_ar(model: ArModel, cond, length: int, temperature: float = 1.0, seed=0):
    """Ancestral sampling from ``softmax(logits / temperature)``, BOS-primed.

    ``cond`` may be a batch ``(B, c)`` with one seed per row; each row uses
    its own generator.
    """
    if length < 1:
        raise ValueError("length must be at least 1")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    cond = np.asarray(cond, dtype=np.float64)
    single = cond.ndim == 1
    cond = np.atleast_2d(cond)
    B = cond.shape[0]
    seeds = np.broadcast_to(np.asarray(seed), (B,))
    rngs = [np.random.default_rng(int(s)) for s in seeds]
    ctx = np.full((B, model.context), model.bos, dtype=np.intp)
    out = np.empty((B, length), dtype=np.intp)
    for t in range(length):
        p = softmax(model.logits(ctx, cond) / temperature)
        for b in range(B):
            u = rngs[b].random()
            tok = int(np.searchsorted(np.cumsum(p[b]), u * p[b].sum(), side="right"))
            out[b, t] = min(tok, model.vocab_size - 1)
        ctx = np.concatenate([ctx[:, 1:], out[:, t:t + 1]], axis=1)
    return out[0] if single else out


def save_ar(path, model: ArModel, meta=None):
    meta = dict(meta or {})
    meta.update({"vocab_size": model.vocab_size, "cond_dim": model.cond_dim, "context": model.context,
                 "token_dim": model.token_dim, "hidden": model.hidden})
    write_binary(path, "SLA1", model.params, meta)


def load_ar(path):
    arrays, meta = read_binary(path, "SLA1")
    model = ArModel(meta["vocab_size"], meta["cond_dim"], meta["context"], meta["token_dim"],
                    meta["hidden"], params=arrays)
    return model, meta
