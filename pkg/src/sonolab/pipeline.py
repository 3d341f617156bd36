"""Experiment orchestration: featurize -> cluster -> conditions -> codec ->
diffusion / AR training -> generation per conditioning variant ->
reconstruction -> evaluation.

Every stage writes into ``<out>/<stage>/`` together with a ``status.json``
carrying the format version and the config hash; later stages refuse to
run on artifacts built from a different config unless forced.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ar as ar_mod
from . import codec as codec_mod
from . import diffusion as dm
from .clustering import cluster_category, load_assignments, save_assignments
from .conditions import (LabelVocab, fuse_average, fuse_prototype, label_only,
                         load_visual_embeddings, null_condition)
from .dsp import (FeatureConfig, MelSpectrogram, WavError, clip_features, load_wav, log_mel, mel_filterbank,
                  resample_linear)
from .fileformats import (FormatError, read_binary, read_embeddings, read_feature_matrix, read_jsonl,
                          read_manifest, write_binary, write_embeddings, write_feature_matrix, write_jsonl)
from .metrics import fit_gaussian, frechet_distance, msd, write_report
from .reconstruct import mel_to_audio, write_wav
from .synth import allocate_images

STATUS_VERSION = 1
VARIANTS = ("label_only", "average", "prototype")
MODELS = ("diffusion", "ar")
STAGES = ("featurize", "cluster", "conditions", "train-codec", "train-diffusion", "train-ar",
          "generate", "reconstruct", "evaluate")


class ConfigError(ValueError):
    """Invalid configuration or input data (CLI exit code 2)."""


class PrerequisiteError(RuntimeError):
    """Missing, outdated or mismatched upstream artifacts (CLI exit code 3)."""


@dataclass
class ExperimentConfig:
    manifest: str = ""
    visual_manifest: str = ""
    visual_vectors: str = ""
    image_pool: str = ""  # mode-keyed pool manifest; images get allocated to discovered subcategories
    image_pool_vectors: str = ""
    out: str = "run"
    seed: int = 0
    cluster_seed: int = -1  # -1: use seed
    # dsp
    sample_rate: int = 22050
    resample: str = "none"
    frame_len: int = 1024
    hop: int = 256
    n_mels: int = 40
    n_mfcc: int = 13
    fmin: float = 0.0
    fmax: float = 0.0  # 0: Nyquist
    floor: float = 1e-10
    # clustering
    kmin: int = 2
    kmax: int = 4
    sigma: str = "local"
    # codec
    codec_c: int = 3
    codec_D: int = 8
    codebook_size: int = 64
    # diffusion
    schedule_N: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    epochs: int = 300
    batch_size: int = 32
    lr: float = 3e-4
    p_uncond: float = 0.1
    gamma: float = 5.0
    hidden: str = "256,256,256"
    label_dim: int = 64
    guidance: float = 2.0
    gaussian_skip: bool = True
    train_visual: str = "member"
    # autoregressive model
    ar_context: int = 8
    ar_token_dim: int = 32
    ar_hidden: int = 64
    ar_epochs: int = 20
    ar_batch_size: int = 256
    ar_lr: float = 3e-3
    ar_temperature: float = 1.0
    # generation / reconstruction
    models: str = "diffusion,ar"
    variants: str = "label_only,average,prototype"
    samples_per_category: int = 8
    gl_iters: int = 60
    mel_iters: int = 50

    # ---- derived views
    @property
    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(self.sample_rate, self.frame_len, self.hop, self.n_mels, self.n_mfcc,
                             self.fmin, self.fmax or None, self.floor)

    @property
    def model_list(self):
        return _split(self.models)

    @property
    def variant_list(self):
        return _split(self.variants)

    @property
    def hidden_sizes(self):
        return tuple(int(h) for h in _split(self.hidden))

    @property
    def effective_cluster_seed(self) -> int:
        return self.seed if self.cluster_seed < 0 else self.cluster_seed

    def validate(self):
        if not self.manifest:
            raise ConfigError("config must set 'manifest'")
        paths = ["manifest"]
        if self.image_pool or self.image_pool_vectors:
            if not (self.image_pool and self.image_pool_vectors):
                raise ConfigError("'image_pool' and 'image_pool_vectors' go together")
            paths += ["image_pool", "image_pool_vectors"]
        elif self.visual_manifest or self.visual_vectors:
            if not (self.visual_manifest and self.visual_vectors):
                raise ConfigError("'visual_manifest' and 'visual_vectors' go together")
            paths += ["visual_manifest", "visual_vectors"]
        for key in paths:
            if not Path(getattr(self, key)).is_file():
                raise ConfigError(f"{key}: file not found: {getattr(self, key)}")
        if self.resample not in ("none", "linear"):
            raise ConfigError("resample must be 'none' or 'linear'")
        if self.train_visual not in ("member", "average", "prototype"):
            raise ConfigError("train_visual must be member, average or prototype")
        bad = set(self.model_list) - set(MODELS)
        if bad or not self.model_list:
            raise ConfigError(f"models must be a subset of {MODELS}")
        bad = set(self.variant_list) - set(VARIANTS)
        if bad or not self.variant_list:
            raise ConfigError(f"variants must be a subset of {VARIANTS}")
        if self.sigma not in ("local", "median"):
            try:
                if float(self.sigma) <= 0:
                    raise ValueError
            except ValueError:
                raise ConfigError("sigma must be 'local', 'median' or a positive number") from None
        checks = [
            (self.samples_per_category >= 2, "samples_per_category must be at least 2"),
            (self.codec_D >= 2 and self.codec_D % 2 == 0, "codec_D must be even and >= 2"),
            (self.n_mels % (2 ** self.codec_c) == 0, "n_mels must be divisible by 2^codec_c"),
            (self.n_mfcc <= self.n_mels, "n_mfcc must not exceed n_mels"),
            (self.schedule_N >= 1, "schedule_N must be positive"),
            (0 < self.beta_start < self.beta_end < 1, "need 0 < beta_start < beta_end < 1"),
            (self.lr > 0 and self.ar_lr > 0, "learning rates must be positive"),
            (0 <= self.p_uncond < 1, "p_uncond must lie in [0, 1)"),
            (self.guidance >= 0, "guidance must be non-negative"),
            (2 <= self.kmin <= self.kmax, "need 2 <= kmin <= kmax"),
            (self.epochs >= 0 and self.ar_epochs >= 0, "epochs must be non-negative"),
            (self.ar_temperature > 0, "ar_temperature must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    def canonical_text(self) -> str:
        """``key=value`` lines of every setting except ``out``, sorted by key."""
        items = sorted((f.name, getattr(self, f.name)) for f in dataclasses.fields(self) if f.name != "out")
        return "".join(f"{k}={_fmt_value(v)}\n" for k, v in items)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()


def _split(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _fmt_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(raw, kind, key):
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


_PATH_KEYS = ("manifest", "visual_manifest", "visual_vectors", "image_pool", "image_pool_vectors", "out")


def parse_config(text: str, base_dir=".") -> ExperimentConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment. Relative paths resolve against ``base_dir``."""
    types = {f.name: type(f.default) for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(raw, types[key], key)
    for key in _PATH_KEYS:
        if values.get(key) and not Path(values[key]).is_absolute():
            values[key] = str((Path(base_dir) / values[key]).resolve())
    return ExperimentConfig(**values)


def load_config(path, overrides=None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config(path.read_text(encoding="utf-8"), path.parent)
    for key, val in (overrides or {}).items():
        if val is not None:
            setattr(cfg, key, val)
    return cfg.validate()


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]).generate_state(1)[0])


# ---------------------------------------------------------------- run directory

class Run:
    def __init__(self, config: ExperimentConfig, out=None, force: bool = False):
        self.config = config
        self.root = Path(out or config.out)
        self.force = force

    def dir(self, stage) -> Path:
        d = self.root / stage
        d.mkdir(parents=True, exist_ok=True)
        return d

    def finish(self, stage, artifacts, **extra):
        status = {"stage": stage, "version": STATUS_VERSION, "config_hash": self.config.hash,
                  "artifacts": sorted(artifacts), **extra}
        (self.dir(stage) / "status.json").write_text(json.dumps(status, indent=1, sort_keys=True) + "\n")
        return status

    def require(self, stage) -> Path:
        d = self.root / stage
        path = d / "status.json"
        if not path.is_file():
            raise PrerequisiteError(f"stage {stage!r} has not been run (no {path})")
        try:
            status = json.loads(path.read_text())
        except json.JSONDecodeError:
            raise PrerequisiteError(f"{path}: unreadable status record") from None
        if status.get("version") != STATUS_VERSION:
            raise PrerequisiteError(f"{path}: format version {status.get('version')} != {STATUS_VERSION}")
        for name in status.get("artifacts", []):
            if not (d / name).exists():
                raise PrerequisiteError(f"stage {stage!r} artifact missing: {d / name}")
        if status.get("config_hash") != self.config.hash and not self.force:
            raise PrerequisiteError(
                f"stage {stage!r} was built with a different config (hash {status.get('config_hash', '?')[:12]}); "
                "rerun it or pass --force")
        return d


# ---------------------------------------------------------------- stages

def _load_clip(row, cfg: ExperimentConfig):
    try:
        clip = load_wav(row["path"], row["id"])
    except FileNotFoundError:
        raise ConfigError(f"clip {row['id']!r}: file not found: {row['path']}") from None
    except WavError as exc:
        raise ConfigError(f"clip {row['id']!r}: {exc}") from None
    if clip.sample_rate != cfg.sample_rate:
        if cfg.resample != "linear":
            raise ConfigError(f"clip {row['id']!r} has rate {clip.sample_rate}, expected {cfg.sample_rate} "
                              "(set resample = linear to convert)")
        clip = resample_linear(clip, cfg.sample_rate)
    return clip


def _manifest(cfg):
    try:
        rows = read_manifest(cfg.manifest)
    except FormatError as exc:
        raise ConfigError(str(exc)) from None
    if not rows:
        raise ConfigError("manifest is empty")
    return rows


def cmd_featurize(run: Run):
    cfg = run.config
    rows = _manifest(cfg)
    fc = cfg.feature_config
    feats, mels = [], {}
    n_frames = None
    for row in rows:
        clip = _load_clip(row, cfg)
        try:
            feats.append(clip_features(clip, fc))
            mel = log_mel(clip, fc)
        except ValueError as exc:
            raise ConfigError(f"clip {row['id']!r}: {exc}") from None
        if n_frames is None:
            n_frames = mel.n_frames
        elif mel.n_frames != n_frames:
            raise ConfigError(f"clip {row['id']!r} has {mel.n_frames} frames, expected {n_frames}; "
                              "clips must share one duration")
        mels[row["id"]] = mel.values
    d = run.dir("featurize")
    write_feature_matrix(d / "features.txt", [r["id"] for r in rows], np.array(feats))
    write_binary(d / "mels.bin", "SLM1", mels, {"config_hash": cfg.hash, "n_frames": n_frames,
                                                 "ids": [r["id"] for r in rows]})
    write_jsonl(d / "clips.jsonl", [{"id": r["id"], "category": r["category"]} for r in rows])
    return run.finish("featurize", ["features.txt", "mels.bin", "clips.jsonl"], n_clips=len(rows))


def _clips(run):
    d = run.require("featurize")
    rows = read_jsonl(d / "clips.jsonl")
    ids, feats = read_feature_matrix(d / "features.txt")
    if ids != [r["id"] for r in rows]:
        raise PrerequisiteError("featurize artifacts disagree on clip order")
    return rows, feats


def _categories(rows):
    return sorted({r["category"] for r in rows})


def cmd_cluster(run: Run):
    cfg = run.config
    rows, feats = _clips(run)
    sigma = cfg.sigma if cfg.sigma in ("local", "median") else float(cfg.sigma)
    assignments, summary, gaps = {}, {}, []
    for cat in _categories(rows):
        idx = [i for i, r in enumerate(rows) if r["category"] == cat]
        ids = [rows[i]["id"] for i in idx]
        try:
            asg, info = cluster_category(feats[idx], seed=cfg.effective_cluster_seed, ids=ids, category=cat,
                                         kmin=cfg.kmin, kmax=cfg.kmax, sigma=sigma, return_details=True)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        assignments[cat] = asg
        summary[cat] = {"K": asg.K, "sigma": float(info["sigma"]),
                        "sizes": [int(sum(1 for v in asg.members.values() if v == k)) for k in range(asg.K)]}
        for j, ev in enumerate(info["eigenvalues"][:cfg.kmax + 2]):
            gaps.append((cat, j + 1, float(ev)))
    d = run.dir("cluster")
    save_assignments(d / "assignments.jsonl", assignments)
    (d / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    with open(d / "eigenvalues.csv", "w", encoding="utf-8") as fh:
        fh.write("category,index,eigenvalue\n")
        for cat, j, ev in gaps:
            fh.write(f"{cat},{j},{ev!r}\n")
    return run.finish("cluster", ["assignments.jsonl", "summary.json", "eigenvalues.csv"])


def _assignments(run):
    return load_assignments(run.require("cluster") / "assignments.jsonl")


def cmd_conditions(run: Run):
    cfg = run.config
    rows, _ = _clips(run)
    assignments = _assignments(run)
    cats = _categories(rows)
    d = run.dir("conditions")
    vocab = LabelVocab.create(cats, cfg.label_dim, derive_seed(cfg.seed, 2))
    if cfg.image_pool:
        modes = {}
        for rec in read_jsonl(cfg.manifest):
            if "mode" not in rec:
                raise ConfigError("image_pool allocation needs a 'mode' field on every manifest row")
            modes[str(rec["id"])] = rec["mode"]
        vis_rows = allocate_images(assignments, modes, cfg.image_pool)
        write_jsonl(d / "visual_manifest.jsonl", vis_rows)
        vectors_src = cfg.image_pool_vectors
    elif cfg.visual_manifest:
        vis_rows = read_jsonl(cfg.visual_manifest)
        write_jsonl(d / "visual_manifest.jsonl", vis_rows)
        vectors_src = cfg.visual_vectors
    else:
        raise ConfigError("config needs visual_manifest/visual_vectors or image_pool/image_pool_vectors")
    try:
        registry = load_visual_embeddings(d / "visual_manifest.jsonl", vectors_src)
    except (FormatError, ValueError) as exc:
        raise ConfigError(f"visual embeddings: {exc}") from None
    write_embeddings(d / "visual.emb", read_embeddings(vectors_src))
    for cat in cats:
        for k in range(assignments[cat].K):
            if not registry.vectors(cat, k):
                raise ConfigError(f"no images for subcategory ({cat!r}, {k})")
            if "prototype" in cfg.variant_list and (cat, k) not in registry.prototypes:
                raise ConfigError(f"no prototype image for subcategory ({cat!r}, {k})")
    write_binary(d / "vocab.bin", "SLV1", {"table": vocab.table, "null": vocab.null},
                 {"labels": list(vocab.labels), "config_hash": cfg.hash})
    # the fused condition table, one row per (category, subcategory, kind)
    table, vecs = [], []
    for cat in cats:
        vecs.append(label_only(vocab, cat, registry.dim).values)
        table.append({"category": cat, "subcategory": -1, "kind": "label_only", "row": len(vecs) - 1})
        for k in range(assignments[cat].K):
            for kind, fn in (("average", fuse_average), ("prototype", fuse_prototype)):
                if (cat, k) in registry.prototypes or kind == "average":
                    vecs.append(fn(vocab, registry, cat, k).values)
                    table.append({"category": cat, "subcategory": k, "kind": kind, "row": len(vecs) - 1})
    write_jsonl(d / "conditions.jsonl", table)
    write_embeddings(d / "conditions.emb", np.array(vecs))
    return run.finish("conditions", ["visual_manifest.jsonl", "visual.emb", "vocab.bin", "conditions.jsonl",
                                     "conditions.emb"])


def _conditions(run):
    d = run.require("conditions")
    arrays, meta = read_binary(d / "vocab.bin", "SLV1")
    vocab = LabelVocab(tuple(meta["labels"]), arrays["table"], arrays["null"])
    registry = load_visual_embeddings(d / "visual_manifest.jsonl", d / "visual.emb")
    return vocab, registry


def cmd_train_codec(run: Run):
    cfg = run.config
    d_feat = run.require("featurize")
    mels, meta = read_binary(d_feat / "mels.bin", "SLM1")
    ids = meta["ids"]
    pad = float(np.log(cfg.floor))
    grids = [codec_mod.patchify(mels[i], cfg.codec_c, pad) for i in ids]
    try:
        params = codec_mod.fit_codec(grids, cfg.codec_D, cfg.codec_c, pad)
    except ValueError as exc:
        raise ConfigError(f"codec: {exc}") from None
    mu = np.stack([codec_mod.encode(g, params).mu for g in grids])
    codebook = codec_mod.fit_codebook(mu, cfg.codebook_size, derive_seed(cfg.seed, 1))
    d = run.dir("codec")
    info = {"config_hash": cfg.hash, "n_frames": meta["n_frames"]}
    codec_mod.save_codec(d / "codec.slc", params, info)
    codec_mod.save_codebook(d / "codebook.slb", codebook, info)
    write_binary(d / "latents.bin", "SLL1", {"mu": mu}, {**info, "ids": ids})
    return run.finish("codec", ["codec.slc", "codebook.slb", "latents.bin"], latent_shape=list(mu.shape[1:]))


def _codec(run):
    d = run.require("codec")
    params, meta = codec_mod.load_codec(d / "codec.slc")
    codebook, _ = codec_mod.load_codebook(d / "codebook.slb")
    arrays, lmeta = read_binary(d / "latents.bin", "SLL1")
    return params, codebook, arrays["mu"], lmeta


def _schedule(cfg):
    return dm.make_schedule(cfg.schedule_N, cfg.beta_start, cfg.beta_end)


def _training_visuals(cfg, rows, assignments, registry):
    """Per-clip visual blocks: a fixed array, or a sampler drawing a member image per step."""
    pools = []
    for r in rows:
        k = assignments[r["category"]].members[r["id"]]
        if cfg.train_visual == "member":
            pools.append(np.array(registry.vectors(r["category"], k)))
        elif cfg.train_visual == "average":
            pools.append(np.mean(registry.vectors(r["category"], k), axis=0)[None])
        else:
            key = (r["category"], k)
            pools.append(registry.images[key][registry.prototypes[key]][None])
    if cfg.train_visual != "member":
        return np.concatenate(pools)

    def draw(rng, idx):
        return np.stack([pools[i][rng.integers(len(pools[i]))] for i in idx])
    return draw


def _standardize_latents(mu):
    flat = mu.reshape(mu.shape[0], -1)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    return (flat - mean) / np.where(std > 0, std, 1.0), mean, std


def cmd_train_diffusion(run: Run):
    cfg = run.config
    rows, _ = _clips(run)
    assignments = _assignments(run)
    vocab, registry = _conditions(run)
    _, _, mu, _ = _codec(run)
    Z, mean, std = _standardize_latents(mu)
    labels = np.array([vocab.index(r["category"]) for r in rows])
    dataset = dm.LatentDataset(Z, labels, _training_visuals(cfg, rows, assignments, registry))
    tc = dm.TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, p_uncond=cfg.p_uncond,
                        seed=derive_seed(cfg.seed, 3), guidance=cfg.guidance, gamma=cfg.gamma)
    result = dm.train(dataset, _schedule(cfg), tc, vocab, cfg.hidden_sizes, gaussian_skip=cfg.gaussian_skip)
    d = run.dir("diffusion")
    dm.save_checkpoint(d / "model.sld", result.model, result.vocab,
                       {"latent_mean": mean, "latent_std": std},
                       {"config_hash": cfg.hash, "best_epoch": result.best_epoch})
    _write_trace(d / "loss_trace.csv", result.loss_trace)
    return run.finish("diffusion", ["model.sld", "loss_trace.csv"], best_epoch=result.best_epoch)


def _write_trace(path, trace):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,batch,loss\n")
        for e, b, loss in trace:
            fh.write(f"{e},{b},{loss!r}\n")


def cmd_train_ar(run: Run):
    """Token model over VQ codes, one training copy of each clip per image of its subcategory."""
    cfg = run.config
    rows, _ = _clips(run)
    assignments = _assignments(run)
    vocab, registry = _conditions(run)
    _, codebook, mu, _ = _codec(run)
    seqs, conds = [], []
    for r, m in zip(rows, mu):
        tokens = codec_mod.vq_encode(m, codebook).ravel()
        lab = vocab.table[vocab.index(r["category"])]
        k = assignments[r["category"]].members[r["id"]]
        for v in registry.vectors(r["category"], k):
            seqs.append(tokens)
            conds.append(np.concatenate([lab, v]))
    config = ar_mod.ArConfig(cfg.ar_context, cfg.ar_token_dim, cfg.ar_hidden, cfg.ar_epochs, cfg.ar_batch_size,
                             cfg.ar_lr, derive_seed(cfg.seed, 4))
    model, trace = ar_mod.train_ar(seqs, np.array(conds), codebook.size, config, return_trace=True)
    d = run.dir("ar")
    ar_mod.save_ar(d / "model.sla", model, {"config_hash": cfg.hash})
    _write_trace(d / "loss_trace.csv", trace)
    return run.finish("ar", ["model.sla", "loss_trace.csv"])


def _condition_rows(cfg, vocab, registry, assignments, cat, variant):
    n = cfg.samples_per_category
    if variant == "label_only":
        return [label_only(vocab, cat, registry.dim).values] * n, [-1] * n
    K = assignments[cat].K
    fn = fuse_average if variant == "average" else fuse_prototype
    subs = [j % K for j in range(n)]
    return [fn(vocab, registry, cat, k).values for k in subs], subs


def cmd_generate(run: Run):
    """Latent grids for every (model, variant, category); noise seeds are shared across variants."""
    cfg = run.config
    rows, _ = _clips(run)
    assignments = _assignments(run)
    base_vocab, registry = _conditions(run)
    params, codebook, mu, lmeta = _codec(run)
    grid_shape = mu.shape[1:]
    cats = _categories(rows)
    d = run.dir("generate")
    index, artifacts = [], []
    for model_name in cfg.model_list:
        if model_name == "diffusion":
            dd = run.require("diffusion")
            model, vocab, extra, _ = dm.load_checkpoint(dd / "model.sld")
            null = null_condition(vocab, registry.dim).values
            schedule = _schedule(cfg)
        else:
            da = run.require("ar")
            model, _ = ar_mod.load_ar(da / "model.sla")
            vocab = base_vocab
        arrays = {}
        for variant in cfg.variant_list:
            for ci, cat in enumerate(cats):
                conds, subs = _condition_rows(cfg, vocab, registry, assignments, cat, variant)
                seeds = [derive_seed(cfg.seed, 5, ci, j) for j in range(cfg.samples_per_category)]
                if model_name == "diffusion":
                    z = dm.ddpm_sample(model, np.array(conds), null, cfg.guidance, schedule, seeds)
                    grids = (z * extra["latent_std"] + extra["latent_mean"]).reshape((-1,) + grid_shape)
                else:
                    tokens = ar_mod.sample_ar(model, np.array(conds), int(np.prod(grid_shape[:-1])),
                                              cfg.ar_temperature, seeds)
                    grids = codec_mod.vq_decode(tokens, codebook).reshape((-1,) + grid_shape)
                arrays[f"{variant}/{cat}"] = grids
                for j, (k, s) in enumerate(zip(subs, seeds)):
                    index.append({"model": model_name, "variant": variant, "category": cat, "index": j,
                                  "subcategory": k, "seed": s})
        write_binary(d / f"{model_name}.bin", "SLG1", arrays, {"config_hash": cfg.hash})
        artifacts.append(f"{model_name}.bin")
    write_jsonl(d / "index.jsonl", index)
    return run.finish("generate", artifacts + ["index.jsonl"])


def cmd_reconstruct(run: Run):
    cfg = run.config
    d_gen = run.require("generate")
    params, _, mu, lmeta = _codec(run)
    rows, feats = _clips(run)
    mels, _ = read_binary(run.require("featurize") / "mels.bin", "SLM1")
    top = max(float(m.max()) for m in mels.values()) + 1.0
    lo = float(np.log(cfg.floor))
    fc = cfg.feature_config
    fmin, fmax = fc.band_edges()
    fb = mel_filterbank(cfg.sample_rate, cfg.frame_len, cfg.n_mels, fmin, fmax)
    d = run.dir("reconstruct")
    artifacts = []
    for model_name in cfg.model_list:
        arrays, _ = read_binary(d_gen / f"{model_name}.bin", "SLG1")
        ids, out = [], []
        for key in sorted(arrays):
            variant, cat = key.split("/")
            wav_dir = d / model_name / variant
            wav_dir.mkdir(parents=True, exist_ok=True)
            for j, grid in enumerate(arrays[key]):
                mel = np.clip(codec_mod.decode(grid, params, lmeta["n_frames"]), lo, top)
                clip = mel_to_audio(MelSpectrogram(mel, fmin, fmax, cfg.floor), fb, cfg.frame_len,
                                    cfg.hop, cfg.sample_rate, cfg.gl_iters, cfg.mel_iters)
                path = wav_dir / f"{cat}_{j:03d}.wav"
                write_wav(clip, path)
                ids.append(f"{variant}/{cat}/{j:03d}")
                out.append(clip_features(load_wav(path, ids[-1]), fc))
        write_feature_matrix(d / f"{model_name}_features.txt", ids, np.array(out))
        artifacts.append(f"{model_name}_features.txt")
    return run.finish("reconstruct", artifacts)


# ---------------------------------------------------------------- evaluation

@dataclass
class RunReport:
    msd: dict  # (model, variant) -> {scope: MSD_f}
    fad: dict  # (model, variant) -> {scope: FAD}
    categories: list
    config_hash: str = ""
    seeds: dict = field(default_factory=dict)

    def rows(self):
        """``(metric, scope, value)`` rows; scope is a category or ``average``."""
        out = []
        for (model, variant), per in sorted(self.msd.items()):
            for scope in self.categories + ["average"]:
                out.append((f"msd_f:{model}:{variant}", scope, per[scope]))
        for (model, variant), per in sorted(self.fad.items()):
            for scope in self.categories + ["average"]:
                out.append((f"fad:{model}:{variant}", scope, per[scope]))
        return out


def evaluate_sets(train_features, train_categories, generated, config_hash="", seeds=None) -> RunReport:
    """MSD_f and FAD in the training-standardized feature space.

    ``generated`` maps ``(model, variant) -> {category: (n, d) features}``.
    MSD ``average`` is the mean over categories; FAD ``average`` compares
    all generated clips of a variant against all training clips.
    """
    train = np.asarray(train_features, dtype=np.float64)
    cats = sorted(set(train_categories))
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    z = (train - mean) / std
    cat_arr = np.asarray(train_categories)
    ref = {c: fit_gaussian(z[cat_arr == c]) for c in cats}
    ref_all = fit_gaussian(z)
    msd_out, fad_out = {}, {}
    for key, per in sorted(generated.items()):
        missing = set(cats) - set(per)
        if missing:
            raise ValueError(f"{key}: no generated samples for {sorted(missing)}")
        gz = {c: (np.asarray(per[c], dtype=np.float64) - mean) / std for c in cats}
        m = {c: msd(gz[c]) for c in cats}
        m["average"] = float(np.mean([m[c] for c in cats]))
        f = {c: frechet_distance(ref[c], fit_gaussian(gz[c])) for c in cats}
        f["average"] = frechet_distance(ref_all, fit_gaussian(np.concatenate([gz[c] for c in cats])))
        msd_out[key], fad_out[key] = m, f
    return RunReport(msd_out, fad_out, cats, config_hash, dict(seeds or {}))


def cmd_evaluate(run: Run) -> RunReport:
    cfg = run.config
    rows, feats = _clips(run)
    d_rec = run.require("reconstruct")
    generated = {}
    for model_name in cfg.model_list:
        ids, gf = read_feature_matrix(d_rec / f"{model_name}_features.txt")
        for i, f in zip(ids, gf):
            variant, cat, _ = i.split("/")
            generated.setdefault((model_name, variant), {}).setdefault(cat, []).append(f)
    missing = [(m, v) for m in cfg.model_list for v in cfg.variant_list if (m, v) not in generated]
    if missing:
        raise PrerequisiteError(f"no generated samples for {missing}")
    report = evaluate_sets(feats, [r["category"] for r in rows], generated, cfg.hash,
                           {"seed": cfg.seed, "cluster_seed": cfg.effective_cluster_seed})
    d = run.dir("evaluate")
    write_report(d / "report.csv", report.rows())
    _write_tables(d, report, cfg)
    summary = {"config_hash": report.config_hash, "seeds": report.seeds, "categories": report.categories,
               "msd_f": {f"{m}:{v}": per for (m, v), per in sorted(report.msd.items())},
               "fad": {f"{m}:{v}": per for (m, v), per in sorted(report.fad.items())}}
    (d / "report.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    run.finish("evaluate", ["report.csv", "report.json", "table1.csv", "table2.csv"])
    return report


def _write_tables(d, report: RunReport, cfg):
    """Plot data: per-category MSD_f by variant (table1), quality/diversity pairs (table2)."""
    cats = report.categories
    with open(d / "table1.csv", "w", encoding="utf-8") as fh:
        fh.write("model,variant," + ",".join(cats) + ",average\n")
        for (model, variant), per in sorted(report.msd.items()):
            fh.write(f"{model},{variant}," + ",".join(repr(per[s]) for s in cats + ["average"]) + "\n")
    with open(d / "table2.csv", "w", encoding="utf-8") as fh:
        fh.write("model,variant,fad,msd_f\n")
        for key in sorted(report.msd):
            fh.write(f"{key[0]},{key[1]},{report.fad[key]['average']!r},{report.msd[key]['average']!r}\n")


COMMANDS = {
    "featurize": cmd_featurize,
    "cluster": cmd_cluster,
    "conditions": cmd_conditions,
    "train-codec": cmd_train_codec,
    "train-diffusion": cmd_train_diffusion,
    "train-ar": cmd_train_ar,
    "generate": cmd_generate,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
}


def run_all(config: ExperimentConfig, out=None, force: bool = False) -> RunReport:
    run = Run(config, out, force)
    for stage in STAGES:
        if stage == "train-ar" and "ar" not in config.model_list:
            continue
        result = COMMANDS[stage](run)
    return result


def compare_conditioning(config: ExperimentConfig, out=None, force: bool = False) -> RunReport:
    """Full pipeline with one shared model evaluated under every conditioning variant."""
    missing = set(VARIANTS) - set(config.variant_list)
    if missing:
        raise ConfigError(f"compare_conditioning needs all variants; missing {sorted(missing)}")
    return run_all(config, out, force)
