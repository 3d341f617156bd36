"""Fused label + visual condition vectors.

A condition is ``concat(label_embedding, visual_block)``. The visual block
is the mean of a subcategory's image embeddings (``average``), one
designated image embedding (``prototype``), or zeros (``label_only`` and
the guidance ``null`` condition, which also swaps in a learned null label
embedding).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .fileformats import FormatError, read_embeddings, read_jsonl

KINDS = ("label_only", "average", "prototype", "null")
MIN_IMAGES, MAX_IMAGES = 2, 24


@dataclass
class LabelVocab:
    labels: tuple
    table: np.ndarray  # (n_labels, d_l)
    null: np.ndarray  # (d_l,)

    @classmethod
    def create(cls, labels, dim: int = 64, seed: int = 0, scale: float = 1.0):
        labels = tuple(labels)
        if len(set(labels)) != len(labels):
            raise ValueError("labels must be unique")
        rng = np.random.default_rng(seed)
        table = scale * rng.standard_normal((len(labels), dim))
        null = scale * rng.standard_normal(dim)
        return cls(labels, table, null)

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def index(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown label {label!r}") from None

    def copy(self):
        return LabelVocab(self.labels, self.table.copy(), self.null.copy())


@dataclass
class VisualRegistry:
    dim: int
    images: dict = field(default_factory=dict)  # (category, subcat) -> {image_id: vector}
    prototypes: dict = field(default_factory=dict)  # (category, subcat) -> image_id

    def add(self, category, subcat, image_id, vector, prototype=False):
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise ValueError(f"embedding for {image_id!r} has shape {vector.shape}, expected ({self.dim},)")
        key = (str(category), int(subcat))
        self.images.setdefault(key, {})[str(image_id)] = vector
        if prototype:
            if key in self.prototypes and self.prototypes[key] != str(image_id):
                raise ValueError(f"subcategory {key} has two prototypes")
            self.prototypes[key] = str(image_id)

    def vectors(self, category, subcat):
        """Member vectors ordered by image id."""
        members = self.images.get((str(category), int(subcat)), {})
        return [members[k] for k in sorted(members)]

    def subcategories(self, category):
        return sorted(k for c, k in self.images if c == category)


@dataclass(frozen=True)
class ConditionVector:
    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown condition kind {self.kind!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("condition has non-finite values")


def embed_label(vocab: LabelVocab, label) -> np.ndarray:
    return vocab.table[vocab.index(label)].copy()


def label_only(vocab: LabelVocab, label, visual_dim: int) -> ConditionVector:
    return ConditionVector(np.concatenate([embed_label(vocab, label), np.zeros(visual_dim)]), "label_only")


def fuse_average(vocab: LabelVocab, registry: VisualRegistry, label, subcat) -> ConditionVector:
    vecs = registry.vectors(label, subcat)
    if not vecs:
        raise ValueError(f"no images registered for subcategory ({label!r}, {subcat})")
    total = np.zeros(registry.dim)
    for v in vecs:
        total = total + v
    return ConditionVector(np.concatenate([embed_label(vocab, label), total / len(vecs)]), "average")


def fuse_prototype(vocab: LabelVocab, registry: VisualRegistry, label, subcat) -> ConditionVector:
    key = (str(label), int(subcat))
    proto = registry.prototypes.get(key)
    if proto is None:
        raise ValueError(f"no prototype set for subcategory {key}")
    members = registry.images.get(key, {})
    if proto not in members:
        raise ValueError(f"prototype {proto!r} is not an image of subcategory {key}")
    return ConditionVector(np.concatenate([embed_label(vocab, label), members[proto]]), "prototype")


def null_condition(vocab: LabelVocab, visual_dim: int) -> ConditionVector:
    return ConditionVector(np.concatenate([vocab.null, np.zeros(visual_dim)]), "null")


def load_visual_embeddings(manifest, vectors_file) -> VisualRegistry:
    """Build a registry from a JSON-lines image manifest and a ``sonolab-emb`` file.

    Manifest rows: ``{"category", "subcategory", "image_id", "row", "prototype"}``
    where ``row`` indexes the vectors file.
    """
    vectors = read_embeddings(vectors_file)
    rows = read_jsonl(manifest)
    registry = VisualRegistry(vectors.shape[1])
    for rec in rows:
        missing = {"category", "subcategory", "image_id", "row"} - rec.keys()
        if missing:
            raise FormatError(f"visual manifest row {rec!r} missing {sorted(missing)}")
        r = int(rec["row"])
        if not 0 <= r < vectors.shape[0]:
            raise FormatError(f"image {rec['image_id']!r} references row {r}, vectors file has {vectors.shape[0]}")
        registry.add(rec["category"], rec["subcategory"], rec["image_id"], vectors[r], bool(rec.get("prototype", False)))
    for key, members in sorted(registry.images.items()):
        if not MIN_IMAGES <= len(members) <= MAX_IMAGES:
            warnings.warn(
                f"subcategory {key} has {len(members)} images (expected {MIN_IMAGES}-{MAX_IMAGES})",
                stacklevel=2,
            )
    return registry
