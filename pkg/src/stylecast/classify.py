"""Embedding-similarity video classification with an out-of-category fallback."""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmbeddingError, IncompleteIndexError, ProviderError
from .ingestion import CURATED_CATEGORIES, DatasetBundle, VideoCategory
from .providers import EmbedProvider
from .textutil import read_json, sha256_text, write_json


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    provider_id: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(vals)):
            raise EmbeddingError("embedding has non-finite values")
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return int(self.values.size)


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise EmbeddingError(f"dimension mismatch: {a.dim} vs {b.dim}")
    na, nb = float(np.linalg.norm(a.values)), float(np.linalg.norm(b.values))
    if na == 0.0 or nb == 0.0:
        raise EmbeddingError("degenerate embedding")
    sim = float(np.dot(a.values, b.values)) / (na * nb)
    return min(1.0, max(-1.0, sim))


class EmbeddingCache:
    """Content-addressed vectors under ``<root>/<provider>/<sha256(text)>.json``."""

    def __init__(self, root: str | Path | None):
        self.root = Path(root) if root else None

    def _path(self, provider_id: str, text: str) -> Path | None:
        if self.root is None:
            return None
        safe = re.sub(r"[^A-Za-z0-9._-]+", "_", provider_id)
        return self.root / safe / f"{sha256_text(text)}.json"

    def get(self, provider_id: str, text: str) -> np.ndarray | None:
        path = self._path(provider_id, text)
        if path is None or not path.exists():
            return None
        return np.asarray(read_json(path)["values"], dtype=float)

    def put(self, provider_id: str, text: str, values: np.ndarray) -> None:
        path = self._path(provider_id, text)
        if path is not None:
            write_json(path, {"provider_id": provider_id, "values": [float(v) for v in values]})


def embed_text(text: str, provider: EmbedProvider, cache: EmbeddingCache | None = None) -> EmbeddingVector:
    if cache is not None:
        hit = cache.get(provider.provider_id, text)
        if hit is not None:
            return EmbeddingVector(hit, provider.provider_id)
    vec = np.asarray(provider.embed(text), dtype=float)
    if cache is not None:
        cache.put(provider.provider_id, text, vec)
    return EmbeddingVector(vec, provider.provider_id)


def embed_many(texts: Sequence[str], provider: EmbedProvider, cache: EmbeddingCache | None = None,
               jobs: int = 1) -> list[EmbeddingVector]:
    """Embed in order; duplicate texts hit the provider once."""
    unique = list(dict.fromkeys(texts))
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            vecs = list(pool.map(lambda t: embed_text(t, provider, cache), unique))
    else:
        vecs = [embed_text(t, provider, cache) for t in unique]
    lookup = dict(zip(unique, vecs))
    return [lookup[t] for t in texts]


@dataclass(frozen=True)
class IndexEntry:
    item_id: str
    category: VideoCategory
    vector: EmbeddingVector


@dataclass
class DatasetEmbeddingIndex:
    entries: list[IndexEntry]
    provider_id: str
    errors: list[tuple[str, str]] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.errors


def build_embedding_index(dataset: DatasetBundle, provider: EmbedProvider,
                          cache_dir: str | Path | None = None, jobs: int = 1,
                          language: str | None = None) -> DatasetEmbeddingIndex:
    """Embed every dataset description; failures yield a flagged partial index."""
    items = [it for it in dataset.items if language is None or it.language == language]
    if not items:
        raise EmbeddingError("empty dataset")
    cache = EmbeddingCache(cache_dir)

    def one(item):
        try:
            return embed_text(item.semantic_description, provider, cache), None
        except (ProviderError, EmbeddingError) as exc:
            return None, str(exc)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(it) for it in items]
    entries, errors = [], []
    for item, (vec, err) in zip(items, results):
        if err is not None:
            errors.append((item.video_id, err))
        else:
            entries.append(IndexEntry(item.video_id, item.category, vec))
    return DatasetEmbeddingIndex(entries, provider.provider_id, errors)


@dataclass(frozen=True)
class ClassifyParams:
    fallback_threshold: float = 0.15


@dataclass(frozen=True)
class CategoryDecision:
    category: VideoCategory
    per_category_scores: dict[str, float]
    margin: float
    fallback_applied: bool
    best_mean: float = 0.0

    def to_dict(self) -> dict:
        return {"category": self.category.value, "per_category_scores": self.per_category_scores,
                "margin": self.margin, "fallback_applied": self.fallback_applied,
                "best_mean": self.best_mean}


def classify_embedding(target: EmbeddingVector, index: DatasetEmbeddingIndex,
                       params: ClassifyParams = ClassifyParams()) -> CategoryDecision:
    """Summed cosine similarity per category; argmax with fixed-order tie breaking.

    The argmax category's mean similarity below ``fallback_threshold`` yields
    ``other``. Sums use ``math.fsum`` so equal multisets tie exactly.
    """
    if not index.entries:
        raise IncompleteIndexError("empty embedding index")
    if not index.complete:
        raise IncompleteIndexError(f"embedding index is partial ({len(index.errors)} failures)")
    sims: dict[VideoCategory, list[float]] = {c: [] for c in CURATED_CATEGORIES}
    for entry in index.entries:
        sims[entry.category].append(cosine_similarity(target, entry.vector))
    sums = {c: math.fsum(v) for c, v in sims.items()}

    best = CURATED_CATEGORIES[0]
    for c in CURATED_CATEGORIES[1:]:
        if sums[c] > sums[best]:
            best = c
    ranked = sorted(sums.values(), reverse=True)
    margin = ranked[0] - ranked[1] if len(ranked) > 1 else 0.0
    best_mean = sums[best] / len(sims[best]) if sims[best] else 0.0
    fallback = best_mean < params.fallback_threshold
    return CategoryDecision(
        category=VideoCategory.OTHER if fallback else best,
        per_category_scores={c.value: sums[c] for c in CURATED_CATEGORIES},
        margin=margin,
        fallback_applied=fallback,
        best_mean=best_mean,
    )


def classify_video(target_description, index: DatasetEmbeddingIndex, provider: EmbedProvider,
                   params: ClassifyParams = ClassifyParams(),
                   cache_dir: str | Path | None = None) -> CategoryDecision:
    text = getattr(target_description, "text", target_description)
    vec = embed_text(text, provider, EmbeddingCache(cache_dir))
    return classify_embedding(vec, index, params)
