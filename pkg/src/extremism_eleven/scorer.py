"""Post x item cosine-similarity scores over 100-word chunks."""

from __future__ import annotations

import logging
from collections.abc import Iterable
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .artifacts import ArtifactError, atomic_write_text, csv_text, fmt, read_matrix, write_matrix
from .corpus import Post
from .embedder import EmbeddingMatrix, EmbeddingProviderConfig, VectorCache, encode
from .itembank import ItemBank
from .text import split_words

log = logging.getLogger(__name__)

CHUNK_WORDS = 100

_item_vector_cache: dict = {}


@dataclass
class ItemScoreMatrix:
    post_ids: list
    item_ids: list
    scores: np.ndarray
    bank_fingerprint: str
    provider_tag: str
    skipped: list = field(default_factory=list)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        n, p = self.scores.shape
        if n != len(self.post_ids) or p != len(self.item_ids):
            raise ValueError(f"scores shape {self.scores.shape} does not match ids ({len(self.post_ids)}, {len(self.item_ids)})")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores contain NaN or Inf")
        if np.any(np.abs(self.scores) > 1.0 + 1e-6):
            raise ValueError("scores outside [-1, 1]")

    def header(self) -> dict:
        return {
            "kind": "item_scores",
            "post_count": len(self.post_ids),
            "post_ids": list(self.post_ids),
            "item_ids": list(self.item_ids),
            "bank_fingerprint": self.bank_fingerprint,
            "provider_tag": self.provider_tag,
        }

    def save(self, path) -> None:
        write_matrix(path, self.header(), self.scores)

    @classmethod
    def load(cls, path) -> "ItemScoreMatrix":
        header, data = read_matrix(path)
        if header.get("kind") != "item_scores":
            raise ArtifactError(f"{path} is not an item-score matrix")
        if len(header["item_ids"]) != data.shape[1]:
            raise ArtifactError(f"{path}: column count does not match item_ids")
        return cls(header["post_ids"], header["item_ids"], data,
                   header["bank_fingerprint"], header["provider_tag"])

    def to_csv(self, path) -> None:
        rows = ([pid] + [fmt(v) for v in row] for pid, row in zip(self.post_ids, self.scores))
        atomic_write_text(path, csv_text(["post_id"] + list(self.item_ids), rows))


def chunk_words(text: str, size: int = CHUNK_WORDS) -> list[str]:
    """Consecutive non-overlapping windows of ``size`` words, remainder kept."""
    if size < 1:
        raise ValueError("chunk size must be >= 1")
    words = split_words(text)
    if not words:
        raise ValueError("text has no words")
    return [" ".join(words[i:i + size]) for i in range(0, len(words), size)]


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine of a zero vector is undefined")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def item_vectors(bank: ItemBank, cfg: EmbeddingProviderConfig,
                 cache: Optional[VectorCache] = None) -> EmbeddingMatrix:
    """Embeddings of the bank's items, memoized per bank fingerprint and provider."""
    key = (bank.fingerprint(), cfg)
    hit = _item_vector_cache.get(key)
    if hit is None:
        hit = encode(bank.texts, cfg, cache=cache)
        _item_vector_cache[key] = hit
    return hit


def _check_items(bank: ItemBank, vecs: EmbeddingMatrix) -> None:
    if vecs.rows != bank.p:
        raise ValueError(f"{vecs.rows} item vectors for a bank of {bank.p} items")


def score_post(post: Post, bank: ItemBank, item_vecs: EmbeddingMatrix,
               cfg: EmbeddingProviderConfig, cache: Optional[VectorCache] = None,
               length_weighted: bool = False, chunk_size: int = CHUNK_WORDS) -> np.ndarray:
    """Mean over the post's chunks of the cosine with every item vector."""
    _check_items(bank, item_vecs)
    chunks = chunk_words(post.text, chunk_size)
    emb = encode(chunks, cfg, cache=cache)
    weights = None
    if length_weighted:
        weights = np.array([len(split_words(c)) for c in chunks], dtype=np.float64)
    offsets = np.array([0, len(chunks)], dtype=np.int64)
    return kernels.chunk_item_mean(emb.data, item_vecs.data, offsets, weights)[0]


def score_corpus(posts: Iterable[Post], bank: ItemBank, cfg: EmbeddingProviderConfig,
                 posts_per_batch: int = 256, cache: Optional[VectorCache] = None,
                 length_weighted: bool = False, chunk_size: int = CHUNK_WORDS) -> ItemScoreMatrix:
    """Score a stream of posts against every bank item.

    Posts that cannot be chunked are skipped and listed in ``skipped``.
    Batch size only changes how many chunks are embedded per request; the
    scores equal the per-post definition exactly.
    """
    if posts_per_batch < 1:
        raise ValueError("posts_per_batch must be >= 1")
    if cfg.kind == "file_cache" and cache is None:
        cache = VectorCache.load(cfg.path)
    items = item_vectors(bank, cfg, cache)
    _check_items(bank, items)

    post_ids: list = []
    blocks: list = []
    skipped: list = []
    batch: list = []

    def flush():
        texts, offsets, weights = [], [0], []
        for _, chunks in batch:
            texts.extend(chunks)
            offsets.append(len(texts))
            weights.extend(len(split_words(c)) for c in chunks)
        emb = encode(texts, cfg, cache=cache)
        w = np.asarray(weights, dtype=np.float64) if length_weighted else None
        blocks.append(kernels.chunk_item_mean(emb.data, items.data, np.asarray(offsets, dtype=np.int64), w))
        post_ids.extend(pid for pid, _ in batch)
        batch.clear()

    seen_any = False
    for post in posts:
        seen_any = True
        try:
            chunks = chunk_words(post.text, chunk_size)
        except ValueError as exc:
            skipped.append((post.id, str(exc)))
            continue
        batch.append((post.id, chunks))
        if len(batch) >= posts_per_batch:
            flush()
    if batch:
        flush()
    if not seen_any:
        raise ValueError("no posts to score")
    if not blocks:
        raise ValueError(f"all {len(skipped)} posts were skipped")
    if skipped:
        log.warning("skipped %d post(s) during scoring", len(skipped))
    return ItemScoreMatrix(post_ids, bank.item_ids, np.vstack(blocks), bank.fingerprint(), cfg.tag, skipped)
