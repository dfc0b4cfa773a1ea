"""Text embedding providers behind one ``encode`` call.

Three kinds are supported: ``stub`` (deterministic seeded bag-of-words
hashing, for tests and dry runs), ``file_cache`` (content-addressed binary
vector store), and ``http`` (a small JSON protocol, see :func:`http_encode`).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import tempfile
import time
import unicodedata
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from .text import split_words

log = logging.getLogger(__name__)

CACHE_MAGIC = b"E11V"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


class ProviderError(RuntimeError):
    pass


class CacheMissError(ProviderError):
    def __init__(self, missing: list[str]):
        self.missing = missing
        shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
        super().__init__(f"{len(missing)} text(s) absent from vector cache: {shown}")


@dataclass(frozen=True)
class EmbeddingProviderConfig:
    kind: str = "stub"
    url: Optional[str] = None
    path: Optional[str] = None
    model_id: str = "stub-bow"
    dim: Optional[int] = 256
    batch_size: int = 64
    normalize: bool = True
    seed: int = 0
    max_in_flight: int = 4
    timeout: float = 60.0

    def __post_init__(self):
        if self.kind not in ("stub", "file_cache", "http"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.dim is not None and self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.kind == "stub" and self.dim is None:
            raise ValueError("stub provider needs an explicit dim")
        if self.kind == "http" and not self.url:
            raise ValueError("http provider needs a url")
        if self.kind == "file_cache" and not self.path:
            raise ValueError("file_cache provider needs a path")

    @property
    def tag(self) -> str:
        extra = f":seed={self.seed}" if self.kind == "stub" else ""
        return f"{self.kind}:{self.model_id}{extra}"


@dataclass(frozen=True)
class EmbeddingMatrix:
    data: np.ndarray
    provider_tag: str
    normalized: bool

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.dtype != np.float32:
            raise ValueError("embedding data must be a 2-D float32 array")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("embedding contains NaN or Inf")
        if self.normalized:
            norms = np.linalg.norm(self.data.astype(np.float64), axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-5):
                raise ValueError("rows flagged normalized are not unit length")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def content_key(text: str) -> bytes:
    """SHA-256 of the NFC-normalized UTF-8 text."""
    return hashlib.sha256(unicodedata.normalize("NFC", text).encode("utf-8")).digest()


def normalize_rows(a: np.ndarray) -> np.ndarray:
    a64 = np.asarray(a, dtype=np.float64)
    norms = np.linalg.norm(a64, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ProviderError("cannot normalize an all-zero embedding row")
    return (a64 / norms).astype(np.float32)


@lru_cache(maxsize=200_000)
def _word_vector(word: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8,
                             key=seed.to_bytes(8, "little", signed=True)).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    vec = rng.standard_normal(dim)
    vec.setflags(write=False)
    return vec


def stub_encode(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Sum of seeded random word vectors over the text's words, unit-normalized.

    Texts that share words point in similar directions, which is enough
    structure for end-to-end tests without a neural encoder.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    words = split_words(text)
    if not words:
        raise ValueError("cannot embed empty text")
    acc = np.zeros(dim)
    for w in words:
        acc += _word_vector(w, dim, seed)
    norm = np.linalg.norm(acc)
    if norm == 0:
        raise ProviderError(f"stub embedding of {text[:40]!r} is the zero vector")
    return acc / norm


class VectorCache:
    """In-memory view of a binary vector cache file.

    File layout: header (magic ``E11V``, version u32, dim u32, count u64),
    then ``count`` records of a 32-byte key followed by ``dim`` little-endian
    float32 values.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self._store: dict[bytes, np.ndarray] = {}

    def __len__(self):
        return len(self._store)

    def __contains__(self, key: bytes):
        return key in self._store

    def put(self, key: bytes, vector) -> None:
        vec = np.asarray(vector, dtype="<f4").reshape(-1)
        if vec.shape[0] != self.dim:
            raise ValueError(f"vector has dim {vec.shape[0]}, cache holds {self.dim}")
        self._store[key] = vec

    def get(self, key: bytes) -> np.ndarray:
        return self._store[key]

    @classmethod
    def load(cls, path) -> "VectorCache":
        with open(path, "rb") as fh:
            head = fh.read(_HEADER.size)
            if len(head) != _HEADER.size:
                raise ProviderError(f"{path}: truncated cache header")
            magic, version, dim, count = _HEADER.unpack(head)
            if magic != CACHE_MAGIC:
                raise ProviderError(f"{path}: not a vector cache (bad magic)")
            if version != CACHE_VERSION:
                raise ProviderError(f"{path}: unsupported cache version {version}")
            rec = np.dtype([("key", "S32"), ("vec", "<f4", (dim,))])
            body = np.fromfile(fh, dtype=rec, count=count)
            if body.shape[0] != count:
                raise ProviderError(f"{path}: expected {count} records, found {body.shape[0]}")
        cache = cls(dim)
        for key, vec in zip(body["key"], body["vec"]):
            cache._store[bytes(key).ljust(32, b"\0")] = vec.copy()
        return cache

    def save(self, path) -> None:
        path = Path(path)
        rec = np.dtype([("key", "S32"), ("vec", "<f4", (self.dim,))])
        body = np.empty(len(self._store), dtype=rec)
        for i, key in enumerate(sorted(self._store)):
            body[i]["key"] = key
            body[i]["vec"] = self._store[key]
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, self.dim, len(self._store)))
                fh.write(body.tobytes())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def _post_json(url: str, payload: dict, timeout: float, attempts: int = 3,
               backoff: float = 0.5) -> dict:
    body = json.dumps(payload).encode("utf-8")
    last = None
    for attempt in range(attempts):
        req = urllib.request.Request(url, data=body, method="POST",
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                if resp.status != 200:
                    raise ProviderError(f"HTTP {resp.status}")
                return json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, ProviderError, OSError, json.JSONDecodeError) as exc:
            last = exc
            log.warning("embedding request failed (attempt %d/%d): %s", attempt + 1, attempts, exc)
            if attempt + 1 < attempts:
                time.sleep(backoff * 2**attempt)
    raise ProviderError(f"embedding endpoint {url} failed after {attempts} attempts: {last}")


def http_encode(texts: list[str], cfg: EmbeddingProviderConfig, backoff: float = 0.5) -> np.ndarray:
    """POST batches to ``{url}/embed`` as ``{"model", "texts"}``.

    The endpoint answers ``{"dim", "vectors"}``. Batches run concurrently up
    to ``cfg.max_in_flight`` and are reassembled in input order.
    """
    url = cfg.url.rstrip("/") + "/embed"
    batches = [texts[i:i + cfg.batch_size] for i in range(0, len(texts), cfg.batch_size)]

    def run(batch):
        resp = _post_json(url, {"model": cfg.model_id, "texts": batch}, cfg.timeout, backoff=backoff)
        try:
            dim = int(resp["dim"])
            vecs = np.asarray(resp["vectors"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError(f"malformed embedding response: {exc}") from None
        if vecs.shape != (len(batch), dim):
            raise ProviderError(f"response shape {vecs.shape} != ({len(batch)}, {dim})")
        return vecs

    with ThreadPoolExecutor(max_workers=max(1, cfg.max_in_flight)) as pool:
        parts = list(pool.map(run, batches))
    dims = {p.shape[1] for p in parts}
    if len(dims) != 1:
        raise ProviderError(f"inconsistent dims across batches: {sorted(dims)}")
    return np.vstack(parts)


def encode(texts: list[str], cfg: EmbeddingProviderConfig,
           cache: Optional[VectorCache] = None) -> EmbeddingMatrix:
    """Embed ``texts`` in order; row ``i`` belongs to ``texts[i]``."""
    if not texts:
        raise ValueError("no texts to encode")
    for i, t in enumerate(texts):
        if not t.strip():
            raise ValueError(f"text {i} is empty")

    if cfg.kind == "stub":
        raw = np.vstack([stub_encode(t, cfg.dim, cfg.seed) for t in texts])
    elif cfg.kind == "file_cache":
        if cache is None:
            cache = VectorCache.load(cfg.path)
        keys = [content_key(t) for t in texts]
        missing = sorted({k.hex() for k in keys if k not in cache})
        if missing:
            raise CacheMissError(missing)
        raw = np.vstack([cache.get(k) for k in keys]).astype(np.float64)
    else:
        raw = http_encode(texts, cfg)

    if cfg.dim is not None and raw.shape[1] != cfg.dim:
        raise ProviderError(f"provider returned dim {raw.shape[1]}, config expects {cfg.dim}")
    if not np.all(np.isfinite(raw)):
        raise ProviderError("provider returned NaN or Inf")
    data = normalize_rows(raw) if cfg.normalize else raw.astype(np.float32)
    return EmbeddingMatrix(data=data, provider_tag=cfg.tag, normalized=cfg.normalize)


def fill_cache(texts: list[str], source: EmbeddingProviderConfig, cache_path,
               dim: Optional[int] = None) -> VectorCache:
    """Embed texts absent from the cache file with ``source`` and persist them."""
    cache_path = Path(cache_path)
    cache = VectorCache.load(cache_path) if cache_path.exists() else None
    todo = list(dict.fromkeys(t for t in texts if cache is None or content_key(t) not in cache))
    if todo:
        emb = encode(todo, EmbeddingProviderConfig(**{**source.__dict__, "normalize": False}))
        if cache is None:
            cache = VectorCache(dim or emb.dim)
        for t, v in zip(todo, emb.data):
            cache.put(content_key(t), v)
        cache.save(cache_path)
    elif cache is None:
        raise ValueError("nothing to cache")
    return cache
