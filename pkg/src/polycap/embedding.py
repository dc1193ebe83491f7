"""Sentence-embedding backends and the similarity math built on them.

Two backend roles share one interface: a monolingual English encoder used
for caption selection and a multilingual encoder used to compare a source
caption against its translations.  Deterministic offline mocks ship in-tree
so the whole pipeline runs without model weights or network access; real
encoders plug in through the same interface.
"""
from __future__ import annotations

import hashlib
import math
import os
import re
import threading
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import BackendError, BackendUnavailableError, InvariantError
from .languages import TARGET_LANGUAGES

DEFAULT_DIMENSION = 32
DEFAULT_MAX_TEXT_LENGTH = 8192

# Mock translations look like "yor⟨original text⟩" (optionally "~marker");
# the multilingual mock uses the envelope to recover the shared content.
_ENVELOPE_RE = re.compile(r"^([a-z]{3})⟨(.*)⟩(?:~[\w-]+)?$", re.DOTALL)


class EmbeddingBackend:
    """Interface every embedding backend implements.

    ``embed_texts`` must be deterministic for a fixed ``backend_version``
    and return one vector of length ``dimension`` per input text.  Backends
    that are not safe for concurrent calls set ``reentrant`` to False and
    the pipeline serializes access.
    """

    backend_id: str = ""
    backend_version: str = "1"
    dimension: int = DEFAULT_DIMENSION
    multilingual: bool = False
    max_text_length: int = DEFAULT_MAX_TEXT_LENGTH
    reentrant: bool = True

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError


def _hash_unit_vector(key: str, dim: int) -> np.ndarray:
    """Deterministic pseudo-random unit vector from a string key.

    Block ``b`` contributes eight components, each a big-endian uint32 from
    sha256(f"{key}|{b}") mapped onto [-1, 1); the result is L2-normalized.
    """
    values: list[float] = []
    block = 0
    while len(values) < dim:
        digest = hashlib.sha256(f"{key}|{block}".encode("utf-8")).digest()
        for i in range(0, 32, 4):
            raw = int.from_bytes(digest[i : i + 4], "big")
            values.append(raw / 2**31 - 1.0)
        block += 1
    vec = np.array(values[:dim], dtype=np.float64)
    return vec / np.linalg.norm(vec)


def _hash_fraction(key: str) -> float:
    """Uniform-looking value in [0, 1) derived from a string key."""
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big") / 2**32


@dataclass
class MockEmbeddingBackend(EmbeddingBackend):
    """Seeded hash-to-unit-vector mock for the English selection stage."""

    backend_id: str = "mock-english"
    seed: int = 0
    dimension: int = DEFAULT_DIMENSION
    multilingual: bool = False
    backend_version: str = "1"
    max_text_length: int = DEFAULT_MAX_TEXT_LENGTH
    reentrant: bool = True

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack(
            [_hash_unit_vector(f"{self.seed}|{t}", self.dimension) for t in texts]
        )


@dataclass
class MockMultilingualBackend(EmbeddingBackend):
    """Cross-lingual mock aligned with the reversible mock translator.

    A mock translation "yor⟨content⟩" embeds as the content vector rotated
    by a deterministic angle, so its cosine similarity against the plain
    English content lands exactly on a pseudo-random point inside
    ``similarity_band``.  Distinct translations of the same content (e.g.
    from differently-marked backends) land on distinct points, giving the
    arbitration stage real score differences to resolve.  Non-envelope text
    embeds like the monolingual mock with the same seed.
    """

    backend_id: str = "mock-multilingual"
    seed: int = 0
    dimension: int = DEFAULT_DIMENSION
    multilingual: bool = True
    backend_version: str = "1"
    max_text_length: int = DEFAULT_MAX_TEXT_LENGTH
    reentrant: bool = True
    similarity_band: tuple[float, float] = (0.55, 0.97)

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([self._embed_one(t) for t in texts])

    def _embed_one(self, text: str) -> np.ndarray:
        match = _ENVELOPE_RE.match(text)
        if match is None or match.group(1) not in TARGET_LANGUAGES:
            return _hash_unit_vector(f"{self.seed}|{text}", self.dimension)
        content = match.group(2)
        base = _hash_unit_vector(f"{self.seed}|{content}", self.dimension)
        low, high = self.similarity_band
        target = low + (high - low) * _hash_fraction(f"{self.seed}|sim|{text}")
        ortho = _hash_unit_vector(f"{self.seed}|perp|{text}", self.dimension)
        ortho = ortho - np.dot(ortho, base) * base
        norm = np.linalg.norm(ortho)
        if norm < 1e-9:  # hash collision with the base direction; re-salt
            ortho = _hash_unit_vector(f"{self.seed}|perp2|{text}", self.dimension)
            ortho = ortho - np.dot(ortho, base) * base
            norm = np.linalg.norm(ortho)
        ortho = ortho / norm
        return target * base + math.sqrt(1.0 - target * target) * ortho


@dataclass
class StaticEmbeddingBackend(EmbeddingBackend):
    """Fixed text-to-vector table; handy for constructed test geometry."""

    vectors: Mapping[str, Sequence[float]] = field(default_factory=dict)
    backend_id: str = "static"
    multilingual: bool = True
    backend_version: str = "1"
    max_text_length: int = DEFAULT_MAX_TEXT_LENGTH
    reentrant: bool = True

    def __post_init__(self) -> None:
        self.vectors = {k: np.asarray(v, dtype=np.float64) for k, v in self.vectors.items()}
        dims = {v.shape[0] for v in self.vectors.values()}
        if len(dims) > 1:
            raise InvariantError(f"static vectors have mixed dimensions {dims}")
        self.dimension = dims.pop() if dims else DEFAULT_DIMENSION

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        missing = [t for t in texts if t not in self.vectors]
        if missing:
            raise BackendError(f"no static vector for {missing[0]!r}")
        return np.stack([self.vectors[t] for t in texts])


class RemoteEmbeddingBackend(EmbeddingBackend):
    """Client for an embedding service speaking the POST {texts} contract.

    The endpoint accepts ``{"texts": [...]}`` and must answer
    ``{"vectors": [[...], ...]}``.  Authentication, when configured, is a
    bearer token read from an environment variable so secrets never live in
    config files.
    """

    def __init__(
        self,
        backend_id: str,
        endpoint: str,
        dimension: int,
        multilingual: bool = True,
        token_env: str | None = None,
        timeout: float = 30.0,
        transport=None,
    ):
        import httpx

        self.backend_id = backend_id
        self.endpoint = endpoint
        self.dimension = dimension
        self.multilingual = multilingual
        self.backend_version = "remote"
        self.max_text_length = DEFAULT_MAX_TEXT_LENGTH
        self.reentrant = True
        self._token_env = token_env
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _headers(self) -> dict[str, str]:
        if not self._token_env:
            return {}
        token = os.environ.get(self._token_env)
        if not token:
            raise BackendUnavailableError(
                f"environment variable {self._token_env} is not set"
            )
        return {"Authorization": f"Bearer {token}"}

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        import httpx

        try:
            response = self._client.post(
                self.endpoint, json={"texts": list(texts)}, headers=self._headers()
            )
        except httpx.HTTPError as exc:
            raise BackendError(f"embedding request failed: {exc}", retryable=True)
        if response.status_code >= 500:
            raise BackendError(
                f"embedding service error {response.status_code}", retryable=True
            )
        if response.status_code != 200:
            raise BackendError(f"embedding service rejected request: {response.text}")
        vectors = np.asarray(response.json()["vectors"], dtype=np.float64)
        if vectors.shape != (len(texts), self.dimension):
            raise BackendError(
                f"embedding service returned shape {vectors.shape}, expected "
                f"({len(texts)}, {self.dimension})"
            )
        return vectors


class SentenceEncoderBackend(EmbeddingBackend):
    """Adapter around a sentence-transformers model; weights are pluggable."""

    def __init__(self, backend_id: str, model_path: str, multilingual: bool):
        self.backend_id = backend_id
        self.multilingual = multilingual
        self.backend_version = model_path
        self.max_text_length = DEFAULT_MAX_TEXT_LENGTH
        self.reentrant = False
        try:
            from sentence_transformers import SentenceTransformer

            self._model = SentenceTransformer(model_path)
        except Exception as exc:
            raise BackendUnavailableError(
                f"cannot load sentence encoder {model_path!r}: {exc}"
            ) from exc
        self.dimension = int(self._model.get_sentence_embedding_dimension())

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        return np.asarray(
            self._model.encode(list(texts), convert_to_numpy=True), dtype=np.float64
        )


def embed(texts: Sequence[str], backend: EmbeddingBackend) -> np.ndarray:
    """Embed a batch of texts, enforcing the backend contract.

    Returns an (n_texts, backend.dimension) float array with one finite
    vector per text.
    """
    if not texts:
        raise BackendError("embed requires at least one text")
    for text in texts:
        if not text:
            raise BackendError("embed texts must be non-empty strings")
        if len(text) > backend.max_text_length:
            raise BackendError(
                f"text of {len(text)} chars exceeds backend limit "
                f"{backend.max_text_length}"
            )
    vectors = np.asarray(backend.embed_texts(texts), dtype=np.float64)
    if vectors.shape != (len(texts), backend.dimension):
        raise BackendError(
            f"backend {backend.backend_id} returned shape {vectors.shape}, "
            f"expected ({len(texts)}, {backend.dimension})"
        )
    if not np.isfinite(vectors).all():
        raise BackendError(f"backend {backend.backend_id} returned non-finite values")
    return vectors


def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> float:
    """u.v / (|u||v|), defined only for equal-dimension nonzero vectors.

    A zero-norm vector indicates a broken backend and raises instead of
    silently scoring 0.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.size == 0 or v.size == 0:
        raise InvariantError("vectors must be non-empty")
    if u.shape != v.shape:
        raise InvariantError(f"dimension mismatch: {u.shape} vs {v.shape}")
    if not (np.isfinite(u).all() and np.isfinite(v).all()):
        raise InvariantError("vectors must be finite")
    norm_u = float(np.linalg.norm(u))
    norm_v = float(np.linalg.norm(v))
    if norm_u == 0.0 or norm_v == 0.0:
        raise InvariantError("cosine similarity is undefined for zero-norm vectors")
    value = float(np.dot(u, v) / (norm_u * norm_v))
    # Clamp floating-point spill so downstream interval checks stay exact.
    return max(-1.0, min(1.0, value))


def pairwise_similarity_matrix(
    texts: Sequence[str], backend: EmbeddingBackend
) -> np.ndarray:
    """Symmetric unit-diagonal matrix of cosine similarities between texts."""
    if len(texts) < 2:
        raise BackendError("pairwise similarity needs at least two texts")
    vectors = embed(texts, backend)
    n = len(texts)
    matrix = np.eye(n, dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            value = cosine_similarity(vectors[i], vectors[j])
            matrix[i, j] = value
            matrix[j, i] = value
    return matrix


class _LockedBackend(EmbeddingBackend):
    """Serializes calls to a backend that declared itself non-reentrant."""

    def __init__(self, inner: EmbeddingBackend):
        self._inner = inner
        self._lock = threading.Lock()
        self.backend_id = inner.backend_id
        self.backend_version = inner.backend_version
        self.dimension = inner.dimension
        self.multilingual = inner.multilingual
        self.max_text_length = inner.max_text_length
        self.reentrant = True

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        with self._lock:
            return self._inner.embed_texts(texts)


def ensure_reentrant(backend: EmbeddingBackend) -> EmbeddingBackend:
    """Wrap non-reentrant backends so concurrent pipeline calls are safe."""
    return backend if backend.reentrant else _LockedBackend(backend)


def embedding_backend_from_config(doc: Mapping) -> EmbeddingBackend:
    """Build a backend from one registry-config object (keyed by ``kind``)."""
    kind = doc.get("kind")
    backend_id = doc.get("backend_id", kind)
    if kind == "mock":
        return MockEmbeddingBackend(
            backend_id=backend_id,
            seed=int(doc.get("seed", 0)),
            dimension=int(doc.get("dimension", DEFAULT_DIMENSION)),
        )
    if kind == "mock-multilingual":
        band = doc.get("similarity_band", (0.55, 0.97))
        return MockMultilingualBackend(
            backend_id=backend_id,
            seed=int(doc.get("seed", 0)),
            dimension=int(doc.get("dimension", DEFAULT_DIMENSION)),
            similarity_band=(float(band[0]), float(band[1])),
        )
    if kind == "remote":
        return RemoteEmbeddingBackend(
            backend_id=backend_id,
            endpoint=doc["endpoint"],
            dimension=int(doc["dimension"]),
            multilingual=bool(doc.get("multilingual", True)),
            token_env=doc.get("token_env"),
        )
    if kind == "sentence-encoder":
        return SentenceEncoderBackend(
            backend_id=backend_id,
            model_path=doc["model_path"],
            multilingual=bool(doc.get("multilingual", False)),
        )
    raise BackendUnavailableError(f"unknown embedding backend kind {kind!r}")


class EmbeddingRegistry:
    """Plugin registry keyed by backend_id."""

    def __init__(self) -> None:
        self._backends: dict[str, EmbeddingBackend] = {}

    def register(self, backend: EmbeddingBackend) -> None:
        self._backends[backend.backend_id] = backend

    def get(self, backend_id: str) -> EmbeddingBackend:
        try:
            return self._backends[backend_id]
        except KeyError:
            known = ", ".join(sorted(self._backends)) or "none"
            raise BackendUnavailableError(
                f"no embedding backend {backend_id!r} registered (known: {known})"
            ) from None

    @classmethod
    def from_config(cls, docs: Sequence[Mapping]) -> "EmbeddingRegistry":
        registry = cls()
        for doc in docs:
            registry.register(embedding_backend_from_config(doc))
        return registry
