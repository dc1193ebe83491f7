"""Machine-translation backends and ensemble candidate generation.

Each target language routes to an ordered list of backends; every routed
backend produces one candidate translation per selected caption.  Three
adapter kinds exist: local seq2seq models (weights pluggable, never
bundled), a remote HTTP API, and a reversible mock that wraps the source
text in a language-tagged envelope so back-translation recovers it exactly.
"""
from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .corpus import DatasetManifest, TranslationCandidate
from .errors import (
    BackendError,
    BackendUnavailableError,
    StageOrderError,
    UnsupportedPairError,
)
from .languages import SOURCE_LANGUAGE, validate_language

_MOCK_ENVELOPE_RE = re.compile(r"^([a-z]{3})⟨(.*)⟩(?:~([\w-]+))?$", re.DOTALL)

DEFAULT_BATCH_SIZE = 16
DEFAULT_MAX_CONCURRENCY = 4


def version_with_decode(base_version: str, decode_params: Mapping | None) -> str:
    """Fold decoding parameters into the version string.

    Two deployments of the same checkpoint with different beam sizes must
    count as different backend versions, otherwise the substitution history
    cannot tell "newer model" apart from "same model, new decode".
    """
    if not decode_params:
        return base_version
    canonical = json.dumps(decode_params, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:8]
    return f"{base_version}+{digest}"


class MTBackend:
    """Interface every translation backend implements.

    ``supported_pairs`` is the exact set of (source, target) pairs the
    backend accepts; calls outside it raise UnsupportedPairError before any
    network or model work happens.
    """

    backend_id: str = ""
    backend_version: str = "1"
    supported_pairs: frozenset[tuple[str, str]] = frozenset()
    batch_size: int = DEFAULT_BATCH_SIZE
    max_concurrency: int = DEFAULT_MAX_CONCURRENCY

    def translate_text(self, text: str, source: str, target: str) -> str:
        raise NotImplementedError

    def supports(self, source: str, target: str) -> bool:
        return (source, target) in self.supported_pairs


def translate(text: str, target: str, backend: MTBackend) -> str:
    """Translate English text into the target language via one backend."""
    if not text:
        raise BackendError("translate requires non-empty text")
    target = validate_language(target)
    if not backend.supports(SOURCE_LANGUAGE, target):
        raise UnsupportedPairError(
            f"backend {backend.backend_id} does not support "
            f"({SOURCE_LANGUAGE}, {target})"
        )
    result = backend.translate_text(text, SOURCE_LANGUAGE, target)
    if not result:
        raise BackendError(
            f"backend {backend.backend_id} returned an empty translation"
        )
    return result


def backtranslate(text: str, source_lang: str, backend: MTBackend) -> str:
    """Translate target-language text back to English."""
    if not text:
        raise BackendError("backtranslate requires non-empty text")
    source_lang = validate_language(source_lang)
    if not backend.supports(source_lang, SOURCE_LANGUAGE):
        raise UnsupportedPairError(
            f"backend {backend.backend_id} does not support "
            f"({source_lang}, {SOURCE_LANGUAGE})"
        )
    result = backend.translate_text(text, source_lang, SOURCE_LANGUAGE)
    if not result:
        raise BackendError(
            f"backend {backend.backend_id} returned an empty back-translation"
        )
    return result


@dataclass
class MockMTBackend(MTBackend):
    """Reversible tagged rewrite: eng -> "yor⟨text⟩", and back.

    An optional ``marker`` suffixes the envelope ("yor⟨text⟩~b") so two mock
    backends in an ensemble produce distinguishable candidates while staying
    exactly invertible.  ``fail_texts`` lets tests inject per-item faults.
    """

    backend_id: str = "mock-mt"
    languages: frozenset[str] = frozenset()
    marker: str | None = None
    backend_version: str = "1"
    batch_size: int = DEFAULT_BATCH_SIZE
    max_concurrency: int = 8
    fail_texts: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        langs = frozenset(validate_language(lang) for lang in self.languages)
        object.__setattr__(self, "languages", langs)
        pairs = set()
        for lang in langs:
            pairs.add((SOURCE_LANGUAGE, lang))
            pairs.add((lang, SOURCE_LANGUAGE))
        self.supported_pairs = frozenset(pairs)

    def translate_text(self, text: str, source: str, target: str) -> str:
        if text in self.fail_texts:
            raise BackendError(
                f"injected failure for {text!r} on {self.backend_id}", retryable=False
            )
        if source == SOURCE_LANGUAGE:
            suffix = f"~{self.marker}" if self.marker else ""
            return f"{target}⟨{text}⟩{suffix}"
        match = _MOCK_ENVELOPE_RE.match(text)
        if match is None or match.group(1) != source:
            raise BackendError(
                f"text is not a mock translation envelope for {source}: {text!r}"
            )
        return match.group(2)


class RemoteMTBackend(MTBackend):
    """Client for a translation API speaking POST {text, source, target}.

    The response body must be ``{"translation": "..."}``.  Transient faults
    (timeouts, 5xx) are retried with exponential backoff, at most three
    attempts; permanent rejections fail immediately.
    """

    def __init__(
        self,
        backend_id: str,
        endpoint: str,
        languages: Sequence[str],
        base_version: str = "remote",
        decode_params: Mapping | None = None,
        token_env: str | None = None,
        timeout: float = 30.0,
        max_concurrency: int = DEFAULT_MAX_CONCURRENCY,
        transport=None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        import httpx

        self.backend_id = backend_id
        self.endpoint = endpoint
        self.backend_version = version_with_decode(base_version, decode_params)
        self.batch_size = DEFAULT_BATCH_SIZE
        self.max_concurrency = max_concurrency
        langs = [validate_language(lang) for lang in languages]
        pairs = set()
        for lang in langs:
            pairs.add((SOURCE_LANGUAGE, lang))
            pairs.add((lang, SOURCE_LANGUAGE))
        self.supported_pairs = frozenset(pairs)
        self._token_env = token_env
        self._sleep = sleep
        self._client = httpx.Client(timeout=timeout, transport=transport)

    MAX_ATTEMPTS = 3
    BACKOFF_BASE = 0.2

    def _headers(self) -> dict[str, str]:
        if not self._token_env:
            return {}
        import os

        token = os.environ.get(self._token_env)
        if not token:
            raise BackendUnavailableError(
                f"environment variable {self._token_env} is not set"
            )
        return {"Authorization": f"Bearer {token}"}

    def translate_text(self, text: str, source: str, target: str) -> str:
        import httpx

        payload = {"text": text, "source": source, "target": target}
        last_error: BackendError | None = None
        for attempt in range(self.MAX_ATTEMPTS):
            if attempt:
                self._sleep(self.BACKOFF_BASE * 2 ** (attempt - 1))
            try:
                response = self._client.post(
                    self.endpoint, json=payload, headers=self._headers()
                )
            except httpx.HTTPError as exc:
                last_error = BackendError(
                    f"translation request failed: {exc}", retryable=True
                )
                continue
            if response.status_code >= 500:
                last_error = BackendError(
                    f"translation service error {response.status_code}",
                    retryable=True,
                )
                continue
            if response.status_code != 200:
                raise BackendError(
                    f"translation service rejected request "
                    f"({response.status_code}): {response.text}"
                )
            return str(response.json()["translation"])
        assert last_error is not None
        raise last_error


class LocalModelMTBackend(MTBackend):
    """Adapter for a local seq2seq checkpoint; weights are pluggable.

    ``generate`` may be injected for tests; by default the model is loaded
    lazily through transformers, and a missing checkpoint surfaces as
    BackendUnavailableError rather than a crash mid-pipeline.
    """

    def __init__(
        self,
        backend_id: str,
        model_path: str,
        languages: Sequence[str],
        decode_params: Mapping | None = None,
        batch_size: int = DEFAULT_BATCH_SIZE,
        max_concurrency: int = 1,
        generate: Callable[[str, str, str], str] | None = None,
    ):
        self.backend_id = backend_id
        self.model_path = model_path
        self.backend_version = version_with_decode(model_path, decode_params)
        self.decode_params = dict(decode_params or {})
        self.batch_size = batch_size
        self.max_concurrency = max_concurrency
        langs = [validate_language(lang) for lang in languages]
        pairs = set()
        for lang in langs:
            pairs.add((SOURCE_LANGUAGE, lang))
            pairs.add((lang, SOURCE_LANGUAGE))
        self.supported_pairs = frozenset(pairs)
        self._generate = generate

    def _load(self) -> Callable[[str, str, str], str]:
        if self._generate is not None:
            return self._generate
        try:
            from transformers import pipeline as hf_pipeline

            pipe = hf_pipeline("translation", model=self.model_path)
        except Exception as exc:
            raise BackendUnavailableError(
                f"cannot load translation model {self.model_path!r}: {exc}"
            ) from exc

        def generate(text: str, source: str, target: str) -> str:
            out = pipe(text, src_lang=source, tgt_lang=target, **self.decode_params)
            return out[0]["translation_text"]

        self._generate = generate
        return generate

    def translate_text(self, text: str, source: str, target: str) -> str:
        return self._load()(text, source, target)

    def translate_batch(
        self, texts: Sequence[str], source: str, target: str
    ) -> list[str]:
        generate = self._load()
        results: list[str] = []
        for start in range(0, len(texts), self.batch_size):
            chunk = texts[start : start + self.batch_size]
            results.extend(generate(t, source, target) for t in chunk)
        return results


@dataclass
class EnsembleRegistry:
    """Backends plus the per-language routing table.

    Routing maps each target language to the ordered backends that produce
    candidates for it.  Every routed backend must support (eng, target) and
    every routed language has at least one backend.
    """

    backends: dict[str, MTBackend] = field(default_factory=dict)
    routing: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.routing = {
            validate_language(lang): tuple(ids) for lang, ids in self.routing.items()
        }
        for lang, backend_ids in self.routing.items():
            if not backend_ids:
                raise BackendUnavailableError(
                    f"language {lang} is routed to no backend"
                )
            for backend_id in backend_ids:
                backend = self.backends.get(backend_id)
                if backend is None:
                    raise BackendUnavailableError(
                        f"routing for {lang} names unknown backend {backend_id!r}"
                    )
                if not backend.supports(SOURCE_LANGUAGE, lang):
                    raise UnsupportedPairError(
                        f"backend {backend_id} routed for {lang} does not "
                        f"support ({SOURCE_LANGUAGE}, {lang})"
                    )

    def get(self, backend_id: str) -> MTBackend:
        try:
            return self.backends[backend_id]
        except KeyError:
            known = ", ".join(sorted(self.backends)) or "none"
            raise BackendUnavailableError(
                f"no MT backend {backend_id!r} registered (known: {known})"
            ) from None

    def routed(self, language: str) -> tuple[MTBackend, ...]:
        language = validate_language(language)
        if language not in self.routing:
            raise BackendUnavailableError(f"no routing configured for {language}")
        return tuple(self.backends[b] for b in self.routing[language])

    def languages(self) -> tuple[str, ...]:
        return tuple(sorted(self.routing))

    @classmethod
    def from_config(cls, doc: Mapping) -> "EnsembleRegistry":
        backends: dict[str, MTBackend] = {}
        for spec in doc.get("backends", ()):
            backend = mt_backend_from_config(spec)
            backends[backend.backend_id] = backend
        routing = {
            lang: tuple(ids) for lang, ids in doc.get("routing", {}).items()
        }
        return cls(backends=backends, routing=routing)


def mt_backend_from_config(doc: Mapping) -> MTBackend:
    """Build one MT backend from its registry-config object."""
    kind = doc.get("kind")
    backend_id = doc.get("backend_id", kind)
    languages = doc.get("languages", ())
    if kind == "mock":
        return MockMTBackend(
            backend_id=backend_id,
            languages=frozenset(languages),
            marker=doc.get("marker"),
        )
    if kind == "remote":
        return RemoteMTBackend(
            backend_id=backend_id,
            endpoint=doc["endpoint"],
            languages=languages,
            base_version=doc.get("base_version", "remote"),
            decode_params=doc.get("decode_params"),
            token_env=doc.get("token_env"),
            max_concurrency=int(doc.get("max_concurrency", DEFAULT_MAX_CONCURRENCY)),
        )
    if kind == "local":
        return LocalModelMTBackend(
            backend_id=backend_id,
            model_path=doc["model_path"],
            languages=languages,
            decode_params=doc.get("decode_params"),
            batch_size=int(doc.get("batch_size", DEFAULT_BATCH_SIZE)),
            max_concurrency=int(doc.get("max_concurrency", 1)),
        )
    raise BackendUnavailableError(f"unknown MT backend kind {kind!r}")


@dataclass(frozen=True)
class CandidateFailure:
    """One failed (image, language, backend) translation task."""

    image_id: str
    language: str
    backend_id: str
    error: str
    retryable: bool


@dataclass
class CandidateBatch:
    """Everything a translation pass produced, failures included."""

    candidates: list[TranslationCandidate] = field(default_factory=list)
    failures: list[CandidateFailure] = field(default_factory=list)
    skipped: int = 0


def _existing_versions(
    manifest: DatasetManifest, key: tuple[str, str]
) -> set[tuple[str, str]]:
    entry = manifest.entries.get(key)
    if entry is None:
        return set()
    return {
        (c.backend_id, c.backend_version) for c in (entry.current, *entry.history)
    }


def generate_candidates(
    manifest: DatasetManifest,
    registry: EnsembleRegistry,
    languages: Sequence[str] | None = None,
    clock: Callable[[], str] | None = None,
    max_workers: int = 4,
) -> CandidateBatch:
    """Produce one candidate per (image, language, routed backend).

    Requires every image record to carry a selected caption.  Triples whose
    (backend_id, backend_version) already appear in the manifest entry are
    skipped, which makes repeated translation passes free.  Failures are
    collected per task; the batch always completes.
    """
    unselected = [r.image_id for r in manifest.records if r.selected_index is None]
    if unselected:
        raise StageOrderError(
            f"{len(unselected)} record(s) have no selected caption "
            f"(first: {unselected[0]}); run selection first"
        )
    if clock is None:
        clock = _utc_now
    targets = tuple(sorted(languages)) if languages is not None else registry.languages()

    tasks: list[tuple[str, str, str, MTBackend, str]] = []
    batch = CandidateBatch()
    for record in sorted(manifest.records, key=lambda r: r.image_id):
        for language in targets:
            existing = _existing_versions(manifest, (record.image_id, language))
            for backend in registry.routed(language):
                if (backend.backend_id, backend.backend_version) in existing:
                    batch.skipped += 1
                    continue
                tasks.append(
                    (
                        record.image_id,
                        language,
                        record.selected_caption,
                        backend,
                        backend.backend_id,
                    )
                )

    semaphores: dict[str, threading.Semaphore] = {
        backend_id: threading.Semaphore(max(1, backend.max_concurrency))
        for backend_id, backend in registry.backends.items()
    }

    def run_task(task) -> TranslationCandidate:
        image_id, language, caption, backend, backend_id = task
        with semaphores[backend_id]:
            text = translate(caption, language, backend)
        return TranslationCandidate(
            image_id=image_id,
            language=language,
            text=text,
            backend_id=backend.backend_id,
            backend_version=backend.backend_version,
            created_at=clock(),
        )

    outcomes: list[tuple[tuple, TranslationCandidate | Exception]] = []
    if tasks:
        with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
            futures = [(task, pool.submit(run_task, task)) for task in tasks]
        for task, future in futures:
            exc = future.exception()
            outcomes.append((task, exc if exc is not None else future.result()))

    # Deterministic aggregation regardless of completion order.
    outcomes.sort(key=lambda pair: (pair[0][0], pair[0][1], pair[0][4]))
    for task, outcome in outcomes:
        if isinstance(outcome, Exception):
            retryable = isinstance(outcome, BackendError) and outcome.retryable
            batch.failures.append(
                CandidateFailure(
                    image_id=task[0],
                    language=task[1],
                    backend_id=task[4],
                    error=str(outcome),
                    retryable=retryable,
                )
            )
        else:
            batch.candidates.append(outcome)
    return batch


def _utc_now() -> str:
    from datetime import datetime, timezone

    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
