"""Automatic quality assessment over a curated manifest.

Three families of checks: back-translation similarity (translate the
retained text back to English and compare embeddings with the source
caption), corpus BLEU / chrF++ over the back-translations against the
source captions, and dataset statistics (token/character counts and average
token length per language).
"""
from __future__ import annotations

import json
import math
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import DatasetManifest, TranslationEntry
from .embedding import EmbeddingBackend, cosine_similarity, embed, ensure_reentrant
from .errors import MetricError
from .languages import SOURCE_LANGUAGE, validate_language
from .metrics import chrf_pp, corpus_bleu, tokenize
from .mt import MTBackend, backtranslate

BT_HISTOGRAM_BINS = 10


@dataclass(frozen=True)
class LanguageStats:
    """Token and character totals for one language's retained translations."""

    language: str
    n_tokens: int
    n_chars: int
    avg_length: float
    n_entries: int
    n_empty: int  # retained entries contributing zero tokens, flagged

    def __post_init__(self) -> None:
        if self.n_tokens < 0 or self.n_chars < 0:
            raise MetricError("token and character counts must be non-negative")
        expected = self.n_chars / self.n_tokens if self.n_tokens else 0.0
        if not math.isclose(self.avg_length, expected, rel_tol=0, abs_tol=1e-9):
            raise MetricError(
                f"avg_length {self.avg_length} does not equal "
                f"chars/tokens {expected}"
            )

    def to_json(self) -> dict:
        return {
            "language": self.language,
            "n_tokens": self.n_tokens,
            "n_chars": self.n_chars,
            "avg_length": self.avg_length,
            "n_entries": self.n_entries,
            "n_empty": self.n_empty,
        }


@dataclass(frozen=True)
class BtSummary:
    """Distribution summary of back-translation similarities."""

    mean: float
    min: float
    max: float
    histogram: tuple[int, ...]  # BT_HISTOGRAM_BINS equal bins over [0, 1]

    def to_json(self) -> dict:
        return {
            "mean": self.mean,
            "min": self.min,
            "max": self.max,
            "histogram": list(self.histogram),
        }


@dataclass(frozen=True)
class QualityReport:
    """Automatic quality metrics for one language.

    BLEU is stored on [0, 1] and chrF++ on [0, 100]; the JSON form carries
    explicit scale fields plus a x100 BLEU rendering so the two conventions
    cannot be confused.
    """

    language: str
    n_items: int
    bleu: float | None = None
    chrf_pp: float | None = None
    bt_similarity: BtSummary | None = None

    def __post_init__(self) -> None:
        has_metric = (
            self.bleu is not None
            or self.chrf_pp is not None
            or self.bt_similarity is not None
        )
        if has_metric and self.n_items <= 0:
            raise MetricError("a report with metrics must cover at least one item")

    def to_json(self) -> dict:
        doc: dict = {
            "language": self.language,
            "n_items": self.n_items,
            "scales": {"bleu": "0-1", "chrf_pp": "0-100"},
        }
        if self.bleu is not None:
            doc["bleu"] = self.bleu
            doc["bleu_x100"] = self.bleu * 100.0
        if self.chrf_pp is not None:
            doc["chrf_pp"] = self.chrf_pp
        if self.bt_similarity is not None:
            doc["bt_similarity"] = self.bt_similarity.to_json()
        return doc


@dataclass(frozen=True)
class BtFailure:
    """One entry whose back-translation or embedding failed."""

    image_id: str
    language: str
    error: str


@dataclass
class BtBatch:
    """Per-entry back-translation similarities plus recorded failures."""

    pairs: list[tuple[TranslationEntry, str, float]] = field(default_factory=list)
    failures: list[BtFailure] = field(default_factory=list)


def backtranslation_score(
    entry: TranslationEntry,
    source_en: str,
    mt: MTBackend,
    emb: EmbeddingBackend,
) -> float:
    """Similarity between the source caption and the round-tripped text."""
    back = backtranslate(entry.current.text, entry.language, mt)
    source_vec, back_vec = embed([source_en, back], emb)
    return cosine_similarity(source_vec, back_vec)


def backtranslate_all(
    manifest: DatasetManifest,
    language: str,
    mt: MTBackend,
    emb: EmbeddingBackend,
    max_workers: int = 4,
) -> BtBatch:
    """Round-trip every retained entry of one language and score it.

    Failures are recorded per entry; the batch always completes.  Pairs come
    back ordered by image id regardless of thread scheduling.
    """
    language = validate_language(language)
    entries = [e for e in manifest.retained_entries() if e.language == language]
    if not entries:
        raise MetricError(f"no retained entries for language {language}")
    sources = {r.image_id: r.selected_caption for r in manifest.records}
    emb = ensure_reentrant(emb)
    batch = BtBatch()

    def run(entry: TranslationEntry) -> tuple[str, float]:
        source = sources.get(entry.image_id)
        if not source:
            raise MetricError(
                f"image {entry.image_id} has no selected source caption"
            )
        back = backtranslate(entry.current.text, entry.language, mt)
        source_vec, back_vec = embed([source, back], emb)
        return back, cosine_similarity(source_vec, back_vec)

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        futures = [(entry, pool.submit(run, entry)) for entry in entries]
    for entry, future in futures:
        exc = future.exception()
        if exc is not None:
            batch.failures.append(
                BtFailure(
                    image_id=entry.image_id,
                    language=entry.language,
                    error=str(exc),
                )
            )
        else:
            back, score = future.result()
            batch.pairs.append((entry, back, score))
    batch.pairs.sort(key=lambda item: item[0].image_id)
    batch.failures.sort(key=lambda item: item.image_id)
    return batch


def bt_summary(scores: Sequence[float]) -> BtSummary:
    if not scores:
        raise MetricError("cannot summarize an empty score list")
    histogram = [0] * BT_HISTOGRAM_BINS
    for score in scores:
        clamped = min(max(score, 0.0), 1.0)
        index = min(int(clamped * BT_HISTOGRAM_BINS), BT_HISTOGRAM_BINS - 1)
        histogram[index] += 1
    return BtSummary(
        mean=sum(scores) / len(scores),
        min=min(scores),
        max=max(scores),
        histogram=tuple(histogram),
    )


def quality_report(
    manifest: DatasetManifest,
    language: str,
    mt: MTBackend,
    emb: EmbeddingBackend,
    max_workers: int = 4,
) -> tuple[QualityReport, list[BtFailure]]:
    """Full automatic QA for one language.

    BLEU and chrF++ are computed over the identical (back-translation,
    source caption) pairs that produced the similarity summary, so the three
    numbers always describe the same sample.
    """
    language = validate_language(language)
    batch = backtranslate_all(manifest, language, mt, emb, max_workers=max_workers)
    if not batch.pairs:
        return QualityReport(language=language, n_items=0), batch.failures
    sources = {r.image_id: r.selected_caption for r in manifest.records}
    hypotheses = [back for _, back, _ in batch.pairs]
    references = [sources[entry.image_id] for entry, _, _ in batch.pairs]
    report = QualityReport(
        language=language,
        n_items=len(batch.pairs),
        bleu=corpus_bleu(
            [tokenize(h) for h in hypotheses], [tokenize(r) for r in references]
        ),
        chrf_pp=chrf_pp(hypotheses, references),
        bt_similarity=bt_summary([score for _, _, score in batch.pairs]),
    )
    return report, batch.failures


def _squeeze(text: str) -> str:
    return "".join(unicodedata.normalize("NFC", text).split())


def dataset_stats(manifest: DatasetManifest, language: str) -> LanguageStats:
    """Token/character totals over one language's retained translations.

    Tokens are Unicode-whitespace splits after NFC normalization; character
    counts exclude all whitespace.  Entries contributing zero tokens are
    counted in ``n_empty`` rather than silently ignored.
    """
    language = validate_language(language)
    entries = [e for e in manifest.retained_entries() if e.language == language]
    if not entries:
        raise MetricError(f"no retained entries for language {language}")
    n_tokens = 0
    n_chars = 0
    n_empty = 0
    for entry in entries:
        tokens = tokenize(entry.current.text)
        if not tokens:
            n_empty += 1
            continue
        n_tokens += len(tokens)
        n_chars += len(_squeeze(entry.current.text))
    avg = n_chars / n_tokens if n_tokens else 0.0
    return LanguageStats(
        language=language,
        n_tokens=n_tokens,
        n_chars=n_chars,
        avg_length=avg,
        n_entries=len(entries),
        n_empty=n_empty,
    )


def avg_word_count(manifest: DatasetManifest, language: str) -> float:
    """Mean tokens per retained caption; English means the selected sources."""
    language = validate_language(language)
    if language == SOURCE_LANGUAGE:
        captions = [
            r.selected_caption for r in manifest.records if r.selected_caption
        ]
        if not captions:
            raise MetricError("no selected source captions")
    else:
        captions = [
            e.current.text
            for e in manifest.retained_entries()
            if e.language == language
        ]
        if not captions:
            raise MetricError(f"no retained entries for language {language}")
    return sum(len(tokenize(c)) for c in captions) / len(captions)


def render_table(
    columns: Mapping[str, Mapping[str, object]], value_width: int = 12
) -> str:
    """Plain-text table: one column per language, one row per metric."""
    languages = sorted(columns)
    metrics: list[str] = []
    for lang in languages:
        for metric in columns[lang]:
            if metric not in metrics:
                metrics.append(metric)
    label_width = max((len(m) for m in metrics), default=6)
    label_width = max(label_width, len("metric"))

    def fmt(value: object) -> str:
        if isinstance(value, float):
            return f"{value:.4f}"
        return "" if value is None else str(value)

    lines = [
        "metric".ljust(label_width)
        + "".join(lang.rjust(value_width) for lang in languages)
    ]
    for metric in metrics:
        cells = [fmt(columns[lang].get(metric)).rjust(value_width) for lang in languages]
        lines.append(metric.ljust(label_width) + "".join(cells))
    return "\n".join(lines) + "\n"


def write_report(doc: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(doc, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def quality_table(reports: Sequence[QualityReport]) -> str:
    columns: dict[str, dict[str, object]] = {}
    for report in reports:
        columns[report.language] = {
            "bleu": report.bleu,
            "chrf_pp": report.chrf_pp,
            "bt_mean": report.bt_similarity.mean if report.bt_similarity else None,
            "n_items": report.n_items,
        }
    return render_table(columns)


def stats_table(stats: Sequence[LanguageStats]) -> str:
    columns: dict[str, dict[str, object]] = {}
    for stat in stats:
        columns[stat.language] = {
            "n_tokens": stat.n_tokens,
            "n_chars": stat.n_chars,
            "avg_length": stat.avg_length,
            "n_entries": stat.n_entries,
        }
    return render_table(columns)
