"""Candidate scoring, best-translation retention, and interval filtering.

Every candidate translation is scored by cosine similarity between the
multilingual embeddings of the English source caption and the candidate
text.  Per (image, language) key the highest-scoring candidate is retained;
when a newer candidate strictly beats the incumbent it is substituted and
the incumbent moves to history.  Finally a closed-interval similarity filter
marks entries outside [lower, upper] as filtered out.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .corpus import (
    DatasetManifest,
    FilterPolicy,
    TranslationCandidate,
    TranslationEntry,
    parse_timestamp,
)
from .embedding import EmbeddingBackend, cosine_similarity, embed, ensure_reentrant
from .errors import InvariantError, StageOrderError

ABOVE_LABEL = "suspiciously high"


def score_candidate(
    source_en: str,
    candidate: TranslationCandidate,
    backend: EmbeddingBackend,
    recompute: bool = False,
) -> TranslationCandidate:
    """Attach the source-vs-translation similarity to a candidate.

    Scoring requires a multilingual backend: monolingual embeddings make
    cross-language cosine meaningless.  An already-scored candidate is only
    rescored when ``recompute`` is set.
    """
    if not backend.multilingual:
        raise InvariantError(
            f"embedding backend {backend.backend_id} is not multilingual; "
            "cross-language similarity scoring needs comparable spaces"
        )
    if candidate.score is not None and not recompute:
        raise InvariantError(
            f"candidate ({candidate.image_id}, {candidate.language}) from "
            f"{candidate.backend_id} is already scored; pass recompute=True"
        )
    source_vec, candidate_vec = embed([source_en, candidate.text], backend)
    score = cosine_similarity(source_vec, candidate_vec)
    return replace(candidate, score=score, scored_with=backend.backend_id)


@dataclass(frozen=True)
class ScoreFailure:
    """One candidate that could not be scored."""

    image_id: str
    language: str
    backend_id: str
    error: str


@dataclass
class ScoreBatch:
    """Scored candidates plus per-item failures from one scoring pass."""

    scored: list[TranslationCandidate] = field(default_factory=list)
    failures: list[ScoreFailure] = field(default_factory=list)
    skipped: int = 0


def score_all(
    manifest: DatasetManifest,
    candidates: Sequence[TranslationCandidate],
    backend: EmbeddingBackend,
    max_workers: int = 4,
) -> ScoreBatch:
    """Score a candidate batch against the manifest's selected captions.

    Already-scored candidates pass through untouched (so rescoring a
    checkpoint is free); failures are collected per candidate and never
    abort the batch.  Output order is deterministic regardless of thread
    scheduling.
    """
    records = {r.image_id: r for r in manifest.records}
    backend = ensure_reentrant(backend)
    batch = ScoreBatch()

    def run(candidate: TranslationCandidate) -> TranslationCandidate:
        record = records.get(candidate.image_id)
        if record is None:
            raise InvariantError(
                f"candidate references unknown image {candidate.image_id!r}"
            )
        if record.selected_caption is None:
            raise StageOrderError(
                f"image {candidate.image_id} has no selected caption; "
                "run selection first"
            )
        return score_candidate(record.selected_caption, candidate, backend)

    ordered = sorted(
        candidates,
        key=lambda c: (c.image_id, c.language, c.backend_id, c.backend_version),
    )
    pending = [c for c in ordered if c.score is None]
    batch.scored.extend(c for c in ordered if c.score is not None)
    batch.skipped = len(batch.scored)

    results: dict[int, TranslationCandidate | Exception] = {}
    if pending:
        with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
            futures = {
                index: pool.submit(run, candidate)
                for index, candidate in enumerate(pending)
            }
        for index, future in futures.items():
            exc = future.exception()
            results[index] = exc if exc is not None else future.result()

    for index, candidate in enumerate(pending):
        outcome = results[index]
        if isinstance(outcome, Exception):
            batch.failures.append(
                ScoreFailure(
                    image_id=candidate.image_id,
                    language=candidate.language,
                    backend_id=candidate.backend_id,
                    error=str(outcome),
                )
            )
        else:
            batch.scored.append(outcome)
    batch.scored.sort(
        key=lambda c: (c.image_id, c.language, c.backend_id, c.backend_version)
    )
    return batch


def _candidate_order(candidate: TranslationCandidate):
    return (
        parse_timestamp(candidate.created_at),
        candidate.backend_id,
        candidate.backend_version,
        candidate.text,
    )


def arbitrate(
    candidates: Sequence[TranslationCandidate],
    policy: FilterPolicy | None = None,
) -> TranslationEntry:
    """Fold one (image, language) candidate group into an entry.

    The highest score wins; ties go to the earlier ``created_at``, then the
    lexicographically smaller ``backend_id``.  Unscored candidates are kept
    in history for audit but never win.
    """
    if not candidates:
        raise InvariantError("arbitrate requires at least one candidate")
    keys = {(c.image_id, c.language) for c in candidates}
    if len(keys) != 1:
        raise InvariantError(f"candidates span multiple keys: {sorted(keys)}")
    scored = [c for c in candidates if c.score is not None]
    if not scored:
        image_id, language = next(iter(keys))
        raise InvariantError(
            f"no scored candidate for ({image_id}, {language}); "
            "run scoring before arbitration"
        )
    best = min(
        scored,
        key=lambda c: (-c.score, parse_timestamp(c.created_at), c.backend_id),
    )
    rest = sorted((c for c in candidates if c is not best), key=_candidate_order)
    if policy is None:
        policy = FilterPolicy()
    return TranslationEntry(
        image_id=best.image_id,
        language=best.language,
        current=best,
        history=tuple(rest),
        filtered_out=not policy.keeps(best.score),
    )


def maybe_substitute(
    entry: TranslationEntry,
    new: TranslationCandidate,
    policy: FilterPolicy | None = None,
) -> TranslationEntry:
    """Offer a new scored candidate to an existing entry.

    Substitution happens only on strict improvement; equal scores leave the
    incumbent in place.  Either way the newcomer is preserved (as current or
    in history) and the filtered_out flag is recomputed.
    """
    if new.score is None:
        raise InvariantError(
            f"candidate from {new.backend_id} is unscored; "
            "score it before offering for substitution"
        )
    if (new.image_id, new.language) != entry.key:
        raise InvariantError(
            f"candidate key ({new.image_id}, {new.language}) does not match "
            f"entry {entry.key}"
        )
    if policy is None:
        policy = FilterPolicy()
    current_score = entry.current.score
    if current_score is None or new.score > current_score:
        current = new
        history = entry.history + (entry.current,)
    else:
        current = entry.current
        history = entry.history + (new,)
    return TranslationEntry(
        image_id=entry.image_id,
        language=entry.language,
        current=current,
        history=history,
        filtered_out=not policy.keeps(current.score),
    )


def arbitrate_all(
    manifest: DatasetManifest,
    candidates: Iterable[TranslationCandidate],
    policy: FilterPolicy | None = None,
) -> DatasetManifest:
    """Fold a scored candidate batch into the manifest's entries.

    New keys are arbitrated from scratch; keys with an existing entry take
    the newcomers through maybe_substitute in deterministic order.
    Candidates already present on an entry (same backend id and version) are
    dropped, so re-running arbitration over a checkpoint is a no-op.
    """
    if policy is None:
        policy = manifest.filter_policy
    groups: dict[tuple[str, str], list[TranslationCandidate]] = {}
    for candidate in candidates:
        groups.setdefault((candidate.image_id, candidate.language), []).append(
            candidate
        )

    entries = dict(manifest.entries)
    for key in sorted(groups):
        group = sorted(groups[key], key=_candidate_order)
        entry = entries.get(key)
        if entry is None:
            entries[key] = arbitrate(group, policy=policy)
            continue
        seen = {
            (c.backend_id, c.backend_version)
            for c in (entry.current, *entry.history)
        }
        for candidate in group:
            if (candidate.backend_id, candidate.backend_version) in seen:
                continue
            seen.add((candidate.backend_id, candidate.backend_version))
            entry = maybe_substitute(entry, candidate, policy=policy)
        entries[key] = entry
    return manifest.with_entries(entries)


@dataclass(frozen=True)
class FilterReport:
    """Outcome counts from one apply_filter pass.

    Entries above the upper bound are dropped exactly like below-threshold
    ones but reported separately: a near-perfect similarity usually means an
    untranslated copy, so the report labels that bucket for audit.
    """

    policy: FilterPolicy
    total: int
    kept: int
    below: int
    above: int
    unscorable: int
    per_language: dict[str, dict[str, int]]

    def to_json(self) -> dict:
        return {
            "policy": self.policy.to_json(),
            "total": self.total,
            "kept": self.kept,
            "below": self.below,
            "above": self.above,
            "above_label": ABOVE_LABEL,
            "unscorable": self.unscorable,
            "per_language": self.per_language,
        }


def apply_filter(
    manifest: DatasetManifest,
    policy: FilterPolicy | None = None,
) -> tuple[DatasetManifest, FilterReport]:
    """Mark every entry outside the closed score interval as filtered out.

    Unscored entries are treated as dropped and counted separately.  The
    returned manifest carries the applied policy; applying the same policy
    twice is a no-op.
    """
    if policy is None:
        policy = manifest.filter_policy
    entries: dict[tuple[str, str], TranslationEntry] = {}
    counts = {"kept": 0, "below": 0, "above": 0, "unscorable": 0}
    per_language: dict[str, dict[str, int]] = {}
    for key in sorted(manifest.entries):
        entry = manifest.entries[key]
        score = entry.current.score
        if score is None:
            bucket = "unscorable"
            filtered = True
        elif score < policy.lower:
            bucket = "below"
            filtered = True
        elif score > policy.upper:
            bucket = "above"
            filtered = True
        else:
            bucket = "kept"
            filtered = False
        counts[bucket] += 1
        lang_counts = per_language.setdefault(
            entry.language, {"kept": 0, "below": 0, "above": 0, "unscorable": 0}
        )
        lang_counts[bucket] += 1
        if entry.filtered_out != filtered:
            entry = replace(entry, filtered_out=filtered)
        entries[key] = entry

    report = FilterReport(
        policy=policy,
        total=len(entries),
        kept=counts["kept"],
        below=counts["below"],
        above=counts["above"],
        unscorable=counts["unscorable"],
        per_language=per_language,
    )
    filtered_manifest = replace(
        manifest.with_entries(entries), filter_policy=policy
    )
    return filtered_manifest, report
