"""Canonical dataset model and durable manifest persistence.

A manifest is a UTF-8, line-delimited JSON file: the first line is a header
object carrying ``schema_version``, ``pipeline_config_hash`` and the active
similarity filter bounds; every following line is a tagged record, either an
image with its five English captions or a translation entry for one
(image, language) key.  Manifests are immutable values once loaded; every
mutation produces a new manifest and writers serialize through atomic
write-temp-then-rename replacement.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Iterator, Mapping

from .errors import InvariantError, ManifestError
from .languages import SOURCE_LANGUAGE, validate_language, validate_target_language

SCHEMA_VERSION = 1
CAPTIONS_PER_IMAGE = 5

# Similarity interval defaults; translations scoring outside are dropped.
DEFAULT_FILTER_LOWER = 0.53
DEFAULT_FILTER_UPPER = 0.98


def parse_timestamp(value: str) -> datetime:
    """Parse an RFC 3339 timestamp, tolerating the trailing-Z form."""
    try:
        return datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError as exc:
        raise InvariantError(f"bad RFC 3339 timestamp {value!r}: {exc}") from exc


@dataclass(frozen=True)
class FilterPolicy:
    """Closed similarity interval a retained translation must fall in."""

    lower: float = DEFAULT_FILTER_LOWER
    upper: float = DEFAULT_FILTER_UPPER

    def __post_init__(self) -> None:
        if not (0.0 <= self.lower < self.upper <= 1.0):
            raise InvariantError(
                f"filter bounds must satisfy 0 <= lower < upper <= 1, "
                f"got [{self.lower}, {self.upper}]"
            )

    def keeps(self, score: float | None) -> bool:
        """True when a score lies inside the closed interval."""
        return score is not None and self.lower <= score <= self.upper

    def to_json(self) -> dict:
        return {"lower": self.lower, "upper": self.upper}

    @classmethod
    def from_json(cls, raw: Mapping) -> "FilterPolicy":
        return cls(lower=float(raw["lower"]), upper=float(raw["upper"]))


@dataclass(frozen=True)
class ImageRecord:
    """One source image with its five English candidate captions."""

    image_id: str
    captions: tuple[str, ...]
    selected_index: int | None = None
    selected_score: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "captions", tuple(self.captions))
        if not self.image_id:
            raise InvariantError("image_id must be non-empty")
        if len(self.captions) != CAPTIONS_PER_IMAGE:
            raise InvariantError(
                f"image {self.image_id}: expected {CAPTIONS_PER_IMAGE} captions, "
                f"got {len(self.captions)}"
            )
        if any(not c for c in self.captions):
            raise InvariantError(f"image {self.image_id}: captions must be non-empty")
        if (self.selected_index is None) != (self.selected_score is None):
            raise InvariantError(
                f"image {self.image_id}: selected_index and selected_score "
                "must be set together"
            )
        if self.selected_index is not None and not (
            0 <= self.selected_index < CAPTIONS_PER_IMAGE
        ):
            raise InvariantError(
                f"image {self.image_id}: selected_index {self.selected_index} "
                "out of range"
            )

    @property
    def selected_caption(self) -> str | None:
        if self.selected_index is None:
            return None
        return self.captions[self.selected_index]

    def to_json(self) -> dict:
        doc: dict = {
            "kind": "image",
            "image_id": self.image_id,
            "captions": list(self.captions),
        }
        if self.selected_index is not None:
            doc["selected_index"] = self.selected_index
            doc["selected_score"] = self.selected_score
        return doc

    @classmethod
    def from_json(cls, raw: Mapping) -> "ImageRecord":
        return cls(
            image_id=str(raw["image_id"]),
            captions=tuple(str(c) for c in raw["captions"]),
            selected_index=raw.get("selected_index"),
            selected_score=raw.get("selected_score"),
        )


@dataclass(frozen=True)
class TranslationCandidate:
    """One backend's translation of a caption into one target language."""

    image_id: str
    language: str
    text: str
    backend_id: str
    backend_version: str
    created_at: str
    score: float | None = None
    scored_with: str | None = None

    def __post_init__(self) -> None:
        if not self.text:
            raise InvariantError(
                f"candidate ({self.image_id}, {self.language}): text is empty"
            )
        validate_target_language(self.language)
        if not self.backend_id:
            raise InvariantError("candidate backend_id must be non-empty")
        parse_timestamp(self.created_at)
        if self.score is not None and not (-1.0 <= self.score <= 1.0):
            raise InvariantError(
                f"candidate ({self.image_id}, {self.language}): similarity "
                f"{self.score} outside [-1, 1]"
            )

    def to_json(self) -> dict:
        doc: dict = {
            "image_id": self.image_id,
            "language": self.language,
            "text": self.text,
            "backend_id": self.backend_id,
            "backend_version": self.backend_version,
            "created_at": self.created_at,
        }
        if self.score is not None:
            doc["score"] = self.score
        if self.scored_with is not None:
            doc["scored_with"] = self.scored_with
        return doc

    @classmethod
    def from_json(cls, raw: Mapping) -> "TranslationCandidate":
        return cls(
            image_id=str(raw["image_id"]),
            language=str(raw["language"]),
            text=str(raw["text"]),
            backend_id=str(raw["backend_id"]),
            backend_version=str(raw["backend_version"]),
            created_at=str(raw["created_at"]),
            score=raw.get("score"),
            scored_with=raw.get("scored_with"),
        )


@dataclass(frozen=True)
class TranslationEntry:
    """The retained best translation per (image, language) plus its history.

    Superseded candidates stay in ``history`` so the substitution chain is
    auditable; monotone retention means the current candidate always holds
    the highest score ever offered.
    """

    image_id: str
    language: str
    current: TranslationCandidate
    history: tuple[TranslationCandidate, ...] = ()
    filtered_out: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "history", tuple(self.history))
        for cand in (self.current, *self.history):
            if (cand.image_id, cand.language) != (self.image_id, self.language):
                raise InvariantError(
                    f"entry ({self.image_id}, {self.language}): candidate from "
                    f"({cand.image_id}, {cand.language}) does not belong here"
                )
        scored = [c.score for c in self.history if c.score is not None]
        if scored:
            if self.current.score is None or self.current.score < max(scored):
                raise InvariantError(
                    f"entry ({self.image_id}, {self.language}): current score "
                    f"{self.current.score} below a history score {max(scored)}"
                )

    @property
    def key(self) -> tuple[str, str]:
        return (self.image_id, self.language)

    def to_json(self) -> dict:
        return {
            "kind": "entry",
            "image_id": self.image_id,
            "language": self.language,
            "current": self.current.to_json(),
            "history": [c.to_json() for c in self.history],
            "filtered_out": self.filtered_out,
        }

    @classmethod
    def from_json(cls, raw: Mapping) -> "TranslationEntry":
        return cls(
            image_id=str(raw["image_id"]),
            language=str(raw["language"]),
            current=TranslationCandidate.from_json(raw["current"]),
            history=tuple(
                TranslationCandidate.from_json(c) for c in raw.get("history", ())
            ),
            filtered_out=bool(raw.get("filtered_out", False)),
        )


@dataclass(frozen=True)
class DatasetManifest:
    """Immutable snapshot of the whole dataset with provenance."""

    records: tuple[ImageRecord, ...] = ()
    entries: Mapping[tuple[str, str], TranslationEntry] = field(default_factory=dict)
    pipeline_config_hash: str = ""
    schema_version: int = SCHEMA_VERSION
    filter_policy: FilterPolicy = field(default_factory=FilterPolicy)

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "entries", dict(self.entries))

    def record(self, image_id: str) -> ImageRecord:
        for rec in self.records:
            if rec.image_id == image_id:
                return rec
        raise KeyError(image_id)

    def with_records(self, records: tuple[ImageRecord, ...]) -> "DatasetManifest":
        return replace(self, records=tuple(records))

    def with_entry(self, entry: TranslationEntry) -> "DatasetManifest":
        entries = dict(self.entries)
        entries[entry.key] = entry
        return replace(self, entries=entries)

    def with_entries(
        self, entries: Mapping[tuple[str, str], TranslationEntry]
    ) -> "DatasetManifest":
        return replace(self, entries=dict(entries))

    def retained_entries(self) -> Iterator[TranslationEntry]:
        """Entries that survived the similarity filter, in stable order."""
        for key in sorted(self.entries):
            entry = self.entries[key]
            if not entry.filtered_out:
                yield entry

    def entries_for_language(self, language: str) -> list[TranslationEntry]:
        language = validate_language(language)
        return [
            self.entries[key] for key in sorted(self.entries) if key[1] == language
        ]


def validate_manifest(manifest: DatasetManifest) -> None:
    """Check the cross-record invariants; raises InvariantError naming the record."""
    seen_images: set[str] = set()
    for rec in manifest.records:
        if rec.image_id in seen_images:
            raise InvariantError(f"duplicate image record {rec.image_id!r}")
        seen_images.add(rec.image_id)
    policy = manifest.filter_policy
    for key, entry in manifest.entries.items():
        if key != entry.key:
            raise InvariantError(
                f"entry keyed {key} carries ({entry.image_id}, {entry.language})"
            )
        if entry.image_id not in seen_images:
            raise InvariantError(
                f"entry ({entry.image_id}, {entry.language}) references an "
                "unknown image"
            )
        if entry.current.score is not None:
            expected = not policy.keeps(entry.current.score)
            if entry.filtered_out != expected:
                raise InvariantError(
                    f"entry ({entry.image_id}, {entry.language}): filtered_out="
                    f"{entry.filtered_out} inconsistent with score "
                    f"{entry.current.score} under [{policy.lower}, {policy.upper}]"
                )


def _dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write the manifest atomically with deterministic record ordering.

    Refuses to write anything when an invariant is violated; the target file
    is replaced in one rename so concurrent readers never observe a partial
    manifest.
    """
    validate_manifest(manifest)
    path = Path(path)
    header = {
        "schema_version": manifest.schema_version,
        "pipeline_config_hash": manifest.pipeline_config_hash,
        "filter_policy": manifest.filter_policy.to_json(),
    }
    lines = [_dumps(header)]
    for rec in sorted(manifest.records, key=lambda r: r.image_id):
        lines.append(_dumps(rec.to_json()))
    for key in sorted(manifest.entries):
        lines.append(_dumps(manifest.entries[key].to_json()))
    payload = "\n".join(lines) + "\n"

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(
        prefix=f".{path.name}.", suffix=".tmp", dir=path.parent
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(payload)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and fully validate a manifest file.

    Parse failures and invariant violations are reported with the offending
    line number.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest file {path} does not exist")
    records: list[ImageRecord] = []
    entries: dict[tuple[str, str], TranslationEntry] = {}
    header: dict | None = None

    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if lineno == 1:
                if not isinstance(doc, dict) or "schema_version" not in doc:
                    raise ManifestError(
                        "first line must be a header with schema_version", line=1
                    )
                if doc["schema_version"] != SCHEMA_VERSION:
                    raise ManifestError(
                        f"unsupported schema_version {doc['schema_version']}", line=1
                    )
                header = doc
                continue
            kind = doc.get("kind")
            try:
                if kind == "image":
                    records.append(ImageRecord.from_json(doc))
                elif kind == "entry":
                    entry = TranslationEntry.from_json(doc)
                    if entry.key in entries:
                        raise ManifestError(
                            f"duplicate entry for ({entry.image_id}, "
                            f"{entry.language})",
                            line=lineno,
                        )
                    entries[entry.key] = entry
                else:
                    raise ManifestError(f"unknown record kind {kind!r}", line=lineno)
            except ManifestError:
                raise
            except (InvariantError, KeyError, TypeError, ValueError) as exc:
                raise ManifestError(str(exc), line=lineno) from exc

    if header is None:
        raise ManifestError("file is empty; a header line is required", line=1)
    policy = (
        FilterPolicy.from_json(header["filter_policy"])
        if "filter_policy" in header
        else FilterPolicy()
    )
    manifest = DatasetManifest(
        records=tuple(records),
        entries=entries,
        pipeline_config_hash=str(header.get("pipeline_config_hash", "")),
        schema_version=int(header["schema_version"]),
        filter_policy=policy,
    )
    try:
        validate_manifest(manifest)
    except InvariantError as exc:
        raise ManifestError(str(exc)) from exc
    return manifest


__all__ = [
    "CAPTIONS_PER_IMAGE",
    "DEFAULT_FILTER_LOWER",
    "DEFAULT_FILTER_UPPER",
    "SOURCE_LANGUAGE",
    "SCHEMA_VERSION",
    "FilterPolicy",
    "ImageRecord",
    "TranslationCandidate",
    "TranslationEntry",
    "DatasetManifest",
    "load_manifest",
    "save_manifest",
    "validate_manifest",
]
