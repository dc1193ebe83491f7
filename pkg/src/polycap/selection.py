"""Representative-caption selection.

Each image carries five candidate captions; the one retained for
translation is the medoid: the caption with the highest mean cosine
similarity to the other four.  Ties resolve to the lowest index so repeated
runs produce identical manifests.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import CAPTIONS_PER_IMAGE, DatasetManifest, ImageRecord
from .embedding import EmbeddingBackend, ensure_reentrant, pairwise_similarity_matrix
from .errors import InvariantError


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of selecting the representative caption for one image."""

    image_id: str
    selected_index: int
    aggregate_score: float
    similarity_matrix: np.ndarray

    def __post_init__(self) -> None:
        n = self.similarity_matrix.shape[0]
        if self.similarity_matrix.shape != (n, n):
            raise InvariantError("similarity matrix must be square")
        if not 0 <= self.selected_index < n:
            raise InvariantError(f"selected_index {self.selected_index} out of range")


@dataclass
class SelectionReport:
    """Aggregate outcome of a selection pass over a manifest."""

    processed: int = 0
    skipped: int = 0
    scores: list[float] = field(default_factory=list)
    failures: dict[str, str] = field(default_factory=dict)


def row_aggregates(matrix: np.ndarray) -> np.ndarray:
    """Mean similarity of each caption to the others (diagonal excluded)."""
    n = matrix.shape[0]
    return (matrix.sum(axis=1) - matrix.diagonal()) / (n - 1)


def select_representative(
    record: ImageRecord, backend: EmbeddingBackend
) -> SelectionResult:
    """Pick the medoid caption among the record's five candidates."""
    if len(record.captions) != CAPTIONS_PER_IMAGE:
        raise InvariantError(
            f"image {record.image_id}: selection needs exactly "
            f"{CAPTIONS_PER_IMAGE} captions"
        )
    matrix = pairwise_similarity_matrix(record.captions, backend)
    aggregates = row_aggregates(matrix)
    index = int(np.argmax(aggregates))  # argmax takes the first max: lowest index
    return SelectionResult(
        image_id=record.image_id,
        selected_index=index,
        aggregate_score=float(aggregates[index]),
        similarity_matrix=matrix,
    )


def select_all(
    manifest: DatasetManifest,
    backend: EmbeddingBackend,
    force: bool = False,
    max_workers: int = 4,
) -> tuple[DatasetManifest, SelectionReport]:
    """Select a representative caption for every image record.

    Records that already carry a selection are skipped unless ``force``;
    per-record failures are collected in the report and never abort the
    pass, so partial progress survives.  Records are processed concurrently
    but merged in image_id order, so the result is order-independent.
    """
    backend = ensure_reentrant(backend)
    report = SelectionReport()
    pending: list[ImageRecord] = []
    for record in manifest.records:
        if record.selected_index is not None and not force:
            report.skipped += 1
        else:
            pending.append(record)

    results: dict[str, SelectionResult | Exception] = {}
    if pending:
        with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
            futures = {
                record.image_id: pool.submit(select_representative, record, backend)
                for record in pending
            }
        for image_id, future in futures.items():
            exc = future.exception()
            results[image_id] = exc if exc is not None else future.result()

    new_records = []
    for record in manifest.records:
        outcome = results.get(record.image_id)
        if outcome is None:
            new_records.append(record)
        elif isinstance(outcome, Exception):
            report.failures[record.image_id] = str(outcome)
            new_records.append(record)
        else:
            report.processed += 1
            report.scores.append(outcome.aggregate_score)
            new_records.append(
                replace(
                    record,
                    selected_index=outcome.selected_index,
                    selected_score=outcome.aggregate_score,
                )
            )
    return manifest.with_records(tuple(new_records)), report
