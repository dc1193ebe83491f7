"""Human adequacy ratings: ingestion, cleanup, and reliability statistics.

Raters score translations on a 1..10 adequacy scale and may flag
catastrophic errors.  This module reads the ratings CSV, drops straight-line
raters, and computes per-language summaries, Fleiss' kappa over the
Poor/Good/Excellent categories, and ICC(2,k) over complete rating panels.
"""
from __future__ import annotations

import csv
import logging
import math
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import parse_timestamp
from .errors import InvariantError, RatingsError
from .languages import validate_target_language

logger = logging.getLogger(__name__)

RATINGS_HEADER = (
    "rater_id",
    "image_id",
    "language",
    "score",
    "catastrophic",
    "submitted_at",
)

SCORE_MIN = 1
SCORE_MAX = 10

# Categorical buckets behind the agreement statistics.  The survey anchors
# the scale at 1 (completely wrong), 5 (gist with errors), 10 (perfect).
CATEGORIES = ("Poor", "Good", "Excellent")
_CATEGORY_BOUNDS = ((1, 4), (5, 7), (8, 10))

# Raters with at least this many ratings and zero variance are considered
# straight-liners and dropped wholesale.
INVALID_MIN_COUNT = 3


def category_index(score: int) -> int:
    for index, (low, high) in enumerate(_CATEGORY_BOUNDS):
        if low <= score <= high:
            return index
    raise InvariantError(f"score {score} outside {SCORE_MIN}..{SCORE_MAX}")


def category_of(score: int) -> str:
    return CATEGORIES[category_index(score)]


@dataclass(frozen=True)
class RatingRecord:
    """One rater's adequacy judgment of one (image, language) translation."""

    rater_id: str
    image_id: str
    language: str
    score: int
    catastrophic: bool
    submitted_at: str

    def __post_init__(self) -> None:
        if not self.rater_id or not self.image_id:
            raise InvariantError("rater_id and image_id must be non-empty")
        validate_target_language(self.language)
        if not isinstance(self.score, int) or isinstance(self.score, bool):
            raise InvariantError(f"score must be an integer, got {self.score!r}")
        if not (SCORE_MIN <= self.score <= SCORE_MAX):
            raise InvariantError(
                f"score {self.score} outside {SCORE_MIN}..{SCORE_MAX}"
            )
        parse_timestamp(self.submitted_at)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.rater_id, self.image_id, self.language)


@dataclass(frozen=True)
class RejectedRow:
    """One CSV row that failed validation, with its line number."""

    row: int
    reason: str


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered == "true":
        return True
    if lowered == "false":
        return False
    raise ValueError(f"boolean must be true or false, got {raw!r}")


def ingest_ratings(path: str | Path) -> tuple[list[RatingRecord], list[RejectedRow]]:
    """Read the ratings CSV, validating row by row.

    Bad rows are rejected with their line numbers instead of aborting the
    file.  Duplicate (rater, image, language) keys resolve to the last row
    in file order, matching append-order submission semantics.
    """
    path = Path(path)
    if not path.exists():
        raise RatingsError(f"ratings file {path} does not exist")
    records: dict[tuple[str, str, str], RatingRecord] = {}
    rejected: list[RejectedRow] = []
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise RatingsError(f"ratings file {path} is empty")
        if tuple(reader.fieldnames) != RATINGS_HEADER:
            raise RatingsError(
                f"unexpected header {reader.fieldnames}; "
                f"expected {','.join(RATINGS_HEADER)}"
            )
        # DictReader consumed line 1 (the header); data starts at line 2.
        for lineno, row in enumerate(reader, start=2):
            try:
                record = RatingRecord(
                    rater_id=(row["rater_id"] or "").strip(),
                    image_id=(row["image_id"] or "").strip(),
                    language=(row["language"] or "").strip(),
                    score=int((row["score"] or "").strip()),
                    catastrophic=_parse_bool(row["catastrophic"] or ""),
                    submitted_at=(row["submitted_at"] or "").strip(),
                )
            except Exception as exc:
                rejected.append(RejectedRow(row=lineno, reason=str(exc)))
                continue
            if record.key in records:
                logger.info(
                    "duplicate rating for %s at line %d replaces the earlier row",
                    record.key,
                    lineno,
                )
            records[record.key] = record
    return list(records.values()), rejected


def filter_invalid(
    records: Sequence[RatingRecord],
) -> tuple[list[RatingRecord], tuple[str, ...]]:
    """Drop straight-lining raters.

    A rater with INVALID_MIN_COUNT or more ratings, all carrying the same
    score, contributes no signal and is removed entirely.  Everyone else is
    untouched, so the operation is idempotent.
    """
    by_rater: dict[str, list[int]] = {}
    for record in records:
        by_rater.setdefault(record.rater_id, []).append(record.score)
    dropped = {
        rater
        for rater, scores in by_rater.items()
        if len(scores) >= INVALID_MIN_COUNT and len(set(scores)) == 1
    }
    kept = [r for r in records if r.rater_id not in dropped]
    return kept, tuple(sorted(dropped))


@dataclass(frozen=True)
class SummaryResult:
    """Mean and sample stddev of one language's scores."""

    mean: float
    stddev: float
    n: int
    degenerate: bool  # single rating: stddev is undefined, reported as 0


def language_summary(
    records: Sequence[RatingRecord], language: str
) -> SummaryResult:
    language = validate_target_language(language)
    scores = [r.score for r in records if r.language == language]
    if not scores:
        raise RatingsError(f"no ratings for language {language}")
    mean = sum(scores) / len(scores)
    if len(scores) == 1:
        return SummaryResult(mean=mean, stddev=0.0, n=1, degenerate=True)
    variance = sum((s - mean) ** 2 for s in scores) / (len(scores) - 1)
    return SummaryResult(
        mean=mean, stddev=math.sqrt(variance), n=len(scores), degenerate=False
    )


def fleiss_kappa(
    table: Sequence[Sequence[int]], subsample_to_min: bool = False
) -> float:
    """Fleiss' kappa over an items x categories count table.

    Every item must be rated by the same number of raters; with
    ``subsample_to_min`` set, over-full rows are deterministically reduced
    to the minimum row total (largest categories trimmed first).  The
    degenerate case where all mass sits in one category (chance agreement
    exactly 1) is defined as 1.0 and logged.
    """
    rows = [list(map(int, row)) for row in table]
    if len(rows) < 2:
        raise RatingsError("fleiss_kappa needs at least 2 items")
    if any(c < 0 for row in rows for c in row):
        raise RatingsError("category counts must be non-negative")
    width = len(rows[0])
    if any(len(row) != width for row in rows):
        raise RatingsError("all rows must have the same number of categories")
    totals = [sum(row) for row in rows]
    raters = min(totals)
    if raters < 2:
        raise RatingsError("every item needs at least 2 ratings")
    if any(t != raters for t in totals):
        if not subsample_to_min:
            raise RatingsError(
                f"unequal rater counts per item {sorted(set(totals))}; "
                "pass subsample_to_min=True to trim"
            )
        for row in rows:
            excess = sum(row) - raters
            while excess > 0:
                biggest = max(range(width), key=lambda j: (row[j], -j))
                row[biggest] -= 1
                excess -= 1

    n_items = len(rows)
    total = n_items * raters
    p_j = [sum(row[j] for row in rows) / total for j in range(width)]
    p_e = sum(p * p for p in p_j)
    p_bar = sum(
        (sum(c * c for c in row) - raters) / (raters * (raters - 1)) for row in rows
    ) / n_items
    if p_e == 1.0:
        logger.warning(
            "fleiss_kappa: all ratings in one category; chance agreement is 1, "
            "kappa defined as 1.0 by convention"
        )
        return 1.0
    return (p_bar - p_e) / (1.0 - p_e)


def icc_average(
    matrix: Sequence[Sequence[float]], drop_incomplete: bool = False
) -> float:
    """ICC(2,k): two-way random effects, average measures, absolute agreement.

    Computed as (MSR - MSE) / (MSR + (MSC - MSE) / n_items) from the two-way
    ANOVA mean squares.  Missing cells (None) are an error unless
    ``drop_incomplete`` enables listwise deletion of incomplete items.
    """
    rows: list[list[float]] = []
    for i, row in enumerate(matrix):
        cells = list(row)
        if any(c is None for c in cells):
            if not drop_incomplete:
                raise RatingsError(
                    f"item {i} has missing cells; "
                    "pass drop_incomplete=True for listwise deletion"
                )
            continue
        rows.append([float(c) for c in cells])
    n = len(rows)
    if n < 2:
        raise RatingsError("icc_average needs at least 2 complete items")
    k = len(rows[0])
    if k < 2:
        raise RatingsError("icc_average needs at least 2 raters")
    if any(len(row) != k for row in rows):
        raise RatingsError("all items must have the same number of raters")

    grand = sum(sum(row) for row in rows) / (n * k)
    row_means = [sum(row) / k for row in rows]
    col_means = [sum(row[j] for row in rows) / n for j in range(k)]
    ss_rows = k * sum((m - grand) ** 2 for m in row_means)
    ss_cols = n * sum((m - grand) ** 2 for m in col_means)
    ss_total = sum((cell - grand) ** 2 for row in rows for cell in row)
    ss_error = ss_total - ss_rows - ss_cols
    msr = ss_rows / (n - 1)
    msc = ss_cols / (k - 1)
    mse = ss_error / ((n - 1) * (k - 1))
    denominator = msr + (msc - mse) / n
    if math.isclose(denominator, 0.0, abs_tol=1e-15):
        raise RatingsError(
            "reliability is undefined: no variance anywhere in the matrix"
        )
    return (msr - mse) / denominator


@dataclass(frozen=True)
class Histogram:
    """Exact score counts 1..10 plus Poor/Good/Excellent shares."""

    counts: tuple[int, ...]
    category_shares: Mapping[str, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "category_shares", dict(self.category_shares))
        if len(self.counts) != SCORE_MAX:
            raise InvariantError(f"histogram needs {SCORE_MAX} buckets")
        total = sum(self.counts)
        if total:
            share_sum = sum(self.category_shares.values())
            if not math.isclose(share_sum, 1.0, abs_tol=1e-9):
                raise InvariantError(f"category shares sum to {share_sum}, not 1")


def score_histogram(records: Sequence[RatingRecord], language: str) -> Histogram:
    language = validate_target_language(language)
    scores = [r.score for r in records if r.language == language]
    if not scores:
        raise RatingsError(f"no ratings for language {language}")
    counts = [0] * SCORE_MAX
    for score in scores:
        counts[score - 1] += 1
    shares = {
        name: sum(counts[low - 1 : high]) / len(scores)
        for name, (low, high) in zip(CATEGORIES, _CATEGORY_BOUNDS)
    }
    return Histogram(counts=tuple(counts), category_shares=shares)


def rating_panel(
    records: Sequence[RatingRecord], language: str
) -> tuple[list[str], list[str], list[list[int]]]:
    """Complete items x raters score matrix for one language.

    Items are image ids, raters are rater ids, both sorted.  A missing
    (item, rater) cell means the panels are not aligned and agreement
    statistics would be fabricated, so it raises instead.
    """
    language = validate_target_language(language)
    cells: dict[tuple[str, str], int] = {}
    for record in records:
        if record.language == language:
            cells[(record.image_id, record.rater_id)] = record.score
    if not cells:
        raise RatingsError(f"no ratings for language {language}")
    items = sorted({image_id for image_id, _ in cells})
    raters = sorted({rater_id for _, rater_id in cells})
    matrix: list[list[int]] = []
    for image_id in items:
        row = []
        for rater_id in raters:
            score = cells.get((image_id, rater_id))
            if score is None:
                raise RatingsError(
                    f"incomplete panel for {language}: rater {rater_id} "
                    f"did not rate {image_id}"
                )
            row.append(score)
        matrix.append(row)
    return items, raters, matrix


def category_table(matrix: Sequence[Sequence[int]]) -> list[list[int]]:
    """Collapse a score matrix into items x categories counts."""
    table = []
    for row in matrix:
        counts = [0] * len(CATEGORIES)
        for score in row:
            counts[category_index(score)] += 1
        table.append(counts)
    return table


@dataclass(frozen=True)
class ReliabilityReport:
    """Per-language reliability summary of the human ratings."""

    language: str
    n_ratings: int
    n_raters: int
    mean: float
    stddev: float
    icc: float | None
    fleiss_kappa: float | None
    histogram: tuple[int, ...]
    category_shares: Mapping[str, float]
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "category_shares", dict(self.category_shares))
        if sum(self.histogram) != self.n_ratings:
            raise InvariantError(
                f"histogram sums to {sum(self.histogram)}, "
                f"but n_ratings is {self.n_ratings}"
            )

    def to_json(self) -> dict:
        return {
            "language": self.language,
            "n_ratings": self.n_ratings,
            "n_raters": self.n_raters,
            "mean": self.mean,
            "stddev": self.stddev,
            "icc": self.icc,
            "fleiss_kappa": self.fleiss_kappa,
            "histogram": list(self.histogram),
            "category_shares": dict(self.category_shares),
            "notes": list(self.notes),
        }


def reliability_report(
    records: Sequence[RatingRecord], language: str
) -> ReliabilityReport:
    """All reliability statistics for one language in one report.

    Agreement statistics need a complete aligned rater panel; when the data
    cannot provide one (or has no variance), the statistic is None and the
    reason lands in ``notes`` rather than being silently imputed.
    """
    language = validate_target_language(language)
    records = [r for r in records if r.language == language]
    if not records:
        raise RatingsError(f"no ratings for language {language}")
    summary = language_summary(records, language)
    histogram = score_histogram(records, language)
    notes: list[str] = []
    if summary.degenerate:
        notes.append("single rating: stddev reported as 0")

    icc: float | None = None
    kappa: float | None = None
    try:
        _, raters, matrix = rating_panel(records, language)
        if len(matrix) >= 2 and len(raters) >= 2:
            try:
                icc = icc_average(matrix)
            except RatingsError as exc:
                notes.append(f"icc: {exc}")
            try:
                kappa = fleiss_kappa(category_table(matrix))
            except RatingsError as exc:
                notes.append(f"fleiss_kappa: {exc}")
        else:
            notes.append("agreement needs >= 2 items and >= 2 raters")
    except RatingsError as exc:
        notes.append(str(exc))

    return ReliabilityReport(
        language=language,
        n_ratings=len(records),
        n_raters=len({r.rater_id for r in records}),
        mean=summary.mean,
        stddev=summary.stddev,
        icc=icc,
        fleiss_kappa=kappa,
        histogram=histogram.counts,
        category_shares=histogram.category_shares,
        notes=tuple(notes),
    )


class RatingStore:
    """Append-only CSV store behind the rating API.

    Appends are serialized with a lock and flushed per record, so a reader
    never sees a torn row; reads go through the same validation as offline
    ingestion.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def _ensure_header(self) -> None:
        if self.path.exists() and self.path.stat().st_size > 0:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8", newline="") as handle:
            csv.writer(handle).writerow(RATINGS_HEADER)

    def append(self, record: RatingRecord) -> None:
        with self._lock:
            self._ensure_header()
            with open(self.path, "a", encoding="utf-8", newline="") as handle:
                csv.writer(handle).writerow(
                    [
                        record.rater_id,
                        record.image_id,
                        record.language,
                        record.score,
                        "true" if record.catastrophic else "false",
                        record.submitted_at,
                    ]
                )
                handle.flush()
                os.fsync(handle.fileno())

    def load(self) -> list[RatingRecord]:
        if not self.path.exists() or self.path.stat().st_size == 0:
            return []
        records, rejected = ingest_ratings(self.path)
        for row in rejected:
            logger.warning(
                "ignoring bad row %d in %s: %s", row.row, self.path, row.reason
            )
        return records

    def rated_keys(self, rater_id: str) -> set[tuple[str, str]]:
        return {
            (r.image_id, r.language) for r in self.load() if r.rater_id == rater_id
        }


def reliability_table(reports: Iterable[ReliabilityReport]) -> str:
    from .qa import render_table

    columns: dict[str, dict[str, object]] = {}
    for report in reports:
        columns[report.language] = {
            "n_ratings": report.n_ratings,
            "n_raters": report.n_raters,
            "mean": report.mean,
            "stddev": report.stddev,
            "icc": report.icc,
            "fleiss_kappa": report.fleiss_kappa,
        }
    return render_table(columns)
