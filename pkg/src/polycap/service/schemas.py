"""Request and response bodies for the rating service API."""
from __future__ import annotations

from pydantic import BaseModel, Field


class RatingTask(BaseModel):
    """One translation for a rater to judge.

    ``task_id`` is the opaque handle the client posts back; it encodes the
    (image, language) key.
    """

    task_id: str
    image_id: str
    language: str
    english_caption: str
    translated_caption: str


class RatingSubmission(BaseModel):
    """Body of POST /api/ratings; score bounds enforced at the edge."""

    task_id: str = Field(min_length=1)
    rater_id: str = Field(min_length=1)
    score: int = Field(ge=1, le=10)
    catastrophic: bool = False


class RatingAccepted(BaseModel):
    """Echo of the stored rating."""

    rater_id: str
    image_id: str
    language: str
    score: int
    catastrophic: bool
    submitted_at: str


class Languages(BaseModel):
    """The language allowlist plus what this manifest actually serves."""

    source: str
    targets: list[str]
    available: list[str]


class ReliabilityReportBody(BaseModel):
    """Per-language reliability statistics over the rating store."""

    language: str
    n_ratings: int
    n_raters: int
    mean: float
    stddev: float
    icc: float | None
    fleiss_kappa: float | None
    histogram: list[int]
    category_shares: dict[str, float]
    notes: list[str]
