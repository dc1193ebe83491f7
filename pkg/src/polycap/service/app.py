"""FastAPI application serving rating tasks and reliability reports.

The service is the only network surface of the toolkit: rater clients fetch
tasks, post ratings, and read reports through it.  Tasks are handed out in
image-id order per language, skipping anything a rater has already rated,
and filtered-out entries are never exposed.
"""
from __future__ import annotations

from typing import Callable

from fastapi import FastAPI, HTTPException, Query, Request, Response

from ..corpus import DatasetManifest, TranslationEntry, load_manifest
from ..errors import InvariantError, LanguageError, RatingsError
from ..humaneval import RatingRecord, RatingStore, reliability_report
from ..languages import SOURCE_LANGUAGE, TARGET_LANGUAGES, validate_target_language
from .schemas import (
    Languages,
    RatingAccepted,
    RatingSubmission,
    RatingTask,
    ReliabilityReportBody,
)


def task_id_for(entry: TranslationEntry) -> str:
    return f"{entry.image_id}:{entry.language}"


def parse_task_id(task_id: str) -> tuple[str, str]:
    image_id, sep, language = task_id.rpartition(":")
    if not sep or not image_id or not language:
        raise HTTPException(
            status_code=400, detail=f"malformed task_id {task_id!r}"
        )
    return image_id, language


def create_app(
    manifest: DatasetManifest,
    store: RatingStore,
    clock: Callable[[], str] | None = None,
) -> FastAPI:
    if clock is None:
        from ..pipeline import utc_now

        clock = utc_now
    app = FastAPI(title="caption-translation rating service")
    app.state.manifest = manifest
    app.state.store = store
    app.state.clock = clock

    @app.get("/api/languages", response_model=Languages)
    def languages(request: Request) -> Languages:
        m: DatasetManifest = request.app.state.manifest
        available = sorted({e.language for e in m.retained_entries()})
        return Languages(
            source=SOURCE_LANGUAGE,
            targets=sorted(TARGET_LANGUAGES),
            available=available,
        )

    @app.get("/api/tasks/next", response_model=RatingTask)
    def next_task(
        request: Request,
        rater_id: str = Query(min_length=1),
        language: str = Query(min_length=1),
    ):
        m: DatasetManifest = request.app.state.manifest
        rating_store: RatingStore = request.app.state.store
        try:
            language = validate_target_language(language)
        except LanguageError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        rated = rating_store.rated_keys(rater_id)
        for entry in m.retained_entries():
            if entry.language != language:
                continue
            if (entry.image_id, entry.language) in rated:
                continue
            record = m.record(entry.image_id)
            return RatingTask(
                task_id=task_id_for(entry),
                image_id=entry.image_id,
                language=entry.language,
                english_caption=record.selected_caption or record.captions[0],
                translated_caption=entry.current.text,
            )
        return Response(status_code=204)

    @app.post("/api/ratings", response_model=RatingAccepted, status_code=201)
    def submit_rating(request: Request, body: RatingSubmission) -> RatingAccepted:
        m: DatasetManifest = request.app.state.manifest
        rating_store: RatingStore = request.app.state.store
        image_id, language = parse_task_id(body.task_id)
        entry = m.entries.get((image_id, language))
        if entry is None:
            raise HTTPException(
                status_code=404, detail=f"no such task {body.task_id!r}"
            )
        if entry.filtered_out:
            raise HTTPException(
                status_code=400,
                detail=f"task {body.task_id!r} is filtered out and not ratable",
            )
        try:
            record = RatingRecord(
                rater_id=body.rater_id,
                image_id=image_id,
                language=language,
                score=body.score,
                catastrophic=body.catastrophic,
                submitted_at=request.app.state.clock(),
            )
        except (InvariantError, LanguageError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        rating_store.append(record)
        return RatingAccepted(
            rater_id=record.rater_id,
            image_id=record.image_id,
            language=record.language,
            score=record.score,
            catastrophic=record.catastrophic,
            submitted_at=record.submitted_at,
        )

    @app.get("/api/reports/humaneval", response_model=ReliabilityReportBody)
    def humaneval_report(
        request: Request, language: str = Query(min_length=1)
    ) -> ReliabilityReportBody:
        rating_store: RatingStore = request.app.state.store
        try:
            language = validate_target_language(language)
        except LanguageError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        records = rating_store.load()
        try:
            report = reliability_report(records, language)
        except RatingsError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        return ReliabilityReportBody(**report.to_json())

    return app


def app_from_config(config) -> FastAPI:
    """Build the service from a pipeline config (manifest + ratings paths)."""
    manifest = load_manifest(config.manifest_path)
    if not any(True for _ in manifest.retained_entries()):
        raise RatingsError(
            "manifest has no retained entries to rate; run the pipeline first"
        )
    store = RatingStore(config.ratings_path)
    return create_app(manifest, store, clock=config.clock_fn())
