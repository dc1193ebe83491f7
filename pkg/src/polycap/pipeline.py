"""Pipeline configuration and staged orchestration.

A run executes select -> translate -> score -> arbitrate -> filter, saving
the manifest after every stage so a killed run resumes from its last
checkpoint.  Candidates that are not yet folded into manifest entries live
in a sidecar JSONL file next to the manifest.  With mock backends and a
pinned clock the whole run is deterministic down to the output bytes.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Sequence

import yaml

from .arbitration import apply_filter, arbitrate_all, score_all
from .corpus import (
    DatasetManifest,
    FilterPolicy,
    TranslationCandidate,
    load_manifest,
    save_manifest,
)
from .embedding import EmbeddingRegistry
from .errors import PolycapError, StageOrderError
from .languages import validate_target_language
from .mt import EnsembleRegistry, generate_candidates
from .selection import select_all

STAGES = ("select", "translate", "score", "arbitrate", "filter")

CANDIDATES_SUFFIX = ".candidates.jsonl"


def utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class PipelineConfig:
    """One structured config file drives every command.

    ``clock`` pins the timestamp written into candidate provenance; leaving
    it unset uses wall-clock UTC.  Pinning it (plus mock backends) makes two
    runs byte-identical, which is how golden-file tests hold the pipeline
    still.  Secrets never appear here; remote backends name an environment
    variable instead.
    """

    manifest_path: Path
    registry_path: Path
    selection_backend: str
    arbitration_backend: str
    filter_policy: FilterPolicy
    languages: tuple[str, ...]
    max_workers: int = 4
    serve_port: int = 8000
    ratings_path: Path = Path("ratings.csv")
    reports_dir: Path = Path("reports")
    clock: str | None = None

    def __post_init__(self) -> None:
        for language in self.languages:
            validate_target_language(language)
        if self.max_workers < 1:
            raise PolycapError("max_workers must be at least 1")

    def clock_fn(self) -> Callable[[], str]:
        if self.clock is None:
            return utc_now
        pinned = self.clock
        return lambda: pinned

    def candidates_path(self) -> Path:
        return self.manifest_path.with_name(
            self.manifest_path.name + CANDIDATES_SUFFIX
        )


def load_config(path: str | Path) -> PipelineConfig:
    """Parse the YAML config; relative paths resolve against the file."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise PolycapError(f"config file {path} does not exist") from None
    except yaml.YAMLError as exc:
        raise PolycapError(f"config file {path} is not valid YAML: {exc}") from exc
    if not isinstance(doc, Mapping):
        raise PolycapError(f"config file {path} must hold a mapping")
    base = path.parent

    def resolve(raw: str) -> Path:
        p = Path(raw)
        return p if p.is_absolute() else base / p

    try:
        manifest_path = resolve(doc["manifest"])
        registry_path = resolve(doc["registry"])
        embedding = doc.get("embedding", {})
        filter_doc = doc.get("filter", {})
        config = PipelineConfig(
            manifest_path=manifest_path,
            registry_path=registry_path,
            selection_backend=embedding.get("selection", "mock-english"),
            arbitration_backend=embedding.get("arbitration", "mock-multilingual"),
            filter_policy=FilterPolicy(
                lower=float(filter_doc.get("lower", FilterPolicy().lower)),
                upper=float(filter_doc.get("upper", FilterPolicy().upper)),
            ),
            languages=tuple(doc.get("languages", ())),
            max_workers=int(doc.get("workers", 4)),
            serve_port=int(doc.get("serve_port", 8000)),
            ratings_path=resolve(doc.get("ratings", "ratings.csv")),
            reports_dir=resolve(doc.get("reports_dir", "reports")),
            clock=doc.get("clock"),
        )
    except KeyError as exc:
        raise PolycapError(f"config is missing required key {exc}") from None
    # Fail at load time when the config names backends the registry lacks.
    load_registries(config)
    return config


def load_registries(
    config: PipelineConfig,
) -> tuple[EmbeddingRegistry, EnsembleRegistry]:
    """Load the backend registry file and check the config's references."""
    try:
        doc = yaml.safe_load(config.registry_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise PolycapError(
            f"registry file {config.registry_path} does not exist"
        ) from None
    except yaml.YAMLError as exc:
        raise PolycapError(f"registry file is not valid YAML: {exc}") from exc
    embeddings = EmbeddingRegistry.from_config(doc.get("embedding_backends", ()))
    ensemble = EnsembleRegistry.from_config(
        {"backends": doc.get("mt_backends", ()), "routing": doc.get("routing", {})}
    )
    embeddings.get(config.selection_backend)
    embeddings.get(config.arbitration_backend)
    for language in config.languages:
        ensemble.routed(language)
    return embeddings, ensemble


def pipeline_config_hash(config: PipelineConfig, ensemble: EnsembleRegistry) -> str:
    """Hash of the semantic run parameters, recorded in the manifest header.

    Operational knobs (paths, worker counts, ports) are excluded: two runs
    that differ only in those must still count as the same pipeline.
    """
    doc = {
        "schema": 1,
        "filter_policy": config.filter_policy.to_json(),
        "languages": sorted(config.languages),
        "selection_backend": config.selection_backend,
        "arbitration_backend": config.arbitration_backend,
        "routing": {lang: list(ids) for lang, ids in sorted(ensemble.routing.items())},
        "backend_versions": {
            backend_id: backend.backend_version
            for backend_id, backend in sorted(ensemble.backends.items())
        },
    }
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _load_sidecar(path: Path) -> list[TranslationCandidate]:
    if not path.exists():
        return []
    candidates = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                candidates.append(TranslationCandidate.from_json(json.loads(line)))
    return candidates


def _save_sidecar(path: Path, candidates: Sequence[TranslationCandidate]) -> None:
    import os
    import tempfile

    ordered = sorted(
        candidates,
        key=lambda c: (c.image_id, c.language, c.backend_id, c.backend_version),
    )
    payload = "".join(
        json.dumps(c.to_json(), sort_keys=True, ensure_ascii=False) + "\n"
        for c in ordered
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(payload)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _checkpoint(
    manifest: DatasetManifest, config: PipelineConfig, config_hash: str
) -> DatasetManifest:
    from dataclasses import replace

    manifest = replace(manifest, pipeline_config_hash=config_hash)
    save_manifest(manifest, config.manifest_path)
    return manifest


def stage_select(config: PipelineConfig) -> dict:
    embeddings, ensemble = load_registries(config)
    manifest = load_manifest(config.manifest_path)
    backend = embeddings.get(config.selection_backend)
    manifest, report = select_all(
        manifest, backend, max_workers=config.max_workers
    )
    _checkpoint(manifest, config, pipeline_config_hash(config, ensemble))
    return {
        "selected": report.processed,
        "skipped": report.skipped,
        "failed": len(report.failures),
    }


def stage_translate(config: PipelineConfig) -> dict:
    _, ensemble = load_registries(config)
    manifest = load_manifest(config.manifest_path)
    if not config.languages:
        return {"generated": 0, "skipped": 0, "failed": 0}
    sidecar = config.candidates_path()
    existing = _load_sidecar(sidecar)
    existing_keys = {
        (c.image_id, c.language, c.backend_id, c.backend_version) for c in existing
    }
    batch = generate_candidates(
        manifest,
        ensemble,
        languages=config.languages,
        clock=config.clock_fn(),
        max_workers=config.max_workers,
    )
    fresh = [
        c
        for c in batch.candidates
        if (c.image_id, c.language, c.backend_id, c.backend_version)
        not in existing_keys
    ]
    _save_sidecar(sidecar, existing + fresh)
    return {
        "generated": len(fresh),
        "skipped": batch.skipped + (len(batch.candidates) - len(fresh)),
        "failed": len(batch.failures),
    }


def stage_score(config: PipelineConfig) -> dict:
    embeddings, _ = load_registries(config)
    manifest = load_manifest(config.manifest_path)
    if not config.languages:
        return {"scored": 0, "skipped": 0, "failed": 0}
    sidecar = config.candidates_path()
    candidates = _load_sidecar(sidecar)
    if not candidates:
        if manifest.entries:
            return {"scored": 0, "skipped": 0, "failed": 0}
        raise StageOrderError(
            "no candidates to score; run the translate stage first"
        )
    backend = embeddings.get(config.arbitration_backend)
    batch = score_all(
        manifest, candidates, backend, max_workers=config.max_workers
    )
    failed_keys = {
        (f.image_id, f.language, f.backend_id) for f in batch.failures
    }
    # Failed candidates stay in the sidecar unscored so a later scoring
    # pass can retry them.
    leftovers = [
        c
        for c in candidates
        if c.score is None
        and (c.image_id, c.language, c.backend_id) in failed_keys
    ]
    _save_sidecar(sidecar, list(batch.scored) + leftovers)
    return {
        "scored": len(batch.scored) - batch.skipped,
        "skipped": batch.skipped,
        "failed": len(batch.failures),
    }


def stage_arbitrate(config: PipelineConfig) -> dict:
    _, ensemble = load_registries(config)
    manifest = load_manifest(config.manifest_path)
    if not config.languages:
        return {"entries": 0, "pending": 0}
    sidecar = config.candidates_path()
    candidates = _load_sidecar(sidecar)
    if not candidates:
        if manifest.entries:
            return {"entries": len(manifest.entries), "pending": 0}
        raise StageOrderError(
            "no scored candidates to arbitrate; run translate and score first"
        )
    ready = [c for c in candidates if c.score is not None]
    pending = [c for c in candidates if c.score is None]
    scored_keys = {(c.image_id, c.language) for c in ready}
    # A key whose only candidates are unscored stays in the sidecar for a
    # future scoring pass instead of failing the whole stage.
    orphans = [
        c for c in pending if (c.image_id, c.language) not in scored_keys
    ]
    manifest = arbitrate_all(manifest, ready, policy=config.filter_policy)
    manifest = _checkpoint(
        manifest, config, pipeline_config_hash(config, ensemble)
    )
    if orphans:
        _save_sidecar(sidecar, orphans)
    elif sidecar.exists():
        sidecar.unlink()
    return {"entries": len(manifest.entries), "pending": len(orphans)}


def stage_filter(config: PipelineConfig) -> dict:
    _, ensemble = load_registries(config)
    manifest = load_manifest(config.manifest_path)
    if config.languages and not manifest.entries:
        raise StageOrderError(
            "no entries to filter; run translate, score and arbitrate first"
        )
    manifest, report = apply_filter(manifest, config.filter_policy)
    _checkpoint(manifest, config, pipeline_config_hash(config, ensemble))
    config.reports_dir.mkdir(parents=True, exist_ok=True)
    report_path = config.reports_dir / "filter_report.json"
    report_path.write_text(
        json.dumps(report.to_json(), sort_keys=True, ensure_ascii=False, indent=2)
        + "\n",
        encoding="utf-8",
    )
    return {
        "kept": report.kept,
        "below": report.below,
        "above": report.above,
        "unscorable": report.unscorable,
    }


_STAGE_FUNCTIONS = {
    "select": stage_select,
    "translate": stage_translate,
    "score": stage_score,
    "arbitrate": stage_arbitrate,
    "filter": stage_filter,
}


@dataclass
class RunReport:
    """Per-stage counts from one pipeline run."""

    stages: dict[str, dict] = field(default_factory=dict)

    def format(self) -> str:
        lines = []
        for stage in STAGES:
            counts = self.stages.get(stage)
            if counts is None:
                continue
            summary = ", ".join(f"{k}={v}" for k, v in counts.items())
            lines.append(f"{stage:10s} {summary}")
        return "\n".join(lines) + "\n"


def run_stage(config: PipelineConfig, stage: str) -> dict:
    try:
        fn = _STAGE_FUNCTIONS[stage]
    except KeyError:
        raise PolycapError(
            f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}"
        ) from None
    return fn(config)


def run_pipeline(config: PipelineConfig) -> RunReport:
    """Execute every stage in order, checkpointing after each.

    A stage failure propagates after the preceding checkpoints are safely
    on disk, so rerunning the same command resumes rather than restarts.
    """
    report = RunReport()
    for stage in STAGES:
        report.stages[stage] = run_stage(config, stage)
    return report
