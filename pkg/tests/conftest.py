"""Shared fixtures: small manifests, candidate factories, pipeline configs."""
from __future__ import annotations

from pathlib import Path

import pytest

from polycap.corpus import (
    DatasetManifest,
    ImageRecord,
    TranslationCandidate,
    TranslationEntry,
    save_manifest,
)

CLOCK = "2024-01-01T00:00:00Z"


def make_record(index: int = 0, selected: bool = False) -> ImageRecord:
    captions = (
        f"a dog runs in the park {index}",
        f"a dog running through a park {index}",
        f"the dog sprints across the grass {index}",
        f"a cat sleeps on a mat {index}",
        f"a brown dog runs outside {index}",
    )
    if selected:
        return ImageRecord(
            image_id=f"img{index}",
            captions=captions,
            selected_index=0,
            selected_score=0.5,
        )
    return ImageRecord(image_id=f"img{index}", captions=captions)


def make_candidate(
    image_id: str = "img0",
    language: str = "yor",
    text: str | None = None,
    backend_id: str = "mock-a",
    backend_version: str = "1",
    created_at: str = CLOCK,
    score: float | None = None,
) -> TranslationCandidate:
    return TranslationCandidate(
        image_id=image_id,
        language=language,
        text=text if text is not None else f"{language}⟨caption for {image_id}⟩",
        backend_id=backend_id,
        backend_version=backend_version,
        created_at=created_at,
        score=score,
        scored_with="mock-multilingual" if score is not None else None,
    )


def make_entry(
    image_id: str = "img0",
    language: str = "yor",
    score: float = 0.7,
    filtered_out: bool = False,
    text: str | None = None,
) -> TranslationEntry:
    return TranslationEntry(
        image_id=image_id,
        language=language,
        current=make_candidate(
            image_id=image_id, language=language, text=text, score=score
        ),
        filtered_out=filtered_out,
    )


@pytest.fixture
def two_image_manifest() -> DatasetManifest:
    return DatasetManifest(records=(make_record(0), make_record(1)))


REGISTRY_YAML = """\
embedding_backends:
  - kind: mock
    backend_id: mock-english
    seed: 0
  - kind: mock-multilingual
    backend_id: mock-multilingual
    seed: 0
mt_backends:
  - kind: mock
    backend_id: mock-a
    languages: [yor, hau]
  - kind: mock
    backend_id: mock-b
    marker: b
    languages: [yor]
routing:
  yor: [mock-a, mock-b]
  hau: [mock-a]
"""

CONFIG_YAML = """\
manifest: manifest.jsonl
registry: registry.yaml
ratings: ratings.csv
reports_dir: reports
languages: [yor, hau]
clock: "2024-01-01T00:00:00Z"
workers: 4
serve_port: 8140
filter:
  lower: 0.53
  upper: 0.98
embedding:
  selection: mock-english
  arbitration: mock-multilingual
"""


def write_pipeline_fixture(
    tmp_path: Path,
    n_images: int = 2,
    config_yaml: str = CONFIG_YAML,
    registry_yaml: str = REGISTRY_YAML,
) -> Path:
    """Lay out manifest + registry + config for a real pipeline run."""
    manifest = DatasetManifest(
        records=tuple(make_record(i) for i in range(n_images))
    )
    save_manifest(manifest, tmp_path / "manifest.jsonl")
    (tmp_path / "registry.yaml").write_text(registry_yaml, encoding="utf-8")
    config_path = tmp_path / "config.yaml"
    config_path.write_text(config_yaml, encoding="utf-8")
    return config_path


@pytest.fixture
def pipeline_config_path(tmp_path: Path) -> Path:
    return write_pipeline_fixture(tmp_path)


# One pass/fail line per acceptance criterion, printed after the run.
ACCEPTANCE_RESULTS: list[tuple[str, bool]] = []


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(name): acceptance criterion label for the summary"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        ACCEPTANCE_RESULTS.append((marker.args[0], report.passed))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}")
