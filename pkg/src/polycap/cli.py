"""Command-line interface: pipeline stages, QA reports, and serve mode.

Every command is a thin wrapper over the library; the config file is the
single source of paths, languages, and backend wiring.
"""
from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import click

from . import humaneval as he
from . import pipeline as pl
from . import qa
from .corpus import FilterPolicy, load_manifest
from .errors import PolycapError
from .languages import SOURCE_LANGUAGE
from .metrics import chrf_pp as chrf_fn
from .metrics import corpus_bleu, tokenize
from .mt import MTBackend


def _config(ctx: click.Context) -> pl.PipelineConfig:
    path = ctx.obj.get("config_path")
    if path is None:
        raise click.UsageError("this command needs --config/-c")
    try:
        return pl.load_config(path)
    except PolycapError as exc:
        raise click.ClickException(str(exc)) from exc


def _run_stage(ctx: click.Context, stage: str) -> None:
    config = _config(ctx)
    try:
        counts = pl.run_stage(config, stage)
    except PolycapError as exc:
        raise click.ClickException(str(exc)) from exc
    summary = ", ".join(f"{k}={v}" for k, v in counts.items())
    click.echo(f"{stage}: {summary}")


@click.group()
@click.option(
    "--config",
    "-c",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Pipeline config file (YAML).",
)
@click.pass_context
def main(ctx: click.Context, config_path: Path | None) -> None:
    """Dataset curation for context-preserving multilingual captioning."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path


@main.command()
@click.pass_context
def select(ctx: click.Context) -> None:
    """Pick the representative caption per image."""
    _run_stage(ctx, "select")


@main.command()
@click.pass_context
def translate(ctx: click.Context) -> None:
    """Generate candidate translations from every routed backend."""
    _run_stage(ctx, "translate")


@main.command()
@click.pass_context
def score(ctx: click.Context) -> None:
    """Score candidates by source-vs-translation embedding similarity."""
    _run_stage(ctx, "score")


@main.command()
@click.pass_context
def arbitrate(ctx: click.Context) -> None:
    """Retain the best-scoring candidate per (image, language)."""
    _run_stage(ctx, "arbitrate")


@main.command("filter")
@click.option("--lower", type=float, default=None, help="Interval lower bound.")
@click.option("--upper", type=float, default=None, help="Interval upper bound.")
@click.pass_context
def filter_cmd(ctx: click.Context, lower: float | None, upper: float | None) -> None:
    """Drop entries whose similarity falls outside the closed interval."""
    config = _config(ctx)
    if lower is not None or upper is not None:
        policy = FilterPolicy(
            lower=lower if lower is not None else config.filter_policy.lower,
            upper=upper if upper is not None else config.filter_policy.upper,
        )
        config = replace(config, filter_policy=policy)
    try:
        counts = pl.stage_filter(config)
    except PolycapError as exc:
        raise click.ClickException(str(exc)) from exc
    summary = ", ".join(f"{k}={v}" for k, v in counts.items())
    click.echo(f"filter: {summary}")


@main.command()
@click.pass_context
def run(ctx: click.Context) -> None:
    """Run select, translate, score, arbitrate and filter in order."""
    config = _config(ctx)
    try:
        report = pl.run_pipeline(config)
    except PolycapError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(report.format(), nl=False)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=None, help="Override the config port.")
@click.pass_context
def serve(ctx: click.Context, host: str, port: int | None) -> None:
    """Serve rating tasks and reports over HTTP."""
    import uvicorn

    from .service import app_from_config

    config = _config(ctx)
    try:
        app = app_from_config(config)
    except PolycapError as exc:
        raise click.ClickException(str(exc)) from exc
    uvicorn.run(app, host=host, port=port if port is not None else config.serve_port)


def _stat_languages(config: pl.PipelineConfig, languages: tuple[str, ...]):
    return languages if languages else config.languages


def _emit_stats(ctx: click.Context, languages: tuple[str, ...]) -> None:
    config = _config(ctx)
    manifest = load_manifest(config.manifest_path)
    stats = []
    for language in _stat_languages(config, languages):
        try:
            stat = qa.dataset_stats(manifest, language)
        except PolycapError as exc:
            raise click.ClickException(str(exc)) from exc
        doc = stat.to_json()
        doc["avg_words"] = qa.avg_word_count(manifest, language)
        qa.write_report(doc, config.reports_dir / f"stats_{language}.json")
        stats.append(stat)
    if not stats:
        click.echo("no languages configured")
        return
    try:
        eng_words = qa.avg_word_count(manifest, SOURCE_LANGUAGE)
        click.echo(f"{SOURCE_LANGUAGE} baseline avg_words: {eng_words:.4f}")
    except PolycapError:
        pass
    click.echo(qa.stats_table(stats), nl=False)


@main.command()
@click.option("--language", "-l", "languages", multiple=True)
@click.pass_context
def stats(ctx: click.Context, languages: tuple[str, ...]) -> None:
    """Token and character statistics per language."""
    _emit_stats(ctx, languages)


def _reverse_backend(ensemble, language: str) -> MTBackend:
    for backend in ensemble.routed(language):
        if backend.supports(language, SOURCE_LANGUAGE):
            return backend
    raise click.ClickException(
        f"no routed backend for {language} supports back-translation"
    )


@main.group("qa")
def qa_group() -> None:
    """Automatic quality assessment."""


@qa_group.command("backtranslate")
@click.option("--language", "-l", "languages", multiple=True)
@click.pass_context
def qa_backtranslate(ctx: click.Context, languages: tuple[str, ...]) -> None:
    """Back-translation similarity, BLEU and chrF++ per language."""
    config = _config(ctx)
    embeddings, ensemble = pl.load_registries(config)
    manifest = load_manifest(config.manifest_path)
    emb = embeddings.get(config.arbitration_backend)
    reports = []
    for language in _stat_languages(config, languages):
        mt_backend = _reverse_backend(ensemble, language)
        try:
            report, failures = qa.quality_report(
                manifest, language, mt_backend, emb, max_workers=config.max_workers
            )
        except PolycapError as exc:
            raise click.ClickException(str(exc)) from exc
        qa.write_report(report.to_json(), config.reports_dir / f"qa_{language}.json")
        reports.append(report)
        for failure in failures:
            click.echo(
                f"warning: {failure.language}/{failure.image_id}: {failure.error}",
                err=True,
            )
    if not reports:
        click.echo("no languages configured")
        return
    click.echo(qa.quality_table(reports), nl=False)


def _read_lines(path: Path) -> list[str]:
    return path.read_text(encoding="utf-8").splitlines()


@qa_group.command("bleu")
@click.option("--hyp", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--ref", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--x100", is_flag=True, help="Print on the 0-100 scale.")
def qa_bleu(hyp: Path, ref: Path, x100: bool) -> None:
    """Corpus BLEU between two line-aligned text files."""
    try:
        value = corpus_bleu(
            [tokenize(line) for line in _read_lines(hyp)],
            [tokenize(line) for line in _read_lines(ref)],
        )
    except PolycapError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"{value * 100.0:.4f}" if x100 else f"{value:.6f}")


@qa_group.command("chrf")
@click.option("--hyp", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--ref", type=click.Path(exists=True, path_type=Path), required=True)
def qa_chrf(hyp: Path, ref: Path) -> None:
    """chrF++ between two line-aligned text files."""
    try:
        value = chrf_fn(_read_lines(hyp), _read_lines(ref))
    except PolycapError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"{value:.4f}")


@qa_group.command("stats")
@click.option("--language", "-l", "languages", multiple=True)
@click.pass_context
def qa_stats(ctx: click.Context, languages: tuple[str, ...]) -> None:
    """Alias of the top-level stats command."""
    _emit_stats(ctx, languages)


@main.group("humaneval")
def humaneval_group() -> None:
    """Human rating ingestion and reliability reports."""


@humaneval_group.command("ingest")
@click.argument("path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.pass_context
def humaneval_ingest(ctx: click.Context, path: Path) -> None:
    """Validate a ratings CSV and append it to the configured store."""
    config = _config(ctx)
    try:
        records, rejected = he.ingest_ratings(path)
    except PolycapError as exc:
        raise click.ClickException(str(exc)) from exc
    store = he.RatingStore(config.ratings_path)
    for record in records:
        store.append(record)
    for row in rejected:
        click.echo(f"rejected row {row.row}: {row.reason}", err=True)
    click.echo(f"ingested {len(records)} rating(s), rejected {len(rejected)} row(s)")


@humaneval_group.command("report")
@click.option("--language", "-l", "languages", multiple=True)
@click.option(
    "--keep-invalid",
    is_flag=True,
    help="Skip dropping zero-variance raters before computing statistics.",
)
@click.pass_context
def humaneval_report(
    ctx: click.Context, languages: tuple[str, ...], keep_invalid: bool
) -> None:
    """Reliability statistics per language from the rating store."""
    config = _config(ctx)
    store = he.RatingStore(config.ratings_path)
    records = store.load()
    if not records:
        click.echo("no ratings")
        return
    if not keep_invalid:
        records, dropped = he.filter_invalid(records)
        if dropped:
            click.echo(f"dropped zero-variance rater(s): {', '.join(dropped)}")
    targets = languages if languages else sorted({r.language for r in records})
    reports = []
    for language in targets:
        try:
            report = he.reliability_report(records, language)
        except PolycapError as exc:
            raise click.ClickException(str(exc)) from exc
        qa.write_report(
            report.to_json(), config.reports_dir / f"humaneval_{language}.json"
        )
        reports.append(report)
    if not reports:
        click.echo("no ratings")
        return
    click.echo(he.reliability_table(reports), nl=False)
    for report in reports:
        for note in report.notes:
            click.echo(f"note [{report.language}]: {note}")


@main.command("validate")
@click.pass_context
def validate_cmd(ctx: click.Context) -> None:
    """Load and fully validate the manifest, printing a short summary."""
    config = _config(ctx)
    try:
        manifest = load_manifest(config.manifest_path)
    except PolycapError as exc:
        raise click.ClickException(str(exc)) from exc
    retained = sum(1 for _ in manifest.retained_entries())
    click.echo(
        json.dumps(
            {
                "records": len(manifest.records),
                "entries": len(manifest.entries),
                "retained": retained,
                "config_hash": manifest.pipeline_config_hash,
            },
            indent=2,
            sort_keys=True,
        )
    )


if __name__ == "__main__":
    main()
