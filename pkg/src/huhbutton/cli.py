"""Operator command line.

Every subcommand is a thin shell over the library: parse flags, call one
operation, print its result. Usage mistakes exit 2 (click's default),
operational failures exit 1 with a message on stderr.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import bundle as bundle_mod
from . import server as server_mod
from .config import BadConfig, Settings, load_settings
from .emissions import RunLedger, estimate, format_estimate
from .ingest import (
    Transcript,
    TranscriptError,
    export_cue_json,
    normalize,
    parse_cue_json,
    parse_srt,
    parse_vtt,
)
from .prompts import MissingTemplate, default_templates, load_templates
from .provider import (
    CompletionProvider,
    MockProvider,
    ProviderFailure,
    RemoteProvider,
    RetryPolicy,
)
from .segmenter import restore_punctuation, segment

OPERATIONAL_ERRORS = (
    TranscriptError,
    ProviderFailure,
    bundle_mod.InvalidRange,
    bundle_mod.ProviderExhausted,
    bundle_mod.IoFailure,
    server_mod.NoBundles,
    server_mod.BindFailure,
    BadConfig,
    MissingTemplate,
    OSError,
    ValueError,
)

_FORMATS = {"srt": parse_srt, "vtt": parse_vtt, "json": parse_cue_json}


def _fail(err: Exception) -> "click.ClickException":
    return click.ClickException(f"{type(err).__name__}: {err}")


def _read_transcript(
    path: Path,
    fmt: str | None,
    video_id: str | None,
    language: str | None,
    overlap_tolerance_ms: int,
) -> Transcript:
    if fmt is None:
        suffix = path.suffix.lower().lstrip(".")
        fmt = {"srt": "srt", "vtt": "vtt", "json": "json"}.get(suffix)
        if fmt is None:
            raise click.UsageError(
                f"cannot tell the format of {path.name!r}; pass --format"
            )
    data = path.read_bytes()
    if fmt == "json":
        transcript = parse_cue_json(data, overlap_tolerance_ms=overlap_tolerance_ms)
        if video_id:
            transcript = Transcript(
                video_id, transcript.language, transcript.duration_ms, transcript.cues
            )
        if language:
            transcript = Transcript(
                transcript.video_id, language, transcript.duration_ms, transcript.cues
            )
        return transcript
    return _FORMATS[fmt](
        data,
        video_id=video_id or path.stem,
        language=language or "und",
        overlap_tolerance_ms=overlap_tolerance_ms,
    )


def _write_out(data: bytes, out: Path | None) -> None:
    if out is None:
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
    else:
        out.write_bytes(data)


def _make_provider(name: str, settings: Settings) -> CompletionProvider:
    if name == "mock":
        return MockProvider()
    if not settings.api_base_url or not settings.model:
        raise click.ClickException(
            "remote provider needs api_base_url and model "
            "(flags, HUH_API_BASE_URL/HUH_MODEL, or the config file)"
        )
    return RemoteProvider(
        settings.api_base_url,
        settings.model,
        settings.api_key,
        max_in_flight=settings.max_in_flight,
    )


def _templates(settings: Settings):
    if settings.template_dir:
        return load_templates(settings.template_dir)
    return default_templates()


format_option = click.option(
    "--format", "fmt", type=click.Choice(sorted(_FORMATS)), default=None,
    help="Input format; default guesses from the file suffix.",
)
config_option = click.option(
    "--config", "config_file", type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None, help="JSON config file; flags and HUH_* variables override it.",
)


@click.group()
@click.version_option(package_name="huhbutton")
def main() -> None:
    """Pre-generate, account, and serve timestamped video explanations."""


@main.command()
@click.argument("source", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@format_option
@config_option
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--video-id", default=None)
@click.option("--language", default=None)
@click.option("--overlap-tolerance-ms", type=int, default=None)
def ingest(source, fmt, config_file, output, video_id, language, overlap_tolerance_ms):
    """Parse a subtitle file and print the normalized cue JSON."""
    try:
        settings = load_settings(
            config_file, {"overlap_tolerance_ms": overlap_tolerance_ms}
        )
        transcript = normalize(
            _read_transcript(
                source, fmt, video_id, language, settings.overlap_tolerance_ms
            )
        )
        _write_out(export_cue_json(transcript), output)
    except OPERATIONAL_ERRORS as err:
        raise _fail(err)


@main.command()
@click.argument("source", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@format_option
@config_option
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path))
@click.option(
    "--strategy", type=click.Choice(["rule", "provider"]), default="rule",
    show_default=True,
)
@click.option("--provider", "provider_name", type=click.Choice(["mock", "remote"]),
              default="mock", show_default=True)
@click.option("--gap-ms", type=int, default=None, help="Pause length that ends a sentence.")
def punctuate(source, fmt, config_file, output, strategy, provider_name, gap_ms):
    """Restore sentence punctuation and print the cue JSON."""
    try:
        settings = load_settings(config_file, {"gap_ms": gap_ms})
        transcript = normalize(
            _read_transcript(source, fmt, None, None, settings.overlap_tolerance_ms)
        )
        provider = _make_provider(provider_name, settings) if strategy == "provider" else None
        restored = restore_punctuation(
            transcript,
            strategy,
            gap_ms=settings.gap_ms,
            provider=provider,
            templates=_templates(settings) if strategy == "provider" else None,
        )
        if isinstance(provider, RemoteProvider):
            provider.close()
        _write_out(export_cue_json(restored), output)
    except OPERATIONAL_ERRORS as err:
        raise _fail(err)


@main.command(name="segment")
@click.argument("source", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@format_option
@config_option
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path))
def segment_cmd(source, fmt, config_file, output):
    """Split a transcript into timestamped sentences (JSON array)."""
    try:
        settings = load_settings(config_file)
        transcript = normalize(
            _read_transcript(source, fmt, None, None, settings.overlap_tolerance_ms)
        )
        sentences = segment(transcript, settings.abbreviations)
        doc = [
            {
                "index": s.index,
                "start_ms": s.start_ms,
                "end_ms": s.end_ms,
                "text": s.text,
            }
            for s in sentences
        ]
        _write_out(bundle_mod.dump_json(doc), output)
    except OPERATIONAL_ERRORS as err:
        raise _fail(err)


@main.command()
@click.argument("source", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@format_option
@config_option
@click.option("--provider", "provider_name", type=click.Choice(["mock", "remote"]),
              required=True)
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path),
              default=Path("."), show_default=True)
@click.option("--interval-ms", type=int, default=None)
@click.option("--from-ms", type=int, default=0, show_default=True)
@click.option("--to-ms", type=int, default=None,
              help="Coverage end; default is the transcript duration.")
@click.option("--max-context-chars", type=int, default=None)
@click.option("--abort-threshold", type=float, default=None)
@click.option("--max-output-tokens", type=int, default=None)
@click.option("--temperature", type=float, default=None)
@click.option("--created-at", default=None,
              help="Fix the bundle timestamp for reproducible output.")
def generate(source, fmt, config_file, provider_name, out_dir, interval_ms, from_ms,
             to_ms, max_context_chars, abort_threshold, max_output_tokens,
             temperature, created_at):
    """Pre-generate explanations; write bundle.json and emissions.json."""
    try:
        settings = load_settings(
            config_file,
            {
                "interval_ms": interval_ms,
                "max_context_chars": max_context_chars,
                "abort_threshold": abort_threshold,
                "max_output_tokens": max_output_tokens,
                "temperature": temperature,
            },
        )
        transcript = normalize(
            _read_transcript(source, fmt, None, None, settings.overlap_tolerance_ms)
        )
        provider = _make_provider(provider_name, settings)
        ledger = RunLedger(transcript.video_id)
        try:
            bundle = bundle_mod.generate_bundle(
                transcript,
                provider,
                interval_ms=settings.interval_ms,
                coverage_start_ms=from_ms,
                coverage_end_ms=to_ms,
                max_context_chars=settings.max_context_chars,
                abbreviations=settings.abbreviations,
                templates=_templates(settings),
                max_output_tokens=settings.max_output_tokens,
                temperature=settings.temperature,
                abort_threshold=settings.abort_threshold,
                max_workers=settings.max_in_flight,
                retry_policy=RetryPolicy(
                    max_attempts=settings.retry_max_attempts,
                    backoff_base_ms=settings.retry_backoff_base_ms,
                ),
                ledger=ledger,
                created_at=created_at,
            )
        finally:
            if isinstance(provider, RemoteProvider):
                provider.close()
        out_dir.mkdir(parents=True, exist_ok=True)
        bundle_path = out_dir / "bundle.json"
        emissions_path = out_dir / "emissions.json"
        bundle_mod.save_bundle(bundle, bundle_path)
        ledger.write(emissions_path, settings.factor_kg_per_token)
        est = estimate(ledger.totals, settings.factor_kg_per_token)
        click.echo(
            f"wrote {bundle_path} and {emissions_path}: "
            f"{bundle.slot_count_per_level} slots per level, "
            f"{len(bundle.explanations)} generated explanations, "
            + format_estimate(est)
        )
    except OPERATIONAL_ERRORS as err:
        raise _fail(err)


@main.command()
@click.argument("bundle_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
def export(bundle_file, out_dir):
    """Write a bundle out as static manifest and slot files."""
    try:
        bundle = bundle_mod.load_bundle(bundle_file)
        manifest = bundle_mod.export_static(bundle, out_dir)
        click.echo(
            f"exported {manifest['video_id']} to {out_dir}: "
            f"{manifest['slot_count_per_level']} slot files per level "
            f"at levels {manifest['levels']}"
        )
    except OPERATIONAL_ERRORS as err:
        raise _fail(err)


@main.command()
@config_option
@click.option("--bundle-dir", type=click.Path(exists=True, file_okay=False, path_type=Path),
              required=True)
@click.option("--bind", default="127.0.0.1:8080", show_default=True)
@click.option("--cache-max-age", type=int, default=None,
              help="Cache-Control max-age seconds on every response.")
def serve(config_file, bundle_dir, bind, cache_max_age):
    """Serve loaded bundles over HTTP (read-only)."""
    try:
        settings = load_settings(config_file, {"cache_max_age_s": cache_max_age})
        server_mod.serve(bundle_dir, bind, cache_max_age_s=settings.cache_max_age_s)
    except OPERATIONAL_ERRORS as err:
        raise _fail(err)


@main.command()
@config_option
@click.option("--ledger", "ledger_file",
              type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--factor", type=float, default=None,
              help="kg CO2e per token; default is the shipped factor.")
def emissions(config_file, ledger_file, factor):
    """Print the carbon estimate for a recorded generation run."""
    try:
        settings = load_settings(config_file, {"factor_kg_per_token": factor})
        ledger = RunLedger.read(ledger_file)
        est = estimate(ledger.totals, settings.factor_kg_per_token)
        click.echo(f"{ledger.video_id}: {format_estimate(est)}")
    except OPERATIONAL_ERRORS as err:
        raise _fail(err)


@main.command(name="demo-fixture")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path),
              default=Path("demo"), show_default=True)
def demo_fixture(out_dir):
    """Write the sample transcript plus a mock bundle for demos and tests."""
    try:
        from importlib.resources import files

        raw = files("huhbutton.fixtures").joinpath("sample_lecture.srt").read_bytes()
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "sample_lecture.srt").write_bytes(raw)
        transcript = normalize(
            parse_srt(raw, video_id="sample-lecture", language="en")
        )
        restored = restore_punctuation(transcript, "rule")
        (out_dir / "sample_lecture.cues.json").write_bytes(export_cue_json(restored))
        ledger = RunLedger(restored.video_id)
        bundle = bundle_mod.generate_bundle(
            restored,
            MockProvider(),
            ledger=ledger,
            created_at="2024-01-01T00:00:00+00:00",
        )
        bundle_mod.save_bundle(bundle, out_dir / "bundle.json")
        ledger.write(out_dir / "emissions.json")
        click.echo(
            f"wrote demo fixture to {out_dir}: sample_lecture.srt, "
            f"sample_lecture.cues.json, bundle.json, emissions.json"
        )
    except OPERATIONAL_ERRORS as err:
        raise _fail(err)


if __name__ == "__main__":
    main()
