"""Operational command line: simulate, annotate, export-train, eval, report,
stats, serve."""

from __future__ import annotations

import json
from pathlib import Path

import click

from . import __version__
from .aggregation import call_record_to_dict, corpus_rollup
from .backends import ChatCompletionsBackend, FaultInjectionBackend, OracleBackend, ScriptedBackend
from .backends.llm import ChatEndpointConfig
from .context import ContextPolicy, FULL_HISTORY, export_training_triples, write_training_file
from .evaluation import AnnotationCache, corpus_stats, run_eval
from .model import default_taxonomy, load_taxonomy, validate_conversation
from .serialize import canonical_json, read_corpus, write_transcript_jsonl
from .simulator import (
    default_noise_profile,
    generate_corpus,
    load_noise_profile,
    load_stage_scripts,
)


def _load_policy(path: str | None) -> ContextPolicy:
    if path is None:
        return FULL_HISTORY
    with open(path, "r", encoding="utf-8") as fh:
        return ContextPolicy.from_dict(json.load(fh))


def _build_backend(backend_id: str, config_path: str | None, taxonomy):
    """Resolve a backend id against a backends config file; bare ids
    'oracle' and 'broken' work without one."""
    configs = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        for raw in doc.get("backends", []):
            configs[raw.get("id") or raw.get("backend_id")] = raw
    raw = configs.get(backend_id)
    if raw is None:
        if backend_id == "oracle":
            return OracleBackend(taxonomy=taxonomy)
        if backend_id == "broken":
            return ScriptedBackend("not json at all", identity="broken", taxonomy=taxonomy)
        raise click.ClickException(f"unknown backend {backend_id!r} (no config entry)")
    kind = raw.get("type", "chat_completions")
    if kind == "oracle":
        return OracleBackend(identity=backend_id, taxonomy=taxonomy)
    if kind == "chat_completions":
        return ChatCompletionsBackend(ChatEndpointConfig.from_dict(raw), taxonomy=taxonomy)
    if kind == "fault_injection":
        inner = OracleBackend(taxonomy=taxonomy)
        return FaultInjectionBackend(
            inner, raw["task"], float(raw["wrong_fraction"]), identity=backend_id
        )
    raise click.ClickException(f"unknown backend type {kind!r}")


@click.group()
@click.version_option(version=__version__, prog_name="callscope")
def main() -> None:
    """Conversational intelligence engine for debt-collection contact centers."""


@main.command()
@click.option("--scenario-config", type=click.Path(exists=True), default=None, help="Stage-script definition file.")
@click.option("--noise", "noise_file", type=click.Path(exists=True), default=None, help="Noise profile file.")
@click.option("--count-per-type", "count", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--format", "fmt", type=click.Choice(["jsonl", "json"]), default="jsonl", show_default=True)
def simulate(scenario_config, noise_file, count, seed, out_dir, fmt) -> None:
    """Generate a synthetic corpus with gold annotations."""
    scripts = load_stage_scripts(scenario_config) if scenario_config else load_stage_scripts()
    noise = load_noise_profile(noise_file) if noise_file else default_noise_profile()
    counts = {scenario: count for scenario in scripts}
    calls = generate_corpus(counts, noise, seed, scripts)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    conversations = [call.conversation for call in calls]
    for conv in conversations:
        problems = validate_conversation(conv)
        if problems:
            raise click.ClickException(f"{conv.conversation_id}: {problems[0]}")
    if fmt == "jsonl":
        path = out / "corpus.jsonl"
        write_transcript_jsonl(conversations, path)
        click.echo(f"wrote {len(conversations)} conversations to {path}")
    else:
        from .serialize import conversation_to_json

        for conv in conversations:
            (out / f"{conv.conversation_id}.json").write_text(
                conversation_to_json(conv), encoding="utf-8"
            )
        click.echo(f"wrote {len(conversations)} conversation files to {out}")


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--backend", "backend_id", default="oracle", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None, help="Backends config file.")
@click.option("--policy", "policy_path", type=click.Path(exists=True), default=None)
@click.option("--taxonomy", "taxonomy_path", type=click.Path(exists=True), default=None)
@click.option("--cache", "cache_path", type=click.Path(), default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
def annotate(in_path, backend_id, config_path, policy_path, taxonomy_path, cache_path, out_path) -> None:
    """Annotate a transcript corpus and aggregate call records."""
    from .service.sessions import batch_annotate

    taxonomy = load_taxonomy(taxonomy_path) if taxonomy_path else default_taxonomy()
    corpus = read_corpus(in_path)
    backend = _build_backend(backend_id, config_path, taxonomy)
    cache = AnnotationCache(cache_path) if cache_path else None
    result = batch_annotate(corpus, backend, _load_policy(policy_path), cache=cache)
    with open(out_path, "w", encoding="utf-8") as fh:
        for call in result.calls:
            fh.write(canonical_json(call.to_dict()))
            fh.write("\n")
    click.echo(
        f"annotated {result.n_annotated}/{result.n_turns} turns across "
        f"{len(result.calls)} calls; {len(result.gaps)} gaps"
    )
    if result.gaps:
        click.echo(f"gap manifest: {canonical_json(result.gaps[:5])}...", err=True)


@main.command("export-train")
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--policy", "policy_path", type=click.Path(exists=True), default=None)
@click.option("--template-version", default="v1", show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def export_train(in_path, policy_path, template_version, out_path) -> None:
    """Export instruction-input-output training triples (line-delimited)."""
    corpus = read_corpus(in_path)
    result = export_training_triples(
        corpus, _load_policy(policy_path), instruction_version=template_version
    )
    n = write_training_file(result.samples, out_path)
    click.echo(f"wrote {n} samples ({result.total_turns} turns) to {out_path}")


@main.command("eval")
@click.option("--backend", "backend_id", default="oracle", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--test", "test_path", type=click.Path(exists=True), required=True)
@click.option("--policy", "policy_path", type=click.Path(exists=True), default=None)
@click.option("--taxonomy", "taxonomy_path", type=click.Path(exists=True), default=None)
@click.option("--cache", "cache_path", type=click.Path(), default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
def eval_command(backend_id, config_path, test_path, policy_path, taxonomy_path, cache_path, out_path) -> None:
    """Score a backend against a gold test corpus."""
    taxonomy = load_taxonomy(taxonomy_path) if taxonomy_path else default_taxonomy()
    corpus = read_corpus(test_path)
    backend = _build_backend(backend_id, config_path, taxonomy)
    cache = AnnotationCache(cache_path) if cache_path else None
    report = run_eval(backend, corpus, _load_policy(policy_path), cache=cache)
    Path(out_path).write_text(report.to_json(), encoding="utf-8")
    click.echo(report.to_json())


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True, help="Annotated corpus (annotate output).")
@click.option("--out", "out_path", type=click.Path(), required=True)
def report(in_path, out_path) -> None:
    """Summarize call records into business metrics."""
    from .service.sessions import AnnotatedCall

    records = []
    with open(in_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            call = AnnotatedCall.from_dict(json.loads(line))
            if call.record is not None:
                records.append(call.record)
    summary = corpus_rollup(records)
    payload = {
        "n_records": summary.n_records,
        "empty": summary.empty,
        "promise_rate": summary.promise_rate,
        "mean_promised_amount": summary.mean_promised_amount,
        "escalation_rate": summary.escalation_rate,
        "outcome_distribution": dict(sorted(summary.outcome_distribution.items())),
        "records": [call_record_to_dict(r) for r in records],
    }
    Path(out_path).write_text(canonical_json(payload), encoding="utf-8")
    click.echo(f"rolled up {summary.n_records} records -> {out_path}")


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
def stats(in_path) -> None:
    """Corpus statistics (conversations, turns, mean turns/conversation)."""
    stats_result = corpus_stats(read_corpus(in_path))
    click.echo(canonical_json(stats_result.to_dict()))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
def serve(config_path) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service.app import ServiceConfig, create_app

    config = ServiceConfig.load(config_path)
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")


if __name__ == "__main__":
    main()
