"""Command-line entry point for the whole pipeline.

Every subcommand takes one ``--config`` file; paths given on the command line
override the config's ``paths`` section.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import appconfig, corpus, evaluation, retrieval, synth, tables, traces
from .api import make_app
from .retrieval import Retriever
from .store import ThreadStore

logger = logging.getLogger(__name__)


def _load(config_path: str) -> appconfig.AppConfig:
    try:
        return appconfig.load_config(config_path)
    except (OSError, appconfig.ConfigError) as exc:
        raise click.ClickException(str(exc)) from exc


def _config_path(config: appconfig.AppConfig, override: str | None, key: str) -> Path:
    if override:
        return Path(override)
    try:
        return config.path(key)
    except appconfig.ConfigError as exc:
        raise click.ClickException(str(exc)) from exc


def _load_retriever(
    config: appconfig.AppConfig, corpus_path: Path, index_path: Path
) -> Retriever:
    records = corpus.load_corpus(corpus_path)
    index = retrieval.load_index(index_path)
    provider = appconfig.make_embedding_provider(config)
    return Retriever(index, records, provider, config.retrieval)


@click.group()
def main() -> None:
    """Retrieval-augmented clinical triage pipeline."""
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--output", "output_path", default=None, type=click.Path())
@click.option("--exclude", multiple=True, help="Title to drop; repeatable.")
def ingest(config_path: str, input_path: str, output_path: str | None, exclude: tuple[str, ...]) -> None:
    """Validate a raw corpus file and write the cleaned JSONL."""
    config = _load(config_path)
    try:
        records = corpus.load_corpus(input_path)
    except (corpus.CorpusError, FileNotFoundError) as exc:
        raise click.ClickException(str(exc)) from exc
    kept = corpus.exclude_records(records, list(exclude))
    out = _config_path(config, output_path, "corpus")
    corpus.write_corpus(kept, out)
    click.echo(f"ingested {len(kept)} records ({len(records) - len(kept)} excluded) -> {out}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--input", "input_path", default=None, type=click.Path())
@click.option("--output", "output_path", default=None, type=click.Path())
@click.option("--parallelism", default=1, show_default=True)
def summarise(config_path: str, input_path: str | None, output_path: str | None, parallelism: int) -> None:
    """Add LLM summaries to every corpus record."""
    config = _load(config_path)
    source = _config_path(config, input_path, "corpus")
    records = corpus.load_corpus(source)
    endpoint = appconfig.make_chat_endpoint(config, "summariser")
    summarised, report = corpus.summarise_corpus(
        records, endpoint, parallelism=parallelism
    )
    out = _config_path(config, output_path, "corpus")
    corpus.write_corpus(summarised, out)
    click.echo(
        f"summarised {report.record_count}/{len(records)} records "
        f"(mean reduction ratio {report.mean_reduction_ratio:.3f}) -> {out}"
    )
    if report.failed_titles:
        click.echo(f"failed: {', '.join(report.failed_titles)}", err=True)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", default=None, type=click.Path())
@click.option("--out", "out_path", default=None, type=click.Path())
def index(config_path: str, corpus_path: str | None, out_path: str | None) -> None:
    """Embed the corpus and persist the search index."""
    config = _load(config_path)
    records = corpus.load_corpus(_config_path(config, corpus_path, "corpus"))
    provider = appconfig.make_embedding_provider(config)
    built = retrieval.build_index(records, config.retrieval, provider)
    out = _config_path(config, out_path, "index")
    retrieval.save_index(built, out)
    click.echo(f"indexed {len(records)} records -> {len(built)} vectors at {out}")


@main.command("gen-queries")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", default=None, type=click.Path())
@click.option("--count", required=True, type=int)
@click.option("--output", "output_path", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option(
    "--dedup-against",
    default=None,
    type=click.Path(exists=True),
    help="Query file whose (condition, disposition) pairs must not reappear.",
)
def gen_queries(
    config_path: str,
    corpus_path: str | None,
    count: int,
    output_path: str,
    seed: int,
    dedup_against: str | None,
) -> None:
    """Generate synthetic patient queries."""
    config = _load(config_path)
    records = corpus.load_corpus(_config_path(config, corpus_path, "corpus"))
    endpoint = appconfig.make_chat_endpoint(config, "generator")
    outcome = synth.generate_query_dataset(records, endpoint, count, seed=seed)
    queries = outcome.queries
    removed: list[synth.SyntheticQuery] = []
    if dedup_against:
        held_out = synth.load_queries(dedup_against)
        queries, removed = synth.dedup_split(held_out, queries)
    synth.save_queries(queries, output_path)
    click.echo(
        f"generated {len(queries)} queries -> {output_path} "
        f"({len(outcome.refusals)} refusals, {len(outcome.failures)} failures, "
        f"{len(removed)} removed by dedup)"
    )


@main.command("gen-traces")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--queries", "queries_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", default=None, type=click.Path())
@click.option("--index", "index_path", default=None, type=click.Path())
@click.option("--output", "output_path", required=True, type=click.Path())
@click.option("--k", default=None, type=int, help="Documents per trace; config default.")
def gen_traces(
    config_path: str,
    queries_path: str,
    corpus_path: str | None,
    index_path: str | None,
    output_path: str,
    k: int | None,
) -> None:
    """Collect teacher reasoning traces over retrieved context."""
    config = _load(config_path)
    retriever = _load_retriever(
        config,
        _config_path(config, corpus_path, "corpus"),
        _config_path(config, index_path, "index"),
    )
    queries = synth.load_queries(queries_path)
    teacher = appconfig.make_chat_endpoint(config, "teacher")
    examples, skipped = traces.build_trace_dataset(
        queries, retriever, teacher, k=k or config.retrieval.k
    )
    traces.save_traces(examples, output_path)
    click.echo(f"built {len(examples)} traces ({len(skipped)} skipped) -> {output_path}")


@main.command("export-train")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--traces", "traces_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def export_train(config_path: str, traces_path: str, out_dir: str) -> None:
    """Export the fine-tuning bundle (examples, config, stats)."""
    _load(config_path)  # validates the file even though export needs no endpoints
    examples = traces.load_traces(traces_path)
    bundle = traces.export_training_bundle(examples, out_dir)
    stats = traces.dataset_stats(examples)
    click.echo(
        f"exported {stats.count} examples -> {bundle.examples_file} "
        f"(mean {stats.mean_token_length:.0f} tokens, max {stats.max_token_length})"
    )


@main.command("eval-retrieval")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--queries", "queries_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", default=None, type=click.Path())
@click.option("--index", "index_path", default=None, type=click.Path())
@click.option("--k", "cutoffs_text", default="1,5,10,30,50,100", show_default=True)
def eval_retrieval(
    config_path: str,
    queries_path: str,
    corpus_path: str | None,
    index_path: str | None,
    cutoffs_text: str,
) -> None:
    """Report retrieval precision at the given cutoffs."""
    config = _load(config_path)
    records = corpus.load_corpus(_config_path(config, corpus_path, "corpus"))
    built = retrieval.load_index(_config_path(config, index_path, "index"))
    provider = appconfig.make_embedding_provider(config)
    queries = synth.load_queries(queries_path)
    try:
        cutoffs = [int(c) for c in cutoffs_text.split(",") if c.strip()]
    except ValueError as exc:
        raise click.ClickException(f"bad --k list: {exc}") from exc
    table = retrieval.evaluate_p_at_k(
        built,
        [(q.symptoms_description, q.condition_title) for q in queries],
        cutoffs,
        provider,
    )
    label = "Summaries" if built.mode == "summaries" else "Full pages"
    click.echo(tables.format_p_at_k_table(table, label, len(records)))


@main.command("eval-predict")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--queries", "queries_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", default=None, type=click.Path())
@click.option("--index", "index_path", default=None, type=click.Path())
@click.option("--endpoint", "endpoint_name", default="predictor", show_default=True)
@click.option("--mode", type=click.Choice(evaluation.MODES), default="tool", show_default=True)
@click.option("--k", default=None, type=int)
@click.option("--runs", default=1, show_default=True)
@click.option("--no-retrieval", is_flag=True, help="Present the full condition list instead of retrieved context.")
@click.option("--budget-forcing", is_flag=True, help="Text mode only; needs a completion-capable endpoint.")
@click.option("--report", "report_path", default=None, type=click.Path())
def eval_predict(
    config_path: str,
    queries_path: str,
    corpus_path: str | None,
    index_path: str | None,
    endpoint_name: str,
    mode: str,
    k: int | None,
    runs: int,
    no_retrieval: bool,
    budget_forcing: bool,
    report_path: str | None,
) -> None:
    """Evaluate condition and next-action prediction accuracy."""
    config = _load(config_path)
    queries = synth.load_queries(queries_path)
    records = corpus.load_corpus(_config_path(config, corpus_path, "corpus"))
    cutoff = k or config.retrieval.k

    budget_policy = None
    if budget_forcing:
        if mode != "text":
            raise click.ClickException("--budget-forcing applies to text mode only")
        endpoint = appconfig.make_completion_endpoint(config, endpoint_name)
        from .budget import BudgetForcingPolicy

        budget_policy = BudgetForcingPolicy()
    else:
        endpoint = appconfig.make_chat_endpoint(config, endpoint_name)

    kwargs: dict = {"mode": mode, "k": cutoff, "runs": runs, "budget_policy": budget_policy}
    if no_retrieval:
        kwargs["all_conditions"] = [r.title for r in records]
    else:
        kwargs["retriever"] = _load_retriever(
            config,
            _config_path(config, corpus_path, "corpus"),
            _config_path(config, index_path, "index"),
        )
    try:
        outcome = evaluation.run_prediction_eval(queries, endpoint, **kwargs)
    except evaluation.EvaluationError as exc:
        raise click.ClickException(str(exc)) from exc

    label = endpoint_name
    click.echo(tables.format_accuracy_table([(label, None if no_retrieval else cutoff, outcome.aggregate)]))
    click.echo("")
    click.echo(tables.format_per_type_table(label, outcome.reports[0]))
    if report_path:
        payload = {
            "runs": [
                {
                    "n": r.n,
                    "condition_accuracy": r.condition_accuracy,
                    "disposition_accuracy": r.disposition_accuracy,
                    "per_query_type": {
                        qt.value: list(v) for qt, v in r.per_query_type.items()
                    },
                    "parse_failures": r.parse_failures,
                    "soft_parse_failures": r.soft_parse_failures,
                    "underestimation_errors": r.underestimation_errors,
                    "p_at_k": r.p_at_k,
                    "k": r.k,
                }
                for r in outcome.reports
            ],
            "aggregate": {
                "runs": outcome.aggregate.runs,
                "mean_condition_accuracy": outcome.aggregate.mean_condition_accuracy,
                "mean_disposition_accuracy": outcome.aggregate.mean_disposition_accuracy,
                "std_condition_accuracy": outcome.aggregate.std_condition_accuracy,
                "std_disposition_accuracy": outcome.aggregate.std_disposition_accuracy,
                "single_run": outcome.aggregate.single_run,
            },
        }
        Path(report_path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        click.echo(f"report -> {report_path}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--host", default=None)
@click.option("--port", default=None, type=int)
def serve(config_path: str, host: str | None, port: int | None) -> None:
    """Run the chat REST backend."""
    import uvicorn

    config = _load(config_path)
    retriever = _load_retriever(
        config, config.path("corpus"), config.path("index")
    )
    store = ThreadStore(config.paths.get("threads"))
    app = make_app(
        store,
        appconfig.make_chat_endpoint(config, "agent"),
        appconfig.make_chat_endpoint(config, "reasoner"),
        retriever,
        config.orchestrator_config(),
    )
    uvicorn.run(
        app,
        host=host or config.server.get("host", "127.0.0.1"),
        port=port or int(config.server.get("port", 8000)),
    )


if __name__ == "__main__":
    sys.exit(main())
