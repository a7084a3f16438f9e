"""``xampler``: every pipeline stage as a subcommand over file artifacts.

Values resolve as flag > config file > built-in default. The effective
configuration of a run is echoed to stdout and written next to any report
file for provenance. Exit codes: 0 success, 1 validation error, 2 runtime
failure.
"""

from __future__ import annotations

import json
import sys
import tempfile
from pathlib import Path
from typing import Sequence

import click

from . import pipeline
from .corpus import Dataset, load_dataset
from .embedding import EmbeddingStore, load_embeddings
from .evalharness import macro_average, sweep_k, sweep_layers, sweep_shots
from .reporting import (
    ReportTable,
    ablation_gaps,
    emit_report,
    load_fixture,
    render_sweep,
    render_table,
)
from .retrieval import RetrievalSetting
from .scorer import (
    DEFAULT_TEMPLATE,
    HttpScorer,
    PromptSpec,
    RetryPolicy,
    ScorerClient,
    mock_scorer,
    resolve_scorer_url,
)
from .trainer import AdamWConfig, TrainerConfig, load_head

CONFIG_VERSION = 1


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise click.UsageError(f"{path}: malformed JSON config: {err.msg}") from err
    if not isinstance(cfg, dict):
        raise click.UsageError(f"{path}: config must be a JSON object")
    if "version" not in cfg:
        raise click.UsageError("missing config key 'version'")
    if cfg["version"] != CONFIG_VERSION:
        raise click.UsageError(f"unsupported config version {cfg['version']!r}")
    return cfg


def _lookup(cfg: dict, dotted: str):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


def _value(cfg: dict, dotted: str, flag, default=None, required: bool = False):
    if flag is not None:
        return flag
    found = _lookup(cfg, dotted)
    if found is not None:
        return found
    if required:
        raise click.UsageError(f"missing config key '{dotted}'")
    return default


def _parse_values(raw: str) -> list[int]:
    values = []
    for token in raw.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            values.append(int(token))
        except ValueError:
            raise click.UsageError(f"invalid sweep value '{token}'") from None
    if not values:
        raise click.UsageError("empty sweep range")
    return values


def _echo_config(effective: dict, report_path: str | Path | None = None) -> None:
    payload = json.dumps(effective, sort_keys=True)
    click.echo(f"config {payload}")
    if report_path is not None:
        sidecar = Path(report_path).with_suffix(".config.json")
        sidecar.write_text(
            json.dumps(effective, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )


def _scorer_options(fn):
    fn = click.option("--scorer", "scorer_kind", type=click.Choice(["mock", "http"]), default=None)(fn)
    fn = click.option("--mock-rule", type=click.Choice(["label-echo", "similarity-gated"]), default=None)(fn)
    fn = click.option("--url", default=None, help="Scorer endpoint (http kind).")(fn)
    fn = click.option("--parallelism", type=int, default=None)(fn)
    fn = click.option("--timeout", type=float, default=None)(fn)
    return fn


def _template_options(fn):
    fn = click.option("--template", default=None, help="Prompt template with [sentence] and [label].")(fn)
    fn = click.option("--separator", default=None, help="Separator between prompt clauses.")(fn)
    return fn


def _build_spec(cfg: dict, template, separator) -> PromptSpec:
    return PromptSpec(
        template=_value(cfg, "template.text", template, DEFAULT_TEMPLATE),
        separator=_value(cfg, "template.separator", separator, "\n"),
    )


def _build_scorer(
    cfg: dict, scorer_kind, mock_rule, url, parallelism, timeout
) -> tuple[ScorerClient, dict]:
    kind = _value(cfg, "scorer.kind", scorer_kind, "mock")
    if kind == "mock":
        rule = _value(cfg, "scorer.rule", mock_rule, "label-echo")
        return mock_scorer(rule), {"kind": "mock", "rule": rule}
    if kind == "http":
        endpoint = resolve_scorer_url(_value(cfg, "scorer.url", url))
        retry = RetryPolicy(
            base_delay=float(_value(cfg, "scorer.retry.base_delay", None, 0.5)),
            max_attempts=int(_value(cfg, "scorer.retry.max_attempts", None, 3)),
        )
        client = HttpScorer(
            endpoint,
            retry=retry,
            timeout=float(_value(cfg, "scorer.timeout", timeout, 60.0)),
        )
        meta = {
            "kind": "http",
            "url": endpoint,
            "parallelism": int(_value(cfg, "scorer.parallelism", parallelism, 1)),
        }
        return client, meta
    raise click.UsageError(f"unknown scorer kind '{kind}'")


def _trainer_options(fn):
    fn = click.option("--epochs", type=int, default=None)(fn)
    fn = click.option("--batch-size", "--batch", "batch_size", type=int, default=None)(fn)
    fn = click.option("--learning-rate", "--lr", "learning_rate", type=float, default=None)(fn)
    fn = click.option("--temperature", type=float, default=None)(fn)
    fn = click.option("--weight-decay", type=float, default=None)(fn)
    fn = click.option("--beta1", type=float, default=None)(fn)
    fn = click.option("--beta2", type=float, default=None)(fn)
    fn = click.option("--eps", type=float, default=None)(fn)
    fn = click.option("--activation", type=click.Choice(["identity", "tanh"]), default=None)(fn)
    fn = click.option("--d-out", type=int, default=None)(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    return fn


def _build_trainer(cfg: dict, **kw) -> TrainerConfig:
    adamw = AdamWConfig(
        beta1=float(_value(cfg, "trainer.beta1", kw.get("beta1"), 0.9)),
        beta2=float(_value(cfg, "trainer.beta2", kw.get("beta2"), 0.999)),
        eps=float(_value(cfg, "trainer.eps", kw.get("eps"), 1e-8)),
        weight_decay=float(_value(cfg, "trainer.weight_decay", kw.get("weight_decay"), 0.01)),
    )
    d_out = _value(cfg, "trainer.d_out", kw.get("d_out"))
    return TrainerConfig(
        epochs=int(_value(cfg, "trainer.epochs", kw.get("epochs"), 50)),
        batch_size=int(_value(cfg, "trainer.batch_size", kw.get("batch_size"), 16)),
        learning_rate=float(_value(cfg, "trainer.learning_rate", kw.get("learning_rate"), 2e-5)),
        adamw=adamw,
        temperature=float(_value(cfg, "trainer.temperature", kw.get("temperature"), 0.05)),
        seed=int(_value(cfg, "seed", kw.get("seed"), 0)),
        max_pos_per_query=int(_value(cfg, "trainer.max_pos_per_query", None, 1)),
        activation=_value(cfg, "trainer.activation", kw.get("activation"), "identity"),
        d_out=int(d_out) if d_out is not None else None,
    )


def _trainer_meta(cfg: TrainerConfig) -> dict:
    return {
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "temperature": cfg.temperature,
        "weight_decay": cfg.adamw.weight_decay,
        "activation": cfg.activation,
        "seed": cfg.seed,
    }


def _load_eval_sets(
    eval_paths: Sequence[str], emb_paths: Sequence[str]
) -> tuple[list[Dataset], dict[str, EmbeddingStore]]:
    if not eval_paths:
        raise click.UsageError("missing config key 'paths.eval_sets'")
    if len(eval_paths) != len(emb_paths):
        raise click.UsageError(
            f"{len(eval_paths)} eval sets but {len(emb_paths)} eval embedding files"
        )
    eval_sets: list[Dataset] = []
    eval_stores: dict[str, EmbeddingStore] = {}
    for ds_path, emb_path in zip(eval_paths, emb_paths):
        ds = load_dataset(ds_path, role="eval")
        if ds.name in eval_stores:
            raise click.UsageError(f"duplicate eval set name '{ds.name}'")
        eval_sets.append(ds)
        eval_stores[ds.name] = load_embeddings(emb_path)
    return eval_sets, eval_stores


def _setting(
    cfg: dict, mode, n_shots, shot_order=None, default_mode="label_agnostic", default_shots=4
) -> RetrievalSetting:
    return RetrievalSetting(
        mode=_value(cfg, "retrieval.mode", mode, default_mode),
        n_shots=int(_value(cfg, "retrieval.n_shots", n_shots, default_shots)),
        shot_order=_value(cfg, "retrieval.shot_order", shot_order, "asc"),
    )


@click.group(name="xampler")
@click.option("--config", "config_path", default=None, help="JSON config file (version field required).")
@click.pass_context
def cli(ctx: click.Context, config_path: str | None) -> None:
    """Train and evaluate a cross-lingual example retriever end to end."""
    ctx.obj = load_config(config_path) if config_path else {}


@cli.command()
@click.option("--train", "train_path", default=None)
@click.option("--embeddings", "emb_path", default=None)
@click.option("--k", type=int, default=None)
@click.option("--out", "out_path", default=None)
@click.pass_obj
def mine(cfg: dict, train_path, emb_path, k, out_path) -> None:
    """Mine top-k nearest candidates for every training query."""
    train_path = _value(cfg, "paths.train", train_path, required=True)
    emb_path = _value(cfg, "paths.embeddings", emb_path, required=True)
    k = int(_value(cfg, "k", k, 10))
    out_path = _value(cfg, "paths.candidates", out_path, required=True)
    _echo_config({"stage": "mine", "train": train_path, "embeddings": emb_path, "k": k, "out": out_path})
    count = pipeline.stage_mine(train_path, emb_path, k, out_path)
    click.echo(f"mined {count} candidate sets -> {out_path}")


@cli.command()
@click.option("--train", "train_path", default=None)
@click.option("--candidates", "cand_path", default=None, help="Pre-mined candidates; omit to mine inline.")
@click.option("--embeddings", "emb_path", default=None, help="Needed when mining inline.")
@click.option("--k", type=int, default=None)
@click.option("--out", "out_path", default=None)
@click.option("--checkpoint-every", type=int, default=None)
@_scorer_options
@_template_options
@click.pass_obj
def construct(cfg: dict, train_path, cand_path, emb_path, k, out_path, checkpoint_every, **scorer_kw) -> None:
    """Label mined candidates by 1-shot outcomes into training pairs."""
    train_path = _value(cfg, "paths.train", train_path, required=True)
    cand_path = _value(cfg, "paths.candidates", cand_path)
    out_path = _value(cfg, "paths.pairs", out_path, required=True)
    every = int(_value(cfg, "construct.checkpoint_every", checkpoint_every, 100))
    spec = _build_spec(cfg, scorer_kw.pop("template"), scorer_kw.pop("separator"))
    scorer, scorer_meta = _build_scorer(cfg, **scorer_kw)
    if cand_path is None:
        emb_path = _value(cfg, "paths.embeddings", emb_path, required=True)
        k = int(_value(cfg, "k", k, 10))
        cand_path = str(Path(out_path).with_suffix(".candidates.jsonl"))
        _echo_config(
            {
                "stage": "construct",
                "train": train_path,
                "embeddings": emb_path,
                "k": k,
                "out": out_path,
                "checkpoint_every": every,
                "scorer": scorer_meta,
                "template": spec.template,
            }
        )
        count = pipeline.stage_mine(train_path, emb_path, k, cand_path)
        click.echo(f"mined {count} candidate sets -> {cand_path}")
    else:
        _echo_config(
            {
                "stage": "construct",
                "train": train_path,
                "candidates": cand_path,
                "out": out_path,
                "checkpoint_every": every,
                "scorer": scorer_meta,
                "template": spec.template,
            }
        )
    positives, negatives = pipeline.stage_construct(
        train_path, cand_path, out_path, scorer, spec, checkpoint_every=every
    )
    click.echo(
        f"constructed {positives + negatives} pairs "
        f"({positives} positive, {negatives} negative) -> {out_path}"
    )


@cli.command(name="train")
@click.option("--pairs", "pairs_path", default=None)
@click.option("--embeddings", "emb_path", default=None)
@click.option("--out", "--head", "head_path", default=None)
@_trainer_options
@click.pass_obj
def train_cmd(cfg: dict, pairs_path, emb_path, head_path, **trainer_kw) -> None:
    """Fine-tune the retrieval head on constructed pairs."""
    pairs_path = _value(cfg, "paths.pairs", pairs_path, required=True)
    emb_path = _value(cfg, "paths.embeddings", emb_path, required=True)
    head_path = _value(cfg, "paths.head", head_path, required=True)
    trainer = _build_trainer(cfg, **trainer_kw)
    _echo_config(
        {
            "stage": "train",
            "pairs": pairs_path,
            "embeddings": emb_path,
            "head": head_path,
            "trainer": _trainer_meta(trainer),
        }
    )
    log = pipeline.stage_train(pairs_path, emb_path, head_path, trainer)
    click.echo(
        f"trained {log.trained_queries} queries ({log.skipped_queries} skipped) "
        f"over {len(log.epoch_losses)} epochs, {log.steps} steps"
    )
    click.echo(
        f"epoch 1 mean loss {log.epoch_losses[0]:.6f}; "
        f"epoch {len(log.epoch_losses)} mean loss {log.epoch_losses[-1]:.6f}"
    )
    click.echo(f"saved head -> {head_path}")


@cli.command()
@click.option("--queries", "queries_path", default=None, help="Query dataset; omit to use every store id.")
@click.option("--query-embeddings", "query_emb_path", default=None)
@click.option("--pool", "pool_path", default=None)
@click.option("--pool-embeddings", "pool_emb_path", default=None)
@click.option("--head", "head_path", default=None, help="Omit to rank with raw embeddings.")
@click.option("--mode", type=click.Choice(["label_aware", "label_agnostic"]), default=None)
@click.option("--shots", "--n-shots", "n_shots", type=int, default=None)
@click.option("--shot-order", type=click.Choice(["asc", "desc"]), default=None)
@click.option("--out", "out_path", default=None)
@click.pass_obj
def retrieve(cfg: dict, queries_path, query_emb_path, pool_path, pool_emb_path, head_path, mode, n_shots, shot_order, out_path) -> None:
    """Retrieve in-context shots for every query."""
    queries_path = _value(cfg, "paths.queries", queries_path)
    query_emb_path = _value(cfg, "paths.query_embeddings", query_emb_path, required=True)
    pool_path = _value(cfg, "paths.pool", pool_path, required=True)
    pool_emb_path = _value(cfg, "paths.pool_embeddings", pool_emb_path, required=True)
    head_path = _value(cfg, "paths.head", head_path)
    out_path = _value(cfg, "paths.shots", out_path, required=True)
    setting = _setting(cfg, mode, n_shots, shot_order)
    _echo_config(
        {
            "stage": "retrieve",
            "queries": queries_path,
            "pool": pool_path,
            "head": head_path,
            "mode": setting.mode,
            "n_shots": setting.n_shots,
            "shot_order": setting.shot_order,
            "out": out_path,
        }
    )
    count = pipeline.stage_retrieve(
        query_emb_path,
        pool_path,
        pool_emb_path,
        setting,
        out_path,
        head_path=head_path,
        query_path=queries_path,
    )
    click.echo(f"retrieved shots for {count} queries -> {out_path}")


def _eval_common(cfg, pool_path, pool_emb_path, head_path, eval_paths, eval_emb_paths, mode, n_shots):
    pool_path = _value(cfg, "paths.pool", pool_path, required=True)
    pool_emb_path = _value(cfg, "paths.pool_embeddings", pool_emb_path, required=True)
    head_path = _value(cfg, "paths.head", head_path)
    eval_paths = list(eval_paths) or _value(cfg, "paths.eval_sets", None, [])
    eval_emb_paths = list(eval_emb_paths) or _value(cfg, "paths.eval_embeddings", None, [])
    pool = load_dataset(pool_path, role="train")
    pool_store = load_embeddings(pool_emb_path)
    head = load_head(head_path)[0] if head_path else None
    eval_sets, eval_stores = _load_eval_sets(eval_paths, eval_emb_paths)
    setting = _setting(cfg, mode, n_shots, default_shots=len(pool.label_set))
    return pool, pool_store, head, eval_sets, eval_stores, setting, head_path


def _emit_records(records, report_path, fmt, method: str) -> None:
    table = ReportTable.from_records(records)
    text = render_table(table, fmt=fmt)
    click.echo(text, nl=False)
    click.echo(f"macro {method} accuracy {100.0 * macro_average(records):.2f}")
    if report_path is not None:
        emit_report(table, report_path, fmt=fmt)
        click.echo(f"report -> {report_path}")


@cli.command(name="eval-icl")
@click.option("--pool", "pool_path", default=None)
@click.option("--pool-embeddings", "pool_emb_path", default=None)
@click.option("--head", "head_path", default=None)
@click.option("--eval-set", "eval_paths", multiple=True)
@click.option("--eval-embeddings", "eval_emb_paths", multiple=True)
@click.option("--mode", type=click.Choice(["label_aware", "label_agnostic"]), default=None)
@click.option("--n-shots", type=int, default=None)
@click.option("--report", "report_path", default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "markdown"]), default=None)
@_scorer_options
@_template_options
@click.pass_obj
def eval_icl(cfg: dict, pool_path, pool_emb_path, head_path, eval_paths, eval_emb_paths, mode, n_shots, report_path, fmt, **scorer_kw) -> None:
    """Score retrieval-backed in-context classification per language."""
    spec = _build_spec(cfg, scorer_kw.pop("template"), scorer_kw.pop("separator"))
    scorer, scorer_meta = _build_scorer(cfg, **scorer_kw)
    pool, pool_store, head, eval_sets, eval_stores, setting, head_used = _eval_common(
        cfg, pool_path, pool_emb_path, head_path, eval_paths, eval_emb_paths, mode, n_shots
    )
    report_path = _value(cfg, "paths.report", report_path)
    fmt = _value(cfg, "report.format", fmt, "csv")
    _echo_config(
        {
            "stage": "eval-icl",
            "mode": setting.mode,
            "n_shots": setting.n_shots,
            "head": head_used,
            "scorer": scorer_meta,
            "eval_sets": [ds.name for ds in eval_sets],
        },
        report_path,
    )
    records = pipeline.icl_records(
        pool, pool_store, head, eval_sets, eval_stores, setting, scorer, spec
    )
    _emit_records(records, report_path, fmt, "icl")


@cli.command(name="eval-knn")
@click.option("--pool", "pool_path", default=None)
@click.option("--pool-embeddings", "pool_emb_path", default=None)
@click.option("--head", "head_path", default=None)
@click.option("--eval-set", "eval_paths", multiple=True)
@click.option("--eval-embeddings", "eval_emb_paths", multiple=True)
@click.option("--mode", type=click.Choice(["label_aware", "label_agnostic"]), default=None)
@click.option("--n-shots", type=int, default=None)
@click.option("--report", "report_path", default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "markdown"]), default=None)
@click.pass_obj
def eval_knn(cfg: dict, pool_path, pool_emb_path, head_path, eval_paths, eval_emb_paths, mode, n_shots, report_path, fmt) -> None:
    """Score majority-vote KNN classification per language."""
    pool, pool_store, head, eval_sets, eval_stores, setting, head_used = _eval_common(
        cfg, pool_path, pool_emb_path, head_path, eval_paths, eval_emb_paths, mode, n_shots
    )
    report_path = _value(cfg, "paths.report", report_path)
    fmt = _value(cfg, "report.format", fmt, "csv")
    _echo_config(
        {
            "stage": "eval-knn",
            "mode": setting.mode,
            "n_shots": setting.n_shots,
            "head": head_used,
            "eval_sets": [ds.name for ds in eval_sets],
        },
        report_path,
    )
    records = pipeline.knn_records(
        pool, pool_store, head, eval_sets, eval_stores, setting
    )
    _emit_records(records, report_path, fmt, "knn")


@cli.command(name="sweep-shots")
@click.option("--pool", "pool_path", default=None)
@click.option("--pool-embeddings", "pool_emb_path", default=None)
@click.option("--head", "head_path", default=None)
@click.option("--eval-set", "eval_paths", multiple=True)
@click.option("--eval-embeddings", "eval_emb_paths", multiple=True)
@click.option("--values", default=None, help="Comma-separated shot counts.")
@click.option("--knn/--no-knn", "with_knn", default=True)
@click.option("--icl/--no-icl", "with_icl", default=True)
@click.option("--report", "report_path", default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "markdown"]), default=None)
@_scorer_options
@_template_options
@click.pass_obj
def sweep_shots_cmd(cfg: dict, pool_path, pool_emb_path, head_path, eval_paths, eval_emb_paths, values, with_knn, with_icl, report_path, fmt, **scorer_kw) -> None:
    """Sweep the shot count for KNN and/or ICL accuracy."""
    spec = _build_spec(cfg, scorer_kw.pop("template"), scorer_kw.pop("separator"))
    scorer, scorer_meta = (None, None)
    if with_icl:
        scorer, scorer_meta = _build_scorer(cfg, **scorer_kw)
    pool, pool_store, head, eval_sets, eval_stores, _, head_used = _eval_common(
        cfg, pool_path, pool_emb_path, head_path, eval_paths, eval_emb_paths, None, None
    )
    shot_counts = _parse_values(_value(cfg, "sweep.shots", values, required=True))
    report_path = _value(cfg, "paths.report", report_path)
    fmt = _value(cfg, "report.format", fmt, "csv")
    _echo_config(
        {
            "stage": "sweep-shots",
            "values": shot_counts,
            "head": head_used,
            "knn": with_knn,
            "icl": with_icl,
            "scorer": scorer_meta,
        },
        report_path,
    )
    sweeps = sweep_shots(
        shot_counts,
        pool,
        pool_store,
        eval_sets,
        eval_stores,
        head=head,
        scorer=scorer,
        spec=spec,
        knn=with_knn,
        icl=with_icl,
    )
    click.echo(render_sweep(sweeps, fmt=fmt), nl=False)
    if report_path is not None:
        emit_report(sweeps, report_path, fmt=fmt)
        click.echo(f"report -> {report_path}")


@cli.command(name="sweep-k")
@click.option("--pool", "pool_path", default=None)
@click.option("--pool-embeddings", "pool_emb_path", default=None)
@click.option("--eval-set", "eval_paths", multiple=True)
@click.option("--eval-embeddings", "eval_emb_paths", multiple=True)
@click.option("--values", default=None, help="Comma-separated k values.")
@click.option("--mode", type=click.Choice(["label_aware", "label_agnostic"]), default=None)
@click.option("--n-shots", type=int, default=None)
@click.option("--report", "report_path", default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "markdown"]), default=None)
@_scorer_options
@_template_options
@_trainer_options
@click.pass_obj
def sweep_k_cmd(cfg: dict, pool_path, pool_emb_path, eval_paths, eval_emb_paths, values, mode, n_shots, report_path, fmt, **kw) -> None:
    """Re-run mine/construct/train/eval for each candidate count k."""
    spec = _build_spec(cfg, kw.pop("template"), kw.pop("separator"))
    scorer_kw = {
        key: kw.pop(key) for key in ("scorer_kind", "mock_rule", "url", "parallelism", "timeout")
    }
    scorer, scorer_meta = _build_scorer(cfg, **scorer_kw)
    trainer = _build_trainer(cfg, **kw)
    pool, pool_store, _, eval_sets, eval_stores, setting, _ = _eval_common(
        cfg, pool_path, pool_emb_path, None, eval_paths, eval_emb_paths, mode, n_shots
    )
    k_values = _parse_values(_value(cfg, "sweep.k", values, required=True))
    report_path = _value(cfg, "paths.report", report_path)
    fmt = _value(cfg, "report.format", fmt, "csv")
    _echo_config(
        {
            "stage": "sweep-k",
            "values": k_values,
            "mode": setting.mode,
            "n_shots": setting.n_shots,
            "scorer": scorer_meta,
            "trainer": _trainer_meta(trainer),
        },
        report_path,
    )
    run = pipeline.pipeline_run_for_k(
        pool, pool_store, eval_sets, eval_stores, scorer, spec, setting, trainer
    )
    result = sweep_k(k_values, len(pool.examples), run)
    click.echo(render_sweep([result], fmt=fmt), nl=False)
    for k, note in sorted(result.notes.items()):
        click.echo(f"note: k={k} {note}")
    if report_path is not None:
        emit_report([result], report_path, fmt=fmt)
        click.echo(f"report -> {report_path}")


@cli.command(name="sweep-layers")
@click.option("--pool", "pool_path", default=None)
@click.option("--eval-set", "eval_paths", multiple=True)
@click.option(
    "--layer-embeddings",
    "layer_specs",
    multiple=True,
    help="LAYER=PATH of an embedding store covering pool and eval ids.",
)
@click.option("--n-shots", type=int, default=None)
@click.option("--report", "report_path", default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "markdown"]), default=None)
@click.pass_obj
def sweep_layers_cmd(cfg: dict, pool_path, eval_paths, layer_specs, n_shots, report_path, fmt) -> None:
    """Sweep hidden layers by KNN accuracy; report the best layer."""
    pool_path = _value(cfg, "paths.pool", pool_path, required=True)
    eval_paths = list(eval_paths) or _value(cfg, "paths.eval_sets", None, [])
    if not eval_paths:
        raise click.UsageError("missing config key 'paths.eval_sets'")
    specs = list(layer_specs) or _value(cfg, "sweep.layer_embeddings", None, [])
    if not specs:
        raise click.UsageError("missing config key 'sweep.layer_embeddings'")
    layer_stores = []
    for spec in specs:
        layer_str, _, path = str(spec).partition("=")
        if not path:
            raise click.UsageError(f"invalid layer spec '{spec}' (expected LAYER=PATH)")
        try:
            layer = int(layer_str)
        except ValueError:
            raise click.UsageError(f"invalid layer '{layer_str}'") from None
        layer_stores.append((layer, load_embeddings(path)))
    pool = load_dataset(pool_path, role="train")
    eval_sets = [load_dataset(p, role="eval") for p in eval_paths]
    shots = int(_value(cfg, "retrieval.n_shots", n_shots, 10))
    report_path = _value(cfg, "paths.report", report_path)
    fmt = _value(cfg, "report.format", fmt, "csv")
    _echo_config(
        {
            "stage": "sweep-layers",
            "layers": [layer for layer, _ in layer_stores],
            "n_shots": shots,
            "eval_sets": [ds.name for ds in eval_sets],
        },
        report_path,
    )
    result, best_layer = sweep_layers(layer_stores, pool, eval_sets, n_shots=shots)
    click.echo(render_sweep([result], fmt=fmt), nl=False)
    click.echo(f"best layer {best_layer}")
    if report_path is not None:
        emit_report([result], report_path, fmt=fmt)
        click.echo(f"report -> {report_path}")


@cli.command()
@click.option("--fixtures", "fixture_paths", multiple=True)
@click.option("--report", "report_path", default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "markdown"]), default=None)
@click.pass_obj
def aggregate(cfg: dict, fixture_paths, report_path, fmt) -> None:
    """Recompute macro averages (and ablation gaps) from result tables."""
    paths = list(fixture_paths) or _value(cfg, "paths.fixtures", None, [])
    if not paths:
        raise click.UsageError("missing config key 'paths.fixtures'")
    report_path = _value(cfg, "paths.report", report_path)
    fmt = _value(cfg, "report.format", fmt, "csv")
    if report_path is not None and len(paths) > 1:
        raise click.UsageError("--report expects a single fixture")
    _echo_config({"stage": "aggregate", "fixtures": [str(p) for p in paths]}, report_path)
    for path in paths:
        table = load_fixture(path)
        click.echo(f"table {Path(path).name}")
        click.echo(render_table(table, fmt=fmt), nl=False)
        if table.key_name == "method" and len(table.methods) == 1:
            best = max(table.keys, key=lambda k: table.value(k, table.methods[0]))
            for method, gap in ablation_gaps(table).items():
                click.echo(f"gap {best} - {method} = {gap:.2f}")
        if report_path is not None:
            emit_report(table, report_path, fmt=fmt)
            click.echo(f"report -> {report_path}")


@cli.command()
@click.option("--seed", type=int, default=None)
@click.option("--k", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--workdir", default=None, help="Keep stage artifacts here instead of a temp dir.")
@click.pass_obj
def selftest(cfg: dict, seed, k, epochs, batch_size, learning_rate, workdir) -> None:
    """Run the mock end-to-end pipeline on synthetic data."""
    seed = int(_value(cfg, "seed", seed, 0))
    k = int(_value(cfg, "k", k, 10))
    base = pipeline.SELFTEST_TRAINER
    trainer = TrainerConfig(
        epochs=int(_value(cfg, "trainer.epochs", epochs, base.epochs)),
        batch_size=int(_value(cfg, "trainer.batch_size", batch_size, base.batch_size)),
        learning_rate=float(
            _value(cfg, "trainer.learning_rate", learning_rate, base.learning_rate)
        ),
        adamw=base.adamw,
        temperature=base.temperature,
        seed=seed,
    )
    _echo_config(
        {
            "stage": "selftest",
            "seed": seed,
            "k": k,
            "epochs": trainer.epochs,
            "batch_size": trainer.batch_size,
            "learning_rate": trainer.learning_rate,
        }
    )
    if workdir is not None:
        report = pipeline.run_selftest(seed=seed, workdir=workdir, k=k, trainer=trainer)
    else:
        with tempfile.TemporaryDirectory(prefix="xampler-selftest-") as tmp:
            report = pipeline.run_selftest(seed=seed, workdir=tmp, k=k, trainer=trainer)
    click.echo(report.text(), nl=False)
    click.echo(f"elapsed {report.elapsed:.1f}s", err=True)


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point mapping errors onto the CLI exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False, prog_name="xampler")
    except click.UsageError as err:
        click.echo(f"error: {err.format_message()}", err=True)
        ctx = err.ctx or click.Context(cli, info_name="xampler")
        click.echo(ctx.get_usage(), err=True)
        return 1
    except click.ClickException as err:
        err.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except FileNotFoundError as err:
        click.echo(f"error: {err}", err=True)
        return 1
    except ValueError as err:
        click.echo(f"error: {err}", err=True)
        return 1
    except (RuntimeError, OSError) as err:
        click.echo(f"error: {err}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
