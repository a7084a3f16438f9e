"""The bridge command: serve the HTTP endpoints or export XEMB files offline.

Datasets come in as JSONL with {"id","text",...} records (an optional first
header line without an "id" key is skipped), so exported embeddings line up
with pipeline artifacts by id.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import uvicorn

from .model import DEFAULT_MODEL_ID, BridgeConfig, TinyCausalLM, load_config
from .service import create_app, create_replay_app
from .xemb import write_xemb


def _build_config(config_path, model_id, max_batch, port) -> BridgeConfig:
    base = load_config(config_path) if config_path else BridgeConfig()
    return BridgeConfig(
        model_id=model_id if model_id is not None else base.model_id,
        device=base.device,
        max_batch=max_batch if max_batch is not None else base.max_batch,
        port=port if port is not None else base.port,
    )


def read_texts(path: str | Path) -> tuple[list[str], list[str]]:
    """Pull (ids, texts) out of a JSONL dataset file."""
    ids: list[str] = []
    texts: list[str] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"{path}: malformed JSON on line {lineno}: {err}") from err
            if "id" not in record:
                if lineno == 1:
                    continue  # dataset header
                raise ValueError(f"{path}: record without 'id' on line {lineno}")
            if "text" not in record:
                raise ValueError(f"{path}: record without 'text' on line {lineno}")
            ids.append(str(record["id"]))
            texts.append(str(record["text"]))
    if not ids:
        raise ValueError(f"{path}: no records")
    return ids, texts


@click.group()
def cli() -> None:
    """Serve model endpoints or export embeddings for the pipeline."""


@cli.command()
@click.option("--config", "config_path", default=None, help="JSON config (version field required).")
@click.option("--model-id", default=None)
@click.option("--max-batch", type=int, default=None)
@click.option("--port", type=int, default=None)
@click.option("--host", default="127.0.0.1")
@click.option("--record", "record_path", default=None, help="Append score exchanges to this JSONL.")
@click.option("--replay", "replay_path", default=None, help="Serve /v1/score from a recording instead of the model.")
def serve(config_path, model_id, max_batch, port, host, record_path, replay_path) -> None:
    """Run the HTTP service until interrupted."""
    cfg = _build_config(config_path, model_id, max_batch, port)
    if replay_path:
        app = create_replay_app(replay_path)
        click.echo(f"replaying {replay_path} on {host}:{cfg.port}", err=True)
    else:
        app = create_app(TinyCausalLM(cfg.model_id), cfg, record_path=record_path)
        click.echo(f"serving {cfg.model_id} on {host}:{cfg.port}", err=True)
    uvicorn.run(app, host=host, port=cfg.port, log_level="warning")


@cli.command("export-embeddings")
@click.option("--config", "config_path", default=None)
@click.option("--dataset", required=True, help="JSONL dataset with id/text records.")
@click.option("--layer", type=int, required=True)
@click.option("--pooling", type=click.Choice(["mean", "position_weighted_mean"]), default="mean")
@click.option("--model-id", default=None)
@click.option("--out", required=True)
def export_embeddings(config_path, dataset, layer, pooling, model_id, out) -> None:
    """Embed every dataset text and write an XEMB file."""
    cfg = _build_config(config_path, model_id, None, None)
    model = TinyCausalLM(cfg.model_id)
    if not 0 <= layer <= model.depth:
        raise click.UsageError(f"layer {layer} out of range; model has layers 0..{model.depth}")
    ids, texts = read_texts(dataset)
    matrix = model.embed_many(texts, layer, pooling, cfg.max_batch)
    write_xemb(out, ids, np.asarray(matrix), provider=cfg.model_id, layer=layer, pooling=pooling)
    click.echo(f"exported {len(ids)} embeddings (layer {layer}, {pooling}, dim {model.dim}) -> {out}")


@cli.command()
@click.option("--prompt", required=True)
@click.option("--continuation", "-c", "continuations", multiple=True, required=True)
@click.option("--model-id", default=DEFAULT_MODEL_ID)
def score(prompt, continuations, model_id) -> None:
    """Score label continuations for one prompt and print the ranking."""
    model = TinyCausalLM(model_id)
    log_probs = model.score(prompt, list(continuations))
    best = max(range(len(log_probs)), key=lambda i: (log_probs[i], -i))
    for cont, lp in zip(continuations, log_probs):
        click.echo(f"{lp:+.6f}  {cont}")
    click.echo(f"argmax {continuations[best]}")


def main(argv: list[str] | None = None) -> int:
    args = list(sys.argv[1:]) if argv is None else [str(a) for a in argv]
    try:
        result = cli.main(args=args, prog_name="bridge", standalone_mode=False)
    except click.exceptions.UsageError as err:
        click.echo(f"error: {err.format_message()}", err=True)
        if err.ctx is not None:
            click.echo(err.ctx.get_usage(), err=True)
        return 1
    except click.exceptions.ClickException as err:
        err.show()
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except (FileNotFoundError, ValueError) as err:
        # covers ConfigError and XembError: bad inputs, not runtime failures
        click.echo(f"error: {err}", err=True)
        return 1
    except (RuntimeError, OSError) as err:
        click.echo(f"error: {err}", err=True)
        return 2
    return int(result) if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(main())
