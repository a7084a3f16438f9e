"""HTTP surface: /v1/embed, /v1/score, debug raw states, and record/replay.

Client contract: 4xx means the request itself is wrong (bad layer, unknown
pooling, empty or malformed fields) and must not be retried; 5xx means the
model failed. A live app can append every score exchange to a JSONL file,
and a replay app serves those recordings back verbatim.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .model import POOLINGS, BridgeConfig, ModelError, TinyCausalLM


class EmbedRequest(BaseModel):
    texts: list[str]
    layer: int
    pooling: str


class ScoreRequest(BaseModel):
    prompt: str
    continuations: list[str]


class StatesRequest(BaseModel):
    texts: list[str]
    layer: int


def _bad_request(message: str) -> HTTPException:
    return HTTPException(status_code=400, detail=message)


def create_app(
    model: TinyCausalLM,
    config: BridgeConfig | None = None,
    record_path: str | Path | None = None,
) -> FastAPI:
    cfg = config or BridgeConfig(model_id=model.model_id)
    app = FastAPI(title="model-bridge", version="0.1.0")
    record_lock = threading.Lock()
    # model invocations are serialized; request handling may interleave freely
    model_lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": str(exc.errors()[:3])})

    def record(route: str, request_body: dict, response_body: dict) -> None:
        if record_path is None:
            return
        line = json.dumps(
            {"route": route, "request": request_body, "response": response_body},
            ensure_ascii=False,
        )
        with record_lock, Path(record_path).open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    @app.get("/health")
    def health() -> dict:
        return {
            "model_id": model.model_id,
            "dim": model.dim,
            "depth": model.depth,
            "max_batch": cfg.max_batch,
        }

    @app.post("/v1/embed")
    def embed(req: EmbedRequest) -> dict:
        if not req.texts:
            raise _bad_request("texts must be non-empty")
        if req.pooling not in POOLINGS:
            raise _bad_request(f"unknown pooling {req.pooling!r}; expected one of {POOLINGS}")
        if not 0 <= req.layer <= model.depth:
            raise _bad_request(f"layer {req.layer} out of range; model has layers 0..{model.depth}")
        with model_lock:
            matrix = model.embed_many(req.texts, req.layer, req.pooling, cfg.max_batch)
        return {"dim": model.dim, "vectors": matrix.tolist()}

    @app.post("/v1/score")
    def score(req: ScoreRequest) -> dict:
        if not req.continuations:
            raise _bad_request("continuations must be non-empty")
        try:
            with model_lock:
                log_probs = model.score(req.prompt, req.continuations)
        except ModelError as err:
            raise _bad_request(str(err)) from err
        body = {"log_probs": log_probs}
        record("/v1/score", {"prompt": req.prompt, "continuations": list(req.continuations)}, body)
        return body

    @app.post("/v1/debug/hidden_states")
    def debug_hidden_states(req: StatesRequest) -> dict:
        if not req.texts:
            raise _bad_request("texts must be non-empty")
        if not 0 <= req.layer <= model.depth:
            raise _bad_request(f"layer {req.layer} out of range; model has layers 0..{model.depth}")
        with model_lock:
            states = [model.hidden_states(text, req.layer).tolist() for text in req.texts]
        return {"dim": model.dim, "states": states}

    return app


def _canonical(body: dict) -> str:
    return json.dumps(body, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def load_recording(path: str | Path) -> dict[str, dict]:
    """Map canonicalized score requests to their recorded responses."""
    table: dict[str, dict] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"{path}: malformed recording on line {lineno}: {err}") from err
            if entry.get("route") != "/v1/score":
                continue
            table[_canonical(entry["request"])] = entry["response"]
    return table


def create_replay_app(recording_path: str | Path) -> FastAPI:
    """Serve /v1/score purely from a recording; unknown requests are 400."""
    table = load_recording(recording_path)
    app = FastAPI(title="model-bridge-replay", version="0.1.0")

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": str(exc.errors()[:3])})

    @app.get("/health")
    def health() -> dict:
        return {"model_id": "replay", "recorded": len(table)}

    @app.post("/v1/score")
    def score(req: ScoreRequest) -> dict:
        key = _canonical({"prompt": req.prompt, "continuations": list(req.continuations)})
        if key not in table:
            raise _bad_request("no recorded response for this score request")
        return table[key]

    return app
