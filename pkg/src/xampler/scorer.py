"""Prompt construction and label scoring against an LLM scorer.

A scorer turns (prompt, label continuations) into one log-probability per
label; prediction is the argmax. Two client families are provided: pure
deterministic mocks for tests and pipelines without a model, and an HTTP
client speaking the bridge wire protocol (POST /v1/score, /v1/embed) with
retry and bounded concurrency.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import requests

from .corpus import Example

DEFAULT_TEMPLATE = "The topic of the news [sentence] is [label]"
SCORER_URL_ENV = "XAMPLER_SCORER_URL"

_SENTENCE_SLOT = "[sentence]"
_LABEL_SLOT = "[label]"


class PromptError(ValueError):
    """Template missing or duplicating a placeholder."""


class ProtocolError(RuntimeError):
    """Scorer misuse or malformed scorer response; not retryable."""


class TransportError(RuntimeError):
    """Scorer unreachable after retries."""


@dataclass(frozen=True)
class PromptSpec:
    """Shot template with ``[sentence]`` and ``[label]`` slots, each exactly once."""

    template: str = DEFAULT_TEMPLATE
    separator: str = "\n"

    def __post_init__(self) -> None:
        for slot in (_SENTENCE_SLOT, _LABEL_SLOT):
            n = self.template.count(slot)
            if n == 0:
                raise PromptError(f"template missing placeholder {slot}")
            if n > 1:
                raise PromptError(f"template contains {slot} {n} times, expected once")


@dataclass(frozen=True)
class PromptMeta:
    """Out-of-band prompt facts for mock scorers; never parsed from text.

    ``shot_labels`` follow prompt order, ``top_shot_label`` is the label of
    the most similar shot, ``query_label`` is the query's withheld truth.
    """

    shot_labels: tuple[str, ...] = ()
    top_shot_label: str | None = None
    query_label: str | None = None


@dataclass(frozen=True)
class ScoreRequest:
    prompt_prefix: str
    continuations: tuple[str, ...]
    meta: PromptMeta | None = None

    def __post_init__(self) -> None:
        if not self.continuations:
            raise ProtocolError("score request with empty continuation list")


@dataclass(frozen=True)
class Prediction:
    label: str
    scores: tuple[float, ...]


class ScorerClient(Protocol):
    def score(self, request: ScoreRequest) -> list[float]:
        """Return one log-probability per continuation, same order."""
        ...


def render_prompt(spec: PromptSpec, shots: Sequence[Example], query_text: str) -> str:
    """Render shots with labels filled, then the query clause with the label
    slot (and nothing after it) cut off.

    Whatever whitespace the template carries immediately before the label
    slot is kept, so scorers see the exact prompt tail the template implies.
    """
    segments = [
        spec.template.replace(_SENTENCE_SLOT, shot.text).replace(_LABEL_SLOT, shot.label)
        for shot in shots
    ]
    query_clause = spec.template[: spec.template.index(_LABEL_SLOT)]
    segments.append(query_clause.replace(_SENTENCE_SLOT, query_text))
    return spec.separator.join(segments)


def score_labels(client: ScorerClient, request: ScoreRequest) -> Prediction:
    """Score every continuation and take the argmax; ties go to the earlier
    continuation."""
    scores = client.score(request)
    if len(scores) != len(request.continuations):
        raise ProtocolError(
            f"scorer returned {len(scores)} scores for {len(request.continuations)} continuations"
        )
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return Prediction(label=request.continuations[best], scores=tuple(float(s) for s in scores))


@dataclass(frozen=True)
class MockScorer:
    """Pure, deterministic stand-in for the LLM scorer.

    Rules:
      * ``label-echo`` — predict the majority label among the shots (the
        shot's own label for 1-shot prompts); ties go to the label appearing
        earliest in the prompt.
      * ``similarity-gated`` — predict the query's true label iff the most
        similar shot carries it, otherwise a fixed wrong label (the first
        continuation that differs from the truth).
    """

    rule: str = "label-echo"

    _RULES = ("label-echo", "similarity-gated")

    def __post_init__(self) -> None:
        if self.rule not in self._RULES:
            raise ValueError(f"unknown mock rule {self.rule!r}")

    def score(self, request: ScoreRequest) -> list[float]:
        meta = request.meta or PromptMeta()
        target = self._target(meta, request.continuations)
        return [0.0 if c == target else -1.0 for c in request.continuations]

    def _target(self, meta: PromptMeta, continuations: tuple[str, ...]) -> str | None:
        if self.rule == "label-echo":
            if not meta.shot_labels:
                return None
            counts: dict[str, int] = {}
            for label in meta.shot_labels:
                counts[label] = counts.get(label, 0) + 1
            top = max(counts.values())
            for label in meta.shot_labels:  # earliest-in-prompt tie break
                if counts[label] == top:
                    return label
            return None
        # similarity-gated
        if meta.query_label is not None and meta.top_shot_label == meta.query_label:
            return meta.query_label
        for c in continuations:
            if c != meta.query_label:
                return c
        return None


def mock_scorer(rule: str = "label-echo") -> MockScorer:
    return MockScorer(rule=rule)


@dataclass
class RetryPolicy:
    base_delay: float = 0.5
    max_attempts: int = 3

    def delays(self) -> list[float]:
        return [self.base_delay * (2**i) for i in range(self.max_attempts - 1)]


def resolve_scorer_url(config_url: str | None = None) -> str:
    """Effective scorer endpoint: the env override wins over the config value."""
    url = os.environ.get(SCORER_URL_ENV) or config_url
    if not url:
        raise ProtocolError(f"no scorer URL configured and {SCORER_URL_ENV} is unset")
    return url.rstrip("/")


@dataclass
class HttpScorer:
    """Bridge wire-protocol client.

    4xx responses are protocol misuse and fail immediately; 5xx and transport
    failures are retried with exponential backoff.
    """

    url: str
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    timeout: float = 60.0
    session: requests.Session = field(default_factory=requests.Session, repr=False)

    def __post_init__(self) -> None:
        self.url = self.url.rstrip("/")

    def score(self, request: ScoreRequest) -> list[float]:
        body = {"prompt": request.prompt_prefix, "continuations": list(request.continuations)}
        payload = self._post("/v1/score", body)
        log_probs = payload.get("log_probs")
        if not isinstance(log_probs, list):
            raise ProtocolError("score response missing log_probs")
        return [float(x) for x in log_probs]

    def embed(self, texts: Sequence[str], layer: int, pooling: str) -> tuple[int, list[list[float]]]:
        body = {"texts": list(texts), "layer": layer, "pooling": pooling}
        payload = self._post("/v1/embed", body)
        vectors = payload.get("vectors")
        dim = payload.get("dim")
        if not isinstance(vectors, list) or not isinstance(dim, int):
            raise ProtocolError("embed response missing dim/vectors")
        if len(vectors) != len(texts):
            raise ProtocolError(f"embed returned {len(vectors)} vectors for {len(texts)} texts")
        return dim, [[float(x) for x in v] for v in vectors]

    def _post(self, route: str, body: dict) -> dict:
        delays = self.retry.delays() + [None]  # final attempt has no follow-up sleep
        last_err: Exception | None = None
        for delay in delays:
            try:
                resp = self.session.post(self.url + route, json=body, timeout=self.timeout)
            except requests.RequestException as err:
                last_err = err
            else:
                if resp.status_code < 400:
                    try:
                        return resp.json()
                    except ValueError as err:
                        raise ProtocolError(f"{route}: non-JSON response body") from err
                if resp.status_code < 500:
                    raise ProtocolError(f"{route}: HTTP {resp.status_code}: {resp.text[:200]}")
                last_err = TransportError(f"{route}: HTTP {resp.status_code}")
            if delay is not None:
                time.sleep(delay)
        raise TransportError(
            f"{route}: failed after {self.retry.max_attempts} attempts: {last_err}"
        )


def score_many(
    client: ScorerClient,
    requests_batch: Sequence[ScoreRequest],
    parallelism: int = 4,
) -> list[Prediction]:
    """Score a batch with up to ``parallelism`` in-flight calls, results in
    request order."""
    if parallelism < 1:
        raise ValueError(f"parallelism must be >= 1, got {parallelism}")
    if parallelism == 1 or len(requests_batch) <= 1:
        return [score_labels(client, r) for r in requests_batch]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(lambda r: score_labels(client, r), requests_batch))
