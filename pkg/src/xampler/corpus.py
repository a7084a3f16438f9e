"""Labeled classification datasets and their JSONL persistence.

Datasets are JSON-lines files with one record per example:
``{"id","text","label","language"}``. An optional first line
``{"label_set":[...], "name": ...}`` pins the class order; when absent the
label set is the sorted union of observed labels. Class order matters
downstream: label-aware retrieval and label scoring both iterate it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class DatasetError(ValueError):
    """Malformed, inconsistent, or empty dataset input."""


@dataclass(frozen=True)
class Example:
    """One labeled text item. ``language`` tags are opaque keys."""

    id: str
    text: str
    label: str
    language: str


@dataclass
class Dataset:
    name: str
    label_set: list[str]
    examples: list[Example]
    role: str  # "train" | "eval"

    def __post_init__(self) -> None:
        if self.role not in ("train", "eval"):
            raise DatasetError(f"unknown dataset role {self.role!r}")
        if not self.label_set:
            raise DatasetError(f"dataset {self.name!r}: empty label set")
        if len(set(self.label_set)) != len(self.label_set):
            raise DatasetError(f"dataset {self.name!r}: duplicate labels in label set")
        seen: set[str] = set()
        allowed = set(self.label_set)
        for ex in self.examples:
            if ex.id in seen:
                raise DatasetError(f"dataset {self.name!r}: duplicate id {ex.id!r}")
            seen.add(ex.id)
            if not ex.text:
                raise DatasetError(f"dataset {self.name!r}: example {ex.id!r} has empty text")
            if ex.label not in allowed:
                raise DatasetError(
                    f"dataset {self.name!r}: example {ex.id!r} has label {ex.label!r} "
                    f"outside the label set"
                )

    def by_id(self, example_id: str) -> Example:
        return self._index[example_id]

    def __contains__(self, example_id: str) -> bool:
        return example_id in self._index

    @property
    def _index(self) -> dict[str, Example]:
        cached = self.__dict__.get("_index_cache")
        if cached is None or len(cached) != len(self.examples):
            cached = {ex.id: ex for ex in self.examples}
            self.__dict__["_index_cache"] = cached
        return cached

    @property
    def language(self) -> str:
        """Common language tag of the examples, or the dataset name if mixed."""
        tags = {ex.language for ex in self.examples}
        if len(tags) == 1:
            return next(iter(tags))
        return self.name


@dataclass(frozen=True)
class CandidateSet:
    """Top-k mined candidate ids for one query, most similar first.

    ``scores`` is the parallel list of mining similarities; it rides along so
    pair construction can record the mined score without re-searching.
    """

    query_id: str
    candidate_ids: list[str]
    scores: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(set(self.candidate_ids)) != len(self.candidate_ids):
            raise DatasetError(f"candidate set for {self.query_id!r} has duplicate ids")
        if self.query_id in self.candidate_ids:
            raise DatasetError(f"candidate set for {self.query_id!r} contains the query itself")
        if self.scores and len(self.scores) != len(self.candidate_ids):
            raise DatasetError(f"candidate set for {self.query_id!r}: scores/ids length mismatch")


_RECORD_FIELDS = ("id", "text", "label", "language")


def load_dataset(path: str | Path, role: str) -> Dataset:
    """Load and validate a JSONL dataset.

    Errors carry 1-based line numbers. A file with no records and no header
    is rejected as an empty dataset; a header-only file yields a valid
    zero-example dataset.
    """
    path = Path(path)
    name = path.stem
    declared: list[str] | None = None
    examples: list[Example] = []
    seen_ids: dict[str, int] = {}

    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise DatasetError(f"{path}: malformed JSON on line {lineno}: {err.msg}") from err
            if not isinstance(record, dict):
                raise DatasetError(f"{path}: malformed record on line {lineno}: not an object")
            if lineno == 1 and "label_set" in record:
                declared = list(record["label_set"])
                if "name" in record:
                    name = str(record["name"])
                continue
            missing = [f for f in _RECORD_FIELDS if f not in record]
            if missing:
                raise DatasetError(
                    f"{path}: malformed record on line {lineno}: missing {', '.join(missing)}"
                )
            ex = Example(
                id=str(record["id"]),
                text=str(record["text"]),
                label=str(record["label"]),
                language=str(record["language"]),
            )
            if ex.id in seen_ids:
                raise DatasetError(
                    f"{path}: duplicate id {ex.id!r} on line {lineno} "
                    f"(first seen on line {seen_ids[ex.id]})"
                )
            seen_ids[ex.id] = lineno
            if not ex.text:
                raise DatasetError(f"{path}: empty text on line {lineno}")
            if declared is not None and ex.label not in declared:
                raise DatasetError(
                    f"{path}: label {ex.label!r} on line {lineno} outside the declared label set"
                )
            examples.append(ex)

    if declared is None:
        if not examples:
            raise DatasetError(f"{path}: empty dataset")
        label_set = sorted({ex.label for ex in examples})
    else:
        label_set = declared

    return Dataset(name=name, label_set=label_set, examples=examples, role=role)


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write a dataset as JSONL with a header line pinning name and class order."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        header = {"label_set": ds.label_set, "name": ds.name}
        fh.write(json.dumps(header, ensure_ascii=False) + "\n")
        for ex in ds.examples:
            record = {"id": ex.id, "text": ex.text, "label": ex.label, "language": ex.language}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
