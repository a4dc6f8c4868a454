"""The labelled-sentence record exchanged between pipeline stages.

Each record serializes to one JSON object per line with the keys
``id``, ``text``, ``tokens`` and ``labels``. The id encodes a running
number, the source article id and the sentence index within the article
as ``{running}/{article_id}-{sent_index}``.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Iterator

from .bio import bio_violations

ID_PATTERN = re.compile(r"^(\d+)/(\d+)-(\d+)$")


class RecordError(ValueError):
    """A sentence record violates its schema."""


@dataclass
class AnnotatedSentence:
    id: str
    text: str
    tokens: list[str]
    labels: list[str]

    def with_labels(self, labels: list[str]) -> "AnnotatedSentence":
        return replace(self, labels=list(labels))

    def article_and_index(self) -> tuple[int, int]:
        m = ID_PATTERN.match(self.id)
        if not m:
            raise RecordError(f"malformed sentence id: {self.id!r}")
        return int(m.group(2)), int(m.group(3))

    def violations(self) -> list[str]:
        problems = []
        if not ID_PATTERN.match(self.id):
            problems.append(f"id {self.id!r} does not match running/article-sentence")
        if len(self.labels) != len(self.tokens):
            problems.append(
                f"{len(self.labels)} labels for {len(self.tokens)} tokens"
            )
        if not self.tokens:
            problems.append("empty token list")
        problems.extend(bio_violations(self.labels))
        return problems

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "tokens": list(self.tokens),
            "labels": list(self.labels),
        }

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "AnnotatedSentence":
        try:
            return cls(
                id=str(obj["id"]),
                text=str(obj["text"]),
                tokens=[str(t) for t in obj["tokens"]],
                labels=[str(x) for x in obj["labels"]],
            )
        except KeyError as exc:
            raise RecordError(f"record missing field {exc}") from None


def dump_json_line(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def write_jsonl(path: str | Path, objects: Iterable[dict[str, Any]]) -> int:
    """Write one JSON object per line; returns the number of lines written."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objects:
            fh.write(dump_json_line(obj))
            fh.write("\n")
            count += 1
    return count


def read_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def write_records(path: str | Path, sentences: Iterable[AnnotatedSentence]) -> int:
    return write_jsonl(path, (s.to_dict() for s in sentences))


def read_records(path: str | Path) -> list[AnnotatedSentence]:
    return [AnnotatedSentence.from_dict(obj) for obj in read_jsonl(path)]
