"""First selection pass over annotated sentences.

Per article: skip the formulaic opening sentence, consider the next few,
run quality checks (length, casing, lone-entity, span sanity, entity
coverage), budget negative examples, then deduplicate globally and stamp
final ids. Every rejection carries exactly one reason code, the first
failing check in a fixed order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .bio import OUTSIDE, bio_violations
from .evaluate import DecodeError, decode_spans
from .records import AnnotatedSentence

REASON_TOO_SHORT = "TOO_SHORT"
REASON_ALL_CAPS = "ALL_CAPS"
REASON_SINGLE_ENTITY = "SINGLE_ENTITY"
REASON_OVERLAP = "OVERLAP"
REASON_ENTITY_COVERAGE = "ENTITY_COVERAGE"
REASON_NEGATIVE_TOO_SHORT = "NEGATIVE_TOO_SHORT"
REASON_NEGATIVE_BUDGET = "NEGATIVE_BUDGET"
REASON_DUPLICATE = "DUPLICATE"


class PolicyError(ValueError):
    pass


@dataclass
class SelectionPolicy:
    skip_first: bool = True
    take_next: int = 5
    min_tokens: int = 6
    max_entity_coverage: float = 0.8
    negatives_per_article: int = 1
    min_negative_tokens: int = 8

    def __post_init__(self) -> None:
        if self.take_next < 1:
            raise PolicyError("take_next must be >= 1")
        if not (0 < self.max_entity_coverage <= 1):
            raise PolicyError("max_entity_coverage must be in (0, 1]")
        if self.min_tokens < 1 or self.min_negative_tokens < 1:
            raise PolicyError("token minima must be >= 1")
        if self.negatives_per_article < 0:
            raise PolicyError("negatives_per_article must be >= 0")

    @classmethod
    def load(cls, path: str | Path) -> "SelectionPolicy":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise PolicyError(f"unknown policy keys: {sorted(unknown)}")
        return cls(**obj)


def _is_punct_token(token: str) -> bool:
    return bool(token) and all(not ch.isalnum() for ch in token)


def _is_all_caps(tokens: list[str]) -> bool:
    letters = [ch for token in tokens for ch in token if ch.isalpha()]
    return bool(letters) and all(ch.isupper() for ch in letters)


def _failure_reason(sentence: AnnotatedSentence, policy: SelectionPolicy) -> str | None:
    if len(sentence.tokens) < policy.min_tokens:
        return REASON_TOO_SHORT
    if _is_all_caps(sentence.tokens):
        return REASON_ALL_CAPS
    try:
        spans = decode_spans(sentence.labels, policy="repair")
    except DecodeError:
        return REASON_OVERLAP  # labels outside the tag alphabet
    if len(spans) == 1:
        span = spans[0]
        if all(
            span.start <= i < span.end
            for i, token in enumerate(sentence.tokens)
            if not _is_punct_token(token)
        ):
            return REASON_SINGLE_ENTITY
    if bio_violations(sentence.labels):
        return REASON_OVERLAP
    entity_tokens = sum(1 for label in sentence.labels if label != OUTSIDE)
    if entity_tokens / len(sentence.tokens) > policy.max_entity_coverage:
        return REASON_ENTITY_COVERAGE
    return None


def select_candidates(
    article_sentences: list[AnnotatedSentence],
    policy: SelectionPolicy,
) -> tuple[list[AnnotatedSentence], list[tuple[AnnotatedSentence, str]]]:
    """Apply the selection policy to one article's ordered sentences.

    Returns (accepted, rejects); together they partition the considered
    window. Sentences outside the window (the skipped opener, anything
    past the take_next horizon) appear in neither.
    """
    window = article_sentences[1 if policy.skip_first else 0:]
    window = window[: policy.take_next]
    accepted: list[AnnotatedSentence] = []
    rejects: list[tuple[AnnotatedSentence, str]] = []
    negatives_kept = 0
    for sentence in window:
        reason = _failure_reason(sentence, policy)
        if reason:
            rejects.append((sentence, reason))
            continue
        has_entities = any(label != OUTSIDE for label in sentence.labels)
        if has_entities:
            accepted.append(sentence)
            continue
        if len(sentence.tokens) < policy.min_negative_tokens:
            rejects.append((sentence, REASON_NEGATIVE_TOO_SHORT))
        elif negatives_kept >= policy.negatives_per_article:
            rejects.append((sentence, REASON_NEGATIVE_BUDGET))
        else:
            negatives_kept += 1
            accepted.append(sentence)
    return accepted, rejects


def normalized_text(text: str) -> str:
    return " ".join(text.split())


def dedupe(
    sentences: Iterable[AnnotatedSentence],
    on_duplicate=None,
) -> Iterator[AnnotatedSentence]:
    """Keep the first occurrence of each normalized text, corpus-wide."""
    seen: set[str] = set()
    for sentence in sentences:
        key = normalized_text(sentence.text)
        if key in seen:
            if on_duplicate is not None:
                on_duplicate(sentence)
            continue
        seen.add(key)
        yield sentence


def assign_ids(
    sentences: Iterable[AnnotatedSentence],
    start: int = 1,
) -> Iterator[AnnotatedSentence]:
    """Stamp final {running}/{article}-{sentence} ids in stream order."""
    running = start
    for sentence in sentences:
        article_id, sent_index = sentence.article_and_index()
        yield AnnotatedSentence(
            id=f"{running}/{article_id}-{sent_index}",
            text=sentence.text,
            tokens=list(sentence.tokens),
            labels=list(sentence.labels),
        )
        running += 1


def group_by_article(
    sentences: Iterable[AnnotatedSentence],
) -> Iterator[list[AnnotatedSentence]]:
    """Group a stream by consecutive article id (input is article-ordered)."""
    group: list[AnnotatedSentence] = []
    current: int | None = None
    for sentence in sentences:
        article_id, _ = sentence.article_and_index()
        if current is None or article_id == current:
            group.append(sentence)
        else:
            yield group
            group = [sentence]
        current = article_id
    if group:
        yield group
