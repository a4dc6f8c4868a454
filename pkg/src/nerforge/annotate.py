"""Label-sequence construction and repair.

Typed link groups become B-/I- labels, a regex pass catches date
expressions the linking missed, tag harmonization folds foreign tag sets
(GPE under LOC), and a pluggable secondary annotator may fill in labels
for tokens still tagged O. Every transformation preserves token count and
BIO well-formedness.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .bio import EXTENDED_TYPES, KNOWN_TYPES, OUTSIDE, bio_violations, split_label
from .entity_link import TypedSentence
from .records import AnnotatedSentence

PROVISIONAL_RUNNING = 0


class AnnotationError(ValueError):
    """A typed sentence cannot be projected into a valid label sequence."""


class TagMapError(ValueError):
    """A harmonization mapping names an unknown target type."""


def provisional_id(article_id: int, sent_index: int) -> str:
    return f"{PROVISIONAL_RUNNING}/{article_id}-{sent_index}"


def project_bio(sentence: TypedSentence) -> AnnotatedSentence:
    """Turn typed link groups into B-X/I-X labels, everything else O.

    Adjacent but distinct links of the same type stay separate spans.
    Raises AnnotationError when a link's tokens are not contiguous or a
    group mixes types (the caller routes such sentences to the reject path).
    """
    labels = [OUTSIDE] * len(sentence.tokens)
    seen_groups: set[int] = set()
    open_group: int | None = None
    for i, (tag, kind) in enumerate(zip(sentence.link_tags, sentence.token_types)):
        if tag is None:
            if kind is not None:
                raise AnnotationError(f"token {i} typed without a link group")
            open_group = None
            continue
        if kind is None:
            raise AnnotationError(f"token {i} grouped without a type")
        if tag != open_group:
            if tag in seen_groups:
                raise AnnotationError(f"link group {tag} is not contiguous (overlap)")
            seen_groups.add(tag)
            labels[i] = f"B-{kind}"
            open_group = tag
        else:
            prev_kind = split_label(labels[i - 1])[1]
            if prev_kind != kind:
                raise AnnotationError(f"link group {tag} mixes types {prev_kind}/{kind}")
            labels[i] = f"I-{kind}"
    return AnnotatedSentence(
        id=provisional_id(sentence.article_id, sentence.sent_index),
        text=sentence.text,
        tokens=list(sentence.tokens),
        labels=labels,
    )


class DatePatternSet:
    """Named regexes applied to the space-joined token string; a match only
    counts when it aligns exactly with token boundaries."""

    def __init__(self, patterns: Mapping[str, str]):
        self.patterns: dict[str, re.Pattern[str]] = {
            name: re.compile(expr) for name, expr in patterns.items()
        }

    @classmethod
    def load(cls, path: str | Path) -> "DatePatternSet":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    @classmethod
    def default(cls) -> "DatePatternSet":
        text = resources.files("nerforge.data").joinpath("date_patterns.json").read_text("utf-8")
        return cls(json.loads(text))

    def without(self, *names: str) -> "DatePatternSet":
        kept = {n: p.pattern for n, p in self.patterns.items() if n not in names}
        return DatePatternSet(kept)

    def matching_runs(self, tokens: Sequence[str]) -> list[tuple[int, int]]:
        """Token index ranges [start, end) that some pattern covers exactly."""
        joined = " ".join(tokens)
        starts: dict[int, int] = {}
        ends: dict[int, int] = {}
        pos = 0
        for i, token in enumerate(tokens):
            starts[pos] = i
            ends[pos + len(token)] = i + 1
            pos += len(token) + 1
        runs = []
        for pattern in self.patterns.values():
            for m in pattern.finditer(joined):
                first = starts.get(m.start())
                last = ends.get(m.end())
                if first is not None and last is not None:
                    runs.append((first, last))
        return runs


def tag_dates(sentence: AnnotatedSentence, patterns: DatePatternSet) -> AnnotatedSentence:
    """Label date expressions over runs of O tokens; never overwrites.

    Matched-and-free token indices are merged into maximal runs before
    labelling, so an adjacent day and year become one DATE span.
    """
    marked = [False] * len(sentence.tokens)
    for first, last in patterns.matching_runs(sentence.tokens):
        if all(sentence.labels[i] == OUTSIDE for i in range(first, last)):
            for i in range(first, last):
                marked[i] = True
    labels = list(sentence.labels)
    i = 0
    while i < len(marked):
        if not marked[i]:
            i += 1
            continue
        labels[i] = "B-DATE"
        i += 1
        while i < len(marked) and marked[i]:
            labels[i] = "I-DATE"
            i += 1
    return sentence.with_labels(labels)


def harmonize_tags(sentence: AnnotatedSentence, mapping: Mapping[str, str]) -> AnnotatedSentence:
    """Rewrite each label's type through the mapping (B-GPE -> B-LOC etc.)."""
    for source, target in mapping.items():
        if "-" in source or "-" in target:
            raise TagMapError(f"mapping must use bare type names, got {source!r}->{target!r}")
        if target not in KNOWN_TYPES:
            raise TagMapError(f"mapping target {target!r} is not a known type")
    labels = []
    for label in sentence.labels:
        prefix, kind = split_label(label)
        if kind is not None and kind in mapping:
            label = f"{prefix}-{mapping[kind]}"
        labels.append(label)
    return sentence.with_labels(labels)


def parse_tag_map(spec_text: str) -> dict[str, str]:
    """Parse "GPE=LOC,FOO=MISC" style mapping arguments."""
    mapping: dict[str, str] = {}
    for part in spec_text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise TagMapError(f"expected SOURCE=TARGET, got {part!r}")
        source, target = part.split("=", 1)
        mapping[source.strip()] = target.strip()
    return mapping


class SecondaryAnnotator(Protocol):
    """External labelling hook re-evaluating tokens still tagged O."""

    concurrent: bool

    def propose(self, sentence: AnnotatedSentence) -> Sequence[str]: ...


@dataclass
class SecondaryStats:
    applied: int = 0
    unchanged: int = 0
    rejected_length: int = 0
    rejected_unknown_tag: int = 0
    rejected_invalid_bio: int = 0

    @property
    def rejected(self) -> int:
        return self.rejected_length + self.rejected_unknown_tag + self.rejected_invalid_bio


def _proposal_tag_ok(label: str) -> bool:
    if label == OUTSIDE:
        return True
    try:
        _prefix, kind = split_label(label)
    except ValueError:
        return False
    return kind in EXTENDED_TYPES


def apply_secondary_annotator(
    sentence: AnnotatedSentence,
    annotator: SecondaryAnnotator,
    stats: SecondaryStats | None = None,
) -> AnnotatedSentence:
    """Let the annotator relabel O tokens only; earlier labels are
    authoritative. Malformed proposals are rejected wholesale and counted."""
    stats = stats if stats is not None else SecondaryStats()
    proposal = list(annotator.propose(sentence))
    if len(proposal) != len(sentence.labels):
        stats.rejected_length += 1
        return sentence
    if not all(_proposal_tag_ok(label) for label in proposal):
        stats.rejected_unknown_tag += 1
        return sentence
    merged = [
        proposed if current == OUTSIDE else current
        for current, proposed in zip(sentence.labels, proposal)
    ]
    if bio_violations(merged):
        stats.rejected_invalid_bio += 1
        return sentence
    if merged == sentence.labels:
        stats.unchanged += 1
        return sentence
    stats.applied += 1
    return sentence.with_labels(merged)
