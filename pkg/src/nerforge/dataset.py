"""Final corpus assembly: seeded shuffle, 80/10/10 split, statistics.

The shuffle runs on an explicitly specified generator (splitmix64 feeding
Fisher-Yates) so identical seeds give identical splits on any platform or
reimplementation. Sentences pinned to the test split (the human-verified
set) bypass the shuffle entirely.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .records import AnnotatedSentence

SPLIT_NAMES = ("train", "dev", "test")
DEFAULT_RATIOS = (0.8, 0.1, 0.1)
RATIO_TOLERANCE = 1e-9


class SplitConfigError(ValueError):
    pass


class StatsError(ValueError):
    pass


class SplitMix64:
    """splitmix64: 64-bit state advanced by 0x9E3779B97F4A7C15, output mixed
    with 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB (Steele et al. constants)."""

    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self.MASK

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & self.MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
        return z ^ (z >> 31)


def seeded_shuffle(items: list, seed: int) -> None:
    """In-place Fisher-Yates driven by splitmix64; j = next() mod (i+1)."""
    rng = SplitMix64(seed)
    for i in range(len(items) - 1, 0, -1):
        j = rng.next() % (i + 1)
        items[i], items[j] = items[j], items[i]


def largest_remainder_sizes(total: int, ratios: Sequence[float]) -> list[int]:
    """Integer split sizes summing to total; leftovers go to the largest
    fractional parts, ties resolved toward later splits."""
    exact = [total * r for r in ratios]
    sizes = [int(x) for x in exact]
    leftover = total - sum(sizes)
    order = sorted(
        range(len(ratios)), key=lambda i: (exact[i] - sizes[i], i), reverse=True
    )
    for i in order[:leftover]:
        sizes[i] += 1
    return sizes


def split(
    sentences: Sequence[AnnotatedSentence],
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 0,
    pinned_test: Iterable[str] = (),
) -> tuple[list[AnnotatedSentence], list[AnnotatedSentence], list[AnnotatedSentence]]:
    """Partition into (train, dev, test).

    Pinned ids go to test unconditionally and keep input order; the rest is
    shuffled with the seeded generator and cut by cumulative ratio with
    largest-remainder rounding.
    """
    if len(ratios) != 3:
        raise SplitConfigError(f"expected 3 ratios, got {len(ratios)}")
    if abs(sum(ratios) - 1.0) > RATIO_TOLERANCE:
        raise SplitConfigError(f"ratios must sum to 1, got {sum(ratios)!r}")
    pinned = set(pinned_test)
    corpus_ids = {s.id for s in sentences}
    unknown = pinned - corpus_ids
    if unknown:
        sample = ", ".join(sorted(unknown)[:5])
        raise SplitConfigError(f"{len(unknown)} pinned ids not in corpus (e.g. {sample})")

    pinned_sentences = [s for s in sentences if s.id in pinned]
    rest = [s for s in sentences if s.id not in pinned]
    seeded_shuffle(rest, seed)
    sizes = largest_remainder_sizes(len(rest), ratios)
    train = rest[: sizes[0]]
    dev = rest[sizes[0]: sizes[0] + sizes[1]]
    test = pinned_sentences + rest[sizes[0] + sizes[1]:]
    return train, dev, test


@dataclass
class SplitStats:
    sentences: dict[str, int]
    spans: dict[str, dict[str, int]]

    def types(self) -> list[str]:
        known = ["PER", "ORG", "LOC", "DATE", "MISC"]
        extra = sorted(
            {t for per_split in self.spans.values() for t in per_split} - set(known)
        )
        return known + extra

    def total_sentences(self) -> int:
        return sum(self.sentences.values())


def stats(splits: Mapping[str, Sequence[AnnotatedSentence]]) -> SplitStats:
    """Sentence counts and span counts (one B- label plus its I run = one
    span) per split and entity type."""
    sentence_counts: dict[str, int] = {}
    span_counts: dict[str, dict[str, int]] = {}
    for name, sentences in splits.items():
        sentence_counts[name] = len(sentences)
        per_type: dict[str, int] = {}
        for sentence in sentences:
            problems = sentence.violations()
            if problems:
                raise StatsError(f"sentence {sentence.id}: {problems[0]}")
            for label in sentence.labels:
                if label.startswith("B-"):
                    kind = label[2:]
                    per_type[kind] = per_type.get(kind, 0) + 1
        span_counts[name] = per_type
    return SplitStats(sentences=sentence_counts, spans=span_counts)


def render_stats(split_stats: SplitStats) -> str:
    """Aligned table with thousands separators."""
    types = split_stats.types()
    header = f"{'split':<8} {'sents':>8} " + " ".join(f"{t:>8}" for t in types)
    lines = [header]
    for name in split_stats.sentences:
        row = [f"{name:<8}", f"{split_stats.sentences[name]:>8,}"]
        for t in types:
            row.append(f"{split_stats.spans[name].get(t, 0):>8,}")
        lines.append(" ".join(row))
    return "\n".join(lines)


def write_stats_csv(split_stats: SplitStats, path: str | Path) -> None:
    types = split_stats.types()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "sentences", *types])
        for name in split_stats.sentences:
            writer.writerow(
                [name, split_stats.sentences[name]]
                + [split_stats.spans[name].get(t, 0) for t in types]
            )
