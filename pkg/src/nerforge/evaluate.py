"""Span-level scoring of BIO predictions against gold labels.

Spans match only on identical (type, start, end); scores are micro
averaged over the whole corpus. Two decoding policies are offered:
strict (malformed BIO is an error) and repair (the conventional lenient
reading where a dangling I-X opens a new span and, additionally, a bare
type name counts as B-X).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

OUTSIDE = "O"
POLICIES = ("strict", "repair")


class DecodeError(ValueError):
    def __init__(self, message: str, token_index: int):
        super().__init__(f"token {token_index}: {message}")
        self.token_index = token_index


class ShapeMismatch(ValueError):
    """Gold and predictions disagree on sentence or token counts."""


@dataclass(frozen=True, order=True)
class Span:
    type: str
    start: int
    end: int


def _parse_tag(label: str, index: int, policy: str) -> tuple[str, str]:
    """Return (prefix, type) where prefix is O, B or I."""
    if label == OUTSIDE:
        return OUTSIDE, ""
    if len(label) > 2 and label[1] == "-" and label[0] in "BI":
        kind = label[2:]
        if kind and kind == kind.upper() and kind.replace("-", "").isalnum():
            return label[0], kind
        raise DecodeError(f"unknown tag {label!r}", index)
    if label and label.isalpha() and label == label.upper():
        # bare type name, conceded by the judging prompt for singletons
        if policy == "repair":
            return "B", label
        raise DecodeError(f"bare tag {label!r} not allowed in strict mode", index)
    raise DecodeError(f"unknown tag {label!r}", index)


def decode_spans(labels: Sequence[str], policy: str = "repair") -> list[Span]:
    """Decode a BIO sequence into spans with exclusive end indices.

    Repair mode is total over the tag alphabet: a dangling I-X is read as
    B-X. Strict mode raises DecodeError at the offending token instead.
    """
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}, got {policy!r}")
    spans: list[Span] = []
    open_type: str | None = None
    open_start = 0

    def close(end: int) -> None:
        nonlocal open_type
        if open_type is not None:
            spans.append(Span(open_type, open_start, end))
            open_type = None

    for i, label in enumerate(labels):
        prefix, kind = _parse_tag(label, i, policy)
        if prefix == OUTSIDE:
            close(i)
        elif prefix == "B":
            close(i)
            open_type, open_start = kind, i
        else:  # I
            if open_type == kind:
                continue
            if policy == "strict":
                raise DecodeError(f"{label} without a matching span open", i)
            close(i)
            open_type, open_start = kind, i
    close(len(labels))
    return spans


@dataclass
class MicroScores:
    true_positives: int
    predicted_spans: int
    gold_spans: int
    precision: float = field(init=False)
    recall: float = field(init=False)
    f1: float = field(init=False)

    def __post_init__(self) -> None:
        tp = self.true_positives
        self.precision = tp / self.predicted_spans if self.predicted_spans else 0.0
        self.recall = tp / self.gold_spans if self.gold_spans else 0.0
        denom = self.precision + self.recall
        self.f1 = 2 * self.precision * self.recall / denom if denom else 0.0


@dataclass
class EvalReport:
    overall: MicroScores
    per_type: dict[str, MicroScores]


def micro_scores(
    gold: Sequence[Sequence[str]],
    pred: Sequence[Sequence[str]],
    policy: str = "repair",
) -> EvalReport:
    """Micro precision/recall/F1 over pooled spans, plus per-type rows.

    A predicted span is a true positive iff the identical (type, start,
    end) span exists in the gold labels of the same sentence.
    """
    if len(gold) != len(pred):
        raise ShapeMismatch(f"gold has {len(gold)} sentences, predictions {len(pred)}")
    tp = n_pred = n_gold = 0
    by_type: dict[str, list[int]] = {}
    for i, (g_labels, p_labels) in enumerate(zip(gold, pred)):
        if len(g_labels) != len(p_labels):
            raise ShapeMismatch(
                f"sentence {i}: gold has {len(g_labels)} tokens, prediction {len(p_labels)}"
            )
        g_spans = set(decode_spans(g_labels, policy))
        p_spans = set(decode_spans(p_labels, policy))
        tp += len(g_spans & p_spans)
        n_pred += len(p_spans)
        n_gold += len(g_spans)
        for span in g_spans | p_spans:
            counts = by_type.setdefault(span.type, [0, 0, 0])
            if span in g_spans and span in p_spans:
                counts[0] += 1
            if span in p_spans:
                counts[1] += 1
            if span in g_spans:
                counts[2] += 1
    per_type = {
        kind: MicroScores(c[0], c[1], c[2]) for kind, c in sorted(by_type.items())
    }
    return EvalReport(overall=MicroScores(tp, n_pred, n_gold), per_type=per_type)


def micro_scores_from_records(gold_records, pred_records, policy: str = "repair") -> EvalReport:
    """Score two lists of sentence records, checking id alignment when present."""
    if len(gold_records) != len(pred_records):
        raise ShapeMismatch(
            f"gold has {len(gold_records)} records, predictions {len(pred_records)}"
        )
    for g, p in zip(gold_records, pred_records):
        if g.id and p.id and g.id != p.id:
            raise ShapeMismatch(f"record id mismatch: gold {g.id!r} vs prediction {p.id!r}")
    return micro_scores(
        [g.labels for g in gold_records], [p.labels for p in pred_records], policy
    )


def write_scores_csv(report: EvalReport, path: str | Path) -> None:
    """Overall and per-type rows, full precision plus 2-decimal display columns."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["scope", "true_positives", "predicted", "gold",
             "precision", "recall", "f1", "precision_2dp", "recall_2dp", "f1_2dp"]
        )
        rows: list[tuple[str, MicroScores]] = [("overall", report.overall)]
        rows.extend(report.per_type.items())
        for scope, s in rows:
            writer.writerow(
                [scope, s.true_positives, s.predicted_spans, s.gold_spans,
                 repr(s.precision), repr(s.recall), repr(s.f1),
                 f"{s.precision:.2f}", f"{s.recall:.2f}", f"{s.f1:.2f}"]
            )


def render_scores(report: EvalReport) -> str:
    lines = [f"{'scope':<10} {'P':>6} {'R':>6} {'F1':>6}  {'tp':>6} {'pred':>6} {'gold':>6}"]
    rows: list[tuple[str, MicroScores]] = [("overall", report.overall)]
    rows.extend(report.per_type.items())
    for scope, s in rows:
        lines.append(
            f"{scope:<10} {s.precision:>6.2f} {s.recall:>6.2f} {s.f1:>6.2f}"
            f"  {s.true_positives:>6} {s.predicted_spans:>6} {s.gold_spans:>6}"
        )
    return "\n".join(lines)
