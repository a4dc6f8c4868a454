"""Raw agreement and Cohen's kappa between binary verdict files.

Counts are exact integers over the id intersection of two verdict CSVs;
kappa is computed from integer sums with a single final division, so
textbook cases come out exact.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .judge import Decision, read_verdict_file

ERROR_EMPTY_INTERSECTION = "EMPTY_INTERSECTION"


class AgreementError(ValueError):
    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class ConfusionCounts:
    """Pairwise decision counts: n<a><b> = rater A said a, rater B said b."""

    n11: int
    n10: int
    n01: int
    n00: int

    @property
    def total(self) -> int:
        return self.n11 + self.n10 + self.n01 + self.n00

    @property
    def agreement(self) -> int:
        return self.n11 + self.n00

    def transposed(self) -> "ConfusionCounts":
        return ConfusionCounts(self.n11, self.n01, self.n10, self.n00)

    def flipped(self) -> "ConfusionCounts":
        return ConfusionCounts(self.n00, self.n01, self.n10, self.n11)


def counts_from_decisions(
    a: Mapping[str, Decision],
    b: Mapping[str, Decision],
) -> tuple[ConfusionCounts, set[str], set[str]]:
    """Counts over the id intersection plus the ids missing on either side."""
    shared = set(a) & set(b)
    if not shared:
        raise AgreementError("no sentence ids in common", code=ERROR_EMPTY_INTERSECTION)
    n11 = n10 = n01 = n00 = 0
    for sentence_id in shared:
        da, db = int(a[sentence_id]), int(b[sentence_id])
        if da and db:
            n11 += 1
        elif da and not db:
            n10 += 1
        elif not da and db:
            n01 += 1
        else:
            n00 += 1
    return ConfusionCounts(n11, n10, n01, n00), set(a) - shared, set(b) - shared


@dataclass
class AlignResult:
    counts: ConfusionCounts
    only_in_a: set[str]
    only_in_b: set[str]


def align(verdicts_a: str | Path, verdicts_b: str | Path) -> AlignResult:
    """Confusion counts between two verdict CSV files."""
    a = read_verdict_file(verdicts_a)
    b = read_verdict_file(verdicts_b)
    counts, only_a, only_b = counts_from_decisions(a.decisions, b.decisions)
    return AlignResult(counts=counts, only_in_a=only_a, only_in_b=only_b)


def kappa(counts: ConfusionCounts) -> float:
    """Cohen's kappa for two binary raters.

    kappa = (p_o - p_e) / (1 - p_e) with p_o the observed agreement rate
    and p_e the chance rate from the marginals. Computed as the integer
    ratio (N*agree - marg) / (N^2 - marg); exactly 1.0 for perfect
    agreement, an error when chance agreement is 1 but observed is not.
    """
    n = counts.total
    if n <= 0:
        raise AgreementError("kappa undefined for empty counts")
    marg = (counts.n11 + counts.n10) * (counts.n11 + counts.n01) + (
        counts.n00 + counts.n10
    ) * (counts.n00 + counts.n01)
    numerator = n * counts.agreement - marg
    denominator = n * n - marg
    if denominator == 0:
        if numerator == 0:
            return 1.0
        raise AgreementError("kappa undefined: chance agreement is 1 but observed is not")
    return numerator / denominator


@dataclass
class JudgeRow:
    judge_id: str
    agreement: int | None = None
    kappa: float | None = None
    total: int | None = None
    error: str | None = None


def compare_table(
    reference: str | Path,
    judges: Sequence[str | Path],
) -> list[JudgeRow]:
    """One row per judge against the consensus reference, sorted by
    ascending agreement; rows that fail to align carry an error instead."""
    ref = read_verdict_file(reference)
    rows: list[JudgeRow] = []
    for judge_path in judges:
        stem = Path(judge_path).stem
        try:
            v = read_verdict_file(judge_path)
            judge_id = v.judge_id or stem
            counts, _, _ = counts_from_decisions(v.decisions, ref.decisions)
            rows.append(
                JudgeRow(
                    judge_id=judge_id,
                    agreement=counts.agreement,
                    kappa=kappa(counts),
                    total=counts.total,
                )
            )
        except (AgreementError, ValueError, OSError) as exc:
            rows.append(JudgeRow(judge_id=stem, error=str(exc)))
    scored = sorted(
        (r for r in rows if r.error is None), key=lambda r: (r.agreement, r.judge_id)
    )
    failed = [r for r in rows if r.error is not None]
    return scored + failed


def write_report_csv(rows: Sequence[JudgeRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["judge_id", "agreement", "total", "kappa", "error"])
        for row in rows:
            writer.writerow(
                [
                    row.judge_id,
                    "" if row.agreement is None else row.agreement,
                    "" if row.total is None else row.total,
                    "" if row.kappa is None else repr(row.kappa),
                    row.error or "",
                ]
            )


def render_report(rows: Sequence[JudgeRow]) -> str:
    lines = [f"{'judge':<28} {'agreement':>10} {'kappa':>7}"]
    for row in rows:
        if row.error is not None:
            lines.append(f"{row.judge_id:<28} error: {row.error}")
        else:
            lines.append(
                f"{row.judge_id:<28} {row.agreement:>6}/{row.total:<4} {row.kappa:>6.2f}"
            )
    return "\n".join(lines)
