"""BIO label helpers shared by every stage that touches label sequences."""
from __future__ import annotations

from typing import Sequence

OUTSIDE = "O"

# Entity types this pipeline produces itself.
KNOWN_TYPES = frozenset({"PER", "ORG", "LOC", "DATE", "MISC"})

# Types additionally accepted from external annotators; harmonization folds
# them into the known set (GPE -> LOC).
EXTENDED_TYPES = KNOWN_TYPES | {"GPE"}


class LabelError(ValueError):
    """A label string is not O, B-<TYPE> or I-<TYPE>."""


def split_label(label: str) -> tuple[str, str | None]:
    """Split a label into (prefix, type); O yields ("O", None)."""
    if label == OUTSIDE:
        return OUTSIDE, None
    if len(label) > 2 and label[1] == "-" and label[0] in "BI":
        kind = label[2:]
        if kind and kind.replace("-", "").isalnum() and kind == kind.upper():
            return label[0], kind
    raise LabelError(f"not a BIO label: {label!r}")


def bio_violations(labels: Sequence[str]) -> list[str]:
    """Return human-readable violations; empty list means the sequence is valid BIO."""
    problems: list[str] = []
    prev_kind: str | None = None
    for i, label in enumerate(labels):
        try:
            prefix, kind = split_label(label)
        except LabelError:
            problems.append(f"token {i}: unknown label {label!r}")
            prev_kind = None
            continue
        if prefix == "I" and kind != prev_kind:
            problems.append(f"token {i}: {label} not preceded by B-{kind} or I-{kind}")
        prev_kind = kind if prefix in ("B", "I") else None
    return problems


def is_bio_valid(labels: Sequence[str]) -> bool:
    return not bio_violations(labels)
