"""Batch judging of annotated sentences.

Sentences go to a judge client in JSON batches together with a fixed
instruction prompt; the judge answers with CSV lines `sentence_id,decision`
where 1 keeps and 0 discards. Lines that fail to parse, reference unknown
or duplicate ids, or carry non-binary decisions become anomalies; badly
failing batches are retried once and otherwise marked failed wholesale.
A deterministic mock client stands in for any commercial model.
"""
from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field
from enum import IntEnum
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .bio import is_bio_valid
from .evaluate import decode_spans
from .records import AnnotatedSentence

DEFAULT_BATCH_SIZE = 20

DEFAULT_SYSTEM_MESSAGE = (
    "You are a data quality filter. Answer with CSV only: one line per "
    "sentence in the form sentence_id,decision where decision is 1 to keep "
    "the sentence or 0 to discard it. No header, no commentary, no other text."
)

ANOMALY_UNPARSEABLE = "UNPARSEABLE"
ANOMALY_UNKNOWN_ID = "UNKNOWN_ID"
ANOMALY_DUPLICATE_ID = "DUPLICATE_ID"
ANOMALY_NON_BINARY = "NON_BINARY"
ANOMALY_MISSING = "MISSING"
ANOMALY_BATCH_FAILED = "BATCH_FAILED"

VERDICT_HEADER = ["sentence_id", "decision", "judge_id", "batch_index"]


class Decision(IntEnum):
    DISCARD = 0
    KEEP = 1


class JudgeTransportError(Exception):
    """The judge endpoint could not be reached or answered unusably."""


class JudgeRunError(Exception):
    """Every batch of a run failed."""


class VerdictFileError(ValueError):
    pass


@dataclass(frozen=True)
class JudgeVerdict:
    sentence_id: str
    decision: Decision
    judge_id: str
    batch_index: int


@dataclass
class Anomaly:
    batch_index: int
    raw_line: str
    reason: str


@dataclass
class JudgeRun:
    judge_id: str
    prompt_text: str
    batch_size: int = DEFAULT_BATCH_SIZE
    verdicts: list[JudgeVerdict] = field(default_factory=list)
    anomalies: list[Anomaly] = field(default_factory=list)
    failed_batches: list[int] = field(default_factory=list)

    def decisions(self) -> dict[str, Decision]:
        return {v.sentence_id: v.decision for v in self.verdicts}

    def anomalous_ids(self, batches: Sequence[Sequence[AnnotatedSentence]]) -> set[str]:
        decided = {v.sentence_id for v in self.verdicts}
        ids = set()
        for batch in batches:
            for sentence in batch:
                if sentence.id not in decided:
                    ids.add(sentence.id)
        return ids


def load_prompt(path: str | Path | None = None) -> str:
    if path is None:
        return resources.files("nerforge.data").joinpath("judge_prompt.txt").read_text("utf-8")
    return Path(path).read_text(encoding="utf-8")


def build_batches(
    sentences: Iterable[AnnotatedSentence],
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> list[list[AnnotatedSentence]]:
    """Order-preserving chunks; the last batch may run short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    batches: list[list[AnnotatedSentence]] = []
    current: list[AnnotatedSentence] = []
    for sentence in sentences:
        current.append(sentence)
        if len(current) == batch_size:
            batches.append(current)
            current = []
    if current:
        batches.append(current)
    return batches


def batch_payload(batch: Sequence[AnnotatedSentence]) -> str:
    """The JSON array of sentence records sent to the judge."""
    return json.dumps([s.to_dict() for s in batch], ensure_ascii=False, indent=1)


class JudgeClient(Protocol):
    judge_id: str

    def judge_batch(self, system_message: str, prompt: str, payload: str) -> str: ...


class MockJudgeClient:
    """Deterministic stand-in: keeps a sentence iff its labels are valid BIO,
    no single entity span covers more than 80% of the tokens, and an
    unlabelled sentence has at least 8 tokens."""

    judge_id = "mock"
    max_span_coverage = 0.8
    min_negative_tokens = 8

    def _decide(self, record: dict) -> Decision:
        labels = [str(x) for x in record.get("labels", [])]
        tokens = record.get("tokens", [])
        if not tokens or len(labels) != len(tokens):
            return Decision.DISCARD
        if not is_bio_valid(labels):
            return Decision.DISCARD
        spans = decode_spans(labels, policy="repair")
        if spans:
            widest = max(span.end - span.start for span in spans)
            if widest / len(tokens) > self.max_span_coverage:
                return Decision.DISCARD
        else:
            if len(tokens) < self.min_negative_tokens:
                return Decision.DISCARD
        return Decision.KEEP

    def judge_batch(self, system_message: str, prompt: str, payload: str) -> str:
        records = json.loads(payload)
        lines = [f"{record['id']},{int(self._decide(record))}" for record in records]
        return "\n".join(lines)


class HttpJudgeClient:
    """Chat-completion adapter: posts system + user messages at temperature 0
    and returns the first choice's text."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        token_env: str = "JUDGE_API_TOKEN",
        temperature: float = 0.0,
        session=None,
        timeout: float = 120.0,
    ):
        if session is None:
            import requests

            session = requests.Session()
        self.endpoint = endpoint
        self.model = model
        self.token_env = token_env
        self.temperature = temperature
        self.session = session
        self.timeout = timeout
        self.judge_id = model

    def judge_batch(self, system_message: str, prompt: str, payload: str) -> str:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [
                {"role": "system", "content": system_message},
                {"role": "user", "content": f"{prompt}\n\n{payload}"},
            ],
        }
        try:
            response = self.session.post(
                self.endpoint, json=body, headers=headers, timeout=self.timeout
            )
        except Exception as exc:
            raise JudgeTransportError(str(exc)) from exc
        if response.status_code == 429:
            wait = response.headers.get("Retry-After", "1")
            try:
                time.sleep(min(float(wait), 60.0))
            except ValueError:
                time.sleep(1.0)
            raise JudgeTransportError("rate limited (HTTP 429)")
        if response.status_code != 200:
            raise JudgeTransportError(f"HTTP {response.status_code}")
        try:
            data = response.json()
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise JudgeTransportError(f"unusable response shape: {exc}") from exc


def parse_batch_response(
    text: str,
    expected_ids: Sequence[str],
    batch_index: int,
    judge_id: str,
) -> tuple[list[JudgeVerdict], list[Anomaly]]:
    """Parse one batch's CSV reply against the ids it was asked about."""
    expected = set(expected_ids)
    seen: set[str] = set()
    verdicts: list[JudgeVerdict] = []
    anomalies: list[Anomaly] = []
    for raw_line in text.splitlines():
        line = raw_line.strip()
        if not line or line.startswith("```"):
            continue
        if "," not in line:
            anomalies.append(Anomaly(batch_index, raw_line, ANOMALY_UNPARSEABLE))
            continue
        sentence_id, _, decision_text = line.partition(",")
        sentence_id = sentence_id.strip()
        decision_text = decision_text.strip()
        if sentence_id not in expected:
            anomalies.append(Anomaly(batch_index, raw_line, ANOMALY_UNKNOWN_ID))
            continue
        if sentence_id in seen:
            anomalies.append(Anomaly(batch_index, raw_line, ANOMALY_DUPLICATE_ID))
            continue
        if decision_text not in ("0", "1"):
            anomalies.append(Anomaly(batch_index, raw_line, ANOMALY_NON_BINARY))
            continue
        seen.add(sentence_id)
        verdicts.append(
            JudgeVerdict(sentence_id, Decision(int(decision_text)), judge_id, batch_index)
        )
    for sentence_id in expected_ids:
        if sentence_id not in seen:
            anomalies.append(Anomaly(batch_index, "", ANOMALY_MISSING))
    return verdicts, anomalies


def run_judge(
    batches: Sequence[Sequence[AnnotatedSentence]],
    client: JudgeClient,
    prompt: str,
    system_message: str = DEFAULT_SYSTEM_MESSAGE,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> JudgeRun:
    """Send every batch, parse verdicts, retry bad batches once.

    A batch whose reply loses more than half its sentences (to anomalies or
    missing lines) is retried once; if still bad it is marked failed and all
    its sentences become anomalies. The run only fails when every batch does.
    """
    run = JudgeRun(judge_id=client.judge_id, prompt_text=prompt, batch_size=batch_size)
    if not batches:
        return run
    for batch_index, batch in enumerate(batches):
        expected_ids = [s.id for s in batch]
        payload = batch_payload(batch)
        outcome: tuple[list[JudgeVerdict], list[Anomaly]] | None = None
        for attempt in range(2):
            try:
                reply = client.judge_batch(system_message, prompt, payload)
            except JudgeTransportError:
                continue
            verdicts, anomalies = parse_batch_response(
                reply, expected_ids, batch_index, client.judge_id
            )
            bad_ratio = (len(expected_ids) - len(verdicts)) / len(expected_ids)
            if bad_ratio <= 0.5:
                outcome = (verdicts, anomalies)
                break
            # more than half the batch lost: retry once, else record as failed
        if outcome is None:
            run.failed_batches.append(batch_index)
            for sentence_id in expected_ids:
                run.anomalies.append(Anomaly(batch_index, sentence_id, ANOMALY_BATCH_FAILED))
            continue
        verdicts, anomalies = outcome
        run.verdicts.extend(verdicts)
        run.anomalies.extend(anomalies)
    if len(run.failed_batches) == len(batches):
        raise JudgeRunError(f"all {len(batches)} batches failed")
    return run


def apply_verdicts(
    sentences: Sequence[AnnotatedSentence],
    run: JudgeRun,
) -> tuple[list[AnnotatedSentence], list[AnnotatedSentence]]:
    """Partition sentences by decision; anomalous ones land in discarded."""
    decisions = run.decisions()
    kept: list[AnnotatedSentence] = []
    discarded: list[AnnotatedSentence] = []
    for sentence in sentences:
        if decisions.get(sentence.id) is Decision.KEEP:
            kept.append(sentence)
        else:
            discarded.append(sentence)
    return kept, discarded


def write_verdicts(run: JudgeRun, path: str | Path) -> None:
    """Persist verdicts as CSV; refuses to touch an existing file."""
    with open(path, "x", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(VERDICT_HEADER)
        ordered = sorted(
            range(len(run.verdicts)), key=lambda i: (run.verdicts[i].batch_index, i)
        )
        for i in ordered:
            v = run.verdicts[i]
            writer.writerow([v.sentence_id, int(v.decision), v.judge_id, v.batch_index])


@dataclass
class VerdictFile:
    decisions: dict[str, Decision]
    judge_id: str | None


def read_verdict_file(path: str | Path) -> VerdictFile:
    """Read a verdict CSV (2-column minimum; judge_id/batch_index optional)."""
    decisions: dict[str, Decision] = {}
    judge_ids: set[str] = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for row_number, row in enumerate(reader, 1):
            if not row or not any(cell.strip() for cell in row):
                continue
            if row_number == 1 and row[0].strip() == "sentence_id":
                continue
            if len(row) < 2:
                raise VerdictFileError(f"{path}:{row_number}: expected at least 2 columns")
            sentence_id = row[0].strip()
            decision_text = row[1].strip()
            if sentence_id in decisions:
                raise VerdictFileError(f"{path}: duplicate sentence id {sentence_id!r}")
            if decision_text not in ("0", "1"):
                raise VerdictFileError(
                    f"{path}:{row_number}: non-binary decision {decision_text!r}"
                )
            decisions[sentence_id] = Decision(int(decision_text))
            if len(row) >= 3 and row[2].strip():
                judge_ids.add(row[2].strip())
    judge_id = judge_ids.pop() if len(judge_ids) == 1 else None
    return VerdictFile(decisions=decisions, judge_id=judge_id)
