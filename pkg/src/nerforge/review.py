"""Terminal review of annotated sentences, one keystroke per verdict.

The session is an append-only event log (decisions and undos), so a crash
never loses work and the human process stays auditable. A completed
session writes the same verdict CSV machine judges produce, letting the
agreement stage treat humans and models uniformly.
"""
from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, TextIO

from .judge import Decision, JudgeRun, JudgeVerdict, write_verdicts
from .records import AnnotatedSentence

KEY_KEEP = "1"
KEY_DISCARD = "0"
KEY_UNDO = "u"
KEY_QUIT = "q"


class SessionError(Exception):
    """The session file is corrupted or in use; never silently restart."""


class NotInteractive(Exception):
    """Review refuses to run without an interactive terminal."""


@dataclass
class ReviewSession:
    annotator_id: str
    queue: list[str]
    decided: dict[str, int] = field(default_factory=dict)
    order: list[str] = field(default_factory=list)

    @property
    def resume_offset(self) -> int:
        return len(self.decided)

    def decide(self, sentence_id: str, decision: int) -> None:
        self.decided[sentence_id] = decision
        if sentence_id in self.order:
            self.order.remove(sentence_id)
        self.order.append(sentence_id)

    def undo(self) -> str:
        if not self.order:
            raise SessionError("undo with no decision to undo")
        sentence_id = self.order.pop()
        del self.decided[sentence_id]
        return sentence_id

    def complete(self) -> bool:
        return len(self.decided) == len(self.queue)


def _replay(path: Path) -> ReviewSession:
    session: ReviewSession | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                event = json.loads(line)
            except json.JSONDecodeError:
                raise SessionError(f"{path}:{lineno}: invalid JSON event") from None
            kind = event.get("event")
            if lineno == 1:
                if kind != "open":
                    raise SessionError(f"{path}: first event must be 'open'")
                session = ReviewSession(
                    annotator_id=str(event.get("annotator", "")),
                    queue=[str(x) for x in event.get("queue", [])],
                )
                continue
            if session is None:
                raise SessionError(f"{path}: events before 'open'")
            if kind == "decide":
                sentence_id = str(event.get("id"))
                decision = event.get("decision")
                if sentence_id not in session.queue:
                    raise SessionError(f"{path}:{lineno}: decision for unknown id {sentence_id!r}")
                if decision not in (0, 1):
                    raise SessionError(f"{path}:{lineno}: non-binary decision {decision!r}")
                session.decide(sentence_id, int(decision))
            elif kind == "undo":
                try:
                    session.undo()
                except SessionError as exc:
                    raise SessionError(f"{path}:{lineno}: {exc}") from None
            else:
                raise SessionError(f"{path}:{lineno}: unknown event {kind!r}")
    if session is None:
        raise SessionError(f"{path}: empty session file")
    return session


def load_session(path: str | Path) -> ReviewSession:
    return _replay(Path(path))


class _SessionLog:
    def __init__(self, path: Path):
        self.path = path
        self.lock_path = path.with_suffix(path.suffix + ".lock")
        self._fh: TextIO | None = None

    def __enter__(self) -> "_SessionLog":
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise SessionError(
                f"session {self.path} is locked by another process "
                f"(remove {self.lock_path} if that process is gone)"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        self._fh = open(self.path, "a", encoding="utf-8")
        return self

    def append(self, event: dict) -> None:
        assert self._fh is not None
        self._fh.write(json.dumps(event, ensure_ascii=False) + "\n")
        self._fh.flush()

    def __exit__(self, *exc_info) -> None:
        if self._fh is not None:
            self._fh.close()
        try:
            os.unlink(self.lock_path)
        except FileNotFoundError:
            pass


class Terminal:
    """Single-keypress terminal IO; refuses non-interactive streams."""

    def __init__(self, stdin: TextIO | None = None, stdout: TextIO | None = None):
        self.stdin = stdin if stdin is not None else sys.stdin
        self.stdout = stdout if stdout is not None else sys.stdout

    def check_interactive(self) -> None:
        if not (hasattr(self.stdin, "isatty") and self.stdin.isatty()):
            raise NotInteractive("review needs an interactive terminal")

    def write(self, text: str) -> None:
        self.stdout.write(text)
        self.stdout.flush()

    def read_key(self) -> str:
        import termios
        import tty

        fd = self.stdin.fileno()
        old = termios.tcgetattr(fd)
        try:
            tty.setcbreak(fd)
            return self.stdin.read(1)
        finally:
            termios.tcsetattr(fd, termios.TCSADRAIN, old)


def render_sentence(sentence: AnnotatedSentence) -> str:
    """Tokens and labels column-aligned, one column per token."""
    widths = [max(len(t), len(l)) for t, l in zip(sentence.tokens, sentence.labels)]
    token_row = "  ".join(t.ljust(w) for t, w in zip(sentence.tokens, widths))
    label_row = "  ".join(l.ljust(w) for l, w in zip(sentence.labels, widths))
    return f"{token_row}\n{label_row}"


def _verdict_run(session: ReviewSession) -> JudgeRun:
    run = JudgeRun(judge_id=session.annotator_id, prompt_text="", batch_size=len(session.queue) or 1)
    for sentence_id in session.queue:
        run.verdicts.append(
            JudgeVerdict(sentence_id, Decision(session.decided[sentence_id]), session.annotator_id, 0)
        )
    return run


def run_review(
    sentences: Sequence[AnnotatedSentence],
    annotator_id: str,
    session_path: str | Path,
    out_path: str | Path,
    terminal: Terminal | None = None,
    only_ids: set[str] | None = None,
) -> ReviewSession:
    """Present each queued sentence, record 1/0/u/q keys, resume mid-way.

    Writes the verdict CSV once every queued sentence is decided; returns
    the session state either way.
    """
    terminal = terminal if terminal is not None else Terminal()
    terminal.check_interactive()

    if only_ids is not None:
        sentences = [s for s in sentences if s.id in only_ids]
    queue = [s.id for s in sentences]
    by_id = {s.id: s for s in sentences}
    session_path = Path(session_path)

    if session_path.exists() and session_path.stat().st_size > 0:
        session = load_session(session_path)
        if session.queue != queue:
            raise SessionError(
                f"session {session_path} was opened over a different sentence set"
            )
        if session.annotator_id != annotator_id:
            raise SessionError(
                f"session {session_path} belongs to annotator {session.annotator_id!r}"
            )
        fresh = False
    else:
        session = ReviewSession(annotator_id=annotator_id, queue=queue)
        fresh = True

    with _SessionLog(session_path) as log:
        if fresh:
            log.append({"event": "open", "annotator": annotator_id, "queue": queue})
        position = session.resume_offset
        total = len(queue)
        terminal.write(
            f"annotator {annotator_id}: {total} sentences, resuming at {position + 1}\n"
            f"keys: 1 keep, 0 discard, u undo, q save and quit\n\n"
        )
        while position < total:
            sentence = by_id[queue[position]]
            terminal.write(f"[{position + 1}/{total}] {sentence.id}\n")
            terminal.write(render_sentence(sentence) + "\n> ")
            key = terminal.read_key()
            terminal.write("\n")
            if key in (KEY_KEEP, KEY_DISCARD):
                decision = 1 if key == KEY_KEEP else 0
                session.decide(sentence.id, decision)
                log.append({"event": "decide", "id": sentence.id, "decision": decision})
                position += 1
            elif key == KEY_UNDO:
                if session.order:
                    undone = session.undo()
                    log.append({"event": "undo"})
                    position = queue.index(undone)
                    terminal.write(f"undid {undone}\n")
                else:
                    terminal.write("nothing to undo\n")
            elif key == KEY_QUIT:
                terminal.write(f"saved at {session.resume_offset}/{total}\n")
                return session
            # any other key: re-prompt the same sentence

    if session.complete():
        write_verdicts(_verdict_run(session), out_path)
        terminal.write(f"done: wrote {out_path}\n")
    return session
