"""Sentence splitting and tokenization that never lose a link.

The splitter is rule based: it breaks on sentence terminators followed by
whitespace and an uppercase letter or digit, with suppression for known
abbreviations, initials and day ordinals before month names. A boundary
that would cut through a hyperlink span is suppressed outright.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

from .ingest import Article, LinkSpan
from .records import dump_json_line, read_jsonl

TERMINATORS = ".!?"
SPLIT_PUNCT = set('.,;:!?()"«»')
OPENING_QUOTES = set("\"'«„”‚’([")

MONTH_WORDS = frozenset({
    "Januar", "Februar", "Mäerz", "Abrëll", "Mee", "Juni", "Juli",
    "August", "September", "Oktober", "November", "Dezember",
})


@dataclass(frozen=True)
class LinkRef:
    """A sentence-local link: destination title plus the anchor text."""
    target: str
    surface: str


@dataclass
class SentenceDraft:
    article_id: int
    sent_index: int
    text: str
    start: int = 0  # character offset of text within the article body
    tokens: list[str] = field(default_factory=list)
    link_tags: list[int | None] = field(default_factory=list)
    links: list[LinkRef] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "article_id": self.article_id,
            "sent_index": self.sent_index,
            "text": self.text,
            "tokens": list(self.tokens),
            "link_tags": list(self.link_tags),
            "links": [{"target": l.target, "surface": l.surface} for l in self.links],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SentenceDraft":
        return cls(
            article_id=int(obj["article_id"]),
            sent_index=int(obj["sent_index"]),
            text=str(obj["text"]),
            tokens=[str(t) for t in obj.get("tokens", [])],
            link_tags=[None if t is None else int(t) for t in obj.get("link_tags", [])],
            links=[LinkRef(str(l["target"]), str(l["surface"])) for l in obj.get("links", [])],
        )


def load_abbreviations(path: str | Path | None = None) -> frozenset[str]:
    """Abbreviation file: one entry per line, # starts a comment."""
    if path is None:
        text = resources.files("nerforge.data").joinpath("abbreviations.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    entries = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            entries.add(line)
    return frozenset(entries)


def _word_ending_at(text: str, index: int) -> str:
    """The maximal run of non-space characters ending at index (inclusive)."""
    start = index
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    return text[start:index + 1]


def _next_word(text: str, index: int) -> str:
    n = len(text)
    while index < n and text[index].isspace():
        index += 1
    start = index
    while index < n and not text[index].isspace():
        index += 1
    return text[start:index]


def _straddles_link(links: Iterable[LinkSpan], split_at: int) -> bool:
    return any(l.start < split_at < l.end for l in links)


def split_sentences(article: Article, abbreviations: frozenset[str]) -> list[SentenceDraft]:
    """Split the article body into sentence drafts (tokens not yet filled)."""
    body = article.body
    drafts: list[SentenceDraft] = []
    sent_start = 0
    sent_index = 0

    def close(end: int) -> None:
        nonlocal sent_start, sent_index
        raw = body[sent_start:end]
        stripped = raw.strip()
        if stripped:
            offset = sent_start + (len(raw) - len(raw.lstrip()))
            drafts.append(
                SentenceDraft(
                    article_id=article.article_id,
                    sent_index=sent_index,
                    text=stripped,
                    start=offset,
                )
            )
            sent_index += 1
        sent_start = end

    i = 0
    n = len(body)
    while i < n:
        ch = body[i]
        if ch == "\n":
            close(i)
            sent_start = i + 1
            i += 1
            continue
        if ch not in TERMINATORS:
            i += 1
            continue
        run_end = i
        while run_end + 1 < n and body[run_end + 1] in TERMINATORS:
            run_end += 1
        split_at = run_end + 1
        if split_at >= n:
            break
        if not body[split_at].isspace():
            i = run_end + 1
            continue
        j = split_at
        while j < n and (body[j].isspace() or body[j] in OPENING_QUOTES):
            j += 1
        if j >= n or not (body[j].isupper() or body[j].isdigit()):
            i = run_end + 1
            continue
        word = _word_ending_at(body, run_end)
        if word in abbreviations:
            i = run_end + 1
            continue
        if body[i] == "." and re.fullmatch(r"[^\W\d_]\.", word):
            # single initial, e.g. "J." in a name
            i = run_end + 1
            continue
        if body[i] == "." and re.fullmatch(r"\d{1,2}\.", word) and _next_word(body, split_at) in MONTH_WORDS:
            i = run_end + 1
            continue
        if _straddles_link(article.links, split_at):
            i = run_end + 1
            continue
        close(split_at)
        i = split_at

    close(n)
    return drafts


def _iter_token_ranges(text: str) -> Iterator[tuple[int, int]]:
    """Yield (start, end) of each token within text.

    Leading/trailing punctuation in SPLIT_PUNCT becomes its own token; a
    trailing period stays attached to 1-2 digit ordinals unless the chunk
    ends the sentence.
    """
    chunks = [(m.start(), m.end()) for m in re.finditer(r"\S+", text)]
    for idx, (cs, ce) in enumerate(chunks):
        is_last_chunk = idx == len(chunks) - 1
        s, e = cs, ce
        while s < e and text[s] in SPLIT_PUNCT:
            yield s, s + 1
            s += 1
        trailing: list[tuple[int, int]] = []
        while e > s and text[e - 1] in SPLIT_PUNCT:
            trailing.append((e - 1, e))
            e -= 1
        if (
            not is_last_chunk
            and trailing
            and text[trailing[-1][0]] == "."
            and re.fullmatch(r"\d{1,2}", text[s:e])
        ):
            e += 1
            trailing.pop()
        if s < e:
            yield s, e
        for ts, te in reversed(trailing):
            yield ts, te


def tokenize(sentence: SentenceDraft, article_links: list[LinkSpan]) -> SentenceDraft:
    """Populate tokens and per-token link tags on a sentence draft.

    Tokens overlapping a LinkSpan carry that link's tag; a multi-token link
    tags all its tokens with the same reference. The returned draft holds a
    sentence-local links list that its link_tags index into.
    """
    text = sentence.text
    base = sentence.start
    sent_end = base + len(text)
    contained = [
        (i, l) for i, l in enumerate(article_links) if l.start >= base and l.end <= sent_end
    ]

    tokens: list[str] = []
    article_tags: list[int | None] = []
    for s, e in _iter_token_ranges(text):
        tokens.append(text[s:e])
        tok_start, tok_end = base + s, base + e
        tag = None
        for idx, link in contained:
            if tok_start < link.end and tok_end > link.start:
                tag = idx
                break
        article_tags.append(tag)

    local_index: dict[int, int] = {}
    links: list[LinkRef] = []
    link_tags: list[int | None] = []
    for tag in article_tags:
        if tag is None:
            link_tags.append(None)
            continue
        if tag not in local_index:
            local_index[tag] = len(links)
            span = article_links[tag]
            links.append(LinkRef(span.target_title, span.surface))
        link_tags.append(local_index[tag])

    return SentenceDraft(
        article_id=sentence.article_id,
        sent_index=sentence.sent_index,
        text=text,
        start=sentence.start,
        tokens=tokens,
        link_tags=link_tags,
        links=links,
    )


def segment_article(article: Article, abbreviations: frozenset[str]) -> list[SentenceDraft]:
    return [tokenize(d, article.links) for d in split_sentences(article, abbreviations)]


def write_sentences(path: str | Path, drafts: Iterable[SentenceDraft]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for draft in drafts:
            fh.write(dump_json_line(draft.to_dict()))
            fh.write("\n")
            count += 1
    return count


def read_sentences(path: str | Path) -> Iterator[SentenceDraft]:
    for obj in read_jsonl(path):
        yield SentenceDraft.from_dict(obj)
