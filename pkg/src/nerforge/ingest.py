"""Wiki XML dump ingestion.

Streams pages out of a MediaWiki export, strips wiki markup down to plain
paragraph text, and keeps every internal article link as a character-exact
span over the cleaned body. The cleaner deliberately reimplements only the
subset of wikitext needed here: templates, tables, refs, headings and list
markers go away; paragraph prose and its links survive.
"""
from __future__ import annotations

import bz2
import html
import re
import xml.etree.ElementTree as ET
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

from .records import dump_json_line, read_jsonl

TEMPLATE_DEPTH_CAP = 32

# Namespace prefixes whose links never denote entities. File-like and
# category links are removed wholesale; for the remaining ones a piped
# surface stays in the text.
MEDIA_NAMESPACES = frozenset({
    "file", "image", "media", "category",
    "fichier", "bild", "datei", "kategorie",
})
NON_ENTITY_NAMESPACES = frozenset({
    "special", "spezial", "template", "schabloun", "help", "hellef",
    "wikipedia", "portal", "user", "benotzer", "talk", "diskussioun",
    "wikt", "wiktionary", "commons", "meta", "mw", "s", "q", "b", "n",
})
INTERWIKI_RE = re.compile(r"^[a-z]{2,3}(-[a-z]+)*$")

REDIRECT_PREFIXES = ("#redirect", "#viruleedung", "#weiterleitung", "#redirection")

_COMMENT_RE = re.compile(r"<!--.*?-->", re.DOTALL)
_DROP_ELEMENT_RE = re.compile(
    r"<(ref|references|gallery|timeline|math|score|syntaxhighlight|source|pre|imagemap)"
    r"\b[^<>]*?/\s*>"
    r"|<(ref|references|gallery|timeline|math|score|syntaxhighlight|source|pre|imagemap)"
    r"\b[^<>]*?>.*?</\2\s*>",
    re.DOTALL | re.IGNORECASE,
)
_TAG_RE = re.compile(r"</?[A-Za-z][^<>]*?>")
_MAGIC_WORD_RE = re.compile(r"__[A-Z]+__")
_QUOTES_RE = re.compile(r"'{2,}")
_EXTERNAL_LINK_RE = re.compile(r"\[(?:https?|ftp)://[^\s\]]*\s*([^\]]*)\]")
_HEADING_RE = re.compile(r"^=+.*?=+\s*$")
_LIST_MARKER_RE = re.compile(r"^[*#:;]+\s*")


class DumpParseError(Exception):
    """The dump XML itself is malformed; parsing cannot continue."""

    def __init__(self, message: str, byte_offset: int | None = None):
        super().__init__(message)
        self.byte_offset = byte_offset


class MarkupError(ValueError):
    """A single page's markup defeated the cleaner; the page gets skipped."""


@dataclass(frozen=True)
class LinkSpan:
    target_title: str
    surface: str
    start: int
    end: int


@dataclass
class Article:
    article_id: int
    title: str
    body: str
    links: list[LinkSpan]

    def violations(self) -> list[str]:
        problems = []
        if self.article_id <= 0:
            problems.append("article_id must be positive")
        if not self.title:
            problems.append("empty title")
        prev_end = -1
        for link in self.links:
            if not (0 <= link.start < link.end <= len(self.body)):
                problems.append(f"link span {link.start}..{link.end} out of bounds")
                continue
            if link.start < prev_end:
                problems.append(f"link span at {link.start} overlaps previous")
            if self.body[link.start:link.end] != link.surface:
                problems.append(
                    f"body slice {self.body[link.start:link.end]!r} != surface {link.surface!r}"
                )
            prev_end = link.end
        starts = [l.start for l in self.links]
        if starts != sorted(starts) or len(set(starts)) != len(starts):
            problems.append("links not sorted by strictly increasing start")
        for marker in ("[[", "]]", "{{", "}}", "'''"):
            if marker in self.body:
                problems.append(f"residual markup {marker!r} in body")
        return problems

    def to_dict(self) -> dict:
        return {
            "article_id": self.article_id,
            "title": self.title,
            "body": self.body,
            "links": [
                {"target": l.target_title, "surface": l.surface, "start": l.start, "end": l.end}
                for l in self.links
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Article":
        return cls(
            article_id=int(obj["article_id"]),
            title=str(obj["title"]),
            body=str(obj["body"]),
            links=[
                LinkSpan(
                    target_title=str(l["target"]),
                    surface=str(l["surface"]),
                    start=int(l["start"]),
                    end=int(l["end"]),
                )
                for l in obj["links"]
            ],
        )


@dataclass
class IngestOptions:
    namespaces: frozenset[int] = frozenset({0})
    drop_redirects: bool = True
    template_depth_cap: int = TEMPLATE_DEPTH_CAP
    workers: int = 1


@dataclass
class IngestReport:
    pages_seen: int = 0
    kept: int = 0
    skipped_redirect: int = 0
    skipped_namespace: int = 0
    skipped_markup: int = 0
    markup_failures: list[str] = field(default_factory=list)

    @property
    def skipped(self) -> int:
        return self.skipped_redirect + self.skipped_namespace + self.skipped_markup


def normalize_title(raw: str) -> str:
    """Canonical page title: underscores to spaces, collapsed whitespace,
    first character uppercased (wiki first-letter convention)."""
    title = re.sub(r"[\s_]+", " ", raw).strip()
    if not title:
        return title
    return title[0].upper() + title[1:]


def _strip_balanced(text: str, opener: str, closer: str, depth_cap: int) -> str:
    """Remove balanced opener..closer regions (possibly nested).

    Raises MarkupError when nesting exceeds depth_cap. Stray unmatched
    delimiters are deleted so no residue survives.
    """
    out: list[str] = []
    i = 0
    depth = 0
    n = len(text)
    while i < n:
        if text.startswith(opener, i):
            depth += 1
            if depth > depth_cap:
                raise MarkupError(f"nesting of {opener!r} exceeds {depth_cap}")
            i += len(opener)
        elif text.startswith(closer, i):
            if depth > 0:
                depth -= 1
            i += len(closer)
        else:
            if depth == 0:
                out.append(text[i])
            i += 1
    return "".join(out)


def _link_kind(raw_target: str) -> str:
    """Classify a link target: 'article', 'media' (drop whole construct)
    or 'other' (keep piped surface only)."""
    target = raw_target.lstrip(":").strip()
    if ":" in target:
        prefix = target.split(":", 1)[0].strip().lower()
        if prefix in MEDIA_NAMESPACES:
            return "media"
        if prefix in NON_ENTITY_NAMESPACES or INTERWIKI_RE.match(prefix):
            return "other"
    return "article"


class _ParagraphBuilder:
    """Accumulates cleaned text while collapsing whitespace, tracking exact
    character offsets so link spans always slice back to their surface."""

    def __init__(self) -> None:
        self.parts: list[str] = []
        self.length = 0
        self.pending_space = False
        self.links: list[LinkSpan] = []

    def add_text(self, text: str) -> None:
        for ch in text:
            if ch.isspace():
                self.pending_space = True
            else:
                self._flush_space()
                self.parts.append(ch)
                self.length += 1

    def add_link(self, target: str, surface: str) -> None:
        surface = " ".join(surface.split())
        if not surface:
            return
        self._flush_space()
        start = self.length
        self.parts.append(surface)
        self.length += len(surface)
        if target:
            self.links.append(LinkSpan(target, surface, start, self.length))

    def _flush_space(self) -> None:
        if self.pending_space and self.length:
            self.parts.append(" ")
            self.length += 1
        self.pending_space = False

    def result(self) -> tuple[str, list[LinkSpan]]:
        return "".join(self.parts), self.links


def _emit_links(paragraph: str, builder: _ParagraphBuilder) -> None:
    """Walk a paragraph, turning [[...]] constructs into surfaces + spans."""
    i = 0
    n = len(paragraph)
    while i < n:
        start = paragraph.find("[[", i)
        if start < 0:
            builder.add_text(paragraph[i:])
            return
        builder.add_text(paragraph[i:start])
        # find the matching "]]", balancing nested "[[" (file captions)
        depth = 1
        j = start + 2
        while j < n and depth:
            if paragraph.startswith("[[", j):
                depth += 1
                j += 2
            elif paragraph.startswith("]]", j):
                depth -= 1
                j += 2
            else:
                j += 1
        if depth:
            # unterminated link: drop the brackets, keep the text
            builder.add_text(paragraph[start + 2:])
            return
        inner = paragraph[start + 2:j - 2]
        trail_match = re.match(r"\w*", paragraph[j:])
        trail = trail_match.group(0) if trail_match else ""
        i = j + len(trail)

        if "[[" in inner:
            kind = _link_kind(inner.split("|", 1)[0])
            if kind == "media":
                continue
            # broken nesting on a plain link: keep the inner part as text
            builder.add_text(inner.split("|", 1)[-1].replace("[[", "").replace("]]", ""))
            continue

        raw_target, sep, raw_surface = inner.partition("|")
        kind = _link_kind(raw_target)
        if kind == "media":
            continue
        if kind == "other":
            if sep:
                builder.add_text(raw_surface + trail)
            continue
        target = raw_target.lstrip(":").split("#", 1)[0]
        target = normalize_title(target)
        surface = (raw_surface if sep else raw_target.lstrip(":")) + trail
        if not target:
            builder.add_text(surface)
            continue
        builder.add_link(target, surface)


def clean_wikitext(text: str, depth_cap: int = TEMPLATE_DEPTH_CAP) -> tuple[str, list[LinkSpan]]:
    """Strip markup from raw wikitext; returns (body, links).

    Paragraphs are separated by a single newline in the body. Raises
    MarkupError when the page cannot be cleaned safely.
    """
    text = _COMMENT_RE.sub("", text)
    text = re.sub(r"</?nowiki\s*/?>", "", text, flags=re.IGNORECASE)
    text = _DROP_ELEMENT_RE.sub(" ", text)
    text = _TAG_RE.sub(" ", text)
    text = _strip_balanced(text, "{{", "}}", depth_cap)
    text = _strip_balanced(text, "{|", "|}", depth_cap)
    text = _MAGIC_WORD_RE.sub("", text)
    text = _QUOTES_RE.sub("", text)
    text = html.unescape(text)
    text = _EXTERNAL_LINK_RE.sub(lambda m: m.group(1), text)

    paragraphs: list[tuple[str, list[LinkSpan]]] = []
    for line in text.split("\n"):
        line = line.strip()
        if not line or _HEADING_RE.match(line):
            continue
        if line.startswith(("|", "!")) or re.fullmatch(r"-{4,}", line):
            continue
        line = _LIST_MARKER_RE.sub("", line)
        if not line:
            continue
        builder = _ParagraphBuilder()
        _emit_links(line, builder)
        body, links = builder.result()
        if body:
            paragraphs.append((body, links))

    offset = 0
    full_parts: list[str] = []
    all_links: list[LinkSpan] = []
    for body, links in paragraphs:
        full_parts.append(body)
        for link in links:
            all_links.append(
                LinkSpan(link.target_title, link.surface, link.start + offset, link.end + offset)
            )
        offset += len(body) + 1  # the joining newline

    final_body = "\n".join(full_parts)
    for marker in ("[[", "]]", "{{", "}}", "'''"):
        if marker in final_body:
            raise MarkupError(f"residual {marker!r} after cleaning")
    return final_body, all_links


class _CountingReader:
    """Wraps a binary stream, tracking bytes handed to the XML parser."""

    def __init__(self, stream: BinaryIO):
        self._stream = stream
        self.bytes_read = 0

    def read(self, size: int = -1) -> bytes:
        chunk = self._stream.read(size)
        self.bytes_read += len(chunk)
        return chunk


def open_dump(path: str | Path) -> BinaryIO:
    path = Path(path)
    if path.suffix == ".bz2":
        return bz2.open(path, "rb")
    return open(path, "rb")


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _iter_raw_pages(stream: BinaryIO) -> Iterator[tuple[int, str, int, bool, str]]:
    """Yield (page_id, title, ns, is_redirect, wikitext) per page element."""
    reader = _CountingReader(stream)
    try:
        for _event, elem in ET.iterparse(reader, events=("end",)):
            if _local(elem.tag) != "page":
                continue
            page_id = 0
            title = ""
            ns = 0
            is_redirect = False
            text = ""
            for child in elem:
                tag = _local(child.tag)
                if tag == "id" and page_id == 0:
                    page_id = int(child.text or 0)
                elif tag == "title":
                    title = child.text or ""
                elif tag == "ns":
                    ns = int(child.text or 0)
                elif tag == "redirect":
                    is_redirect = True
                elif tag == "revision":
                    for sub in child:
                        if _local(sub.tag) == "text":
                            text = sub.text or ""
            elem.clear()
            if page_id:
                yield page_id, title, ns, is_redirect, text
    except ET.ParseError as exc:
        raise DumpParseError(
            f"malformed dump XML at byte {reader.bytes_read}: {exc}",
            byte_offset=reader.bytes_read,
        ) from exc


def _build_article(page: tuple[int, str, int, bool, str], depth_cap: int) -> Article | MarkupError:
    page_id, title, _ns, _redir, text = page
    try:
        body, links = clean_wikitext(text, depth_cap)
    except MarkupError as exc:
        return exc
    return Article(article_id=page_id, title=normalize_title(title), body=body, links=links)


def _ordered_map(items: Iterable, fn, workers: int) -> Iterator:
    if workers <= 1:
        for item in items:
            yield fn(item)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending: deque = deque()
        for item in items:
            pending.append(pool.submit(fn, item))
            while len(pending) > workers * 2:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()


def parse_dump(
    stream: BinaryIO,
    options: IngestOptions | None = None,
    report: IngestReport | None = None,
) -> Iterator[Article]:
    """Stream Articles out of a wiki XML export, in dump order.

    Pages outside the kept namespaces, redirects (unless kept) and pages
    whose markup cannot be cleaned are skipped and counted on the report;
    only malformed XML is fatal.
    """
    options = options or IngestOptions()
    report = report if report is not None else IngestReport()

    def retained() -> Iterator[tuple[int, str, int, bool, str]]:
        for page in _iter_raw_pages(stream):
            report.pages_seen += 1
            page_id, title, ns, is_redirect, text = page
            if ns not in options.namespaces:
                report.skipped_namespace += 1
                continue
            if not is_redirect and text.strip().lower().startswith(REDIRECT_PREFIXES):
                is_redirect = True
            if is_redirect and options.drop_redirects:
                report.skipped_redirect += 1
                continue
            yield page_id, title, ns, is_redirect, text

    for result in _ordered_map(
        retained(), lambda p: _build_article(p, options.template_depth_cap), options.workers
    ):
        if isinstance(result, MarkupError):
            report.skipped_markup += 1
            report.markup_failures.append(str(result))
            continue
        report.kept += 1
        yield result


def write_articles(
    articles: Iterable[Article],
    path: str | Path,
    report: IngestReport | None = None,
) -> IngestReport:
    """Serialize articles one JSON object per line; returns the ingest report."""
    report = report if report is not None else IngestReport()
    written = 0
    with open(path, "w", encoding="utf-8") as fh:
        for article in articles:
            fh.write(dump_json_line(article.to_dict()))
            fh.write("\n")
            written += 1
    if report.kept == 0:
        report.kept = written
    return report


def read_articles(path: str | Path) -> Iterator[Article]:
    for obj in read_jsonl(path):
        yield Article.from_dict(obj)
