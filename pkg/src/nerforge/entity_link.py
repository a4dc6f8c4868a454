"""Entity typing via Wikidata attributes.

A link target resolves to a Wikidata record (instance-of values plus the
set of properties the item carries); configurable rule tables map records
to PER/ORG/LOC/DATE. Clients come in three flavours: live HTTP with retry
and rate limiting, a read-through disk cache wrapper, and an offline
fixture store for deterministic runs.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Iterator, Protocol

from .records import dump_json_line, read_jsonl
from .segment import LinkRef, SentenceDraft

ITEM_ID_RE = re.compile(r"^Q\d+$")
PROPERTY_ID_RE = re.compile(r"^P\d+$")


class EntityType(str, Enum):
    PER = "PER"
    ORG = "ORG"
    LOC = "LOC"
    DATE = "DATE"
    NONE = "NONE"


class RulesError(ValueError):
    """The entity typing rule tables are inconsistent."""


class LookupUnavailable(Exception):
    """Transient lookup failure; the caller records the title and moves on."""


class FixtureMiss(Exception):
    """Offline mode has no stored response for a title (never queries)."""


@dataclass(frozen=True)
class WikidataRecord:
    item_id: str
    instance_of: frozenset[str] = frozenset()
    has_properties: frozenset[str] = frozenset()

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "instance_of": sorted(self.instance_of),
            "has_properties": sorted(self.has_properties),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "WikidataRecord":
        return cls(
            item_id=str(obj["item_id"]),
            instance_of=frozenset(str(q) for q in obj.get("instance_of", [])),
            has_properties=frozenset(str(p) for p in obj.get("has_properties", [])),
        )


@dataclass
class EntityTypeRules:
    per_instance_of: frozenset[str] = frozenset({"Q5"})
    per_evidence_properties: frozenset[str] = frozenset({"P569", "P570"})
    org_instance_of: frozenset[str] = frozenset()
    loc_instance_of: frozenset[str] = frozenset()
    date_instance_of: frozenset[str] = frozenset({"Q14795564", "Q3186692", "Q578"})
    instance_property: str = "P31"
    subclass_expansion_depth: int = 0

    def __post_init__(self) -> None:
        sets = {
            "per_instance_of": self.per_instance_of,
            "org_instance_of": self.org_instance_of,
            "loc_instance_of": self.loc_instance_of,
            "date_instance_of": self.date_instance_of,
        }
        names = list(sets)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                overlap = sets[a] & sets[b]
                if overlap:
                    raise RulesError(f"{a} and {b} share ids: {sorted(overlap)}")
        for name, ids in sets.items():
            for item in ids:
                if not ITEM_ID_RE.match(item):
                    raise RulesError(f"{name} contains malformed item id {item!r}")
        for prop in self.per_evidence_properties:
            if not PROPERTY_ID_RE.match(prop):
                raise RulesError(f"malformed property id {prop!r}")
        if not PROPERTY_ID_RE.match(self.instance_property):
            raise RulesError(f"malformed instance property {self.instance_property!r}")
        if self.subclass_expansion_depth < 0:
            raise RulesError("subclass_expansion_depth must be >= 0")

    @classmethod
    def from_json(cls, obj: dict) -> "EntityTypeRules":
        kwargs = {}
        for key in (
            "per_instance_of",
            "per_evidence_properties",
            "org_instance_of",
            "loc_instance_of",
            "date_instance_of",
        ):
            if key in obj:
                kwargs[key] = frozenset(str(x) for x in obj[key])
        if "instance_property" in obj:
            kwargs["instance_property"] = str(obj["instance_property"])
        if "subclass_expansion_depth" in obj:
            kwargs["subclass_expansion_depth"] = int(obj["subclass_expansion_depth"])
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "EntityTypeRules":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    @classmethod
    def default(cls) -> "EntityTypeRules":
        text = resources.files("nerforge.data").joinpath("entity_rules.json").read_text("utf-8")
        return cls.from_json(json.loads(text))


def _expand(
    items: frozenset[str],
    depth: int,
    superclasses: Callable[[str], Iterable[str]] | None,
) -> frozenset[str]:
    if depth <= 0 or superclasses is None:
        return items
    seen = set(items)
    frontier = set(items)
    for _ in range(depth):
        nxt = set()
        for item in frontier:
            nxt.update(superclasses(item))
        nxt -= seen
        if not nxt:
            break
        seen |= nxt
        frontier = nxt
    return frozenset(seen)


def classify(
    record: WikidataRecord,
    rules: EntityTypeRules,
    superclasses: Callable[[str], Iterable[str]] | None = None,
) -> EntityType:
    """Map a record to an entity type; precedence PER > ORG > LOC > DATE."""
    instances = _expand(record.instance_of, rules.subclass_expansion_depth, superclasses)
    if instances & rules.per_instance_of or record.has_properties & rules.per_evidence_properties:
        return EntityType.PER
    if instances & rules.org_instance_of:
        return EntityType.ORG
    if instances & rules.loc_instance_of:
        return EntityType.LOC
    if instances & rules.date_instance_of:
        return EntityType.DATE
    return EntityType.NONE


class WikidataClient(Protocol):
    def fetch(self, title: str) -> WikidataRecord | None: ...


def lookup(title: str, client: WikidataClient) -> WikidataRecord | None:
    """Resolve a normalized page title to its Wikidata record, if any."""
    return client.fetch(title)


def _title_key(title: str) -> str:
    return hashlib.sha256(title.encode("utf-8")).hexdigest()


class DiskCache:
    """One JSON file per title hash; atomic writes, last write wins."""

    _MISS = object()

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, title: str) -> Path:
        return self.directory / f"{_title_key(title)}.json"

    def get(self, title: str):
        path = self._path(title)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                obj = json.load(fh)
        except FileNotFoundError:
            return self._MISS
        except (OSError, json.JSONDecodeError):
            return self._MISS
        record = obj.get("record")
        return None if record is None else WikidataRecord.from_dict(record)

    def put(self, title: str, record: WikidataRecord | None) -> None:
        path = self._path(title)
        tmp = path.with_suffix(f".tmp.{os.getpid()}.{threading.get_ident()}")
        payload = {"title": title, "record": None if record is None else record.to_dict()}
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, ensure_ascii=False)
        os.replace(tmp, path)

    def is_miss(self, value) -> bool:
        return value is self._MISS


class CachingClient:
    """Read-through cache around another client; hits never re-query."""

    def __init__(self, inner: WikidataClient, cache_dir: str | Path):
        self.inner = inner
        self.cache = DiskCache(cache_dir)

    def fetch(self, title: str) -> WikidataRecord | None:
        cached = self.cache.get(title)
        if not self.cache.is_miss(cached):
            return cached
        record = self.inner.fetch(title)
        self.cache.put(title, record)
        return record


class FixtureClient:
    """Serves lookups from a directory in the cache layout; a missing file
    is an error, never a remote query."""

    def __init__(self, directory: str | Path):
        self.cache = DiskCache(directory)

    def fetch(self, title: str) -> WikidataRecord | None:
        value = self.cache.get(title)
        if self.cache.is_miss(value):
            raise FixtureMiss(f"no fixture response for title {title!r}")
        return value


def store_fixture(directory: str | Path, title: str, record: WikidataRecord | None) -> None:
    """Write one stored response usable by FixtureClient (and as warm cache)."""
    DiskCache(directory).put(title, record)


class RateLimiter:
    """Global minimum spacing between requests, thread-safe."""

    def __init__(self, per_second: float = 10.0, clock=time.monotonic, sleep=time.sleep):
        self.interval = 1.0 / per_second if per_second > 0 else 0.0
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next_at = 0.0

    def acquire(self) -> None:
        if self.interval <= 0:
            return
        with self._lock:
            now = self._clock()
            wait = self._next_at - now
            self._next_at = max(now, self._next_at) + self.interval
        if wait > 0:
            self._sleep(wait)


class HttpWikidataClient:
    """Two-step lookup: wiki title -> item id (pageprops, one redirect level),
    then item id -> claims. Retries transient failures with exponential
    backoff and honours 429 waits."""

    def __init__(
        self,
        wiki_api_url: str = "https://lb.wikipedia.org/w/api.php",
        wikidata_api_url: str = "https://www.wikidata.org/w/api.php",
        session=None,
        max_attempts: int = 3,
        backoff_base: float = 1.0,
        rate_limiter: RateLimiter | None = None,
        sleep=time.sleep,
        user_agent: str = "nerforge/0.1 (corpus construction)",
    ):
        if session is None:
            import requests

            session = requests.Session()
        self.wiki_api_url = wiki_api_url
        self.wikidata_api_url = wikidata_api_url
        self.session = session
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.rate_limiter = rate_limiter or RateLimiter(10.0, sleep=sleep)
        self.sleep = sleep
        self.headers = {"User-Agent": user_agent}

    def _get(self, url: str, params: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            self.rate_limiter.acquire()
            try:
                response = self.session.get(url, params=params, headers=self.headers, timeout=30)
            except Exception as exc:  # connection errors from any transport
                last_error = exc
                if attempt + 1 < self.max_attempts:
                    self.sleep(self.backoff_base * (2 ** attempt))
                continue
            if response.status_code == 429:
                retry_after = response.headers.get("Retry-After")
                try:
                    wait = float(retry_after) if retry_after else self.backoff_base * (2 ** attempt)
                except ValueError:
                    wait = self.backoff_base * (2 ** attempt)
                self.sleep(wait)
                last_error = LookupUnavailable("HTTP 429")
                continue
            if response.status_code >= 500:
                last_error = LookupUnavailable(f"HTTP {response.status_code}")
                if attempt + 1 < self.max_attempts:
                    self.sleep(self.backoff_base * (2 ** attempt))
                continue
            if response.status_code != 200:
                raise LookupUnavailable(f"HTTP {response.status_code} from {url}")
            return response.json()
        raise LookupUnavailable(f"lookup failed after {self.max_attempts} attempts: {last_error}")

    def _resolve_item_id(self, title: str) -> str | None:
        data = self._get(
            self.wiki_api_url,
            {
                "action": "query",
                "titles": title,
                "prop": "pageprops",
                "ppprop": "wikibase_item",
                "redirects": 1,
                "format": "json",
            },
        )
        pages = data.get("query", {}).get("pages", {})
        for page in pages.values():
            props = page.get("pageprops", {})
            item = props.get("wikibase_item")
            if item:
                return str(item)
        return None

    def fetch(self, title: str) -> WikidataRecord | None:
        item_id = self._resolve_item_id(title)
        if item_id is None:
            return None
        data = self._get(
            self.wikidata_api_url,
            {"action": "wbgetentities", "ids": item_id, "props": "claims", "format": "json"},
        )
        entity = data.get("entities", {}).get(item_id, {})
        claims = entity.get("claims", {})
        instance_of = set()
        for claim in claims.get("P31", []):
            value = claim.get("mainsnak", {}).get("datavalue", {}).get("value", {})
            qid = value.get("id")
            if qid:
                instance_of.add(str(qid))
        return WikidataRecord(
            item_id=item_id,
            instance_of=frozenset(instance_of),
            has_properties=frozenset(str(p) for p in claims),
        )


@dataclass
class TypedSentence:
    """A sentence draft whose link groups carry resolved entity types."""
    article_id: int
    sent_index: int
    text: str
    tokens: list[str]
    link_tags: list[int | None]
    links: list[LinkRef]
    token_types: list[str | None]

    def to_dict(self) -> dict:
        return {
            "article_id": self.article_id,
            "sent_index": self.sent_index,
            "text": self.text,
            "tokens": list(self.tokens),
            "link_tags": list(self.link_tags),
            "links": [{"target": l.target, "surface": l.surface} for l in self.links],
            "token_types": list(self.token_types),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TypedSentence":
        return cls(
            article_id=int(obj["article_id"]),
            sent_index=int(obj["sent_index"]),
            text=str(obj["text"]),
            tokens=[str(t) for t in obj["tokens"]],
            link_tags=[None if t is None else int(t) for t in obj["link_tags"]],
            links=[LinkRef(str(l["target"]), str(l["surface"])) for l in obj.get("links", [])],
            token_types=[None if t is None else str(t) for t in obj["token_types"]],
        )


@dataclass
class LinkReport:
    links_seen: int = 0
    typed: int = 0
    discarded_untyped: int = 0
    unresolved: int = 0
    unresolved_titles: list[str] = field(default_factory=list)


def type_sentence(
    sentence: SentenceDraft,
    rules: EntityTypeRules,
    client: WikidataClient,
    report: LinkReport | None = None,
) -> TypedSentence:
    """Resolve every link in one sentence and type its tokens."""
    report = report if report is not None else LinkReport()
    link_types: list[str | None] = []
    for link in sentence.links:
        report.links_seen += 1
        try:
            record = lookup(link.target, client)
        except LookupUnavailable:
            report.unresolved += 1
            report.unresolved_titles.append(link.target)
            link_types.append(None)
            continue
        if record is None:
            report.discarded_untyped += 1
            link_types.append(None)
            continue
        kind = classify(record, rules)
        if kind is EntityType.NONE:
            report.discarded_untyped += 1
            link_types.append(None)
        else:
            report.typed += 1
            link_types.append(kind.value)

    token_types: list[str | None] = []
    link_tags: list[int | None] = []
    for tag in sentence.link_tags:
        if tag is None or link_types[tag] is None:
            token_types.append(None)
            link_tags.append(None)
        else:
            token_types.append(link_types[tag])
            link_tags.append(tag)

    return TypedSentence(
        article_id=sentence.article_id,
        sent_index=sentence.sent_index,
        text=sentence.text,
        tokens=list(sentence.tokens),
        link_tags=link_tags,
        links=list(sentence.links),
        token_types=token_types,
    )


def link_sentences(
    sentences: Iterable[SentenceDraft],
    rules: EntityTypeRules,
    client: WikidataClient,
    report: LinkReport | None = None,
    workers: int = 1,
) -> Iterator[TypedSentence]:
    """Type a stream of sentences, preserving input order.

    Each sentence record is self-contained (it carries its own link list),
    so no separate per-article link table is needed.
    """
    report = report if report is not None else LinkReport()
    if workers <= 1:
        for sentence in sentences:
            yield type_sentence(sentence, rules, client, report)
        return
    from collections import deque
    from concurrent.futures import ThreadPoolExecutor

    def job(sentence: SentenceDraft) -> tuple[TypedSentence, LinkReport]:
        local = LinkReport()
        return type_sentence(sentence, rules, client, local), local

    def merge(local: LinkReport) -> None:
        report.links_seen += local.links_seen
        report.typed += local.typed
        report.discarded_untyped += local.discarded_untyped
        report.unresolved += local.unresolved
        report.unresolved_titles.extend(local.unresolved_titles)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending: deque = deque()
        for sentence in sentences:
            pending.append(pool.submit(job, sentence))
            while len(pending) > workers * 2:
                typed, local = pending.popleft().result()
                merge(local)
                yield typed
        while pending:
            typed, local = pending.popleft().result()
            merge(local)
            yield typed


def write_typed(path: str | Path, sentences: Iterable[TypedSentence]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for sentence in sentences:
            fh.write(dump_json_line(sentence.to_dict()))
            fh.write("\n")
            count += 1
    return count


def read_typed(path: str | Path) -> Iterator[TypedSentence]:
    for obj in read_jsonl(path):
        yield TypedSentence.from_dict(obj)
