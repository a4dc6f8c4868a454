from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nerforge.entity_link import (
    CachingClient,
    EntityType,
    EntityTypeRules,
    FixtureClient,
    FixtureMiss,
    HttpWikidataClient,
    LinkReport,
    LookupUnavailable,
    RateLimiter,
    RulesError,
    WikidataRecord,
    classify,
    link_sentences,
    lookup,
    store_fixture,
    type_sentence,
)
from nerforge.segment import LinkRef, SentenceDraft

RULES = EntityTypeRules(
    org_instance_of=frozenset({"Q43229", "Q22687"}),
    loc_instance_of=frozenset({"Q515", "Q6256"}),
)


def record(*instance_of, props=()):
    return WikidataRecord("Q1", frozenset(instance_of), frozenset(props))


class TestClassify:
    # the full rule table: every branch plus precedence and no-match
    CASES = [
        (record("Q5"), EntityType.PER),
        (record(), EntityType.NONE),
        (record(props=["P569"]), EntityType.PER),
        (record(props=["P570"]), EntityType.PER),
        (record("Q43229"), EntityType.ORG),
        (record("Q22687"), EntityType.ORG),
        (record("Q515"), EntityType.LOC),
        (record("Q6256"), EntityType.LOC),
        (record("Q14795564"), EntityType.DATE),
        (record("Q3186692"), EntityType.DATE),
        (record("Q578"), EntityType.DATE),
        (record("Q999999", props=["P999"]), EntityType.NONE),
    ]

    @pytest.mark.parametrize("rec,expected", CASES)
    def test_rule_table(self, rec, expected):
        assert classify(rec, RULES) is expected

    def test_per_beats_org(self):
        rec = record("Q5", "Q43229")
        assert classify(rec, RULES) is EntityType.PER

    def test_org_beats_loc_beats_date(self):
        assert classify(record("Q43229", "Q515"), RULES) is EntityType.ORG
        assert classify(record("Q515", "Q578"), RULES) is EntityType.LOC

    def test_evidence_property_alone_gives_per(self):
        rec = record("Q999999", props=["P569"])
        assert classify(rec, RULES) is EntityType.PER

    def test_subclass_expansion(self):
        rules = EntityTypeRules(
            org_instance_of=frozenset({"Q43229"}), subclass_expansion_depth=2
        )
        tree = {"Qleaf": {"Qmid"}, "Qmid": {"Q43229"}}
        rec = record("Qleaf")
        assert classify(rec, rules, superclasses=lambda q: tree.get(q, set())) is EntityType.ORG
        shallow = EntityTypeRules(
            org_instance_of=frozenset({"Q43229"}), subclass_expansion_depth=1
        )
        assert (
            classify(rec, shallow, superclasses=lambda q: tree.get(q, set()))
            is EntityType.NONE
        )

    @settings(max_examples=200, deadline=None)
    @given(
        st.frozensets(st.sampled_from(["Q5", "Q43229", "Q515", "Q578", "Q9"]), max_size=4),
        st.frozensets(st.sampled_from(["P569", "P570", "P31", "P17"]), max_size=3),
    )
    def test_pure_function(self, instances, props):
        rec = WikidataRecord("Q1", instances, props)
        first = classify(rec, RULES)
        assert classify(rec, RULES) is first
        assert first in set(EntityType)


class TestRules:
    def test_disjointness_enforced(self):
        with pytest.raises(RulesError):
            EntityTypeRules(
                org_instance_of=frozenset({"Q5"}),  # collides with PER default
            )

    def test_id_shape_enforced(self):
        with pytest.raises(RulesError):
            EntityTypeRules(loc_instance_of=frozenset({"515"}))
        with pytest.raises(RulesError):
            EntityTypeRules(per_evidence_properties=frozenset({"Q569"}))

    def test_default_rules_load_and_cover_paper_examples(self):
        rules = EntityTypeRules.default()
        assert "Q5" in rules.per_instance_of
        assert {"P569", "P570"} <= rules.per_evidence_properties
        assert {"Q14795564", "Q3186692", "Q578"} <= rules.date_instance_of
        # bank, organization, business, hospital
        assert {"Q22687", "Q43229", "Q4830453", "Q16917"} <= rules.org_instance_of
        # town, municipality, country
        assert {"Q3957", "Q15284", "Q6256"} <= rules.loc_instance_of

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "rules.json"
        path.write_text(json.dumps({"org_instance_of": ["Q43229"]}))
        rules = EntityTypeRules.load(path)
        assert rules.org_instance_of == frozenset({"Q43229"})
        assert rules.per_instance_of == frozenset({"Q5"})


class CountingClient:
    def __init__(self, table):
        self.table = table
        self.calls = 0

    def fetch(self, title):
        self.calls += 1
        return self.table.get(title)


class FlakyClient:
    def __init__(self, failures: int, result):
        self.failures = failures
        self.result = result

    def fetch(self, title):
        if self.failures > 0:
            self.failures -= 1
            raise LookupUnavailable("boom")
        return self.result


class TestClients:
    def test_cache_hit_never_requeries(self, tmp_path):
        inner = CountingClient({"Staat": record("Q43229")})
        client = CachingClient(inner, tmp_path / "cache")
        first = lookup("Staat", client)
        second = lookup("Staat", client)
        assert first == second
        assert inner.calls == 1

    def test_cache_stores_misses(self, tmp_path):
        inner = CountingClient({})
        client = CachingClient(inner, tmp_path / "cache")
        assert lookup("Onbekannt", client) is None
        assert lookup("Onbekannt", client) is None
        assert inner.calls == 1

    def test_fixture_client_serves_and_fails_on_miss(self, tmp_path):
        directory = tmp_path / "fixtures"
        store_fixture(directory, "Staat", record("Q43229"))
        store_fixture(directory, "Keen", None)
        client = FixtureClient(directory)
        assert lookup("Staat", client).instance_of == frozenset({"Q43229"})
        assert lookup("Keen", client) is None
        with pytest.raises(FixtureMiss):
            lookup("NetDo", client)

    def test_warm_cache_equals_cold_cache_output(self, tmp_path):
        """A warm cache must reproduce the cold-cache pipeline output without
        ever reaching the inner source again."""
        cache_dir = tmp_path / "cache"
        sentence = SentenceDraft(
            article_id=1, sent_index=0, text="Staat",
            tokens=["Staat"], link_tags=[0], links=[LinkRef("Staat", "Staat")],
        )
        inner = CountingClient({"Staat": record("Q43229")})
        cold = type_sentence(sentence, RULES, CachingClient(inner, cache_dir))

        class Exploding:
            def fetch(self, title):
                raise AssertionError("warm cache must not query")

        warm = type_sentence(sentence, RULES, CachingClient(Exploding(), cache_dir))
        assert cold.to_dict() == warm.to_dict()
        assert inner.calls == 1

    def test_concurrent_cache_writes_are_safe(self, tmp_path):
        from concurrent.futures import ThreadPoolExecutor

        table = {f"T{i}": record("Q43229") for i in range(20)}
        client = CachingClient(CountingClient(table), tmp_path / "cache")
        titles = [f"T{i % 20}" for i in range(200)]
        with ThreadPoolExecutor(max_workers=8) as pool:
            results = list(pool.map(client.fetch, titles))
        assert all(r is not None and "Q43229" in r.instance_of for r in results)
        # afterwards every title is a pure cache hit
        quiet = CachingClient(CountingClient({}), tmp_path / "cache")
        assert quiet.fetch("T3").instance_of == frozenset({"Q43229"})


class FakeResponse:
    def __init__(self, status_code=200, payload=None, headers=None):
        self.status_code = status_code
        self._payload = payload or {}
        self.headers = headers or {}

    def json(self):
        return self._payload


class ScriptedSession:
    """Queue of responses/exceptions per URL prefix."""

    def __init__(self, script):
        self.script = list(script)
        self.requests = []

    def get(self, url, params=None, headers=None, timeout=None):
        self.requests.append((url, params))
        item = self.script.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


class TestHttpClient:
    def make(self, script, sleeps):
        session = ScriptedSession(script)
        client = HttpWikidataClient(
            wiki_api_url="http://wiki.test/api.php",
            wikidata_api_url="http://wd.test/api.php",
            session=session,
            backoff_base=1.0,
            rate_limiter=RateLimiter(0),
            sleep=sleeps.append,
        )
        return client, session

    def wiki_payload(self, item="Q901"):
        return {"query": {"pages": {"1": {"pageprops": {"wikibase_item": item}}}}}

    def entity_payload(self, item="Q901"):
        return {
            "entities": {
                item: {
                    "claims": {
                        "P31": [
                            {"mainsnak": {"datavalue": {"value": {"id": "Q5"}}}}
                        ],
                        "P569": [{}],
                    }
                }
            }
        }

    def test_happy_path(self):
        sleeps: list[float] = []
        client, session = self.make(
            [FakeResponse(payload=self.wiki_payload()), FakeResponse(payload=self.entity_payload())],
            sleeps,
        )
        rec = client.fetch("Jhempi Kniddel")
        assert rec.item_id == "Q901"
        assert rec.instance_of == frozenset({"Q5"})
        assert rec.has_properties == frozenset({"P31", "P569"})

    def test_missing_item_returns_none(self):
        client, _ = self.make([FakeResponse(payload={"query": {"pages": {"-1": {"missing": ""}}}})], [])
        assert client.fetch("Keen Artikel") is None

    def test_retry_with_exponential_backoff(self):
        sleeps: list[float] = []
        client, _ = self.make(
            [
                ConnectionError("down"),
                ConnectionError("still down"),
                FakeResponse(payload=self.wiki_payload()),
                FakeResponse(payload=self.entity_payload()),
            ],
            sleeps,
        )
        rec = client.fetch("Jhempi Kniddel")
        assert rec is not None
        assert sleeps == [1.0, 2.0]

    def test_gives_up_after_three_attempts(self):
        sleeps: list[float] = []
        client, _ = self.make(
            [ConnectionError("1"), ConnectionError("2"), ConnectionError("3")], sleeps
        )
        with pytest.raises(LookupUnavailable):
            client.fetch("Jhempi Kniddel")
        assert sleeps == [1.0, 2.0]

    def test_429_honours_retry_after(self):
        sleeps: list[float] = []
        client, _ = self.make(
            [
                FakeResponse(status_code=429, headers={"Retry-After": "7"}),
                FakeResponse(payload=self.wiki_payload()),
                FakeResponse(payload=self.entity_payload()),
            ],
            sleeps,
        )
        assert client.fetch("Jhempi Kniddel") is not None
        assert sleeps[0] == 7.0


class TestRateLimiter:
    def test_spacing(self):
        now = [0.0]
        sleeps: list[float] = []
        limiter = RateLimiter(10.0, clock=lambda: now[0], sleep=sleeps.append)
        limiter.acquire()
        limiter.acquire()
        limiter.acquire()
        assert sleeps == [0.1, 0.2]

    def test_zero_rate_disables(self):
        limiter = RateLimiter(0)
        limiter.acquire()  # no error, no sleep


def draft(tokens, tags, links):
    return SentenceDraft(
        article_id=1, sent_index=0, text=" ".join(tokens),
        tokens=tokens, link_tags=tags, links=links,
    )


class TestLinkSentences:
    def test_figure_types(self):
        client = CountingClient(
            {"Jhempi Kniddel": record("Q5"), "Staat": record("Q43229")}
        )
        sentence = draft(
            ["De", "Jhempi", "Kniddel", "schafft", "beim", "Staat", "."],
            [None, 0, 0, None, None, 1, None],
            [LinkRef("Jhempi Kniddel", "Jhempi Kniddel"), LinkRef("Staat", "Staat")],
        )
        typed = type_sentence(sentence, RULES, client)
        assert typed.token_types == [None, "PER", "PER", None, None, "ORG", None]

    def test_no_links_all_untyped(self):
        sentence = draft(["Moien", "."], [None, None], [])
        typed = type_sentence(sentence, RULES, CountingClient({}))
        assert typed.token_types == [None, None]

    def test_none_classified_link_discarded(self):
        client = CountingClient({"Dings": record("Q999999")})
        sentence = draft(["Dings", "."], [0, None], [LinkRef("Dings", "Dings")])
        typed = type_sentence(sentence, RULES, client)
        assert typed.token_types == [None, None]
        assert typed.link_tags == [None, None]

    def test_unresolved_counted_and_continues(self):
        client = FlakyClient(failures=10, result=None)
        report = LinkReport()
        sentence = draft(["Dings", "."], [0, None], [LinkRef("Dings", "Dings")])
        typed = type_sentence(sentence, RULES, client, report)
        assert typed.token_types == [None, None]
        assert report.unresolved == 1
        assert report.unresolved_titles == ["Dings"]

    def test_parallel_order_and_counts_match_serial(self):
        table = {"Staat": record("Q43229"), "Land": record("Q6256")}
        sentences = [
            draft(["Staat"], [0], [LinkRef("Staat", "Staat")]),
            draft(["Land"], [0], [LinkRef("Land", "Land")]),
            draft(["Moien"], [None], []),
        ] * 5
        serial_report = LinkReport()
        serial = [
            t.to_dict()
            for t in link_sentences(iter(sentences), RULES, CountingClient(table), serial_report)
        ]
        parallel_report = LinkReport()
        parallel = [
            t.to_dict()
            for t in link_sentences(
                iter(sentences), RULES, CountingClient(table), parallel_report, workers=4
            )
        ]
        assert serial == parallel
        assert serial_report.typed == parallel_report.typed == 10
