from __future__ import annotations

import random

import pytest

from nerforge.bio import OUTSIDE
from nerforge.records import AnnotatedSentence
from nerforge.select import (
    REASON_ALL_CAPS,
    REASON_DUPLICATE,
    REASON_ENTITY_COVERAGE,
    REASON_NEGATIVE_BUDGET,
    REASON_NEGATIVE_TOO_SHORT,
    REASON_OVERLAP,
    REASON_SINGLE_ENTITY,
    REASON_TOO_SHORT,
    PolicyError,
    SelectionPolicy,
    assign_ids,
    dedupe,
    group_by_article,
    select_candidates,
)

POLICY = SelectionPolicy()


def sent(article_id, index, tokens, labels=None, text=None):
    labels = labels if labels is not None else [OUTSIDE] * len(tokens)
    return AnnotatedSentence(
        id=f"0/{article_id}-{index}",
        text=text if text is not None else " ".join(tokens),
        tokens=tokens,
        labels=labels,
    )


def filler(article_id, index, n=10, seed_word="wierder"):
    tokens = [f"{seed_word}{i}" for i in range(n)]
    return sent(article_id, index, tokens)


def entity_sent(article_id, index, n=10):
    tokens = [f"w{i}" for i in range(n)]
    labels = [OUTSIDE] * n
    labels[1] = "B-PER"
    return sent(article_id, index, tokens, labels)


class TestSelectCandidates:
    def test_first_sentence_never_accepted(self):
        sentences = [entity_sent(1, i) for i in range(7)]
        accepted, rejects = select_candidates(sentences, POLICY)
        ids = {s.id for s in accepted} | {s.id for s, _ in rejects}
        assert "0/1-0" not in ids
        assert len(accepted) <= POLICY.take_next

    def test_window_is_next_five(self):
        sentences = [entity_sent(1, i) for i in range(10)]
        accepted, rejects = select_candidates(sentences, POLICY)
        considered = {s.id for s in accepted} | {s.id for s, _ in rejects}
        assert considered == {f"0/1-{i}" for i in range(1, 6)}

    def test_skip_first_disabled(self):
        sentences = [entity_sent(1, i) for i in range(3)]
        policy = SelectionPolicy(skip_first=False, take_next=2)
        accepted, _ = select_candidates(sentences, policy)
        assert {s.id for s in accepted} == {"0/1-0", "0/1-1"}

    def test_too_short(self):
        sentences = [entity_sent(1, 0), sent(1, 1, ["kuerz", "Saz", "."])]
        _, rejects = select_candidates(sentences, POLICY)
        assert [(s.id, r) for s, r in rejects] == [("0/1-1", REASON_TOO_SHORT)]

    def test_all_caps(self):
        tokens = "DEN TITEL ASS HEI GANZ GROUSS".split()
        sentences = [entity_sent(1, 0), sent(1, 1, tokens)]
        _, rejects = select_candidates(sentences, POLICY)
        assert rejects[0][1] == REASON_ALL_CAPS

    def test_all_caps_needs_letters(self):
        tokens = ["1", "2", "3", "4", "5", "6", "7", "8"]
        sentences = [entity_sent(1, 0), sent(1, 1, tokens)]
        accepted, rejects = select_candidates(sentences, POLICY)
        # digits only: not shouty, lands in the negative path instead
        assert not any(r == REASON_ALL_CAPS for _, r in rejects)

    def test_single_entity(self):
        tokens = ["Grousse", "Numm", "Vun", "Enger", "Plaz", "Hei", "."]
        labels = ["B-LOC", "I-LOC", "I-LOC", "I-LOC", "I-LOC", "I-LOC", "O"]
        sentences = [entity_sent(1, 0), sent(1, 1, tokens, labels)]
        _, rejects = select_candidates(sentences, POLICY)
        assert rejects[0][1] == REASON_SINGLE_ENTITY

    def test_invalid_bio_rejected_as_overlap(self):
        tokens = ["a", "b", "c", "d", "e", "f"]
        labels = ["O", "I-PER", "O", "O", "O", "O"]
        sentences = [entity_sent(1, 0), sent(1, 1, tokens, labels)]
        _, rejects = select_candidates(sentences, POLICY)
        assert rejects[0][1] == REASON_OVERLAP

    def test_entity_coverage(self):
        tokens = [f"w{i}" for i in range(10)]
        labels = ["B-PER"] + ["I-PER"] * 8 + ["B-ORG"]
        sentences = [entity_sent(1, 0), sent(1, 1, tokens, labels)]
        _, rejects = select_candidates(sentences, POLICY)
        assert rejects[0][1] == REASON_ENTITY_COVERAGE

    def test_coverage_arithmetic_at_boundary(self):
        # 10 tokens, 8 entity tokens: 0.8 is not > 0.8, passes
        tokens = [f"w{i}" for i in range(10)]
        labels = ["B-PER"] + ["I-PER"] * 6 + ["B-ORG", "O", "O"]
        sentences = [entity_sent(1, 0), sent(1, 1, tokens, labels)]
        accepted, rejects = select_candidates(sentences, POLICY)
        assert {s.id for s in accepted} == {"0/1-1"}

    def test_at_most_one_negative(self):
        sentences = [entity_sent(1, 0)] + [filler(1, i) for i in (1, 2, 3)]
        accepted, rejects = select_candidates(sentences, POLICY)
        negatives = [s for s in accepted if all(l == OUTSIDE for l in s.labels)]
        assert len(negatives) == 1
        budget_rejects = [r for _, r in rejects if r == REASON_NEGATIVE_BUDGET]
        assert len(budget_rejects) == 2

    def test_negative_min_length(self):
        short_negative = filler(1, 1, n=7)
        sentences = [entity_sent(1, 0), short_negative]
        _, rejects = select_candidates(sentences, POLICY)
        assert rejects[0][1] == REASON_NEGATIVE_TOO_SHORT

    def test_partition_of_window(self):
        sentences = [entity_sent(1, 0)] + [
            entity_sent(1, 1),
            sent(1, 2, ["x", "."]),
            filler(1, 3),
            filler(1, 4),
        ]
        accepted, rejects = select_candidates(sentences, POLICY)
        window_ids = {f"0/1-{i}" for i in (1, 2, 3, 4)}
        assert {s.id for s in accepted} | {s.id for s, _ in rejects} == window_ids
        assert len(accepted) + len(rejects) == len(window_ids)

    def test_policy_validation(self):
        with pytest.raises(PolicyError):
            SelectionPolicy(take_next=0)
        with pytest.raises(PolicyError):
            SelectionPolicy(max_entity_coverage=0.0)
        with pytest.raises(PolicyError):
            SelectionPolicy(max_entity_coverage=1.5)

    def test_policy_load_rejects_unknown_keys(self, tmp_path):
        path = tmp_path / "policy.json"
        path.write_text('{"min_tokens": 4, "bogus": 1}')
        with pytest.raises(PolicyError):
            SelectionPolicy.load(path)


class TestDedupe:
    def test_drops_later_duplicates(self):
        a = sent(1, 1, ["Moien", "Welt"], text="Moien Welt")
        b = sent(2, 1, ["Moien", "Welt"], text="Moien  Welt")  # whitespace differs
        dropped = []
        kept = list(dedupe([a, b], dropped.append))
        assert [s.id for s in kept] == ["0/1-1"]
        assert [s.id for s in dropped] == ["0/2-1"]

    def test_unique_stream_unchanged(self):
        items = [sent(1, i, [f"w{i}", "x"]) for i in range(5)]
        assert list(dedupe(items)) == items

    def test_same_text_different_labels_still_deduped(self):
        a = sent(1, 1, ["Esch", "."], ["B-LOC", "O"])
        b = sent(2, 1, ["Esch", "."], ["O", "O"])
        kept = list(dedupe([a, b]))
        assert len(kept) == 1
        assert kept[0].labels == ["B-LOC", "O"]

    def test_output_pairwise_distinct(self):
        rng = random.Random(5)
        items = [
            sent(1, i, [rng.choice(["a", "b"]), rng.choice(["c", "d"])])
            for i in range(50)
        ]
        kept = list(dedupe(items))
        texts = [" ".join(s.text.split()) for s in kept]
        assert len(texts) == len(set(texts))


class TestAssignIds:
    def test_scheme(self):
        items = [sent(100, 1, ["a", "b"]), sent(100, 2, ["c", "d"])]
        out = list(assign_ids(items, start=1))
        assert [s.id for s in out] == ["1/100-1", "2/100-2"]

    def test_empty(self):
        assert list(assign_ids([], start=1)) == []

    def test_running_continues_across_articles(self):
        items = [sent(100, 1, ["a", "b"]), sent(200, 4, ["c", "d"])]
        out = list(assign_ids(items, start=7))
        assert [s.id for s in out] == ["7/100-1", "8/200-4"]


def test_group_by_article_consecutive():
    items = [sent(1, 0, ["a", "b"]), sent(1, 1, ["c", "d"]), sent(2, 0, ["e", "f"])]
    groups = list(group_by_article(items))
    assert [len(g) for g in groups] == [2, 1]


# --- brute-force reference filter -----------------------------------------

def brute_force_reference(article_sentences, policy):
    """Independent reimplementation of the selection rules."""
    window = article_sentences[1:] if policy.skip_first else article_sentences[:]
    window = window[: policy.take_next]
    accepted = []
    negatives = 0
    for s in window:
        n = len(s.tokens)
        if n < policy.min_tokens:
            continue
        letters = [c for t in s.tokens for c in t if c.isalpha()]
        if letters and all(c.isupper() for c in letters):
            continue
        # spans by simple scan
        spans = []
        start = None
        kind = None
        for i, label in enumerate(s.labels):
            if label.startswith("B-"):
                if start is not None:
                    spans.append((kind, start, i))
                start, kind = i, label[2:]
            elif label.startswith("I-") and start is not None and label[2:] == kind:
                continue
            elif label == "O":
                if start is not None:
                    spans.append((kind, start, i))
                    start = None
            else:
                spans.append(("BAD", 0, 0))
                start = None
        if start is not None:
            spans.append((kind, start, len(s.labels)))
        if ("BAD", 0, 0) in spans:
            continue
        non_punct = [i for i, t in enumerate(s.tokens) if any(c.isalnum() for c in t)]
        if len(spans) == 1 and all(spans[0][1] <= i < spans[0][2] for i in non_punct):
            continue
        valid = True
        prev = "O"
        for label in s.labels:
            if label.startswith("I-") and not (
                prev == f"B-{label[2:]}" or prev == f"I-{label[2:]}"
            ):
                valid = False
            prev = label
        if not valid:
            continue
        entity_tokens = sum(1 for l in s.labels if l != "O")
        if entity_tokens / n > policy.max_entity_coverage:
            continue
        if entity_tokens == 0:
            if n < policy.min_negative_tokens or negatives >= policy.negatives_per_article:
                continue
            negatives += 1
        accepted.append(s.id)
    return accepted


def random_article(rng: random.Random, article_id: int):
    sentences = []
    for index in range(rng.randint(1, 9)):
        n = rng.randint(2, 14)
        tokens = [rng.choice(["Moien", "STAD", "land", ".", "1988"]) for _ in range(n)]
        labels = ["O"] * n
        i = 0
        while i < n:
            if rng.random() < 0.3:
                length = min(rng.randint(1, 4), n - i)
                kind = rng.choice(["PER", "ORG", "LOC", "DATE"])
                labels[i] = f"B-{kind}"
                for j in range(i + 1, i + length):
                    labels[j] = f"I-{kind}"
                i += length
            else:
                i += 1
        sentences.append(sent(article_id, index, tokens, labels))
    return sentences


def test_brute_force_agreement_on_random_articles():
    rng = random.Random(99)
    for article_id in range(1, 301):
        sentences = random_article(rng, article_id)
        accepted, rejects = select_candidates(sentences, POLICY)
        assert [s.id for s in accepted] == brute_force_reference(sentences, POLICY)
        # no accepted sentence violates any predicate (re-check)
        for s in accepted:
            assert len(s.tokens) >= POLICY.min_tokens
            entity_tokens = sum(1 for l in s.labels if l != "O")
            assert entity_tokens / len(s.tokens) <= POLICY.max_entity_coverage


def test_brute_force_agreement_on_fixture_wiki(mini_dump_path, wikidata_fixture_dir):
    """The bundled fixture corpus selects to exactly the count the
    independent reference filter computes."""
    from nerforge.annotate import DatePatternSet, harmonize_tags, project_bio, tag_dates
    from nerforge.entity_link import EntityTypeRules, FixtureClient, link_sentences
    from nerforge.ingest import IngestOptions, open_dump, parse_dump
    from nerforge.segment import load_abbreviations, segment_article

    with open_dump(mini_dump_path) as stream:
        articles = list(parse_dump(stream, IngestOptions()))
    abbrevs = load_abbreviations()
    drafts = [d for a in articles for d in segment_article(a, abbrevs)]
    typed = link_sentences(
        iter(drafts), EntityTypeRules.default(), FixtureClient(wikidata_fixture_dir)
    )
    patterns = DatePatternSet.default()
    annotated = [
        harmonize_tags(tag_dates(project_bio(t), patterns), {"GPE": "LOC"}) for t in typed
    ]
    picked = []
    reference = []
    for group in group_by_article(annotated):
        accepted, _ = select_candidates(group, POLICY)
        picked.extend(s.id for s in accepted)
        reference.extend(brute_force_reference(group, POLICY))
    assert picked == reference
    assert len(list(dedupe([s for g in group_by_article(annotated) for s in g]))) >= len(picked)
