from __future__ import annotations

import random

import pytest

from nerforge.dataset import (
    SplitConfigError,
    SplitMix64,
    StatsError,
    largest_remainder_sizes,
    render_stats,
    seeded_shuffle,
    split,
    stats,
    write_stats_csv,
)
from nerforge.records import AnnotatedSentence


def sent(i, labels=None, tokens=None):
    tokens = tokens or ["w0", "w1", "w2", "w3"]
    labels = labels or ["O"] * len(tokens)
    return AnnotatedSentence(
        id=f"{i}/7-{i}", text=" ".join(tokens), tokens=tokens, labels=labels
    )


CORPUS = [sent(i) for i in range(1, 101)]


class TestLargestRemainder:
    def test_exact_division(self):
        assert largest_remainder_sizes(100, (0.8, 0.1, 0.1)) == [80, 10, 10]

    def test_remainder_goes_to_largest_fraction(self):
        # fractions are .4, .3, .3: train takes the leftover unit
        assert largest_remainder_sizes(13, (0.8, 0.1, 0.1)) == [11, 1, 1]

    def test_tie_goes_to_later_split(self):
        # 28,684 * (0.8, 0.1, 0.1) leaves one unit with dev/test tied
        assert largest_remainder_sizes(28684, (0.8, 0.1, 0.1)) == [22947, 2868, 2869]

    def test_sizes_sum(self):
        rng = random.Random(1)
        for _ in range(200):
            total = rng.randint(0, 5000)
            sizes = largest_remainder_sizes(total, (0.8, 0.1, 0.1))
            assert sum(sizes) == total
            assert all(s >= 0 for s in sizes)


class TestShuffle:
    def test_splitmix_reference_values(self):
        # first outputs for seed 0 of the splitmix64 reference sequence
        rng = SplitMix64(0)
        assert rng.next() == 0xE220A8397B1DCDAF
        assert rng.next() == 0x6E789E6AA1B965F4

    def test_deterministic(self):
        a = list(range(50))
        b = list(range(50))
        seeded_shuffle(a, 123)
        seeded_shuffle(b, 123)
        assert a == b

    def test_seed_changes_order(self):
        a = list(range(50))
        b = list(range(50))
        seeded_shuffle(a, 1)
        seeded_shuffle(b, 2)
        assert a != b
        assert sorted(a) == sorted(b)


class TestSplit:
    def test_basic_sizes(self):
        train, dev, test = split(CORPUS, seed=5)
        assert (len(train), len(dev), len(test)) == (80, 10, 10)

    def test_partition(self):
        train, dev, test = split(CORPUS, seed=5)
        ids = [s.id for s in train + dev + test]
        assert sorted(ids) == sorted(s.id for s in CORPUS)
        assert len(set(ids)) == len(CORPUS)

    def test_all_pinned(self):
        ids = {s.id for s in CORPUS[:10]}
        train, dev, test = split(CORPUS[:10], seed=5, pinned_test=ids)
        assert not train and not dev
        assert {s.id for s in test} == ids

    def test_pinned_subset_of_test(self):
        pinned = {s.id for s in CORPUS[:7]}
        train, dev, test = split(CORPUS, seed=5, pinned_test=pinned)
        assert pinned <= {s.id for s in test}
        assert not pinned & {s.id for s in train}
        assert not pinned & {s.id for s in dev}

    def test_same_seed_identical(self):
        first = split(CORPUS, seed=9)
        second = split(CORPUS, seed=9)
        assert [[s.id for s in part] for part in first] == [
            [s.id for s in part] for part in second
        ]

    def test_bad_ratios_rejected(self):
        with pytest.raises(SplitConfigError):
            split(CORPUS, ratios=(0.5, 0.2, 0.2), seed=1)

    def test_float_ratio_sum_tolerance(self):
        split(CORPUS, ratios=(0.8, 0.1, 0.1), seed=1)  # 0.8+0.1+0.1 != 1.0 exactly

    def test_unknown_pinned_id_rejected(self):
        with pytest.raises(SplitConfigError):
            split(CORPUS, seed=1, pinned_test={"999/9-9"})


class TestStats:
    def test_span_semantics(self):
        s = sent(
            1,
            labels=["O", "B-PER", "I-PER", "O", "O", "B-ORG", "O"],
            tokens=["De", "Jhempi", "Kniddel", "schafft", "beim", "Staat", "."],
        )
        result = stats({"train": [s], "dev": [], "test": []})
        assert result.spans["train"] == {"PER": 1, "ORG": 1}
        assert result.sentences == {"train": 1, "dev": 0, "test": 0}

    def test_empty_split_zeroes(self):
        result = stats({"train": [], "dev": [], "test": []})
        assert result.total_sentences() == 0
        assert result.spans["train"] == {}

    def test_invalid_bio_names_sentence(self):
        bad = AnnotatedSentence(
            id="3/7-3", text="x y", tokens=["x", "y"], labels=["O", "I-PER"]
        )
        with pytest.raises(StatsError) as exc_info:
            stats({"train": [bad]})
        assert "3/7-3" in str(exc_info.value)

    def test_brute_force_span_count(self):
        rng = random.Random(17)
        sentences = []
        expected = {"PER": 0, "ORG": 0, "LOC": 0, "DATE": 0, "MISC": 0}
        for i in range(1, 21):
            n = rng.randint(2, 12)
            labels = ["O"] * n
            j = 0
            while j < n:
                if rng.random() < 0.3:
                    kind = rng.choice(list(expected))
                    length = min(rng.randint(1, 3), n - j)
                    labels[j] = f"B-{kind}"
                    for k in range(j + 1, j + length):
                        labels[k] = f"I-{kind}"
                    expected[kind] += 1
                    j += length
                else:
                    j += 1
            sentences.append(sent(i, labels=labels, tokens=[f"t{k}" for k in range(n)]))
        result = stats({"train": sentences})
        got = {k: result.spans["train"].get(k, 0) for k in expected}
        assert got == expected

    def test_typewise_additivity(self):
        rng = random.Random(3)
        corpus = []
        for i in range(1, 61):
            labels = ["O", "O", "O", "O"]
            if rng.random() < 0.7:
                labels[rng.randint(0, 3)] = f"B-{rng.choice(['PER', 'LOC'])}"
            corpus.append(sent(i, labels=labels))
        train, dev, test = split(corpus, seed=2)
        parts = stats({"train": train, "dev": dev, "test": test})
        whole = stats({"all": corpus})
        for kind in ("PER", "LOC"):
            total = sum(parts.spans[name].get(kind, 0) for name in parts.spans)
            assert total == whole.spans["all"].get(kind, 0)

    def test_render_thousands_separators(self):
        many = [sent(i, labels=["B-PER", "O", "O", "O"]) for i in range(1, 1201)]
        result = stats({"train": many})
        text = render_stats(result)
        assert "1,200" in text

    def test_csv_output(self, tmp_path):
        s = sent(1, labels=["B-PER", "O", "O", "O"])
        result = stats({"train": [s], "dev": [], "test": []})
        path = tmp_path / "stats.csv"
        write_stats_csv(result, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("split,sentences,PER,ORG,LOC,DATE,MISC")
        assert lines[1].startswith("train,1,1,")
