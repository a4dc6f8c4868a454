from __future__ import annotations

import pytest

from nerforge.bio import LabelError, bio_violations, is_bio_valid, split_label
from nerforge.records import (
    AnnotatedSentence,
    RecordError,
    read_records,
    write_records,
)


class TestBio:
    def test_split_label(self):
        assert split_label("O") == ("O", None)
        assert split_label("B-PER") == ("B", "PER")
        assert split_label("I-DATE") == ("I", "DATE")

    def test_split_label_rejects_garbage(self):
        for bad in ("", "B-", "b-per", "X-PER", "BPER", "B-per"):
            with pytest.raises(LabelError):
                split_label(bad)

    def test_violations(self):
        assert bio_violations(["O", "B-PER", "I-PER"]) == []
        assert bio_violations(["I-PER"])
        assert bio_violations(["B-PER", "I-LOC"])
        assert bio_violations(["O", "junk"])

    def test_i_after_o_detected(self):
        assert not is_bio_valid(["B-PER", "O", "I-PER"])

    def test_b_after_b_fine(self):
        assert is_bio_valid(["B-PER", "B-PER", "I-PER"])


class TestRecords:
    def test_roundtrip(self, tmp_path):
        sentences = [
            AnnotatedSentence(
                id="1/100-1",
                text="De Jhempi Kniddel schafft beim Staat",
                tokens=["De", "Jhempi", "Kniddel", "schafft", "beim", "Staat", "."],
                labels=["O", "B-PER", "I-PER", "O", "O", "B-ORG", "O"],
            )
        ]
        path = tmp_path / "records.jsonl"
        write_records(path, sentences)
        assert read_records(path) == sentences
        first = path.read_text().splitlines()[0]
        assert first.startswith('{"id": "1/100-1", "text": ')

    def test_id_parsing(self):
        s = AnnotatedSentence("12/345-6", "x", ["x"], ["O"])
        assert s.article_and_index() == (345, 6)

    def test_violations(self):
        bad_id = AnnotatedSentence("oops", "x", ["x"], ["O"])
        assert any("id" in v for v in bad_id.violations())
        mismatch = AnnotatedSentence("1/1-1", "x", ["x"], ["O", "O"])
        assert mismatch.violations()
        good = AnnotatedSentence("1/1-1", "x y", ["x", "y"], ["O", "B-LOC"])
        assert good.violations() == []

    def test_missing_field_raises(self):
        with pytest.raises(RecordError):
            AnnotatedSentence.from_dict({"id": "1/1-1", "text": "x", "tokens": ["x"]})

    def test_bad_json_line_raises_with_location(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "1/1-1", "text": "x", "tokens": ["x"], "labels": ["O"]}\nnot json\n')
        with pytest.raises(RecordError) as exc_info:
            list(read_records(path))
        assert ":2" in str(exc_info.value)
