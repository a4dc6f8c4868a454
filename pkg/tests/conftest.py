from __future__ import annotations

import json
from pathlib import Path
from xml.sax.saxutils import escape

import pytest

from nerforge.entity_link import WikidataRecord, store_fixture

FIXTURES = Path(__file__).parent / "fixtures"


def build_dump_xml(pages: list[dict]) -> str:
    """Assemble a minimal MediaWiki export from page dicts
    (keys: id, title, ns, redirect, text)."""
    parts = [
        '<mediawiki xmlns="http://www.mediawiki.org/xml/export-0.10/" xml:lang="lb">',
        "  <siteinfo>",
        "    <sitename>Wikipedia</sitename>",
        "  </siteinfo>",
    ]
    for page in pages:
        parts.append("  <page>")
        parts.append(f"    <title>{escape(page['title'])}</title>")
        parts.append(f"    <ns>{page.get('ns', 0)}</ns>")
        parts.append(f"    <id>{page['id']}</id>")
        if page.get("redirect"):
            parts.append(f'    <redirect title="{escape(page["redirect"])}" />')
        parts.append("    <revision>")
        parts.append(f"      <id>{page['id'] * 10}</id>")
        parts.append(f"      <text>{escape(page.get('text', ''))}</text>")
        parts.append("    </revision>")
        parts.append("  </page>")
    parts.append("</mediawiki>")
    return "\n".join(parts) + "\n"


@pytest.fixture(scope="session")
def mini_dump_path() -> Path:
    return FIXTURES / "mini_dump.xml"


@pytest.fixture(scope="session")
def wikidata_table() -> dict:
    with open(FIXTURES / "wikidata_records.json", encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture()
def wikidata_fixture_dir(tmp_path: Path, wikidata_table: dict) -> Path:
    """The bundled Wikidata responses written out in the on-disk cache layout."""
    directory = tmp_path / "wikidata"
    for title, record in wikidata_table.items():
        store_fixture(
            directory, title, None if record is None else WikidataRecord.from_dict(record)
        )
    return directory


class TableClient:
    """In-memory Wikidata source for unit tests."""

    def __init__(self, table: dict[str, WikidataRecord | None]):
        self.table = table
        self.calls = 0

    def fetch(self, title: str):
        self.calls += 1
        return self.table.get(title)


@pytest.fixture()
def table_client_factory():
    return TableClient
