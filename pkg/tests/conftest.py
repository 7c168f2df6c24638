from __future__ import annotations

from pathlib import Path

import pytest

from lident.corpus import Corpus, Instance, Label

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def toy_corpus() -> Corpus:
    return Corpus.from_instances(
        [
            Instance("bonjour le monde", Label("fr")),
            Instance("bonsoir mes amis", Label("fr")),
            Instance("hola mundo amigos", Label("es")),
            Instance("buenos dias amigo", Label("es")),
        ]
    )


def write_tsv_file(path: Path, rows: list[tuple[str, str]]) -> Path:
    path.write_text("".join(f"{text}\t{code}\n" for text, code in rows), encoding="utf-8")
    return path
