from __future__ import annotations

import numpy as np
import pytest

from tweetkey import bioes
from tweetkey.dataprep import TaggedSample
from tweetkey.embeddings import EmbeddingTable, load_embeddings


def make_table(vectors: dict) -> EmbeddingTable:
    """Build an EmbeddingTable from {word: (v1, v2, ...)} via the text loader."""
    lines = [
        f"{word} " + " ".join(repr(float(x)) for x in vec)
        for word, vec in vectors.items()
    ]
    return load_embeddings(lines)


@pytest.fixture
def fixture_table() -> EmbeddingTable:
    """Fixture F used across metric tests: storm, cat, tornado in 2-d."""
    return make_table({"storm": (1, 0), "cat": (0, 1), "tornado": (0.8, 0.6)})


PLANTED_TEMPLATES = (
    ("hurricane", "harvey"),
    ("boston", "bombing"),
    ("red", "cross"),
    ("mexico", "earthquake"),
    ("storm", "surge"),
    ("rescue", "team"),
    ("flood",),
    ("wildfire",),
    ("tornado",),
    ("evacuation",),
)


def planted_corpus(
    n: int, seed: int, n_fillers: int = 190, min_len: int = 5, max_len: int = 12
) -> list[TaggedSample]:
    """Synthetic tweets, each with one keyphrase template planted in filler.

    Template words never occur as filler, so the tagging is learnable at
    desk scale; the vocabulary is roughly n_fillers + 16 words.
    """
    rng = np.random.default_rng(seed)
    fillers = [f"w{i:03d}" for i in range(n_fillers)]
    samples = []
    for i in range(n):
        k = int(rng.integers(min_len, max_len + 1))
        tokens = [fillers[j] for j in rng.integers(0, n_fillers, k)]
        template = PLANTED_TEMPLATES[int(rng.integers(len(PLANTED_TEMPLATES)))]
        pos = int(rng.integers(0, k + 1))
        tokens = tokens[:pos] + list(template) + tokens[pos:]
        tags = bioes.encode_tags(len(tokens), [(pos, pos + len(template))])
        samples.append(
            TaggedSample(id=f"t{i}", tokens=tuple(tokens), tags=tuple(tags))
        )
    return samples


def random_keyphrase_fixture(rng: np.random.Generator):
    """Random small vocabulary plus two random phrase sets of size 1 to 6."""
    dim = int(rng.integers(2, 7))
    n_words = int(rng.integers(4, 12))
    words = [f"v{i}" for i in range(n_words)]
    table = make_table(
        {w: tuple(rng.uniform(-1, 1, dim)) for w in words}
    )
    def random_set():
        size = int(rng.integers(1, 7))
        phrases = set()
        while len(phrases) < size:
            length = int(rng.integers(1, 3))
            idx = rng.integers(0, n_words, length)
            phrases.add(" ".join(words[j] for j in idx))
        return frozenset(phrases)
    return table, random_set(), random_set()
