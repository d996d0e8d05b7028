"""Word vector tables, phrase vectors, and cosine similarity.

Embedding files are plain UTF-8 text, one record per line:
``word v1 v2 ... vd`` with the same ``d`` on every line and no header.
Keys are stored lowercase and lookups lowercase the query, matching the
vocabularies of published Twitter embeddings.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import ContractViolation, MalformedInput


@dataclass(frozen=True)
class EmbeddingTable:
    """Read-only map from lowercase word to a vector of length ``dim``."""

    dim: int
    _vectors: dict[str, np.ndarray] = field(repr=False)

    def get(self, word: str) -> Optional[np.ndarray]:
        return self._vectors.get(word.lower())

    def __contains__(self, word: str) -> bool:
        return word.lower() in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def words(self) -> Iterable[str]:
        return self._vectors.keys()


@dataclass(frozen=True)
class PhraseVector:
    """Mean of the in-vocabulary word vectors of a phrase.

    ``coverage`` counts the tokens that contributed; when it is 0 the
    vector is all zeros.
    """

    values: np.ndarray
    coverage: int


def load_embeddings(lines: Iterable[str]) -> EmbeddingTable:
    """Parse a line-oriented embedding stream into an EmbeddingTable.

    Duplicate words keep the last occurrence. Raises MalformedInput,
    naming the offending line, on dimension mismatch, unparsable or
    non-finite values, or an empty stream.
    """
    vectors: dict[str, np.ndarray] = {}
    dim: Optional[int] = None
    for lineno, raw in enumerate(lines, start=1):
        parts = raw.split()
        if not parts:
            continue
        if len(parts) < 2:
            raise MalformedInput(
                f"embedding line {lineno}: expected a word followed by vector values"
            )
        word = parts[0].lower()
        try:
            values = [float(p) for p in parts[1:]]
        except ValueError:
            raise MalformedInput(
                f"embedding line {lineno}: unparsable vector value"
            ) from None
        if not all(math.isfinite(v) for v in values):
            raise MalformedInput(f"embedding line {lineno}: non-finite vector value")
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise MalformedInput(
                f"embedding line {lineno}: expected {dim} values, got {len(values)}"
            )
        vec = np.asarray(values, dtype=float)
        vec.setflags(write=False)
        vectors[word] = vec
    if dim is None:
        raise MalformedInput("empty embedding input")
    return EmbeddingTable(dim=dim, _vectors=vectors)


def phrase_vector(phrase: str, table: EmbeddingTable) -> PhraseVector:
    """Average the vectors of the phrase's in-vocabulary tokens.

    Out-of-vocabulary tokens are skipped and do not enter the
    denominator; an all-OOV phrase yields the zero vector with
    coverage 0.
    """
    tokens = phrase.split()
    if not tokens:
        raise ContractViolation("phrase_vector: phrase has no tokens")
    total = np.zeros(table.dim)
    coverage = 0
    for token in tokens:
        vec = table.get(token)
        if vec is not None:
            total += vec
            coverage += 1
    if coverage == 0:
        return PhraseVector(values=total, coverage=0)
    return PhraseVector(values=total / coverage, coverage=coverage)


def cosine(a, b) -> float:
    """Cosine similarity in [-1, 1]; 0 when either vector has zero norm."""
    av = np.asarray(a, dtype=float)
    bv = np.asarray(b, dtype=float)
    if av.shape != bv.shape:
        raise ContractViolation(
            f"cosine: length mismatch ({av.shape} vs {bv.shape})"
        )
    norm_a = float(np.linalg.norm(av))
    norm_b = float(np.linalg.norm(bv))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    value = float(np.dot(av, bv) / (norm_a * norm_b))
    return max(-1.0, min(1.0, value))
