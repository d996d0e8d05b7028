"""BIOES span tagging: encoding, lenient decoding, and validation.

Tags are the single characters B, I, O, E, S. The canonical label order
used everywhere a tag becomes an index (model output heads, tie
breaking) is ``TAGS`` below. Spans are half-open token-index pairs
``(start, end)``.
"""
from __future__ import annotations

from typing import Iterable, Sequence

from .errors import ContractViolation

TAGS = ("B", "I", "O", "E", "S")
TAG_INDEX = {tag: i for i, tag in enumerate(TAGS)}

Span = tuple[int, int]


def _checked_spans(seq_len: int, spans: Iterable[Span]) -> list[Span]:
    ordered = sorted(spans)
    prev_end = 0
    for start, end in ordered:
        if not (0 <= start < end <= seq_len):
            raise ContractViolation(
                f"span ({start}, {end}) out of range for length {seq_len}"
            )
        if start < prev_end:
            raise ContractViolation(f"span ({start}, {end}) overlaps a previous span")
        prev_end = end
    return ordered


def encode_tags(seq_len: int, spans: Iterable[Span]) -> list[str]:
    """Encode non-overlapping spans as a BIOES tag sequence.

    A length-1 span becomes S; a longer span becomes B, I..., E. All
    other positions are O.
    """
    tags = ["O"] * seq_len
    for start, end in _checked_spans(seq_len, spans):
        if end - start == 1:
            tags[start] = "S"
        else:
            tags[start] = "B"
            for i in range(start + 1, end - 1):
                tags[i] = "I"
            tags[end - 1] = "E"
    return tags


def decode_tags(tags: Sequence[str]) -> list[Span]:
    """Decode a (possibly ill-formed) tag sequence into spans.

    Well-formed sequences invert encode_tags exactly. Ill-formed model
    output is repaired locally and deterministically:

    * an I or E with no open phrase opens one at that position, and E
      always closes the open phrase;
    * an open phrase interrupted by O, S, B, or the end of the sequence
      closes at the last in-phrase token, and S always emits a
      singleton.

    No predicted keyphrase material is discarded.
    """
    spans: list[Span] = []
    open_start: int | None = None
    for i, tag in enumerate(tags):
        if tag == "B":
            if open_start is not None:
                spans.append((open_start, i))
            open_start = i
        elif tag == "I":
            if open_start is None:
                open_start = i
        elif tag == "E":
            if open_start is None:
                open_start = i
            spans.append((open_start, i + 1))
            open_start = None
        elif tag == "S":
            if open_start is not None:
                spans.append((open_start, i))
                open_start = None
            spans.append((i, i + 1))
        elif tag == "O":
            if open_start is not None:
                spans.append((open_start, i))
                open_start = None
        else:
            raise ContractViolation(f"unknown tag {tag!r} at position {i}")
    if open_start is not None:
        spans.append((open_start, len(tags)))
    return spans


def validate(tags: Sequence[str]) -> list[tuple[str, int]]:
    """Return scheme violations as (kind, position) pairs; [] iff well formed.

    Kinds: ``orphan-I`` and ``orphan-E`` for I/E outside an open phrase,
    ``unterminated-B`` (reported at the opening position) for a phrase
    not closed by E.
    """
    violations: list[tuple[str, int]] = []
    open_start: int | None = None
    for i, tag in enumerate(tags):
        if tag == "B":
            if open_start is not None:
                violations.append(("unterminated-B", open_start))
            open_start = i
        elif tag == "I":
            if open_start is None:
                violations.append(("orphan-I", i))
        elif tag == "E":
            if open_start is None:
                violations.append(("orphan-E", i))
            open_start = None
        elif tag in ("O", "S"):
            if open_start is not None:
                violations.append(("unterminated-B", open_start))
                open_start = None
        else:
            raise ContractViolation(f"unknown tag {tag!r} at position {i}")
    if open_start is not None:
        violations.append(("unterminated-B", open_start))
    return violations
