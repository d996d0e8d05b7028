from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tweetkey.bioes import TAGS, decode_tags, encode_tags, validate
from tweetkey.errors import ContractViolation


class TestEncode:
    def test_pair_span(self):
        assert encode_tags(4, [(0, 2)]) == ["B", "E", "O", "O"]

    def test_full_span(self):
        assert encode_tags(3, [(0, 3)]) == ["B", "I", "E"]

    def test_singleton(self):
        assert encode_tags(3, [(1, 2)]) == ["O", "S", "O"]

    def test_overlap_rejected(self):
        with pytest.raises(ContractViolation):
            encode_tags(4, [(0, 2), (1, 3)])

    def test_out_of_range_rejected(self):
        with pytest.raises(ContractViolation):
            encode_tags(3, [(2, 4)])
        with pytest.raises(ContractViolation):
            encode_tags(3, [(-1, 1)])
        with pytest.raises(ContractViolation):
            encode_tags(3, [(2, 2)])

    def test_unsorted_input_is_sorted(self):
        assert encode_tags(4, [(2, 3), (0, 1)]) == ["S", "O", "S", "O"]


class TestDecode:
    def test_round_trip(self):
        assert decode_tags(["B", "E", "O", "O"]) == [(0, 2)]

    def test_orphan_i_opens_phrase(self):
        assert decode_tags(["I", "E", "O"]) == [(0, 2)]

    def test_unterminated_b_closes_as_singleton(self):
        assert decode_tags(["B", "O", "S"]) == [(0, 1), (2, 3)]

    def test_orphan_e_is_singleton(self):
        assert decode_tags(["O", "E", "O"]) == [(1, 2)]

    def test_b_interrupted_by_b(self):
        assert decode_tags(["B", "B", "E"]) == [(0, 1), (1, 3)]

    def test_trailing_open_phrase(self):
        assert decode_tags(["O", "B", "I"]) == [(1, 3)]

    def test_empty(self):
        assert decode_tags([]) == []

    def test_unknown_tag_rejected(self):
        with pytest.raises(ContractViolation):
            decode_tags(["B", "X"])


class TestValidate:
    def test_well_formed(self):
        assert validate(["B", "I", "E"]) == []
        assert validate(["O", "S", "O"]) == []
        assert validate([]) == []

    def test_orphan_i(self):
        assert validate(["I", "O"]) == [("orphan-I", 0)]

    def test_unterminated_b(self):
        assert validate(["B", "B", "E"]) == [("unterminated-B", 0)]

    def test_unterminated_at_end(self):
        assert validate(["O", "B"]) == [("unterminated-B", 1)]

    def test_orphan_e(self):
        assert validate(["E"]) == [("orphan-E", 0)]


@st.composite
def annotations(draw):
    seq_len = draw(st.integers(0, 24))
    spans = []
    pos = 0
    while pos < seq_len:
        pos += draw(st.integers(0, 2))
        if pos >= seq_len:
            break
        length = draw(st.integers(1, min(4, seq_len - pos)))
        if draw(st.booleans()):
            spans.append((pos, pos + length))
            pos += length
        else:
            pos += 1
    return seq_len, spans


@given(annotations())
def test_round_trip_property(annotation):
    seq_len, spans = annotation
    assert decode_tags(encode_tags(seq_len, spans)) == spans


@given(annotations())
def test_encode_always_validates(annotation):
    seq_len, spans = annotation
    assert validate(encode_tags(seq_len, spans)) == []


@given(st.lists(st.sampled_from(TAGS), max_size=30))
def test_decode_is_total_and_well_behaved(tags):
    spans = decode_tags(tags)
    prev_end = 0
    for start, end in spans:
        assert 0 <= start < end <= len(tags)
        assert start >= prev_end
        prev_end = end
    # repaired output re-encodes to a well-formed sequence
    assert validate(encode_tags(len(tags), spans)) == []
