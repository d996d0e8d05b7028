"""Turning raw tweets into BIOES-labeled samples.

The pipeline is: tokenize, segment hashtags into their constituent
words (those become keyphrase spans), match a crisis lexicon over the
remaining tokens, encode spans as tags, and filter by length. Input
formats: tweets as JSON Lines with ``id``, ``text``, optional
``aux_tags``; lexicon as one phrase per line; frequency dictionary as
``word<TAB>count`` lines or one word per line (rank order, Zipf weight
1/rank).
"""
from __future__ import annotations

import json
import math
import unicodedata
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from . import bioes
from .errors import ContractViolation, MalformedInput


@dataclass(frozen=True)
class RawTweet:
    id: str
    text: str
    aux_tags: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if not self.id:
            raise ContractViolation("tweet id must be non-empty")


@dataclass(frozen=True)
class TaggedSample:
    """A token sequence with aligned BIOES tags and optional aux symbols."""

    id: str
    tokens: tuple[str, ...]
    tags: tuple[str, ...]
    aux: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if len(self.tokens) != len(self.tags):
            raise ContractViolation(
                f"sample {self.id}: {len(self.tokens)} tokens vs {len(self.tags)} tags"
            )
        if self.aux is not None and len(self.aux) != len(self.tokens):
            raise ContractViolation(
                f"sample {self.id}: aux symbols do not align with tokens"
            )


@dataclass(frozen=True)
class Lexicon:
    """Normalized unigram and bigram phrases for greedy matching."""

    unigrams: frozenset[str]
    bigrams: frozenset[str]

    @classmethod
    def from_phrases(cls, phrases: Iterable[str]) -> "Lexicon":
        unigrams, bigrams = set(), set()
        for phrase in phrases:
            tokens = phrase.lower().split()
            if len(tokens) == 1:
                unigrams.add(tokens[0])
            elif len(tokens) == 2:
                bigrams.add(" ".join(tokens))
            else:
                raise ContractViolation(
                    f"lexicon entry {phrase!r} must have 1 or 2 tokens"
                )
        return cls(unigrams=frozenset(unigrams), bigrams=frozenset(bigrams))


@dataclass(frozen=True)
class FrequencyDict:
    """Word weights for hashtag segmentation; all weights are positive."""

    weights: dict[str, float]
    total: float

    @classmethod
    def from_weights(cls, weights: dict[str, float]) -> "FrequencyDict":
        for word, weight in weights.items():
            if weight <= 0:
                raise ContractViolation(f"weight for {word!r} must be positive")
        return cls(weights=dict(weights), total=float(sum(weights.values())))

    def log_prob(self, chunk: str) -> float:
        """Log probability of a chunk; unknown chunks get a floor that
        decays exponentially with length, so dictionary words dominate."""
        total = self.total if self.total > 0 else 1.0
        weight = self.weights.get(chunk)
        if weight is not None:
            return math.log(weight / self.total)
        return -math.log(total) - len(chunk) * math.log(10.0)


def load_lexicon(lines: Iterable[str]) -> Lexicon:
    """Read one phrase per line; entries longer than 2 tokens are rejected."""
    unigrams, bigrams = set(), set()
    for lineno, raw in enumerate(lines, start=1):
        tokens = raw.lower().split()
        if not tokens:
            continue
        if len(tokens) == 1:
            unigrams.add(tokens[0])
        elif len(tokens) == 2:
            bigrams.add(" ".join(tokens))
        else:
            raise MalformedInput(
                f"lexicon line {lineno}: entries must have 1 or 2 tokens"
            )
    return Lexicon(unigrams=frozenset(unigrams), bigrams=frozenset(bigrams))


def load_frequency_dict(lines: Iterable[str]) -> FrequencyDict:
    """Read word weights.

    Lines containing a tab are ``word<TAB>count``; otherwise each line
    is a word and line order is rank order with Zipf weight 1/rank.
    The two styles cannot be mixed; duplicate words keep the last
    occurrence.
    """
    weights: dict[str, float] = {}
    tab_mode: Optional[bool] = None
    rank = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        has_tab = "\t" in line
        if tab_mode is None:
            tab_mode = has_tab
        elif has_tab != tab_mode:
            raise MalformedInput(
                f"frequency dict line {lineno}: mixed tab and rank-order formats"
            )
        if tab_mode:
            word, _, count_text = line.partition("\t")
            word = word.strip().lower()
            try:
                count = float(count_text)
            except ValueError:
                raise MalformedInput(
                    f"frequency dict line {lineno}: unparsable count"
                ) from None
            if not word or count <= 0:
                raise MalformedInput(
                    f"frequency dict line {lineno}: need a word and a positive count"
                )
            weights[word] = count
        else:
            rank += 1
            weights[line.lower()] = 1.0 / rank
    return FrequencyDict.from_weights(weights)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _is_url(chunk: str) -> bool:
    return chunk.lower().startswith(("http://", "https://", "www."))


def _keeps_prefix(chunk: str) -> bool:
    # hashtags and @mentions keep their marker attached
    return (
        len(chunk) > 1 and chunk[0] in ("#", "@") and not _is_punct(chunk[1])
    )


def _split_chunk(chunk: str) -> list[str]:
    if _is_url(chunk):
        return [chunk]
    trailing: list[str] = []
    while len(chunk) > 1 and _is_punct(chunk[-1]):
        trailing.append(chunk[-1])
        chunk = chunk[:-1]
    leading: list[str] = []
    while len(chunk) > 1 and _is_punct(chunk[0]) and not _keeps_prefix(chunk):
        leading.append(chunk[0])
        chunk = chunk[1:]
    return leading + [chunk] + trailing[::-1]


def tokenize(text: str) -> list[str]:
    """Whitespace split, then peel leading/trailing punctuation into
    separate tokens. ``#`` stays attached as a hashtag marker; URLs and
    @mentions stay whole."""
    tokens: list[str] = []
    for chunk in text.split():
        tokens.extend(_split_chunk(chunk))
    return tokens


def is_hashtag(token: str) -> bool:
    return len(token) > 1 and token.startswith("#")


def segment_hashtag(body: str, freq: FrequencyDict) -> list[str]:
    """Split a hashtag body into words maximizing total log weight.

    Dynamic program over all split points; the whole body stays one
    word unless some split scores strictly higher. The concatenation of
    the result always equals the input.
    """
    n = len(body)
    if n == 0:
        return []
    best = [-math.inf] * (n + 1)
    back = [0] * (n + 1)
    best[0] = 0.0
    for end in range(1, n + 1):
        for start in range(end):
            score = best[start] + freq.log_prob(body[start:end])
            if score > best[end]:
                best[end] = score
                back[end] = start
    if best[n] <= freq.log_prob(body):
        return [body]
    parts: list[str] = []
    end = n
    while end > 0:
        start = back[end]
        parts.append(body[start:end])
        end = start
    return parts[::-1]


def lexicon_match(
    tokens: Sequence[str],
    lexicon: Lexicon,
    blocked: frozenset[int] = frozenset(),
) -> list[bioes.Span]:
    """Greedy left-to-right longest-match-first lexicon spans.

    Bigrams are tried before unigrams; matches never overlap each other
    or the ``blocked`` positions.
    """
    lower = [t.lower() for t in tokens]
    spans: list[bioes.Span] = []
    i = 0
    n = len(tokens)
    while i < n:
        if i in blocked:
            i += 1
            continue
        if (
            i + 1 < n
            and i + 1 not in blocked
            and f"{lower[i]} {lower[i + 1]}" in lexicon.bigrams
        ):
            spans.append((i, i + 2))
            i += 2
            continue
        if lower[i] in lexicon.unigrams:
            spans.append((i, i + 1))
        i += 1
    return spans


def annotate(tweet: RawTweet, lexicon: Lexicon, freq: FrequencyDict) -> TaggedSample:
    """Produce a lowercased, BIOES-tagged sample from a raw tweet.

    Hashtag tokens are replaced in-sequence by their segmented words and
    each run of segmented words becomes a keyphrase span; lexicon
    matches over the remaining positions add further spans. Overlaps
    resolve hashtag-first. An aux symbol attached to a hashtag token is
    replicated across its segmented words.
    """
    raw_tokens = tokenize(tweet.text)
    if tweet.aux_tags is not None and len(tweet.aux_tags) != len(raw_tokens):
        raise ContractViolation(
            f"tweet {tweet.id}: {len(tweet.aux_tags)} aux tags for "
            f"{len(raw_tokens)} tokens"
        )
    tokens: list[str] = []
    aux: list[str] = []
    hashtag_spans: list[bioes.Span] = []
    for idx, token in enumerate(raw_tokens):
        if is_hashtag(token):
            words = segment_hashtag(token[1:].lower(), freq)
            start = len(tokens)
            tokens.extend(words)
            hashtag_spans.append((start, start + len(words)))
            if tweet.aux_tags is not None:
                aux.extend([tweet.aux_tags[idx]] * len(words))
        else:
            tokens.append(token.lower())
            if tweet.aux_tags is not None:
                aux.append(tweet.aux_tags[idx])
    blocked = frozenset(
        pos for start, end in hashtag_spans for pos in range(start, end)
    )
    spans = sorted(hashtag_spans + lexicon_match(tokens, lexicon, blocked))
    tags = bioes.encode_tags(len(tokens), spans)
    return TaggedSample(
        id=tweet.id,
        tokens=tuple(tokens),
        tags=tuple(tags),
        aux=tuple(aux) if tweet.aux_tags is not None else None,
    )


MIN_TOKENS = 5
MAX_TOKENS = 200


def filter_corpus(samples: Iterable[TaggedSample]) -> list[TaggedSample]:
    """Keep samples with 5 to 200 tokens inclusive."""
    return [s for s in samples if MIN_TOKENS <= len(s.tokens) <= MAX_TOKENS]


@dataclass(frozen=True)
class CorpusStats:
    samples: int
    keyphrases: int
    avg_keyphrases: float


def corpus_stats(samples: Sequence[TaggedSample]) -> CorpusStats:
    """Count samples, decoded keyphrase spans, and their per-sample mean."""
    total = sum(len(bioes.decode_tags(s.tags)) for s in samples)
    count = len(samples)
    return CorpusStats(
        samples=count,
        keyphrases=total,
        avg_keyphrases=total / count if count else 0.0,
    )


def read_tweets(lines: Iterable[str]) -> list[RawTweet]:
    """Parse tweets from JSON Lines with ``id``, ``text``, optional ``aux_tags``."""
    tweets: list[RawTweet] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError:
            raise MalformedInput(f"tweets line {lineno}: invalid JSON") from None
        if not isinstance(record, dict):
            raise MalformedInput(f"tweets line {lineno}: expected a JSON object")
        tweet_id = record.get("id")
        text = record.get("text")
        if not isinstance(tweet_id, str) or not tweet_id:
            raise MalformedInput(f"tweets line {lineno}: missing non-empty 'id'")
        if not isinstance(text, str):
            raise MalformedInput(f"tweets line {lineno}: missing 'text'")
        aux = record.get("aux_tags")
        if aux is not None and (
            not isinstance(aux, list) or not all(isinstance(a, str) for a in aux)
        ):
            raise MalformedInput(
                f"tweets line {lineno}: 'aux_tags' must be a list of strings"
            )
        tweets.append(
            RawTweet(
                id=tweet_id,
                text=text,
                aux_tags=tuple(aux) if aux is not None else None,
            )
        )
    return tweets
