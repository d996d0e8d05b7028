"""Evaluation of predicted keyphrase sets against gold sets.

Three families live here:

* exact-match sequence-labeling precision/recall/F1 over (start, end)
  spans;
* set-based F1 over normalized phrase strings;
* embedding-similarity scores between phrase sets: greedy matching,
  its symmetric and length-penalized variants, the alpha/beta-extended
  score, averaged and extrema set vectors, and optimal one-to-one
  assignment.

All embedding scores clamp each pairwise cosine below the threshold
``theta`` to 0, which for theta >= 0 is equivalent to clamping after
taking the max. Empty sets follow one rule everywhere: both empty
scores 1.0, exactly one empty scores 0.0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import bioes
from .embeddings import EmbeddingTable, cosine, phrase_vector
from .errors import ContractViolation

KeyphraseSet = frozenset  # of normalized phrase strings

VARIANTS = ("greedy", "symmetric-greedy", "extended", "average", "extrema", "optimal")


@dataclass(frozen=True)
class MetricConfig:
    """Knobs for the embedding-based scores.

    ``alpha`` penalizes predicting fewer phrases than gold, ``beta``
    penalizes predicting more, ``theta`` is the per-pair cosine floor,
    and ``variant`` selects the scoring function.
    """

    alpha: float = 0.7
    beta: float = 0.7
    theta: float = 0.4
    variant: str = "extended"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ContractViolation("alpha and beta must be >= 0")
        if not 0.0 <= self.theta <= 1.0:
            raise ContractViolation("theta must be in [0, 1]")
        if self.variant not in VARIANTS:
            raise ContractViolation(
                f"unknown variant {self.variant!r}; expected one of {VARIANTS}"
            )


@dataclass(frozen=True)
class PrfReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }


@dataclass(frozen=True)
class ScoreReport:
    """Per-sample scores plus their macro average (0.0 for an empty corpus)."""

    per_sample: tuple[tuple[str, float], ...]
    corpus_score: float

    def as_dict(self) -> dict:
        return {
            "per_sample": [
                {"id": sample_id, "score": score} for sample_id, score in self.per_sample
            ],
            "corpus_score": self.corpus_score,
        }


def _prf(tp: int, fp: int, fn: int) -> PrfReport:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PrfReport(precision, recall, f1, tp, fp, fn)


def normalize_phrase(phrase: str) -> str:
    """Lowercase and collapse whitespace to single spaces."""
    return " ".join(phrase.lower().split())


def normalize_phrases(phrases: Iterable[str]) -> KeyphraseSet:
    """Build a KeyphraseSet from raw strings, dropping empties."""
    return frozenset(p for p in (normalize_phrase(s) for s in phrases) if p)


def keyphrase_set(tokens: Sequence[str], tags: Sequence[str]) -> KeyphraseSet:
    """Decode tags to spans and collect normalized, deduplicated phrases."""
    if len(tokens) != len(tags):
        raise ContractViolation(
            f"keyphrase_set: {len(tokens)} tokens vs {len(tags)} tags"
        )
    phrases = []
    for start, end in bioes.decode_tags(tags):
        phrases.append(" ".join(tokens[start:end]))
    return normalize_phrases(phrases)


def exact_match_prf(
    gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]
) -> PrfReport:
    """Micro-averaged span-position P/R/F1 over parallel tag corpora.

    A predicted span is a true positive iff the identical (start, end)
    span exists in the gold annotation of the same sample.
    """
    if len(gold) != len(pred):
        raise ContractViolation(
            f"exact_match_prf: {len(gold)} gold vs {len(pred)} predicted samples"
        )
    tp = fp = fn = 0
    for i, (gold_tags, pred_tags) in enumerate(zip(gold, pred)):
        if len(gold_tags) != len(pred_tags):
            raise ContractViolation(
                f"exact_match_prf: sample {i} length mismatch "
                f"({len(gold_tags)} vs {len(pred_tags)})"
            )
        gold_spans = set(bioes.decode_tags(gold_tags))
        pred_spans = set(bioes.decode_tags(pred_tags))
        tp += len(gold_spans & pred_spans)
        fp += len(pred_spans - gold_spans)
        fn += len(gold_spans - pred_spans)
    return _prf(tp, fp, fn)


def exact_match_macro(
    gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]
) -> tuple[float, float, float]:
    """Macro-averaged (precision, recall, f1) of per-sample exact matching.

    A sample with neither gold nor predicted spans counts as perfect;
    otherwise zero denominators yield 0 for that sample.
    """
    if len(gold) != len(pred):
        raise ContractViolation(
            f"exact_match_macro: {len(gold)} gold vs {len(pred)} predicted samples"
        )
    if not gold:
        return (0.0, 0.0, 0.0)
    totals = np.zeros(3)
    for gold_tags, pred_tags in zip(gold, pred):
        report = exact_match_prf([gold_tags], [pred_tags])
        if report.tp == report.fp == report.fn == 0:
            totals += 1.0
        else:
            totals += (report.precision, report.recall, report.f1)
    precision, recall, f1 = totals / len(gold)
    return (float(precision), float(recall), float(f1))


def set_f1(gold: KeyphraseSet, pred: KeyphraseSet) -> PrfReport:
    """Exact string overlap between normalized phrase sets.

    Both sets empty is vacuously perfect (P = R = F1 = 1); exactly one
    empty scores 0.
    """
    if not gold and not pred:
        return PrfReport(1.0, 1.0, 1.0, 0, 0, 0)
    tp = len(gold & pred)
    return _prf(tp, len(pred - gold), len(gold - pred))


def _thresholded(value: float, theta: float) -> float:
    return value if value >= theta else 0.0


def best_match(
    phrase: str, against: KeyphraseSet, table: EmbeddingTable, theta: float
) -> float:
    """Best thresholded cosine between ``phrase`` and any phrase in ``against``."""
    if not against:
        raise ContractViolation("best_match: empty candidate set")
    vec = phrase_vector(phrase, table).values
    best = 0.0
    for candidate in against:
        score = _thresholded(
            cosine(vec, phrase_vector(candidate, table).values), theta
        )
        if score > best:
            best = score
    return best


def gm(
    pred: KeyphraseSet, gold: KeyphraseSet, table: EmbeddingTable, theta: float
) -> float:
    """Greedy matching: mean best_match of each predicted phrase against gold."""
    if not pred or not gold:
        raise ContractViolation("gm: empty keyphrase set")
    # sorted iteration keeps float accumulation reproducible across runs
    return sum(best_match(p, gold, table, theta) for p in sorted(pred)) / len(pred)


def _empty_rule(pred: KeyphraseSet, gold: KeyphraseSet) -> Optional[float]:
    if not pred and not gold:
        return 1.0
    if not pred or not gold:
        return 0.0
    return None


def symm_gm(
    pred: KeyphraseSet, gold: KeyphraseSet, table: EmbeddingTable, theta: float
) -> float:
    """Mean of greedy matching in both directions."""
    empty = _empty_rule(pred, gold)
    if empty is not None:
        return empty
    return (gm(pred, gold, table, theta) + gm(gold, pred, table, theta)) / 2.0


def extended_gm(
    pred: KeyphraseSet,
    gold: KeyphraseSet,
    table: EmbeddingTable,
    config: MetricConfig,
) -> float:
    """Greedy matching with alpha/beta-modulated length penalties.

    Each direction's sum of best matches is divided by the set size
    inflated by alpha (resp. beta) times the cardinality deficit, and
    the two directions are averaged. With alpha = beta = 0 this is
    symm_gm; with alpha = beta = 1 it is gm_prime.
    """
    empty = _empty_rule(pred, gold)
    if empty is not None:
        return empty
    p, g = len(pred), len(gold)
    forward = sum(best_match(x, gold, table, config.theta) for x in sorted(pred)) / (
        p + config.alpha * max(0, g - p)
    )
    backward = sum(best_match(x, pred, table, config.theta) for x in sorted(gold)) / (
        g + config.beta * max(0, p - g)
    )
    return (forward + backward) / 2.0


def gm_prime(
    pred: KeyphraseSet, gold: KeyphraseSet, table: EmbeddingTable, theta: float
) -> float:
    """Symmetric greedy matching normalized by max(p, g) in both directions."""
    return extended_gm(
        pred, gold, table, MetricConfig(alpha=1.0, beta=1.0, theta=theta)
    )


def _phrase_matrix(phrases: Sequence[str], table: EmbeddingTable) -> np.ndarray:
    return np.stack([phrase_vector(p, table).values for p in phrases])


def average_embedding_score(
    pred: KeyphraseSet, gold: KeyphraseSet, table: EmbeddingTable, theta: float
) -> float:
    """Thresholded cosine between the mean phrase vectors of the two sets."""
    empty = _empty_rule(pred, gold)
    if empty is not None:
        return empty
    pred_mean = _phrase_matrix(sorted(pred), table).mean(axis=0)
    gold_mean = _phrase_matrix(sorted(gold), table).mean(axis=0)
    return _thresholded(cosine(pred_mean, gold_mean), theta)


def _extrema(vectors: np.ndarray) -> np.ndarray:
    # per dimension, the value of largest magnitude; ties resolve positive
    highs = vectors.max(axis=0)
    lows = vectors.min(axis=0)
    return np.where(np.abs(highs) >= np.abs(lows), highs, lows)


def extrema_embedding_score(
    pred: KeyphraseSet, gold: KeyphraseSet, table: EmbeddingTable, theta: float
) -> float:
    """Thresholded cosine between per-dimension extrema of the two sets."""
    empty = _empty_rule(pred, gold)
    if empty is not None:
        return empty
    pred_ext = _extrema(_phrase_matrix(sorted(pred), table))
    gold_ext = _extrema(_phrase_matrix(sorted(gold), table))
    return _thresholded(cosine(pred_ext, gold_ext), theta)


def optimal_matching_score(
    pred: KeyphraseSet, gold: KeyphraseSet, table: EmbeddingTable, theta: float
) -> float:
    """Maximum-weight one-to-one assignment score, normalized by max(p, g).

    The p x g matrix of thresholded cosines is padded square with zeros
    and solved with the Kuhn-Munkres method.
    """
    empty = _empty_rule(pred, gold)
    if empty is not None:
        return empty
    pred_list, gold_list = sorted(pred), sorted(gold)
    p, g = len(pred_list), len(gold_list)
    size = max(p, g)
    weights = np.zeros((size, size))
    pred_vecs = _phrase_matrix(pred_list, table)
    gold_vecs = _phrase_matrix(gold_list, table)
    for i in range(p):
        for j in range(g):
            weights[i, j] = _thresholded(cosine(pred_vecs[i], gold_vecs[j]), theta)
    rows, cols = linear_sum_assignment(weights, maximize=True)
    return float(weights[rows, cols].sum()) / size


def score_sets(
    pred: KeyphraseSet,
    gold: KeyphraseSet,
    table: EmbeddingTable,
    config: MetricConfig,
) -> float:
    """Score one prediction set against one gold set per ``config.variant``."""
    empty = _empty_rule(pred, gold)
    if empty is not None:
        return empty
    if config.variant == "greedy":
        return gm(pred, gold, table, config.theta)
    if config.variant == "symmetric-greedy":
        return symm_gm(pred, gold, table, config.theta)
    if config.variant == "extended":
        return extended_gm(pred, gold, table, config)
    if config.variant == "average":
        return average_embedding_score(pred, gold, table, config.theta)
    if config.variant == "extrema":
        return extrema_embedding_score(pred, gold, table, config.theta)
    if config.variant == "optimal":
        return optimal_matching_score(pred, gold, table, config.theta)
    raise ContractViolation(f"unknown variant {config.variant!r}")


def corpus_eval(
    samples: Sequence[tuple[Sequence[str], Sequence[str], Sequence[str]]],
    table: EmbeddingTable,
    config: MetricConfig,
    ids: Optional[Sequence[str]] = None,
) -> ScoreReport:
    """Score (gold_tags, pred_tags, tokens) triples and macro-average.

    A sample whose prediction decodes to no keyphrases while gold has
    some contributes 0.0; it is never skipped.
    """
    if ids is None:
        ids = [str(i) for i in range(len(samples))]
    if len(ids) != len(samples):
        raise ContractViolation("corpus_eval: ids and samples differ in length")
    per_sample: list[tuple[str, float]] = []
    for sample_id, (gold_tags, pred_tags, tokens) in zip(ids, samples):
        try:
            gold_set = keyphrase_set(tokens, gold_tags)
            pred_set = keyphrase_set(tokens, pred_tags)
            score = score_sets(pred_set, gold_set, table, config)
        except ContractViolation as exc:
            raise ContractViolation(f"sample {sample_id}: {exc}") from exc
        per_sample.append((sample_id, score))
    corpus_score = (
        sum(score for _, score in per_sample) / len(per_sample) if per_sample else 0.0
    )
    return ScoreReport(per_sample=tuple(per_sample), corpus_score=corpus_score)
