"""Keyphrase extraction and evaluation for short noisy texts."""

from .bioes import TAGS, decode_tags, encode_tags, validate
from .embeddings import EmbeddingTable, PhraseVector, cosine, load_embeddings, phrase_vector
from .errors import ContractViolation, MalformedInput, NumericFailure
from .metrics import (
    MetricConfig,
    PrfReport,
    ScoreReport,
    average_embedding_score,
    best_match,
    corpus_eval,
    exact_match_prf,
    extended_gm,
    extrema_embedding_score,
    gm,
    gm_prime,
    keyphrase_set,
    optimal_matching_score,
    set_f1,
    symm_gm,
)
from .model import NetworkParams, TrainConfig, predict_tags, train

__version__ = "0.1.0"
