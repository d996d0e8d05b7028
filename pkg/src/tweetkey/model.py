"""Joint two-layer bidirectional LSTM tagger, trained from scratch.

The network embeds each token, widens it with a three-token window
(learned boundary vectors at the edges), and runs two stacked Bi-LSTM
layers. Two linear+softmax heads are trained jointly: a binary
keyword-discovery head on the first layer's hidden states and a 5-way
BIOES head on the second layer's. The combined loss is
``gamma * J1 + (1 - gamma) * J2``. Everything is plain numpy with
analytic gradients, so training is deterministic for a fixed seed.

Checkpoints are a single binary file: an 8-byte magic string, a
little-endian uint64 header length, a JSON header (config, vocabulary,
aux symbol table, and a tensor manifest with names and shapes), then
each tensor's raw bytes in manifest order as row-major little-endian
IEEE-754 doubles.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import bioes
from .dataprep import TaggedSample
from .embeddings import EmbeddingTable
from .errors import ContractViolation, MalformedInput, NumericFailure

UNK = "<unk>"
CHECKPOINT_MAGIC = b"TWKPCKP1"

_GATE_KEYS = (
    "w_f", "w_i", "w_o", "w_c",
    "u_f", "u_i", "u_o", "u_c",
    "b_f", "b_i", "b_o", "b_c",
)


@dataclass
class TrainConfig:
    hidden_units: int = 300
    embedding_dim: int = 100
    window: int = 3
    gamma: float = 0.5
    dropout: float = 0.5
    learning_rate: float = 0.0015
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    aux_dim: int = 64

    def __post_init__(self):
        if self.window != 3:
            raise ContractViolation("only window size 3 is supported")
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractViolation("gamma must be in [0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractViolation("dropout must be in [0, 1)")
        if min(self.hidden_units, self.embedding_dim, self.epochs,
               self.batch_size, self.aux_dim) < 1:
            raise ContractViolation("dimensions and counts must be positive")
        if self.learning_rate <= 0:
            raise ContractViolation("learning rate must be positive")


@dataclass
class LstmParams:
    """One direction of one layer: per-gate input, recurrent, and bias terms."""

    w_f: np.ndarray
    w_i: np.ndarray
    w_o: np.ndarray
    w_c: np.ndarray
    u_f: np.ndarray
    u_i: np.ndarray
    u_o: np.ndarray
    u_c: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray


@dataclass
class BiLstmParams:
    fwd: LstmParams
    bwd: LstmParams


@dataclass
class NetworkParams:
    """All trainable tensors plus the vocabularies that index them."""

    vocab: tuple[str, ...]
    aux_vocab: Optional[tuple[str, ...]]
    embeddings: np.ndarray
    sos: np.ndarray
    eos: np.ndarray
    aux_embeddings: Optional[np.ndarray]
    layer1: BiLstmParams
    layer2: BiLstmParams
    head1_w: np.ndarray
    head1_b: np.ndarray
    head2_w: np.ndarray
    head2_b: np.ndarray
    _word_index: dict = field(init=False, repr=False)
    _aux_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self._word_index = {w: i for i, w in enumerate(self.vocab)}
        self._aux_index = (
            {a: i for i, a in enumerate(self.aux_vocab)} if self.aux_vocab else {}
        )

    @property
    def embedding_dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def hidden_units(self) -> int:
        return self.head1_w.shape[0] // 2

    def token_ids(self, tokens: Sequence[str]) -> np.ndarray:
        unk = self._word_index[UNK]
        return np.array(
            [self._word_index.get(t.lower(), unk) for t in tokens], dtype=int
        )

    def aux_ids(self, aux: Optional[Sequence[str]]) -> Optional[np.ndarray]:
        if self.aux_vocab is None:
            if aux is not None:
                raise ContractViolation("model has no aux channel")
            return None
        if aux is None:
            raise ContractViolation("model was trained with an aux channel")
        unk = self._aux_index[UNK]
        return np.array([self._aux_index.get(a, unk) for a in aux], dtype=int)

    def tensors(self) -> dict[str, np.ndarray]:
        """All trainable tensors keyed by canonical name, in a fixed order."""
        out: dict[str, np.ndarray] = {
            "embeddings": self.embeddings,
            "sos": self.sos,
            "eos": self.eos,
        }
        if self.aux_embeddings is not None:
            out["aux_embeddings"] = self.aux_embeddings
        for layer_name, layer in (("layer1", self.layer1), ("layer2", self.layer2)):
            for direction_name, direction in (("fwd", layer.fwd), ("bwd", layer.bwd)):
                for key in _GATE_KEYS:
                    out[f"{layer_name}/{direction_name}/{key}"] = getattr(direction, key)
        out["head1_w"] = self.head1_w
        out["head1_b"] = self.head1_b
        out["head2_w"] = self.head2_w
        out["head2_b"] = self.head2_b
        return out


@dataclass
class DirectionTrace:
    """Activations of one LSTM direction, in processing order."""

    x: np.ndarray
    f: np.ndarray
    i: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c: np.ndarray
    h: np.ndarray


@dataclass
class ForwardTrace:
    token_ids: np.ndarray
    aux_ids: Optional[np.ndarray]
    x1: np.ndarray
    dropout: float
    masks: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]]
    l1_fwd: DirectionTrace
    l1_bwd: DirectionTrace
    h1: np.ndarray
    h1_dropped: np.ndarray
    l2_fwd: DirectionTrace
    l2_bwd: DirectionTrace
    h2: np.ndarray
    h2_dropped: np.ndarray
    logits1: np.ndarray
    probs1: np.ndarray
    logits2: np.ndarray
    probs2: np.ndarray


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericFailure(f"non-finite values in the {what}")


def window_features(
    token_vectors: np.ndarray, sos: np.ndarray, eos: np.ndarray
) -> np.ndarray:
    """Concatenate previous/current/next vectors at each position.

    The boundary slots use the learned start and end vectors, so a
    length-1 sequence becomes the single row [sos, v, eos].
    """
    vectors = np.asarray(token_vectors, dtype=float)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ContractViolation("window_features: empty sequence")
    padded = np.vstack([sos[None, :], vectors, eos[None, :]])
    return np.hstack([padded[:-2], padded[1:-1], padded[2:]])


def lstm_cell(
    x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, params: LstmParams
) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM step: gate activations, cell update, hidden output."""
    f = _sigmoid(x @ params.w_f + h_prev @ params.u_f + params.b_f)
    _check_finite(f, "forget gate")
    i = _sigmoid(x @ params.w_i + h_prev @ params.u_i + params.b_i)
    _check_finite(i, "input gate")
    o = _sigmoid(x @ params.w_o + h_prev @ params.u_o + params.b_o)
    _check_finite(o, "output gate")
    g = np.tanh(x @ params.w_c + h_prev @ params.u_c + params.b_c)
    _check_finite(g, "candidate gate")
    c = f * c_prev + i * g
    _check_finite(c, "cell state")
    h = o * np.tanh(c)
    return h, c


def _run_direction(x: np.ndarray, params: LstmParams) -> DirectionTrace:
    """Run one direction over a sequence, keeping every activation.

    Input projections are batched across time; only the recurrent part
    loops. Equivalent to chaining lstm_cell.
    """
    n = x.shape[0]
    h_units = params.b_f.shape[0]
    pre_f = x @ params.w_f + params.b_f
    pre_i = x @ params.w_i + params.b_i
    pre_o = x @ params.w_o + params.b_o
    pre_g = x @ params.w_c + params.b_c
    f = np.empty((n, h_units))
    i = np.empty((n, h_units))
    o = np.empty((n, h_units))
    g = np.empty((n, h_units))
    c = np.empty((n, h_units))
    h = np.empty((n, h_units))
    h_prev = np.zeros(h_units)
    c_prev = np.zeros(h_units)
    for t in range(n):
        f[t] = _sigmoid(pre_f[t] + h_prev @ params.u_f)
        i[t] = _sigmoid(pre_i[t] + h_prev @ params.u_i)
        o[t] = _sigmoid(pre_o[t] + h_prev @ params.u_o)
        g[t] = np.tanh(pre_g[t] + h_prev @ params.u_c)
        c[t] = f[t] * c_prev + i[t] * g[t]
        h[t] = o[t] * np.tanh(c[t])
        h_prev = h[t]
        c_prev = c[t]
    for arr, name in ((f, "forget gate"), (i, "input gate"), (o, "output gate"),
                      (g, "candidate gate"), (c, "cell state")):
        _check_finite(arr, name)
    return DirectionTrace(x=x, f=f, i=i, o=o, g=g, c=c, h=h)


def forward(
    params: NetworkParams,
    token_ids: Sequence[int],
    aux_ids: Optional[Sequence[int]] = None,
    mode: str = "eval",
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    masks: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None,
) -> ForwardTrace:
    """Run the full network over one vocab-indexed sequence.

    In train mode, inverted dropout is applied to the first layer's
    input, the second layer's input, and the second layer's output; the
    drawn masks are recorded on the trace so the backward pass (or a
    finite-difference replay via ``masks=``) sees the identical network.
    Eval mode is deterministic.
    """
    if mode not in ("train", "eval"):
        raise ContractViolation(f"unknown mode {mode!r}")
    ids = np.asarray(token_ids, dtype=int)
    if ids.ndim != 1 or ids.size == 0:
        raise ContractViolation("forward: empty token sequence")
    if ids.min() < 0 or ids.max() >= len(params.vocab):
        raise ContractViolation("forward: token index out of vocabulary range")
    x1 = window_features(params.embeddings[ids], params.sos, params.eos)
    aux_arr: Optional[np.ndarray] = None
    if params.aux_embeddings is not None:
        if aux_ids is None:
            raise ContractViolation("forward: model expects aux symbol ids")
        aux_arr = np.asarray(aux_ids, dtype=int)
        if aux_arr.shape != ids.shape:
            raise ContractViolation("forward: aux ids do not align with tokens")
        if aux_arr.min() < 0 or aux_arr.max() >= params.aux_embeddings.shape[0]:
            raise ContractViolation("forward: aux index out of range")
        x1 = np.hstack([x1, params.aux_embeddings[aux_arr]])
    elif aux_ids is not None:
        raise ContractViolation("forward: model has no aux channel")

    n = ids.size
    two_h = 2 * params.hidden_units
    if mode == "train":
        keep = 1.0 - dropout
        if masks is None:
            if dropout > 0.0:
                if rng is None:
                    raise ContractViolation("forward: train mode with dropout needs an rng")
                mask_in = (rng.random(x1.shape) >= dropout).astype(float)
                mask_mid = (rng.random((n, two_h)) >= dropout).astype(float)
                mask_out = (rng.random((n, two_h)) >= dropout).astype(float)
            else:
                mask_in = np.ones_like(x1)
                mask_mid = np.ones((n, two_h))
                mask_out = np.ones((n, two_h))
            masks = (mask_in, mask_mid, mask_out)
        x1_dropped = x1 * masks[0] / keep
    else:
        masks = None
        keep = 1.0
        x1_dropped = x1

    l1_fwd = _run_direction(x1_dropped, params.layer1.fwd)
    l1_bwd = _run_direction(x1_dropped[::-1], params.layer1.bwd)
    h1 = np.hstack([l1_fwd.h, l1_bwd.h[::-1]])
    h1_dropped = h1 * masks[1] / keep if masks is not None else h1
    l2_fwd = _run_direction(h1_dropped, params.layer2.fwd)
    l2_bwd = _run_direction(h1_dropped[::-1], params.layer2.bwd)
    h2 = np.hstack([l2_fwd.h, l2_bwd.h[::-1]])
    h2_dropped = h2 * masks[2] / keep if masks is not None else h2

    logits1 = h1 @ params.head1_w + params.head1_b
    logits2 = h2_dropped @ params.head2_w + params.head2_b
    return ForwardTrace(
        token_ids=ids,
        aux_ids=aux_arr,
        x1=x1,
        dropout=dropout if mode == "train" else 0.0,
        masks=masks,
        l1_fwd=l1_fwd,
        l1_bwd=l1_bwd,
        h1=h1,
        h1_dropped=h1_dropped,
        l2_fwd=l2_fwd,
        l2_bwd=l2_bwd,
        h2=h2,
        h2_dropped=h2_dropped,
        logits1=logits1,
        probs1=_softmax(logits1),
        logits2=logits2,
        probs2=_softmax(logits2),
    )


def keyword_labels_from_tags(tags: Sequence[str]) -> list[int]:
    """Binary keyword labels: 1 for any tag in a keyphrase, 0 for O."""
    return [0 if tag == "O" else 1 for tag in tags]


def bioes_label_ids(tags: Sequence[str]) -> list[int]:
    """Tags to indices in the canonical order B, I, O, E, S."""
    try:
        return [bioes.TAG_INDEX[t] for t in tags]
    except KeyError as exc:
        raise ContractViolation(f"unknown tag {exc.args[0]!r}") from None


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    # mean of logsumexp(logits) - logits[label], numerically stable
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(labels)), labels]
    return float((logsumexp - picked).mean())


def head_losses(
    trace: ForwardTrace,
    keyword_labels: Sequence[int],
    bioes_labels: Sequence[int],
) -> tuple[float, float]:
    """Mean per-token cross-entropies of the keyword and BIOES heads."""
    n = trace.token_ids.size
    kw = np.asarray(keyword_labels, dtype=int)
    bi = np.asarray(bioes_labels, dtype=int)
    if kw.shape != (n,) or bi.shape != (n,):
        raise ContractViolation("labels do not align with the token sequence")
    return (
        _cross_entropy(trace.logits1, kw),
        _cross_entropy(trace.logits2, bi),
    )


def joint_loss(
    trace: ForwardTrace,
    keyword_labels: Sequence[int],
    bioes_labels: Sequence[int],
    gamma: float,
) -> float:
    """gamma-weighted combination of the two heads' cross-entropies."""
    if not 0.0 <= gamma <= 1.0:
        raise ContractViolation("gamma must be in [0, 1]")
    j1, j2 = head_losses(trace, keyword_labels, bioes_labels)
    return gamma * j1 + (1.0 - gamma) * j2


def _backward_direction(
    tr: DirectionTrace,
    params: LstmParams,
    dh_ext: np.ndarray,
    grads: dict[str, np.ndarray],
    prefix: str,
) -> np.ndarray:
    """Backprop one direction; returns gradient w.r.t. its input sequence."""
    n, h_units = tr.h.shape
    da_f = np.empty((n, h_units))
    da_i = np.empty((n, h_units))
    da_o = np.empty((n, h_units))
    da_g = np.empty((n, h_units))
    dh_rec = np.zeros(h_units)
    dc = np.zeros(h_units)
    for t in range(n - 1, -1, -1):
        dh_t = dh_ext[t] + dh_rec
        tanh_c = np.tanh(tr.c[t])
        do = dh_t * tr.o[t] * (1.0 - tr.o[t]) * tanh_c
        dc_total = dc + dh_t * tr.o[t] * (1.0 - tanh_c * tanh_c)
        c_prev = tr.c[t - 1] if t > 0 else 0.0
        da_f[t] = dc_total * c_prev * tr.f[t] * (1.0 - tr.f[t])
        da_i[t] = dc_total * tr.g[t] * tr.i[t] * (1.0 - tr.i[t])
        da_g[t] = dc_total * tr.i[t] * (1.0 - tr.g[t] * tr.g[t])
        da_o[t] = do
        dc = dc_total * tr.f[t]
        dh_rec = (
            da_f[t] @ params.u_f.T
            + da_i[t] @ params.u_i.T
            + da_o[t] @ params.u_o.T
            + da_g[t] @ params.u_c.T
        )
    h_prev = np.vstack([np.zeros((1, h_units)), tr.h[:-1]])
    grads[f"{prefix}/w_f"] += tr.x.T @ da_f
    grads[f"{prefix}/w_i"] += tr.x.T @ da_i
    grads[f"{prefix}/w_o"] += tr.x.T @ da_o
    grads[f"{prefix}/w_c"] += tr.x.T @ da_g
    grads[f"{prefix}/u_f"] += h_prev.T @ da_f
    grads[f"{prefix}/u_i"] += h_prev.T @ da_i
    grads[f"{prefix}/u_o"] += h_prev.T @ da_o
    grads[f"{prefix}/u_c"] += h_prev.T @ da_g
    grads[f"{prefix}/b_f"] += da_f.sum(axis=0)
    grads[f"{prefix}/b_i"] += da_i.sum(axis=0)
    grads[f"{prefix}/b_o"] += da_o.sum(axis=0)
    grads[f"{prefix}/b_c"] += da_g.sum(axis=0)
    return (
        da_f @ params.w_f.T
        + da_i @ params.w_i.T
        + da_o @ params.w_o.T
        + da_g @ params.w_c.T
    )


def backward(
    trace: ForwardTrace,
    keyword_labels: Sequence[int],
    bioes_labels: Sequence[int],
    params: NetworkParams,
    gamma: float,
    out: Optional[dict[str, np.ndarray]] = None,
) -> dict[str, np.ndarray]:
    """Exact gradient of joint_loss for every trainable tensor.

    Accumulates into ``out`` when given (for mini-batch sums), else
    into fresh zero arrays keyed like ``params.tensors()``.
    """
    tensors = params.tensors()
    if out is None:
        grads = {name: np.zeros_like(arr) for name, arr in tensors.items()}
    else:
        if set(out) != set(tensors):
            raise ContractViolation("backward: accumulator does not match tensors")
        grads = out
    n = trace.token_ids.size
    kw = np.asarray(keyword_labels, dtype=int)
    bi = np.asarray(bioes_labels, dtype=int)
    if kw.shape != (n,) or bi.shape != (n,):
        raise ContractViolation("labels do not align with the token sequence")

    d2 = trace.probs2.copy()
    d2[np.arange(n), bi] -= 1.0
    d2 *= (1.0 - gamma) / n
    d1 = trace.probs1.copy()
    d1[np.arange(n), kw] -= 1.0
    d1 *= gamma / n

    grads["head2_w"] += trace.h2_dropped.T @ d2
    grads["head2_b"] += d2.sum(axis=0)
    grads["head1_w"] += trace.h1.T @ d1
    grads["head1_b"] += d1.sum(axis=0)

    h_units = params.hidden_units
    keep = 1.0 - trace.dropout
    dh2 = d2 @ params.head2_w.T
    if trace.masks is not None:
        dh2 = dh2 * trace.masks[2] / keep
    dx2_f = _backward_direction(
        trace.l2_fwd, params.layer2.fwd, dh2[:, :h_units], grads, "layer2/fwd"
    )
    dx2_b = _backward_direction(
        trace.l2_bwd, params.layer2.bwd, dh2[::-1, h_units:], grads, "layer2/bwd"
    )
    dh1 = dx2_f + dx2_b[::-1]
    if trace.masks is not None:
        dh1 = dh1 * trace.masks[1] / keep
    dh1 = dh1 + d1 @ params.head1_w.T

    dx1_f = _backward_direction(
        trace.l1_fwd, params.layer1.fwd, dh1[:, :h_units], grads, "layer1/fwd"
    )
    dx1_b = _backward_direction(
        trace.l1_bwd, params.layer1.bwd, dh1[::-1, h_units:], grads, "layer1/bwd"
    )
    dx1 = dx1_f + dx1_b[::-1]
    if trace.masks is not None:
        dx1 = dx1 * trace.masks[0] / keep

    e = params.embedding_dim
    windowed = dx1[:, : 3 * e]
    dvecs = windowed[:, e : 2 * e].copy()
    dvecs[:-1] += windowed[1:, :e]
    dvecs[1:] += windowed[:-1, 2 * e :]
    grads["sos"] += windowed[0, :e]
    grads["eos"] += windowed[-1, 2 * e :]
    np.add.at(grads["embeddings"], trace.token_ids, dvecs)
    if params.aux_embeddings is not None:
        np.add.at(grads["aux_embeddings"], trace.aux_ids, dx1[:, 3 * e :])
    return grads


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def _init_lstm(rng: np.random.Generator, in_dim: int, h_units: int) -> LstmParams:
    # forget-gate bias starts at 1.0 to keep early memory open
    return LstmParams(
        w_f=_glorot(rng, in_dim, h_units),
        w_i=_glorot(rng, in_dim, h_units),
        w_o=_glorot(rng, in_dim, h_units),
        w_c=_glorot(rng, in_dim, h_units),
        u_f=_glorot(rng, h_units, h_units),
        u_i=_glorot(rng, h_units, h_units),
        u_o=_glorot(rng, h_units, h_units),
        u_c=_glorot(rng, h_units, h_units),
        b_f=np.ones(h_units),
        b_i=np.zeros(h_units),
        b_o=np.zeros(h_units),
        b_c=np.zeros(h_units),
    )


def init_params(
    corpus: Sequence[TaggedSample],
    config: TrainConfig,
    pretrained: Optional[EmbeddingTable] = None,
    rng: Optional[np.random.Generator] = None,
) -> NetworkParams:
    """Build the vocabulary from the corpus and initialize all tensors.

    Words found in ``pretrained`` start from their stored vectors; all
    other rows (and the boundary vectors) get small uniform noise.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if not corpus:
        raise ContractViolation("init_params: empty corpus")
    if pretrained is not None and pretrained.dim != config.embedding_dim:
        raise ContractViolation(
            f"pretrained dimension {pretrained.dim} != configured "
            f"{config.embedding_dim}"
        )
    words = sorted({t.lower() for s in corpus for t in s.tokens})
    vocab = (UNK,) + tuple(words)
    with_aux = [s.aux is not None for s in corpus]
    if any(with_aux) and not all(with_aux):
        raise ContractViolation("corpus mixes samples with and without aux symbols")
    aux_vocab: Optional[tuple[str, ...]] = None
    if all(with_aux) and corpus:
        symbols = sorted({a for s in corpus for a in s.aux})
        aux_vocab = (UNK,) + tuple(symbols)

    e = config.embedding_dim
    embeddings = rng.uniform(-0.1, 0.1, size=(len(vocab), e))
    if pretrained is not None:
        for idx, word in enumerate(vocab):
            vec = pretrained.get(word)
            if vec is not None:
                embeddings[idx] = vec
    sos = rng.uniform(-0.1, 0.1, size=e)
    eos = rng.uniform(-0.1, 0.1, size=e)
    aux_embeddings = (
        rng.uniform(-0.1, 0.1, size=(len(aux_vocab), config.aux_dim))
        if aux_vocab is not None
        else None
    )
    in1 = 3 * e + (config.aux_dim if aux_vocab is not None else 0)
    h_units = config.hidden_units
    return NetworkParams(
        vocab=vocab,
        aux_vocab=aux_vocab,
        embeddings=embeddings,
        sos=sos,
        eos=eos,
        aux_embeddings=aux_embeddings,
        layer1=BiLstmParams(
            fwd=_init_lstm(rng, in1, h_units), bwd=_init_lstm(rng, in1, h_units)
        ),
        layer2=BiLstmParams(
            fwd=_init_lstm(rng, 2 * h_units, h_units),
            bwd=_init_lstm(rng, 2 * h_units, h_units),
        ),
        head1_w=_glorot(rng, 2 * h_units, 2),
        head1_b=np.zeros(2),
        head2_w=_glorot(rng, 2 * h_units, len(bioes.TAGS)),
        head2_b=np.zeros(len(bioes.TAGS)),
    )


class _Nadam:
    """Adam moments with Nesterov-style lookahead (beta1=0.9, beta2=0.999)."""

    def __init__(self, tensors: dict[str, np.ndarray], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in tensors.items()}

    def step(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias1_next = 1.0 - b1 ** (self.t + 1)
        bias2 = 1.0 - b2 ** self.t
        for name, param in tensors.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = b1 * m / bias1_next + (1.0 - b1) * g / bias1
            v_hat = v / bias2
            param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class EpochStats:
    loss: float
    keyword_loss: float
    bioes_loss: float


def train(
    corpus: Iterable[TaggedSample],
    config: TrainConfig,
    pretrained: Optional[EmbeddingTable] = None,
) -> tuple[NetworkParams, list[EpochStats]]:
    """Mini-batch Nadam training; bit-reproducible for a fixed seed.

    Returns the trained parameters and per-epoch mean losses (joint and
    per head). Aborts with NumericFailure, naming the epoch and batch,
    if the loss ever goes non-finite.
    """
    samples = list(corpus)
    if not samples:
        raise ContractViolation("train: empty corpus")
    rng = np.random.default_rng(config.seed)
    params = init_params(samples, config, pretrained, rng)
    prepared = [
        (
            params.token_ids(s.tokens),
            params.aux_ids(s.aux) if params.aux_vocab is not None else None,
            np.asarray(keyword_labels_from_tags(s.tags), dtype=int),
            np.asarray(bioes_label_ids(s.tags), dtype=int),
        )
        for s in samples
    ]
    tensors = params.tensors()
    optimizer = _Nadam(tensors, config.learning_rate)
    order = np.arange(len(samples))
    history: list[EpochStats] = []
    for epoch in range(config.epochs):
        rng.shuffle(order)
        sum_j = sum_j1 = sum_j2 = 0.0
        for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
            batch = order[start : start + config.batch_size]
            grads = {name: np.zeros_like(arr) for name, arr in tensors.items()}
            for idx in batch:
                token_ids, aux_ids, kw, bi = prepared[idx]
                trace = forward(
                    params,
                    token_ids,
                    aux_ids,
                    mode="train",
                    dropout=config.dropout,
                    rng=rng,
                )
                j1, j2 = head_losses(trace, kw, bi)
                loss = config.gamma * j1 + (1.0 - config.gamma) * j2
                if not math.isfinite(loss):
                    raise NumericFailure(
                        f"non-finite loss at epoch {epoch}, batch {batch_no}"
                    )
                sum_j += loss
                sum_j1 += j1
                sum_j2 += j2
                backward(trace, kw, bi, params, config.gamma, out=grads)
            scale = 1.0 / len(batch)
            for name in grads:
                grads[name] *= scale
            optimizer.step(tensors, grads)
        count = len(samples)
        history.append(
            EpochStats(
                loss=sum_j / count,
                keyword_loss=sum_j1 / count,
                bioes_loss=sum_j2 / count,
            )
        )
    return params, history


def predict_tags(
    params: NetworkParams,
    tokens: Sequence[str],
    aux: Optional[Sequence[str]] = None,
) -> list[str]:
    """Tag a token sequence; ties pick the earlier label in B, I, O, E, S."""
    trace = forward(params, params.token_ids(tokens), params.aux_ids(aux))
    best = np.argmax(trace.probs2, axis=1)
    return [bioes.TAGS[i] for i in best]


def checkpoint_bytes(params: NetworkParams, config: TrainConfig) -> bytes:
    """Serialize params and config to the documented binary layout."""
    tensors = params.tensors()
    header = {
        "format": "tweetkey-checkpoint",
        "version": 1,
        "config": asdict(config),
        "vocab": list(params.vocab),
        "aux_vocab": list(params.aux_vocab) if params.aux_vocab else None,
        "tensors": [
            {"name": name, "shape": list(arr.shape)} for name, arr in tensors.items()
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<Q", len(blob)), blob]
    for arr in tensors.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def params_from_checkpoint(data: bytes) -> tuple[NetworkParams, TrainConfig]:
    """Inverse of checkpoint_bytes; raises MalformedInput on a bad container."""
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise MalformedInput("not a tweetkey checkpoint (bad magic)")
    offset = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    try:
        header = json.loads(data[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise MalformedInput("checkpoint header is not valid JSON") from None
    offset += header_len
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(data):
            raise MalformedInput("checkpoint truncated")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        tensors[entry["name"]] = arr.reshape(shape).astype(float)
        offset += nbytes
    if offset != len(data):
        raise MalformedInput("checkpoint has trailing bytes")
    config = TrainConfig(**header["config"])

    def lstm(prefix: str) -> LstmParams:
        return LstmParams(**{k: tensors[f"{prefix}/{k}"] for k in _GATE_KEYS})

    aux_vocab = header["aux_vocab"]
    params = NetworkParams(
        vocab=tuple(header["vocab"]),
        aux_vocab=tuple(aux_vocab) if aux_vocab else None,
        embeddings=tensors["embeddings"],
        sos=tensors["sos"],
        eos=tensors["eos"],
        aux_embeddings=tensors.get("aux_embeddings"),
        layer1=BiLstmParams(fwd=lstm("layer1/fwd"), bwd=lstm("layer1/bwd")),
        layer2=BiLstmParams(fwd=lstm("layer2/fwd"), bwd=lstm("layer2/bwd")),
        head1_w=tensors["head1_w"],
        head1_b=tensors["head1_b"],
        head2_w=tensors["head2_w"],
        head2_b=tensors["head2_b"],
    )
    return params, config


def save_checkpoint(params: NetworkParams, config: TrainConfig, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params, config))


def load_checkpoint(path) -> tuple[NetworkParams, TrainConfig]:
    with open(path, "rb") as fh:
        return params_from_checkpoint(fh.read())
