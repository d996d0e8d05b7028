"""Batch command line: prepare, segment, train, tag, eval-exact, eval-embed, report.

Exit codes: 0 success, 1 contract violation (including missing input
files), 2 malformed input or bad usage. Diagnostics go to stderr;
results go to the named output file or stdout. A flat ``key = value``
config file can supply any option value; explicit flags win.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter
from typing import Iterable, Optional, Sequence

from . import bioes, dataprep, metrics, model
from .dataprep import TaggedSample
from .embeddings import load_embeddings
from .errors import ContractViolation, MalformedInput, NumericFailure

_TRAIN_DEFAULTS = {
    "hidden_units": 300,
    "embedding_dim": 100,
    "gamma": 0.5,
    "dropout": 0.5,
    "learning_rate": 0.0015,
    "epochs": 10,
    "batch_size": 32,
    "seed": 0,
    "aux_dim": 64,
}

_METRIC_DEFAULTS = {
    "alpha": 0.7,
    "beta": 0.7,
    "theta": 0.4,
    "variant": "extended",
}


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise MalformedInput(f"config line {lineno}: expected key = value")
            values[key.strip()] = value.strip()
    return values


def _resolve(args, spec: dict[str, type], defaults: dict) -> None:
    """Fill unset options from the config file, then from defaults."""
    cfg = _read_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = set(cfg) - set(spec)
    if unknown:
        raise MalformedInput(f"unknown config keys: {', '.join(sorted(unknown))}")
    for dest, conv in spec.items():
        if getattr(args, dest, None) is not None:
            continue
        if dest in cfg:
            try:
                setattr(args, dest, conv(cfg[dest]))
            except ValueError:
                raise MalformedInput(
                    f"config key {dest}: cannot parse {cfg[dest]!r}"
                ) from None
        elif dest in defaults:
            setattr(args, dest, defaults[dest])


def _require_file(path: Optional[str], what: str) -> str:
    if not path:
        raise ContractViolation(f"missing required {what} path")
    if not os.path.isfile(path):
        raise ContractViolation(f"{what} file does not exist: {path}")
    return path


def _read_samples(path: str, require_tags: bool = True) -> list[TaggedSample]:
    samples: list[TaggedSample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                raise MalformedInput(f"{path}:{lineno}: invalid JSON") from None
            if not isinstance(record, dict):
                raise MalformedInput(f"{path}:{lineno}: expected a JSON object")
            sample_id = record.get("id")
            tokens = record.get("tokens")
            if not isinstance(sample_id, str) or not sample_id:
                raise MalformedInput(f"{path}:{lineno}: missing non-empty 'id'")
            if not isinstance(tokens, list) or not all(
                isinstance(t, str) for t in tokens
            ):
                raise MalformedInput(f"{path}:{lineno}: 'tokens' must be strings")
            tags = record.get("tags")
            if tags is None and not require_tags:
                tags = ["O"] * len(tokens)
            if (
                not isinstance(tags, list)
                or len(tags) != len(tokens)
                or not all(t in bioes.TAG_INDEX for t in tags)
            ):
                raise MalformedInput(
                    f"{path}:{lineno}: 'tags' must be BIOES characters aligned "
                    f"with tokens"
                )
            aux = record.get("aux")
            if aux is not None and (
                not isinstance(aux, list)
                or len(aux) != len(tokens)
                or not all(isinstance(a, str) for a in aux)
            ):
                raise MalformedInput(
                    f"{path}:{lineno}: 'aux' must be strings aligned with tokens"
                )
            samples.append(
                TaggedSample(
                    id=sample_id,
                    tokens=tuple(tokens),
                    tags=tuple(tags),
                    aux=tuple(aux) if aux is not None else None,
                )
            )
    return samples


def _sample_record(sample: TaggedSample) -> dict:
    record = {
        "id": sample.id,
        "tokens": list(sample.tokens),
        "tags": list(sample.tags),
    }
    if sample.aux is not None:
        record["aux"] = list(sample.aux)
    return record


def _write_jsonl(path: str, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def _emit(text: str, output: Optional[str]) -> None:
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _join_by_id(
    gold: list[TaggedSample], pred: list[TaggedSample], check_tokens: bool
) -> list[tuple[TaggedSample, TaggedSample]]:
    by_id = {p.id: p for p in pred}
    pairs = []
    for g in gold:
        p = by_id.get(g.id)
        if p is None:
            raise ContractViolation(f"prediction file has no record for id {g.id!r}")
        if check_tokens and p.tokens != g.tokens:
            raise ContractViolation(f"sample {g.id!r}: tokens differ between files")
        if len(p.tags) != len(g.tags):
            raise ContractViolation(f"sample {g.id!r}: tag lengths differ")
        pairs.append((g, p))
    return pairs


def report_topk(samples: Sequence[TaggedSample], k: int) -> list[tuple[str, int]]:
    """Most frequent decoded keyphrases: count descending, ties alphabetical."""
    if k < 1:
        raise ContractViolation("report_topk: k must be >= 1")
    counts: Counter[str] = Counter()
    for sample in samples:
        for start, end in bioes.decode_tags(sample.tags):
            counts[metrics.normalize_phrase(" ".join(sample.tokens[start:end]))] += 1
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:k]


def _cmd_prepare(args, parser) -> int:
    _resolve(args, {}, {})
    tweets_path = _require_file(args.input, "input tweets")
    lexicon_path = _require_file(args.lexicon, "lexicon")
    freq_path = _require_file(args.freq_dict, "frequency dict")
    if not args.output:
        parser.error("prepare requires --output")
    with open(lexicon_path, encoding="utf-8") as fh:
        lexicon = dataprep.load_lexicon(fh)
    with open(freq_path, encoding="utf-8") as fh:
        freq = dataprep.load_frequency_dict(fh)
    with open(tweets_path, encoding="utf-8") as fh:
        tweets = dataprep.read_tweets(fh)
    annotated = [dataprep.annotate(t, lexicon, freq) for t in tweets]
    kept = dataprep.filter_corpus(annotated)
    _write_jsonl(args.output, (_sample_record(s) for s in kept))
    dropped = len(annotated) - len(kept)
    print(
        f"prepare: kept {len(kept)} samples, filtered {dropped} outside "
        f"{dataprep.MIN_TOKENS}-{dataprep.MAX_TOKENS} tokens",
        file=sys.stderr,
    )
    return 0


def _cmd_segment(args, parser) -> int:
    _resolve(args, {}, {})
    freq_path = _require_file(args.freq_dict, "frequency dict")
    with open(freq_path, encoding="utf-8") as fh:
        freq = dataprep.load_frequency_dict(fh)
    if args.input:
        with open(_require_file(args.input, "input"), encoding="utf-8") as fh:
            lines = fh.readlines()
    else:
        lines = sys.stdin.readlines()
    out_lines = []
    for raw in lines:
        body = raw.strip().lstrip("#").lower()
        if not body:
            continue
        out_lines.append(" ".join(dataprep.segment_hashtag(body, freq)))
    _emit("".join(line + "\n" for line in out_lines), args.output)
    return 0


_TRAIN_SPEC = {
    "hidden_units": int,
    "embedding_dim": int,
    "gamma": float,
    "dropout": float,
    "learning_rate": float,
    "epochs": int,
    "batch_size": int,
    "seed": int,
    "aux_dim": int,
    "corpus": str,
    "embeddings": str,
    "checkpoint": str,
}


def _cmd_train(args, parser) -> int:
    _resolve(args, _TRAIN_SPEC, _TRAIN_DEFAULTS)
    corpus_path = _require_file(args.corpus, "corpus")
    if not args.checkpoint:
        parser.error("train requires --checkpoint")
    pretrained = None
    if args.embeddings:
        with open(_require_file(args.embeddings, "embeddings"), encoding="utf-8") as fh:
            pretrained = load_embeddings(fh)
    config = model.TrainConfig(
        hidden_units=args.hidden_units,
        embedding_dim=args.embedding_dim,
        gamma=args.gamma,
        dropout=args.dropout,
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        aux_dim=args.aux_dim,
    )
    samples = _read_samples(corpus_path)
    params, history = model.train(samples, config, pretrained)
    model.save_checkpoint(params, config, args.checkpoint)
    for epoch, stats in enumerate(history):
        print(
            f"epoch {epoch}: loss {stats.loss:.6f} "
            f"(keyword {stats.keyword_loss:.6f}, bioes {stats.bioes_loss:.6f})",
            file=sys.stderr,
        )
    print(f"train: wrote checkpoint {args.checkpoint}", file=sys.stderr)
    return 0


def _cmd_tag(args, parser) -> int:
    _resolve(args, {}, {})
    checkpoint_path = _require_file(args.checkpoint, "checkpoint")
    input_path = _require_file(args.input, "input")
    if not args.output:
        parser.error("tag requires --output")
    params, _ = model.load_checkpoint(checkpoint_path)
    samples = _read_samples(input_path, require_tags=False)
    records = []
    for sample in samples:
        tags = model.predict_tags(params, sample.tokens, sample.aux)
        records.append(
            _sample_record(
                TaggedSample(
                    id=sample.id, tokens=sample.tokens, tags=tuple(tags),
                    aux=sample.aux,
                )
            )
        )
    _write_jsonl(args.output, records)
    print(f"tag: wrote {len(records)} records to {args.output}", file=sys.stderr)
    return 0


def _cmd_eval_exact(args, parser) -> int:
    _resolve(args, {}, {})
    gold = _read_samples(_require_file(args.gold, "gold"))
    pred = _read_samples(_require_file(args.pred, "predictions"))
    pairs = _join_by_id(gold, pred, check_tokens=False)
    gold_tags = [g.tags for g, _ in pairs]
    pred_tags = [p.tags for _, p in pairs]
    micro = metrics.exact_match_prf(gold_tags, pred_tags)
    macro_p, macro_r, macro_f1 = metrics.exact_match_macro(gold_tags, pred_tags)
    report = {
        "samples": len(pairs),
        "micro": micro.as_dict(),
        "macro": {"precision": macro_p, "recall": macro_r, "f1": macro_f1},
    }
    _emit(json.dumps(report, indent=2, sort_keys=True) + "\n", args.output)
    return 0


def _cmd_eval_embed(args, parser) -> int:
    _resolve(args, {"alpha": float, "beta": float, "theta": float, "variant": str},
             _METRIC_DEFAULTS)
    gold = _read_samples(_require_file(args.gold, "gold"))
    pred = _read_samples(_require_file(args.pred, "predictions"))
    with open(_require_file(args.embeddings, "embeddings"), encoding="utf-8") as fh:
        table = load_embeddings(fh)
    config = metrics.MetricConfig(
        alpha=args.alpha, beta=args.beta, theta=args.theta, variant=args.variant
    )
    pairs = _join_by_id(gold, pred, check_tokens=True)
    triples = [(g.tags, p.tags, g.tokens) for g, p in pairs]
    ids = [g.id for g, _ in pairs]
    score = metrics.corpus_eval(triples, table, config, ids=ids)
    report = {
        "variant": config.variant,
        "alpha": config.alpha,
        "beta": config.beta,
        "theta": config.theta,
        "embedding_dim": table.dim,
        "samples": len(pairs),
        **score.as_dict(),
    }
    _emit(json.dumps(report, indent=2, sort_keys=True) + "\n", args.output)
    return 0


def _cmd_report(args, parser) -> int:
    _resolve(args, {"top": int}, {"top": 100})
    samples = _read_samples(_require_file(args.input, "input"))
    lines = [f"{phrase}\t{count}" for phrase, count in report_topk(samples, args.top)]
    _emit("".join(line + "\n" for line in lines), args.output)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tweetkey",
        description="Keyphrase extraction and evaluation for short noisy texts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--output", help="output path (default: stdout)")

    p = sub.add_parser("prepare", help="annotate tweets into BIOES samples")
    p.add_argument("--input", help="tweets JSONL (id, text, optional aux_tags)")
    p.add_argument("--lexicon", help="crisis lexicon, one phrase per line")
    p.add_argument("--freq-dict", dest="freq_dict", help="word frequency dictionary")
    add_common(p)
    p.set_defaults(func=_cmd_prepare)

    p = sub.add_parser("segment", help="segment hashtag bodies into words")
    p.add_argument("--freq-dict", dest="freq_dict", help="word frequency dictionary")
    p.add_argument("--input", help="hashtag bodies, one per line (default: stdin)")
    add_common(p)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("train", help="train the tagger")
    p.add_argument("--corpus", help="training samples JSONL")
    p.add_argument("--checkpoint", help="path to write the model checkpoint")
    p.add_argument("--embeddings", help="pretrained word vectors (optional)")
    p.add_argument("--hidden-units", dest="hidden_units", type=int)
    p.add_argument("--embedding-dim", dest="embedding_dim", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--aux-dim", dest="aux_dim", type=int)
    p.add_argument("--config", help="flat key = value config file")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("tag", help="tag samples with a trained checkpoint")
    p.add_argument("--checkpoint", help="model checkpoint")
    p.add_argument("--input", help="samples JSONL (id, tokens)")
    add_common(p)
    p.set_defaults(func=_cmd_tag)

    p = sub.add_parser("eval-exact", help="exact-match span P/R/F1")
    p.add_argument("--gold", help="gold samples JSONL")
    p.add_argument("--pred", help="predicted samples JSONL")
    add_common(p)
    p.set_defaults(func=_cmd_eval_exact)

    p = sub.add_parser("eval-embed", help="embedding-based set scores")
    p.add_argument("--gold", help="gold samples JSONL")
    p.add_argument("--pred", help="predicted samples JSONL")
    p.add_argument("--embeddings", help="word vectors file")
    p.add_argument("--variant", choices=metrics.VARIANTS)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--theta", type=float)
    add_common(p)
    p.set_defaults(func=_cmd_eval_embed)

    p = sub.add_parser("report", help="top-k most frequent keyphrases")
    p.add_argument("--input", help="samples JSONL")
    p.add_argument("--top", type=int, help="how many phrases to list (default 100)")
    add_common(p)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except (ContractViolation, NumericFailure) as exc:
        print(f"tweetkey: error: {exc}", file=sys.stderr)
        return 1
    except MalformedInput as exc:
        print(f"tweetkey: malformed input: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"tweetkey: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
