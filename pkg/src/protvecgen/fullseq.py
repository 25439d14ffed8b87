"""Whole-sequence Bi-LSTM baseline.

Same kernel stack as the segment model, but the token stream is the
entire (cap-truncated) sequence, so there is no segment averaging:
one Bi-LSTM pass yields the K posteriors directly.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tokenizer
from .container import read_container, write_container
from .kernel import AdamOptimizer, SequenceClassifier, bce_loss
from .protsvg import SvgHyperparams, _net_from_arrays

MODEL_MAGIC = "FSEQ0001"
DEFAULT_MAX_LENGTH = 1500


class FullSeqError(ValueError):
    pass


@dataclass(frozen=True)
class FullSeqConfig:
    max_length: int = DEFAULT_MAX_LENGTH   # residues; longer tails dropped
    hyperparams: SvgHyperparams = SvgHyperparams()

    def __post_init__(self):
        if self.max_length < 4:
            raise FullSeqError(f"length cap {self.max_length} below 4")


@dataclass
class FullSeqModel:
    config: FullSeqConfig
    vocab: tokenizer.NmerVocabulary
    net: SequenceClassifier
    go_terms: tuple
    go_fingerprint: str


def _tokens_of(record, vocab, cap):
    return tokenizer.tokenize_segment(record.sequence[:cap], vocab)


def _token_batch(records, vocab, cap):
    """Padded (B, T) ids + lengths for variable-length sequences."""
    streams = [_tokens_of(r, vocab, cap) for r in records]
    lengths = np.array([len(s) for s in streams], dtype=np.int64)
    T = lengths.max()
    tokens = np.zeros((len(streams), T), dtype=np.int64)
    for i, s in enumerate(streams):
        tokens[i, :len(s)] = s
    return tokens, lengths


def train_fullseq(train_records, go_vocabulary, config=FullSeqConfig(),
                  validation_records=(), log=None):
    """Train the baseline on whole (truncated) sequences.

    Mini-batches are drawn from a length-sorted order so padded work per
    batch stays bounded; shuffling happens at the batch level only,
    which keeps epochs deterministic per seed.
    """
    hp = config.hyperparams
    records = sorted(train_records, key=lambda r: (len(r.sequence), r.id))
    if not records:
        raise FullSeqError("no training records")
    vocab = tokenizer.build_vocab(
        [r.sequence[:config.max_length] for r in records], n=hp.nmer,
        min_count=hp.vocab_min_count)
    go_index = go_vocabulary.index

    def one_hot_rows(recs):
        Y = np.zeros((len(recs), go_vocabulary.size))
        for i, r in enumerate(recs):
            for t in r.labels:
                Y[i, go_index[t]] = 1.0
        return Y

    rng = np.random.default_rng(hp.seed)
    net = SequenceClassifier.init(vocab.size, hp.embed_size, hp.hidden_size,
                                  go_vocabulary.size, hp.dropout, rng)
    optimizer = AdamOptimizer(net.parameters(), lr=hp.learning_rate)

    batches = [records[lo:lo + hp.batch_size]
               for lo in range(0, len(records), hp.batch_size)]
    best_loss = np.inf
    best_params = None
    validation_records = list(validation_records)
    for epoch in range(hp.epochs):
        for bi in rng.permutation(len(batches)):
            batch = batches[bi]
            tokens, lengths = _token_batch(batch, vocab, config.max_length)
            targets = one_hot_rows(batch)
            probs, tape = net.forward(tokens, lengths, train_rng=rng)
            loss = bce_loss(probs, targets)
            if not np.isfinite(loss):
                raise FullSeqError(f"training diverged at epoch {epoch}")
            optimizer.step(net.backward(tape, targets))
        monitor = validation_records if validation_records else records
        epoch_loss = _mean_bce(net, monitor, vocab, config.max_length,
                               one_hot_rows)
        if log is not None:
            log(f"fullseq epoch {epoch + 1}/{hp.epochs}: "
                f"monitored BCE {epoch_loss:.6f}")
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_params = {k: p.copy() for k, p in net.parameters().items()}
    if best_params is not None:
        for k, p in net.parameters().items():
            p[...] = best_params[k]
    return FullSeqModel(config, vocab, net, tuple(go_vocabulary.terms),
                        go_vocabulary.fingerprint())


def _mean_bce(net, records, vocab, cap, one_hot_rows, batch_size=256):
    records = sorted(records, key=lambda r: (len(r.sequence), r.id))
    total = 0.0
    for lo in range(0, len(records), batch_size):
        batch = records[lo:lo + batch_size]
        tokens, lengths = _token_batch(batch, vocab, cap)
        probs, _ = net.forward(tokens, lengths)
        total += bce_loss(probs, one_hot_rows(batch)) * len(batch)
    return total / len(records)


def predict_fullseq(model: FullSeqModel, records):
    """K posteriors per record, in the given record order."""
    single = hasattr(records, "sequence")
    records = [records] if single else list(records)
    out = np.empty((len(records), len(model.go_terms)))
    order = sorted(range(len(records)),
                   key=lambda i: len(records[i].sequence))
    for lo in range(0, len(order), 256):
        idx = order[lo:lo + 256]
        tokens, lengths = _token_batch([records[i] for i in idx],
                                       model.vocab, model.config.max_length)
        probs, _ = model.net.forward(tokens, lengths)
        out[idx] = probs
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Persistence


def save_fullseq(model: FullSeqModel, path, config_hash=None):
    header = {
        "kind": "whole-sequence-baseline",
        "max_length": model.config.max_length,
        "hyperparams": asdict(model.config.hyperparams),
        "nmer_tokens": [t for t, _ in sorted(model.vocab.token_index.items(),
                                             key=lambda kv: kv[1])],
        "go_terms": list(model.go_terms),
        "go_fingerprint": model.go_fingerprint,
    }
    if config_hash is not None:
        header["config_hash"] = config_hash
    write_container(path, MODEL_MAGIC, header, model.net.parameters())


def load_fullseq(path):
    header, arrays = read_container(path, MODEL_MAGIC)
    hp = SvgHyperparams(**header["hyperparams"])
    config = FullSeqConfig(header["max_length"], hp)
    vocab = tokenizer.NmerVocabulary(
        hp.nmer, {t: i + 1 for i, t in enumerate(header["nmer_tokens"])})
    net = _net_from_arrays(arrays)
    net.dropout_rate = hp.dropout
    return FullSeqModel(config, vocab, net, tuple(header["go_terms"]),
                        header["go_fingerprint"])
