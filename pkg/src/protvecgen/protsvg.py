"""Segment vector generator: train the segment model and map segments to
per-GO posterior vectors.

The model is the embedding -> Bi-LSTM -> dense sigmoid stack from the
kernel, trained with BCE/Adam on (segment, inherited label set) pairs.
A trained model turns any segment of its size into a K-vector of
posterior probabilities, one per GO term.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tokenizer
from .container import ContainerError, read_container, write_container
from .kernel import (AdamOptimizer, KernelError, SequenceClassifier, bce_loss)

MODEL_MAGIC = "PSVG0001"


class SvgError(ValueError):
    pass


@dataclass(frozen=True)
class SvgHyperparams:
    segment_size: int = 120
    nmer: int = 4
    embed_size: int = 32
    hidden_size: int = 70
    dropout: float = 0.3
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    vocab_min_count: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.segment_size < self.nmer:
            raise SvgError(
                f"segment size {self.segment_size} below n-mer size {self.nmer}")
        if self.embed_size < 1 or self.hidden_size < 1:
            raise SvgError("embedding and hidden sizes must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise SvgError(f"dropout {self.dropout} outside [0, 1)")


@dataclass
class SvgModel:
    hyperparams: SvgHyperparams
    vocab: tokenizer.NmerVocabulary
    net: SequenceClassifier
    go_terms: tuple
    go_fingerprint: str

    @property
    def n_outputs(self):
        return len(self.go_terms)


def _token_matrix(segments, vocab):
    return np.array([tokenizer.tokenize_segment(s, vocab) for s in segments],
                    dtype=np.int64)


def _label_matrix(segments, go_index):
    Y = np.zeros((len(segments), len(go_index)))
    for i, seg in enumerate(segments):
        for t in seg.labels:
            Y[i, go_index[t]] = 1.0
    return Y


def _mean_bce(net, tokens, targets, batch_size=512):
    total = 0.0
    for lo in range(0, len(tokens), batch_size):
        batch = tokens[lo:lo + batch_size]
        probs, _ = net.forward(batch)
        total += bce_loss(probs, targets[lo:lo + batch_size]) * len(batch)
    return total / len(tokens)


def train_svg(train_segments, hyperparams: SvgHyperparams, go_vocabulary,
              validation_segments=(), log=None):
    """Train a segment model on (segment, inherited labels) pairs.

    The n-mer vocabulary is built from the train segments only. After
    each epoch the validation BCE is evaluated and the parameters from
    the best validation epoch are kept (train BCE when no validation
    segments are supplied). Deterministic given hyperparams.seed.
    """
    hp = hyperparams
    train_segments = list(train_segments)
    if go_vocabulary.size == 0:
        raise SvgError("empty GO vocabulary")
    if not train_segments:
        raise SvgError("no training segments")

    vocab = tokenizer.build_vocab(train_segments, n=hp.nmer,
                                  min_count=hp.vocab_min_count)
    tokens = _token_matrix(train_segments, vocab)
    go_index = go_vocabulary.index
    targets = _label_matrix(train_segments, go_index)
    val_tokens = val_targets = None
    if len(validation_segments):
        validation_segments = list(validation_segments)
        val_tokens = _token_matrix(validation_segments, vocab)
        val_targets = _label_matrix(validation_segments, go_index)

    rng = np.random.default_rng(hp.seed)
    net = SequenceClassifier.init(vocab.size, hp.embed_size, hp.hidden_size,
                                  go_vocabulary.size, hp.dropout, rng)
    optimizer = AdamOptimizer(net.parameters(), lr=hp.learning_rate)

    best_loss = np.inf
    best_params = None
    n = len(tokens)
    for epoch in range(hp.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, hp.batch_size):
            idx = order[lo:lo + hp.batch_size]
            probs, tape = net.forward(tokens[idx], train_rng=rng)
            loss = bce_loss(probs, targets[idx])
            if not np.isfinite(loss):
                raise SvgError(f"training diverged at epoch {epoch}")
            optimizer.step(net.backward(tape, targets[idx]))
        if val_tokens is not None:
            epoch_loss = _mean_bce(net, val_tokens, val_targets)
        else:
            epoch_loss = _mean_bce(net, tokens, targets)
        if log is not None:
            log(f"epoch {epoch + 1}/{hp.epochs}: monitored BCE {epoch_loss:.6f}")
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_params = {k: p.copy() for k, p in net.parameters().items()}

    if best_params is not None:
        for k, p in net.parameters().items():
            p[...] = best_params[k]
    return SvgModel(hp, vocab, net, tuple(go_vocabulary.terms),
                    go_vocabulary.fingerprint())


def segment_vectors(model: SvgModel, segments):
    """Posterior K-vectors for a batch of segments of the model's size."""
    segments = list(segments)
    for seg in segments:
        if len(seg.residues) != model.hyperparams.segment_size:
            raise SvgError(
                f"segment length {len(seg.residues)} != model segment size "
                f"{model.hyperparams.segment_size}")
    tokens = _token_matrix(segments, model.vocab)
    out = np.empty((len(segments), model.n_outputs))
    for lo in range(0, len(segments), 512):
        probs, _ = model.net.forward(tokens[lo:lo + 512])
        out[lo:lo + 512] = probs
    return out


def segment_vector(model: SvgModel, segment):
    """Posterior K-vector for one segment (no dropout at inference)."""
    return segment_vectors(model, [segment])[0]


# ---------------------------------------------------------------------------
# Persistence


def save_model(model: SvgModel, path, config_hash=None):
    header = {
        "kind": "segment-vector-generator",
        "hyperparams": asdict(model.hyperparams),
        "nmer_tokens": _tokens_in_id_order(model.vocab),
        "go_terms": list(model.go_terms),
        "go_fingerprint": model.go_fingerprint,
    }
    if config_hash is not None:
        header["config_hash"] = config_hash
    write_container(path, MODEL_MAGIC, header, model.net.parameters())


def load_model(path):
    header, arrays = read_container(path, MODEL_MAGIC)
    hp = SvgHyperparams(**header["hyperparams"])
    vocab = tokenizer.NmerVocabulary(
        hp.nmer, {t: i + 1 for i, t in enumerate(header["nmer_tokens"])})
    go_terms = tuple(header["go_terms"])
    try:
        net = _net_from_arrays(arrays)
    except KeyError as exc:
        raise ContainerError(f"{path}: missing array {exc}") from exc
    if net.out_W.shape[0] != len(go_terms):
        raise ContainerError(
            f"{path}: output dimension {net.out_W.shape[0]} != "
            f"{len(go_terms)} GO terms")
    if arrays["embedding"].shape != (vocab.size, hp.embed_size):
        raise ContainerError(f"{path}: embedding shape inconsistent with header")
    net.dropout_rate = hp.dropout
    return SvgModel(hp, vocab, net, go_terms, header["go_fingerprint"])


def _tokens_in_id_order(vocab):
    return [t for t, _ in sorted(vocab.token_index.items(), key=lambda kv: kv[1])]


def _net_from_arrays(arrays):
    from .kernel import LstmParams

    def lstm(prefix):
        return LstmParams(**{k: arrays[f"{prefix}.{k}"]
                             for k in ("W_f", "W_i", "W_c", "W_o",
                                       "b_f", "b_i", "b_c", "b_o")})

    return SequenceClassifier(arrays["embedding"], lstm("fwd"), lstm("bwd"),
                              arrays["out_W"], arrays["out_b"])
