"""Protein-level features from segment posteriors.

A protein's single-size feature is the arithmetic mean of its segment
vectors; the multi-size feature concatenates the means for segment
sizes 100, 120, and 140 (ascending), giving a 3K vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container
from .protsvg import SvgModel, segment_vectors
from .segmenter import segment_sequence

FEATURE_MAGIC = "PVGF0001"
MULTI_SEGMENT_SIZES = (100, 120, 140)


class FeaturizeError(ValueError):
    pass


@dataclass(frozen=True)
class ProteinFeature:
    protein_id: str
    segment_size: int
    values: np.ndarray


@dataclass(frozen=True)
class MultiFeature:
    protein_id: str
    values: np.ndarray  # length 3K, blocks by ascending segment size


def protvecgen(model: SvgModel, protein):
    """Mean segment-posterior feature of one protein at the model's size."""
    s = model.hyperparams.segment_size
    segments = segment_sequence(protein.sequence, s, parent_id=protein.id)
    vectors = segment_vectors(model, segments)
    return ProteinFeature(protein.id, s, vectors.mean(axis=0))


def protvecgen_plus(models, protein):
    """Concatenated multi-size feature, blocks ordered by segment size.

    `models` is any iterable of SvgModel covering sizes 100/120/140
    (argument order is irrelevant); all must share a GO vocabulary.
    """
    by_size = {m.hyperparams.segment_size: m for m in models}
    missing = [s for s in MULTI_SEGMENT_SIZES if s not in by_size]
    if missing:
        raise FeaturizeError(f"missing model for segment size(s) {missing}")
    prints = {m.go_fingerprint for m in by_size.values()}
    if len(prints) > 1:
        raise FeaturizeError(
            "models trained on different GO vocabularies cannot be combined")
    blocks = [protvecgen(by_size[s], protein).values
              for s in MULTI_SEGMENT_SIZES]
    return MultiFeature(protein.id, np.concatenate(blocks))


def _batched_features(models, records):
    """Feature matrix for many records, one batched pass per model size."""
    by_size = {m.hyperparams.segment_size: m for m in models}
    sizes = sorted(by_size)
    blocks = []
    for s in sizes:
        model = by_size[s]
        segments = []
        counts = []
        for rec in records:
            segs = segment_sequence(rec.sequence, s, parent_id=rec.id)
            segments.extend(segs)
            counts.append(len(segs))
        vectors = segment_vectors(model, segments)
        rows = np.empty((len(records), model.n_outputs))
        lo = 0
        for i, c in enumerate(counts):
            rows[i] = vectors[lo:lo + c].mean(axis=0)
            lo += c
        blocks.append(rows)
    return np.concatenate(blocks, axis=1)


def featurize_corpus(models, records, path=None, config_hash=None):
    """Features for records in corpus order; optionally persisted.

    Returns (matrix, ids). With a single model the matrix is n x K,
    with the three multi-size models it is n x 3K.
    """
    models = list(models)
    records = list(records)
    if not records:
        raise FeaturizeError("no records to featurize")
    prints = {m.go_fingerprint for m in models}
    if len(prints) > 1:
        raise FeaturizeError(
            "models trained on different GO vocabularies cannot be combined")
    matrix = _batched_features(models, records)
    ids = [rec.id for rec in records]
    if path is not None:
        save_features(matrix, ids, path,
                      [m.hyperparams.segment_size for m in models],
                      config_hash=config_hash)
    return matrix, ids


def save_features(matrix, ids, path, segment_sizes, config_hash=None):
    header = {
        "kind": "protein-features",
        "ids": list(ids),
        "segment_sizes": sorted(segment_sizes),
        "n_outputs": matrix.shape[1],
    }
    if config_hash is not None:
        header["config_hash"] = config_hash
    write_container(path, FEATURE_MAGIC, header, {"features": matrix})


def load_features(path):
    header, arrays = read_container(path, FEATURE_MAGIC)
    return arrays["features"], list(header["ids"])
