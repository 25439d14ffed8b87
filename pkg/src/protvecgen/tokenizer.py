"""Overlapping n-mer decomposition and the n-mer vocabulary.

Segments become "protein word" sequences: every length-n window, step 1,
in order of occurrence. Id 0 is reserved for padding-contaminated and
out-of-vocabulary n-mers.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .segmenter import PAD_SYMBOL

PAD_ID = 0
DEFAULT_NMER = 4


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True)
class NmerVocabulary:
    n: int
    token_index: dict  # n-mer -> id, ids contiguous from 1

    @property
    def size(self):
        """Number of ids including the reserved id 0."""
        return len(self.token_index) + 1

    def id_of(self, nmer):
        return self.token_index.get(nmer, PAD_ID)


def build_vocab(segments, n=DEFAULT_NMER, min_count=1):
    """Vocabulary over the n-mers of train segments.

    Ids start at 1 and are assigned by descending frequency, ties broken
    lexicographically, so construction is deterministic. n-mers touching
    the pad symbol are never stored.
    """
    segments = list(segments)
    if not segments:
        raise TokenizerError("cannot build a vocabulary from no segments")
    counts = Counter()
    for seg in segments:
        residues = seg.residues if hasattr(seg, "residues") else seg
        for j in range(len(residues) - n + 1):
            nmer = residues[j:j + n]
            if PAD_SYMBOL not in nmer:
                counts[nmer] += 1
    ranked = sorted((nmer for nmer, c in counts.items() if c >= min_count),
                    key=lambda nmer: (-counts[nmer], nmer))
    return NmerVocabulary(n, {nmer: i + 1 for i, nmer in enumerate(ranked)})


def tokenize_segment(segment, vocab: NmerVocabulary):
    """Ordered token ids of a segment: one per n-mer window, step 1.

    Always emits len - n + 1 ids; windows containing the pad symbol or
    unseen n-mers map to id 0, keeping the output shape content-free.
    """
    residues = segment.residues if hasattr(segment, "residues") else segment
    n = vocab.n
    if len(residues) < n:
        raise TokenizerError(
            f"segment length {len(residues)} below n-mer size {n}")
    index = vocab.token_index
    return [0 if PAD_SYMBOL in residues[j:j + n]
            else index.get(residues[j:j + n], PAD_ID)
            for j in range(len(residues) - n + 1)]
