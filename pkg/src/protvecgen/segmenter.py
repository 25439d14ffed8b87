"""Fixed-size overlapping segmentation of residue sequences.

A sequence of length L is cut into windows of size s whose starts are 30
residues apart by default; only the last window may run past the end and
is filled with the pad symbol '-'.
"""

from __future__ import annotations

from dataclasses import dataclass

PAD_SYMBOL = "-"
DEFAULT_STRIDE = 30
MIN_SEGMENT_SIZE = 4  # must hold at least one n-mer


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    """One fixed-length window of a protein, with provenance."""

    parent_id: str
    start: int
    residues: str
    pad_length: int
    labels: frozenset = frozenset()


def segment_sequence(sequence, size, stride=DEFAULT_STRIDE,
                     parent_id="", labels=frozenset()):
    """Cut `sequence` into ordered size-`size` windows, stride apart.

    The last window is the first one reaching or passing the sequence
    end; its overhang is padded with '-'. Every segment inherits
    `labels` verbatim.
    """
    L = len(sequence)
    if L == 0:
        raise SegmentationError("cannot segment an empty sequence")
    if size < MIN_SEGMENT_SIZE:
        raise SegmentationError(
            f"segment size {size} below minimum {MIN_SEGMENT_SIZE}")
    if stride < 1:
        raise SegmentationError(f"stride {stride} must be >= 1")

    labels = frozenset(labels)
    segments = []
    start = 0
    while True:
        window = sequence[start:start + size]
        pad = size - len(window)
        segments.append(Segment(parent_id, start, window + PAD_SYMBOL * pad,
                                pad, labels))
        if start + size >= L or start + stride >= L:
            break
        start += stride
    return segments
