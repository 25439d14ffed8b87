"""Corpus ingestion, preparation rules, and synthetic planted-motif data.

Real data arrives as FASTA plus a tab-separated annotation file
("id<TAB>GO:...,GO:..."). Preparation removes rare GO terms, drops
unlabeled records, and splits train/validation/test. Synthetic corpora
plant per-label motifs into random background sequences so the whole
pipeline can be validated at desk scale.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

CANONICAL_RESIDUES = "ACDEFGHIKLMNPQRSTVWY"
AMBIGUOUS_RESIDUES = "BJOUXZ"
RESIDUE_ALPHABET = frozenset(CANONICAL_RESIDUES + AMBIGUOUS_RESIDUES)

_GO_TOKEN = re.compile(r"^GO:\d{7}$")

SPLIT_TRAIN = "train"
SPLIT_VALIDATION = "validation"
SPLIT_TEST = "test"


class CorpusError(ValueError):
    pass


class ParseError(CorpusError):
    pass


@dataclass(frozen=True)
class ProteinRecord:
    id: str
    sequence: str
    labels: frozenset

    def __post_init__(self):
        if not self.sequence:
            raise CorpusError(f"record {self.id!r}: empty sequence")
        bad = set(self.sequence) - RESIDUE_ALPHABET
        if bad:
            raise CorpusError(
                f"record {self.id!r}: residue {sorted(bad)[0]!r} outside "
                "the accepted alphabet")


@dataclass(frozen=True)
class GoVocabulary:
    """Deterministic (lexicographic) ordering of the K GO terms."""

    terms: tuple

    @classmethod
    def from_labels(cls, label_sets):
        seen = set()
        for labels in label_sets:
            seen.update(labels)
        return cls(tuple(sorted(seen)))

    @property
    def size(self):
        return len(self.terms)

    @property
    def index(self):
        return {t: i for i, t in enumerate(self.terms)}

    def one_hot(self, labels):
        y = np.zeros(len(self.terms))
        idx = self.index
        for t in labels:
            y[idx[t]] = 1.0
        return y

    def fingerprint(self):
        import hashlib
        return hashlib.sha256("\n".join(self.terms).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Corpus:
    records: tuple          # of ProteinRecord
    vocabulary: GoVocabulary
    splits: tuple = ()      # split tag per record, parallel to records

    def __post_init__(self):
        known = set(self.vocabulary.terms)
        for rec in self.records:
            extra = rec.labels - known
            if extra:
                raise CorpusError(
                    f"record {rec.id!r} carries unknown term {sorted(extra)[0]}")

    def subset(self, split):
        if not self.splits:
            raise CorpusError("corpus has no split tags")
        return [r for r, s in zip(self.records, self.splits) if s == split]

    def label_matrix(self, records=None):
        records = self.records if records is None else records
        return np.array([self.vocabulary.one_hot(r.labels) for r in records])


# ---------------------------------------------------------------------------
# Parsing


def parse_fasta(stream):
    """Parse FASTA text into (id, sequence) pairs.

    Wrapped sequence lines are concatenated, residues upper-cased; the id
    is the header token up to the first whitespace.
    """
    if isinstance(stream, str):
        lines = stream.splitlines()
    else:
        lines = [line.rstrip("\n") for line in stream]
    entries = []
    current_id = None
    parts = []

    def flush(line_no):
        if current_id is not None:
            seq = "".join(parts)
            if not seq:
                raise ParseError(
                    f"line {line_no}: empty sequence for {current_id!r}")
            entries.append((current_id, seq))

    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            flush(line_no)
            current_id = line[1:].split()[0] if line[1:].split() else ""
            if not current_id:
                raise ParseError(f"line {line_no}: header without an id")
            parts = []
        else:
            if current_id is None:
                raise ParseError(
                    f"line {line_no}: sequence data before any header")
            chunk = line.upper()
            bad = set(chunk) - RESIDUE_ALPHABET
            if bad:
                raise ParseError(
                    f"line {line_no}: residue {sorted(bad)[0]!r} outside "
                    "the accepted alphabet")
            parts.append(chunk)
    flush(len(lines) + 1)
    return entries


def parse_annotations(stream):
    """Parse 'id<TAB>GO:...,GO:...' lines into id -> set of GO terms."""
    if isinstance(stream, str):
        lines = stream.splitlines()
    else:
        lines = [line.rstrip("\n") for line in stream]
    annotations = {}
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        if "\t" not in line:
            raise ParseError(f"line {line_no}: expected 'id<TAB>terms'")
        rec_id, terms_field = line.split("\t", 1)
        terms = set()
        for token in terms_field.split(","):
            token = token.strip()
            if not _GO_TOKEN.match(token):
                raise ParseError(
                    f"line {line_no}: malformed GO token {token!r}")
            terms.add(token)
        annotations.setdefault(rec_id, set()).update(terms)
    return annotations


# ---------------------------------------------------------------------------
# Preparation rules


def filter_corpus(records, min_annotations=200):
    """Drop GO terms annotating fewer than `min_annotations` records,
    then drop records left without labels. Single pass, no fixpoint.
    """
    records = list(records)
    counts = {}
    for rec in records:
        for t in rec.labels:
            counts[t] = counts.get(t, 0) + 1
    keep = {t for t, c in counts.items() if c >= min_annotations}
    surviving = []
    for rec in records:
        labels = rec.labels & keep
        if labels:
            surviving.append(replace(rec, labels=frozenset(labels)))
    if not surviving:
        raise CorpusError("empty corpus after filtering")
    vocab = GoVocabulary(tuple(sorted(keep)))
    return Corpus(tuple(surviving), vocab)


def split_corpus(corpus: Corpus, fractions=(0.60, 0.15, 0.25), seed=0):
    """Tag records train/validation/test by a seeded shuffle + contiguous cut."""
    f_train, f_val, f_test = fractions
    for f in fractions:
        if not 0.0 <= f <= 1.0:
            raise CorpusError(f"split fraction {f} outside [0, 1]")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise CorpusError(f"split fractions {fractions} do not sum to 1")
    n = len(corpus.records)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * f_train))
    n_val = int(round(n * (f_train + f_val))) - n_train
    tags = [None] * n
    for pos, rec_idx in enumerate(order):
        if pos < n_train:
            tags[rec_idx] = SPLIT_TRAIN
        elif pos < n_train + n_val:
            tags[rec_idx] = SPLIT_VALIDATION
        else:
            tags[rec_idx] = SPLIT_TEST
    return replace(corpus, splits=tuple(tags))


# ---------------------------------------------------------------------------
# Synthetic planted-motif corpora


@dataclass(frozen=True)
class SynthSpec:
    label_count: int = 6
    motif_length: int = 15
    motifs_per_label: int = 1
    labels_per_protein: tuple = (1, 2)
    length_min: int = 80
    length_max: int = 1500
    noise_rate: float = 0.05
    record_count: int = 1200
    seed: int = 0

    def __post_init__(self):
        if min(self.label_count, self.motif_length, self.motifs_per_label,
               self.record_count, self.length_min) < 1:
            raise CorpusError("all synthetic counts must be >= 1")
        if self.motif_length >= self.length_min:
            raise CorpusError("motif length must be below the minimum sequence length")
        if not 0.0 <= self.noise_rate < 0.5:
            raise CorpusError(f"noise rate {self.noise_rate} outside [0, 0.5)")
        if self.labels_per_protein[0] < 1 or \
                self.labels_per_protein[1] > self.label_count:
            raise CorpusError("labels-per-protein range out of bounds")


_PLACEMENT_RETRIES = 1000


def generate_synthetic(spec: SynthSpec):
    """Planted-motif corpus: uniform background residues with each assigned
    label's motif copies inserted at non-overlapping positions.

    Returns (Corpus, manifest) where the manifest records motifs,
    positions, and the seed. Deterministic given spec.seed.
    """
    rng = np.random.default_rng(spec.seed)
    residues = np.array(list(CANONICAL_RESIDUES))
    terms = tuple(f"GO:{k + 1:07d}" for k in range(spec.label_count))
    motifs = {t: "".join(rng.choice(residues, size=spec.motif_length))
              for t in terms}

    log_lo, log_hi = math.log(spec.length_min), math.log(spec.length_max)
    records = []
    placements = {}
    for i in range(spec.record_count):
        rec_id = f"synth{i:05d}"
        length = int(round(math.exp(rng.uniform(log_lo, log_hi))))
        length = min(max(length, spec.length_min), spec.length_max)
        n_labels = int(rng.integers(spec.labels_per_protein[0],
                                    spec.labels_per_protein[1] + 1))
        labels = rng.choice(spec.label_count, size=n_labels, replace=False)
        seq = rng.choice(residues, size=length)

        taken = []  # placed [start, end) intervals
        positions = []
        for k in sorted(labels):
            term = terms[k]
            for _ in range(spec.motifs_per_label):
                start = _place(rng, length, spec.motif_length, taken)
                motif = list(motifs[term])
                for j in range(spec.motif_length):
                    if rng.random() < spec.noise_rate:
                        motif[j] = str(rng.choice(residues))
                seq[start:start + spec.motif_length] = motif
                positions.append({"term": term, "start": int(start)})
        records.append(ProteinRecord(
            rec_id, "".join(seq),
            frozenset(terms[k] for k in labels)))
        placements[rec_id] = positions

    manifest = {"seed": spec.seed, "motifs": motifs, "positions": placements}
    return Corpus(tuple(records), GoVocabulary(terms)), manifest


def _place(rng, length, motif_length, taken):
    for _ in range(_PLACEMENT_RETRIES):
        start = int(rng.integers(0, length - motif_length + 1))
        end = start + motif_length
        if all(end <= s or start >= e for s, e in taken):
            taken.append((start, end))
            return start
    raise CorpusError(
        "could not place motifs without overlap; use longer sequences")


# ---------------------------------------------------------------------------
# Persistence


def write_fasta(records, path, width=60):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(f">{rec.id}\n")
            for j in range(0, len(rec.sequence), width):
                fh.write(rec.sequence[j:j + width] + "\n")


def write_annotations(records, path):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(f"{rec.id}\t{','.join(sorted(rec.labels))}\n")


def write_manifest(manifest, path):
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_corpus(fasta_path, annotations_path):
    """Read FASTA + annotation TSV into an unfiltered record list."""
    with open(fasta_path) as fh:
        entries = parse_fasta(fh)
    with open(annotations_path) as fh:
        annotations = parse_annotations(fh)
    records = []
    for rec_id, seq in entries:
        labels = annotations.get(rec_id, set())
        records.append(ProteinRecord(rec_id, seq, frozenset(labels)))
    return records
