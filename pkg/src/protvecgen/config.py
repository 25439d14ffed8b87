"""Flat `key = value` run configuration.

Lines are `key = value`, `#` starts a comment, blank lines are ignored.
All randomness flows from the configured seed; there is no wall-clock
seeding anywhere. The config hash stamped into stage outputs prevents
silently mixing artifacts produced under different configurations.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": "0",
    "workdir": "run",
    "fasta": "",
    "annotations": "",
    "manifest": "",
    "min_annotations": "1",
    "split_train": "0.60",
    "split_validation": "0.15",
    "split_test": "0.25",
    "segment_sizes": "100,120,140",
    "stride": "30",
    "nmer": "4",
    "vocab_min_count": "1",
    "embed_size": "32",
    "hidden_size": "70",
    "dropout": "0.3",
    "svg_epochs": "10",
    "svg_batch_size": "64",
    "learning_rate": "1e-3",
    "head_epochs": "50",
    "head_hidden": "0",
    "head_batch_size": "64",
    "tfidf_nmer": "3",
    "tfidf_max_terms": "4000",
    "fullseq_cap": "1500",
    "bucket_edges": "100,200,300,500,700,1000,1300,1600",
    "synth_labels": "6",
    "synth_records": "1200",
    "synth_motif_length": "15",
    "synth_motifs_per_label": "1",
    "synth_labels_min": "1",
    "synth_labels_max": "2",
    "synth_length_min": "80",
    "synth_length_max": "1500",
    "synth_noise": "0.05",
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.values) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        merged = dict(DEFAULTS)
        merged.update(self.values)
        self.values = merged

    def get(self, key):
        return self.values[key]

    def get_int(self, key):
        try:
            return int(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"{key}: not an integer: {self.values[key]!r}") from exc

    def get_float(self, key):
        try:
            return float(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"{key}: not a number: {self.values[key]!r}") from exc

    def get_int_list(self, key):
        raw = self.values[key].strip()
        if not raw:
            return []
        try:
            return [int(v.strip()) for v in raw.split(",")]
        except ValueError as exc:
            raise ConfigError(f"{key}: not an integer list: {raw!r}") from exc

    def hash(self):
        # the output directory is not part of the semantic configuration:
        # the same run in a different workdir must produce identical bytes
        canon = "\n".join(f"{k}={self.values[k]}"
                          for k in sorted(self.values) if k != "workdir")
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def parse_config(text):
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return RunConfig(values)


def load_config(path, overrides=None):
    with open(path) as fh:
        cfg = parse_config(fh.read())
    if overrides:
        cfg.values.update(overrides)
        cfg = RunConfig(dict(cfg.values))
    return cfg
