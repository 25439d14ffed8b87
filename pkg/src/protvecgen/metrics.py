"""Example-based multi-label evaluation with length-bucketed reporting.

Per sample: precision |Y∩Z|/|Z| (0 when Z is empty), recall |Y∩Z|/|Y|,
F1 = 2|Y∩Z|/(|Y|+|Z|); the report averages each over samples. Buckets
partition samples by sequence length with right-inclusive edges.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

DEFAULT_BUCKET_EDGES = (100, 200, 300, 500, 700, 1000, 1300, 1600)


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    avg_precision: float
    avg_recall: float
    avg_f1: float
    sample_count: int
    buckets: dict = field(default_factory=dict)  # label -> MetricsReport

    def to_dict(self):
        d = {"avg_precision": self.avg_precision,
             "avg_recall": self.avg_recall,
             "avg_f1": self.avg_f1,
             "sample_count": self.sample_count}
        if self.buckets:
            d["buckets"] = {k: v.to_dict() for k, v in self.buckets.items()}
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self):
        rows = [("overall", self)] + list(self.buckets.items())
        width = max(len(name) for name, _ in rows)
        lines = [f"{'range':<{width}}  {'n':>6}  {'precision':>9}  "
                 f"{'recall':>9}  {'f1':>9}"]
        for name, rep in rows:
            lines.append(f"{name:<{width}}  {rep.sample_count:>6}  "
                         f"{rep.avg_precision:>9.4f}  {rep.avg_recall:>9.4f}  "
                         f"{rep.avg_f1:>9.4f}")
        return "\n".join(lines)


def compute_metrics(pairs):
    """Averaged example-based precision/recall/F1 over (Y_i, Z_i) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise MetricsError("no samples to evaluate")
    p_sum = r_sum = f_sum = 0.0
    for true_set, predicted in pairs:
        true_set = set(true_set)
        predicted = set(predicted)
        if not true_set:
            raise MetricsError("a sample has an empty true label set")
        hits = len(true_set & predicted)
        p_sum += hits / len(predicted) if predicted else 0.0
        r_sum += hits / len(true_set)
        f_sum += 2.0 * hits / (len(true_set) + len(predicted))
    n = len(pairs)
    return MetricsReport(p_sum / n, r_sum / n, f_sum / n, n)


def bucketize(pairs, lengths, edges=DEFAULT_BUCKET_EDGES):
    """Overall report plus per-length-bucket sub-reports.

    Edges (e1 < e2 < ...) produce buckets (0, e1], (e1, e2], ...,
    (e_last, inf); every sample lands in exactly one.
    """
    pairs = list(pairs)
    lengths = list(lengths)
    if len(pairs) != len(lengths):
        raise MetricsError("pairs and lengths differ in count")
    edges = tuple(edges)
    if any(a >= b for a, b in zip(edges, edges[1:])):
        raise MetricsError(f"bucket edges {edges} not strictly ascending")

    labels = [f"(0,{edges[0]}]"]
    labels += [f"({a},{b}]" for a, b in zip(edges, edges[1:])]
    labels.append(f"({edges[-1]},inf)")

    grouped = {label: [] for label in labels}
    for pair, L in zip(pairs, lengths):
        grouped[labels[_bucket_index(L, edges)]].append(pair)

    overall = compute_metrics(pairs)
    buckets = {label: compute_metrics(group)
               for label, group in grouped.items() if group}
    return MetricsReport(overall.avg_precision, overall.avg_recall,
                         overall.avg_f1, overall.sample_count, buckets)


def _bucket_index(length, edges):
    for i, edge in enumerate(edges):
        if length <= edge:
            return i
    return len(edges)
