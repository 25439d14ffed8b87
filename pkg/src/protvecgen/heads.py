"""Classification heads and the weighted hybrid combiner.

A feature vector passes through a single-hidden-layer network with
sigmoid outputs (per-GO posteriors), then a per-GO 1-D threshold rule
turns each posterior into a binary decision. Two models' posteriors can
be fused as a convex combination weighted by their validation F1 ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container
from .kernel import AdamOptimizer, MlpClassifier, bce_loss

HEAD_MAGIC = "HEAD0001"

GE = ">="
LE = "<="


class HeadError(ValueError):
    pass


# ---------------------------------------------------------------------------
# NN head


@dataclass(frozen=True)
class HeadHyperparams:
    hidden_size: int = 0    # 0 -> 2K
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0


def train_nn_head(features, labels, hyperparams=HeadHyperparams(),
                  validation=None, log=None):
    """Mini-batch Adam on BCE; keeps the best-validation-epoch weights.

    `validation` is an optional (features, labels) pair; without it the
    train loss is monitored instead.
    """
    hp = hyperparams
    X = np.asarray(features, dtype=np.float64)
    Y = np.asarray(labels, dtype=np.float64)
    n, K = Y.shape
    hidden = hp.hidden_size if hp.hidden_size > 0 else 2 * K
    rng = np.random.default_rng(hp.seed)
    net = MlpClassifier.init(X.shape[1], hidden, K, rng)
    optimizer = AdamOptimizer(net.parameters(), lr=hp.learning_rate)

    best_loss = np.inf
    best_params = None
    for epoch in range(hp.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, hp.batch_size):
            idx = order[lo:lo + hp.batch_size]
            probs, tape = net.forward(X[idx])
            loss = bce_loss(probs, Y[idx])
            if not np.isfinite(loss):
                raise HeadError(f"head training diverged at epoch {epoch}")
            optimizer.step(net.backward(tape, Y[idx]))
        if validation is not None:
            probs, _ = net.forward(np.asarray(validation[0], dtype=np.float64))
            epoch_loss = bce_loss(probs, np.asarray(validation[1], dtype=np.float64))
        else:
            probs, _ = net.forward(X)
            epoch_loss = bce_loss(probs, Y)
        if log is not None:
            log(f"head epoch {epoch + 1}/{hp.epochs}: BCE {epoch_loss:.6f}")
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_params = {k: p.copy() for k, p in net.parameters().items()}
    if best_params is not None:
        for k, p in net.parameters().items():
            p[...] = best_params[k]
    return net


def head_posteriors(net: MlpClassifier, features):
    probs, _ = net.forward(np.asarray(features, dtype=np.float64))
    return probs


# ---------------------------------------------------------------------------
# Per-GO threshold rules


@dataclass(frozen=True)
class ThresholdRule:
    direction: str     # GE: positive iff x >= threshold; LE: iff x <= threshold
    threshold: float
    margin: float

    def predict(self, values):
        values = np.asarray(values)
        if self.direction == GE:
            return values >= self.threshold
        return values <= self.threshold


@dataclass(frozen=True)
class GoThresholdBank:
    terms: tuple
    rules: tuple       # ThresholdRule per term, parallel to terms


def rule_hinge_loss(values, labels, direction, threshold):
    """Total hinge loss of a 1-D threshold rule; labels in {0, 1}."""
    y = np.where(np.asarray(labels) > 0, 1.0, -1.0)
    sign = 1.0 if direction == GE else -1.0
    scores = sign * (np.asarray(values, dtype=np.float64) - threshold)
    return float(np.sum(np.maximum(0.0, 1.0 - y * scores)))


def fit_threshold(values, labels):
    """Best 1-D threshold rule for one GO term's posteriors.

    Separable data gets the midpoint of the separating gap; otherwise
    every midpoint between sorted distinct values (plus cuts outside the
    range) is scanned for minimum hinge loss, ties broken toward the
    lower threshold with direction >= preferred.
    """
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels)
    pos = values[labels > 0]
    neg = values[labels <= 0]
    if len(pos) == 0:
        raise HeadError("no positive samples for threshold fit")
    if len(neg) == 0:
        return ThresholdRule(GE, float(np.min(pos)), 0.0)

    distinct = np.unique(values)
    if len(distinct) == 1:
        majority_positive = len(pos) >= len(neg)
        return ThresholdRule(GE if majority_positive else LE,
                             float(distinct[0]), 0.0)

    if neg.max() < pos.min():
        lo, hi = float(neg.max()), float(pos.min())
        return ThresholdRule(GE, 0.5 * (lo + hi), 0.5 * (hi - lo))
    if pos.max() < neg.min():
        lo, hi = float(pos.max()), float(neg.min())
        return ThresholdRule(LE, 0.5 * (lo + hi), 0.5 * (hi - lo))

    candidates = np.concatenate([[distinct[0] - 0.5],
                                 0.5 * (distinct[:-1] + distinct[1:]),
                                 [distinct[-1] + 0.5]])
    best = None
    for threshold in candidates:          # ascending: first win = lowest cut
        for direction in (GE, LE):
            loss = rule_hinge_loss(values, labels, direction, threshold)
            if best is None or loss < best[0] - 1e-12:
                best = (loss, direction, float(threshold))
    return ThresholdRule(best[1], best[2], 0.0)


def train_go_thresholds(posteriors, labels, terms):
    """One threshold rule per GO term from its scalar posterior stream.

    posteriors and labels are (n, K); column k feeds term k's rule.
    """
    P = np.asarray(posteriors, dtype=np.float64)
    Y = np.asarray(labels)
    rules = []
    for k, term in enumerate(terms):
        if Y[:, k].sum() == 0:
            raise HeadError(f"GO term {term} has no positive train samples")
        rules.append(fit_threshold(P[:, k], Y[:, k]))
    return GoThresholdBank(tuple(terms), tuple(rules))


def predict_sets(posteriors, bank: GoThresholdBank):
    """Predicted GO sets for an (n, K) posterior matrix."""
    P = np.atleast_2d(np.asarray(posteriors, dtype=np.float64))
    if P.shape[1] != len(bank.terms):
        raise HeadError(
            f"posterior width {P.shape[1]} != {len(bank.terms)} terms")
    out = []
    for row in P:
        out.append({term for term, rule, value in
                    zip(bank.terms, bank.rules, row)
                    if bool(rule.predict(value))})
    return out


def predict(net, bank, features):
    """Feature vector(s) -> predicted GO set(s) via the NN head + rules."""
    probs = head_posteriors(net, features)
    sets = predict_sets(probs, bank)
    return sets[0] if np.asarray(features).ndim == 1 else sets


# ---------------------------------------------------------------------------
# Hybrid combiner


def compute_alpha(f1_m1, f1_m2):
    """Trade-off weight from the two models' validation average F1."""
    if f1_m1 < 0 or f1_m2 < 0:
        raise HeadError("F1 scores must be non-negative")
    total = f1_m1 + f1_m2
    if total == 0:
        raise HeadError("undefined trade-off: both F1 scores are zero")
    return f1_m1 / total


def hybrid_combine(z1, z2, alpha):
    """Elementwise convex combination alpha*z1 + (1-alpha)*z2."""
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise HeadError(f"posterior shapes differ: {z1.shape} vs {z2.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise HeadError(f"alpha {alpha} outside [0, 1]")
    return alpha * z1 + (1.0 - alpha) * z2


# ---------------------------------------------------------------------------
# Persistence (head + threshold bank + alpha)


def save_head(net: MlpClassifier, bank: GoThresholdBank, path,
              alpha=None, config_hash=None):
    header = {
        "kind": "classification-head",
        "terms": list(bank.terms),
        "directions": [r.direction for r in bank.rules],
    }
    if alpha is not None:
        header["alpha"] = alpha
    if config_hash is not None:
        header["config_hash"] = config_hash
    arrays = dict(net.parameters())
    arrays["thresholds"] = np.array([r.threshold for r in bank.rules])
    arrays["margins"] = np.array([r.margin for r in bank.rules])
    write_container(path, HEAD_MAGIC, header, arrays)


def load_head(path):
    header, arrays = read_container(path, HEAD_MAGIC)
    net = MlpClassifier(arrays["W1"], arrays["b1"], arrays["W2"], arrays["b2"])
    rules = tuple(ThresholdRule(d, float(t), float(m))
                  for d, t, m in zip(header["directions"],
                                     arrays["thresholds"], arrays["margins"]))
    bank = GoThresholdBank(tuple(header["terms"]), rules)
    return net, bank, header.get("alpha")
