"""Minimal differentiable network kernel.

Everything is float64 numpy. The kernel supplies exactly what the sequence
models need: an embedding lookup, a bi-directional LSTM with exact
reverse-mode gradients (full unrolling, no truncation), dense layers,
binary cross-entropy, Adam, and inverted dropout. Networks record their
forward intermediates on a Tape; ``backward`` consumes the tape once and
returns gradients for every parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.special

BCE_EPS = 1e-7


class KernelError(ValueError):
    """Shape mismatch, non-finite input, or tape misuse."""


def sigmoid(z):
    # scipy's expit: stable for large |z| and much faster than a
    # python-level split form on the per-step gate tensors
    return scipy.special.expit(np.asarray(z, dtype=np.float64))


def relu(z):
    return np.maximum(z, 0.0)


_ACTIVATIONS = {
    "sigmoid": sigmoid,
    "relu": relu,
    "identity": lambda z: z,
    "tanh": np.tanh,
}


def _check_finite(name, a):
    if not np.all(np.isfinite(a)):
        raise KernelError(f"non-finite values in {name}")


# ---------------------------------------------------------------------------
# LSTM cell


@dataclass
class LstmParams:
    """Gate weights for one LSTM direction.

    Each W_* has shape (H, H + E) and acts on the concatenation
    [h_prev, x_t]; each b_* has shape (H,).
    """

    W_f: np.ndarray
    W_i: np.ndarray
    W_c: np.ndarray
    W_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    @property
    def hidden_size(self):
        return self.W_f.shape[0]

    @property
    def input_size(self):
        return self.W_f.shape[1] - self.W_f.shape[0]

    def __post_init__(self):
        H, HE = self.W_f.shape
        for name in ("W_f", "W_i", "W_c", "W_o"):
            W = getattr(self, name)
            if W.shape != (H, HE):
                raise KernelError(f"{name} shape {W.shape} != {(H, HE)}")
            _check_finite(name, W)
        for name in ("b_f", "b_i", "b_c", "b_o"):
            b = getattr(self, name)
            if b.shape != (H,):
                raise KernelError(f"{name} shape {b.shape} != {(H,)}")
            _check_finite(name, b)

    @classmethod
    def init(cls, hidden, input_size, rng):
        k = 1.0 / np.sqrt(hidden + input_size)

        def w():
            return rng.uniform(-k, k, size=(hidden, hidden + input_size))

        zeros = np.zeros(hidden)
        # forget-gate bias +1: standard practice for carry at init
        return cls(w(), w(), w(), w(),
                   zeros + 1.0, zeros.copy(), zeros.copy(), zeros.copy())

    def stacked(self):
        """(4H, H+E) weight and (4H,) bias in gate order f, i, c, o."""
        W = np.concatenate([self.W_f, self.W_i, self.W_c, self.W_o], axis=0)
        b = np.concatenate([self.b_f, self.b_i, self.b_c, self.b_o])
        return W, b

    @classmethod
    def from_stacked(cls, W, b):
        H = W.shape[0] // 4
        return cls(*(W[i * H:(i + 1) * H] for i in range(4)),
                   *(b[i * H:(i + 1) * H] for i in range(4)))

    def arrays(self):
        return {"W_f": self.W_f, "W_i": self.W_i, "W_c": self.W_c,
                "W_o": self.W_o, "b_f": self.b_f, "b_i": self.b_i,
                "b_c": self.b_c, "b_o": self.b_o}


@dataclass
class LstmStepState:
    """Forward intermediates of one cell step."""

    X: np.ndarray        # [h_prev, x_t]
    f: np.ndarray
    i: np.ndarray
    c_bar: np.ndarray
    C: np.ndarray
    o: np.ndarray
    h: np.ndarray


def lstm_cell_step(params: LstmParams, h_prev, C_prev, x_t):
    """One LSTM step: gates from [h_prev, x_t], cell update, gated output."""
    H = params.hidden_size
    E = params.input_size
    h_prev = np.asarray(h_prev, dtype=np.float64)
    C_prev = np.asarray(C_prev, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    if h_prev.shape != (H,) or C_prev.shape != (H,) or x_t.shape != (E,):
        raise KernelError(
            f"state/input shapes {h_prev.shape}/{C_prev.shape}/{x_t.shape} "
            f"inconsistent with H={H}, E={E}")
    for name, a in (("h_prev", h_prev), ("C_prev", C_prev), ("x_t", x_t)):
        _check_finite(name, a)

    X = np.concatenate([h_prev, x_t])
    f = sigmoid(params.W_f @ X + params.b_f)
    i = sigmoid(params.W_i @ X + params.b_i)
    c_bar = np.tanh(params.W_c @ X + params.b_c)
    C = f * C_prev + i * c_bar
    o = sigmoid(params.W_o @ X + params.b_o)
    h = o * np.tanh(C)
    return h, C, LstmStepState(X, f, i, c_bar, C, o, h)


# ---------------------------------------------------------------------------
# Batched masked LSTM (training path; same math as lstm_cell_step)


def lstm_forward(params: LstmParams, X, lengths=None):
    """Run an LSTM over a padded batch.

    X has shape (B, T, E); lengths masks out trailing padding per row
    (state carries through inactive steps unchanged). Returns the final
    hidden state (B, H) and a cache for lstm_backward.
    """
    X = np.asarray(X, dtype=np.float64)
    B, T, E = X.shape
    H = params.hidden_size
    if E != params.input_size:
        raise KernelError(f"input size {E} != params input size {params.input_size}")
    if T == 0:
        raise KernelError("empty sequence")
    if lengths is None:
        lengths = np.full(B, T, dtype=np.int64)
    else:
        lengths = np.asarray(lengths, dtype=np.int64)

    W, b = params.stacked()
    Wt = W.T
    h = np.zeros((B, H))
    C = np.zeros((B, H))
    gates = np.empty((T, B, 4 * H))
    cells = np.empty((T, B, H))
    hiddens = np.empty((T, B, H))
    for t in range(T):
        Z = np.concatenate([h, X[:, t, :]], axis=1)
        G = Z @ Wt + b
        f = sigmoid(G[:, :H])
        i = sigmoid(G[:, H:2 * H])
        c_bar = np.tanh(G[:, 2 * H:3 * H])
        o = sigmoid(G[:, 3 * H:])
        C_new = f * C + i * c_bar
        h_new = o * np.tanh(C_new)
        active = (t < lengths)[:, None]
        C = np.where(active, C_new, C)
        h = np.where(active, h_new, h)
        gates[t] = np.concatenate([f, i, c_bar, o], axis=1)
        cells[t] = C_new
        hiddens[t] = h
    cache = {"X": X, "lengths": lengths, "gates": gates, "cells": cells,
             "hiddens": hiddens, "W": W}
    return h, cache


def lstm_backward(params: LstmParams, cache, dh_last):
    """Exact reverse-mode pass over lstm_forward's cache.

    Returns (dX, grads) with grads keyed like LstmParams.arrays().
    """
    X = cache["X"]
    lengths = cache["lengths"]
    gates = cache["gates"]
    cells = cache["cells"]
    hiddens = cache["hiddens"]
    W = cache["W"]
    B, T, E = X.shape
    H = params.hidden_size

    dW = np.zeros_like(W)
    db = np.zeros(4 * H)
    dX = np.zeros_like(X)
    dh = np.asarray(dh_last, dtype=np.float64).copy()
    dC = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        active = (t < lengths)[:, None]
        f = gates[t][:, :H]
        i = gates[t][:, H:2 * H]
        c_bar = gates[t][:, 2 * H:3 * H]
        o = gates[t][:, 3 * H:]
        C_new = cells[t]
        # cells[t] holds the unmasked candidate; the state actually carried
        # into step t is the masked one
        C_prev = _masked_cell(cache, t - 1) if t > 0 else np.zeros((B, H))
        h_prev = hiddens[t - 1] if t > 0 else np.zeros((B, H))

        dh_act = np.where(active, dh, 0.0)
        dC_act = np.where(active, dC, 0.0)
        dh_skip = np.where(active, 0.0, dh)
        dC_skip = np.where(active, 0.0, dC)

        tanhC = np.tanh(C_new)
        do = dh_act * tanhC
        dC_tot = dC_act + dh_act * o * (1.0 - tanhC * tanhC)
        df = dC_tot * C_prev
        di = dC_tot * c_bar
        dc_bar = dC_tot * i
        dC_prev = dC_tot * f

        dG = np.concatenate([df * f * (1.0 - f),
                             di * i * (1.0 - i),
                             dc_bar * (1.0 - c_bar * c_bar),
                             do * o * (1.0 - o)], axis=1)
        Z = np.concatenate([h_prev, X[:, t, :]], axis=1)
        dW += dG.T @ Z
        db += dG.sum(axis=0)
        dZ = dG @ W
        dh = dZ[:, :H] + dh_skip
        dC = dC_prev + dC_skip
        dX[:, t, :] = dZ[:, H:]

    H4 = H
    grads = {"W_f": dW[:H4], "W_i": dW[H4:2 * H4], "W_c": dW[2 * H4:3 * H4],
             "W_o": dW[3 * H4:], "b_f": db[:H4], "b_i": db[H4:2 * H4],
             "b_c": db[2 * H4:3 * H4], "b_o": db[3 * H4:]}
    return dX, grads


def _masked_cell(cache, t):
    """Effective (carried) cell state after step t, honoring the mask."""
    lengths = cache["lengths"]
    cells = cache["cells"]
    B, H = cells[0].shape
    C = np.zeros((B, H))
    # the carried state equals cells[min(t, length-1)] for each row
    idx = np.minimum(t, lengths - 1)
    rows = np.arange(B)
    valid = lengths > 0
    C[valid] = cells[idx[valid], rows[valid]]
    return C


def reverse_within_lengths(X, lengths):
    """Reverse each row's first `length` steps in place of position, keep padding."""
    X = np.asarray(X)
    out = np.zeros_like(X)
    for b, L in enumerate(lengths):
        out[b, :L] = X[b, :L][::-1]
    return out


def bilstm_forward(params_fwd: LstmParams, params_bwd: LstmParams, xs):
    """Final-state Bi-LSTM readout for a single sequence of input vectors.

    Returns the (2H,) concatenation of the forward pass's final hidden
    state and the final hidden state of a pass over the reversed sequence.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise KernelError("input must be a non-empty (T, E) array")
    H = params_fwd.hidden_size
    h_f = np.zeros(H)
    C_f = np.zeros(H)
    for x in xs:
        h_f, C_f, _ = lstm_cell_step(params_fwd, h_f, C_f, x)
    Hb = params_bwd.hidden_size
    h_b = np.zeros(Hb)
    C_b = np.zeros(Hb)
    for x in xs[::-1]:
        h_b, C_b, _ = lstm_cell_step(params_bwd, h_b, C_b, x)
    return np.concatenate([h_f, h_b])


# ---------------------------------------------------------------------------
# Dense layer


def dense_forward(W, b, x, activation="identity"):
    """Affine map plus activation; x is a (D,) vector or (B, D) batch."""
    if activation not in _ACTIVATIONS:
        raise KernelError(f"unknown activation {activation!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != W.shape[1]:
        raise KernelError(f"input dim {x.shape[-1]} != weight dim {W.shape[1]}")
    z = x @ W.T + b
    return _ACTIVATIONS[activation](z)


def dense_backward(W, x, y, dy, activation):
    """Gradients of a dense_forward call; y is the forward output."""
    if activation == "sigmoid":
        dz = dy * y * (1.0 - y)
    elif activation == "relu":
        dz = dy * (y > 0)
    elif activation == "tanh":
        dz = dy * (1.0 - y * y)
    else:
        dz = dy
    if dz.ndim == 1:
        dW = np.outer(dz, x)
        db = dz.copy()
    else:
        dW = dz.T @ x
        db = dz.sum(axis=0)
    dx = dz @ W
    return dx, dW, db


# ---------------------------------------------------------------------------
# Loss


def bce_loss(predictions, targets):
    """Mean binary cross-entropy with inputs clamped to [eps, 1-eps]."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape:
        raise KernelError(f"prediction shape {p.shape} != target shape {y.shape}")
    p = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def bce_sigmoid_grad(probs, targets):
    """d(mean BCE)/d(logits) for sigmoid outputs: (p - y) / count."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    return (p - y) / p.size


# ---------------------------------------------------------------------------
# Adam


def adam_step(param, grad, m, v, t, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns (param, m, v)."""
    if t < 1:
        raise KernelError("adam step index must be >= 1")
    if not np.all(np.isfinite(grad)):
        raise KernelError("non-finite gradient; training aborted")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class AdamOptimizer:
    """Adam over a named dict of parameter arrays, updated in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p) for k, p in params.items()}
        self.v = {k: np.zeros_like(p) for k, p in params.items()}

    def step(self, grads):
        self.t += 1
        for k, p in self.params.items():
            new, self.m[k], self.v[k] = adam_step(
                p, grads[k], self.m[k], self.v[k], self.t,
                self.lr, self.beta1, self.beta2, self.eps)
            p[...] = new


# ---------------------------------------------------------------------------
# Dropout


def dropout_mask(shape, rate, rng):
    """Inverted-dropout mask: zeros w.p. rate, survivors scaled 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise KernelError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


# ---------------------------------------------------------------------------
# Tape + composed networks


@dataclass
class Tape:
    """Forward record for one training step; consumable exactly once."""

    cache: dict = field(default_factory=dict)
    consumed: bool = False

    def consume(self):
        if self.consumed:
            raise KernelError("tape already consumed")
        self.consumed = True
        return self.cache


class SequenceClassifier:
    """Embedding -> Bi-LSTM (final-state readout) -> dense sigmoid.

    Shared by the segment-vector generator and the whole-sequence
    baseline; only the token stream differs.
    """

    def __init__(self, embedding, fwd: LstmParams, bwd: LstmParams,
                 out_W, out_b, dropout_rate=0.0):
        self.embedding = embedding          # (V, E)
        self.fwd = fwd
        self.bwd = bwd
        self.out_W = out_W                  # (K, 2H)
        self.out_b = out_b
        self.dropout_rate = dropout_rate

    @classmethod
    def init(cls, vocab_size, embed_size, hidden_size, n_outputs,
             dropout_rate, rng):
        k = 1.0 / np.sqrt(embed_size)
        emb = rng.uniform(-k, k, size=(vocab_size, embed_size))
        emb[0] = 0.0                        # PAD/UNK row
        fwd = LstmParams.init(hidden_size, embed_size, rng)
        bwd = LstmParams.init(hidden_size, embed_size, rng)
        ko = 1.0 / np.sqrt(2 * hidden_size)
        out_W = rng.uniform(-ko, ko, size=(n_outputs, 2 * hidden_size))
        out_b = np.zeros(n_outputs)
        return cls(emb, fwd, bwd, out_W, out_b, dropout_rate)

    def parameters(self):
        p = {"embedding": self.embedding, "out_W": self.out_W,
             "out_b": self.out_b}
        p.update({f"fwd.{k}": a for k, a in self.fwd.arrays().items()})
        p.update({f"bwd.{k}": a for k, a in self.bwd.arrays().items()})
        return p

    def forward(self, tokens, lengths=None, train_rng=None):
        """Posteriors for a (B, T) token batch; returns (probs, Tape)."""
        tokens = np.asarray(tokens, dtype=np.int64)
        B, T = tokens.shape
        if lengths is None:
            lengths = np.full(B, T, dtype=np.int64)
        X = self.embedding[tokens]                      # (B, T, E)
        h_f, cache_f = lstm_forward(self.fwd, X, lengths)
        Xr = reverse_within_lengths(X, lengths)
        h_b, cache_b = lstm_forward(self.bwd, Xr, lengths)
        h = np.concatenate([h_f, h_b], axis=1)          # (B, 2H)
        if train_rng is not None and self.dropout_rate > 0.0:
            mask = dropout_mask(h.shape, self.dropout_rate, train_rng)
        else:
            mask = None
        h_drop = h if mask is None else h * mask
        probs = dense_forward(self.out_W, self.out_b, h_drop, "sigmoid")
        tape = Tape(cache={"tokens": tokens, "lengths": lengths,
                           "cache_f": cache_f, "cache_b": cache_b,
                           "h_drop": h_drop, "mask": mask, "probs": probs})
        return probs, tape

    def backward(self, tape: Tape, targets):
        """Gradients of mean BCE(probs, targets) w.r.t. every parameter."""
        c = tape.consume()
        probs = c["probs"]
        lengths = c["lengths"]
        H = self.fwd.hidden_size
        dz = bce_sigmoid_grad(probs, targets)           # fused sigmoid+BCE
        dout_W = dz.T @ c["h_drop"]
        dout_b = dz.sum(axis=0)
        dh = dz @ self.out_W
        if c["mask"] is not None:
            dh = dh * c["mask"]
        dX_f, grads_f = lstm_backward(self.fwd, c["cache_f"], dh[:, :H])
        dXr_b, grads_b = lstm_backward(self.bwd, c["cache_b"], dh[:, H:])
        dX = dX_f + reverse_within_lengths(dXr_b, lengths)
        d_emb = np.zeros_like(self.embedding)
        np.add.at(d_emb, c["tokens"], dX)
        grads = {"embedding": d_emb, "out_W": dout_W, "out_b": dout_b}
        grads.update({f"fwd.{k}": g for k, g in grads_f.items()})
        grads.update({f"bwd.{k}": g for k, g in grads_b.items()})
        return grads


class MlpClassifier:
    """Single hidden relu layer -> dense sigmoid; the feature-space head."""

    def __init__(self, W1, b1, W2, b2):
        self.W1 = W1
        self.b1 = b1
        self.W2 = W2
        self.b2 = b2

    @classmethod
    def init(cls, n_inputs, n_hidden, n_outputs, rng):
        k1 = 1.0 / np.sqrt(n_inputs)
        k2 = 1.0 / np.sqrt(n_hidden)
        return cls(rng.uniform(-k1, k1, size=(n_hidden, n_inputs)),
                   np.zeros(n_hidden),
                   rng.uniform(-k2, k2, size=(n_outputs, n_hidden)),
                   np.zeros(n_outputs))

    def parameters(self):
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        hidden = dense_forward(self.W1, self.b1, x, "relu")
        probs = dense_forward(self.W2, self.b2, hidden, "sigmoid")
        return probs, Tape(cache={"x": x, "hidden": hidden, "probs": probs})

    def backward(self, tape: Tape, targets):
        c = tape.consume()
        dz = bce_sigmoid_grad(c["probs"], targets)
        dh = dz @ self.W2
        dW2 = dz.T @ c["hidden"] if dz.ndim > 1 else np.outer(dz, c["hidden"])
        db2 = dz.sum(axis=0) if dz.ndim > 1 else dz
        dx, dW1, db1 = dense_backward(self.W1, c["x"], c["hidden"], dh, "relu")
        return {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2}
