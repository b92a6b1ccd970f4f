"""Model adapters: the scoring side of the wire protocol.

An adapter owns a fixed sequence length, a model vocabulary, and a batch
score-and-gradient evaluation. Token indices arriving over the wire are
already in the model's token order; vocabulary translation is the client's
job (it builds a permutation from the info handshake).
"""

from __future__ import annotations

import numpy as np

from .mlm import mlm_delta_score, reference_gradient


class ModelAdapter:
    """Shape metadata plus a batched score/gradient evaluation."""

    length: int
    vocab_size: int
    token_order: str

    def batch(self, sequences) -> tuple[list[float], list[np.ndarray]]:
        raise NotImplementedError


class LinearAdapter(ModelAdapter):
    """Affine score over the one-hot grid; the gradient is the weight grid.

    The per-sequence score is evaluated as w[arange(L), tokens].sum() + b so
    that values match an in-process affine expert bit for bit.
    """

    def __init__(self, w: np.ndarray, b: float, token_order: str):
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError(f"w must be L x V, got {w.shape}")
        if w.shape[1] != len(token_order):
            raise ValueError(f"w has {w.shape[1]} columns for "
                             f"{len(token_order)} tokens")
        if len(set(token_order)) != len(token_order):
            raise ValueError("token_order has repeated symbols")
        self.w = w
        self.b = float(b)
        self.length, self.vocab_size = w.shape
        self.token_order = token_order

    @classmethod
    def from_npz(cls, path) -> "LinearAdapter":
        with np.load(path, allow_pickle=False) as data:
            return cls(data["w"], float(data["b"]), str(data["token_order"]))

    def batch(self, sequences) -> tuple[list[float], list[np.ndarray]]:
        rows = np.arange(self.length)
        values = [float(self.w[rows, np.asarray(seq)].sum() + self.b)
                  for seq in sequences]
        return values, [self.w for _ in sequences]


def corpus_adapter() -> LinearAdapter:
    """The fixed linear model behind the conformance corpus.

    Weights are quarter-integers and the bias is 1/4, so every score is an
    exact binary fraction and serialization is byte-stable across platforms.
    """
    length, vocab_size = 5, 6
    w = np.empty((length, vocab_size), dtype=np.float64)
    for l in range(length):
        for v in range(vocab_size):
            w[l, v] = ((3 * l + 5 * v) % 7 - 3) / 4
    return LinearAdapter(w, 0.25, "ACDEFG")


class MlmAdapter(ModelAdapter):
    """Serve a host logits function as a delta score against a wild type."""

    def __init__(self, logits_fn, wt, token_order: str):
        self.logits_fn = logits_fn
        self.wt = list(wt)
        self.length = len(self.wt)
        self.vocab_size = len(token_order)
        self.token_order = token_order

    def batch(self, sequences) -> tuple[list[float], list[np.ndarray]]:
        values = [mlm_delta_score(seq, self.wt, self.logits_fn)
                  for seq in sequences]
        grads = [reference_gradient(self.logits_fn, seq, self.vocab_size)
                 for seq in sequences]
        return values, grads
