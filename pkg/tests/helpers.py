"""Shared test utilities: random instances and independent reference math.

The reference implementations here are deliberately written as plain scalar
loops so they share no code path with the package.
"""
from __future__ import annotations

import string

import numpy as np

from poesampler.experts import (
    LinearExpert,
    LinearExpertParams,
    PottsParams,
    ProductOfExperts,
    SUPERVISED,
    UNSUPERVISED,
)
from poesampler.seqspace import OneHotSequence, Vocabulary


def make_vocab(v: int) -> Vocabulary:
    return Vocabulary.from_string(string.ascii_uppercase[:v])


def constant_poe(length: int, vocab_size: int, value: float = 0.0) -> ProductOfExperts:
    """Flat target with an all-zero gradient."""
    params = LinearExpertParams(np.zeros((length, vocab_size)), value)
    return ProductOfExperts(unsupervised=(LinearExpert(params, role=UNSUPERVISED),))


def linear_pair_poe(rng: np.random.Generator, length: int, vocab_size: int,
                    lam: float = 1.0) -> ProductOfExperts:
    """One unsupervised and one supervised random linear expert."""
    f = LinearExpert(
        LinearExpertParams(rng.normal(size=(length, vocab_size)), 0.0), role=UNSUPERVISED
    )
    g = LinearExpert(
        LinearExpertParams(rng.normal(size=(length, vocab_size)), 0.0), role=SUPERVISED
    )
    return ProductOfExperts(unsupervised=(f,), supervised=(g,), lam=lam)


def random_sequence(rng: np.random.Generator, length: int, vocab_size: int) -> OneHotSequence:
    return OneHotSequence.from_tokens(rng.integers(0, vocab_size, size=length), vocab_size)


def random_potts(rng: np.random.Generator, wt: OneHotSequence, scale: float = 0.3) -> PottsParams:
    L, V = wt.matrix.shape
    h = rng.normal(0.0, scale, size=(L, V))
    J = rng.normal(0.0, scale, size=(L, L, V, V))
    return PottsParams.for_wild_type(h, J, wt)


def relaxed_potts_energy(X: np.ndarray, h: np.ndarray, J: np.ndarray) -> float:
    """Scalar-loop H on an arbitrary relaxed grid X."""
    L, V = X.shape
    total = 0.0
    for i in range(L):
        for a in range(V):
            total += h[i, a] * X[i, a]
    for i in range(L):
        for j in range(L):
            for a in range(V):
                for b in range(V):
                    total += X[i, a] * J[i, j, a, b] * X[j, b]
    return total


def central_fd_grad(f, X: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function over every grid cell."""
    X = X.astype(np.float64)
    out = np.zeros_like(X)
    for idx in np.ndindex(*X.shape):
        hi = X.copy()
        lo = X.copy()
        hi[idx] += eps
        lo[idx] -= eps
        out[idx] = (f(hi) - f(lo)) / (2.0 * eps)
    return out


def assert_grads_close(analytic: np.ndarray, reference: np.ndarray,
                       rtol: float = 1e-5, atol: float = 1e-8):
    np.testing.assert_allclose(analytic, reference, rtol=rtol, atol=atol)
