"""Sequence-space primitives: vocabularies, one-hot sequences, substitutions.

Sequences have a fixed length L over a vocabulary of V symbols and are stored
as dense L x V one-hot matrices.  All mutation and neighborhood operations are
expressed as single-position substitutions on that grid.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import OutOfBounds, ParseError, ShapeMismatch, UnknownSymbol

# Alphabetical amino-acid ordering used as the canonical protein vocabulary.
PROTEIN_TOKENS = "ACDEFGHIKLMNPQRSTVWY"


@dataclass(frozen=True)
class Vocabulary:
    """Ordered set of single-character symbols with index lookup."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) < 2:
            raise ValueError("vocabulary needs at least two symbols")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary symbols must be unique")
        for t in self.tokens:
            if not (isinstance(t, str) and len(t) == 1):
                raise ValueError(f"vocabulary symbols must be single characters, got {t!r}")
        object.__setattr__(self, "canonical_index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def from_string(cls, symbols: str) -> "Vocabulary":
        return cls(tuple(symbols))

    @classmethod
    def protein(cls) -> "Vocabulary":
        return cls.from_string(PROTEIN_TOKENS)

    def __len__(self) -> int:
        return len(self.tokens)

    def index(self, symbol: str) -> int:
        try:
            return self.canonical_index[symbol]
        except KeyError:
            raise UnknownSymbol(-1, symbol) from None

    def symbol(self, index: int) -> str:
        if not 0 <= index < len(self.tokens):
            raise OutOfBounds(f"token index {index} outside vocabulary of size {len(self.tokens)}")
        return self.tokens[index]


class OneHotSequence:
    """Immutable dense one-hot matrix for a fixed-length sequence.

    Values are 0/1 with exactly one 1 per row.  Instances hash and compare by
    token content so they can key dictionaries and sets.
    """

    __slots__ = ("_matrix", "_tokens")

    def __init__(self, matrix: np.ndarray):
        m = np.asarray(matrix)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 2:
            raise ShapeMismatch(f"one-hot matrix must be (L >= 1) x (V >= 2), got {m.shape}")
        if not np.isin(m, (0, 1)).all():
            raise ValueError("one-hot entries must be 0 or 1")
        if not (m.sum(axis=1) == 1).all():
            raise ValueError("every row must contain exactly one 1")
        m = m.astype(np.uint8)
        m.flags.writeable = False
        self._matrix = m
        tok = m.argmax(axis=1)
        tok.flags.writeable = False
        self._tokens = tok

    @classmethod
    def from_tokens(cls, tokens, vocab_size: int) -> "OneHotSequence":
        tok = np.asarray(tokens, dtype=np.int64)
        if tok.ndim != 1 or tok.size < 1:
            raise ShapeMismatch("token vector must be one-dimensional and non-empty")
        if tok.min() < 0 or tok.max() >= vocab_size:
            raise OutOfBounds(f"token index outside [0, {vocab_size})")
        return cls._from_valid_tokens(tok, vocab_size)

    @classmethod
    def _from_valid_tokens(cls, tok: np.ndarray, vocab_size: int) -> "OneHotSequence":
        # caller guarantees tok is a 1-d int64 array of in-range indices
        m = np.zeros((tok.size, vocab_size), dtype=np.uint8)
        m[np.arange(tok.size), tok] = 1
        m.flags.writeable = False
        tok = tok.copy()
        tok.flags.writeable = False
        obj = object.__new__(cls)
        obj._matrix = m
        obj._tokens = tok
        return obj

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def tokens(self) -> np.ndarray:
        return self._tokens

    @property
    def length(self) -> int:
        return self._matrix.shape[0]

    @property
    def vocab_size(self) -> int:
        return self._matrix.shape[1]

    def token_at(self, position: int) -> int:
        return int(self._tokens[position])

    def __eq__(self, other) -> bool:
        if not isinstance(other, OneHotSequence):
            return NotImplemented
        return self._matrix.shape == other._matrix.shape and bool(
            (self._tokens == other._tokens).all()
        )

    def __hash__(self) -> int:
        return hash((self._matrix.shape, self._tokens.tobytes()))

    def __repr__(self) -> str:
        return f"OneHotSequence(L={self.length}, V={self.vocab_size}, tokens={self._tokens.tolist()})"


@dataclass(frozen=True)
class Substitution:
    """Replace the token at one position with a new token index."""

    position: int
    token: int


@dataclass(frozen=True)
class PermutationMap:
    """Column alignment between a canonical vocabulary and a model vocabulary.

    ``mapping[a]`` is the model column holding canonical token ``a``.  Model
    vocabularies may be larger than the canonical one; the surplus columns are
    treated as zero padding.
    """

    source_order: tuple[str, ...]
    mapping: tuple[int, ...]
    pad_count: int

    def __post_init__(self):
        if len(set(self.mapping)) != len(self.mapping):
            raise ValueError("column mapping must be injective")
        v_model = len(self.source_order)
        if self.pad_count != v_model - len(self.mapping):
            raise ValueError("pad_count must equal V_model - V")
        for col in self.mapping:
            if not 0 <= col < v_model:
                raise OutOfBounds(f"mapped column {col} outside [0, {v_model})")

    @classmethod
    def between(cls, canonical: Vocabulary, model_order: str) -> "PermutationMap":
        source = tuple(model_order)
        if len(set(source)) != len(source):
            raise ValueError("model token order contains duplicates")
        lookup = {t: i for i, t in enumerate(source)}
        mapping = []
        for a, tok in enumerate(canonical.tokens):
            if tok not in lookup:
                raise UnknownSymbol(a, tok)
            mapping.append(lookup[tok])
        return cls(source, tuple(mapping), len(source) - len(canonical))

    @property
    def model_size(self) -> int:
        return len(self.source_order)


def encode(text: str, vocab: Vocabulary) -> OneHotSequence:
    """One-hot encode a string against a vocabulary."""
    tokens = []
    for pos, ch in enumerate(text):
        try:
            tokens.append(vocab.canonical_index[ch])
        except KeyError:
            raise UnknownSymbol(pos, ch) from None
    if not tokens:
        raise ShapeMismatch("cannot encode an empty sequence")
    return OneHotSequence.from_tokens(tokens, len(vocab))


def decode(x: OneHotSequence, vocab: Vocabulary) -> str:
    if x.vocab_size != len(vocab):
        raise ShapeMismatch(f"sequence has V={x.vocab_size} but vocabulary has {len(vocab)}")
    return "".join(vocab.tokens[t] for t in x.tokens)


def apply_substitution(x: OneHotSequence, sub: Substitution) -> OneHotSequence:
    """Return a new sequence with one position replaced.  Identity moves are legal."""
    if not 0 <= sub.position < x.length:
        raise OutOfBounds(f"position {sub.position} outside [0, {x.length})")
    if not 0 <= sub.token < x.vocab_size:
        raise OutOfBounds(f"token {sub.token} outside [0, {x.vocab_size})")
    tokens = x.tokens.copy()
    tokens[sub.position] = sub.token
    return OneHotSequence._from_valid_tokens(tokens, x.vocab_size)


def hamming_distance(a: OneHotSequence, b: OneHotSequence) -> int:
    if a.matrix.shape != b.matrix.shape:
        raise ShapeMismatch(f"shapes differ: {a.matrix.shape} vs {b.matrix.shape}")
    return int((a.tokens != b.tokens).sum())


def hamming_ball(x: OneHotSequence) -> Iterator[tuple[Substitution, OneHotSequence]]:
    """Yield the L*(V-1) sequences at Hamming distance exactly one from x."""
    for pos in range(x.length):
        cur = x.token_at(pos)
        for tok in range(x.vocab_size):
            if tok == cur:
                continue
            sub = Substitution(pos, tok)
            yield sub, apply_substitution(x, sub)


def remap_vocab(x: OneHotSequence, pmap: PermutationMap) -> OneHotSequence:
    """Re-express a sequence in a model vocabulary (permuted, possibly padded)."""
    if x.vocab_size != len(pmap.mapping):
        raise ShapeMismatch(
            f"sequence has V={x.vocab_size} but map covers {len(pmap.mapping)} columns"
        )
    mapping = np.asarray(pmap.mapping)
    m = np.zeros((x.length, pmap.model_size), dtype=np.uint8)
    m[np.arange(x.length), mapping[x.tokens]] = 1
    return OneHotSequence(m)


def gather_columns(grid: np.ndarray, pmap: PermutationMap) -> np.ndarray:
    """Pull the canonical columns out of an L x V_model grid (inverse of remap)."""
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.shape[1] != pmap.model_size:
        raise ShapeMismatch(f"expected L x {pmap.model_size} grid, got {grid.shape}")
    return grid[:, np.asarray(pmap.mapping)]


def read_fasta(path) -> str:
    """Read the first record of a FASTA file; bare sequence text is accepted too."""
    lines = Path(path).read_text().splitlines()
    seq: list[str] = []
    in_record = False
    for line in lines:
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            if in_record:
                break
            in_record = True
            continue
        seq.append(line.upper())
        if not in_record:
            in_record = True
    if not seq:
        raise ParseError(None, f"no sequence data in {path}")
    return "".join(seq)
