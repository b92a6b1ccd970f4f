"""Differentiable sequence experts and their product.

An expert maps a one-hot sequence to a real score and is differentiable on the
continuous relaxation of the one-hot grid; gradients are always taken at the
one-hot point.  The product of experts combines unsupervised scores f_i and
supervised scores g_j into

    log p(x) = sum_i f_i(x) + lambda * sum_j g_j(x) - log Z

with the normalizer left implicit (module ``oracle`` computes it exactly on
small instances).

The Potts expert scores a variant against a cached wild-type energy

    H(x) = sum_i h_i . x_i + sum_{i,j} x_i^T J_ij x_j

with J a full unsymmetrized L x L x V x V tensor.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateSystem,
    EmptyPool,
    ParseError,
    ShapeMismatch,
)
from .seqspace import OneHotSequence, PermutationMap, Vocabulary, encode

UNSUPERVISED = "unsupervised"
SUPERVISED = "supervised"
_ROLES = (UNSUPERVISED, SUPERVISED)


def _check_role(role: str):
    if role not in _ROLES:
        raise ValueError(f"role must be one of {_ROLES}, got {role!r}")


def _check_finite(name: str, arr: np.ndarray):
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")


# ---------------------------------------------------------------------------
# Parameter records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PottsParams:
    """Field terms h (L x V), couplings J (L x L x V x V), cached WT energy."""

    h: np.ndarray
    J: np.ndarray
    wt_energy: float

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64)
        J = np.asarray(self.J, dtype=np.float64)
        if h.ndim != 2:
            raise ShapeMismatch(f"h must be L x V, got {h.shape}")
        L, V = h.shape
        if J.shape != (L, L, V, V):
            raise ShapeMismatch(f"J must be {(L, L, V, V)}, got {J.shape}")
        _check_finite("h", h)
        _check_finite("J", J)
        if not np.isfinite(self.wt_energy):
            raise ValueError("wt_energy must be finite")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "J", J)

    @classmethod
    def for_wild_type(cls, h: np.ndarray, J: np.ndarray, wt: OneHotSequence) -> "PottsParams":
        """Build params whose score zero-point is the given wild type."""
        raw = cls(h, J, 0.0)
        return replace(raw, wt_energy=potts_energy(wt, raw))

    @property
    def shape(self) -> tuple[int, int]:
        return self.h.shape


@dataclass(frozen=True)
class LinearExpertParams:
    """Affine score <w, x> + b on the flattened one-hot grid."""

    w: np.ndarray
    b: float

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 2:
            raise ShapeMismatch(f"w must be L x V, got {w.shape}")
        _check_finite("w", w)
        if not np.isfinite(self.b):
            raise ValueError("b must be finite")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))

    @property
    def shape(self) -> tuple[int, int]:
        return self.w.shape


@dataclass(frozen=True)
class MlpExpertParams:
    """Fully connected tanh network from the flattened grid to a scalar.

    weights[k] has shape (n_k, n_{k-1}); the last layer is linear with a
    single output unit, all earlier layers apply tanh.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.asarray(b, dtype=np.float64) for b in self.biases)
        if len(ws) < 2:
            raise ShapeMismatch("need at least one hidden layer and an output layer")
        if len(ws) != len(bs):
            raise ShapeMismatch("weights and biases must pair up")
        for k, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeMismatch(f"layer {k} shapes disagree: {w.shape} vs {b.shape}")
            if k > 0 and w.shape[1] != ws[k - 1].shape[0]:
                raise ShapeMismatch(f"layer {k} input {w.shape[1]} != layer {k-1} output")
            _check_finite(f"weights[{k}]", w)
            _check_finite(f"biases[{k}]", b)
        if ws[-1].shape[0] != 1:
            raise ShapeMismatch("output layer must have a single unit")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @classmethod
    def random(cls, length: int, vocab_size: int, hidden: tuple[int, ...],
               rng: np.random.Generator, scale: float = 0.5) -> "MlpExpertParams":
        sizes = (length * vocab_size, *hidden, 1)
        ws, bs = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            ws.append(rng.normal(0.0, scale / np.sqrt(n_in), size=(n_out, n_in)))
            bs.append(rng.normal(0.0, scale, size=n_out))
        return cls(tuple(ws), tuple(bs))


# ---------------------------------------------------------------------------
# Potts score
# ---------------------------------------------------------------------------

def potts_energy(x: OneHotSequence, p: PottsParams) -> float:
    """H(x) as the unrestricted double sum over the full coupling tensor."""
    if x.matrix.shape != p.shape:
        raise ShapeMismatch(f"sequence {x.matrix.shape} vs params {p.shape}")
    t = x.tokens
    L = x.length
    idx = np.arange(L)
    field = p.h[idx, t].sum()
    pair = p.J[idx[:, None], idx[None, :], t[:, None], t[None, :]].sum()
    return float(field + pair)


def potts_score_and_grad(x: OneHotSequence, p: PottsParams) -> tuple[float, np.ndarray]:
    """Score H(x) - H(WT) and the exact relaxed-cell gradient of H.

    grad[i, a] = h[i, a] + sum_j J[i, j, a, t_j] + sum_j J[j, i, t_j, a]
    """
    value = potts_energy(x, p) - p.wt_energy
    t = x.tokens
    idx = np.arange(x.length)
    # row/column coupling pulls; axis 0 of each gather runs over the partner j
    from_rows = p.J[:, idx, :, t].sum(axis=0)
    from_cols = p.J[idx, :, t, :].sum(axis=0)
    grad = p.h + from_rows + from_cols
    return value, grad


# ---------------------------------------------------------------------------
# Expert handles
# ---------------------------------------------------------------------------

class Expert:
    """Shared surface of all expert kinds: a role, a shape, score-and-grad."""

    kind = "abstract"

    def __init__(self, role: str):
        _check_role(role)
        self.role = role

    @property
    def shape(self) -> tuple[int, int]:
        raise NotImplementedError

    def score_and_grad(self, x: OneHotSequence) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def score(self, x: OneHotSequence) -> float:
        return self.score_and_grad(x)[0]

    def _check_shape(self, x: OneHotSequence):
        if x.matrix.shape != self.shape:
            raise ShapeMismatch(f"sequence {x.matrix.shape} vs expert {self.shape}")


class PottsExpert(Expert):
    kind = "potts"

    def __init__(self, params: PottsParams, role: str = UNSUPERVISED):
        super().__init__(role)
        self.params = params

    @property
    def shape(self) -> tuple[int, int]:
        return self.params.shape

    def score_and_grad(self, x: OneHotSequence) -> tuple[float, np.ndarray]:
        return potts_score_and_grad(x, self.params)

    def score(self, x: OneHotSequence) -> float:
        return potts_energy(x, self.params) - self.params.wt_energy


class LinearExpert(Expert):
    kind = "linear"

    def __init__(self, params: LinearExpertParams, role: str = SUPERVISED):
        super().__init__(role)
        self.params = params

    @property
    def shape(self) -> tuple[int, int]:
        return self.params.shape

    def score_and_grad(self, x: OneHotSequence) -> tuple[float, np.ndarray]:
        return self.score(x), self.params.w.copy()

    def score(self, x: OneHotSequence) -> float:
        self._check_shape(x)
        w = self.params.w
        return float(w[np.arange(x.length), x.tokens].sum() + self.params.b)


class MlpExpert(Expert):
    kind = "mlp"

    def __init__(self, params: MlpExpertParams, length: int, vocab_size: int,
                 role: str = SUPERVISED):
        super().__init__(role)
        if params.input_dim != length * vocab_size:
            raise ShapeMismatch(
                f"network expects {params.input_dim} inputs, grid has {length * vocab_size}"
            )
        self.params = params
        self._shape = (length, vocab_size)

    @property
    def shape(self) -> tuple[int, int]:
        return self._shape

    def _forward(self, x: OneHotSequence) -> tuple[float, list[np.ndarray]]:
        self._check_shape(x)
        z = x.matrix.astype(np.float64).ravel()
        hidden = []
        p = self.params
        for w, b in zip(p.weights[:-1], p.biases[:-1]):
            z = np.tanh(w @ z + b)
            hidden.append(z)
        y = float((p.weights[-1] @ z + p.biases[-1])[0])
        return y, hidden

    def score(self, x: OneHotSequence) -> float:
        return self._forward(x)[0]

    def score_and_grad(self, x: OneHotSequence) -> tuple[float, np.ndarray]:
        y, hidden = self._forward(x)
        p = self.params
        d = p.weights[-1][0].copy()
        for w, z in zip(reversed(p.weights[:-1]), reversed(hidden)):
            d = (d * (1.0 - z * z)) @ w
        return y, d.reshape(self._shape)


class EnsembleExpert(Expert):
    """Arithmetic mean of members sharing one role and shape."""

    kind = "ensemble"

    def __init__(self, members):
        members = tuple(members)
        if not members:
            raise ValueError("ensemble needs at least one member")
        super().__init__(members[0].role)
        shape = members[0].shape
        for m in members[1:]:
            if m.role != self.role:
                raise ValueError("ensemble members must share a role")
            if m.shape != shape:
                raise ShapeMismatch("ensemble members must share (L, V)")
        self.members = members

    @property
    def shape(self) -> tuple[int, int]:
        return self.members[0].shape

    def score_and_grad(self, x: OneHotSequence) -> tuple[float, np.ndarray]:
        values, grads = zip(*(m.score_and_grad(x) for m in self.members))
        return float(np.mean(values)), np.mean(grads, axis=0)

    def score(self, x: OneHotSequence) -> float:
        return float(np.mean([m.score(x) for m in self.members]))


# ---------------------------------------------------------------------------
# Product of experts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProductOfExperts:
    """log p(x) = sum_i f_i(x) + lam * sum_j g_j(x), up to the normalizer."""

    unsupervised: tuple[Expert, ...] = ()
    supervised: tuple[Expert, ...] = ()
    lam: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "unsupervised", tuple(self.unsupervised))
        object.__setattr__(self, "supervised", tuple(self.supervised))
        if not self.unsupervised and not self.supervised:
            raise ValueError("need at least one expert")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        for e in self.unsupervised:
            if e.role != UNSUPERVISED:
                raise ValueError(f"{e.kind} expert has role {e.role}, expected unsupervised")
        for e in self.supervised:
            if e.role != SUPERVISED:
                raise ValueError(f"{e.kind} expert has role {e.role}, expected supervised")
        shapes = {e.shape for e in self.unsupervised + self.supervised}
        if len(shapes) != 1:
            raise ShapeMismatch(f"experts disagree on (L, V): {sorted(shapes)}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.unsupervised + self.supervised)[0].shape

    def with_lambda(self, lam: float) -> "ProductOfExperts":
        return replace(self, lam=float(lam))

    def score_and_grad(self, x: OneHotSequence) -> tuple[float, np.ndarray]:
        value = 0.0
        grad = np.zeros(self.shape)
        for e in self.unsupervised:
            v, g = e.score_and_grad(x)
            value += v
            grad += g
        for e in self.supervised:
            v, g = e.score_and_grad(x)
            value += self.lam * v
            grad += self.lam * g
        return value, grad

    def score(self, x: OneHotSequence) -> float:
        value = sum(e.score(x) for e in self.unsupervised)
        value += self.lam * sum(e.score(x) for e in self.supervised)
        return float(value)

    def unsupervised_sum(self, x: OneHotSequence) -> float:
        return float(sum(e.score(x) for e in self.unsupervised))

    def supervised_sum(self, x: OneHotSequence) -> float:
        return float(sum(e.score(x) for e in self.supervised))


# ---------------------------------------------------------------------------
# Supervised fitting and lambda calibration
# ---------------------------------------------------------------------------

def fit_linear_expert(train, ridge: float) -> LinearExpertParams:
    """Closed-form ridge regression on flattened one-hot features.

    The bias column is unpenalized.  The regularized normal matrix is
    positive definite for any ridge > 0; at ridge = 0 the one-hot columns of
    each position sum to the bias column, so the system is singular and
    DegenerateSystem is raised.
    """
    train = list(train)
    if not train:
        raise ValueError("need at least one training example")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    shape = train[0][0].matrix.shape
    for x, _ in train:
        if x.matrix.shape != shape:
            raise ShapeMismatch("training sequences disagree on (L, V)")
    n_feat = shape[0] * shape[1]
    phi = np.stack([x.matrix.astype(np.float64).ravel() for x, _ in train])
    a = np.hstack([phi, np.ones((len(train), 1))])
    y = np.array([float(v) for _, v in train])
    m = a.T @ a
    m[np.arange(n_feat), np.arange(n_feat)] += ridge
    try:
        theta = np.linalg.solve(m, a.T @ y)
    except np.linalg.LinAlgError as exc:
        raise DegenerateSystem(f"normal matrix is singular at ridge={ridge}") from exc
    return LinearExpertParams(w=theta[:-1].reshape(shape), b=float(theta[-1]))


@dataclass(frozen=True)
class LambdaGrid:
    """Candidate weights for the supervised experts."""

    values: tuple[float, ...] = (0.5, 1.0, 3.0, 5.0, 15.0)

    def __post_init__(self):
        vals = tuple(sorted(float(v) for v in self.values))
        if not vals:
            raise ValueError("grid must be non-empty")
        if any(v < 0 or not np.isfinite(v) for v in vals):
            raise ValueError("grid values must be finite and >= 0")
        object.__setattr__(self, "values", vals)


def _pool_stats(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.array([v.min(), v.max(), v.mean()])


def calibrate_lambda(grid: LambdaGrid, low_pool, high_pool, poe: ProductOfExperts) -> float:
    """Pick the grid lambda whose scaled supervised stats best match the
    unsupervised stats over the pooled variants.

    Matches {min, max, mean} of sum_i f_i against lambda * {min, max, mean}
    of sum_j g_j; ties go to the smaller lambda.
    """
    low_pool, high_pool = list(low_pool), list(high_pool)
    if not low_pool or not high_pool:
        raise EmptyPool("both calibration pools must be non-empty")
    pool = [x for x, _ in low_pool + high_pool]
    s_u = _pool_stats([poe.unsupervised_sum(x) for x in pool])
    s_g = _pool_stats([poe.supervised_sum(x) for x in pool])
    best_lam, best_obj = None, np.inf
    for lam in grid.values:  # ascending, so strict < keeps the smaller lambda on ties
        obj = np.abs(s_u - lam * s_g).sum()
        if obj < best_obj:
            best_lam, best_obj = lam, obj
    return float(best_lam)


# ---------------------------------------------------------------------------
# Parameter files and labeled data
# ---------------------------------------------------------------------------

def _token_order_string(d) -> str:
    raw = d["token_order"]
    return str(raw.item() if hasattr(raw, "item") else raw)


def save_potts_params(path, h: np.ndarray, J: np.ndarray, token_order: str):
    np.savez(path, h=np.asarray(h), J=np.asarray(J), token_order=np.array(token_order))


def load_potts_params(path, vocab: Vocabulary, wt: OneHotSequence) -> PottsParams:
    """Load h/J arrays and align their token columns to the vocabulary."""
    with np.load(path) as d:
        h, J = d["h"], d["J"]
        order = _token_order_string(d)
    pmap = PermutationMap.between(vocab, order)
    cols = np.asarray(pmap.mapping)
    h = h[:, cols]
    J = J[:, :, cols[:, None], cols[None, :]]
    return PottsParams.for_wild_type(h, J, wt)


def save_linear_params(path, params: LinearExpertParams, token_order: str):
    np.savez(path, w=params.w, b=np.array(params.b), token_order=np.array(token_order))


def load_linear_params(path, vocab: Vocabulary) -> LinearExpertParams:
    with np.load(path) as d:
        w, b = d["w"], float(d["b"])
        order = _token_order_string(d)
    pmap = PermutationMap.between(vocab, order)
    return LinearExpertParams(w=w[:, np.asarray(pmap.mapping)], b=b)


def save_mlp_params(path, params: MlpExpertParams, token_order: str):
    arrays = {"n_layers": np.array(len(params.weights)), "token_order": np.array(token_order)}
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"w{k}"] = w
        arrays[f"b{k}"] = b
    np.savez(path, **arrays)


def load_mlp_params(path, vocab: Vocabulary, length: int) -> MlpExpertParams:
    with np.load(path) as d:
        n = int(d["n_layers"])
        order = _token_order_string(d)
        ws = [d[f"w{k}"] for k in range(n)]
        bs = [d[f"b{k}"] for k in range(n)]
    pmap = PermutationMap.between(vocab, order)
    cols = np.asarray(pmap.mapping)
    first = ws[0].reshape(ws[0].shape[0], length, pmap.model_size)[:, :, cols]
    ws[0] = first.reshape(ws[0].shape[0], length * len(vocab))
    return MlpExpertParams(tuple(ws), tuple(bs))


def read_labeled_csv(path, vocab: Vocabulary) -> list[tuple[OneHotSequence, float]]:
    """Read `sequence,activity` rows into encoded training pairs."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        for required in ("sequence", "activity"):
            if required not in fields:
                raise ParseError(1, f"missing column {required!r}")
        extra = [f for f in fields if f not in ("sequence", "activity")]
        if extra:
            raise ParseError(1, f"unexpected columns {extra}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                activity = float(row["activity"])
            except (TypeError, ValueError):
                raise ParseError(lineno, f"bad activity value {row['activity']!r}") from None
            rows.append((encode(row["sequence"], vocab), activity))
    if not rows:
        raise ParseError(None, f"no data rows in {path}")
    return rows
