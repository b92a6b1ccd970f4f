"""Brute-force ground truth for small instances.

Everything here trades scale for certainty: exact normalization by full
enumeration, stationary distributions by long chain runs, and transition
kernels by path enumeration or Monte Carlo.  Used by the test suite and the
CLI verify subcommand; refuses instances too large to enumerate.
"""
from __future__ import annotations

import itertools
import math
import os
import tempfile
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import NonLinearExpertPresent, ShapeMismatch, TooLargeToEnumerate
from .experts import ProductOfExperts
from .samplers import SamplerConfig, exact_lb_proposal, proposal_logits
from .seqspace import OneHotSequence, Substitution, apply_substitution

STATE_CAP = 1_000_000
PATH_CAP = 100_000


@dataclass(frozen=True)
class EnumeratedDistribution:
    """exp(score)/Z over all V^L states in lexicographic token order."""

    length: int
    vocab_size: int
    log_weights: np.ndarray
    log_z: float

    def __post_init__(self):
        if self.log_weights.shape != (self.size,):
            raise ShapeMismatch(
                f"expected {self.size} weights, got {self.log_weights.shape}"
            )
        total = np.exp(self.log_weights - self.log_z).sum()
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"probabilities sum to {total!r}")

    @property
    def size(self) -> int:
        return self.vocab_size ** self.length

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_weights - self.log_z)

    def index_of(self, x: OneHotSequence) -> int:
        out = 0
        for t in x.tokens:
            out = out * self.vocab_size + int(t)
        return out

    def state_at(self, index: int) -> OneHotSequence:
        tokens = np.empty(self.length, dtype=np.int64)
        for i in range(self.length - 1, -1, -1):
            index, tokens[i] = divmod(index, self.vocab_size)
        return OneHotSequence.from_tokens(tokens, self.vocab_size)

    @property
    def states(self):
        for tokens in itertools.product(range(self.vocab_size), repeat=self.length):
            yield OneHotSequence.from_tokens(np.array(tokens, dtype=np.int64),
                                             self.vocab_size)


def enumerate_distribution(poe: ProductOfExperts, length: int,
                           vocab_size: int) -> EnumeratedDistribution:
    """Score every state; normalize by a stable log-sum-exp."""
    n = vocab_size ** length
    if n > STATE_CAP:
        raise TooLargeToEnumerate(f"{vocab_size}^{length} states exceed {STATE_CAP}")
    lw = np.empty(n)
    for i, tokens in enumerate(itertools.product(range(vocab_size), repeat=length)):
        x = OneHotSequence.from_tokens(np.array(tokens, dtype=np.int64), vocab_size)
        lw[i] = poe.score(x)
    return EnumeratedDistribution(length, vocab_size, lw, float(logsumexp(lw)))


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeMismatch(f"{p.shape} vs {q.shape}")
    return float(0.5 * np.abs(p - q).sum())


def empirical_stationary(dist: EnumeratedDistribution, step, rng: np.random.Generator,
                         burn_in: int, n_samples: int) -> np.ndarray:
    """Visit frequencies over all states; step(rng) advances the chain once."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    for _ in range(burn_in):
        step(rng)
    counts = np.zeros(dist.size)
    for _ in range(n_samples):
        counts[dist.index_of(step(rng))] += 1
    return counts / n_samples


@dataclass(frozen=True)
class KernelEstimate:
    """Empirical one-step transition law out of a fixed source state."""

    source: OneHotSequence
    counts: dict
    sample_count: int

    def __post_init__(self):
        if sum(self.counts.values()) != self.sample_count:
            raise ValueError("transition counts must sum to the sample count")

    def frequency(self, tokens) -> float:
        return self.counts.get(tuple(int(t) for t in tokens), 0) / self.sample_count


def estimate_kernel(x: OneHotSequence, advance, n_samples: int,
                    rng: np.random.Generator) -> KernelEstimate:
    """Replay one transition from x many times; advance(x, rng) -> next state."""
    counts = Counter()
    for _ in range(n_samples):
        counts[tuple(int(t) for t in advance(x, rng).tokens)] += 1
    return KernelEstimate(x, dict(counts), n_samples)


def _normalized_logq(grad: np.ndarray, x: OneHotSequence, cfg: SamplerConfig) -> np.ndarray:
    logits = proposal_logits(grad, x, cfg)
    return logits - logsumexp(logits.ravel())


def single_step_kernel(x: OneHotSequence, poe: ProductOfExperts,
                       cfg: SamplerConfig) -> dict:
    """Analytic one-substitution MH kernel (proposal times acceptance).

    Returns token-tuple -> probability including the self transition; only
    meaningful for max_path_length = 1.
    """
    value_x, grad_x = poe.score_and_grad(x)
    logq_x = _normalized_logq(grad_x, x, cfg)
    kernel = {}
    moved = 0.0
    for pos in range(x.length):
        for tok in range(x.vocab_size):
            if not np.isfinite(logq_x[pos, tok]) or tok == x.token_at(pos):
                continue
            y = apply_substitution(x, Substitution(pos, tok))
            value_y, grad_y = poe.score_and_grad(y)
            logq_back = _normalized_logq(grad_y, y, cfg)[pos, x.token_at(pos)]
            log_ratio = (value_y - value_x) + logq_back - logq_x[pos, tok]
            accept = 1.0 if log_ratio >= 0 else math.exp(log_ratio)
            flow = math.exp(logq_x[pos, tok]) * accept
            kernel[tuple(int(t) for t in y.tokens)] = flow
            moved += flow
    kernel[tuple(int(t) for t in x.tokens)] = 1.0 - moved
    return kernel


def detailed_balance_residual(poe: ProductOfExperts, dist: EnumeratedDistribution,
                              cfg: SamplerConfig) -> float:
    """max |p(x)K(x,y) - p(y)K(y,x)| over all single-substitution pairs."""
    probs = dist.probabilities
    kernels = {}
    for i in range(dist.size):
        x = dist.state_at(i)
        kernels[tuple(int(t) for t in x.tokens)] = (i, single_step_kernel(x, poe, cfg))
    worst = 0.0
    for x_key, (i, k_x) in kernels.items():
        for y_key, flow_xy in k_x.items():
            if y_key == x_key:
                continue
            j, k_y = kernels[y_key]
            gap = abs(probs[i] * flow_xy - probs[j] * k_y.get(x_key, 0.0))
            worst = max(worst, gap)
    return worst


def _require_all_linear(poe: ProductOfExperts):
    def walk(expert):
        if expert.kind == "linear":
            return
        if expert.kind == "ensemble":
            for member in expert.members:
                walk(member)
            return
        raise NonLinearExpertPresent(f"{expert.kind} expert breaks the K=0 premise")

    for expert in poe.unsupervised + poe.supervised:
        walk(expert)


class _CachedCategorical:
    """cdf-backed categorical over proposal cells for fast repeated draws."""

    __slots__ = ("cells", "log_probs", "cdf")

    def __init__(self, log_grid: np.ndarray):
        flat = log_grid.ravel()
        finite = np.flatnonzero(np.isfinite(flat))
        self.cells = [divmod(int(k), log_grid.shape[1]) for k in finite]
        self.log_probs = flat[finite]
        self.cdf = np.cumsum(np.exp(self.log_probs))
        self.cdf /= self.cdf[-1]

    def sample(self, rng: np.random.Generator) -> int:
        return int(np.searchsorted(self.cdf, rng.random(), side="right"))


@dataclass(frozen=True)
class KernelReport:
    """Comparison of the frozen-gradient path kernel against the exact one."""

    mode: str
    max_discrepancy: float
    sigma_units: float | None
    taylor: dict
    exact: dict
    n_paths: int | None
    n_samples: int | None

    def as_lines(self) -> list[str]:
        lines = [f"mode={self.mode}", f"terminals={len(self.taylor)}",
                 f"max_discrepancy={self.max_discrepancy:.17g}"]
        if self.n_paths is not None:
            lines.append(f"n_paths={self.n_paths}")
        if self.n_samples is not None:
            lines.append(f"n_samples={self.n_samples}")
        if self.sigma_units is not None:
            lines.append(f"sigma_units={self.sigma_units:.17g}")
        return lines


def _branch_count(x: OneHotSequence, cfg: SamplerConfig) -> int:
    movable = x.length - sum(1 for p in cfg.frozen_positions if p < x.length)
    per_position = x.vocab_size if cfg.include_identity_moves else x.vocab_size - 1
    return movable * per_position


def _path_count(x: OneHotSequence, cfg: SamplerConfig) -> int:
    b = _branch_count(x, cfg)
    return sum(b ** r for r in range(1, cfg.max_path_length + 1))


def _proposal_pair(state: OneHotSequence, grad0: np.ndarray,
                   poe: ProductOfExperts, cfg: SamplerConfig, cache: dict):
    key = tuple(int(t) for t in state.tokens)
    if key not in cache:
        taylor = _normalized_logq(grad0, state, cfg)
        prop = exact_lb_proposal(state, poe, cfg)
        cache[key] = (taylor, prop.log_weights - prop.log_norm)
    return cache[key]


def _exact_path_distributions(x, grad0, poe, cfg, n_paths):
    taylor_out: dict = {}
    exact_out: dict = {}
    cache: dict = {}
    u = cfg.max_path_length

    def descend(state, depth, lp_taylor, lp_exact):
        key = tuple(int(t) for t in state.tokens)
        if depth >= 1:
            w = 1.0 / u
            taylor_out[key] = taylor_out.get(key, 0.0) + w * math.exp(lp_taylor)
            exact_out[key] = exact_out.get(key, 0.0) + w * math.exp(lp_exact)
        if depth == u:
            return
        taylor_grid, exact_grid = _proposal_pair(state, grad0, poe, cfg, cache)
        for pos in range(state.length):
            for tok in range(state.vocab_size):
                if not np.isfinite(taylor_grid[pos, tok]):
                    continue
                nxt = apply_substitution(state, Substitution(pos, tok))
                descend(nxt, depth + 1,
                        lp_taylor + taylor_grid[pos, tok],
                        lp_exact + exact_grid[pos, tok])

    descend(x, 0, 0.0, 0.0)
    gap = max(abs(taylor_out[k] - exact_out.get(k, 0.0)) for k in taylor_out)
    return KernelReport("exact", gap, None, taylor_out, exact_out, n_paths, None)


def _sampled_path_distributions(x, grad0, poe, cfg, n_samples, rng):
    taylor_cats: dict = {}
    exact_cats: dict = {}
    grid_cache: dict = {}

    def draw_terminal(use_taylor: bool) -> tuple:
        state = x
        for _ in range(int(rng.integers(1, cfg.max_path_length + 1))):
            key = tuple(int(t) for t in state.tokens)
            cats = taylor_cats if use_taylor else exact_cats
            if key not in cats:
                grids = _proposal_pair(state, grad0, poe, cfg, grid_cache)
                cats[key] = _CachedCategorical(grids[0] if use_taylor else grids[1])
            cat = cats[key]
            pos, tok = cat.cells[cat.sample(rng)]
            state = apply_substitution(state, Substitution(pos, tok))
        return tuple(int(t) for t in state.tokens)

    taylor_counts = Counter(draw_terminal(True) for _ in range(n_samples))
    exact_counts = Counter(draw_terminal(False) for _ in range(n_samples))
    taylor_out = {k: c / n_samples for k, c in taylor_counts.items()}
    exact_out = {k: c / n_samples for k, c in exact_counts.items()}
    gap = 0.0
    sigma_units = 0.0
    for key in set(taylor_out) | set(exact_out):
        p1 = taylor_out.get(key, 0.0)
        p2 = exact_out.get(key, 0.0)
        gap = max(gap, abs(p1 - p2))
        if taylor_counts[key] + exact_counts[key] < 10:
            continue  # too few hits for a meaningful z-score
        pooled = (p1 + p2) / 2.0
        sigma = math.sqrt(pooled * (1.0 - pooled) * 2.0 / n_samples)
        sigma_units = max(sigma_units, abs(p1 - p2) / sigma)
    return KernelReport("monte_carlo", gap, sigma_units, taylor_out, exact_out,
                        None, n_samples)


def kernel_ratio_check(x: OneHotSequence, poe: ProductOfExperts, cfg: SamplerConfig,
                       n_samples: int = 100_000,
                       rng: np.random.Generator | None = None) -> KernelReport:
    """Compare the frozen-origin-gradient path proposal with the exact one.

    With linear experts only, the two must agree: exactly when the path set
    is enumerated, within Monte Carlo error otherwise.
    """
    _require_all_linear(poe)
    _, grad0 = poe.score_and_grad(x)
    n_paths = _path_count(x, cfg)
    if n_paths <= PATH_CAP:
        return _exact_path_distributions(x, grad0, poe, cfg, n_paths)
    if rng is None:
        rng = np.random.default_rng(0)
    return _sampled_path_distributions(x, grad0, poe, cfg, n_samples, rng)


def format_value(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_report(path, items) -> None:
    """Write key=value lines atomically (temp file then rename)."""
    if hasattr(items, "items"):
        lines = [f"{k}={format_value(v)}" for k, v in items.items()]
    else:
        lines = list(items)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".report-")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write("\n".join(lines) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
