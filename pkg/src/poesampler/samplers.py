"""MCMC samplers over one-hot sequence space.

The main sampler proposes a short path of single-position substitutions per
MH step.  Forward steps share one gradient taken at the path origin; the
reverse probability reuses one gradient taken at the terminal.  Acceptance
always uses exact expert values at both endpoints, so each step costs exactly
two gradient and two value evaluations no matter how long the path is.

Baselines: the exact locally-balanced single-substitution sampler, annealed
random-substitution MH, one-shot random variant generation, and a relaxed
Langevin walk with straight-through gradients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ChainFailure, OutOfBounds, ShapeMismatch, TooLargeToEnumerate, NonFiniteState
from .experts import ProductOfExperts
from .metrics import ChainTrace
from .seqspace import OneHotSequence, Substitution, apply_substitution, hamming_distance

SAMPLER_CHOICES = ("ppde", "exact-lb", "sa", "random", "mala")

# mutation-count law shared by the annealing and random-sampling baselines:
# m ~ Poisson(mu - 1) + 1 with mu ~ Uniform(MU_LOW, MU_HIGH)
MU_LOW, MU_HIGH = 1.0, 2.5

ENUMERATION_CELL_CAP = 100_000


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs shared by the discrete samplers."""

    steps: int = 10_000
    max_path_length: int = 3
    include_identity_moves: bool = False
    frozen_positions: frozenset[int] = frozenset()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "frozen_positions", frozenset(self.frozen_positions))
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.max_path_length < 1:
            raise ValueError("max_path_length must be >= 1")
        if any(p < 0 for p in self.frozen_positions):
            raise OutOfBounds("frozen positions must be >= 0")

    def check_positions(self, length: int):
        bad = [p for p in self.frozen_positions if p >= length]
        if bad:
            raise OutOfBounds(f"frozen positions {sorted(bad)} outside [0, {length})")


@dataclass(frozen=True)
class AnnealSchedule:
    """Geometric temperature ladder T_k = max(T_final, T_init * decay^k)."""

    t_init: float = 1.0
    t_final: float = 1e-2
    decay: float = 1.0

    def __post_init__(self):
        if not (self.t_init > 0 and self.t_final > 0):
            raise ValueError("temperatures must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")

    @classmethod
    def geometric(cls, steps: int, t_init: float = 1.0, t_final: float = 1e-2) -> "AnnealSchedule":
        """Decay chosen so T reaches t_final after `steps` steps."""
        if steps < 1:
            raise ValueError("steps must be >= 1")
        if t_final > t_init:
            raise ValueError("t_final must not exceed t_init")
        return cls(t_init, t_final, (t_final / t_init) ** (1.0 / steps))

    def temperature(self, step_index: int) -> float:
        return max(self.t_final, self.t_init * self.decay ** step_index)


@dataclass(frozen=True)
class MalaConfig:
    """Step size and relaxation for the straight-through Langevin baseline."""

    step_size: float = 0.1
    tau: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.step_size < 0:
            raise ValueError("step_size must be >= 0")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")


@dataclass
class ChainState:
    """Current point of one chain plus its running best."""

    current: OneHotSequence
    current_logp: float
    step_index: int
    best_sequence: OneHotSequence
    best_logp: float
    best_step: int

    @classmethod
    def at(cls, x: OneHotSequence, poe: ProductOfExperts) -> "ChainState":
        logp = poe.score(x)
        return cls(x, logp, 0, x, logp, 0)

    def advanced(self, current: OneHotSequence, logp: float) -> "ChainState":
        step = self.step_index + 1
        if logp > self.best_logp:
            return ChainState(current, logp, step, current, logp, step)
        return ChainState(current, logp, step, self.best_sequence, self.best_logp, self.best_step)


@dataclass
class PathRecord:
    """A proposed chain of substitutions with its proposal log-probabilities."""

    origin: OneHotSequence
    terminal: OneHotSequence
    steps: tuple[Substitution, ...]
    forward_logq: float
    reverse_logq: float | None = None

    def __post_init__(self):
        if len(self.steps) < 1:
            raise ValueError("a path proposes at least one substitution")
        x = self.origin
        for s in self.steps:
            x = apply_substitution(x, s)
        if x != self.terminal:
            raise ValueError("steps applied to origin do not reach terminal")


@dataclass(frozen=True)
class StepOutcome:
    """What one MH step did."""

    accepted: bool
    path_length: int
    log_ratio: float
    proposed_logp: float


def proposal_logits(grad: np.ndarray, x: OneHotSequence, cfg: SamplerConfig) -> np.ndarray:
    """Logits of the one-substitution proposal softmax.

    logit(i, a) = (grad[i, a] - grad[i, current token]) / 2; frozen rows and
    (unless enabled) identity cells are -inf.  The grid feeds a categorical
    over all L*V cells.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != x.matrix.shape:
        raise ShapeMismatch(f"grad {grad.shape} vs sequence {x.matrix.shape}")
    cfg.check_positions(x.length)
    idx = np.arange(x.length)
    logits = (grad - grad[idx, x.tokens][:, None]) * 0.5
    if cfg.frozen_positions:
        logits[sorted(cfg.frozen_positions), :] = -np.inf
    if not cfg.include_identity_moves:
        logits[idx, x.tokens] = -np.inf
    return logits


def _flat_logsumexp(a: np.ndarray) -> float:
    # scipy's version carries array-API dispatch overhead; this sits in the
    # per-step hot loop
    m = a.max()
    if m == -np.inf:
        return -np.inf
    return float(m + math.log(np.exp(a - m).sum()))


def _sample_cell(logits: np.ndarray, rng: np.random.Generator) -> tuple[Substitution, float]:
    flat = logits.ravel()
    norm = _flat_logsumexp(flat)
    cdf = np.cumsum(np.exp(flat - norm))
    k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    k = min(k, flat.size - 1)
    pos, tok = divmod(k, logits.shape[1])
    return Substitution(pos, tok), float(flat[k] - norm)


def _movable_positions(length: int, cfg: SamplerConfig) -> int:
    return length - sum(1 for p in cfg.frozen_positions if p < length)


def _path_from_grad(x: OneHotSequence, grad: np.ndarray, cfg: SamplerConfig,
                    rng: np.random.Generator) -> PathRecord:
    path_len = int(rng.integers(1, cfg.max_path_length + 1))
    cur = x
    logq = 0.0
    steps = []
    for _ in range(path_len):
        logits = proposal_logits(grad, cur, cfg)
        sub, lq = _sample_cell(logits, rng)
        steps.append(sub)
        logq += lq
        cur = apply_substitution(cur, sub)
    return PathRecord(origin=x, terminal=cur, steps=tuple(steps), forward_logq=logq)


def _reverse_logq_from_grad(path: PathRecord, grad_terminal: np.ndarray,
                            cfg: SamplerConfig) -> float:
    states = [path.origin]
    for s in path.steps:
        states.append(apply_substitution(states[-1], s))
    total = 0.0
    for r in range(len(path.steps), 0, -1):
        logits = proposal_logits(grad_terminal, states[r], cfg)
        pos = path.steps[r - 1].position
        undo_token = states[r - 1].token_at(pos)
        total += float(logits[pos, undo_token] - _flat_logsumexp(logits.ravel()))
    return total


def propose_path(x: OneHotSequence, poe: ProductOfExperts, cfg: SamplerConfig,
                 rng: np.random.Generator) -> PathRecord:
    """Sample a path of Unif{1..U} substitutions using one gradient at x."""
    _, grad = poe.score_and_grad(x)
    return _path_from_grad(x, grad, cfg, rng)


def reverse_path_logq(path: PathRecord, poe: ProductOfExperts, cfg: SamplerConfig) -> float:
    """Log-probability of the reversed path under one gradient at the terminal."""
    _, grad = poe.score_and_grad(path.terminal)
    logq = _reverse_logq_from_grad(path, grad, cfg)
    path.reverse_logq = logq
    return logq


def _mh_accept(log_ratio: float, rng: np.random.Generator) -> bool:
    return log_ratio >= 0 or rng.random() < math.exp(log_ratio)


def ppde_step(state: ChainState, poe: ProductOfExperts, cfg: SamplerConfig,
              rng: np.random.Generator) -> tuple[ChainState, StepOutcome]:
    """One path-proposal MH step: two gradient and two value evaluations."""
    if _movable_positions(state.current.length, cfg) == 0:
        # nothing can move; record a null step
        null = StepOutcome(False, 0, -np.inf, state.current_logp)
        return state.advanced(state.current, state.current_logp), null
    value_x, grad_x = poe.score_and_grad(state.current)
    path = _path_from_grad(state.current, grad_x, cfg, rng)
    value_y, grad_y = poe.score_and_grad(path.terminal)
    path.reverse_logq = _reverse_logq_from_grad(path, grad_y, cfg)
    log_ratio = (value_y - value_x) + (path.reverse_logq - path.forward_logq)
    outcome = StepOutcome(_mh_accept(log_ratio, rng), len(path.steps), log_ratio, value_y)
    if outcome.accepted:
        return state.advanced(path.terminal, value_y), outcome
    return state.advanced(state.current, state.current_logp), outcome


@dataclass(frozen=True)
class ExactProposal:
    """Exact locally-balanced categorical over single substitutions."""

    origin_score: float
    log_weights: np.ndarray
    log_norm: float

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_weights - self.log_norm)

    def log_prob(self, sub: Substitution) -> float:
        return float(self.log_weights[sub.position, sub.token] - self.log_norm)

    def sample(self, rng: np.random.Generator) -> Substitution:
        p = self.probs.ravel()
        k = int(rng.choice(p.size, p=p / p.sum()))
        return Substitution(*divmod(k, self.log_weights.shape[1]))


def exact_lb_proposal(x: OneHotSequence, poe: ProductOfExperts,
                      cfg: SamplerConfig) -> ExactProposal:
    """Enumerate the substitution neighborhood and weight by exp(score gap / 2)."""
    length, vocab = x.matrix.shape
    if length * vocab > ENUMERATION_CELL_CAP:
        raise TooLargeToEnumerate(f"{length}*{vocab} cells exceed {ENUMERATION_CELL_CAP}")
    cfg.check_positions(length)
    base = poe.score(x)
    lw = np.full((length, vocab), -np.inf)
    for pos in range(length):
        if pos in cfg.frozen_positions:
            continue
        for tok in range(vocab):
            if tok == x.token_at(pos):
                if cfg.include_identity_moves:
                    lw[pos, tok] = 0.0
                continue
            y = apply_substitution(x, Substitution(pos, tok))
            lw[pos, tok] = (poe.score(y) - base) / 2.0
    return ExactProposal(base, lw, _flat_logsumexp(lw.ravel()))


def exact_lb_step(state: ChainState, poe: ProductOfExperts, cfg: SamplerConfig,
                  rng: np.random.Generator) -> tuple[ChainState, StepOutcome]:
    """MH with the exact single-substitution proposal in both directions."""
    if _movable_positions(state.current.length, cfg) == 0:
        null = StepOutcome(False, 0, -np.inf, state.current_logp)
        return state.advanced(state.current, state.current_logp), null
    forward = exact_lb_proposal(state.current, poe, cfg)
    sub = forward.sample(rng)
    y = apply_substitution(state.current, sub)
    reverse = exact_lb_proposal(y, poe, cfg)
    undo = Substitution(sub.position, state.current.token_at(sub.position))
    value_y = reverse.origin_score
    log_ratio = (value_y - forward.origin_score) + reverse.log_prob(undo) - forward.log_prob(sub)
    outcome = StepOutcome(_mh_accept(log_ratio, rng), 1, log_ratio, value_y)
    if outcome.accepted:
        return state.advanced(y, value_y), outcome
    return state.advanced(state.current, state.current_logp), outcome


def _draw_mutation_count(rng: np.random.Generator) -> int:
    mu = rng.uniform(MU_LOW, MU_HIGH)
    return int(rng.poisson(mu - 1.0)) + 1


def _random_substitutions(x: OneHotSequence, count: int, movable: np.ndarray,
                          rng: np.random.Generator) -> OneHotSequence:
    tokens = x.tokens.copy()
    vocab = x.vocab_size
    for _ in range(count):
        pos = int(movable[rng.integers(movable.size)])
        tok = int(rng.integers(vocab - 1))
        if tok >= tokens[pos]:
            tok += 1
        tokens[pos] = tok
    return OneHotSequence.from_tokens(tokens, vocab)


def sa_step(state: ChainState, poe: ProductOfExperts, schedule: AnnealSchedule,
            rng: np.random.Generator, cfg: SamplerConfig | None = None
            ) -> tuple[ChainState, StepOutcome]:
    """Annealed MH over multi-substitution random proposals."""
    cfg = cfg or SamplerConfig()
    cfg.check_positions(state.current.length)
    movable = np.array(
        sorted(set(range(state.current.length)) - cfg.frozen_positions), dtype=np.int64
    )
    if movable.size == 0:
        null = StepOutcome(False, 0, -np.inf, state.current_logp)
        return state.advanced(state.current, state.current_logp), null
    count = _draw_mutation_count(rng)
    proposal = _random_substitutions(state.current, count, movable, rng)
    value_y = poe.score(proposal)
    temperature = schedule.temperature(state.step_index)
    log_ratio = (value_y - state.current_logp) / temperature
    outcome = StepOutcome(_mh_accept(log_ratio, rng), count, log_ratio, value_y)
    if outcome.accepted:
        return state.advanced(proposal, value_y), outcome
    return state.advanced(state.current, state.current_logp), outcome


def random_sampling_run(wt: OneHotSequence, poe: ProductOfExperts, budget: int,
                        top_k: int, rng: np.random.Generator,
                        frozen_positions: frozenset[int] = frozenset()
                        ) -> list[tuple[OneHotSequence, float]]:
    """Score `budget` one-shot mutants of WT and keep the best `top_k`.

    Each variant applies one multi-substitution draw to the wild type (never
    chained).  Ties rank by generation order.
    """
    if not 1 <= top_k <= budget:
        raise ValueError("need budget >= top_k >= 1")
    movable = np.array(sorted(set(range(wt.length)) - set(frozen_positions)), dtype=np.int64)
    variants = []
    scores = np.empty(budget)
    for n in range(budget):
        if movable.size:
            x = _random_substitutions(wt, _draw_mutation_count(rng), movable, rng)
        else:
            x = wt
        variants.append(x)
        scores[n] = poe.score(x)
    order = np.argsort(-scores, kind="stable")[:top_k]
    return [(variants[i], float(scores[i])) for i in order]


def mala_init(wt: OneHotSequence, mcfg: MalaConfig) -> np.ndarray:
    """Initial relaxed logits log((1 - tau)/V + tau * one_hot(WT))."""
    base = (1.0 - mcfg.tau) / wt.vocab_size
    return np.log(base + mcfg.tau * wt.matrix.astype(np.float64))


def mala_approx_step(relaxed_state: np.ndarray, poe: ProductOfExperts, mcfg: MalaConfig,
                     rng: np.random.Generator) -> tuple[np.ndarray, OneHotSequence, float]:
    """Langevin update of relaxed logits with a straight-through gradient.

    Returns the new logits plus the rounded sequence and its score (the
    quantities a chain records).
    """
    relaxed_state = np.asarray(relaxed_state, dtype=np.float64)
    if not np.isfinite(relaxed_state).all():
        raise NonFiniteState("relaxed state contains non-finite logits")
    gumbel = rng.gumbel(size=relaxed_state.shape)
    rounded = OneHotSequence.from_tokens(
        np.argmax(relaxed_state + gumbel, axis=1), relaxed_state.shape[1]
    )
    value, grad = poe.score_and_grad(rounded)
    eps = mcfg.step_size
    noise = rng.normal(size=relaxed_state.shape)
    new_state = relaxed_state + 0.5 * eps * grad + eps * noise
    if not np.isfinite(new_state).all():
        raise NonFiniteState("diverged; reduce step_size")
    return new_state, rounded, value


def _run_discrete_chain(chain_id: int, wt: OneHotSequence, poe: ProductOfExperts,
                        step_fn, cfg: SamplerConfig, rng: np.random.Generator) -> ChainTrace:
    state = ChainState.at(wt, poe)
    n = cfg.steps
    accepted = np.zeros(n, dtype=bool)
    logp = np.empty(n)
    mutations = np.empty(n, dtype=np.int64)
    tokens = np.empty((n, wt.length), dtype=np.int64)
    for k in range(n):
        state, out = step_fn(state, rng)
        accepted[k] = out.accepted
        logp[k] = state.current_logp
        mutations[k] = hamming_distance(state.current, wt)
        tokens[k] = state.current.tokens
    return ChainTrace(chain_id, np.arange(1, n + 1), accepted, logp, mutations,
                      state.best_sequence, state.best_logp, state.best_step, tokens)


def _run_mala_chain(chain_id: int, wt: OneHotSequence, poe: ProductOfExperts,
                    cfg: SamplerConfig, mcfg: MalaConfig,
                    rng: np.random.Generator) -> ChainTrace:
    relaxed = mala_init(wt, mcfg)
    n = cfg.steps
    accepted = np.ones(n, dtype=bool)
    logp = np.empty(n)
    mutations = np.empty(n, dtype=np.int64)
    tokens = np.empty((n, wt.length), dtype=np.int64)
    best_seq, best_logp, best_step = wt, poe.score(wt), 0
    for k in range(n):
        relaxed, rounded, value = mala_approx_step(relaxed, poe, mcfg, rng)
        logp[k] = value
        mutations[k] = hamming_distance(rounded, wt)
        tokens[k] = rounded.tokens
        if value > best_logp:
            best_seq, best_logp, best_step = rounded, value, k + 1
    return ChainTrace(chain_id, np.arange(1, n + 1), accepted, logp, mutations,
                      best_seq, best_logp, best_step, tokens)


def run_chains(wt: OneHotSequence, poe: ProductOfExperts, sampler: str,
               cfg: SamplerConfig, n_chains: int,
               schedule: AnnealSchedule | None = None,
               mala_cfg: MalaConfig | None = None) -> list[ChainTrace]:
    """Run independent chains with per-chain RNG streams derived from cfg.seed."""
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    if sampler not in SAMPLER_CHOICES:
        raise ValueError(f"unknown sampler {sampler!r}; choose from {SAMPLER_CHOICES}")
    if sampler == "random":
        raise ValueError("random sampling is not chain-based; use random_sampling_run")
    cfg.check_positions(wt.length)
    if sampler == "sa" and schedule is None:
        schedule = AnnealSchedule.geometric(cfg.steps)
    if sampler == "mala" and mala_cfg is None:
        mala_cfg = MalaConfig()
    traces = []
    for chain_id, seq in enumerate(np.random.SeedSequence(cfg.seed).spawn(n_chains)):
        rng = np.random.default_rng(seq)
        try:
            if sampler == "ppde":
                step = lambda s, r: ppde_step(s, poe, cfg, r)
                trace = _run_discrete_chain(chain_id, wt, poe, step, cfg, rng)
            elif sampler == "exact-lb":
                step = lambda s, r: exact_lb_step(s, poe, cfg, r)
                trace = _run_discrete_chain(chain_id, wt, poe, step, cfg, rng)
            elif sampler == "sa":
                step = lambda s, r: sa_step(s, poe, schedule, r, cfg)
                trace = _run_discrete_chain(chain_id, wt, poe, step, cfg, rng)
            else:
                trace = _run_mala_chain(chain_id, wt, poe, cfg, mala_cfg, rng)
        except Exception as exc:
            raise ChainFailure(chain_id, str(exc)) from exc
        traces.append(trace)
    return traces
