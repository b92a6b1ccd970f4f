"""Population and trace statistics for sampler runs.

Diversity is the percentage of population members occurring exactly once;
a "distinct fraction" alternative sits behind a flag since the published
tables are ambiguous between the two readings.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import EmptyPopulation, ShapeMismatch
from .seqspace import OneHotSequence, hamming_distance

DIVERSITY_MODES = ("exactly_once", "distinct")


@dataclass(frozen=True)
class ChainTrace:
    """Per-step record of one chain plus its best-by-score sample."""

    chain_id: int
    steps: np.ndarray
    accepted: np.ndarray
    logp: np.ndarray
    mutations: np.ndarray
    best_sequence: OneHotSequence
    best_logp: float
    best_step: int
    tokens: np.ndarray | None = None  # optional (n, L) per-step token indices

    def __post_init__(self):
        n = len(self.steps)
        for name in ("accepted", "logp", "mutations"):
            if len(getattr(self, name)) != n:
                raise ShapeMismatch(f"{name} length != steps length")
        if self.tokens is not None and len(self.tokens) != n:
            raise ShapeMismatch("tokens length != steps length")
        if n > 1 and not (np.diff(self.steps) > 0).all():
            raise ValueError("steps must be strictly increasing")
        if n and self.mutations.min() < 0:
            raise ValueError("mutation counts must be >= 0")


@dataclass(frozen=True)
class PopulationReport:
    """Summary statistics of a final population of variants."""

    size: int
    diversity_pct: float
    mean_mutations: float
    std_mutations: float
    percentiles: dict[int, float]
    best_logp: float

    def as_lines(self) -> list[str]:
        lines = [
            f"size={self.size}",
            f"diversity_pct={self.diversity_pct:.17g}",
            f"mean_mutations={self.mean_mutations:.17g}",
            f"std_mutations={self.std_mutations:.17g}",
        ]
        lines += [f"p{p}={v:.17g}" for p, v in sorted(self.percentiles.items())]
        lines.append(f"best_logp={self.best_logp:.17g}")
        return lines


def diversity(population, mode: str = "exactly_once") -> float:
    """Percentage of the population that is unique under the chosen reading."""
    population = list(population)
    if not population:
        raise EmptyPopulation("diversity of an empty population")
    if mode not in DIVERSITY_MODES:
        raise ValueError(f"mode must be one of {DIVERSITY_MODES}")
    counts = Counter(population)
    if mode == "exactly_once":
        numerator = sum(1 for c in counts.values() if c == 1)
    else:
        numerator = len(counts)
    return 100.0 * numerator / len(population)


def mutation_stats(population, wt: OneHotSequence) -> tuple[float, float]:
    """Mean and population standard deviation of Hamming distance to WT."""
    population = list(population)
    if not population:
        raise EmptyPopulation("mutation stats of an empty population")
    d = np.array([hamming_distance(x, wt) for x in population], dtype=np.float64)
    return float(d.mean()), float(d.std(ddof=0))


def percentile_scores(scores, percentiles=(50, 80, 100)) -> dict[int, float]:
    """Nearest-rank percentiles: the ceil(p/100 * n)-th order statistic."""
    scores = np.asarray(list(scores), dtype=np.float64)
    if scores.size == 0:
        raise EmptyPopulation("percentiles of an empty score list")
    ordered = np.sort(scores)
    table = {}
    for p in percentiles:
        if not 0 < p <= 100:
            raise ValueError(f"percentile must be in (0, 100], got {p}")
        rank = math.ceil(p / 100.0 * scores.size)
        table[int(p)] = float(ordered[rank - 1])
    return table


def cumulative_max_curve(traces) -> np.ndarray:
    """Mean over chains of the running maximum score, per step."""
    traces = list(traces)
    if not traces:
        raise EmptyPopulation("no traces")
    grid = traces[0].steps
    for t in traces[1:]:
        if len(t.steps) != len(grid) or not np.array_equal(t.steps, grid):
            raise ShapeMismatch("traces do not share a step grid")
    running = np.stack([np.maximum.accumulate(t.logp) for t in traces])
    return running.mean(axis=0)


def long_format_rows(traces):
    """Yield (step, chain_id, running_max) rows for external plotting."""
    for t in traces:
        running = np.maximum.accumulate(t.logp)
        for step, value in zip(t.steps, running):
            yield int(step), t.chain_id, float(value)


def build_population_report(population, scores, wt: OneHotSequence,
                            diversity_mode: str = "exactly_once") -> PopulationReport:
    population = list(population)
    scores = list(scores)
    if len(population) != len(scores):
        raise ShapeMismatch("population and scores differ in length")
    mean_m, std_m = mutation_stats(population, wt)
    return PopulationReport(
        size=len(population),
        diversity_pct=diversity(population, mode=diversity_mode),
        mean_mutations=mean_m,
        std_mutations=std_m,
        percentiles=percentile_scores(scores),
        best_logp=float(max(scores)),
    )
