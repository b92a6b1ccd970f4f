"""Command-line front end: strict config parsing, run orchestration, and
bit-stable output files.

Config files are TOML with one [[expert]] table per expert. Unknown keys are
rejected rather than ignored so typos cannot silently change a run. The
master seed is mandatory; identical config bytes and seed give byte-identical
output files. Floats are printed with 17 significant digits and every file is
written to a temp name then renamed.

Exit codes: 0 success, 2 config error, 3 runtime error, 4 verification
failure.
"""
from __future__ import annotations

import argparse
import os
import sys
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from . import samplers
from .errors import (
    InsufficientData,
    OutOfBounds,
    ParseError,
    PoeSamplerError,
    UnknownSymbol,
    ValidationError,
)
from .experts import (
    LambdaGrid,
    LinearExpert,
    MlpExpert,
    PottsExpert,
    PottsParams,
    ProductOfExperts,
    SUPERVISED,
    UNSUPERVISED,
    calibrate_lambda,
    fit_linear_expert,
    load_linear_params,
    load_mlp_params,
    load_potts_params,
    read_labeled_csv,
    save_linear_params,
)
from .metrics import ChainTrace, build_population_report, long_format_rows
from .oracle import (
    detailed_balance_residual,
    empirical_stationary,
    enumerate_distribution,
    tv_distance,
    write_report,
)
from .samplers import (
    AnnealSchedule,
    ChainState,
    MalaConfig,
    SAMPLER_CHOICES,
    SamplerConfig,
    exact_lb_proposal,
    random_sampling_run,
    run_chains,
)
from .seqspace import (
    OneHotSequence,
    PROTEIN_TOKENS,
    Vocabulary,
    decode,
    encode,
    hamming_distance,
    read_fasta,
)
from .wire import ExternalExpert, WireClient

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 2, 3, 4

ENDPOINT_ENV = "POESAMPLER_EXTERNAL_ENDPOINT"

EXPERT_KINDS = ("potts", "linear", "mlp", "external")
_DEFAULT_ROLE = {
    "potts": UNSUPERVISED,
    "linear": SUPERVISED,
    "mlp": SUPERVISED,
    "external": UNSUPERVISED,
}

CSV_HEADER = "chain_id,step,sequence,logp,accepted,n_mutations"

_TOP_LEVEL_KEYS = {
    "seed", "wild_type", "alphabet", "lambda", "sampler", "out", "n_chains",
    "steps", "max_path_length", "include_identity_moves", "frozen_positions",
    "top_k", "labeled_data", "lambda_grid", "anneal", "mala", "expert",
}
_EXPERT_KEYS = {"kind", "role", "params", "endpoint"}
_ANNEAL_KEYS = {"t_init", "t_final"}
_MALA_KEYS = {"step_size", "tau"}


@dataclass(frozen=True)
class ExpertSpec:
    kind: str
    role: str
    params: str | None = None
    endpoint: str | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int
    wild_type: str
    experts: tuple[ExpertSpec, ...]
    lam: float | str = 1.0
    sampler: str = "ppde"
    alphabet: str = PROTEIN_TOKENS
    out: str = "runs"
    n_chains: int = 128
    steps: int = 10_000
    max_path_length: int = 3
    include_identity_moves: bool = False
    frozen_positions: tuple[int, ...] = ()
    top_k: int | None = None
    labeled_data: str | None = None
    lambda_grid: LambdaGrid = LambdaGrid()
    anneal: tuple[float, float] = (1.0, 1e-2)
    mala: tuple[float, float] = (0.1, 0.9)

    def vocabulary(self) -> Vocabulary:
        return Vocabulary.from_string(self.alphabet)

    def sampler_config(self) -> SamplerConfig:
        try:
            return SamplerConfig(
                steps=self.steps,
                max_path_length=self.max_path_length,
                include_identity_moves=self.include_identity_moves,
                frozen_positions=frozenset(self.frozen_positions),
                seed=self.seed,
            )
        except (ValueError, OutOfBounds) as exc:
            raise ValidationError(str(exc)) from None


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

_MISSING = object()


def _reject_unknown(table: dict, known: set, where: str):
    unknown = sorted(set(table) - known)
    if unknown:
        raise ValidationError(f"unknown {where} key(s): {', '.join(unknown)}")


def _get(table: dict, key: str, default=_MISSING):
    if key in table:
        return table[key]
    if default is _MISSING:
        raise ValidationError(f"{key} is required")
    return default


def _as_int(value, key: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ValidationError(f"{key} must be an integer")
    return value


def _as_float(value, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{key} must be a number")
    return float(value)


def _as_str(value, key: str) -> str:
    if not isinstance(value, str):
        raise ValidationError(f"{key} must be a string")
    return value


def _as_bool(value, key: str) -> bool:
    if not isinstance(value, bool):
        raise ValidationError(f"{key} must be a boolean")
    return value


def _as_path(value, key: str, base: Path) -> str:
    path = base / _as_str(value, key)
    if not path.exists():
        raise ValidationError(f"{key} file {path} does not exist")
    return str(path)


def _parse_expert(table, index: int, base: Path) -> ExpertSpec:
    where = f"expert {index}"
    if not isinstance(table, dict):
        raise ValidationError(f"{where} must be a table")
    _reject_unknown(table, _EXPERT_KEYS, where)
    kind = _as_str(_get(table, "kind"), f"{where}: kind")
    if kind not in EXPERT_KINDS:
        raise ValidationError(f"{where}: kind must be one of {list(EXPERT_KINDS)}")
    role = _as_str(_get(table, "role", _DEFAULT_ROLE[kind]), f"{where}: role")
    if role not in (UNSUPERVISED, SUPERVISED):
        raise ValidationError(
            f"{where}: role must be {UNSUPERVISED!r} or {SUPERVISED!r}"
        )
    if kind == "external":
        if "params" in table:
            raise ValidationError(f"{where}: external experts take endpoint, not params")
        endpoint = table.get("endpoint")
        if endpoint is not None:
            endpoint = _as_str(endpoint, f"{where}: endpoint")
        return ExpertSpec(kind, role, endpoint=endpoint)
    if "endpoint" in table:
        raise ValidationError(f"{where}: only external experts take endpoint")
    params = _as_path(_get(table, "params"), f"{where}: params", base)
    return ExpertSpec(kind, role, params=params)


def parse_config(text: str, base_dir=".") -> RunConfig:
    """Parse and fully validate a TOML run configuration.

    Relative paths are resolved against base_dir (the config file's
    directory). Unknown keys anywhere are ValidationErrors.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(None, f"config is not valid TOML: {exc}") from None
    base = Path(base_dir)
    _reject_unknown(raw, _TOP_LEVEL_KEYS, "config")

    seed = _as_int(_get(raw, "seed"), "seed")
    wild_type = _as_path(_get(raw, "wild_type"), "wild_type", base)

    lam = _get(raw, "lambda", 1.0)
    if isinstance(lam, str):
        if lam != "calibrate":
            raise ValidationError("lambda must be a number >= 0 or 'calibrate'")
    else:
        lam = _as_float(lam, "lambda")
        if lam < 0 or not np.isfinite(lam):
            raise ValidationError("lambda must be a number >= 0 or 'calibrate'")

    sampler = _as_str(_get(raw, "sampler", "ppde"), "sampler")
    if sampler not in SAMPLER_CHOICES:
        raise ValidationError(f"sampler must be one of {list(SAMPLER_CHOICES)}")

    alphabet = _as_str(_get(raw, "alphabet", PROTEIN_TOKENS), "alphabet")
    out = _as_str(_get(raw, "out", "runs"), "out")
    n_chains = _as_int(_get(raw, "n_chains", 128), "n_chains")
    if n_chains < 1:
        raise ValidationError("n_chains must be >= 1")
    steps = _as_int(_get(raw, "steps", 10_000), "steps")
    max_path_length = _as_int(_get(raw, "max_path_length", 3), "max_path_length")
    identity = _as_bool(_get(raw, "include_identity_moves", False),
                        "include_identity_moves")

    frozen_raw = _get(raw, "frozen_positions", [])
    if not isinstance(frozen_raw, list):
        raise ValidationError("frozen_positions must be a list of integers")
    frozen = tuple(_as_int(p, "frozen_positions entry") for p in frozen_raw)

    top_k = raw.get("top_k")
    if top_k is not None:
        top_k = _as_int(top_k, "top_k")
        if top_k < 1:
            raise ValidationError("top_k must be >= 1")

    labeled = raw.get("labeled_data")
    if labeled is not None:
        labeled = _as_path(labeled, "labeled_data", base)

    grid_raw = raw.get("lambda_grid")
    if grid_raw is None:
        grid = LambdaGrid()
    else:
        if not isinstance(grid_raw, list) or not grid_raw:
            raise ValidationError("lambda_grid must be a non-empty list of numbers")
        try:
            grid = LambdaGrid(tuple(_as_float(v, "lambda_grid entry") for v in grid_raw))
        except ValueError as exc:
            raise ValidationError(str(exc)) from None

    anneal_raw = raw.get("anneal", {})
    if not isinstance(anneal_raw, dict):
        raise ValidationError("anneal must be a table")
    _reject_unknown(anneal_raw, _ANNEAL_KEYS, "anneal")
    anneal = (
        _as_float(_get(anneal_raw, "t_init", 1.0), "anneal: t_init"),
        _as_float(_get(anneal_raw, "t_final", 1e-2), "anneal: t_final"),
    )

    mala_raw = raw.get("mala", {})
    if not isinstance(mala_raw, dict):
        raise ValidationError("mala must be a table")
    _reject_unknown(mala_raw, _MALA_KEYS, "mala")
    mala = (
        _as_float(_get(mala_raw, "step_size", 0.1), "mala: step_size"),
        _as_float(_get(mala_raw, "tau", 0.9), "mala: tau"),
    )

    expert_raw = raw.get("expert", [])
    if not isinstance(expert_raw, list):
        raise ValidationError("expert must be given as [[expert]] tables")
    if not expert_raw:
        raise ValidationError("at least one [[expert]] section is required")
    experts = tuple(_parse_expert(t, i, base) for i, t in enumerate(expert_raw))

    config = RunConfig(
        seed=seed, wild_type=wild_type, experts=experts, lam=lam, sampler=sampler,
        alphabet=alphabet, out=out, n_chains=n_chains, steps=steps,
        max_path_length=max_path_length, include_identity_moves=identity,
        frozen_positions=frozen, top_k=top_k, labeled_data=labeled,
        lambda_grid=grid, anneal=anneal, mala=mala,
    )
    config.sampler_config()  # surface range errors at parse time
    try:
        Vocabulary.from_string(alphabet)
        AnnealSchedule.geometric(steps, *anneal)
        MalaConfig(*mala)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    return config


def load_config(args) -> RunConfig:
    if getattr(args, "config", None) is None:
        raise ValidationError("--config is required for this command")
    path = Path(args.config)
    if not path.exists():
        raise ValidationError(f"config file {path} does not exist")
    config = parse_config(path.read_text(), base_dir=path.parent)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        overrides["steps"] = args.steps
    if getattr(args, "chains", None) is not None:
        overrides["n_chains"] = args.chains
    if getattr(args, "max_path_length", None) is not None:
        overrides["max_path_length"] = args.max_path_length
    if getattr(args, "out", None) is not None:
        overrides["out"] = args.out
    if overrides:
        config = replace(config, **overrides)
        config.sampler_config()
        if config.n_chains < 1:
            raise ValidationError("n_chains must be >= 1")
    return config


# ---------------------------------------------------------------------------
# Expert construction
# ---------------------------------------------------------------------------

def build_product(config: RunConfig, vocab: Vocabulary,
                  wt: OneHotSequence) -> tuple[ProductOfExperts, list]:
    """Instantiate all experts; returns the product plus open wire clients."""
    built, clients = [], []
    lam = config.lam if not isinstance(config.lam, str) else 1.0
    try:
        for i, spec in enumerate(config.experts):
            if spec.kind == "potts":
                expert = PottsExpert(load_potts_params(spec.params, vocab, wt),
                                     role=spec.role)
            elif spec.kind == "linear":
                expert = LinearExpert(load_linear_params(spec.params, vocab),
                                      role=spec.role)
            elif spec.kind == "mlp":
                expert = MlpExpert(load_mlp_params(spec.params, vocab, wt.length),
                                   wt.length, len(vocab), role=spec.role)
            else:
                endpoint = os.environ.get(ENDPOINT_ENV) or spec.endpoint
                if endpoint is None:
                    raise ValidationError(
                        f"expert {i}: no endpoint configured and {ENDPOINT_ENV} unset"
                    )
                client = WireClient.connect(endpoint)
                clients.append(client)
                expert = ExternalExpert(client, vocab, role=spec.role)
            built.append(expert)
    except BaseException:
        for c in clients:
            c.close()
        raise
    unsupervised = tuple(e for e in built if e.role == UNSUPERVISED)
    supervised = tuple(e for e in built if e.role == SUPERVISED)
    try:
        poe = ProductOfExperts(unsupervised, supervised, lam)
        if poe.shape != wt.matrix.shape:
            raise ValidationError(
                f"experts score {poe.shape} grids but the wild type is "
                f"{wt.matrix.shape}"
            )
    except BaseException:
        for c in clients:
            c.close()
        raise
    return poe, clients


# ---------------------------------------------------------------------------
# Calibration pools
# ---------------------------------------------------------------------------

def calibration_pools(rows, wt: OneHotSequence, seed: int, cap: int = 100):
    """Split labeled rows into below/above wild-type pools, capped at `cap`
    variants each (seeded subsample when larger)."""
    wt_activity = next((a for x, a in rows if x == wt), None)
    if wt_activity is None:
        raise InsufficientData("labeled data does not contain the wild-type sequence")
    low = [(x, a) for x, a in rows if a < wt_activity]
    high = [(x, a) for x, a in rows if a > wt_activity]
    if not low:
        raise InsufficientData("no below-wild-type activities in labeled data")
    if not high:
        raise InsufficientData("no above-wild-type activities in labeled data")
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    def pick(pool):
        if len(pool) <= cap:
            return pool
        idx = rng.choice(len(pool), size=cap, replace=False)
        return [pool[i] for i in sorted(idx)]

    return pick(low), pick(high)


def _resolved_lambda(config: RunConfig, vocab: Vocabulary, wt: OneHotSequence,
                     poe: ProductOfExperts) -> float:
    if not isinstance(config.lam, str):
        return float(config.lam)
    if config.labeled_data is None:
        raise ValidationError("lambda = 'calibrate' requires labeled_data")
    rows = read_labeled_csv(config.labeled_data, vocab)
    low, high = calibration_pools(rows, wt, config.seed)
    return calibrate_lambda(config.lambda_grid, low, high, poe)


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

def format_float(x) -> str:
    return "%.17g" % float(x)


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_row(chain_id: int, step: int, seq: str, logp: float,
             accepted: bool, n_mutations: int) -> str:
    flag = "true" if accepted else "false"
    return f"{chain_id},{step},{seq},{format_float(logp)},{flag},{n_mutations}"


def write_run_outputs(out_dir, traces, vocab: Vocabulary, wt: OneHotSequence,
                      initial_logp: float | None = None):
    """Write population.csv (per-chain best), trace.csv (all steps), report.txt.

    When initial_logp is given each chain's trace gets a step-0 wild-type
    row, so a trace replay can reconstruct the best-so-far record even if no
    move ever improved on the start.
    """
    out = Path(out_dir)
    wt_string = decode(wt, vocab)

    population, scores, pop_lines = [], [], [CSV_HEADER]
    for t in traces:
        seq = decode(t.best_sequence, vocab)
        pop_lines.append(_csv_row(t.chain_id, t.best_step, seq, t.best_logp, True,
                                  hamming_distance(t.best_sequence, wt)))
        population.append(t.best_sequence)
        scores.append(t.best_logp)

    trace_lines = [CSV_HEADER]
    for t in traces:
        if initial_logp is not None:
            trace_lines.append(_csv_row(t.chain_id, 0, wt_string, initial_logp,
                                        True, 0))
        for k in range(len(t.steps)):
            seq = "".join(vocab.tokens[j] for j in t.tokens[k])
            trace_lines.append(_csv_row(t.chain_id, int(t.steps[k]), seq,
                                        float(t.logp[k]), bool(t.accepted[k]),
                                        int(t.mutations[k])))

    report = build_population_report(population, scores, wt)
    atomic_write_text(out / "population.csv", "\n".join(pop_lines) + "\n")
    atomic_write_text(out / "trace.csv", "\n".join(trace_lines) + "\n")
    write_report(out / "report.txt", report.as_lines())
    return report


def read_trace_csv(path, vocab: Vocabulary) -> list[ChainTrace]:
    """Rebuild per-chain traces from a trace.csv written by this tool."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ParseError(1, f"expected header {CSV_HEADER!r}")
    per_chain: dict[int, list] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 6:
            raise ParseError(lineno, "expected 6 comma-separated fields")
        try:
            chain_id, step = int(parts[0]), int(parts[1])
            logp = float(parts[3])
            n_mut = int(parts[5])
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
        if parts[4] not in ("true", "false"):
            raise ParseError(lineno, f"bad accepted flag {parts[4]!r}")
        x = encode(parts[2], vocab)
        per_chain.setdefault(chain_id, []).append(
            (step, x, logp, parts[4] == "true", n_mut)
        )
    traces = []
    for chain_id in sorted(per_chain):
        rows = sorted(per_chain[chain_id], key=lambda r: r[0])
        steps = np.array([r[0] for r in rows])
        logp = np.array([r[2] for r in rows])
        best = int(np.argmax(logp))  # first occurrence of the maximum
        traces.append(ChainTrace(
            chain_id=chain_id,
            steps=steps,
            accepted=np.array([r[3] for r in rows]),
            logp=logp,
            mutations=np.array([r[4] for r in rows]),
            best_sequence=rows[best][1],
            best_logp=float(logp[best]),
            best_step=int(steps[best]),
            tokens=np.stack([r[1].tokens for r in rows]),
        ))
    return traces


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_sample(args) -> int:
    config = load_config(args)
    vocab = config.vocabulary()
    wt = encode(read_fasta(config.wild_type), vocab)
    cfg = config.sampler_config()
    cfg.check_positions(wt.length)
    poe, clients = build_product(config, vocab, wt)
    try:
        lam = _resolved_lambda(config, vocab, wt, poe)
        poe = poe.with_lambda(lam)
        if config.sampler == "random":
            rng = np.random.default_rng(np.random.SeedSequence(config.seed))
            top_k = config.top_k if config.top_k is not None else config.n_chains
            results = random_sampling_run(wt, poe, config.steps, top_k, rng,
                                          frozen_positions=cfg.frozen_positions)
            traces = [
                ChainTrace(rank, np.array([0]), np.array([True]),
                           np.array([score]), np.array([hamming_distance(x, wt)]),
                           x, score, 0, tokens=x.tokens[None, :])
                for rank, (x, score) in enumerate(results)
            ]
            report = write_run_outputs(config.out, traces, vocab, wt)
        else:
            schedule = AnnealSchedule.geometric(config.steps, *config.anneal)
            mala_cfg = MalaConfig(*config.mala)
            traces = run_chains(wt, poe, config.sampler, cfg, config.n_chains,
                                schedule=schedule, mala_cfg=mala_cfg)
            report = write_run_outputs(config.out, traces, vocab, wt,
                                       initial_logp=poe.score(wt))
    finally:
        for client in clients:
            client.close()
    print(f"sampler={config.sampler} lambda={format_float(lam)} "
          f"best_logp={format_float(report.best_logp)}")
    print(f"wrote population.csv, trace.csv, report.txt under {config.out}")
    return EXIT_OK


def cmd_calibrate_lambda(args) -> int:
    config = load_config(args)
    labeled = args.labeled or config.labeled_data
    if labeled is None:
        raise ValidationError("give --labeled or set labeled_data in the config")
    if args.labeled is not None and not Path(args.labeled).exists():
        raise ValidationError(f"labeled file {args.labeled} does not exist")
    vocab = config.vocabulary()
    wt = encode(read_fasta(config.wild_type), vocab)
    poe, clients = build_product(config, vocab, wt)
    try:
        rows = read_labeled_csv(labeled, vocab)
        low, high = calibration_pools(rows, wt, config.seed)
        lam = calibrate_lambda(config.lambda_grid, low, high, poe)
    finally:
        for client in clients:
            client.close()
    write_report(Path(config.out) / "lambda.txt",
                 {"lambda": lam, "n_below": len(low), "n_above": len(high)})
    print(f"lambda={format_float(lam)}")
    return EXIT_OK


def cmd_fit_supervised(args) -> int:
    config = load_config(args)
    labeled = args.labeled or config.labeled_data
    if labeled is None:
        raise ValidationError("give --labeled or set labeled_data in the config")
    if args.labeled is not None and not Path(args.labeled).exists():
        raise ValidationError(f"labeled file {args.labeled} does not exist")
    if args.ridge < 0:
        raise ValidationError("ridge must be >= 0")
    vocab = config.vocabulary()
    rows = read_labeled_csv(labeled, vocab)
    params = fit_linear_expert(rows, ridge=args.ridge)
    dest = Path(args.params_out) if args.params_out else (
        Path(config.out) / "linear_supervised.npz"
    )
    dest.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(dest.parent), prefix=f".{dest.name}.",
                               suffix=".npz")
    os.close(fd)
    try:
        save_linear_params(tmp, params, token_order=config.alphabet)
        os.replace(tmp, dest)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    print(f"fit {len(rows)} rows at ridge={format_float(args.ridge)}; "
          f"wrote {dest}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    config = load_config(args)
    trace_path = Path(args.trace) if args.trace else Path(config.out) / "trace.csv"
    if not trace_path.exists():
        raise ValidationError(f"trace file {trace_path} does not exist")
    vocab = config.vocabulary()
    wt = encode(read_fasta(config.wild_type), vocab)
    traces = read_trace_csv(trace_path, vocab)
    report = build_population_report([t.best_sequence for t in traces],
                                     [t.best_logp for t in traces], wt)
    out = Path(config.out)
    write_report(out / "report.txt", report.as_lines())
    curve_lines = ["step,chain_id,cumulative_best"]
    for step, chain_id, value in long_format_rows(traces):
        curve_lines.append(f"{step},{chain_id},{format_float(value)}")
    atomic_write_text(out / "cummax.csv", "\n".join(curve_lines) + "\n")
    print(f"recomputed report.txt and cummax.csv under {out} "
          f"from {trace_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Verification presets
# ---------------------------------------------------------------------------

_PRESETS = {
    # length, vocab, chain steps, burn-in, tv threshold, kernel states
    "tiny": (3, 3, 30_000, 3_000, 0.08, 25),
    "small": (4, 4, 100_000, 10_000, 0.05, 100),
}


def _verify_instance(preset: str, seed: int):
    length, v, steps, burn, tv_tol, n_states = _PRESETS[preset]
    vocab = Vocabulary.from_string(PROTEIN_TOKENS[:v])
    rng = np.random.default_rng(seed)
    wt = OneHotSequence.from_tokens(rng.integers(0, v, size=length), v)
    h = rng.normal(0.0, 0.3, size=(length, v))
    J = rng.normal(0.0, 0.3, size=(length, length, v, v))
    potts = PottsExpert(PottsParams.for_wild_type(h, J, wt))
    train = []
    for _ in range(4 * length * v):
        x = OneHotSequence.from_tokens(rng.integers(0, v, size=length), v)
        train.append((x, potts.score(x) + rng.normal(0.0, 0.5)))
    fitted = LinearExpert(fit_linear_expert(train, ridge=1e-6), role=SUPERVISED)
    poe = ProductOfExperts((potts,), (fitted,), lam=1.0)
    return vocab, wt, poe, fitted, steps, burn, tv_tol, n_states


def _check_stationary(poe, wt, dist, steps, burn, tv_tol, seed):
    cfg = SamplerConfig(steps=steps, max_path_length=3, seed=seed)
    state = ChainState.at(wt, poe)

    def step(rng):
        nonlocal state
        state, _ = samplers.ppde_step(state, poe, cfg, rng)
        return state.current

    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    empirical = empirical_stationary(dist, step, rng, burn_in=burn,
                                     n_samples=steps - burn)
    tv = tv_distance(empirical, dist.probabilities)
    return tv <= tv_tol, f"tv={tv:.4f} threshold={tv_tol}"


def _check_kernel_equality(fitted, wt, n_states, seed):
    # linear experts make the gradient expansion exact, so the fast proposal
    # must match the enumerated one on every cell
    poe = ProductOfExperts((LinearExpert(fitted.params, role=UNSUPERVISED),))
    cfg = SamplerConfig(steps=1, max_path_length=1, seed=seed)
    rng = np.random.default_rng(seed + 1)
    length, v = wt.matrix.shape
    worst = 0.0
    for _ in range(n_states):
        x = OneHotSequence.from_tokens(rng.integers(0, v, size=length), v)
        exact = exact_lb_proposal(x, poe, cfg)
        _, grad = poe.score_and_grad(x)
        logits = samplers.proposal_logits(grad, x, cfg)
        flat = logits.ravel()
        norm = flat.max() + np.log(np.exp(flat - flat.max()).sum())
        taylor_lw = logits - norm
        exact_lw = exact.log_weights - exact.log_norm
        finite = np.isfinite(exact_lw)
        if not np.array_equal(finite, np.isfinite(taylor_lw)):
            return False, "support mismatch between proposals"
        gap = float(np.abs(np.exp(taylor_lw[finite]) - np.exp(exact_lw[finite])).max())
        worst = max(worst, gap)
    return worst <= 1e-12, f"max per-entry gap={worst:.3e} threshold=1e-12"


def _check_detailed_balance(poe, dist, seed):
    cfg = SamplerConfig(steps=1, max_path_length=1, seed=seed)
    resid = detailed_balance_residual(poe, dist, cfg)
    return resid <= 1e-10, f"max residual={resid:.3e} threshold=1e-10"


def cmd_verify(args) -> int:
    preset, seed = args.preset, args.seed if args.seed is not None else 0
    vocab, wt, poe, fitted, steps, burn, tv_tol, n_states = _verify_instance(
        preset, seed
    )
    length, v = wt.matrix.shape
    dist = enumerate_distribution(poe, length, v)
    checks = [
        ("kernel_taylor_exact", lambda: _check_kernel_equality(fitted, wt,
                                                               n_states, seed)),
        ("detailed_balance_u1", lambda: _check_detailed_balance(poe, dist, seed)),
        ("stationary_tv", lambda: _check_stationary(poe, wt, dist, steps, burn,
                                                    tv_tol, seed)),
    ]
    all_ok = True
    for name, run in checks:
        ok, detail = run()
        all_ok = all_ok and ok
        print(f"{name}: {'pass' if ok else 'fail'} ({detail})")
    return EXIT_OK if all_ok else EXIT_VERIFY


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _add_common(sp):
    sp.add_argument("--config", help="TOML run configuration")
    sp.add_argument("--seed", type=int, default=None, help="override config seed")
    sp.add_argument("--steps", type=int, default=None, help="override step count")
    sp.add_argument("--chains", type=int, default=None, help="override n_chains")
    sp.add_argument("--max-path-length", type=int, default=None,
                    dest="max_path_length", help="override proposal path cap")
    sp.add_argument("--out", default=None, help="override output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poesampler",
        description="Gradient-informed MCMC over product-of-experts "
                    "sequence landscapes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("sample", help="run chains and write population/trace/report")
    _add_common(sp)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("calibrate-lambda",
                        help="choose the supervised weight from labeled data")
    _add_common(sp)
    sp.add_argument("--labeled", help="labeled CSV (sequence,activity)")
    sp.set_defaults(func=cmd_calibrate_lambda)

    sp = sub.add_parser("fit-supervised",
                        help="fit a linear expert to labeled data")
    _add_common(sp)
    sp.add_argument("--labeled", help="labeled CSV (sequence,activity)")
    sp.add_argument("--ridge", type=float, default=1e-8)
    sp.add_argument("--params-out", dest="params_out",
                    help="destination .npz (default <out>/linear_supervised.npz)")
    sp.set_defaults(func=cmd_fit_supervised)

    sp = sub.add_parser("verify", help="run the built-in correctness suite")
    sp.add_argument("preset", choices=sorted(_PRESETS))
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("metrics", help="recompute report and cumulative-max "
                                        "table from a trace.csv")
    _add_common(sp)
    sp.add_argument("--trace", help="trace file (default <out>/trace.csv)")
    sp.set_defaults(func=cmd_metrics)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError, UnknownSymbol, OutOfBounds,
            FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PoeSamplerError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
