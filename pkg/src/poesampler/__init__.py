"""Gradient-informed discrete MCMC for product-of-experts sequence landscapes."""

from .errors import (
    ChainFailure,
    DegenerateSystem,
    EmptyPool,
    EmptyPopulation,
    ExternalExpertFailure,
    InsufficientData,
    NonFiniteState,
    NonLinearExpertPresent,
    OutOfBounds,
    ParseError,
    PoeSamplerError,
    ShapeMismatch,
    TooLargeToEnumerate,
    UnknownSymbol,
    ValidationError,
)
from .seqspace import (
    OneHotSequence,
    PermutationMap,
    Substitution,
    Vocabulary,
    apply_substitution,
    decode,
    encode,
    hamming_ball,
    hamming_distance,
    read_fasta,
)
from .experts import (
    EnsembleExpert,
    LambdaGrid,
    LinearExpert,
    LinearExpertParams,
    MlpExpert,
    MlpExpertParams,
    PottsExpert,
    PottsParams,
    ProductOfExperts,
    SUPERVISED,
    UNSUPERVISED,
    calibrate_lambda,
    fit_linear_expert,
    read_labeled_csv,
)
from .samplers import (
    AnnealSchedule,
    ChainState,
    MalaConfig,
    PathRecord,
    SamplerConfig,
    StepOutcome,
    SAMPLER_CHOICES,
    exact_lb_proposal,
    mala_approx_step,
    mala_init,
    ppde_step,
    proposal_logits,
    random_sampling_run,
    run_chains,
    sa_step,
)
from .metrics import (
    ChainTrace,
    PopulationReport,
    build_population_report,
    cumulative_max_curve,
    diversity,
    long_format_rows,
    mutation_stats,
    percentile_scores,
)
from .oracle import (
    EnumeratedDistribution,
    KernelEstimate,
    KernelReport,
    detailed_balance_residual,
    empirical_stationary,
    enumerate_distribution,
    estimate_kernel,
    kernel_ratio_check,
    single_step_kernel,
    tv_distance,
    write_report,
)
from .wire import ExternalExpert, ModelInfo, WireClient

__version__ = "0.1.0"
