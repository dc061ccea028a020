"""Serial and asynchronous stochastic variational inference for LDA."""

from .errors import (
    ConfigurationError,
    CorpusParseError,
    CorpusRangeError,
    DomainError,
    NumericalDivergenceError,
    StalenessStarvationError,
    StructuralError,
    UsageError,
)
from .expfam import (
    GlobalParams,
    HyperParams,
    LearningSchedule,
    NaturalGradient,
    aggregate_gradients,
    apply_gradient,
    learning_rate,
    svi_step,
)
from .special import digamma, dirichlet_expectation
from .corpus import (
    Corpus,
    Document,
    SplitSpec,
    load_corpus,
    parse_uci_bow,
    read_uci,
    save_corpus,
    serialize_uci_bow,
    split,
)
from .lda import (
    EvalResult,
    LocalState,
    block_topics,
    e_step,
    elbo,
    generate_synthetic,
    held_out_bound,
    init_lambda,
    local_step,
    match_topics,
    natural_gradient,
    optimal_global,
    perplexity_from_bound,
)
from .metrics import Checkpoint, RunMetrics, compute_tsp_rsp
from .serial import SerialConfig, run_serial, sample_batch
from .engine import (
    AsyncConfig,
    DelaySchedule,
    GradientMsg,
    StalenessStats,
    ThreadedEngine,
    master_loop,
    simulate,
    worker_loop,
)

__version__ = "0.1.0"
