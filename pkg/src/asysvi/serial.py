"""Serial stochastic variational inference for LDA (online LDA).

This is the reference driver: single-threaded, fully determined by
``rng_seed``, and the baseline against which the asynchronous engine is
compared.
"""

from dataclasses import dataclass
import logging
import time

import numpy as np

from .errors import ConfigurationError, NumericalDivergenceError, UsageError
from .expfam import LearningSchedule, learning_rate, svi_step
from .lda import (
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    e_step,
    gradient_variance,
    held_out_bound,
    init_lambda,
    sufficient_statistics,
)
from .metrics import Checkpoint, RunMetrics

logger = logging.getLogger(__name__)


def worker_rng(seed, worker_id):
    """Independent document-sampling stream for one worker.

    The serial driver samples from stream 0, so a single-worker async run
    with the same seed sees exactly the same batches.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(worker_id,)))


def init_rng(seed):
    return np.random.default_rng(seed)


def sample_batch(rng, D, S):
    """S i.i.d. uniform document indices in [0, D), drawn with replacement."""
    if S < 1:
        raise UsageError("batch size must be >= 1")
    return rng.integers(0, D, size=S).tolist()


@dataclass(frozen=True)
class SerialConfig:
    schedule: LearningSchedule
    batch_size: int
    num_iterations: int
    eval_every: int = 0
    rng_seed: int = 0
    full_batch: bool = False
    local_tol: float = DEFAULT_TOL
    local_max_iters: int = DEFAULT_MAX_ITERS
    doc_cost_seconds: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.num_iterations < 1:
            raise ConfigurationError("num_iterations must be >= 1")
        if self.eval_every < 0:
            raise ConfigurationError("eval_every must be >= 0")


def evaluate(metrics, lam, test_docs, hp, t, wall, docs_processed, variance, tol, max_iters,
             **extra):
    """Append a checkpoint evaluated on a frozen lambda; returns eval seconds."""
    start = time.perf_counter()
    if test_docs:
        res = held_out_bound(test_docs, lam, hp, tol, max_iters)
        bound, perp = res.total_log_likelihood_bound, res.perplexity
    else:
        bound = perp = float("nan")
    spent = time.perf_counter() - start
    metrics.add(Checkpoint(
        iteration=t,
        wall_clock_seconds=wall,
        held_out_bound=bound,
        perplexity=perp,
        gradient_variance=variance,
        docs_processed=docs_processed,
        eval_seconds=spent,
        **extra,
    ))
    metrics.eval_seconds += spent
    return spent


def run_serial(corpus, test_docs, hp, config, lam0=None):
    """Run T serial SVI iterations; returns ``(lambda, RunMetrics)``.

    Each iteration samples ``batch_size`` documents with replacement (or
    takes the whole corpus when ``full_batch``), runs the local step, forms
    ``lambda_hat = eta + (D / S) * sstats`` and moves lambda by rho_t.
    The checkpoint at the last iteration is always recorded.
    """
    docs = list(corpus)
    if not docs:
        raise UsageError("corpus is empty")
    if config.batch_size > len(docs) and not config.full_batch:
        raise ConfigurationError(f"batch_size {config.batch_size} exceeds D={len(docs)}")
    test_docs = list(test_docs or [])
    W = corpus.W if hasattr(corpus, "W") else int(max(d.word_ids[-1] for d in docs)) + 1
    lam = lam0 if lam0 is not None else init_lambda(hp.num_topics, W, init_rng(config.rng_seed))
    rng = worker_rng(config.rng_seed, 0)
    metrics = RunMetrics()
    D = hp.corpus_size
    T = config.num_iterations
    docs_seen = 0
    elapsed = 0.0
    var_sum, var_n = 0.0, 0
    for t in range(T):
        start = time.perf_counter()
        if config.full_batch:
            batch = docs
        else:
            batch = [docs[i] for i in sample_batch(rng, len(docs), config.batch_size)]
        if config.doc_cost_seconds:
            time.sleep(config.doc_cost_seconds * len(batch))
        local = e_step(batch, lam, hp, config.local_tol, config.local_max_iters)
        sstats = sufficient_statistics(batch, local, lam.shape)
        lam_hat = hp.eta + (D / len(batch)) * sstats
        rho = learning_rate(t, config.schedule)
        metrics.learning_rates.append(rho)
        try:
            lam = svi_step(lam, lam_hat, rho)
        except ConfigurationError as exc:
            raise ConfigurationError(f"iteration {t}: {exc}") from exc
        if not lam.is_positive():
            raise NumericalDivergenceError(f"lambda left the positive orthant at iteration {t}",
                                           iteration=t)
        elapsed += time.perf_counter() - start
        docs_seen += len(batch)
        if config.eval_every:
            v = gradient_variance(batch, local, lam, hp)
            if v == v:
                var_sum += v
                var_n += 1
        last = t == T - 1
        if config.eval_every and ((t + 1) % config.eval_every == 0 or last):
            variance = var_sum / var_n if var_n else float("nan")
            var_sum, var_n = 0.0, 0
            evaluate(metrics, lam, test_docs, hp, t + 1, elapsed, docs_seen, variance,
                     config.local_tol, config.local_max_iters)
    metrics.wall_clock_seconds = elapsed
    metrics.docs_processed = docs_seen
    metrics.iterations = T
    if not config.eval_every:
        evaluate(metrics, lam, test_docs, hp, T, elapsed, docs_seen, float("nan"),
                 config.local_tol, config.local_max_iters)
    logger.info("serial run: %d iterations, %d docs, %.3fs", T, docs_seen, elapsed)
    return lam, metrics
