"""Latent Dirichlet allocation as a conjugate exponential-family model.

Topics are rows of a K x W Dirichlet parameter ``lambda``. For a document,
the local step alternates

    phi[w, k]  proportional to  exp(E[log theta_k] + E[log beta_{k, w}])
    gamma[k] = alpha + sum_w count_w * phi[w, k]

and the stochastic natural gradient of a batch of S documents out of D is

    g = eta + (D / S) * sum_docs count * phi  -  lambda
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import gammaln, xlogy

from .corpus import Corpus, Document
from .errors import DomainError, StructuralError, UsageError
from .expfam import GlobalParams, NaturalGradient
from .special import dirichlet_expectation

DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITERS = 100


@dataclass
class LocalState:
    """Per-document variational parameters.

    ``phi`` has one row per distinct word of the document (same order as
    ``Document.word_ids``). ``gamma`` is always exactly
    ``alpha + counts @ phi`` for the returned ``phi``.
    """

    gamma: np.ndarray
    phi: np.ndarray
    iterations: int = 0
    converged: bool = True


@dataclass(frozen=True)
class EvalResult:
    total_log_likelihood_bound: float
    word_count: int

    @property
    def perplexity(self):
        return perplexity_from_bound(self.total_log_likelihood_bound, self.word_count)

    @property
    def per_word_bound(self):
        return self.total_log_likelihood_bound / self.word_count


def perplexity_from_bound(bound, word_count):
    if word_count <= 0:
        raise UsageError("word_count must be positive")
    return math.exp(-bound / word_count)


def init_lambda(num_topics, vocab_size, rng):
    """Random positive start: Gamma(shape=100, scale=1/100) entries (mean 1)."""
    values = rng.gamma(100.0, 1.0 / 100.0, size=(num_topics, vocab_size))
    return GlobalParams(values, version=0)


def expected_log_beta(lam):
    return dirichlet_expectation(getattr(lam, "values", lam))


def local_step(doc, lam, hp, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS, *,
               elog_beta=None, gamma_init=None, on_iteration=None):
    """Coordinate ascent on (gamma, phi) for one document with lambda fixed.

    Stops once the mean absolute change in gamma drops below ``tol`` or
    after ``max_iters`` sweeps; hitting the cap only clears ``converged``.
    ``elog_beta`` lets batch callers share one E[log beta] computation.
    Without ``gamma_init`` the start is the uniform-phi point
    ``alpha + N_d / K``.
    """
    if len(doc) == 0:
        raise UsageError(f"document {doc.doc_id} is empty")
    if elog_beta is None:
        elog_beta = expected_log_beta(lam)
    K = elog_beta.shape[0]
    if doc.word_ids[-1] >= elog_beta.shape[1]:
        raise StructuralError(f"document {doc.doc_id} has word ids beyond W={elog_beta.shape[1]}")
    cts = doc.counts.astype(np.float64)
    elog_beta_d = elog_beta[:, doc.word_ids].T  # n_words x K

    if gamma_init is None:
        gamma = np.full(K, hp.alpha + cts.sum() / K)
    else:
        gamma = np.array(gamma_init, dtype=np.float64)
        if gamma.shape != (K,):
            raise StructuralError(f"gamma_init must have shape ({K},)")

    converged = False
    it = 0
    phi = None
    for it in range(1, max_iters + 1):
        log_phi = elog_beta_d + dirichlet_expectation(gamma)
        top = log_phi.max(axis=1, keepdims=True)
        log_phi -= top + np.log(np.exp(log_phi - top).sum(axis=1, keepdims=True))
        phi = np.exp(log_phi)
        new_gamma = hp.alpha + cts @ phi
        change = np.mean(np.abs(new_gamma - gamma))
        gamma = new_gamma
        if on_iteration is not None:
            on_iteration(gamma, phi)
        if change < tol:
            converged = True
            break
    return LocalState(gamma=gamma, phi=phi, iterations=it, converged=converged)


def e_step(docs, lam, hp, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS, *, gamma_init=None):
    """Local step for every document against the same lambda."""
    elog_beta = expected_log_beta(lam)
    inits = gamma_init if gamma_init is not None else [None] * len(docs)
    return [
        local_step(d, lam, hp, tol, max_iters, elog_beta=elog_beta, gamma_init=g0)
        for d, g0 in zip(docs, inits)
    ]


def sufficient_statistics(docs, local, shape):
    """K x W matrix of expected word-topic counts ``sum count * phi``."""
    if len(docs) != len(local):
        raise UsageError(f"{len(docs)} documents but {len(local)} local states")
    sstats = np.zeros(shape)
    for doc, st in zip(docs, local):
        sstats[:, doc.word_ids] += (doc.counts[:, np.newaxis] * st.phi).T
    return sstats


def natural_gradient(batch, local, lam, hp):
    """Stochastic natural gradient of a batch, scaled by D / S."""
    S = len(batch)
    if S < 1:
        raise UsageError("batch must hold at least one document")
    if S != len(local):
        raise UsageError(f"{S} documents but {len(local)} local states")
    sstats = sufficient_statistics(batch, local, lam.shape)
    values = (hp.eta + (hp.corpus_size / S) * sstats) - lam.values
    return NaturalGradient(values, base_version=lam.version, batch_size=S)


def optimal_global(docs, local, hp, shape):
    """Closed-form lambda given every document's phi: ``eta + sum count * phi``."""
    return hp.eta + sufficient_statistics(docs, local, shape)


def gradient_variance(docs, local, lam, hp, ddof=1):
    """Spread of single-document gradients, ``mean ||g_i - mean g||^2``.

    Each g_i uses the D/1 scaling, so this estimates the variance of the
    one-document gradient estimator. Returns NaN when there are not enough
    documents for the requested ``ddof``.
    """
    n = len(docs)
    if n - ddof <= 0:
        return float("nan")
    D = hp.corpus_size
    total = np.zeros(lam.shape)
    sumsq = 0.0
    for doc, st in zip(docs, local):
        contrib = D * doc.counts[:, np.newaxis] * st.phi
        total[:, doc.word_ids] += contrib.T
        sumsq += float(np.sum(contrib * contrib))
    mean = total / n
    return max(sumsq - n * float(np.sum(mean * mean)), 0.0) / (n - ddof)


def document_bound(doc, state, elog_beta, alpha):
    """Per-document ELBO term: E[log p(x, z, theta | beta)] - E[log q(z, theta)]."""
    gamma = state.gamma
    K = gamma.shape[0]
    elog_theta = dirichlet_expectation(gamma)
    phi = state.phi
    word_term = elog_beta[:, doc.word_ids].T + elog_theta
    score = float(doc.counts @ (np.sum(phi * word_term, axis=1) - np.sum(xlogy(phi, phi), axis=1)))
    score += float(np.sum((alpha - gamma) * elog_theta))
    score += float(np.sum(gammaln(gamma)) - K * gammaln(alpha))
    score += float(gammaln(K * alpha) - gammaln(gamma.sum()))
    return score


def global_bound(lam, eta):
    """E[log p(beta | eta)] - E[log q(beta | lambda)] summed over topics."""
    values = lam.values
    W = values.shape[1]
    elog_beta = expected_log_beta(values)
    score = float(np.sum((eta - values) * elog_beta))
    score += float(np.sum(gammaln(values)) - values.size * gammaln(eta))
    score += float(np.sum(gammaln(W * eta) - gammaln(values.sum(axis=1))))
    return score


def elbo(docs, local, lam, hp):
    """Full evidence lower bound for a corpus at explicit (lambda, gamma, phi)."""
    elog_beta = expected_log_beta(lam)
    total = sum(document_bound(d, s, elog_beta, hp.alpha) for d, s in zip(docs, local))
    return total + global_bound(lam, hp.eta)


def held_out_bound(docs, lam, hp, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS):
    """Sum of per-document bounds on held-out documents with lambda frozen.

    ``docs`` must not overlap the training data; this is not checked.
    """
    docs = list(docs)
    if not docs:
        raise UsageError("held-out evaluation needs at least one document")
    elog_beta = expected_log_beta(lam)
    total = 0.0
    words = 0
    for doc in docs:
        st = local_step(doc, lam, hp, tol, max_iters, elog_beta=elog_beta)
        total += document_bound(doc, st, elog_beta, hp.alpha)
        words += doc.length
    return EvalResult(total, words)


def block_topics(num_topics, vocab_size):
    """Topics uniform over disjoint contiguous vocabulary blocks."""
    if vocab_size < num_topics:
        raise DomainError("need at least one word per topic")
    beta = np.zeros((num_topics, vocab_size))
    for k, block in enumerate(np.array_split(np.arange(vocab_size), num_topics)):
        beta[k, block] = 1.0 / block.size
    return beta


def dirichlet_topics(num_topics, vocab_size, eta, rng):
    """Topics drawn from a symmetric Dirichlet(eta)."""
    return rng.dirichlet(np.full(vocab_size, eta), size=num_topics)


def generate_synthetic(beta, alpha, num_docs, doc_length, seed, vocab=None):
    """Sample documents from the LDA generative process given fixed topics.

    Per document: theta ~ Dir(alpha), then for each of ``doc_length``
    tokens z ~ Mult(theta) and x ~ Mult(beta[z]).
    """
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim != 2 or np.any(beta < 0) or not np.allclose(beta.sum(axis=1), 1.0, rtol=0, atol=1e-9):
        raise DomainError("beta must be a K x W row-stochastic matrix")
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    if doc_length < 1:
        raise UsageError("doc_length must be >= 1")
    K, W = beta.shape
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(beta, axis=1)
    cdf[:, -1] = 1.0
    docs = []
    for d in range(num_docs):
        theta = rng.dirichlet(np.full(K, alpha)) if K > 1 else np.ones(1)
        z = rng.choice(K, size=doc_length, p=theta)
        u = rng.random(doc_length)
        x = np.empty(doc_length, dtype=np.int64)
        for k in np.unique(z):
            sel = z == k
            x[sel] = np.searchsorted(cdf[k], u[sel], side="right")
        x = np.minimum(x, W - 1)
        docs.append(Document.from_tokens(x, doc_id=d))
    if vocab is None:
        vocab = [f"w{i}" for i in range(W)]
    return Corpus(docs, vocab)


def topic_word_probs(lam):
    values = getattr(lam, "values", lam)
    return values / values.sum(axis=1, keepdims=True)


def match_topics(estimated, truth):
    """Cosine similarity of each true topic to its best-matched estimate.

    Matching is a one-to-one assignment maximizing total cosine. Returns the
    per-topic similarities ordered like ``truth`` and the matched estimate
    index for each.
    """
    est = np.asarray(estimated, dtype=np.float64)
    tru = np.asarray(truth, dtype=np.float64)
    est_n = est / np.linalg.norm(est, axis=1, keepdims=True)
    tru_n = tru / np.linalg.norm(tru, axis=1, keepdims=True)
    cos = tru_n @ est_n.T
    rows, cols = linear_sum_assignment(-cos)
    return cos[rows, cols], cols


def coordinate_ascent(docs, lam, hp, rounds, tol=1e-10, max_iters=1000, *, lam_tol=None):
    """Batch variational inference: alternate local steps and the closed-form
    global update over all of ``docs``.

    Local steps are warm-started from the previous round's gamma so every
    coordinate move is an exact maximization and the bound cannot drop.
    Stops early once the largest lambda change is below ``lam_tol``.
    Returns ``(lambda, local_states, elbo_history)``; the history holds the
    bound after each round, evaluated at the (lambda, gamma, phi) it ends on.
    """
    docs = list(docs)
    local = None
    history = []
    for _ in range(rounds):
        inits = [s.gamma for s in local] if local is not None else None
        local = e_step(docs, lam, hp, tol, max_iters, gamma_init=inits)
        new = GlobalParams(optimal_global(docs, local, hp, lam.shape), lam.version + 1)
        history.append(elbo(docs, local, new, hp))
        delta = float(np.max(np.abs(new.values - lam.values)))
        lam = new
        if lam_tol is not None and delta < lam_tol:
            break
    return lam, local, history
