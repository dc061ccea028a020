import numpy as np
import pytest

from asysvi import Document, HyperParams, generate_synthetic
from asysvi.lda import block_topics, init_lambda


@pytest.fixture
def tiny_corpus():
    """20 documents, K=2 block topics over W=6, 6 tokens per document."""
    return generate_synthetic(block_topics(2, 6), 0.5, 20, 6, seed=3)


@pytest.fixture
def tiny_hp(tiny_corpus):
    return HyperParams(alpha=0.5, eta=0.01, num_topics=2, corpus_size=tiny_corpus.D)


@pytest.fixture
def tiny_lambda(tiny_corpus):
    return init_lambda(2, tiny_corpus.W, np.random.default_rng(0))


@pytest.fixture(scope="session")
def recovery_truth():
    return block_topics(2, 10)


@pytest.fixture(scope="session")
def recovery_corpus(recovery_truth):
    return generate_synthetic(recovery_truth, 0.5, 500, 100, seed=1)


@pytest.fixture(scope="session")
def recovery_test_docs(recovery_truth):
    return generate_synthetic(recovery_truth, 0.5, 100, 100, seed=2).docs


@pytest.fixture(scope="session")
def recovery_hp(recovery_corpus):
    return HyperParams(alpha=0.5, eta=0.01, num_topics=2, corpus_size=recovery_corpus.D)


@pytest.fixture
def small_corpus():
    """50 documents from 3 block topics over W=20 (the equivalence corpus)."""
    return generate_synthetic(block_topics(3, 20), 0.5, 50, 30, seed=11)


@pytest.fixture
def small_hp(small_corpus):
    return HyperParams(alpha=0.5, eta=0.01, num_topics=3, corpus_size=small_corpus.D)


def doc(pairs, doc_id=0):
    ids = sorted(pairs)
    return Document(ids, [pairs[i] for i in ids], doc_id)
