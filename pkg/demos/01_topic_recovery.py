"""
Recovering planted topics with serial SVI
=========================================

Two topics live on disjoint halves of a ten-word vocabulary. We sample
documents from them, fit LDA with stochastic variational inference and
check that the learned topics line up with the planted ones.
"""

import numpy as np

from asysvi import HyperParams, LearningSchedule, generate_synthetic
from asysvi.lda import block_topics, match_topics, topic_word_probs
from asysvi.serial import SerialConfig, run_serial

# %%
# Ground truth: topic 0 uses words 0-4, topic 1 uses words 5-9.
truth = block_topics(2, 10)
corpus = generate_synthetic(truth, alpha=0.5, num_docs=500, doc_length=100, seed=1)
test = generate_synthetic(truth, alpha=0.5, num_docs=100, doc_length=100, seed=2)
print(corpus.D, "documents,", corpus.total_tokens, "tokens")

# %%
# Mini-batches of 16 documents, step size (24 + t) ** -0.7.
hp = HyperParams(alpha=0.5, eta=0.01, num_topics=2, corpus_size=corpus.D)
config = SerialConfig(LearningSchedule(tau0=24, kappa=0.7), batch_size=16,
                      num_iterations=500, eval_every=100)
lam, metrics = run_serial(corpus, test.docs, hp, config)

for cp in metrics.checkpoints:
    print(f"iter {cp.iteration:4d}  held-out perplexity {cp.perplexity:.4f}")

# %%
# Each planted topic should have a near-identical learned counterpart.
cos, order = match_topics(topic_word_probs(lam), truth)
print("matched cosines:", np.round(cos, 4))
print(np.round(topic_word_probs(lam)[order], 3))
