"""
Working with UCI bag-of-words files
===================================

Corpora on disk use the UCI layout: three header lines (D, W, NNZ) followed
by 1-based ``doc word count`` triples, plus a vocabulary file with one word
per line. This script writes a synthetic corpus, reads it back, splits it
and lists the top words of a fitted model.
"""

import tempfile
from pathlib import Path

from asysvi import HyperParams, LearningSchedule, generate_synthetic
from asysvi.bench.cli import format_topics
from asysvi.corpus import SplitSpec, load_corpus, save_corpus, split
from asysvi.lda import block_topics
from asysvi.serial import SerialConfig, run_serial

vocab = ["apple", "pear", "plum", "fig", "kiwi", "oak", "elm", "ash", "yew", "fir"]
corpus = generate_synthetic(block_topics(2, 10), 0.5, 300, 50, seed=4, vocab=vocab)

# %%
# Round trip through disk. The vocabulary lands next to the docword file.
tmp = Path(tempfile.mkdtemp())
save_corpus(corpus, tmp / "docword.fruit.txt")
print((tmp / "docword.fruit.txt").read_text().splitlines()[:6])
loaded = load_corpus(tmp / "docword.fruit.txt")
assert loaded == corpus

# %%
# Hold out 50 documents for evaluation.
train, _, test = split(loaded, SplitSpec(validation_count=0, test_count=50, seed=0))
hp = HyperParams(0.5, 0.01, 2, train.D)
lam, metrics = run_serial(train, test.docs, hp,
                          SerialConfig(LearningSchedule(24, 0.7), 16, 200))
print(f"held-out perplexity {metrics.final_perplexity:.3f}")
print(format_topics(lam, train.vocab, top_n=5))
