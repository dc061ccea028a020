"""
Threaded workers and throughput
===============================

With real threads the master serves immutable lambda snapshots and collects
gradients from a queue. An artificial per-document delay stands in for the
local step of a large model; it releases the interpreter lock, so workers
overlap even on a small machine.
"""

import os

from asysvi import HyperParams, LearningSchedule, generate_synthetic
from asysvi.engine import THREADED, AsyncConfig, ThreadedEngine
from asysvi.lda import block_topics

corpus = generate_synthetic(block_topics(2, 10), 0.5, 200, 10, seed=8)
hp = HyperParams(0.5, 0.01, 2, corpus.D)
print("cores available:", os.cpu_count())

# %%
# Same per-worker work, increasing worker counts.
base = None
for workers in (1, 2, 4):
    config = AsyncConfig(num_workers=workers, M=1, B=64, worker_batch_size=1,
                         schedule=LearningSchedule(24, 0.7), T=150 * workers,
                         mode=THREADED, doc_cost_seconds=0.005)
    lam, metrics, stats = ThreadedEngine(corpus, hp, config).run()
    rate = metrics.docs_processed / metrics.wall_clock_seconds
    base = base or rate
    print(f"{workers} workers: {rate:7.1f} docs/s  ({rate / base:.2f}x)  "
          f"max staleness {stats.max_observed}")
