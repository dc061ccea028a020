"""
Bounded staleness in the simulated asynchronous engine
======================================================

The master averages M worker gradients per update. Each gradient was
computed against a snapshot that may be a few versions old. The simulator
replays a delay schedule exactly, so we can vary the bound B and compare
held-out quality against a serial run that saw the same number of documents.
"""

from asysvi import HyperParams, LearningSchedule, generate_synthetic
from asysvi.engine import AsyncConfig, DelaySchedule, compute_tsp_rsp, simulate
from asysvi.lda import block_topics
from asysvi.serial import SerialConfig, run_serial

truth = block_topics(2, 10)
corpus = generate_synthetic(truth, 0.5, 500, 100, seed=1)
test_docs = generate_synthetic(truth, 0.5, 100, 100, seed=2).docs
hp = HyperParams(0.5, 0.01, 2, corpus.D)
schedule = LearningSchedule(24, 0.7)
T, M, S = 300, 4, 4

# %%
# Serial baseline with batch M * S so both runs consume equal documents.
_, serial = run_serial(corpus, test_docs, hp, SerialConfig(schedule, M * S, T))

# %%
# Delays drawn uniformly from {0, ..., B}; anything older than B is dropped.
for B in (0, 2, 5, 10):
    config = AsyncConfig(num_workers=M, M=M, B=B, worker_batch_size=S, schedule=schedule, T=T)
    _, metrics, stats = simulate(corpus, hp, config, DelaySchedule.uniform(B, T, M, seed=0),
                                 test_docs=test_docs)
    _, rsp = compute_tsp_rsp(serial, metrics)
    hist = dict(sorted(stats.histogram.items()))
    print(f"B={B:2d}  RSP={rsp:.4f}  max staleness={stats.max_observed}  histogram={hist}")

# %%
# A schedule that breaks the bound: one slot is B + 1 behind and gets dropped.
config = AsyncConfig(num_workers=2, M=2, B=3, worker_batch_size=4, schedule=schedule, T=20)
_, _, stats = simulate(corpus, hp, config, DelaySchedule.from_table({(10, 0): 4}))
print("dropped:", stats.dropped_count, [e for e in stats.events if not e.accepted])
