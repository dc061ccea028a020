"""Asynchronous master/worker SVI with bounded staleness.

Workers repeatedly sample a mini-batch, pull a snapshot of lambda, run the
local step and push a natural gradient tagged with the snapshot's version.
The master collects exactly M gradients, rejects (or flags) any whose
staleness ``version - base_version`` exceeds B, averages the rest and
applies ``lambda + rho_t * G``.

Two execution modes share :func:`worker_loop` and the master's
accept/aggregate/apply logic:

* ``simulate`` replays a :class:`DelaySchedule` in a single thread. Slot
  (t, m) is computed against version ``max(0, t - tau[t, m])``, so a run
  is bitwise reproducible from ``(seed, schedule)``.
* ``ThreadedEngine`` runs real worker threads that exchange immutable
  value copies with the master through a queue.
"""

from collections import Counter
from dataclasses import dataclass, field
import csv
import hashlib
import logging
import queue
import threading
import time
import warnings

import numpy as np

from .errors import (
    ConfigurationError,
    NumericalDivergenceError,
    StalenessStarvationError,
    UsageError,
)
from .expfam import (
    GlobalParams,
    LearningSchedule,
    aggregate_gradients,
    apply_gradient,
    learning_rate,
)
from .lda import DEFAULT_MAX_ITERS, DEFAULT_TOL, e_step, gradient_variance, init_lambda, natural_gradient
from .metrics import RunMetrics, compute_tsp_rsp  # noqa: F401  (re-exported)
from .serial import evaluate, init_rng, sample_batch, worker_rng

logger = logging.getLogger(__name__)

SIMULATED = "simulated"
THREADED = "threaded"
DROP = "drop"
APPLY = "apply"

# consecutive drops allowed per aggregation slot before giving up
STARVATION_FACTOR = 10


class StalenessWarning(UserWarning):
    """A gradient staler than B was applied (``stale_policy='apply'``)."""


@dataclass(frozen=True)
class AsyncConfig:
    num_workers: int
    M: int
    B: int
    worker_batch_size: int
    schedule: LearningSchedule
    T: int
    rng_seed: int = 0
    mode: str = SIMULATED
    stale_policy: str = DROP
    eval_every: int = 0
    local_tol: float = DEFAULT_TOL
    local_max_iters: int = DEFAULT_MAX_ITERS
    doc_cost_seconds: float = 0.0
    record_snapshots: bool = False

    def __post_init__(self):
        if self.num_workers < 1:
            raise ConfigurationError("num_workers must be >= 1")
        if self.M < 1:
            raise ConfigurationError("M must be >= 1")
        if self.B < 0:
            raise ConfigurationError("B must be >= 0")
        if self.worker_batch_size < 1:
            raise ConfigurationError("worker_batch_size must be >= 1")
        if self.T < 1:
            raise ConfigurationError("T must be >= 1")
        if self.mode not in (SIMULATED, THREADED):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.stale_policy not in (DROP, APPLY):
            raise ConfigurationError(f"unknown stale_policy {self.stale_policy!r}")


class DelaySchedule:
    """Delay tau[t, m] for aggregation slot m of master iteration t.

    Optionally also fixes which worker produces each slot; by default slot
    (t, m) goes to worker ``(t * M + m) % num_workers``. Table lookups that
    miss return delay 0.
    """

    def __init__(self, delay_fn, worker_fn=None, max_delay=None):
        self._delay = delay_fn
        self._worker = worker_fn
        self.max_delay = max_delay

    def __call__(self, t, m):
        tau = int(self._delay(t, m))
        if tau < 0:
            raise ConfigurationError(f"negative delay at (t={t}, m={m})")
        return tau

    def worker(self, t, m, M, num_workers):
        if self._worker is not None:
            w = self._worker(t, m)
            if w is not None:
                return int(w) % num_workers
        return (t * M + m) % num_workers

    @classmethod
    def constant(cls, tau):
        return cls(lambda t, m: tau, max_delay=int(tau))

    @classmethod
    def zeros(cls):
        return cls.constant(0)

    @classmethod
    def from_table(cls, delays, workers=None):
        """``delays`` maps (t, m) -> tau; ``workers`` maps (t, m) -> worker id."""
        delays = dict(delays)
        workers = dict(workers) if workers else None
        wf = (lambda t, m: workers.get((t, m))) if workers else None
        return cls(lambda t, m: delays.get((t, m), 0), wf,
                   max_delay=max(delays.values(), default=0))

    @classmethod
    def from_array(cls, arr):
        """Dense T x M integer array of delays."""
        arr = np.asarray(arr, dtype=np.int64)
        if arr.ndim != 2:
            raise ConfigurationError("delay array must be 2-D (T x M)")
        return cls.from_table({(t, m): int(arr[t, m])
                               for t in range(arr.shape[0]) for m in range(arr.shape[1])})

    @classmethod
    def uniform(cls, B, T, M, seed):
        """I.i.d. delays uniform on {0, ..., B}."""
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**31 - 1,)))
        return cls.from_array(rng.integers(0, B + 1, size=(T, M)))

    @classmethod
    def from_csv(cls, path):
        """Rows ``t,m,tau`` with an optional fourth ``worker`` column.

        A header row is allowed; ``#`` lines are ignored.
        """
        delays, workers = {}, {}
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    vals = [int(x) for x in row]
                except ValueError:
                    if lineno == 1:
                        continue
                    raise ConfigurationError(f"{path}:{lineno}: non-integer delay row {row}") from None
                if len(vals) not in (3, 4):
                    raise ConfigurationError(f"{path}:{lineno}: expected t,m,tau[,worker]")
                delays[(vals[0], vals[1])] = vals[2]
                if len(vals) == 4:
                    workers[(vals[0], vals[1])] = vals[3]
        return cls.from_table(delays, workers or None)

    def to_csv(self, path, T, M, num_workers=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "m", "tau"] + (["worker"] if num_workers else []))
            for t in range(T):
                for m in range(M):
                    row = [t, m, self(t, m)]
                    if num_workers:
                        row.append(self.worker(t, m, M, num_workers))
                    w.writerow(row)


@dataclass(frozen=True)
class GradientMsg:
    """A worker's gradient plus where it came from."""

    gradient: object
    worker_id: int
    snapshot_checksum: str = ""
    # (batch, local states) kept for the variance diagnostic
    work: tuple = field(default=None, repr=False, compare=False)

    @property
    def base_version(self):
        return self.gradient.base_version

    @property
    def batch_size(self):
        return self.gradient.batch_size


@dataclass
class MessageEvent:
    t: int
    slot: int
    worker: int
    base_version: int
    staleness: int
    accepted: bool


@dataclass
class StalenessStats:
    """Staleness seen by the master.

    ``histogram`` counts every received gradient by staleness, dropped ones
    included; ``max_observed`` is taken over applied gradients only.
    """

    histogram: Counter = field(default_factory=Counter)
    max_observed: int = 0
    dropped_count: int = 0
    violations: int = 0
    events: list = field(default_factory=list)

    @property
    def received(self):
        return sum(self.histogram.values())

    @property
    def applied(self):
        return self.received - self.dropped_count

    def mean_applied(self):
        acc = [e.staleness for e in self.events if e.accepted]
        return float(np.mean(acc)) if acc else 0.0


def checksum(values):
    return hashlib.blake2b(np.ascontiguousarray(values).tobytes(), digest_size=16).hexdigest()


def worker_loop(corpus_view, hp, config, worker_id, pull):
    """Endless generator of GradientMsg for one worker.

    Each step samples ``worker_batch_size`` documents from this worker's
    own seeded stream, then calls ``pull()`` for a lambda snapshot, and
    yields the gradient tagged with that snapshot's version. Closing the
    generator stops it between messages.
    """
    docs = corpus_view
    rng = worker_rng(config.rng_seed, worker_id)
    S = config.worker_batch_size
    while True:
        idx = sample_batch(rng, len(docs), S)
        snap = pull()
        batch = [docs[i] for i in idx]
        if config.doc_cost_seconds:
            time.sleep(config.doc_cost_seconds * S)
        local = e_step(batch, snap, hp, config.local_tol, config.local_max_iters)
        grad = natural_gradient(batch, local, snap, hp)
        tag = checksum(snap.values) if config.record_snapshots else ""
        yield GradientMsg(grad, worker_id, tag, work=(batch, local))


class _Master:
    """Accept/aggregate/apply logic shared by both execution modes."""

    def __init__(self, lam, hp, config, test_docs):
        self.lam = lam
        self.hp = hp
        self.config = config
        self.test_docs = list(test_docs or [])
        self.stats = StalenessStats()
        self.metrics = RunMetrics()
        self.pending = []
        self.consecutive_drops = 0
        self.docs_applied = 0
        self.elapsed = 0.0
        self._var_sum = 0.0
        self._var_n = 0

    @property
    def t(self):
        return self.lam.version

    def offer(self, msg, slot=-1):
        """Consider one gradient; returns True if it joined the aggregate."""
        cfg = self.config
        staleness = self.t - msg.base_version
        if staleness < 0:
            raise UsageError(f"gradient from the future: base {msg.base_version} > version {self.t}")
        self.stats.histogram[staleness] += 1
        accepted = True
        if staleness > cfg.B:
            if cfg.stale_policy == DROP:
                accepted = False
            else:
                self.stats.violations += 1
                warnings.warn(f"applying gradient with staleness {staleness} > B={cfg.B}",
                              StalenessWarning, stacklevel=2)
        self.stats.events.append(MessageEvent(self.t, slot, msg.worker_id, msg.base_version,
                                              staleness, accepted))
        if not accepted:
            self.stats.dropped_count += 1
            self.consecutive_drops += 1
            if self.consecutive_drops > STARVATION_FACTOR * cfg.M:
                raise StalenessStarvationError(
                    f"{self.consecutive_drops} consecutive gradients exceeded B={cfg.B} at t={self.t}"
                )
            return False
        self.consecutive_drops = 0
        self.stats.max_observed = max(self.stats.max_observed, staleness)
        self.pending.append(msg)
        return True

    def ready(self):
        return len(self.pending) >= self.config.M

    def update(self):
        """Average the M pending gradients and apply them; returns the new lambda."""
        cfg = self.config
        msgs = self.pending[:cfg.M]
        self.pending = self.pending[cfg.M:]
        t = self.t
        G = aggregate_gradients([m.gradient for m in msgs])
        rho = learning_rate(t, cfg.schedule)
        self.metrics.learning_rates.append(rho)
        try:
            self.lam = apply_gradient(self.lam, G, rho)
        except NumericalDivergenceError as exc:
            exc.iteration = t
            raise
        self.docs_applied += sum(m.batch_size for m in msgs)
        if cfg.eval_every:
            for m in msgs:
                if m.work is not None:
                    batch, local = m.work
                    v = gradient_variance(batch, local, self.lam, self.hp)
                    if v == v:
                        self._var_sum += v
                        self._var_n += 1
        return self.lam

    def maybe_checkpoint(self, force=False):
        cfg = self.config
        t = self.t
        due = cfg.eval_every and (t % cfg.eval_every == 0 or t == cfg.T)
        if not (due or force):
            return
        variance = self._var_sum / self._var_n if self._var_n else float("nan")
        self._var_sum, self._var_n = 0.0, 0
        evaluate(self.metrics, self.lam, self.test_docs, self.hp, t, self.elapsed,
                 self.docs_applied, variance, cfg.local_tol, cfg.local_max_iters,
                 max_staleness=self.stats.max_observed,
                 mean_staleness=self.stats.mean_applied(),
                 dropped_count=self.stats.dropped_count)

    def finish(self):
        cfg = self.config
        if not cfg.eval_every:
            self.maybe_checkpoint(force=True)
        self.metrics.wall_clock_seconds = self.elapsed
        self.metrics.docs_processed = self.docs_applied
        self.metrics.iterations = self.t
        return self.lam, self.metrics, self.stats


def _start_lambda(corpus, hp, config, lam0):
    if lam0 is not None:
        return lam0
    return init_lambda(hp.num_topics, corpus.W, init_rng(config.rng_seed))


def simulate(corpus, hp, config, delay_schedule, test_docs=None, lam0=None):
    """Single-threaded replay of the master/worker interleaving.

    Returns ``(lambda, RunMetrics, StalenessStats)``. A dropped slot is
    refilled by the same worker pulling the current version.
    """
    if delay_schedule is None:
        raise ConfigurationError("simulated mode needs a DelaySchedule")
    docs = list(corpus)
    if not docs:
        raise UsageError("corpus is empty")
    cfg = config
    master = _Master(_start_lambda(corpus, hp, cfg, lam0), hp, cfg, test_docs)
    history = {0: master.lam}
    horizon = delay_schedule.max_delay
    if horizon is not None:
        horizon = max(horizon, cfg.B)

    requested = [0]
    pull = lambda: history[requested[0]]  # noqa: E731
    workers = [worker_loop(docs, hp, cfg, w, pull) for w in range(cfg.num_workers)]

    try:
        for t in range(cfg.T):
            start = time.perf_counter()
            for m in range(cfg.M):
                tau = delay_schedule(t, m)
                w = delay_schedule.worker(t, m, cfg.M, cfg.num_workers)
                requested[0] = max(0, t - tau)
                if not master.offer(next(workers[w]), slot=m):
                    requested[0] = t
                    master.offer(next(workers[w]), slot=m)
            lam = master.update()
            history[lam.version] = lam
            if horizon is not None:
                history.pop(lam.version - horizon - 1, None)
            master.elapsed += time.perf_counter() - start
            master.maybe_checkpoint()
    finally:
        for g in workers:
            g.close()
    return master.finish()


class ChannelClosed(Exception):
    pass


class Channel:
    """Bounded FIFO from workers to the master that can be closed."""

    def __init__(self, maxsize=0):
        self._q = queue.Queue(maxsize)
        self._closed = threading.Event()

    def put(self, item, poll=0.05):
        while True:
            if self._closed.is_set():
                raise ChannelClosed()
            try:
                self._q.put(item, timeout=poll)
                return
            except queue.Full:
                continue

    def get(self, timeout=None):
        return self._q.get(timeout=timeout)

    def close(self):
        self._closed.set()
        # unblock anything waiting on a full queue
        try:
            while True:
                self._q.get_nowait()
        except queue.Empty:
            pass

    @property
    def closed(self):
        return self._closed.is_set()


class _WorkerFailure:
    def __init__(self, exc):
        self.exc = exc


class ThreadedEngine:
    """One master (the calling thread) and ``num_workers`` worker threads.

    The master is the only writer of lambda. Each update builds a new
    immutable GlobalParams and publishes it under a lock, so a pull always
    sees a whole version. Workers pause while the master evaluates.
    """

    def __init__(self, corpus, hp, config, test_docs=None, lam0=None, msg_timeout=60.0):
        if config.mode != THREADED:
            raise ConfigurationError("ThreadedEngine needs mode='threaded'")
        self.docs = list(corpus)
        if not self.docs:
            raise UsageError("corpus is empty")
        self.corpus = corpus
        self.hp = hp
        self.config = config
        self.test_docs = test_docs
        self.lam0 = lam0
        self.msg_timeout = msg_timeout
        self._lock = threading.Lock()
        self._snapshot = None
        self.published = {}
        self.pulled = []

    def pull(self):
        with self._lock:
            snap = self._snapshot
        return GlobalParams(snap.values.copy(), snap.version)

    def _publish(self, lam):
        if self.config.record_snapshots:
            self.published[lam.version] = checksum(lam.values)
        with self._lock:
            self._snapshot = lam

    def _run_worker(self, wid, channel, stop, gate):
        gen = worker_loop(self.docs, self.hp, self.config, wid, self.pull)
        try:
            while not stop.is_set():
                gate.wait()
                if stop.is_set():
                    break
                msg = next(gen)
                if stop.is_set():
                    break
                channel.put(msg)
        except ChannelClosed:
            pass
        except BaseException as exc:  # surfaced to the master
            try:
                channel.put(_WorkerFailure(exc))
            except ChannelClosed:
                pass
        finally:
            gen.close()

    def run(self):
        cfg = self.config
        master = _Master(_start_lambda(self.corpus, self.hp, cfg, self.lam0), self.hp, cfg,
                         self.test_docs)
        self._publish(master.lam)
        channel = Channel(maxsize=max(cfg.M, cfg.num_workers))
        stop = threading.Event()
        gate = threading.Event()
        gate.set()
        threads = [threading.Thread(target=self._run_worker, args=(w, channel, stop, gate),
                                    name=f"asysvi-worker-{w}", daemon=True)
                   for w in range(cfg.num_workers)]
        start = time.perf_counter()
        for th in threads:
            th.start()
        try:
            while master.t < cfg.T:
                while not master.ready():
                    try:
                        msg = channel.get(timeout=self.msg_timeout)
                    except queue.Empty:
                        raise RuntimeError("no gradient arrived from any worker in time") from None
                    if isinstance(msg, _WorkerFailure):
                        raise msg.exc
                    if cfg.record_snapshots:
                        self.pulled.append((msg.base_version, msg.snapshot_checksum))
                    master.offer(msg)
                self._publish(master.update())
                if cfg.eval_every and (master.t % cfg.eval_every == 0 or master.t == cfg.T):
                    gate.clear()
                    master.elapsed += time.perf_counter() - start
                    master.maybe_checkpoint()
                    start = time.perf_counter()
                    gate.set()
            master.elapsed += time.perf_counter() - start
        finally:
            stop.set()
            gate.set()
            channel.close()
            for th in threads:
                th.join(timeout=10.0)
        return master.finish()


def master_loop(corpus, hp, config, delay_schedule=None, test_docs=None, lam0=None):
    """Run the asynchronous algorithm in the configured mode.

    Returns ``(lambda, RunMetrics, StalenessStats)``.
    """
    if config.mode == SIMULATED:
        return simulate(corpus, hp, config, delay_schedule, test_docs=test_docs, lam0=lam0)
    return ThreadedEngine(corpus, hp, config, test_docs=test_docs, lam0=lam0).run()
