import warnings

import numpy as np
import pytest

from asysvi import GlobalParams, HyperParams, LearningSchedule
from asysvi.engine import (
    APPLY,
    DROP,
    THREADED,
    AsyncConfig,
    Channel,
    ChannelClosed,
    DelaySchedule,
    GradientMsg,
    StalenessWarning,
    ThreadedEngine,
    _Master,
    checksum,
    master_loop,
    simulate,
    worker_loop,
)
from asysvi.errors import ConfigurationError, StalenessStarvationError, StructuralError, UsageError
from asysvi.expfam import NaturalGradient
from asysvi.lda import init_lambda, local_step, natural_gradient
from asysvi.serial import SerialConfig, run_serial, sample_batch, worker_rng

SCHED = LearningSchedule(tau0=24, kappa=0.7)


def cfg(**kw):
    base = dict(num_workers=1, M=1, B=5, worker_batch_size=4, schedule=SCHED, T=10, rng_seed=0)
    base.update(kw)
    return AsyncConfig(**base)


def rel_diff(a, b):
    return np.max(np.abs(a - b) / np.abs(b))


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(num_workers=0), dict(M=0), dict(B=-1), dict(worker_batch_size=0),
                                    dict(T=0), dict(mode="mpi"), dict(stale_policy="keep")])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            cfg(**kw)

    def test_simulate_needs_schedule(self, tiny_corpus, tiny_hp):
        with pytest.raises(ConfigurationError):
            master_loop(tiny_corpus, tiny_hp, cfg(), delay_schedule=None)


class TestSerialEquivalence:
    def test_single_worker_zero_delay(self, small_corpus, small_hp):
        T, S = 100, 4
        lam_s, m_s = run_serial(small_corpus, None, small_hp, SerialConfig(SCHED, S, T, rng_seed=7))
        lam_a, m_a, stats = simulate(small_corpus, small_hp, cfg(worker_batch_size=S, T=T, rng_seed=7),
                                     DelaySchedule.zeros())
        assert rel_diff(lam_a.values, lam_s.values) <= 1e-10
        assert m_a.learning_rates == m_s.learning_rates
        assert m_a.docs_processed == m_s.docs_processed == T * S
        assert stats.max_observed == 0 and stats.dropped_count == 0

    def test_bitwise_deterministic(self, small_corpus, small_hp):
        c = cfg(num_workers=3, M=3, B=4, T=40)
        sched = DelaySchedule.uniform(4, 40, 3, seed=1)
        a = simulate(small_corpus, small_hp, c, sched, test_docs=small_corpus.docs[:4])
        b = simulate(small_corpus, small_hp, c, sched, test_docs=small_corpus.docs[:4])
        np.testing.assert_array_equal(a[0].values, b[0].values)
        assert a[1].final.held_out_bound == b[1].final.held_out_bound
        assert a[2].histogram == b[2].histogram


class TestStaleness:
    def test_constant_delay_at_bound(self, tiny_corpus, tiny_hp):
        _, _, stats = simulate(tiny_corpus, tiny_hp, cfg(num_workers=2, M=2, B=3, T=10, worker_batch_size=2),
                               DelaySchedule.constant(3))
        assert stats.max_observed == 3
        assert stats.dropped_count == 0
        assert stats.received == 20

    def test_one_late_gradient_is_dropped(self, tiny_corpus, tiny_hp):
        B, t_late = 2, 6
        c = cfg(num_workers=2, M=2, B=B, T=10, worker_batch_size=2)
        sched = DelaySchedule.from_table({(t_late, 1): B + 1})
        lam, _, stats = simulate(tiny_corpus, tiny_hp, c, sched)
        assert stats.dropped_count == 1
        assert stats.max_observed == 0
        dropped = [e for e in stats.events if not e.accepted]
        assert [(e.t, e.slot, e.staleness) for e in dropped] == [(t_late, 1, B + 1)]
        # the slot was refilled with a fresh gradient, so M still contribute
        for t in range(10):
            assert sum(e.accepted for e in stats.events if e.t == t) == 2
        refill = [e for e in stats.events if e.t == t_late and e.slot == 1 and e.accepted]
        assert refill[0].staleness == 0

    def test_dropped_gradient_not_aggregated(self, tiny_corpus, tiny_hp):
        lam = init_lambda(2, tiny_corpus.W, np.random.default_rng(0))
        master = _Master(GlobalParams(lam.values, version=4), tiny_hp, cfg(M=2, B=1), None)
        mk = lambda v, base: GradientMsg(NaturalGradient(np.full(lam.shape, v), base, 1), 0)  # noqa: E731
        assert master.offer(mk(1.0, 4))
        assert not master.offer(mk(1e6, 2))
        assert master.offer(mk(3.0, 3))
        new = master.update()
        rho = (24 + 4) ** -0.7
        np.testing.assert_allclose(new.values, lam.values + rho * 2.0, rtol=1e-14)
        assert new.version == 5

    def test_uniform_schedule_within_bound(self, small_corpus, small_hp):
        _, _, stats = simulate(small_corpus, small_hp, cfg(num_workers=4, M=4, B=3, T=60),
                               DelaySchedule.uniform(3, 60, 4, seed=2))
        assert stats.max_observed <= 3
        assert stats.dropped_count == 0
        assert stats.received == sum(stats.histogram.values()) == 240

    def test_early_delays_clamp_to_start(self, tiny_corpus, tiny_hp):
        _, _, stats = simulate(tiny_corpus, tiny_hp, cfg(B=5, T=3), DelaySchedule.constant(5))
        assert [e.staleness for e in stats.events] == [0, 1, 2]

    def test_apply_policy_warns(self, tiny_corpus, tiny_hp):
        c = cfg(B=1, T=6, stale_policy=APPLY)
        with pytest.warns(StalenessWarning):
            _, _, stats = simulate(tiny_corpus, tiny_hp, c, DelaySchedule.from_table({(5, 0): 3}))
        assert stats.violations == 1
        assert stats.dropped_count == 0
        assert stats.max_observed == 3

    def test_starvation(self, tiny_corpus, tiny_hp):
        lam = init_lambda(2, tiny_corpus.W, np.random.default_rng(0))
        master = _Master(GlobalParams(lam.values, version=50), tiny_hp, cfg(M=2, B=0), None)
        stale = GradientMsg(NaturalGradient(np.zeros(lam.shape), 0, 1), 0)
        with pytest.raises(StalenessStarvationError):
            for _ in range(21):
                master.offer(stale)
        assert master.stats.dropped_count == 21

    def test_future_gradient(self, tiny_corpus, tiny_hp):
        lam = init_lambda(2, tiny_corpus.W, np.random.default_rng(0))
        master = _Master(lam, tiny_hp, cfg(), None)
        with pytest.raises(UsageError):
            master.offer(GradientMsg(NaturalGradient(np.zeros(lam.shape), 3, 1), 0))

    def test_permutation_within_iteration(self, small_corpus, small_hp):
        T, M = 30, 3
        rng = np.random.default_rng(0)
        delays = rng.integers(0, 3, size=(T, M))
        perms = [rng.permutation(M) for _ in range(T)]
        base = DelaySchedule.from_table(
            {(t, m): int(delays[t, m]) for t in range(T) for m in range(M)},
            {(t, m): m for t in range(T) for m in range(M)})
        permuted = DelaySchedule.from_table(
            {(t, m): int(delays[t, perms[t][m]]) for t in range(T) for m in range(M)},
            {(t, m): int(perms[t][m]) for t in range(T) for m in range(M)})
        c = cfg(num_workers=M, M=M, B=3, T=T)
        a, _, _ = simulate(small_corpus, small_hp, c, base)
        b, _, _ = simulate(small_corpus, small_hp, c, permuted)
        np.testing.assert_allclose(a.values, b.values, rtol=1e-12)

    @pytest.mark.slow
    def test_bound_sweep(self, recovery_corpus, recovery_hp, recovery_test_docs):
        T, M, S = 2000, 2, 2
        bounds = {}
        for B in (0, 2, 5, 10):
            c = cfg(num_workers=M, M=M, B=B, T=T, worker_batch_size=S, rng_seed=3)
            sched = DelaySchedule.uniform(B, T, M, seed=3)
            _, m, stats = simulate(recovery_corpus, recovery_hp, c, sched, test_docs=recovery_test_docs)
            assert stats.max_observed <= B
            bounds[B] = m.final.held_out_bound
        assert abs(bounds[5] - bounds[0]) <= 0.02 * abs(bounds[0])
        # degradation is monotone up to noise
        for lo, hi in ((0, 2), (2, 5), (5, 10)):
            assert bounds[hi] <= bounds[lo] + 0.01 * abs(bounds[lo])


class TestWorker:
    def test_composition(self, tiny_corpus, tiny_hp, tiny_lambda):
        c = cfg(worker_batch_size=1, rng_seed=4)
        snap = GlobalParams(tiny_lambda.values, version=9)
        gen = worker_loop(tiny_corpus.docs, tiny_hp, c, 2, lambda: snap)
        msg = next(gen)
        gen.close()
        idx = sample_batch(worker_rng(4, 2), tiny_corpus.D, 1)
        d = tiny_corpus.docs[idx[0]]
        expected = natural_gradient([d], [local_step(d, snap, tiny_hp)], snap, tiny_hp)
        np.testing.assert_array_equal(msg.gradient.values, expected.values)
        assert msg.base_version == 9
        assert msg.worker_id == 2

    def test_base_version_is_pull_time(self, tiny_corpus, tiny_hp, tiny_lambda):
        versions = iter(range(100))
        pulled = []

        def pull():
            v = next(versions)
            pulled.append(v)
            return GlobalParams(tiny_lambda.values, version=v)

        gen = worker_loop(tiny_corpus.docs, tiny_hp, cfg(), 0, pull)
        got = [next(gen).base_version for _ in range(5)]
        gen.close()
        assert got == pulled == [0, 1, 2, 3, 4]

    def test_worker_streams_differ(self):
        a = worker_rng(0, 0).integers(0, 1000, size=100)
        b = worker_rng(0, 1).integers(0, 1000, size=100)
        assert not np.array_equal(a, b)


class TestDelaySchedule:
    def test_csv_round_trip(self, tmp_path):
        sched = DelaySchedule.uniform(4, 12, 3, seed=8)
        path = tmp_path / "delays.csv"
        sched.to_csv(path, 12, 3, num_workers=5)
        back = DelaySchedule.from_csv(path)
        for t in range(12):
            for m in range(3):
                assert back(t, m) == sched(t, m)
                assert back.worker(t, m, 3, 5) == sched.worker(t, m, 3, 5)

    def test_csv_without_header(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("# comment\n0,0,2\n1,0,1\n")
        s = DelaySchedule.from_csv(path)
        assert (s(0, 0), s(1, 0), s(7, 0)) == (2, 1, 0)
        assert s.max_delay == 2

    def test_bad_row(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("t,m,tau\n0,0\n")
        with pytest.raises(ConfigurationError):
            DelaySchedule.from_csv(path)

    def test_negative_delay(self):
        with pytest.raises(ConfigurationError):
            DelaySchedule.constant(-1)(0, 0)

    def test_default_worker_round_robin(self):
        s = DelaySchedule.zeros()
        assert [s.worker(t, m, 2, 3) for t in range(3) for m in range(2)] == [0, 1, 2, 0, 1, 2]


class TestChannel:
    def test_closed_put(self):
        ch = Channel(1)
        ch.put(1)
        ch.close()
        with pytest.raises(ChannelClosed):
            ch.put(2)


class TestThreaded:
    def test_run(self, small_corpus, small_hp):
        c = cfg(num_workers=3, M=2, B=4, T=30, mode=THREADED, record_snapshots=True, eval_every=10)
        eng = ThreadedEngine(small_corpus, small_hp, c, test_docs=small_corpus.docs[:3])
        lam, m, stats = eng.run()
        assert lam.version == 30
        assert lam.is_positive()
        assert stats.max_observed <= 4
        assert [cp.iteration for cp in m.checkpoints] == [10, 20, 30]
        assert m.docs_processed == 30 * 2 * 4
        # every applied update used exactly M gradients
        assert stats.applied == 60
        # every snapshot a worker computed on is a whole published version
        assert eng.pulled
        for version, digest in eng.pulled:
            assert eng.published[version] == digest

    def test_published_checksums_match_values(self, tiny_corpus, tiny_hp):
        c = cfg(num_workers=2, M=1, T=5, mode=THREADED, record_snapshots=True)
        eng = ThreadedEngine(tiny_corpus, tiny_hp, c)
        lam, _, _ = eng.run()
        assert eng.published[5] == checksum(lam.values)

    def test_wrong_mode(self, tiny_corpus, tiny_hp):
        with pytest.raises(ConfigurationError):
            ThreadedEngine(tiny_corpus, tiny_hp, cfg())

    def test_worker_failure_surfaces(self, tiny_corpus):
        # lambda one column short: some document hits an out-of-range word
        hp = HyperParams(0.5, 0.01, 2, tiny_corpus.D)
        lam0 = GlobalParams(np.ones((2, tiny_corpus.W - 1)))
        c = cfg(num_workers=2, M=1, T=5, mode=THREADED)
        with pytest.raises(StructuralError):
            ThreadedEngine(tiny_corpus, hp, c, lam0=lam0, msg_timeout=5.0).run()
