import numpy as np
import pytest
from scipy import stats

from asysvi import GlobalParams, LearningSchedule
from asysvi.errors import ConfigurationError, DomainError, UsageError
from asysvi.expfam import learning_rate
from asysvi.lda import e_step, init_lambda, match_topics, optimal_global, topic_word_probs
from asysvi.metrics import (
    Checkpoint,
    RunMetrics,
    compute_tsp_rsp,
    read_metrics_csv,
    write_metrics_csv,
)
from asysvi.serial import SerialConfig, run_serial, sample_batch, worker_rng

SCHED = LearningSchedule(tau0=24, kappa=0.7)


class TestSampleBatch:
    def test_single_document(self):
        assert sample_batch(np.random.default_rng(0), 1, 7) == [0] * 7

    def test_replay(self):
        a = sample_batch(np.random.default_rng(5), 50, 30)
        b = sample_batch(np.random.default_rng(5), 50, 30)
        assert a == b

    def test_consumes_exactly_s_draws(self):
        rng = np.random.default_rng(3)
        sample_batch(rng, 10, 4)
        after = rng.integers(0, 10, size=5)
        ref = np.random.default_rng(3)
        ref.integers(0, 10, size=4)
        np.testing.assert_array_equal(after, ref.integers(0, 10, size=5))

    def test_uniformity_chi_square(self):
        draws = sample_batch(np.random.default_rng(2024), 10, 100_000)
        counts = np.bincount(draws, minlength=10)
        stat = stats.chisquare(counts).statistic
        assert stat < stats.chi2.ppf(0.99, df=9)

    def test_zero_batch(self):
        with pytest.raises(UsageError):
            sample_batch(np.random.default_rng(0), 10, 0)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(batch_size=0), dict(num_iterations=0), dict(eval_every=-1)])
    def test_invalid(self, kw):
        base = dict(schedule=SCHED, batch_size=1, num_iterations=1)
        base.update(kw)
        with pytest.raises(ConfigurationError):
            SerialConfig(**base)

    def test_batch_exceeds_corpus(self, tiny_corpus, tiny_hp):
        cfg = SerialConfig(SCHED, batch_size=tiny_corpus.D + 1, num_iterations=1)
        with pytest.raises(ConfigurationError):
            run_serial(tiny_corpus, None, tiny_hp, cfg)


class TestRunSerial:
    def test_full_batch_unit_step_is_coordinate_update(self, tiny_corpus, tiny_hp, tiny_lambda):
        # tau0 = 1, t = 0 gives rho = 1 for any kappa
        cfg = SerialConfig(LearningSchedule(1.0, 0.7), batch_size=tiny_corpus.D,
                           num_iterations=1, full_batch=True)
        lam, _ = run_serial(tiny_corpus, None, tiny_hp, cfg, lam0=tiny_lambda)
        local = e_step(tiny_corpus.docs, tiny_lambda, tiny_hp)
        expected = optimal_global(tiny_corpus.docs, local, tiny_hp, tiny_lambda.shape)
        np.testing.assert_allclose(lam.values, expected, rtol=1e-13)

    def test_deterministic(self, small_corpus, small_hp):
        cfg = SerialConfig(SCHED, batch_size=4, num_iterations=30, eval_every=10, rng_seed=9)
        test = small_corpus.docs[:5]
        lam1, m1 = run_serial(small_corpus, test, small_hp, cfg)
        lam2, m2 = run_serial(small_corpus, test, small_hp, cfg)
        np.testing.assert_array_equal(lam1.values, lam2.values)
        assert [c.held_out_bound for c in m1.checkpoints] == [c.held_out_bound for c in m2.checkpoints]

    def test_seed_matters(self, small_corpus, small_hp):
        a, _ = run_serial(small_corpus, None, small_hp, SerialConfig(SCHED, 4, 5, rng_seed=1))
        b, _ = run_serial(small_corpus, None, small_hp, SerialConfig(SCHED, 4, 5, rng_seed=2))
        assert not np.array_equal(a.values, b.values)

    def test_learning_rates_logged(self, small_corpus, small_hp):
        cfg = SerialConfig(LearningSchedule(5.0, 0.6), batch_size=3, num_iterations=25)
        _, m = run_serial(small_corpus, None, small_hp, cfg)
        assert m.learning_rates == [learning_rate(t, cfg.schedule) for t in range(25)]

    def test_checkpoints(self, small_corpus, small_hp):
        cfg = SerialConfig(SCHED, batch_size=2, num_iterations=25, eval_every=10)
        _, m = run_serial(small_corpus, small_corpus.docs[:3], small_hp, cfg)
        assert [c.iteration for c in m.checkpoints] == [10, 20, 25]
        assert [c.docs_processed for c in m.checkpoints] == [20, 40, 50]
        walls = [c.wall_clock_seconds for c in m.checkpoints]
        assert walls == sorted(walls)
        assert all(np.isfinite(c.gradient_variance) for c in m.checkpoints)
        assert m.docs_processed == 50

    def test_final_checkpoint_without_eval_every(self, small_corpus, small_hp):
        _, m = run_serial(small_corpus, small_corpus.docs[:3], small_hp, SerialConfig(SCHED, 2, 7))
        assert [c.iteration for c in m.checkpoints] == [7]
        assert np.isfinite(m.final_perplexity)

    def test_step_size_above_one_rejected(self, small_corpus, small_hp):
        # tau0 = 0.5 makes rho_0 = 0.5 ** -0.7 > 1
        cfg = SerialConfig(LearningSchedule(0.5, 0.7), batch_size=2, num_iterations=3)
        with pytest.raises(ConfigurationError, match="iteration 0"):
            run_serial(small_corpus, None, small_hp, cfg)

    def test_nonpositive_start_rejected(self, small_corpus, small_hp):
        lam0 = GlobalParams(-np.ones((3, small_corpus.W)))
        with pytest.raises(DomainError):
            run_serial(small_corpus, None, small_hp, SerialConfig(SCHED, 2, 3), lam0=lam0)

    def test_topic_recovery(self, recovery_corpus, recovery_hp, recovery_truth):
        cfg = SerialConfig(SCHED, batch_size=16, num_iterations=500, rng_seed=0)
        lam, _ = run_serial(recovery_corpus, None, recovery_hp, cfg)
        cos, _ = match_topics(topic_word_probs(lam), recovery_truth)
        assert cos.min() >= 0.9


class TestMetrics:
    def cp(self, it, wall=0.0, perp=10.0, docs=0):
        return Checkpoint(it, wall, -1.0, perp, 0.0, docs)

    def test_iterations_strictly_increase(self):
        m = RunMetrics()
        m.add(self.cp(1))
        with pytest.raises(UsageError):
            m.add(self.cp(1))

    def test_wall_clock_non_decreasing(self):
        m = RunMetrics()
        m.add(self.cp(1, wall=2.0))
        with pytest.raises(UsageError):
            m.add(self.cp(2, wall=1.0))

    def test_tsp_rsp(self):
        s = RunMetrics(wall_clock_seconds=100.0, docs_processed=64)
        a = RunMetrics(wall_clock_seconds=25.0, docs_processed=64)
        s.add(self.cp(1, perp=12.0))
        a.add(self.cp(1, perp=12.0))
        assert compute_tsp_rsp(s, a) == (4.0, 1.0)
        assert compute_tsp_rsp(s, s) == (1.0, 1.0)

    def test_tsp_rsp_mismatch(self):
        with pytest.raises(UsageError):
            compute_tsp_rsp(RunMetrics(docs_processed=10, wall_clock_seconds=1.0),
                            RunMetrics(docs_processed=11, wall_clock_seconds=1.0))

    def test_csv_round_trip(self, tmp_path):
        m = RunMetrics()
        m.add(self.cp(5, perp=3.25, docs=80))
        m.add(Checkpoint(10, 1.0, -7.5, 2.5, float("nan"), 160))
        path = tmp_path / "m.csv"
        write_metrics_csv(m, path, header_lines=["seed = 3"])
        assert path.read_text().startswith("# seed = 3\niteration,docs_processed,")
        rows = read_metrics_csv(path)
        assert rows[0]["perplexity"] == 3.25
        assert rows[1]["docs_processed"] == 160
        assert np.isnan(rows[1]["gradient_variance"])
