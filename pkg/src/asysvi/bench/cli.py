"""Command-line front end: ``asysvi run | sweep | topics | gen``.

Exit codes: 0 success, 2 invalid configuration or inputs, 3 numerical
divergence during optimization.
"""

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from ..corpus import SplitSpec, load_corpus, read_uci, save_corpus, split
from ..engine import AsyncConfig, DelaySchedule, master_loop
from ..errors import (
    ConfigurationError,
    CorpusParseError,
    NumericalDivergenceError,
    StalenessStarvationError,
    UsageError,
)
from ..expfam import GlobalParams, HyperParams, LearningSchedule
from ..lda import block_topics, dirichlet_topics, generate_synthetic, match_topics, topic_word_probs
from ..metrics import compute_tsp_rsp, write_metrics_csv, write_timing_csv
from ..serial import SerialConfig, run_serial
from .config import (
    REFERENCE_SETTINGS,
    REFERENCE_SPEEDUPS,
    SWEEPABLE,
    ExperimentConfig,
    load_config,
)

logger = logging.getLogger("asysvi")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
THREADS_ENV = "ASYSVI_THREADS"


@dataclass
class RunResult:
    config: ExperimentConfig
    lam: GlobalParams
    metrics: object
    staleness: object
    vocab: list
    test_checksum: str
    truth: object = None


def _docs_checksum(docs):
    h = hashlib.sha256()
    for d in docs:
        h.update(d.word_ids.tobytes())
        h.update(d.counts.tobytes())
    return h.hexdigest()[:16]


def synthetic_truth(cfg):
    if cfg.synthetic_beta == "block":
        return block_topics(cfg.synthetic_topics, cfg.synthetic_vocab)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(7,)))
    return dirichlet_topics(cfg.synthetic_topics, cfg.synthetic_vocab, cfg.eta, rng)


def load_data(cfg):
    """Return ``(train, test, truth_beta_or_None)`` for a config."""
    truth = None
    if cfg.corpus:
        try:
            corpus = read_uci(cfg.corpus, cfg.vocab or None) if cfg.vocab else load_corpus(cfg.corpus)
        except CorpusParseError as exc:
            raise ConfigurationError(f"cannot read corpus {cfg.corpus}: {exc}") from exc
    else:
        truth = synthetic_truth(cfg)
        corpus = generate_synthetic(truth, cfg.synthetic_alpha, cfg.synthetic_docs,
                                    cfg.synthetic_doc_length, seed=cfg.seed)
    spec = SplitSpec(cfg.train_fraction, cfg.validation_count, cfg.test_count, cfg.seed)
    try:
        train, _val, test = split(corpus, spec)
    except UsageError as exc:
        raise ConfigurationError(str(exc)) from exc
    if train.D == 0:
        raise ConfigurationError("training split is empty")
    return train, test, truth


def delay_schedule(cfg, T):
    d = cfg.delay
    if d == "zero":
        return DelaySchedule.zeros()
    if d == "uniform":
        return DelaySchedule.uniform(cfg.B, T, cfg.M, cfg.seed)
    if d.startswith("constant:"):
        try:
            return DelaySchedule.constant(int(d.split(":", 1)[1]))
        except ValueError:
            raise ConfigurationError(f"bad constant delay {d!r}") from None
    return DelaySchedule.from_csv(d)


def thread_cap():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return None
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if cap < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be >= 1")
    return cap


def run_experiment(cfg):
    """Load data and run the configured driver in-process."""
    cfg.validate()
    train, test, truth = load_data(cfg)
    hp = HyperParams(cfg.alpha, cfg.eta, cfg.num_topics, train.D)
    schedule = LearningSchedule(cfg.tau0, cfg.kappa)
    T = cfg.effective_iterations
    if cfg.mode == "serial":
        if cfg.batch_size > train.D:
            raise ConfigurationError(f"batch_size {cfg.batch_size} exceeds training D={train.D}")
        scfg = SerialConfig(schedule, cfg.batch_size, T, cfg.eval_every, cfg.seed,
                            local_tol=cfg.local_tol, local_max_iters=cfg.local_max_iters,
                            doc_cost_seconds=cfg.doc_cost_ms / 1000.0)
        lam, metrics = run_serial(train, test.docs, hp, scfg)
        stats = None
    else:
        workers = cfg.num_workers
        mode = "simulated" if cfg.mode == "async-sim" else "threaded"
        if mode == "threaded":
            cap = thread_cap()
            if cap is not None and workers > cap:
                logger.info("capping workers at %d (%s)", cap, THREADS_ENV)
                workers = cap
        acfg = AsyncConfig(
            num_workers=workers, M=cfg.M, B=cfg.B, worker_batch_size=cfg.effective_worker_batch,
            schedule=schedule, T=T, rng_seed=cfg.seed, mode=mode, stale_policy=cfg.stale_policy,
            eval_every=cfg.eval_every, local_tol=cfg.local_tol,
            local_max_iters=cfg.local_max_iters, doc_cost_seconds=cfg.doc_cost_ms / 1000.0,
        )
        sched = delay_schedule(cfg, T) if mode == "simulated" else None
        lam, metrics, stats = master_loop(train, hp, acfg, sched, test_docs=test.docs)
    return RunResult(cfg, lam, metrics, stats, train.vocab, _docs_checksum(test.docs), truth)


def write_lambda(path, lam, header_lines=()):
    """Dense text matrix: a ``K W`` line, optional ``#`` lines, then K rows."""
    K, W = lam.shape
    with open(path, "w") as fh:
        fh.write(f"{K} {W}\n")
        for line in header_lines:
            fh.write(f"# {line}\n")
        np.savetxt(fh, lam.values, fmt="%.17g")


def read_lambda(path):
    with open(path) as fh:
        first = fh.readline().split()
        try:
            K, W = int(first[0]), int(first[1])
        except (IndexError, ValueError):
            raise ConfigurationError(f"{path}: first line must be 'K W'") from None
        values = np.loadtxt(fh, comments="#", ndmin=2)
    if values.shape != (K, W):
        raise ConfigurationError(f"{path}: header says {K}x{W} but matrix is {values.shape}")
    return GlobalParams(values)


def read_vocab(path):
    with open(path, encoding="utf-8") as fh:
        words = [w.rstrip("\r\n") for w in fh]
    while words and words[-1] == "":
        words.pop()
    return words


def format_topics(lam, vocab, top_n):
    """Top words per topic with their normalized probabilities."""
    probs = topic_word_probs(lam)
    if probs.shape[1] != len(vocab):
        raise ConfigurationError(f"lambda has W={probs.shape[1]} columns but vocab has {len(vocab)} words")
    n = min(top_n, len(vocab))
    lines = []
    for k, row in enumerate(probs):
        top = np.argsort(-row, kind="stable")[:n]
        words = ", ".join(f"{vocab[i]} ({row[i]:.4f})" for i in top)
        lines.append(f"topic {k}: {words}")
    return "\n".join(lines) + "\n"


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def reference_info(cfg):
    if not cfg.reference_dataset:
        return None
    table = REFERENCE_SETTINGS[cfg.reference_dataset]
    info = {"dataset": cfg.reference_dataset}
    if cfg.batch_size in table:
        kappa, tau0, perp = table[cfg.batch_size]
        info.update(batch=cfg.batch_size, kappa=kappa, tau0=tau0,
                    full_corpus_test_perplexity=perp,
                    config_matches_setting=(cfg.kappa == kappa and cfg.tau0 == tau0))
    if cfg.reference_dataset in REFERENCE_SPEEDUPS:
        info["speedup"] = REFERENCE_SPEEDUPS[cfg.reference_dataset]
    return info


class _Timing:
    """Minimal view over a summary for compute_tsp_rsp."""

    def __init__(self, docs_processed, wall_clock_seconds, final_perplexity):
        self.docs_processed = docs_processed
        self.wall_clock_seconds = wall_clock_seconds
        self.final_perplexity = final_perplexity


def compare(baseline, result):
    """TSP/RSP of a serial baseline over this run, or why it is not comparable."""
    out = {"baseline_docs_processed": baseline["docs_processed"],
           "docs_processed": result["docs_processed"]}
    if baseline.get("test_set_checksum") != result.get("test_set_checksum"):
        out.update(comparable=False, reason="different test sets")
        return out
    try:
        tsp, rsp = compute_tsp_rsp(
            _Timing(baseline["docs_processed"], baseline["wall_clock_seconds"],
                    baseline["final_perplexity"] or math.nan),
            _Timing(result["docs_processed"], result["wall_clock_seconds"],
                    result["final_perplexity"] or math.nan),
        )
    except UsageError as exc:
        out.update(comparable=False, reason=str(exc))
        return out
    out.update(comparable=True, tsp=tsp, rsp=rsp)
    return out


def build_summary(res):
    cfg = res.config
    m = res.metrics
    summary = {
        "config": cfg.as_dict(),
        "seed": cfg.seed,
        "mode": cfg.mode,
        "test_set_checksum": res.test_checksum,
        **m.summary(),
        "learning_rate_first": m.learning_rates[0] if m.learning_rates else None,
        "learning_rate_last": m.learning_rates[-1] if m.learning_rates else None,
    }
    if res.staleness is not None:
        st = res.staleness
        summary["staleness"] = {
            "histogram": {str(k): v for k, v in sorted(st.histogram.items())},
            "max_observed": st.max_observed,
            "dropped_count": st.dropped_count,
            "violations": st.violations,
            "received": st.received,
        }
    if res.truth is not None and res.truth.shape[0] == res.lam.shape[0]:
        cos, _ = match_topics(topic_word_probs(res.lam), res.truth)
        summary["topic_recovery_cosine"] = cos.tolist()
    ref = reference_info(cfg)
    if ref:
        summary["reference"] = ref
    return summary


def write_run(res, out_dir, baseline=None):
    os.makedirs(out_dir, exist_ok=True)
    echo = res.config.echo_lines()
    write_metrics_csv(res.metrics, os.path.join(out_dir, "metrics.csv"),
                      staleness=res.staleness is not None, header_lines=echo)
    write_timing_csv(res.metrics, os.path.join(out_dir, "timing.csv"), header_lines=echo)
    write_lambda(os.path.join(out_dir, "lambda.txt"), res.lam, header_lines=echo)
    with open(os.path.join(out_dir, "topics.txt"), "w", encoding="utf-8") as fh:
        for line in echo:
            fh.write(f"# {line}\n")
        fh.write(format_topics(res.lam, res.vocab, res.config.top_n))
    summary = build_summary(res)
    if baseline is not None:
        summary["comparison"] = compare(baseline, summary)
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(_clean(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def load_summary(path):
    if os.path.isdir(path):
        path = os.path.join(path, "summary.json")
    if not os.path.exists(path):
        raise ConfigurationError(f"baseline summary not found: {path}")
    with open(path) as fh:
        return json.load(fh)


def _overrides(args):
    return {"seed": getattr(args, "seed", None), "out": getattr(args, "out", None)}


def cmd_run(args):
    cfg = load_config(args.config, _overrides(args))
    baseline = load_summary(args.baseline) if args.baseline else None
    res = run_experiment(cfg)
    summary = write_run(res, cfg.out, baseline)
    print(f"{cfg.mode}: {summary['iterations']} iterations, {summary['docs_processed']} docs, "
          f"perplexity {summary['final_perplexity']:.4f}, {summary['wall_clock_seconds']:.3f}s "
          f"-> {cfg.out}")
    if "comparison" in summary:
        c = summary["comparison"]
        if c["comparable"]:
            print(f"TSP {c['tsp']:.3f}  RSP {c['rsp']:.4f}")
        else:
            print(f"baseline not comparable: {c['reason']}")
    return EXIT_OK


ASYNC_ONLY = ("num_workers", "M", "B", "worker_batch_size", "stale_policy", "delay")

SWEEP_COLUMNS = ["value", "status", "tsp", "rsp", "final_perplexity", "baseline_perplexity",
                 "max_staleness", "dropped_count", "docs_processed", "iterations",
                 "wall_clock_seconds", "error"]


def _sweep_values(cfg):
    if cfg.sweep_param not in SWEEPABLE:
        raise ConfigurationError(f"sweep_param must be one of {sorted(SWEEPABLE)}")
    field_name = SWEEPABLE[cfg.sweep_param]
    kind = float if field_name in ("kappa", "tau0") else int
    try:
        values = [kind(v) for v in cfg.sweep_values.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"bad sweep_values {cfg.sweep_values!r}") from None
    if not values:
        raise ConfigurationError("sweep_values is empty")
    return field_name, sorted(values)


def serial_baseline_config(cfg):
    """The serial run an async config is paired with.

    Async-only settings are reset to their defaults so that sweeping them
    (B, delays, ...) reuses a single baseline.
    """
    defaults = ExperimentConfig()
    reset = {k: getattr(defaults, k) for k in ASYNC_ONLY}
    return cfg.replace(mode="serial", sweep_param="", sweep_values="", **reset)


def cmd_sweep(args):
    base = load_config(args.config, _overrides(args))
    field_name, values = _sweep_values(base)
    os.makedirs(base.out, exist_ok=True)
    baselines = {}
    rows = []
    for value in values:
        row = {c: "" for c in SWEEP_COLUMNS}
        row["value"] = value
        tag = f"{base.sweep_param}={value}"
        try:
            cfg = base.replace(**{field_name: value}).validate()
            serial_cfg = serial_baseline_config(cfg)
            key = tuple(sorted(serial_cfg.replace(out="").as_dict().items()))
            if key not in baselines:
                bres = run_experiment(serial_cfg)
                bdir = os.path.join(base.out, f"baseline-{len(baselines)}")
                baselines[key] = write_run(bres, bdir)
            bsum = baselines[key]
            res = run_experiment(cfg)
            summary = write_run(res, os.path.join(base.out, tag), bsum)
            c = summary["comparison"]
            row.update(
                status="ok" if c["comparable"] else "incomparable",
                tsp=c.get("tsp", ""), rsp=c.get("rsp", ""),
                final_perplexity=summary["final_perplexity"],
                baseline_perplexity=bsum["final_perplexity"],
                max_staleness=summary.get("staleness", {}).get("max_observed", 0),
                dropped_count=summary.get("staleness", {}).get("dropped_count", 0),
                docs_processed=summary["docs_processed"],
                iterations=summary["iterations"],
                wall_clock_seconds=summary["wall_clock_seconds"],
                error=c.get("reason", ""),
            )
        except (ConfigurationError, NumericalDivergenceError, StalenessStarvationError,
                UsageError, RuntimeError) as exc:
            logger.warning("sweep value %s failed: %s", tag, exc)
            row.update(status="failed", error=str(exc))
        rows.append(row)
        print(f"{tag}: {row['status']} tsp={row['tsp']} rsp={row['rsp']}")
    path = os.path.join(base.out, "sweep.csv")
    with open(path, "w", newline="") as fh:
        for line in base.echo_lines():
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    print(f"wrote {path}")
    return EXIT_OK


def cmd_topics(args):
    lam = read_lambda(args.lambda_path)
    vocab = read_vocab(args.vocab)
    sys.stdout.write(format_topics(lam, vocab, args.top_n))
    return EXIT_OK


def cmd_gen(args):
    overrides = _overrides(args)
    if args.config:
        cfg = load_config(args.config, overrides)
    else:
        cfg = ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None}).validate()
    truth = synthetic_truth(cfg)
    corpus = generate_synthetic(truth, cfg.synthetic_alpha, cfg.synthetic_docs,
                                cfg.synthetic_doc_length, seed=cfg.seed)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, f"docword.{args.name}.txt")
    save_corpus(corpus, path)
    write_lambda(os.path.join(cfg.out, "beta.txt"), GlobalParams(truth + 0.0),
                 header_lines=cfg.echo_lines())
    print(f"wrote {corpus.D} documents ({corpus.total_tokens} tokens, W={corpus.W}) to {path}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="asysvi", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--baseline", help="serial run directory or summary.json to pair with")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="one run per value of sweep_param, paired with serial baselines")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("topics", help="list top words per topic")
    t.add_argument("--lambda", dest="lambda_path", required=True)
    t.add_argument("--vocab", required=True)
    t.add_argument("--top-n", type=int, default=10)
    t.set_defaults(func=cmd_topics)

    g = sub.add_parser("gen", help="write a synthetic corpus in UCI format")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.add_argument("--name", default="synthetic")
    g.set_defaults(func=cmd_gen)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalDivergenceError as exc:
        print(f"error: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigurationError, CorpusParseError, UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
