"""Run metrics shared by the serial and asynchronous drivers.

Metrics are split across two CSV files so that repeated runs with the same
seed produce byte-identical ``metrics.csv``: everything deterministic goes
there, wall-clock timings go to ``timing.csv``.
"""

from dataclasses import dataclass, field, asdict
import csv
import math

from .errors import UsageError

METRICS_COLUMNS = [
    "iteration",
    "docs_processed",
    "held_out_bound",
    "perplexity",
    "gradient_variance",
]
STALENESS_COLUMNS = ["max_staleness", "mean_staleness", "dropped_count"]
TIMING_COLUMNS = ["iteration", "wall_clock_seconds", "eval_seconds"]


@dataclass
class Checkpoint:
    iteration: int
    wall_clock_seconds: float
    held_out_bound: float
    perplexity: float
    gradient_variance: float
    docs_processed: int
    eval_seconds: float = 0.0
    max_staleness: int = 0
    mean_staleness: float = 0.0
    dropped_count: int = 0


@dataclass
class RunMetrics:
    """Checkpoint series for one run.

    ``wall_clock_seconds`` covers optimization only; evaluation time is
    kept apart in ``eval_seconds`` so speed-up ratios compare like with
    like.
    """

    checkpoints: list = field(default_factory=list)
    wall_clock_seconds: float = 0.0
    eval_seconds: float = 0.0
    docs_processed: int = 0
    iterations: int = 0
    learning_rates: list = field(default_factory=list)

    def add(self, cp):
        if self.checkpoints:
            last = self.checkpoints[-1]
            if cp.iteration <= last.iteration:
                raise UsageError("checkpoint iterations must strictly increase")
            if cp.wall_clock_seconds < last.wall_clock_seconds:
                raise UsageError("wall clock went backwards")
        self.checkpoints.append(cp)

    @property
    def final(self):
        return self.checkpoints[-1] if self.checkpoints else None

    @property
    def final_perplexity(self):
        cp = self.final
        return cp.perplexity if cp is not None else math.nan

    def summary(self):
        return {
            "iterations": self.iterations,
            "docs_processed": self.docs_processed,
            "wall_clock_seconds": self.wall_clock_seconds,
            "eval_seconds": self.eval_seconds,
            "final_perplexity": self.final_perplexity,
            "final_held_out_bound": self.final.held_out_bound if self.final else math.nan,
        }


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(metrics, path, staleness=False, header_lines=()):
    """One row per checkpoint; ``header_lines`` are written as ``# `` comments."""
    cols = METRICS_COLUMNS + (STALENESS_COLUMNS if staleness else [])
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for cp in metrics.checkpoints:
            row = asdict(cp)
            w.writerow([_fmt(row[c]) for c in cols])


def write_timing_csv(metrics, path, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMING_COLUMNS)
        for cp in metrics.checkpoints:
            w.writerow([cp.iteration, _fmt(cp.wall_clock_seconds), _fmt(cp.eval_seconds)])


def read_metrics_csv(path):
    """Rows of a metrics CSV as dicts of floats (comment lines skipped)."""
    with open(path, newline="") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        return [{k: float(v) for k, v in r.items()} for r in rows]


def compute_tsp_rsp(serial, asyncm):
    """Time speed-up and perplexity ratio of a serial run over an async run.

    Both arguments are RunMetrics (or any object with ``docs_processed``,
    ``wall_clock_seconds`` and ``final_perplexity``).
    """
    if serial.docs_processed != asyncm.docs_processed:
        raise UsageError(
            f"runs processed different numbers of documents "
            f"({serial.docs_processed} vs {asyncm.docs_processed}); comparison is invalid"
        )
    if asyncm.wall_clock_seconds <= 0:
        raise UsageError("async wall clock must be positive")
    tsp = serial.wall_clock_seconds / asyncm.wall_clock_seconds
    rsp = serial.final_perplexity / asyncm.final_perplexity
    return tsp, rsp
