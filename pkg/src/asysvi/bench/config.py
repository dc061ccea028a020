"""Flat ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored. Every key is optional; unknown
keys are rejected so typos surface immediately. Example::

    # 2-topic synthetic recovery, serial
    num_topics = 2
    synthetic_topics = 2
    synthetic_vocab = 10
    kappa = 0.7
    tau0 = 24
    batch_size = 16
    iterations = 500
    test_count = 50
"""

from dataclasses import dataclass, fields, replace, asdict
import os

from ..errors import ConfigurationError

MODES = ("serial", "async-sim", "async-threaded")
SWEEPABLE = {
    "num_workers": "num_workers",
    "B": "B",
    "batch": "batch_size",
    "kappa": "kappa",
    "tau0": "tau0",
}

# Best (kappa, tau0) per batch size and the full-corpus test perplexity
# published for that setting.
REFERENCE_SETTINGS = {
    "enron": {16: (0.7, 1024, 5919), 64: (0.7, 24, 5348), 256: (0.5, 24, 5264), 1024: (0.5, 1, 4771)},
    "nytimes": {16: (0.7, 1024, 11989), 64: (0.7, 24, 10156), 256: (0.5, 24, 9015),
                1024: (0.5, 1, 5501)},
    "wikipedia": {16: (0.7, 1024, 1446), 64: (0.7, 1024, 1390), 256: (0.5, 1024, 1355),
                  1024: (0.5, 1024, 1332)},
}
# Published cluster speed-up (27 workers) and serial/parallel perplexity ratio.
REFERENCE_SPEEDUPS = {
    "nytimes": {"num_workers": 27, "tsp": 19.29, "rsp": 0.97},
    "wikipedia": {"num_workers": 27, "tsp": 18.58, "rsp": 0.94},
}


@dataclass(frozen=True)
class ExperimentConfig:
    # data
    corpus: str = ""
    vocab: str = ""
    synthetic_topics: int = 2
    synthetic_vocab: int = 10
    synthetic_docs: int = 500
    synthetic_doc_length: int = 100
    synthetic_alpha: float = 0.5
    synthetic_beta: str = "block"
    train_fraction: float = 1.0
    validation_count: int = 0
    test_count: int = 0
    # model
    num_topics: int = 50
    alpha: float = 0.01
    eta: float = 0.01
    # optimization
    kappa: float = 0.7
    tau0: float = 24.0
    batch_size: int = 16
    iterations: int = 100
    total_docs: int = 0
    eval_every: int = 0
    local_tol: float = 1e-3
    local_max_iters: int = 100
    # execution
    mode: str = "serial"
    num_workers: int = 1
    M: int = 1
    B: int = 5
    worker_batch_size: int = 0
    stale_policy: str = "drop"
    delay: str = "zero"
    doc_cost_ms: float = 0.0
    # bookkeeping
    seed: int = 0
    out: str = "run"
    top_n: int = 10
    reference_dataset: str = ""
    sweep_param: str = ""
    sweep_values: str = ""

    def validate(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.5 <= self.kappa <= 1.0:
            raise ConfigurationError(f"kappa must lie in [0.5, 1], got {self.kappa}")
        if self.tau0 < 0:
            raise ConfigurationError("tau0 must be non-negative")
        for name in ("num_topics", "batch_size", "iterations", "num_workers", "M",
                     "synthetic_topics", "synthetic_vocab", "synthetic_docs",
                     "synthetic_doc_length", "local_max_iters"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        for name in ("B", "total_docs", "eval_every", "worker_batch_size", "test_count",
                     "validation_count", "top_n"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if not (self.alpha > 0 and self.eta > 0 and self.synthetic_alpha > 0):
            raise ConfigurationError("alpha, eta and synthetic_alpha must be positive")
        if self.stale_policy not in ("drop", "apply"):
            raise ConfigurationError("stale_policy must be 'drop' or 'apply'")
        if self.synthetic_beta not in ("block", "dirichlet"):
            raise ConfigurationError("synthetic_beta must be 'block' or 'dirichlet'")
        if self.corpus and not os.path.exists(self.corpus):
            raise ConfigurationError(f"corpus file not found: {self.corpus}")
        if self.vocab and not os.path.exists(self.vocab):
            raise ConfigurationError(f"vocab file not found: {self.vocab}")
        if self.reference_dataset and self.reference_dataset not in REFERENCE_SETTINGS:
            raise ConfigurationError(f"unknown reference_dataset {self.reference_dataset!r}")
        if self.mode != "serial" and self.effective_worker_batch < 1:
            raise ConfigurationError("worker batch size resolves to 0; set worker_batch_size")
        if self.total_docs and self.total_docs % self.docs_per_update:
            raise ConfigurationError(
                f"total_docs={self.total_docs} is not a multiple of the {self.docs_per_update} "
                f"documents consumed per update"
            )
        d = self.delay
        if not (d in ("zero", "uniform") or d.startswith("constant:") or d.endswith(".csv")):
            raise ConfigurationError("delay must be zero, uniform, constant:N or a .csv path")
        if d.endswith(".csv") and not os.path.exists(d):
            raise ConfigurationError(f"delay schedule file not found: {d}")
        return self

    @property
    def effective_worker_batch(self):
        return self.worker_batch_size or self.batch_size // self.M

    @property
    def docs_per_update(self):
        if self.mode == "serial":
            return self.batch_size
        return self.M * self.effective_worker_batch

    @property
    def effective_iterations(self):
        if self.total_docs:
            return self.total_docs // self.docs_per_update
        return self.iterations

    def replace(self, **changes):
        return replace(self, **changes)

    def as_dict(self):
        return asdict(self)

    def echo_lines(self, exclude=("out",)):
        """``key = value`` lines of the resolved config, in field order."""
        return [f"{k} = {v}" for k, v in self.as_dict().items() if k not in exclude]


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def coerce(key, raw):
    if key not in _TYPES:
        raise ConfigurationError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"{key}: expected {getattr(kind, '__name__', kind)}, got {raw!r}") from None
    return raw


def parse_config(text, overrides=None, base_dir=None):
    """Build a validated config from file text plus command-line overrides.

    Relative ``corpus``/``vocab``/delay paths that do not exist as given are
    looked up relative to ``base_dir``.
    """
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        values[key.strip()] = coerce(key.strip(), raw)
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = coerce(key, str(val))
    if base_dir:
        for key in ("corpus", "vocab", "delay"):
            val = values.get(key, "")
            if val and not os.path.isabs(val) and not os.path.exists(val):
                cand = os.path.join(base_dir, val)
                if os.path.exists(cand):
                    values[key] = cand
    return ExperimentConfig(**values).validate()


def load_config(path, overrides=None):
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, overrides, base_dir=os.path.dirname(os.path.abspath(path)))
