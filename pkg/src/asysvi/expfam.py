"""Global variational parameters and the generic stochastic update rules.

Everything here is a pure function of its inputs. ``GlobalParams`` values
are never mutated in place; each update returns a new object whose
version is one higher.
"""

from dataclasses import dataclass
import logging
import math

import numpy as np

from .errors import (
    ConfigurationError,
    NumericalDivergenceError,
    StructuralError,
    UsageError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GlobalParams:
    """Global variational parameter (K x W topic Dirichlets for LDA)."""

    values: np.ndarray
    version: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.version < 0:
            raise ConfigurationError("version must be non-negative")

    @property
    def shape(self):
        return self.values.shape

    def is_positive(self):
        return bool(np.all(self.values > 0))


@dataclass(frozen=True)
class HyperParams:
    alpha: float
    eta: float
    num_topics: int
    corpus_size: int

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")
        if not self.eta > 0:
            raise ConfigurationError(f"eta must be positive, got {self.eta}")
        if self.num_topics < 1:
            raise ConfigurationError("num_topics must be >= 1")
        if self.corpus_size < 1:
            raise ConfigurationError("corpus_size must be >= 1")


@dataclass(frozen=True)
class LearningSchedule:
    """Step sizes rho_t = (tau0 + t) ** -kappa.

    kappa in (0.5, 1] makes the steps sum to infinity while their squares
    stay summable. kappa = 0.5 is accepted because it is a common tuned
    setting, but squares are then only borderline (harmonic) and a warning
    is logged.
    """

    tau0: float
    kappa: float

    def __post_init__(self):
        if not self.tau0 >= 0:
            raise ConfigurationError(f"tau0 must be non-negative, got {self.tau0}")
        if not 0.5 <= self.kappa <= 1.0:
            raise ConfigurationError(f"kappa must lie in [0.5, 1], got {self.kappa}")
        if self.kappa == 0.5:
            logger.warning("kappa = 0.5: squared step sizes are not summable")


@dataclass(frozen=True)
class NaturalGradient:
    values: np.ndarray
    base_version: int
    batch_size: int = 1

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")

    @property
    def shape(self):
        return self.values.shape


def learning_rate(t, sched):
    if t < 0:
        raise UsageError(f"iteration index must be non-negative, got {t}")
    base = sched.tau0 + t
    if base <= 0:
        # only reachable with tau0 == 0 at t == 0
        raise ConfigurationError("tau0 + t must be positive; use tau0 >= 1 to start at t = 0")
    return math.pow(base, -sched.kappa)


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise StructuralError(f"shape mismatch: {a.shape} vs {b.shape}")


def svi_step(lam, lam_hat, rho):
    """Convex combination ``(1 - rho) * lam + rho * lam_hat``.

    ``lam_hat`` may be a plain array or another GlobalParams.
    """
    lam_hat = np.asarray(getattr(lam_hat, "values", lam_hat), dtype=np.float64)
    _check_shapes(lam.values, lam_hat)
    if not 0.0 <= rho <= 1.0:
        raise ConfigurationError(f"rho must lie in [0, 1], got {rho}")
    new = (1.0 - rho) * lam.values + rho * lam_hat
    return GlobalParams(new, lam.version + 1)


def apply_gradient(lam, grad, rho):
    """Gradient-form update ``lam + rho * G``.

    Raises NumericalDivergenceError instead of clamping when an entry
    would become non-positive.
    """
    g = np.asarray(getattr(grad, "values", grad), dtype=np.float64)
    _check_shapes(lam.values, g)
    if not (rho >= 0 and math.isfinite(rho)):
        raise ConfigurationError(f"rho must be a finite non-negative number, got {rho}")
    new = lam.values + rho * g
    bad = ~(new > 0)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NumericalDivergenceError(
            f"update drives lambda{list(idx)} to {new[idx]:.6g}", index=idx
        )
    return GlobalParams(new, lam.version + 1)


def aggregate_gradients(msgs):
    """Elementwise mean of M gradients; base_version is the most stale one."""
    msgs = list(msgs)
    if not msgs:
        raise UsageError("cannot aggregate an empty list of gradients")
    shape = msgs[0].shape
    for m in msgs[1:]:
        if m.shape != shape:
            raise StructuralError(f"shape mismatch: {m.shape} vs {shape}")
    if len(msgs) == 1:
        return msgs[0]
    values = np.mean(np.stack([m.values for m in msgs]), axis=0)
    return NaturalGradient(
        values,
        base_version=min(m.base_version for m in msgs),
        batch_size=sum(m.batch_size for m in msgs),
    )
