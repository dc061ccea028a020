"""Digamma and the Dirichlet expectation identity built on it.

The digamma here moves every argument up by six with the recurrence
psi(x) = psi(x + 1) - 1/x, then sums the asymptotic series with eight
Bernoulli terms. Absolute error is below 1e-10 on [1e-3, 1e6].
"""

import numpy as np

from .errors import DomainError

_SHIFT = 6.0

# B_{2n} / (2n) for n = 1..8
_SERIES = np.array([
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
    -3617.0 / 8160.0,
])


def digamma(x):
    """Digamma of a positive scalar or array."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(x > 0):
        raise DomainError("digamma is only implemented for positive arguments")
    # unconditional shift: psi(x) = psi(x + 6) - sum_{j<6} 1/(x + j)
    acc = -(1.0 / x + 1.0 / (x + 1.0) + 1.0 / (x + 2.0)
            + 1.0 / (x + 3.0) + 1.0 / (x + 4.0) + 1.0 / (x + 5.0))
    y = x + _SHIFT
    inv2 = 1.0 / (y * y)
    series = _SERIES[-1] * inv2
    for coef in _SERIES[-2::-1]:
        series = (series + coef) * inv2
    return acc + np.log(y) - 0.5 / y - series


def dirichlet_expectation(param):
    """E[log theta] for theta ~ Dir(param).

    A 1-D ``param`` is one Dirichlet; a 2-D ``param`` is one Dirichlet per
    row (the layout used for topic-word parameters).
    """
    param = np.asarray(param, dtype=np.float64)
    if not np.all(param > 0):
        raise DomainError("Dirichlet parameters must be strictly positive")
    if param.ndim == 1:
        psi = digamma(np.append(param, param.sum()))
        return psi[:-1] - psi[-1]
    return digamma(param) - digamma(param.sum(axis=1))[:, np.newaxis]
