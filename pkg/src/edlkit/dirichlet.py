"""Closed-form Dirichlet statistics, uncertainty measures and sampling.

Every function takes either a :class:`DirichletParams` or a raw concentration
array; arrays may be batched, with classes on the last axis.  Entropies are
in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import digamma, lgamma
from .opinion import DirichletParams

__all__ = [
    "UncertaintyReport",
    "expectation",
    "variance",
    "differential_entropy",
    "expected_entropy",
    "mutual_information",
    "categorical_entropy",
    "uncertainty_mass",
    "max_probability",
    "kl_to_scaled_uniform",
    "kl_constant",
    "log_density",
    "sample",
    "sample_log",
    "uncertainty_report",
]


def _alpha(d) -> np.ndarray:
    if isinstance(d, DirichletParams):
        return d.alpha
    a = np.asarray(d, dtype=np.float64)
    if a.ndim == 0 or a.shape[-1] == 0:
        raise ValueError("alpha must have a class axis")
    if not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise ValueError("alpha must be finite and strictly positive")
    return a


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def expectation(d) -> np.ndarray:
    a = _alpha(d)
    return a / a.sum(axis=-1, keepdims=True)


def variance(d) -> np.ndarray:
    a = _alpha(d)
    s = a.sum(axis=-1, keepdims=True)
    return a * (s - a) / (s * s * (s + 1.0))


def differential_entropy(d):
    a = _alpha(d)
    s = a.sum(axis=-1, keepdims=True)
    out = (
        lgamma(a).sum(axis=-1)
        - lgamma(s)[..., 0]
        - ((a - 1.0) * (digamma(a) - digamma(s))).sum(axis=-1)
    )
    return _scalar(out)


def expected_entropy(d):
    """E_{p ~ Dir(alpha)}[H(p)] = -sum (a/S) (psi(a+1) - psi(S+1))."""
    a = _alpha(d)
    s = a.sum(axis=-1, keepdims=True)
    p = a / s
    out = -(p * (digamma(a + 1.0) - digamma(s + 1.0))).sum(axis=-1)
    return _scalar(out)


def categorical_entropy(p) -> np.ndarray | float:
    p = np.asarray(p, dtype=np.float64)
    logp = np.log(np.where(p > 0, p, 1.0))
    return _scalar(-(p * logp).sum(axis=-1))


def mutual_information(d):
    """Entropy of the mean minus expected entropy, in one fused sum."""
    a = _alpha(d)
    s = a.sum(axis=-1, keepdims=True)
    p = a / s
    out = -(p * (np.log(p) - digamma(a + 1.0) + digamma(s + 1.0))).sum(axis=-1)
    return _scalar(out)


def uncertainty_mass(d, lam: float = 1.0):
    """u = C*lam / S for the evidence parameterisation alpha = e + lam."""
    a = _alpha(d)
    return _scalar(a.shape[-1] * lam / a.sum(axis=-1))


def max_probability(d):
    return _scalar(expectation(d).max(axis=-1))


def kl_constant(lam: float, num_classes: int) -> float:
    """C*lgamma(lam) - lgamma(C*lam): the part of KL(Dir(a) || Dir(lam*1)) constant in a."""
    return num_classes * lgamma(lam) - lgamma(num_classes * lam)


def kl_to_scaled_uniform(d_tilde, lam: float, exact: bool = False):
    """KL(Dir(alpha) || Dir(lam * 1)).

    With ``exact=False`` the normaliser term constant in ``alpha`` is dropped,
    which leaves gradients unchanged; ``exact=True`` gives the true divergence.
    """
    if not lam > 0:
        raise ValueError("lam must be > 0")
    a = _alpha(d_tilde)
    s = a.sum(axis=-1, keepdims=True)
    out = (
        lgamma(s)[..., 0]
        - lgamma(a).sum(axis=-1)
        + ((a - lam) * (digamma(a) - digamma(s))).sum(axis=-1)
    )
    if exact:
        out = out + kl_constant(lam, a.shape[-1])
    return _scalar(out)


def log_density(logp, d) -> np.ndarray:
    """log Dir(p; alpha) evaluated from log-probabilities (rows of ``logp``)."""
    a = _alpha(d)
    logp = np.asarray(logp, dtype=np.float64)
    norm = lgamma(a.sum(axis=-1)) - lgamma(a).sum(axis=-1)
    return norm + ((a - 1.0) * logp).sum(axis=-1)


def sample_log(d, n: int, seed: int) -> np.ndarray:
    """Log of ``n`` Dirichlet draws, shape (n, C).

    Draws are normalised Gamma variates.  Shapes below one are boosted,
    Gamma(a) = Gamma(a + 1) * U**(1/a), and handled in log space so that
    tiny concentrations do not underflow to zero.
    """
    a = _alpha(d)
    if a.ndim != 1:
        raise ValueError("sample expects a single concentration vector")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    small = a < 1.0
    shape = np.where(small, a + 1.0, a)
    g = rng.standard_gamma(shape, size=(n, a.size))
    logg = np.log(g)
    if np.any(small):
        u = rng.random(size=(n, int(small.sum())))
        logg[:, small] += np.log1p(-u) / a[small]
    m = logg.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(logg - m).sum(axis=1, keepdims=True))
    return logg - lse


def sample(d, n: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. Dirichlet draws, rows summing to one."""
    p = np.exp(sample_log(d, n, seed))
    return p / p.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class UncertaintyReport:
    mp: float
    um: float
    de: float
    mi: float
    ee: float


def uncertainty_report(d, lam: float = 1.0) -> UncertaintyReport:
    a = _alpha(d)
    if a.ndim != 1:
        raise ValueError("uncertainty_report expects a single concentration vector")
    return UncertaintyReport(
        mp=max_probability(a),
        um=uncertainty_mass(a, lam),
        de=differential_entropy(a),
        mi=mutual_information(a),
        ee=expected_entropy(a),
    )
