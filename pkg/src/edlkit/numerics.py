"""Special functions and evidence activations.

``lgamma``, ``digamma`` and ``trigamma`` use the asymptotic (Stirling)
series for arguments >= ``_SHIFT`` and upward recurrence below it.  All
functions accept scalars or arrays and work in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DomainError",
    "EvidenceFunction",
    "apply_evidence_fn",
    "evidence_derivative",
    "lgamma",
    "digamma",
    "trigamma",
    "softplus",
    "sigmoid",
]

_SHIFT = 15.0
_HALF_LOG_2PI = 0.91893853320467274178032973640562

# B_2k for k = 1..8
_BERNOULLI = np.array(
    [
        1.0 / 6.0,
        -1.0 / 30.0,
        1.0 / 42.0,
        -1.0 / 30.0,
        5.0 / 66.0,
        -691.0 / 2730.0,
        7.0 / 6.0,
        -3617.0 / 510.0,
    ]
)
_K2 = 2.0 * np.arange(1, len(_BERNOULLI) + 1)  # 2k

# Series coefficients, highest order first for Horner evaluation in 1/x^2.
_LGAMMA_COEF = (_BERNOULLI / (_K2 * (_K2 - 1.0)))[::-1]
_DIGAMMA_COEF = (_BERNOULLI / _K2)[::-1]
_TRIGAMMA_COEF = _BERNOULLI[::-1]


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


def _check_positive(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name}: non-finite argument")
    if np.any(arr <= 0.0):
        raise DomainError(f"{name}: argument must be > 0, got min {arr.min()!r}")
    return arr


def _horner(coef: np.ndarray, t: np.ndarray) -> np.ndarray:
    acc = np.zeros_like(t)
    for c in coef:
        acc = acc * t + c
    return acc


def _shift_up(x: np.ndarray):
    """Return (y, steps) with y = x + steps >= _SHIFT elementwise."""
    steps = np.where(x < _SHIFT, np.ceil(_SHIFT - x), 0.0)
    return x + steps, steps.astype(np.int64)


def _recurrence_terms(x: np.ndarray, steps: np.ndarray):
    """x + k for k = n-1, ..., 0 on a trailing axis, with a mask of k < steps.

    Descending k puts the terms with the largest reciprocals last.
    """
    k = np.arange(int(steps.max(initial=0)) - 1, -1, -1, dtype=np.float64)
    return x[..., None] + k, k < steps[..., None]


def _out(arr: np.ndarray, like):
    return float(arr) if np.ndim(like) == 0 else arr


def lgamma(x):
    """Natural log of the Gamma function for x > 0.

    Absolute error is below 1e-12 wherever |ln Gamma(x)| <= 1; beyond that
    the error is a few ulp of the result.
    """
    x = _check_positive(x, "lgamma")
    y, steps = _shift_up(x)
    inv = 1.0 / y
    series = inv * _horner(_LGAMMA_COEF, inv * inv)
    out = (y - 0.5) * np.log(y) - y + _HALF_LOG_2PI + series
    # Gamma(x) = Gamma(x + n) / (x (x+1) ... (x+n-1)); one log of the product.
    if steps.any():
        terms, mask = _recurrence_terms(x, steps)
        out = out - np.log(np.where(mask, terms, 1.0).prod(axis=-1))
    return _out(out, x)


def digamma(x):
    """Digamma function psi(x) = d/dx ln Gamma(x) for x > 0."""
    x = _check_positive(x, "digamma")
    y, steps = _shift_up(x)
    inv2 = 1.0 / (y * y)
    out = np.log(y) - 0.5 / y - inv2 * _horner(_DIGAMMA_COEF, inv2)
    if steps.any():
        terms, mask = _recurrence_terms(x, steps)
        out = out - np.where(mask, 1.0 / terms, 0.0).sum(axis=-1)
    return _out(out, x)


def trigamma(x):
    """Trigamma function psi'(x) for x > 0."""
    x = _check_positive(x, "trigamma")
    y, steps = _shift_up(x)
    inv = 1.0 / y
    inv2 = inv * inv
    out = inv + 0.5 * inv2 + inv * inv2 * _horner(_TRIGAMMA_COEF, inv2)
    if steps.any():
        terms, mask = _recurrence_terms(x, steps)
        out = out + np.where(mask, 1.0 / (terms * terms), 0.0).sum(axis=-1)
    return _out(out, x)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


_KINDS = ("relu", "softplus", "clamped_exp")


@dataclass(frozen=True)
class EvidenceFunction:
    """Non-negative map from logits to evidence.

    ``clamp_lo``/``clamp_hi`` only matter for ``clamped_exp``, whose input
    is clipped before exponentiation to avoid overflow.
    """

    kind: str = "softplus"
    clamp_lo: float = -10.0
    clamp_hi: float = 10.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown evidence function {self.kind!r}; expected one of {_KINDS}")
        if not self.clamp_lo < self.clamp_hi:
            raise ValueError("clamp_lo must be below clamp_hi")

    def __call__(self, logits):
        return apply_evidence_fn(self, logits)

    def derivative(self, logits):
        return evidence_derivative(self, logits)


def _finite(logits) -> np.ndarray:
    arr = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("logits must be finite")
    return arr


def apply_evidence_fn(f: EvidenceFunction, logits) -> np.ndarray:
    z = _finite(logits)
    if f.kind == "relu":
        return np.maximum(z, 0.0)
    if f.kind == "softplus":
        return softplus(z)
    return np.exp(np.clip(z, f.clamp_lo, f.clamp_hi))


def evidence_derivative(f: EvidenceFunction, logits) -> np.ndarray:
    """Elementwise derivative of the evidence function (0 at kinks)."""
    z = _finite(logits)
    if f.kind == "relu":
        return (z > 0.0).astype(np.float64)
    if f.kind == "softplus":
        return sigmoid(z)
    inside = (z > f.clamp_lo) & (z < f.clamp_hi)
    return np.where(inside, np.exp(np.clip(z, f.clamp_lo, f.clamp_hi)), 0.0)
