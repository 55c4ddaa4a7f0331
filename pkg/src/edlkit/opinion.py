"""Subjective opinions, evidence and the opinion <-> Dirichlet bijection.

A multinomial opinion ``(b, u, a)`` over ``C`` classes is mapped to Dirichlet
concentration ``alpha = b * W / u + a * W`` for a prior weight ``W > 0``.
Evidence ``e`` enters through ``alpha = e + lam`` with ``lam = W / C`` under a
uniform base rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ADDITIVITY_TOL",
    "InvalidOpinionError",
    "DegenerateOpinionError",
    "DomainConfig",
    "Opinion",
    "EvidenceVector",
    "DirichletParams",
    "opinion_from_evidence",
    "projected_probability",
    "opinion_to_dirichlet",
    "dirichlet_to_opinion",
    "projected_from_evidence",
    "proportion_probability",
    "argmax_class",
    "vacuous_opinion",
]

ADDITIVITY_TOL = 1e-12


class InvalidOpinionError(ValueError):
    """Parameters violate the additivity or non-negativity constraints."""


class DegenerateOpinionError(ValueError):
    """Opinion with zero uncertainty has no finite Dirichlet image."""


def _vector(x, name: str) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


def _check_base_rate(a: np.ndarray) -> None:
    if np.any(a < 0) or abs(a.sum() - 1.0) > ADDITIVITY_TOL * a.size:
        raise InvalidOpinionError("base rate must be a probability vector")


def _uniform(c: int) -> np.ndarray:
    a = np.full(c, 1.0 / c)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DomainConfig:
    """Class count, base rate and per-class prior weight ``lam`` (W = C*lam)."""

    num_classes: int
    lam: float = 1.0
    base_rate: np.ndarray | None = None

    def __post_init__(self):
        if int(self.num_classes) < 1:
            raise ValueError("num_classes must be positive")
        if not self.lam > 0:
            raise ValueError("lam must be > 0; use proportion_probability for the lam = 0 limit")
        if self.base_rate is None:
            a = _uniform(self.num_classes)
        else:
            a = _vector(self.base_rate, "base_rate")
            if a.size != self.num_classes:
                raise ValueError("base_rate length must equal num_classes")
            _check_base_rate(a)
        object.__setattr__(self, "base_rate", a)

    @property
    def prior_weight(self) -> float:
        return self.num_classes * self.lam


@dataclass(frozen=True)
class Opinion:
    belief: np.ndarray
    uncertainty: float
    base_rate: np.ndarray = field(default=None)

    def __post_init__(self):
        b = _vector(self.belief, "belief")
        a = _uniform(b.size) if self.base_rate is None else _vector(self.base_rate, "base_rate")
        u = float(self.uncertainty)
        if a.size != b.size:
            raise ValueError("belief and base_rate lengths differ")
        if np.any(b < 0) or not 0.0 <= u <= 1.0:
            raise InvalidOpinionError("belief and uncertainty masses must be non-negative")
        if abs(b.sum() + u - 1.0) > ADDITIVITY_TOL:
            raise InvalidOpinionError(f"sum(b) + u = {b.sum() + u!r}, expected 1")
        _check_base_rate(a)
        object.__setattr__(self, "belief", b)
        object.__setattr__(self, "uncertainty", u)
        object.__setattr__(self, "base_rate", a)

    @property
    def num_classes(self) -> int:
        return self.belief.size

    def allclose(self, other: Opinion, atol: float = ADDITIVITY_TOL) -> bool:
        return (
            np.allclose(self.belief, other.belief, rtol=0, atol=atol)
            and abs(self.uncertainty - other.uncertainty) <= atol
            and np.allclose(self.base_rate, other.base_rate, rtol=0, atol=atol)
        )


@dataclass(frozen=True)
class EvidenceVector:
    e: np.ndarray

    def __post_init__(self):
        e = _vector(self.e, "evidence")
        if np.any(e < 0):
            raise ValueError("evidence must be non-negative")
        object.__setattr__(self, "e", e)


@dataclass(frozen=True)
class DirichletParams:
    alpha: np.ndarray

    def __post_init__(self):
        a = _vector(self.alpha, "alpha")
        if np.any(a <= 0):
            raise ValueError("Dirichlet concentration must be strictly positive")
        object.__setattr__(self, "alpha", a)

    @property
    def S(self) -> float:
        return float(self.alpha.sum())

    @property
    def num_classes(self) -> int:
        return self.alpha.size


def vacuous_opinion(num_classes: int, base_rate=None) -> Opinion:
    return Opinion(np.zeros(num_classes), 1.0, base_rate)


def opinion_from_evidence(e, cfg: DomainConfig) -> Opinion:
    """b = e / S and u = C*lam / S with S = sum(e) + C*lam."""
    ev = e.e if isinstance(e, EvidenceVector) else EvidenceVector(e).e
    if ev.size != cfg.num_classes:
        raise ValueError(f"evidence has {ev.size} entries, domain has {cfg.num_classes} classes")
    w = cfg.prior_weight
    s = ev.sum() + w
    return Opinion(ev / s, w / s, cfg.base_rate)


def projected_probability(op: Opinion) -> np.ndarray:
    return op.belief + op.base_rate * op.uncertainty


def opinion_to_dirichlet(op: Opinion, W: float) -> DirichletParams:
    if not W > 0:
        raise ValueError("prior weight W must be > 0")
    if op.uncertainty <= 0.0:
        raise DegenerateOpinionError("u = 0 maps to an infinite concentration")
    return DirichletParams(op.belief * W / op.uncertainty + op.base_rate * W)


def dirichlet_to_opinion(d: DirichletParams, W: float, a=None) -> Opinion:
    """Inverse map: u = W / S, b = (alpha - a*W) / S."""
    if not W > 0:
        raise ValueError("prior weight W must be > 0")
    alpha = d.alpha
    a = _uniform(alpha.size) if a is None else _vector(a, "base_rate")
    if a.size != alpha.size:
        raise ValueError("base_rate length must match alpha")
    excess = alpha - a * W
    # tolerate rounding from a forward map
    slack = 1e-12 * np.maximum(alpha, 1.0)
    if np.any(excess < -slack):
        raise InvalidOpinionError("alpha(x) < a(x) * W gives negative belief")
    s = alpha.sum()
    b = np.maximum(excess, 0.0) / s
    # s >= W up to the rounding of the sum
    return Opinion(b, min(W / s, 1.0), a)


def projected_from_evidence(e, lam: float) -> np.ndarray:
    """(e + lam) / (sum(e) + C*lam) along the last axis; works on batches."""
    e = np.asarray(e, dtype=np.float64)
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if lam == 0:
        return proportion_probability(e)
    alpha = e + lam
    return alpha / alpha.sum(axis=-1, keepdims=True)


def proportion_probability(e) -> np.ndarray:
    """The lam -> 0 limit e / sum(e); independent of the evidence scale."""
    e = np.asarray(e, dtype=np.float64)
    if np.any(e < 0):
        raise ValueError("evidence must be non-negative")
    total = e.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("lam = 0 needs positive total evidence")
    return e / total


def argmax_class(p) -> np.ndarray | int:
    """Argmax over the last axis; ties resolve to the lowest index."""
    out = np.argmax(np.asarray(p), axis=-1)
    return int(out) if np.ndim(out) == 0 else out
