"""Evidential and softmax loss family with analytic logit gradients.

All functions are row-wise: ``logits`` and ``y`` have shape (C,) or (n, C)
and the returned loss has the leading shape.  ``alpha = f(logits) + lam``
throughout, where ``f`` is the configured evidence function.

Forms
-----
edl_mse       sum (y - alpha/S)^2, plus the Dirichlet variance when
              ``use_variance_term`` is set (the expected MSE under Dir(alpha))
re_edl_mse    sum (y - alpha/S)^2
ce_projected  -sum y log(alpha/S)
softmax_mse   sum (y - softmax(logits))^2
softmax_ce    -sum y log softmax(logits)

The KL regulariser ``mu_t * KL(Dir(alpha_tilde) || Dir(lam*1))`` with
``alpha_tilde = lam*y + (1-y)*alpha`` is added to the evidential forms when
``kl_coefficient > 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dirichlet import kl_to_scaled_uniform
from .numerics import EvidenceFunction, digamma, trigamma

__all__ = [
    "FORMS",
    "EVIDENTIAL_FORMS",
    "LossConfig",
    "kl_weight",
    "edl_empirical_risk",
    "re_edl_empirical_risk",
    "variance_term",
    "kl_regularizer",
    "ce_projected_risk",
    "softmax_mse_risk",
    "softmax_ce_risk",
    "softmax",
    "total_loss",
    "loss_gradient",
    "batch_loss_and_grad",
]

FORMS = ("edl_mse", "re_edl_mse", "ce_projected", "softmax_mse", "softmax_ce")
EVIDENTIAL_FORMS = ("edl_mse", "re_edl_mse", "ce_projected")
SCHEDULES = ("annealed", "constant")


@dataclass(frozen=True)
class LossConfig:
    form: str = "re_edl_mse"
    lam: float = 1.0
    use_variance_term: bool = False
    kl_coefficient: float = 0.0
    kl_schedule: str = "annealed"
    anneal_epochs: int = 10
    evidence_fn: EvidenceFunction = field(default_factory=EvidenceFunction)

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown loss form {self.form!r}; expected one of {FORMS}")
        if self.kl_schedule not in SCHEDULES:
            raise ValueError(f"unknown kl_schedule {self.kl_schedule!r}")
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if self.kl_coefficient < 0:
            raise ValueError("kl_coefficient must be >= 0")
        if self.anneal_epochs < 1:
            raise ValueError("anneal_epochs must be >= 1")

    @property
    def evidential(self) -> bool:
        return self.form in EVIDENTIAL_FORMS

    def with_(self, **changes) -> LossConfig:
        return replace(self, **changes)


def kl_weight(epoch: int, cfg: LossConfig) -> float:
    """mu_t: mu * min(1, t / anneal_epochs) when annealed, else mu."""
    if cfg.kl_schedule == "constant":
        return cfg.kl_coefficient
    return cfg.kl_coefficient * min(1.0, epoch / cfg.anneal_epochs)


def _prep(logits, y):
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError(f"logits shape {z.shape} does not match labels shape {y.shape}")
    return z, y


def _alpha(z, cfg):
    return cfg.evidence_fn(z) + cfg.lam


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def variance_term(alpha):
    """sum_x Var[p(x)] = (S^2 - sum alpha^2) / (S^2 (S + 1))."""
    a = alpha.alpha if hasattr(alpha, "alpha") else np.asarray(alpha, dtype=np.float64)
    s = a.sum(axis=-1)
    return _out((s * s - (a * a).sum(axis=-1)) / (s * s * (s + 1.0)))


def _mse_to(p, y):
    return ((y - p) ** 2).sum(axis=-1)


def re_edl_empirical_risk(logits, y, cfg: LossConfig):
    z, y = _prep(logits, y)
    a = _alpha(z, cfg)
    return _out(_mse_to(a / a.sum(axis=-1, keepdims=True), y))


def edl_empirical_risk(logits, y, cfg: LossConfig):
    z, y = _prep(logits, y)
    a = _alpha(z, cfg)
    risk = _mse_to(a / a.sum(axis=-1, keepdims=True), y)
    if cfg.use_variance_term:
        risk = risk + variance_term(a)
    return _out(risk)


def ce_projected_risk(logits, y, cfg: LossConfig):
    z, y = _prep(logits, y)
    a = _alpha(z, cfg)
    s = a.sum(axis=-1, keepdims=True)
    return _out(-(y * (np.log(a) - np.log(s))).sum(axis=-1))


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z):
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def softmax_mse_risk(logits, y, cfg: LossConfig | None = None):
    z, y = _prep(logits, y)
    return _out(_mse_to(softmax(z), y))


def softmax_ce_risk(logits, y, cfg: LossConfig | None = None):
    z, y = _prep(logits, y)
    return _out(-(y * _log_softmax(z)).sum(axis=-1))


def _alpha_tilde(a, y, lam):
    return lam * y + (1.0 - y) * a


def kl_regularizer(logits, y, epoch: int, cfg: LossConfig):
    """mu_t * truncated KL(Dir(alpha_tilde) || Dir(lam*1)).

    The target entry of ``alpha_tilde`` is the constant ``lam``, so no
    gradient flows through it.
    """
    z, y = _prep(logits, y)
    mu = kl_weight(epoch, cfg)
    if mu == 0.0:
        return _out(np.zeros(z.shape[:-1]))
    at = _alpha_tilde(_alpha(z, cfg), y, cfg.lam)
    return _out(mu * np.asarray(kl_to_scaled_uniform(at, cfg.lam)))


_EMPIRICAL = {
    "edl_mse": edl_empirical_risk,
    "re_edl_mse": re_edl_empirical_risk,
    "ce_projected": ce_projected_risk,
    "softmax_mse": softmax_mse_risk,
    "softmax_ce": softmax_ce_risk,
}


def total_loss(logits, y, epoch: int, cfg: LossConfig):
    """Per-row empirical risk plus the (scheduled) KL term."""
    risk = np.asarray(_EMPIRICAL[cfg.form](logits, y, cfg))
    if cfg.evidential and cfg.kl_coefficient > 0:
        risk = risk + np.asarray(kl_regularizer(logits, y, epoch, cfg))
    return _out(risk)


# ---------------------------------------------------------------------------
# gradients


def _grad_projected_mse(a, y):
    s = a.sum(axis=-1, keepdims=True)
    p = a / s
    g = -2.0 * (y - p)  # dL/dP
    return (g - (g * p).sum(axis=-1, keepdims=True)) / s


def _grad_variance(a):
    s = a.sum(axis=-1, keepdims=True)
    q = (a * a).sum(axis=-1, keepdims=True)
    den = s * s * (s + 1.0)
    return -1.0 / (s + 1.0) ** 2 - 2.0 * a / den + q * (3.0 * s * s + 2.0 * s) / den**2


def _grad_ce_projected(a, y):
    s = a.sum(axis=-1, keepdims=True)
    return -y / a + y.sum(axis=-1, keepdims=True) / s


def _grad_kl_truncated(at, lam):
    # d/da_k [lgamma(S) - sum lgamma(a) + sum (a - lam)(psi(a) - psi(S))]
    #   = (a_k - lam) psi1(a_k) - psi1(S) * sum_j (a_j - lam)
    s = at.sum(axis=-1, keepdims=True)
    excess = at - lam
    return excess * trigamma(at) - trigamma(s) * excess.sum(axis=-1, keepdims=True)


def loss_gradient(logits, y, epoch: int, cfg: LossConfig) -> np.ndarray:
    """d total_loss / d logits, row-wise."""
    z, y = _prep(logits, y)
    if cfg.form == "softmax_ce":
        return softmax(z) * y.sum(axis=-1, keepdims=True) - y
    if cfg.form == "softmax_mse":
        s = softmax(z)
        g = -2.0 * (y - s)
        return s * (g - (g * s).sum(axis=-1, keepdims=True))

    a = _alpha(z, cfg)
    if cfg.form == "ce_projected":
        d_alpha = _grad_ce_projected(a, y)
    else:
        d_alpha = _grad_projected_mse(a, y)
        if cfg.form == "edl_mse" and cfg.use_variance_term:
            d_alpha = d_alpha + _grad_variance(a)
    mu = kl_weight(epoch, cfg)
    if mu > 0:
        at = _alpha_tilde(a, y, cfg.lam)
        d_alpha = d_alpha + mu * (1.0 - y) * _grad_kl_truncated(at, cfg.lam)
    return d_alpha * cfg.evidence_fn.derivative(z)


def batch_loss_and_grad(logits, y, epoch: int, cfg: LossConfig):
    """Mean loss over the batch and its gradient w.r.t. the logits matrix."""
    losses = np.asarray(total_loss(logits, y, epoch, cfg))
    n = losses.shape[0]
    return float(losses.mean()), loss_gradient(logits, y, epoch, cfg) / n
