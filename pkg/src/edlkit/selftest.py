"""Fast oracle and invariant checks over the whole package.

Each check compares a closed form or fast path against an independent
reference (the stdlib ``math`` special functions, Monte-Carlo sampling,
brute force or finite differences) and reports its worst error.  Everything
is seeded, so the CSV written by :func:`write_report` is byte-identical
across runs on the same platform.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import dirichlet as dr
from .losses import (
    FORMS,
    LossConfig,
    edl_empirical_risk,
    loss_gradient,
    re_edl_empirical_risk,
    total_loss,
    variance_term,
)
from .metrics import aupr, auroc, brier, ece
from .nn import Mlp, MlpSpec
from .numerics import EvidenceFunction, digamma, lgamma, trigamma
from .opinion import (
    DirichletParams,
    DomainConfig,
    Opinion,
    argmax_class,
    dirichlet_to_opinion,
    opinion_from_evidence,
    opinion_to_dirichlet,
    projected_from_evidence,
    projected_probability,
)

__all__ = ["CheckResult", "run_selftest", "write_report"]

Z_LIMIT = 3.0


@dataclass(frozen=True)
class CheckResult:
    name: str
    cases: int
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= self.tolerance)


def _rel(a, b, floor=1e-5):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _random_opinion(rng, c):
    w = rng.dirichlet(np.ones(c + 1))
    u = max(w[-1], 1e-3)
    b = w[:-1] / w[:-1].sum() * (1.0 - u)
    return Opinion(b, 1.0 - b.sum(), rng.dirichlet(np.ones(c)))


def _random_alpha(rng, c):
    return np.exp(rng.uniform(np.log(0.5), np.log(20.0), size=c))


def _math_log_norm(alpha):
    """log of the Dirichlet normaliser with the stdlib lgamma."""
    return math.lgamma(float(alpha.sum())) - sum(math.lgamma(float(a)) for a in alpha)


def _mc_log_density(logp, alpha):
    return _math_log_norm(alpha) + ((alpha - 1.0) * logp).sum(axis=1)


def _z(samples, closed_form):
    se = samples.std(ddof=1) / math.sqrt(samples.size)
    return abs(samples.mean() - closed_form) / se if se > 0 else abs(samples.mean() - closed_form) * np.inf


# ---------------------------------------------------------------------------


def check_special_functions(rng):
    xs = np.exp(rng.uniform(np.log(1e-3), np.log(1e6), size=500))
    lg_err = max(abs(lgamma(x) - math.lgamma(x)) / max(1.0, abs(math.lgamma(x))) for x in xs)
    small = xs[xs <= 100.0]
    rec = np.max(np.abs(digamma(small + 1.0) - digamma(small) - 1.0 / small))
    rec_lg = np.max(np.abs(lgamma(small + 1.0) - lgamma(small) - np.log(small)))
    frozen = max(
        abs(digamma(1.0) + 0.5772156649015329),
        abs(digamma(0.5) + 1.9635100260214235),
        abs(trigamma(1.0) - math.pi**2 / 6.0),
        abs(lgamma(0.5) - 0.5 * math.log(math.pi)),
    )
    return [
        CheckResult("lgamma_vs_stdlib", xs.size, float(lg_err), 1e-12),
        CheckResult("lgamma_recurrence", small.size, float(rec_lg), 1e-12),
        CheckResult("digamma_recurrence", small.size, float(rec), 1e-12),
        CheckResult("special_reference_values", 4, float(frozen), 1e-12),
    ]


def check_bijection(rng, n=1000):
    err = 0.0
    for _ in range(n):
        c = int(rng.integers(2, 11))
        op = _random_opinion(rng, c)
        w = float(rng.uniform(0.5, 10.0))
        back = dirichlet_to_opinion(opinion_to_dirichlet(op, w), w, op.base_rate)
        err = max(err, np.max(np.abs(back.belief - op.belief)), abs(back.uncertainty - op.uncertainty))
        alpha = _random_alpha(rng, c) + w * op.base_rate
        d2 = opinion_to_dirichlet(dirichlet_to_opinion(DirichletParams(alpha), w, op.base_rate), w)
        err = max(err, float(np.max(np.abs(d2.alpha - alpha) / alpha)))
    return [CheckResult("bijection_round_trip", 2 * n, float(err), 1e-12)]


def check_expectation_identity(rng, n=1000):
    err = 0.0
    for _ in range(n):
        op = _random_opinion(rng, int(rng.integers(2, 11)))
        w = float(rng.uniform(0.5, 10.0))
        err = max(err, np.max(np.abs(projected_probability(op) - dr.expectation(opinion_to_dirichlet(op, w)))))
    return [CheckResult("expectation_identity", n, float(err), 1e-12)]


def check_loss_decomposition(rng, n_cases=20, n_mc=200_000):
    cfg = LossConfig(form="edl_mse", use_variance_term=True, evidence_fn=EvidenceFunction("softplus"))
    exact, zmax = 0.0, 0.0
    for i in range(n_cases):
        c = int(rng.integers(2, 11))
        z = rng.normal(0.0, 2.0, size=c)
        y = np.eye(c)[rng.integers(c)]
        alpha = cfg.evidence_fn(z) + cfg.lam
        edl = edl_empirical_risk(z, y, cfg)
        exact = max(exact, abs(edl - (re_edl_empirical_risk(z, y, cfg) + variance_term(alpha))))
        p = dr.sample(alpha, n_mc, seed=1000 + i)
        zmax = max(zmax, _z(((y - p) ** 2).sum(axis=1), edl))
    return [
        CheckResult("loss_decomposition_exact", n_cases, float(exact), 1e-12),
        CheckResult("loss_decomposition_mc_z", n_cases, float(zmax), Z_LIMIT),
    ]


def check_uncertainty_measures(rng, n_cases=20, n_mc=200_000):
    z_ee = z_de = z_mi = 0.0
    ident = 0.0
    sizes = (2, 3, 5, 10)
    for i in range(n_cases):
        alpha = _random_alpha(rng, sizes[i % len(sizes)])
        logp = dr.sample_log(alpha, n_mc, seed=2000 + i)
        p = np.exp(logp)
        ent = -(p * logp).sum(axis=1)
        z_ee = max(z_ee, _z(ent, dr.expected_entropy(alpha)))
        z_de = max(z_de, _z(-_mc_log_density(logp, alpha), dr.differential_entropy(alpha)))
        mean_ent = dr.categorical_entropy(alpha / alpha.sum())
        # MI = H(E p) - E H(p); the first term is deterministic, so the SE is that of E H(p)
        z_mi = max(z_mi, _z(mean_ent - ent, dr.mutual_information(alpha)))
        ident = max(ident, abs(dr.mutual_information(alpha) - (mean_ent - dr.expected_entropy(alpha))))
    return [
        CheckResult("expected_entropy_mc_z", n_cases, float(z_ee), Z_LIMIT),
        CheckResult("differential_entropy_mc_z", n_cases, float(z_de), Z_LIMIT),
        CheckResult("mutual_information_mc_z", n_cases, float(z_mi), Z_LIMIT),
        CheckResult("mutual_information_identity", n_cases, float(ident), 1e-12),
    ]


def _stdlib_kl(alpha, lam):
    """Exact KL(Dir(alpha) || Dir(lam)) with normalisers from ``math.lgamma``."""
    c = alpha.size
    prior = math.lgamma(c * lam) - c * math.lgamma(lam)
    s = float(alpha.sum())
    return _math_log_norm(alpha) - prior + float(((alpha - lam) * (digamma(alpha) - digamma(s))).sum())


def check_kl(rng, n_cases=10, n_mc=200_000):
    neg, zero, zmax, spread = 0.0, 0.0, 0.0, 0.0
    for i in range(n_cases):
        c = int(rng.integers(2, 11))
        lam = float(rng.uniform(0.1, 2.0))
        alpha = _random_alpha(rng, c)
        kl = dr.kl_to_scaled_uniform(alpha, lam, exact=True)
        neg = max(neg, -kl)
        zero = max(zero, abs(dr.kl_to_scaled_uniform(np.full(c, lam), lam, exact=True)))
        logp = dr.sample_log(alpha, n_mc, seed=3000 + i)
        diff = _mc_log_density(logp, alpha) - _mc_log_density(logp, np.full(c, lam))
        zmax = max(zmax, _z(diff, kl))
        offsets = [
            _stdlib_kl(a, lam) - dr.kl_to_scaled_uniform(a, lam)
            for a in (alpha, _random_alpha(rng, c), _random_alpha(rng, c))
        ]
        spread = max(spread, max(offsets) - min(offsets), abs(offsets[0] - dr.kl_constant(lam, c)))
    return [
        CheckResult("kl_nonnegative", n_cases, float(max(neg, 0.0)), 0.0),
        CheckResult("kl_zero_at_prior", n_cases, float(zero), 1e-12),
        CheckResult("kl_mc_z", n_cases, float(zmax), Z_LIMIT),
        CheckResult("kl_constant_offset", n_cases, float(spread), 1e-10),
    ]


def _fd_logits(z, y, epoch, cfg, h=1e-5):
    g = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        g[idx] = (np.sum(total_loss(zp, y, epoch, cfg)) - np.sum(total_loss(zm, y, epoch, cfg))) / (2 * h)
    return g


def _loss_configs():
    for form, kind in itertools.product(FORMS, ("relu", "softplus", "clamped_exp")):
        yield LossConfig(
            form=form,
            lam=0.7,
            use_variance_term=form == "edl_mse",
            kl_coefficient=0.8,
            anneal_epochs=10,
            evidence_fn=EvidenceFunction(kind),
        )


def check_gradients(rng, draws=5):
    worst_logit, worst_param, n_logit, n_param = 0.0, 0.0, 0, 0
    for cfg in _loss_configs():
        for _ in range(draws):
            c = int(rng.integers(2, 6))
            z = rng.normal(0.0, 2.0, size=(4, c))
            # keep logits away from the kinks of relu / clamped exp
            z = np.where(np.abs(z) < 1e-2, 0.5, z)
            y = np.eye(c)[rng.integers(c, size=4)]
            worst_logit = max(worst_logit, float(np.max(_rel(loss_gradient(z, y, 4, cfg), _fd_logits(z, y, 4, cfg)))))
            n_logit += 1
        net = Mlp(MlpSpec((3, 5, 3), "tanh", int(rng.integers(1 << 30))))
        x = rng.normal(size=(4, 3))
        y = np.eye(3)[rng.integers(3, size=4)]
        net.forward(x)
        grads = net.backward(loss_gradient(net.forward(x), y, 4, cfg))
        h = 1e-5
        for p, g in zip(net.params, grads):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = np.sum(total_loss(net.forward(x), y, 4, cfg))
                p[idx] = old - h
                down = np.sum(total_loss(net.forward(x), y, 4, cfg))
                p[idx] = old
                worst_param = max(worst_param, float(_rel(g[idx], (up - down) / (2 * h))))
        n_param += 1
    return [
        CheckResult("gradient_logits_rel", n_logit, worst_logit, 1e-4),
        CheckResult("gradient_params_rel", n_param, worst_param, 1e-4),
    ]


def check_spot_value():
    e = np.zeros(100)
    e[0] = 100.0
    p = projected_probability(opinion_from_evidence(e, DomainConfig(100, lam=1.0)))
    return [CheckResult("projected_spot_value", 1, float(abs(p[0] - 0.505)), 1e-15)]


def check_argmax_invariance(rng, n=1000):
    e = np.exp(rng.normal(0.0, 2.0, size=(n, 5))) * (rng.random((n, 5)) < 0.8)
    e[:, 0] += 1e-3  # no all-zero rows
    base = argmax_class(e)
    flips = 0
    for lam in np.round(np.arange(1, 14) * 0.1, 1):
        flips += int(np.sum(argmax_class(projected_from_evidence(e, float(lam))) != base))
    p0 = projected_from_evidence(e, 0.0)
    scale = max(float(np.max(np.abs(projected_from_evidence(k * e, 0.0) - p0))) for k in (0.5, 2.0, 10.0))
    return [
        CheckResult("argmax_lambda_invariance", n * 13, float(flips), 0.0),
        CheckResult("proportion_scale_invariance", n * 3, scale, 1e-12),
    ]


def _brute_auroc(s, y):
    pos, neg = s[y], s[~y]
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return (gt + 0.5 * eq) / (pos.size * neg.size)


def _step_aupr(s, y):
    total, prev_recall = 0.0, 0.0
    for t in sorted(set(s.tolist()), reverse=True):
        sel = s >= t
        tp = int(np.sum(sel & y))
        recall = tp / int(y.sum())
        total += (recall - prev_recall) * tp / int(sel.sum())
        prev_recall = recall
    return total


def check_metrics(rng):
    err_roc, err_pr = 0.0, 0.0
    for i in range(100):
        n = int(rng.integers(2, 201))
        s = np.round(rng.random(n), int(rng.integers(1, 4)))
        y = rng.random(n) < 0.5
        y[0], y[1] = True, False
        err_roc = max(err_roc, abs(auroc(s, y) - _brute_auroc(s, y)))
        if i < 25:
            m = min(n, 12)
            err_pr = max(err_pr, abs(aupr(s[:m], y[:m]) - _step_aupr(s[:m], y[:m])))
    trivial = max(
        abs(brier(np.eye(3), np.eye(3))),
        abs(brier([[0.0, 1.0]], [[1.0, 0.0]]) - 2.0),
        abs(ece([1.0, 1.0], [True, True])),
        abs(ece([0.5, 0.5], [True, False])),
        abs(ece([0.9], [False]) - 0.9),
    )
    return [
        CheckResult("auroc_vs_pair_count", 100, float(err_roc), 1e-12),
        CheckResult("aupr_vs_step_through", 25, float(err_pr), 1e-12),
        CheckResult("brier_ece_trivial", 5, float(trivial), 0.0),
    ]


def run_selftest(seed: int = 0, mc_samples: int = 200_000) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    results += check_special_functions(rng)
    results += check_bijection(rng)
    results += check_expectation_identity(rng)
    results += check_loss_decomposition(rng, n_mc=mc_samples)
    results += check_uncertainty_measures(rng, n_mc=mc_samples)
    results += check_kl(rng, n_mc=mc_samples)
    results += check_gradients(rng)
    results += check_spot_value()
    results += check_argmax_invariance(rng)
    results += check_metrics(rng)
    return results


def write_report(results: list[CheckResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["format_version", "check", "cases", "max_error", "tolerance", "passed"])
        for r in results:
            w.writerow([1, r.name, r.cases, f"{r.max_error:.6e}", f"{r.tolerance:.1e}", str(r.passed).lower()])
