"""Experiment configuration, grid expansion and the train/evaluate loop.

A run trains one network per (grid cell, seed), evaluates it on held-out ID
data and an OOD ring, and aggregates every metric as mean and sample SD
across seeds.  All outputs are written with fixed float formatting so that
identical configs give byte-identical CSVs.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import itertools
import json
import logging
import math
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    LabeledDataset,
    Standardizer,
    add_noise,
    gaussian_blobs,
    ood_ring,
    stratified_split,
)
from .losses import FORMS, SCHEDULES, LossConfig, softmax
from .metrics import MEASURES, aupr, auroc, brier, ece, uncertainty_scores, write_pr_csv, write_roc_csv
from .nn import Mlp, MlpSpec, train
from .numerics import EvidenceFunction

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
OUTPUT_ROOT_ENV = "EDLKIT_OUTPUT_ROOT"
DEFAULT_LAMBDA_GRID = tuple(round(0.1 * k, 1) for k in range(1, 11))
SWEEP_AXES = ("form", "evidence_fn", "lambda", "use_variance_term", "mu")
TUNED = "tuned"
PARTIAL_MARKER = ".partial"


class ConfigError(ValueError):
    """Invalid experiment configuration; the message starts with the field path."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class DataSpec:
    num_classes: int = 3
    n_per_class: int = 200
    dim: int = 10
    spread: float = 1.5
    radius: float = 3.0
    ood_radius: float = 8.0
    n_ood: int = 300
    val_fraction: float = 0.05
    test_fraction: float = 0.3
    noise_sigmas: list[float] = field(default_factory=list)


@dataclass
class ModelSpec:
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    activation: str = "relu"


@dataclass
class ExperimentConfig:
    data: DataSpec = field(default_factory=DataSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    loss: LossConfig = field(default_factory=LossConfig)
    sweep: dict = field(default_factory=dict)
    ablation: bool = False
    lambda_grid: list[float] = field(default_factory=lambda: list(DEFAULT_LAMBDA_GRID))
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    measures: list[str] = field(default_factory=lambda: list(MEASURES))
    output_dir: str | None = None
    jobs: int = 1

    def to_json(self) -> dict:
        d = asdict(self)
        d["loss"] = loss_to_json(self.loss)
        d["format_version"] = FORMAT_VERSION
        return d

    def digest(self) -> str:
        blob = json.dumps({k: v for k, v in self.to_json().items() if k not in ("output_dir", "jobs")}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def loss_to_json(cfg: LossConfig) -> dict:
    return {
        "form": cfg.form,
        "lambda": cfg.lam,
        "use_variance_term": cfg.use_variance_term,
        "kl_coefficient": cfg.kl_coefficient,
        "kl_schedule": cfg.kl_schedule,
        "anneal_epochs": cfg.anneal_epochs,
        "evidence_fn": asdict(cfg.evidence_fn),
    }


def _type_name(t) -> str:
    return {int: "integer", float: "number", bool: "boolean", str: "string"}.get(t, str(t))


def _get(obj: dict, key: str, path: str, kind, default):
    if key not in obj:
        return default
    v = obj[key]
    where = f"{path}.{key}" if path else key
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if kind is int and isinstance(v, float) and v.is_integer():
        v = int(v)
    if not isinstance(v, kind) or (kind is not bool and isinstance(v, bool)):
        raise ConfigError(f"{where}: expected {_type_name(kind)}, got {v!r}")
    return v


def _list(obj: dict, key: str, path: str, kind, default):
    if key not in obj:
        return list(default)
    v = obj[key]
    where = f"{path}.{key}" if path else key
    if not isinstance(v, list):
        raise ConfigError(f"{where}: expected a list")
    return [_get({"_": x}, "_", f"{where}[{i}]".replace("._", ""), kind, None) for i, x in enumerate(v)]


def _reject_unknown(obj: dict, allowed, path: str):
    extra = sorted(set(obj) - set(allowed))
    if extra:
        where = f"{path}." if path else ""
        raise ConfigError(f"{where}{extra[0]}: unknown field")


def parse_evidence_fn(v, path: str) -> EvidenceFunction:
    if isinstance(v, str):
        v = {"kind": v}
    if not isinstance(v, dict):
        raise ConfigError(f"{path}: expected a name or an object")
    _reject_unknown(v, ("kind", "clamp_lo", "clamp_hi"), path)
    try:
        return EvidenceFunction(
            _get(v, "kind", path, str, "softplus"),
            _get(v, "clamp_lo", path, float, -10.0),
            _get(v, "clamp_hi", path, float, 10.0),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_loss(obj: dict, path: str = "loss") -> LossConfig:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    _reject_unknown(
        obj,
        ("form", "lambda", "use_variance_term", "kl_coefficient", "kl_schedule", "anneal_epochs", "evidence_fn"),
        path,
    )
    form = _get(obj, "form", path, str, "re_edl_mse")
    if form not in FORMS:
        raise ConfigError(f"{path}.form: must be one of {list(FORMS)}, got {form!r}")
    lam = _get(obj, "lambda", path, float, 1.0)
    if not lam > 0:
        raise ConfigError(f"{path}.lambda: must be > 0")
    mu = _get(obj, "kl_coefficient", path, float, 0.0)
    if mu < 0:
        raise ConfigError(f"{path}.kl_coefficient: must be >= 0")
    sched = _get(obj, "kl_schedule", path, str, "annealed")
    if sched not in SCHEDULES:
        raise ConfigError(f"{path}.kl_schedule: must be one of {list(SCHEDULES)}")
    anneal = _get(obj, "anneal_epochs", path, int, 10)
    if anneal < 1:
        raise ConfigError(f"{path}.anneal_epochs: must be >= 1")
    ev = parse_evidence_fn(obj.get("evidence_fn", "softplus"), f"{path}.evidence_fn")
    return LossConfig(
        form=form,
        lam=lam,
        use_variance_term=_get(obj, "use_variance_term", path, bool, form == "edl_mse"),
        kl_coefficient=mu,
        kl_schedule=sched,
        anneal_epochs=anneal,
        evidence_fn=ev,
    )


def _parse_sweep(obj, path="sweep") -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    _reject_unknown(obj, SWEEP_AXES, path)
    out = {}
    for axis, values in obj.items():
        where = f"{path}.{axis}"
        if not isinstance(values, list) or not values:
            raise ConfigError(f"{where}: must be a non-empty list")
        parsed = []
        for i, v in enumerate(values):
            item = f"{where}[{i}]"
            if axis == "lambda":
                if v == TUNED:
                    parsed.append(TUNED)
                    continue
                if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                    raise ConfigError(f"{item}: must be a positive number or {TUNED!r}")
                parsed.append(float(v))
            elif axis == "mu":
                if isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0:
                    raise ConfigError(f"{item}: must be a non-negative number")
                parsed.append(float(v))
            elif axis == "form":
                if v not in FORMS:
                    raise ConfigError(f"{item}: must be one of {list(FORMS)}")
                parsed.append(v)
            elif axis == "evidence_fn":
                parsed.append(parse_evidence_fn(v, item))
            elif axis == "use_variance_term":
                if not isinstance(v, bool):
                    raise ConfigError(f"{item}: expected boolean")
                parsed.append(v)
        out[axis] = parsed
    return out


def parse_config(obj: dict) -> ExperimentConfig:
    """Build and validate an :class:`ExperimentConfig` from decoded JSON."""
    if not isinstance(obj, dict):
        raise ConfigError("<root>: expected an object")
    _reject_unknown(
        obj,
        ("format_version", "data", "model", "loss", "sweep", "ablation", "lambda_grid", "seeds",
         "epochs", "batch_size", "lr", "measures", "output_dir", "jobs"),
        "",
    )
    fv = obj.get("format_version", FORMAT_VERSION)
    if fv != FORMAT_VERSION:
        raise ConfigError(f"format_version: unsupported value {fv!r}")

    d = obj.get("data", {})
    if not isinstance(d, dict):
        raise ConfigError("data: expected an object")
    _reject_unknown(d, DataSpec.__dataclass_fields__, "data")
    base = DataSpec()
    data = DataSpec(
        num_classes=_get(d, "num_classes", "data", int, base.num_classes),
        n_per_class=_get(d, "n_per_class", "data", int, base.n_per_class),
        dim=_get(d, "dim", "data", int, base.dim),
        spread=_get(d, "spread", "data", float, base.spread),
        radius=_get(d, "radius", "data", float, base.radius),
        ood_radius=_get(d, "ood_radius", "data", float, base.ood_radius),
        n_ood=_get(d, "n_ood", "data", int, base.n_ood),
        val_fraction=_get(d, "val_fraction", "data", float, base.val_fraction),
        test_fraction=_get(d, "test_fraction", "data", float, base.test_fraction),
        noise_sigmas=_list(d, "noise_sigmas", "data", float, base.noise_sigmas),
    )
    if data.num_classes < 2:
        raise ConfigError("data.num_classes: must be >= 2")
    if data.dim < 2:
        raise ConfigError("data.dim: must be >= 2")
    for name in ("n_per_class", "n_ood"):
        if getattr(data, name) < 1:
            raise ConfigError(f"data.{name}: must be >= 1")
    if data.spread < 0:
        raise ConfigError("data.spread: must be >= 0")
    if not 0 < data.val_fraction < 1 or not 0 < data.test_fraction < 1 or data.val_fraction + data.test_fraction >= 1:
        raise ConfigError("data.val_fraction: val and test fractions must be in (0, 1) and sum below 1")
    if any(s < 0 for s in data.noise_sigmas):
        raise ConfigError("data.noise_sigmas: must be >= 0")

    m = obj.get("model", {})
    if not isinstance(m, dict):
        raise ConfigError("model: expected an object")
    _reject_unknown(m, ModelSpec.__dataclass_fields__, "model")
    model = ModelSpec(
        hidden=_list(m, "hidden", "model", int, [64, 64]),
        activation=_get(m, "activation", "model", str, "relu"),
    )
    if not model.hidden or any(h < 1 for h in model.hidden):
        raise ConfigError("model.hidden: need at least one positive width")
    if model.activation not in ("relu", "tanh"):
        raise ConfigError("model.activation: must be 'relu' or 'tanh'")

    cfg = ExperimentConfig(
        data=data,
        model=model,
        loss=parse_loss(obj.get("loss", {})),
        sweep=_parse_sweep(obj.get("sweep", {})),
        ablation=_get(obj, "ablation", "", bool, False),
        lambda_grid=_list(obj, "lambda_grid", "", float, DEFAULT_LAMBDA_GRID),
        seeds=_list(obj, "seeds", "", int, [0, 1, 2, 3, 4]),
        epochs=_get(obj, "epochs", "", int, 50),
        batch_size=_get(obj, "batch_size", "", int, 64),
        lr=_get(obj, "lr", "", float, 1e-3),
        measures=_list(obj, "measures", "", str, MEASURES),
        output_dir=obj.get("output_dir"),
        jobs=_get(obj, "jobs", "", int, 1),
    )
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if not cfg.seeds:
        raise ConfigError("seeds: must be non-empty")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        raise ConfigError("seeds: must be distinct")
    if not cfg.lambda_grid or any(not lam > 0 for lam in cfg.lambda_grid):
        raise ConfigError("lambda_grid: must be a non-empty list of positive values")
    if cfg.epochs < 1:
        raise ConfigError("epochs: must be >= 1")
    if cfg.batch_size < 1:
        raise ConfigError("batch_size: must be >= 1")
    if not cfg.lr > 0:
        raise ConfigError("lr: must be > 0")
    if cfg.jobs < 1:
        raise ConfigError("jobs: must be >= 1")
    for i, m in enumerate(cfg.measures):
        if m not in MEASURES:
            raise ConfigError(f"measures[{i}]: must be one of {list(MEASURES)}")
    if not cfg.measures:
        raise ConfigError("measures: must be non-empty")
    if cfg.ablation and cfg.sweep:
        raise ConfigError("ablation: cannot be combined with sweep axes")


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"<root>: invalid JSON ({exc})") from None
    return parse_config(obj)


def parse_range(text: str) -> list[float]:
    """``start:step:stop`` (inclusive) or a comma list; values rounded to 10 places."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"range {text!r} must be start:step:stop")
        start, step, stop = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ValueError(f"range {text!r} is empty")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + k * step, 10) for k in range(n)]
    return [float(p) for p in text.split(",") if p.strip()]


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class Cell:
    """One grid cell: a loss configuration whose lambda may be 'tuned'."""

    label: str
    loss: LossConfig
    lam: float | str

    def describe(self) -> dict:
        return {
            "cell": self.label,
            "form": self.loss.form,
            "evidence_fn": self.loss.evidence_fn.kind,
            "lambda": self.lam,
            "use_variance_term": self.loss.use_variance_term if self.loss.form == "edl_mse" else False,
            "kl_coefficient": self.loss.kl_coefficient,
            "kl_schedule": self.loss.kl_schedule,
        }


# Rows: (lambda fixed to 1, variance term on, KL term on).
ABLATION_ROWS = (
    (True, True, True),
    (False, True, True),
    (True, False, True),
    (True, True, False),
    (False, False, True),
    (False, True, False),
    (True, False, False),
    (False, False, False),
)


def _ablation_label(fixed, var, kl):
    mark = lambda b: "x" if b else "-"  # noqa: E731
    return f"lambda1={mark(fixed)} var={mark(var)} kl={mark(kl)}"


def expand_grid(cfg: ExperimentConfig) -> list[Cell]:
    base = cfg.loss
    if cfg.ablation:
        mu = base.kl_coefficient if base.kl_coefficient > 0 else 1.0
        cells = []
        for fixed, var, kl in ABLATION_ROWS:
            loss = base.with_(form="edl_mse", use_variance_term=var, kl_coefficient=mu if kl else 0.0)
            lam = 1.0 if fixed else TUNED
            if fixed:
                loss = loss.with_(lam=1.0)
            cells.append(Cell(_ablation_label(fixed, var, kl), loss, lam))
        return cells

    axes = [(a, cfg.sweep[a]) for a in SWEEP_AXES if a in cfg.sweep]
    if not axes:
        return [Cell("base", base, base.lam)]
    cells = []
    for combo in itertools.product(*(vals for _, vals in axes)):
        loss, lam, parts = base, base.lam, []
        for (axis, _), v in zip(axes, combo):
            if axis == "form":
                loss = loss.with_(form=v)
                parts.append(f"form={v}")
            elif axis == "evidence_fn":
                loss = loss.with_(evidence_fn=v)
                parts.append(f"evidence={v.kind}")
            elif axis == "lambda":
                lam = v
                if v != TUNED:
                    loss = loss.with_(lam=v)
                parts.append(f"lambda={v:g}" if v != TUNED else "lambda=tuned")
            elif axis == "use_variance_term":
                loss = loss.with_(use_variance_term=v)
                parts.append(f"var={int(v)}")
            elif axis == "mu":
                loss = loss.with_(kl_coefficient=v)
                parts.append(f"mu={v:g}")
        cells.append(Cell(" ".join(parts), loss, lam))
    return cells


# ---------------------------------------------------------------------------
# data and evaluation


@dataclass
class Splits:
    train: LabeledDataset
    val: LabeledDataset
    test: LabeledDataset
    ood_val: LabeledDataset
    ood_test: LabeledDataset
    noisy: list[LabeledDataset]
    standardizer: Standardizer


def make_raw_splits(spec: DataSpec, seed: int) -> dict[str, LabeledDataset]:
    """Unscaled blobs split train/val/test, two independent OOD rings, noisy test copies."""
    ds = gaussian_blobs(spec.num_classes, spec.n_per_class, spec.dim, spec.spread, [seed, 0], spec.radius)
    train_frac = 1.0 - spec.val_fraction - spec.test_fraction
    tr, va, te = stratified_split(ds, [train_frac, spec.val_fraction, spec.test_fraction], [seed, 1])
    out = {
        "train": tr,
        "val": va,
        "test": te,
        "ood_val": ood_ring(max(1, spec.n_ood // 4), spec.dim, spec.ood_radius, [seed, 3], spec.num_classes),
        "ood_test": ood_ring(spec.n_ood, spec.dim, spec.ood_radius, [seed, 2], spec.num_classes),
    }
    if spec.noise_sigmas:
        for sigma, nd in zip(spec.noise_sigmas, add_noise(te, spec.noise_sigmas, [seed, 4])):
            out[f"noisy_{sigma:g}"] = nd
    return out


def standardize(raw: dict[str, LabeledDataset], st: Standardizer | None = None) -> Splits:
    """Scale every split with ``st``, fitted on the training split when omitted."""
    st = st if st is not None else Standardizer.fit(raw["train"].features)
    noisy = [st.apply(v) for k, v in raw.items() if k.startswith("noisy_")]
    return Splits(
        st.apply(raw["train"]), st.apply(raw["val"]), st.apply(raw["test"]),
        st.apply(raw["ood_val"]), st.apply(raw["ood_test"]), noisy, st,
    )


def make_splits(spec: DataSpec, seed: int) -> Splits:
    """Generated splits standardised with training-set statistics."""
    return standardize(make_raw_splits(spec, seed))


def _probs_and_alpha(logits, loss: LossConfig):
    if loss.evidential:
        alpha = loss.evidence_fn(logits) + loss.lam
        return alpha / alpha.sum(axis=1, keepdims=True), alpha
    return softmax(logits), None


def _ood_confidence(logits, loss: LossConfig, measure: str):
    probs, alpha = _probs_and_alpha(logits, loss)
    if alpha is None:
        # softmax heads only have the max-probability score
        return probs.max(axis=1) if measure == "mp" else None
    return uncertainty_scores(alpha, measure, loss.lam)


def evaluate(net: Mlp, loss: LossConfig, test: LabeledDataset, ood: LabeledDataset,
             measures=MEASURES, noisy=()) -> dict:
    """Metrics for one trained network; confidences are higher for ID / correct."""
    li = net.forward(test.features)
    lo = net.forward(ood.features)
    probs, alpha = _probs_and_alpha(li, loss)
    y = test.labels
    correct = probs.argmax(axis=1) == y.argmax(axis=1)
    conf = probs.max(axis=1)
    out = {
        "accuracy": float(correct.mean()),
        "misclf_aupr": aupr(conf, correct) if correct.any() else float("nan"),
        "ece": ece(conf, correct),
        "brier": brier(probs, y),
    }
    labels = np.r_[np.ones(len(li)), np.zeros(len(lo))]
    for m in measures:
        ci, co = _ood_confidence(li, loss, m), _ood_confidence(lo, loss, m)
        if ci is None:
            out[f"ood_aupr_{m}"] = out[f"ood_auroc_{m}"] = float("nan")
            continue
        scores = np.r_[ci, co]
        out[f"ood_aupr_{m}"] = aupr(scores, labels)
        out[f"ood_auroc_{m}"] = auroc(scores, labels)
    if alpha is not None:
        e = loss.evidence_fn(li)
        target = float(np.mean((e * y).sum(axis=1)))
        nontarget = float(np.mean((e * (1.0 - y)).sum(axis=1)))
        out["target_evidence"] = target
        out["nontarget_evidence"] = nontarget
        out["target_ratio"] = target / (target + nontarget) if target + nontarget > 0 else float("nan")
        out["ood_evidence"] = float(np.mean(loss.evidence_fn(lo).sum(axis=1)))
    else:
        for k in ("target_evidence", "nontarget_evidence", "target_ratio", "ood_evidence"):
            out[k] = float("nan")
    primary = primary_measure(loss)
    for nd in noisy:
        sigma = nd.origin[0][len("noisy("):-1]
        ln = net.forward(nd.features)
        pn, _ = _probs_and_alpha(ln, loss)
        out[f"noisy_acc_{sigma}"] = float(np.mean(pn.argmax(axis=1) == nd.labels.argmax(axis=1)))
        cn = _ood_confidence(ln, loss, primary)
        out[f"noisy_aupr_{sigma}"] = aupr(np.r_[_ood_confidence(li, loss, primary), cn],
                                          np.r_[np.ones(len(li)), np.zeros(len(ln))])
    return out


def build_net(cfg: ExperimentConfig, seed: int) -> Mlp:
    widths = (cfg.data.dim, *cfg.model.hidden, cfg.data.num_classes)
    return Mlp(MlpSpec(widths, cfg.model.activation, seed))


def select_lambda(cfg: ExperimentConfig, loss: LossConfig, splits: Splits, seed: int):
    """Train one model per lambda in the grid; keep the best validation OOD AUROC (UM).

    Ties go to the earlier grid value.
    """
    best = None
    for lam in cfg.lambda_grid:
        cand = loss.with_(lam=lam)
        net, epoch_log = train(build_net(cfg, seed), splits.train.features, splits.train.labels,
                               cand, cfg.epochs, cfg.batch_size, seed, cfg.lr)
        ci = _ood_confidence(net.forward(splits.val.features), cand, "um")
        co = _ood_confidence(net.forward(splits.ood_val.features), cand, "um")
        score = auroc(np.r_[ci, co], np.r_[np.ones(len(ci)), np.zeros(len(co))])
        if best is None or score > best[0]:
            best = (score, lam, net, epoch_log)
    return best


def run_cell_seed(cfg: ExperimentConfig, cell: Cell, seed: int) -> tuple[dict, list[dict]]:
    splits = make_splits(cfg.data, seed)
    loss = cell.loss
    val_auroc = float("nan")
    if cell.lam == TUNED and loss.evidential:
        val_auroc, lam, net, epoch_log = select_lambda(cfg, loss, splits, seed)
        loss = loss.with_(lam=lam)
    else:
        net, epoch_log = train(build_net(cfg, seed), splits.train.features, splits.train.labels,
                               loss, cfg.epochs, cfg.batch_size, seed, cfg.lr)
    metrics = evaluate(net, loss, splits.test, splits.ood_test, cfg.measures, splits.noisy)
    row = {**cell.describe(), "seed": seed, "lambda_used": loss.lam, "val_ood_auroc": val_auroc, **metrics}
    epochs = [{"cell": cell.label, "seed": seed, **e} for e in epoch_log]
    return row, epochs, ood_scores(net, loss, splits.test, splits.ood_test, primary_measure(loss))


def primary_measure(loss: LossConfig) -> str:
    return "um" if loss.evidential else "mp"


def ood_scores(net: Mlp, loss: LossConfig, test: LabeledDataset, ood: LabeledDataset, measure: str):
    """(confidences, labels) with ID rows labelled 1 and OOD rows 0."""
    ci = _ood_confidence(net.forward(test.features), loss, measure)
    co = _ood_confidence(net.forward(ood.features), loss, measure)
    if ci is None:
        raise ValueError(f"measure {measure!r} is not defined for form {loss.form!r}")
    return np.r_[ci, co], np.r_[np.ones(len(ci)), np.zeros(len(co))]


def _task(args):
    return run_cell_seed(*args)


@dataclass
class ResultTable:
    per_seed: list[dict]
    aggregated: list[dict]
    epoch_log: list[dict]
    curves: dict = field(default_factory=dict)

    def row(self, cell_label: str) -> dict:
        for r in self.aggregated:
            if r["cell"] == cell_label:
                return r
        raise KeyError(cell_label)


_KEY_COLUMNS = ("cell", "form", "evidence_fn", "lambda", "use_variance_term", "kl_coefficient", "kl_schedule")


def aggregate(per_seed: list[dict]) -> list[dict]:
    """Mean and sample SD (0 for a single seed) of every numeric column per cell."""
    cells: dict[str, list[dict]] = {}
    for r in per_seed:
        cells.setdefault(r["cell"], []).append(r)
    out = []
    for label, rows in cells.items():
        agg = {k: rows[0][k] for k in _KEY_COLUMNS}
        agg["n_seeds"] = len(rows)
        for k in rows[0]:
            if k in _KEY_COLUMNS or k == "seed":
                continue
            vals = np.array([r[k] for r in rows], dtype=np.float64)
            finite = vals[~np.isnan(vals)]
            agg[f"{k}_mean"] = float(finite.mean()) if finite.size else float("nan")
            agg[f"{k}_sd"] = float(finite.std(ddof=1)) if finite.size > 1 else (0.0 if finite.size else float("nan"))
        out.append(agg)
    return out


def run_experiment(cfg: ExperimentConfig) -> ResultTable:
    validate(cfg)
    cells = expand_grid(cfg)
    tasks = [(cfg, cell, seed) for cell in cells for seed in cfg.seeds]
    log.info("running %d cells x %d seeds", len(cells), len(cfg.seeds))
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    per_seed = [r for r, _, _ in results]
    epoch_log = [e for _, ep, _ in results for e in ep]
    # curves are kept for the first seed of every cell
    curves = {i: results[i * len(cfg.seeds)][2] for i in range(len(cells))}
    return ResultTable(per_seed, aggregate(per_seed), epoch_log, curves)


# ---------------------------------------------------------------------------
# output


def fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.10g}"
    return str(v)


def write_rows(path, rows: list[dict]) -> None:
    columns: list[str] = []
    for r in rows:
        for k in r:
            if k not in columns:
                columns.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["format_version", *columns])
        for r in rows:
            w.writerow([FORMAT_VERSION, *(fmt_value(r.get(k, "")) for k in columns)])


def git_hash() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


class RunDirectory:
    """Output directory guarded by a ``.partial`` marker until ``finish``."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        (self.path / PARTIAL_MARKER).write_text("incomplete run\n")

    def file(self, name: str) -> Path:
        return self.path / name

    def write_json(self, name: str, obj) -> None:
        self.file(name).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")

    def finish(self, manifest: dict) -> None:
        files = sorted(p.name for p in self.path.iterdir() if p.name not in (PARTIAL_MARKER, "manifest.json"))
        self.write_json("manifest.json", {
            **manifest,
            "format_version": FORMAT_VERSION,
            "package_version": __version__,
            "git_hash": git_hash(),
            "files": files,
        })
        (self.path / PARTIAL_MARKER).unlink()


def write_result_table(run: RunDirectory, cfg: ExperimentConfig, table: ResultTable) -> None:
    run.write_json("config.json", cfg.to_json())
    write_rows(run.file("results.csv"), table.aggregated)
    write_rows(run.file("per_seed.csv"), table.per_seed)
    write_rows(run.file("epoch_log.csv"), table.epoch_log)
    for i, (scores, labels) in sorted(table.curves.items()):
        write_roc_csv(run.file(f"curve_roc_cell{i:02d}.csv"), scores, labels)
        write_pr_csv(run.file(f"curve_pr_cell{i:02d}.csv"), scores, labels)


def config_with(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    new = copy.deepcopy(cfg)
    for k, v in changes.items():
        setattr(new, k, v)
    validate(new)
    return new
