"""Small numpy MLP with manual backprop and Adam, plus the training loop."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .losses import LossConfig, batch_loss_and_grad

__all__ = [
    "CHECKPOINT_VERSION",
    "MlpSpec",
    "Mlp",
    "AdamState",
    "adam_step",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1
_MAGIC = b"EDLKIT-MLP\n"


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    hidden_activation: str = "relu"
    init_seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 3:
            raise ValueError("need input, at least one hidden layer and an output width")
        if any(w < 1 for w in widths):
            raise ValueError("layer widths must be positive")
        if self.hidden_activation not in ("relu", "tanh"):
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        object.__setattr__(self, "layer_widths", widths)

    @property
    def num_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]


def _act(name, z):
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(name, z, a):
    return (z > 0.0).astype(z.dtype) if name == "relu" else 1.0 - a * a


class Mlp:
    """Fully connected network; parameters stored as [W0, b0, W1, b1, ...].

    Weights are (fan_in, fan_out) and initialised uniformly in
    +-sqrt(6 / (fan_in + fan_out)); biases start at zero.
    """

    def __init__(self, spec: MlpSpec, params: list[np.ndarray] | None = None):
        self.spec = spec
        if params is None:
            rng = np.random.default_rng(spec.init_seed)
            params = []
            for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
                params.append(np.zeros(fan_out))
        else:
            params = [np.array(p, dtype=np.float64) for p in params]
            if [p.shape for p in params] != self.param_shapes():
                raise ValueError("parameter shapes do not match the layer widths")
        self.params = params
        self._cache = None

    def param_shapes(self) -> list[tuple[int, ...]]:
        shapes = []
        for fan_in, fan_out in zip(self.spec.layer_widths[:-1], self.spec.layer_widths[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        return shapes

    def copy(self) -> Mlp:
        return Mlp(self.spec, [p.copy() for p in self.params])

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ValueError(f"expected input of shape (n, {self.spec.input_dim}), got {x.shape}")
        acts, pre = [x], []
        h = x
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            pre.append(z)
            h = z if i == n_layers - 1 else _act(self.spec.hidden_activation, z)
            acts.append(h)
        self._cache = (acts, pre)
        return h

    __call__ = forward

    def backward(self, grad_logits) -> list[np.ndarray]:
        """Gradients of sum_i <grad_logits[i], logits[i]> w.r.t. each parameter.

        Uses activations cached by the last ``forward`` call.  Pass the
        gradient of a batch-mean loss to get batch-mean parameter gradients.
        """
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        acts, pre = self._cache
        delta = np.asarray(grad_logits, dtype=np.float64)
        if delta.shape != acts[-1].shape:
            raise ValueError("grad_logits shape does not match the cached logits")
        n_layers = len(self.params) // 2
        grads: list[np.ndarray] = [None] * len(self.params)
        for i in range(n_layers - 1, -1, -1):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.params[2 * i].T) * _act_grad(
                    self.spec.hidden_activation, pre[i - 1], acts[i]
                )
        return grads


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """One bias-corrected Adam update, in place; returns ``params``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def _evidence_stats(net: Mlp, x, y, cfg: LossConfig):
    logits = net.forward(x)
    acc = float(np.mean(logits.argmax(axis=1) == y.argmax(axis=1)))
    if not cfg.evidential:
        return acc, float("nan"), float("nan")
    e = cfg.evidence_fn(logits)
    target = float(np.mean((e * y).sum(axis=1)))
    nontarget = float(np.mean((e * (1.0 - y)).sum(axis=1)))
    return acc, target, nontarget


def train(
    net: Mlp,
    x,
    y,
    loss_cfg: LossConfig,
    epochs: int,
    batch_size: int = 64,
    seed: int = 0,
    lr: float = 1e-3,
):
    """Mini-batch Adam on ``loss_cfg``; returns (net, per-epoch log).

    Epochs are indexed from 0, which is what the annealed KL schedule sees.
    Shuffling uses its own generator seeded by ``seed``; the last partial
    batch is kept.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    if y.shape != (n, net.spec.num_classes):
        raise ValueError("labels must be one-hot of shape (n, C)")
    rng = np.random.default_rng(seed)
    opt = AdamState(lr=lr)
    log = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            logits = net.forward(x[idx])
            loss, grad = batch_loss_and_grad(logits, y[idx], epoch, loss_cfg)
            adam_step(opt, net.params, net.backward(grad))
            total += loss * idx.size
            seen += idx.size
        acc, target, nontarget = _evidence_stats(net, x, y, loss_cfg)
        log.append(
            {
                "epoch": epoch,
                "loss": total / seen,
                "accuracy": acc,
                "mean_target_evidence": target,
                "mean_nontarget_evidence": nontarget,
            }
        )
    return net, log


def save_checkpoint(net: Mlp, path, extra: dict | None = None) -> None:
    """Write a JSON header line followed by raw little-endian float64 params."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "layer_widths": list(net.spec.layer_widths),
        "hidden_activation": net.spec.hidden_activation,
        "init_seed": net.spec.init_seed,
        "shapes": [list(p.shape) for p in net.params],
        "dtype": "<f8",
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in net.params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[Mlp, dict]:
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ValueError(f"{path}: not an edlkit checkpoint")
    off = len(_MAGIC)
    if len(data) < off + 8:
        raise ValueError(f"{path}: truncated checkpoint header")
    (hlen,) = struct.unpack_from("<Q", data, off)
    off += 8
    header = json.loads(data[off : off + hlen])
    off += hlen
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
    params = []
    for shape in header["shapes"]:
        count = int(np.prod(shape))
        params.append(np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy())
        off += 8 * count
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes after parameters")
    spec = MlpSpec(tuple(header["layer_widths"]), header["hidden_activation"], header["init_seed"])
    return Mlp(spec, params), header
