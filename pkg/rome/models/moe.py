"""
Mixture-of-experts regression trained on a worst-group-aware objective.

A gating MLP maps S (variant "s") or [A; S] (variant "as") to softmax weights
over G expert MLPs; experts see only A unless ``expert_uses_s`` is set. Each
minibatch loss is

    L_total = (1 - alpha) * L_avg + alpha * max_j L_j,
    L_j     = sum_{i: w_ij > thr} w_ij * r_i^2 / |{i: w_ij > thr}|

with r_i the residual of the mixture prediction. Gradients are computed by
hand: the membership mask is treated as constant and the max is
differentiated through the single arg-max group (lowest index on ties).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy.special import softmax

from ..errors import ConfigError, TrainingFailure, check_shape
from .core import Dataset

log = logging.getLogger(__name__)

VARIANTS = ("s", "as")
OPTIMIZERS = ("adam", "sgd")
RESIDUALS = ("mixture", "expert")


@dataclass(frozen=True, slots=True)
class MoeConfig:
    g: int = 4
    variant: str = "s"
    alpha: float = 0.05
    lr: float = 1e-3
    batch: int = 256
    epochs: int = 50
    hidden_expert: int = 64
    hidden_gate: int = 64
    mask_threshold: float = 0.1
    seed: int = 0
    expert_uses_s: bool = False
    optimizer: str = "adam"
    group_residual: str = "mixture"

    def __post_init__(self):
        if self.g < 1:
            raise ConfigError("moe.g must be at least 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"moe.variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("moe.alpha must lie in [0, 1]")
        if self.batch < 1 or self.epochs < 0:
            raise ConfigError("moe.batch must be >= 1 and moe.epochs >= 0")
        if not 0.0 <= self.mask_threshold < 1.0:
            raise ConfigError("moe.mask_threshold must lie in [0, 1)")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"moe.optimizer must be one of {OPTIMIZERS}")
        if self.group_residual not in RESIDUALS:
            raise ConfigError(f"moe.group_residual must be one of {RESIDUALS}")
        if self.hidden_expert < 0 or self.hidden_gate < 0:
            raise ConfigError("hidden sizes must be non-negative")

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


# --------------------------------------------------------------------------- #
# networks
# --------------------------------------------------------------------------- #
@dataclass(slots=True)
class MlpParams:
    """Weight/bias pairs; rectifier between layers, identity on the output."""

    layers: list[tuple[np.ndarray, np.ndarray]]

    @classmethod
    def init(cls, sizes: list[int], rng: np.random.Generator) -> "MlpParams":
        layers = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weight = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            bias = rng.uniform(-bound, bound, size=fan_out)
            layers.append((weight, bias))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Output and the per-layer inputs/pre-activations needed by backward."""
        check_shape(x.shape[1] == self.in_dim, f"network expects {self.in_dim} inputs, got {x.shape[1]}")
        cache = []
        h = x
        last = len(self.layers) - 1
        for k, (weight, bias) in enumerate(self.layers):
            z = h @ weight + bias
            cache.append((h, z))
            h = z if k == last else np.maximum(z, 0.0)
        return h, cache

    def backward(self, cache: list, grad_out: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        grads = [None] * len(self.layers)
        delta = grad_out
        for k in range(len(self.layers) - 1, -1, -1):
            h, _ = cache[k]
            weight, _ = self.layers[k]
            grads[k] = (h.T @ delta, delta.sum(axis=0))
            if k > 0:
                delta = (delta @ weight.T) * (cache[k - 1][1] > 0)
        return grads

    def arrays(self) -> list[np.ndarray]:
        return [arr for pair in self.layers for arr in pair]

    def copy(self) -> "MlpParams":
        return MlpParams([(w.copy(), b.copy()) for w, b in self.layers])

    def to_dict(self) -> list[dict]:
        return [{"weight": w.tolist(), "bias": b.tolist()} for w, b in self.layers]

    @classmethod
    def from_dict(cls, raw: list[dict]) -> "MlpParams":
        return cls([(np.array(layer["weight"], dtype=float), np.array(layer["bias"], dtype=float)) for layer in raw])


def _sizes(in_dim: int, hidden: int, out_dim: int) -> list[int]:
    return [in_dim, hidden, out_dim] if hidden > 0 else [in_dim, out_dim]


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent (shuffle, expert init, gate init) generators for one seed."""
    shuffle, expert, gate = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(shuffle), np.random.default_rng(expert), np.random.default_rng(gate)


@dataclass(slots=True)
class MoeModel:
    gate: MlpParams
    experts: list[MlpParams]
    cfg: MoeConfig
    p_a: int
    p_s: int

    @classmethod
    def init(cls, cfg: MoeConfig, p_a: int, p_s: int) -> "MoeModel":
        _, expert_rng, gate_rng = _streams(cfg.seed)
        expert_in = p_a + p_s if cfg.expert_uses_s else p_a
        gate_in = p_s if cfg.variant == "s" else p_a + p_s
        experts = [MlpParams.init(_sizes(expert_in, cfg.hidden_expert, 1), expert_rng) for _ in range(cfg.g)]
        gate = MlpParams.init(_sizes(gate_in, cfg.hidden_gate, cfg.g), gate_rng)
        return cls(gate, experts, cfg, p_a, p_s)

    def networks(self) -> list[MlpParams]:
        return [self.gate, *self.experts]

    def copy(self) -> "MoeModel":
        return MoeModel(self.gate.copy(), [e.copy() for e in self.experts], self.cfg, self.p_a, self.p_s)

    def to_dict(self) -> dict:
        return {
            "config": self.cfg.to_dict(),
            "p_a": self.p_a,
            "p_s": self.p_s,
            "gate": self.gate.to_dict(),
            "experts": [e.to_dict() for e in self.experts],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "MoeModel":
        return cls(
            MlpParams.from_dict(raw["gate"]),
            [MlpParams.from_dict(e) for e in raw["experts"]],
            MoeConfig(**raw["config"]),
            int(raw["p_a"]),
            int(raw["p_s"]),
        )


@dataclass(frozen=True, slots=True)
class Batch:
    a: np.ndarray
    s: np.ndarray
    y: np.ndarray

    @classmethod
    def of(cls, data: Dataset, rows: np.ndarray | None = None) -> "Batch":
        if rows is None:
            return cls(data.a, data.s, data.y)
        return cls(data.a[rows], data.s[rows], data.y[rows])


@dataclass(frozen=True, slots=True)
class BatchLoss:
    l_avg: float
    l_worst: float
    l_per_group: np.ndarray
    l_total: float
    worst_index: int


@dataclass(slots=True)
class _Forward:
    yhat: np.ndarray
    gate_weights: np.ndarray
    expert_out: np.ndarray
    gate_cache: list
    expert_caches: list


def _inputs(model: MoeModel, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    check_shape(batch.a.shape[1] == model.p_a, f"model expects {model.p_a} A columns, got {batch.a.shape[1]}")
    check_shape(batch.s.shape[1] == model.p_s, f"model expects {model.p_s} S columns, got {batch.s.shape[1]}")
    both = np.hstack([batch.a, batch.s])
    gate_in = batch.s if model.cfg.variant == "s" else both
    expert_in = both if model.cfg.expert_uses_s else batch.a
    return gate_in, expert_in


def _forward(model: MoeModel, batch: Batch) -> _Forward:
    gate_in, expert_in = _inputs(model, batch)
    logits, gate_cache = model.gate.forward(gate_in)
    weights = softmax(logits, axis=1)
    outputs, caches = [], []
    for expert in model.experts:
        out, cache = expert.forward(expert_in)
        outputs.append(out[:, 0])
        caches.append(cache)
    expert_out = np.column_stack(outputs)
    yhat = (weights * expert_out).sum(axis=1)
    return _Forward(yhat, weights, expert_out, gate_cache, caches)


def forward(model: MoeModel, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    """(predictions, gate weights) for a batch."""
    result = _forward(model, batch)
    return result.yhat, result.gate_weights


def predict(model: MoeModel, data: Dataset | Batch) -> np.ndarray:
    batch = data if isinstance(data, Batch) else Batch.of(data)
    return _forward(model, batch).yhat


def _group_terms(
    yhat: np.ndarray, gate_weights: np.ndarray, y: np.ndarray, cfg: MoeConfig, expert_out: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(mask, member counts, squared residual matrix used by L_j)."""
    mask = gate_weights > cfg.mask_threshold
    counts = mask.sum(axis=0)
    if cfg.group_residual == "expert" and expert_out is not None:
        sq = (y[:, None] - expert_out) ** 2
    else:
        sq = np.broadcast_to(((y - yhat) ** 2)[:, None], gate_weights.shape)
    return mask, counts, sq


def group_losses(
    yhat: np.ndarray,
    gate_weights: np.ndarray,
    y: np.ndarray,
    cfg: MoeConfig,
    expert_out: np.ndarray | None = None,
) -> BatchLoss:
    yhat = np.asarray(yhat, dtype=float)
    y = np.asarray(y, dtype=float)
    check_shape(yhat.shape == y.shape and gate_weights.shape[0] == y.shape[0], "batch arrays must share length")
    mask, counts, sq = _group_terms(yhat, gate_weights, y, cfg, expert_out)
    per_group = np.zeros(gate_weights.shape[1])
    nonempty = counts > 0
    per_group[nonempty] = (mask * gate_weights * sq).sum(axis=0)[nonempty] / counts[nonempty]
    l_avg = float(np.mean((y - yhat) ** 2))
    if nonempty.any():
        worst = int(np.argmax(np.where(nonempty, per_group, -np.inf)))
        l_worst = float(per_group[worst])
    else:
        worst, l_worst = 0, 0.0
    l_total = (1.0 - cfg.alpha) * l_avg + cfg.alpha * l_worst
    return BatchLoss(l_avg, l_worst, per_group, l_total, worst)


def _backward(model: MoeModel, batch: Batch, fwd: _Forward, loss: BatchLoss) -> list[list[tuple[np.ndarray, np.ndarray]]]:
    cfg = model.cfg
    size = batch.y.shape[0]
    resid = batch.y - fwd.yhat
    grad_yhat = (1.0 - cfg.alpha) * (-2.0 * resid / size)
    grad_w = np.zeros_like(fwd.gate_weights)
    grad_f = np.zeros_like(fwd.expert_out)

    if cfg.alpha > 0.0:
        k = loss.worst_index
        mask, counts, sq = _group_terms(fwd.yhat, fwd.gate_weights, batch.y, cfg, fwd.expert_out)
        if counts[k] > 0:
            coeff = cfg.alpha * mask[:, k] / counts[k]
            grad_w[:, k] += coeff * sq[:, k]
            if cfg.group_residual == "expert":
                grad_f[:, k] += coeff * fwd.gate_weights[:, k] * (-2.0) * (batch.y - fwd.expert_out[:, k])
            else:
                grad_yhat = grad_yhat + coeff * fwd.gate_weights[:, k] * (-2.0) * resid

    grad_w += grad_yhat[:, None] * fwd.expert_out
    grad_f += grad_yhat[:, None] * fwd.gate_weights
    w = fwd.gate_weights
    grad_logits = w * (grad_w - (w * grad_w).sum(axis=1, keepdims=True))

    grads = [model.gate.backward(fwd.gate_cache, grad_logits)]
    for j, expert in enumerate(model.experts):
        grads.append(expert.backward(fwd.expert_caches[j], grad_f[:, j : j + 1]))
    return grads


def backward(model: MoeModel, batch: Batch) -> list[list[tuple[np.ndarray, np.ndarray]]]:
    """Gradients of L_total, one layer list per network: gate first, then experts."""
    fwd = _forward(model, batch)
    loss = group_losses(fwd.yhat, fwd.gate_weights, batch.y, model.cfg, fwd.expert_out)
    return _backward(model, batch, fwd, loss)


# --------------------------------------------------------------------------- #
# optimisation
# --------------------------------------------------------------------------- #
class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[int, np.ndarray] = {}
        self.v: dict[int, np.ndarray] = {}
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, (param, grad) in enumerate(zip(params, grads)):
            if k not in self.m:
                self.m[k] = np.zeros_like(param)
                self.v[k] = np.zeros_like(param)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad * grad
            param -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        for param, grad in zip(params, grads):
            param -= self.lr * grad


def _optimizer(cfg: MoeConfig) -> Adam | Sgd:
    return Adam(cfg.lr) if cfg.optimizer == "adam" else Sgd(cfg.lr)


def _batches(n: int, size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield order[start : start + size]


@dataclass(slots=True)
class TrainResult:
    model: MoeModel
    trace: list[dict] = field(default_factory=list)


def train(data: Dataset, cfg: MoeConfig) -> TrainResult:
    """Minibatch training; deterministic given ``cfg.seed``."""
    model = MoeModel.init(cfg, data.spec.p_a, data.spec.p_s)
    shuffle_rng, _, _ = _streams(cfg.seed)
    optimizer = _optimizer(cfg)
    params = [arr for net in model.networks() for arr in net.arrays()]
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        totals = np.zeros(3)
        batches = 0
        for b, rows in enumerate(_batches(data.n, cfg.batch, shuffle_rng)):
            batch = Batch.of(data, rows)
            fwd = _forward(model, batch)
            loss = group_losses(fwd.yhat, fwd.gate_weights, batch.y, cfg, fwd.expert_out)
            if not np.isfinite(loss.l_total):
                raise TrainingFailure("loss is not finite", epoch=epoch, batch=b)
            grads = _backward(model, batch, fwd, loss)
            optimizer.step(params, [arr for net in grads for pair in net for arr in pair])
            totals += (loss.l_total, loss.l_avg, loss.l_worst)
            batches += 1
        mean = totals / max(batches, 1)
        trace.append({"epoch": epoch, "l_total": mean[0], "l_avg": mean[1], "l_worst": mean[2]})
        log.debug("epoch %d: total=%.5f avg=%.5f worst=%.5f", epoch, *mean)
    return TrainResult(model, trace)


def train_mlp(data: Dataset, cfg: MoeConfig) -> tuple[MlpParams, list[dict]]:
    """Plain single-network MSE regression on A (or [A; S] with ``expert_uses_s``).

    Uses the same initialization and shuffling streams as ``train`` so that a
    one-expert, alpha = 0 mixture follows the identical trajectory.
    """
    shuffle_rng, expert_rng, _ = _streams(cfg.seed)
    in_dim = data.spec.p_a + data.spec.p_s if cfg.expert_uses_s else data.spec.p_a
    net = MlpParams.init(_sizes(in_dim, cfg.hidden_expert, 1), expert_rng)
    optimizer = _optimizer(cfg)
    params = net.arrays()
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        total, batches = 0.0, 0
        for b, rows in enumerate(_batches(data.n, cfg.batch, shuffle_rng)):
            x = np.hstack([data.a[rows], data.s[rows]]) if cfg.expert_uses_s else data.a[rows]
            out, cache = net.forward(x)
            resid = data.y[rows] - out[:, 0]
            loss = float(np.mean(resid**2))
            if not np.isfinite(loss):
                raise TrainingFailure("loss is not finite", epoch=epoch, batch=b)
            grads = net.backward(cache, (-2.0 * resid / rows.size)[:, None])
            optimizer.step(params, [arr for pair in grads for arr in pair])
            total += loss
            batches += 1
        trace.append({"epoch": epoch, "l_total": total / max(batches, 1), "l_avg": total / max(batches, 1), "l_worst": 0.0})
    return net, trace
