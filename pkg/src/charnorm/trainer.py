"""Adam with global-norm clipping, and the epoch loop around it."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Batch
from .errors import ConfigError, DataError, NumericError
from .model import Seq2Seq, source_features
from .numerics import Tape, Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 10.0
    epochs: int = 30
    batch_size: int = 128
    seed: int = 42

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must be in [0, 1)")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be > 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def clip_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Scale all gradients by ``max_norm / norm`` when their joint L2 norm exceeds ``max_norm``.

    Returns the (possibly rescaled) gradients and the norm before clipping.
    """
    norm = global_norm(grads)
    if norm > max_norm:
        factor = max_norm / norm
        return [g * np.asarray(factor, dtype=g.dtype) for g in grads], norm
    return list(grads), norm


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState, config: TrainConfig) -> None:
    """Bias-corrected Adam update, in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state differ in length")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.name} {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data = (p.data - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)).astype(p.data.dtype)


@dataclass
class TrainLog:
    rows: list[tuple[int, float, float]] = field(default_factory=list)

    def format(self) -> str:
        return "".join(f"{e}\t{tr:.6f}\t{dv:.6f}\n" for e, tr, dv in self.rows)


class Trainer:
    """Runs forward, backward, clipping and Adam over shuffled batches.

    Word features are computed once per batch and reused across epochs.
    """

    def __init__(self, model: Seq2Seq, config: TrainConfig, provider=None):
        self.model = model
        self.config = config
        self.provider = provider
        self.params = model.params.trainable()
        self.state = AdamState.for_params(self.params)
        self.rng = np.random.default_rng(config.seed)
        self._features: dict[int, np.ndarray | None] = {}

    def features(self, batch: Batch):
        key = id(batch)
        if key not in self._features:
            self._features[key] = source_features(
                self.provider, batch.source_texts, batch.source.shape[1], self.model.dtype
            )
        return self._features[key]

    def step(self, batch: Batch) -> float:
        """One optimizer update on ``batch``; returns the loss before the update."""
        self.model.params.zero_grad()
        with Tape() as tape:
            loss = self.model.forward_train(batch, self.rng, self.features(batch), training=True)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value}")
        tape.backward(loss)
        grads, _ = clip_global_norm([p.grad for p in self.params], self.config.clip_norm)
        adam_step(self.params, grads, self.state, self.config)
        return value

    def evaluate(self, batches: Sequence[Batch]) -> float:
        """Token-weighted teacher-forced loss without dropout."""
        if not batches:
            return float("nan")
        total, count = 0.0, 0
        for b in batches:
            loss = self.model.forward_train(b, None, self.features(b), training=False, sampling_p=0.0)
            n = int((b.target[:, 1:] != 0).sum())
            total += loss.item() * n
            count += n
        return total / count

    def train(self, batches: Sequence[Batch], dev_batches: Sequence[Batch] = (), epochs: int | None = None, callback=None) -> TrainLog:
        epochs = self.config.epochs if epochs is None else epochs
        if not batches:
            raise DataError("no training batches")
        log_ = TrainLog()
        order_rng = np.random.default_rng(self.config.seed + 1)
        for epoch in range(1, epochs + 1):
            losses, weights = [], []
            for i in order_rng.permutation(len(batches)):
                try:
                    losses.append(self.step(batches[i]))
                except NumericError as exc:
                    raise NumericError(f"epoch {epoch}, batch {i}: {exc}") from None
                weights.append(len(batches[i]))
            train_loss = float(np.average(losses, weights=weights))
            dev_loss = self.evaluate(dev_batches)
            log_.rows.append((epoch, train_loss, dev_loss))
            log.info("epoch %d train %.4f dev %.4f", epoch, train_loss, dev_loss)
            if callback is not None and callback(epoch, train_loss, dev_loss) is False:
                break
        return log_


def train(model: Seq2Seq, batches, dev_batches=(), config: TrainConfig | None = None, provider=None) -> TrainLog:
    return Trainer(model, config or TrainConfig(), provider).train(batches, dev_batches)
