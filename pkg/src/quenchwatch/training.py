"""Corpus split, weighted BCE loss and the per-shot optimization loop."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DivergenceError
from .nn_core import (
    DEFAULT_HIDDEN,
    Gradients,
    ModelParams,
    bptt,
    forward_sequence,
    init_params,
)
from .preprocess import NormStats
from .signal_model import AlignedShot

log = logging.getLogger(__name__)

DEFAULT_TRAIN_FRACTION = 83 / 119


class Optimizer(enum.Enum):
    SGDMomentum = "sgd"
    AdaptiveMoments = "adam"

    @classmethod
    def parse(cls, value) -> "Optimizer":
        if isinstance(value, cls):
            return value
        for m in cls:
            if value in (m.value, m.name):
                return m
        raise ValueError(f"unknown optimizer {value!r} (use adam or sgd)")


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    optimizer: Optimizer = Optimizer.AdaptiveMoments
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    grad_clip_norm: float = 5.0
    pos_weight: float = 1.0
    seed: int = 7
    early_stop_patience: int = 20
    hidden_dim: int = DEFAULT_HIDDEN
    val_fraction: float = 0.1

    def __post_init__(self):
        self.optimizer = Optimizer.parse(self.optimizer)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0 or self.grad_clip_norm <= 0 or self.pos_weight <= 0:
            raise ValueError("learning_rate must be >= 0; grad_clip_norm and pos_weight > 0")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"] = self.optimizer.value
        return d


@dataclass(frozen=True)
class Split:
    train: tuple[int, ...]
    test: tuple[int, ...]


def split_corpus(shot_ids: Sequence[int], train_fraction: float = DEFAULT_TRAIN_FRACTION,
                 seed: int = 7) -> Split:
    ids = list(shot_ids)
    if len(ids) < 2:
        raise ValueError("need at least two shots to split")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(math.floor(train_fraction * len(ids) + 0.5))
    n_train = min(max(n_train, 1), len(ids) - 1)
    shuffled = [ids[i] for i in order]
    return Split(tuple(shuffled[:n_train]), tuple(shuffled[n_train:]))


def shot_loss(y, label, pos_weight: float = 1.0) -> float:
    """Mean over steps of -[w l ln y + (1 - l) ln(1 - y)]."""
    y = np.asarray(y, dtype=np.float64)
    lab = np.asarray(label, dtype=np.float64)
    if y.shape != lab.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {lab.shape}")
    if len(y) == 0:
        return 0.0
    return float(np.mean(-(pos_weight * lab * np.log(y) + (1.0 - lab) * np.log1p(-y))))


def shot_loss_from_logits(logits, label, pos_weight: float = 1.0) -> float:
    """Same loss evaluated from pre-sigmoid outputs, finite even when y saturates."""
    z = np.asarray(logits, dtype=np.float64)
    lab = np.asarray(label, dtype=np.float64)
    if len(z) == 0:
        return 0.0
    # a nan logit yields a nan loss, which train() reports as divergence
    with np.errstate(invalid="ignore"):
        return float(np.mean(pos_weight * lab * np.logaddexp(0.0, -z)
                             + (1.0 - lab) * np.logaddexp(0.0, z)))


def pointwise_hits(y, label, threshold: float = 0.5) -> int:
    return int(np.sum((np.asarray(y) > threshold) == (np.asarray(label) == 1)))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    max_clipped_norm: float = 0.0

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch,train_loss,val_loss,train_acc,val_acc\n")
            for r in self.records:
                fh.write(f"{r.epoch},{r.train_loss!r},{r.val_loss!r},"
                         f"{r.train_acc!r},{r.val_acc!r}\n")
        return path


class _Adam:
    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.t = 0

    def update(self, params: ModelParams, grads: Gradients) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name, g in grads.arrays().items():
            m, v = self.m[name], self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            delta = c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            _apply(params, name, delta)


class _Momentum:
    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.cfg = cfg
        self.vel = {k: np.zeros_like(v) for k, v in params.arrays().items()}

    def update(self, params: ModelParams, grads: Gradients) -> None:
        c = self.cfg
        for name, g in grads.arrays().items():
            vel = self.vel[name]
            vel *= c.momentum
            vel += g
            _apply(params, name, c.learning_rate * vel)


def _apply(params: ModelParams, name: str, delta: np.ndarray) -> None:
    if name == "b_y":
        params.b_y -= float(delta[0])
    else:
        getattr(params, name)[...] -= delta


def _evaluate(params: ModelParams, shots, pos_weight: float) -> tuple[float, float]:
    if not shots:
        return float("nan"), float("nan")
    losses, hits, steps = [], 0, 0
    for s in shots:
        y, cache = forward_sequence(params, s)
        losses.append(shot_loss_from_logits(cache.logits, s.label, pos_weight))
        hits += pointwise_hits(y, s.label)
        steps += len(y)
    return float(np.mean(losses)), hits / max(steps, 1)


def train(train_shots: Sequence[AlignedShot], config: Optional[TrainConfig] = None,
          norm_stats: Optional[NormStats] = None,
          val_shots: Optional[Sequence[AlignedShot]] = None,
          init: Optional[ModelParams] = None) -> tuple[ModelParams, TrainingLog]:
    """Fit an LSTM to normalized, labeled shots with per-shot updates.

    Without ``val_shots`` the last ``val_fraction`` of ``train_shots`` is held
    out for early stopping; with a single shot the training loss is used.
    Returns the parameters of the epoch with the lowest validation loss.
    """
    config = config or TrainConfig()
    shots = list(train_shots)
    if not shots:
        raise ValueError("training split is empty")
    for s in shots:
        if s.label is None:
            raise ValueError(f"shot {s.shot_id} is not labeled")
        if not s.normalized:
            raise ValueError(f"shot {s.shot_id} is not normalized")
    if val_shots is None:
        n = len(shots)
        n_val = 0
        if n >= 2 and config.val_fraction > 0:
            n_val = max(1, int(math.floor(config.val_fraction * n + 0.5)))
        fit, val = shots[:n - n_val], shots[n - n_val:]
    else:
        fit, val = shots, list(val_shots)

    params = init.copy() if init is not None else init_params(config.hidden_dim, config.seed)
    if norm_stats is not None:
        params.norm_stats = norm_stats
    params.seed = config.seed
    opt = _Adam(params, config) if config.optimizer is Optimizer.AdaptiveMoments \
        else _Momentum(params, config)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xE90C]))
    log_ = TrainingLog()
    best_loss, best_params, since_best = math.inf, params.copy(), 0

    for epoch in range(1, config.epochs + 1):
        losses, hits, steps = [], 0, 0
        for idx in rng.permutation(len(fit)):
            shot = fit[idx]
            y, cache = forward_sequence(params, shot)
            loss = shot_loss_from_logits(cache.logits, shot.label, config.pos_weight)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, shot.shot_id, loss)
            losses.append(loss)
            hits += pointwise_hits(y, shot.label)
            steps += len(y)
            grads = bptt(params, shot, cache, config.pos_weight)
            norm = grads.global_norm()
            if not math.isfinite(norm):
                raise DivergenceError(epoch, shot.shot_id, norm)
            if norm > config.grad_clip_norm:
                grads.scale(config.grad_clip_norm / norm)
                norm = grads.global_norm()
            log_.max_clipped_norm = max(log_.max_clipped_norm, norm)
            opt.update(params, grads)
        train_loss = float(np.mean(losses))
        train_acc = hits / max(steps, 1)
        if val:
            val_loss, val_acc = _evaluate(params, val, config.pos_weight)
        else:
            # no held-out shots: score the end-of-epoch parameters on the fit set
            val_loss, val_acc = _evaluate(params, fit, config.pos_weight)
        if not math.isfinite(val_loss):
            raise DivergenceError(epoch, -1, val_loss)
        log_.records.append(EpochRecord(epoch, train_loss, val_loss, train_acc, val_acc))
        log.info("epoch %d train_loss=%.5f val_loss=%.5f train_acc=%.4f val_acc=%.4f",
                 epoch, train_loss, val_loss, train_acc, val_acc)
        if val_loss < best_loss:
            best_loss, best_params, since_best = val_loss, params.copy(), 0
            log_.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= config.early_stop_patience:
                log_.stopped_early = True
                break
    return best_params, log_
