"""Gradient descent / Adam training loops with dropout and checkpointing."""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from .nn import (
    DivergenceError,
    NetworkConfig,
    ParameterSet,
    _as_batch,
    forward,
    loss_and_gradient,
    loss_value,
)
from .rng import STREAM_BATCH, STREAM_DROPOUT, Stream

GD = "gd"
ADAM = "adam"


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = GD
    learning_rate: float = 0.1
    batch_size: Optional[int] = None  # None = full batch
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in (GD, ADAM):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def to_dict(self):
        d = {"kind": self.kind, "learning_rate": self.learning_rate, "batch_size": self.batch_size}
        if self.kind == ADAM:
            d.update(b1=self.b1, b2=self.b2, eps=self.eps)
        return d


@dataclass(frozen=True)
class DropoutConfig:
    """Inverted dropout on the outputs of the listed hidden layers (0-based)."""

    keep_probability: float = 1.0
    placement: tuple = (0,)

    def __post_init__(self):
        if not 0.0 < self.keep_probability <= 1.0:
            raise ValueError("keep_probability must lie in (0, 1]")

    @property
    def active(self):
        return self.keep_probability < 1.0 and len(self.placement) > 0


@dataclass
class Checkpoint:
    epoch: int
    loss: float
    rd: float
    cluster_count: Optional[int] = None
    snapshot: Optional[ParameterSet] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"epoch": self.epoch, "loss": self.loss, "rd": self.rd, "cluster_count": self.cluster_count}
        d.update(self.extra)
        return d


@dataclass
class TrainingTrace:
    checkpoints: List[Checkpoint] = field(default_factory=list)
    epoch_losses: Optional[np.ndarray] = None
    final_params: Optional[ParameterSet] = None
    final_epoch: int = 0
    stop_reason: str = ""

    @property
    def epochs(self):
        return [c.epoch for c in self.checkpoints]

    @property
    def losses(self):
        return np.array([c.loss for c in self.checkpoints])

    @property
    def rds(self):
        return np.array([c.rd for c in self.checkpoints])

    def at(self, epoch) -> Checkpoint:
        for c in self.checkpoints:
            if c.epoch == epoch:
                return c
        raise KeyError(epoch)

    def to_jsonl(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for c in self.checkpoints:
                fh.write(json.dumps(c.to_dict(), sort_keys=True) + "\n")
        return path


def relative_distance(theta_now, theta_init) -> float:
    """||theta_now - theta_init|| / ||theta_init|| over concatenated hidden-layer parameters."""
    theta_now = np.asarray(theta_now, dtype=np.float64).ravel()
    theta_init = np.asarray(theta_init, dtype=np.float64).ravel()
    if theta_now.shape != theta_init.shape:
        raise ValueError("parameter shapes differ")
    denom = np.linalg.norm(theta_init)
    if denom == 0.0:
        raise ValueError("initial hidden-layer parameters have zero norm")
    return float(np.linalg.norm(theta_now - theta_init) / denom)


def log_schedule(max_epochs: int) -> List[int]:
    """0..10, 20..100, 200..1000, ... up to and including max_epochs."""
    epochs = set(range(0, min(max_epochs, 10) + 1))
    step = 10
    while step <= max_epochs:
        epochs.update(range(step, min(max_epochs, 10 * step) + 1, step))
        step *= 10
    epochs.add(max_epochs)
    return sorted(epochs)


class _GDState:
    def __init__(self, spec, arrays):
        self.lr = spec.learning_rate

    def step(self, arrays, grads):
        if self.lr == 0.0:
            return
        for p, g in zip(arrays, grads):
            p -= self.lr * g


class _AdamState:
    def __init__(self, spec, arrays):
        self.spec = spec
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grads):
        s = self.spec
        self.t += 1
        c1 = 1.0 - s.b1 ** self.t
        c2 = 1.0 - s.b2 ** self.t
        for p, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= s.b1
            m += (1.0 - s.b1) * g
            v *= s.b2
            v += (1.0 - s.b2) * (g * g)
            p -= s.learning_rate * (m / c1) / (np.sqrt(v / c2) + s.eps)


def make_optimizer(spec: OptimizerSpec, params: ParameterSet):
    cls = _AdamState if spec.kind == ADAM else _GDState
    return cls(spec, params.arrays())


def dropout_masks(stream: Stream, config: NetworkConfig, dropout: Optional[DropoutConfig], n: int):
    """Per-hidden-layer multipliers (0 or 1/keep), or None when dropout is off."""
    if dropout is None or not dropout.active:
        return None
    masks = [None] * config.n_hidden
    keep = dropout.keep_probability
    for layer in dropout.placement:
        width = config.layer_widths[layer + 1]
        masks[layer] = stream.bernoulli((n, width), keep) / keep
    return masks


def train(
    config: NetworkConfig,
    params: ParameterSet,
    loss: str,
    x,
    y,
    optimizer: OptimizerSpec = OptimizerSpec(),
    dropout: Optional[DropoutConfig] = None,
    schedule=None,
    max_epochs: int = 1000,
    loss_threshold: Optional[float] = None,
    snapshots=False,
    monitor: Optional[Callable[[ParameterSet], Optional[int]]] = None,
    stop_fn: Optional[Callable[[ParameterSet, int], bool]] = None,
    seed: Optional[int] = None,
    record_losses: bool = False,
    eval_chunk: int = 0,
    callback: Optional[Callable[[Checkpoint], None]] = None,
) -> TrainingTrace:
    """Train a copy of ``params``; returns the trace with ``final_params`` set.

    ``schedule`` lists the checkpoint epochs (default :func:`log_schedule`).  The
    checkpoint at epoch t records the state after t epochs of updates.
    ``snapshots`` is a bool or a collection of epochs at which to keep a parameter copy.
    ``monitor(params)`` fills ``cluster_count``; ``stop_fn(params, epoch)`` is
    consulted at checkpoints and ends the run when it returns True.
    Raises :class:`DivergenceError` (carrying the partial trace) on a non-finite loss.
    """
    x = _as_batch(config, x)
    y = np.asarray(y)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    if max_epochs < 0:
        raise ValueError("max_epochs must be non-negative")
    schedule = sorted(set(log_schedule(max_epochs) if schedule is None else schedule))
    if schedule and (schedule[0] < 0 or schedule[-1] > max_epochs):
        raise ValueError("checkpoint schedule must lie in [0, max_epochs]")
    schedule_set = set(schedule)
    seed = config.init.seed if seed is None else seed

    params = params.copy()
    params.check(config)
    arrays = params.arrays()
    opt = make_optimizer(optimizer, params)
    theta0 = params.hidden_vector()
    drop_stream = Stream(seed, STREAM_DROPOUT)
    batch_stream = Stream(seed, STREAM_BATCH)
    full_batch = optimizer.batch_size is None or optimizer.batch_size >= n
    exact_loss = full_batch and (dropout is None or not dropout.active)

    trace = TrainingTrace()
    if record_losses:
        losses = np.empty(max_epochs + 1)

    def want_snapshot(epoch):
        if isinstance(snapshots, bool):
            return snapshots
        return epoch in snapshots

    def checkpoint(epoch, current_loss):
        if current_loss is None:
            current_loss = loss_value(params, config, loss, x, y, chunk=eval_chunk)
        if not math.isfinite(current_loss):
            raise DivergenceError(f"non-finite loss at epoch {epoch}", trace)
        cp = Checkpoint(
            epoch=epoch,
            loss=float(current_loss),
            rd=relative_distance(params.hidden_vector(), theta0),
            cluster_count=monitor(params) if monitor is not None else None,
            snapshot=params.copy() if want_snapshot(epoch) else None,
        )
        trace.checkpoints.append(cp)
        if callback is not None:
            callback(cp)
        return cp

    def finish(epoch, reason, current_loss):
        if not trace.checkpoints or trace.checkpoints[-1].epoch != epoch:
            checkpoint(epoch, current_loss)
        if record_losses:
            if not full_batch:
                losses[epoch] = trace.checkpoints[-1].loss
            trace.epoch_losses = losses[: epoch + 1].copy()
        trace.final_params = params
        trace.final_epoch = epoch
        trace.stop_reason = reason
        return trace

    epoch = 0
    while True:
        if full_batch:
            masks = dropout_masks(drop_stream, config, dropout, n)
            try:
                value, grads = loss_and_gradient(params, config, loss, x, y, masks)
            except DivergenceError as exc:
                exc.trace = finish_partial(trace, losses if record_losses else None, epoch)
                raise
            current = value if exact_loss else None
            if record_losses:
                losses[epoch] = value
            if epoch in schedule_set:
                cp = checkpoint(epoch, current)
                if stop_fn is not None and stop_fn(params, epoch):
                    return finish(epoch, "stop_fn", current)
                if loss_threshold is not None and not exact_loss and cp.loss < loss_threshold:
                    return finish(epoch, "loss_threshold", current)
            if exact_loss and loss_threshold is not None and value < loss_threshold:
                return finish(epoch, "loss_threshold", current)
            if epoch >= max_epochs:
                return finish(epoch, "max_epochs", current)
            opt.step(arrays, grads.arrays())
        else:
            if epoch in schedule_set:
                cp = checkpoint(epoch, None)
                if stop_fn is not None and stop_fn(params, epoch):
                    return finish(epoch, "stop_fn", cp.loss)
                if loss_threshold is not None and cp.loss < loss_threshold:
                    return finish(epoch, "loss_threshold", cp.loss)
            if epoch >= max_epochs:
                return finish(epoch, "max_epochs", None)
            order = batch_stream.permutation(n)
            bs = optimizer.batch_size
            total = 0.0
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                masks = dropout_masks(drop_stream, config, dropout, idx.size)
                try:
                    value, grads = loss_and_gradient(params, config, loss, x[idx], y[idx], masks)
                except DivergenceError as exc:
                    exc.trace = finish_partial(trace, losses if record_losses else None, epoch)
                    raise
                total += value * idx.size
                opt.step(arrays, grads.arrays())
            if record_losses:
                losses[epoch] = total / n
        if not params.is_finite():
            raise DivergenceError(f"non-finite parameters after epoch {epoch}",
                                  finish_partial(trace, losses if record_losses else None, epoch))
        epoch += 1


def finish_partial(trace, losses, epoch):
    trace.stop_reason = "diverged"
    trace.final_epoch = trace.checkpoints[-1].epoch if trace.checkpoints else 0
    if losses is not None:
        trace.epoch_losses = losses[:epoch].copy()
    return trace


def accuracy(params: ParameterSet, config: NetworkConfig, x, labels, chunk: int = 2000) -> float:
    x = _as_batch(config, x)
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels.argmax(axis=1)
    correct = 0
    for start in range(0, x.shape[0], chunk):
        out = forward(params, config, x[start:start + chunk])
        correct += int(np.sum(out.argmax(axis=1) == labels[start:start + chunk]))
    return correct / x.shape[0]
