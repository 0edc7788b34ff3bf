"""Optimization: AdamW, warmup + cosine schedule, cross-entropy, train loop."""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import Dataset, iterate_batches
from .errors import TrainingDiverged, UsageError
from .model import CCNN, save_checkpoint
from .tensor import Tensor, from_op

METRICS_HEADER = ["epoch", "step", "split", "loss", "accuracy", "lr", "seconds"]


@dataclass
class TrainConfig:
    lr_max: float = 0.01
    weight_decay: float = 1e-6
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    warmup_epochs: int = 10
    epochs: int = 210
    batch_size: int = 100
    dropout: float = 0.1
    omega0: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.lr_max <= 0:
            raise UsageError(f"lr_max must be positive, got {self.lr_max}")
        if self.epochs < 1 or self.batch_size < 1:
            raise UsageError("epochs and batch_size must be >= 1")


def adamw_step(params, grads, state, lr, wd, betas=(0.9, 0.999), eps=1e-8):
    """One Adam update with decoupled weight decay, in place.

    ``params``/``grads`` are aligned lists of arrays; ``state`` holds
    first/second moment arrays plus the shared step counter.  The decay
    term is lr*wd*theta on the pre-update value, independent of the
    gradient moments.
    """
    state["t"] += 1
    t = state["t"]
    b1, b2 = betas
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        m, v = state["m"][i], state["v"][i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        if wd:
            step = step + (lr * wd) * p
        p -= step
    return params, state


def init_adamw_state(params):
    return {"t": 0,
            "m": [np.zeros_like(p) for p in params],
            "v": [np.zeros_like(p) for p in params]}


class AdamW:
    """Named-parameter wrapper; norm parameters and biases skip decay."""

    def __init__(self, named_params: dict[str, Tensor], config: TrainConfig):
        self.config = config
        self.groups = {True: [], False: []}
        for name, t in named_params.items():
            self.groups[t.data.ndim >= 2].append((name, t))
        self.state = {decayed: init_adamw_state([t.data for _, t in group])
                      for decayed, group in self.groups.items()}

    def step(self, lr: float):
        cfg = self.config
        for decayed, group in self.groups.items():
            if not group:
                continue
            params, grads = [], []
            for name, t in group:
                if t.grad is None:
                    raise UsageError(f"parameter {name} has no gradient")
                params.append(t.data)
                grads.append(t.grad)
            wd = cfg.weight_decay if decayed else 0.0
            adamw_step(params, grads, self.state[decayed], lr, wd,
                       betas=cfg.betas, eps=cfg.eps)


def lr_at(epoch: int, step_in_epoch: int, config: TrainConfig,
          steps_per_epoch: int = 1) -> float:
    """Linear 0 -> lr_max ramp over warmup_epochs, then cosine to 0.

    Warmup progress interpolates within an epoch; if the run is shorter
    than the warmup the ramp simply covers the whole run (clamped).
    """
    t = epoch + step_in_epoch / max(steps_per_epoch, 1)
    warm = min(config.warmup_epochs, config.epochs)
    if warm > 0 and t < warm:
        return config.lr_max * (t / warm)
    span = config.epochs - warm
    if span <= 0:
        return config.lr_max
    phase = (t - warm) / span
    return config.lr_max * 0.5 * (1.0 + math.cos(math.pi * min(phase, 1.0)))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean -log softmax at the true class, stabilized by max subtraction."""
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise UsageError(f"expected (B, n_classes) logits, got {logits.shape}")
    b, k = logits.shape
    if labels.shape != (b,):
        raise UsageError(f"expected {b} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise UsageError(
            f"labels must lie in [0, {k}), got range "
            f"[{labels.min()}, {labels.max()}]")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    loss = -logp[np.arange(b), labels].mean()

    def back(g):
        soft = np.exp(logp)
        soft[np.arange(b), labels] -= 1.0
        return (g * soft / b,)

    return from_op(np.asarray(loss, dtype=z.dtype), (logits,), back)


def accuracy(logits: np.ndarray, labels) -> float:
    return float((logits.argmax(axis=1) == np.asarray(labels)).mean())


def evaluate(net: CCNN, ds: Dataset, batch_size: int, dtype=np.float32):
    losses, hits, total = 0.0, 0.0, 0
    with T.no_grad():
        for x, y in iterate_batches(ds, batch_size, rng=None, dtype=dtype):
            logits = net.forward(x, train_mode=False)
            losses += cross_entropy(logits, y).item() * len(y)
            hits += accuracy(logits.data, y) * len(y)
            total += len(y)
    return losses / total, hits / total


def train_loop(net: CCNN, train_ds: Dataset, val_ds: Dataset,
               config: TrainConfig, out_dir=None, log=None):
    """Run the optimization; returns the per-epoch metric rows.

    Metrics go to ``out_dir/metrics.csv`` (one row per epoch and split)
    and the best-validation checkpoint to ``out_dir/best.npz`` when an
    output directory is given.  Deterministic for a fixed seed within
    one precision mode (the wall-time column excepted).
    """
    if len(train_ds) == 0:
        raise UsageError("training dataset is empty")
    dtype = net.dtype
    shuffle_rng = np.random.default_rng(config.seed)
    dropout_rng = np.random.default_rng(config.seed + 0x9E3779B9)
    opt = AdamW(net.parameters(), config)
    steps_per_epoch = math.ceil(len(train_ds) / config.batch_size)
    rows = []
    writer = fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        fh = open(os.path.join(out_dir, "metrics.csv"), "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)

    def emit(row):
        rows.append(row)
        if writer is not None:
            writer.writerow(row)
            fh.flush()
        if log is not None:
            log("epoch {} {}: loss {:.4f} acc {:.4f} lr {:.2e} ({:.1f}s)".format(
                row[0], row[2], row[3], row[4], row[5], row[6]))

    best_val = -1.0
    step = 0
    try:
        for epoch in range(config.epochs):
            tic = time.monotonic()
            run_loss = run_hits = seen = 0
            lr = 0.0
            for i, (x, y) in enumerate(iterate_batches(
                    train_ds, config.batch_size, rng=shuffle_rng, dtype=dtype)):
                lr = lr_at(epoch, i, config, steps_per_epoch)
                logits = net.forward(x, train_mode=True, rng=dropout_rng)
                loss = cross_entropy(logits, y)
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} step {i} "
                        f"(lr {lr:.3e})")
                net.zero_grad()
                T.backward(loss)
                opt.step(lr)
                run_loss += loss.item() * len(y)
                run_hits += accuracy(logits.data, y) * len(y)
                seen += len(y)
                step += 1
            emit([epoch, step, "train", run_loss / seen, run_hits / seen,
                  lr, round(time.monotonic() - tic, 3)])
            tic = time.monotonic()
            val_loss, val_acc = evaluate(net, val_ds, config.batch_size, dtype)
            emit([epoch, step, "val", val_loss, val_acc, lr,
                  round(time.monotonic() - tic, 3)])
            if out_dir is not None and val_acc > best_val:
                save_checkpoint(net, os.path.join(out_dir, "best.npz"))
            best_val = max(best_val, val_acc)
    finally:
        if fh is not None:
            fh.close()
    return rows
