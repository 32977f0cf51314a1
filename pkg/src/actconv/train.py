"""Training loop with metrics logging and synapse-position history."""
from __future__ import annotations

import logging
import math

import numpy as np

from .data import augment_batch
from .optim import SGD, lr_at, position_step
from .tensor import NonFiniteError

log = logging.getLogger(__name__)

METRICS_HEADER = ("iter", "lr", "train_loss", "test_error")
TRAJECTORY_HEADER = ("layer", "synapse", "iter", "alpha", "beta")


class TrainingDiverged(NonFiniteError):
    def __init__(self, iteration, loss):
        super().__init__(f"loss became {loss} at iteration {iteration}")
        self.iteration = iteration


class Trainer:
    """Runs ``cfg.total_iters`` SGD iterations of ``net`` on ``train``.

    All randomness (batch sampling, augmentation) is drawn from one generator
    seeded by ``cfg.seed``; its state is part of the checkpoint, so a resumed
    run continues the same stream.
    """

    def __init__(self, net, cfg, train, test=None):
        self.net = net
        self.cfg = cfg
        self.train = train
        self.test = test
        self.rng = np.random.default_rng(cfg.seed)
        self.iteration = 0
        self.sgd = SGD(net.params, decay_keys=net.decay_keys(), skip=net.position_keys())
        self.metrics = []  # (iter, lr, train_loss, test_error)
        self.history = {name: [(0, layer.positions.points.copy())] for name, layer in net.acu.items()}
        self._loss_sum = 0.0
        self._loss_count = 0

    @property
    def acu_keys(self):
        return {name: [k for k in self.net.position_keys() if k.startswith(name + ".")] for name in self.net.acu}

    def _batch(self):
        N = len(self.train)
        bs = min(self.cfg.batch_size, N)
        idx = np.sort(self.rng.choice(N, size=bs, replace=False))
        x = self.train.images[idx]
        if self.cfg.augment:
            x = augment_batch(x, self.rng)
        return x, self.train.labels[idx]

    def step(self):
        cfg, it = self.cfg, self.iteration
        x, y = self._batch()
        try:
            loss, grads = self.net.forward_backward(x, y)
        except NonFiniteError:
            raise TrainingDiverged(it, math.nan) from None
        if not math.isfinite(loss):
            raise TrainingDiverged(it, loss)
        lr = lr_at(cfg, it)
        self.sgd.step(grads, lr, cfg.momentum, cfg.weight_decay)
        for name, keys in self.acu_keys.items():
            layer = self.net.acu[name]
            raw = np.stack([grads[k] for k in keys]) if layer.groups > 1 else grads[keys[0]]
            position_step(layer, raw, cfg, it)
        self.iteration += 1
        self._loss_sum += loss
        self._loss_count += 1
        if self.iteration % cfg.log_interval == 0 or self.iteration == cfg.total_iters:
            self._log(lr)
        return loss

    def _log(self, lr):
        err = self.net.error_rate(self.test.images, self.test.labels) if self.test is not None else float("nan")
        row = (self.iteration, lr, self._loss_sum / max(self._loss_count, 1), err)
        self.metrics.append(row)
        self._loss_sum = 0.0
        self._loss_count = 0
        for name, layer in self.net.acu.items():
            self.history[name].append((self.iteration, layer.positions.points.copy()))
        log.info("iter %d lr %.4g loss %.4f test_error %.2f%%", *row)

    def run(self, until=None):
        until = self.cfg.total_iters if until is None else min(until, self.cfg.total_iters)
        while self.iteration < until:
            self.step()
        return self

    def final_test_error(self):
        return self.metrics[-1][3] if self.metrics else float("nan")


def format_float(v):
    return repr(float(v))


def metrics_csv(rows):
    lines = [",".join(METRICS_HEADER)]
    for it, lr, loss, err in rows:
        lines.append(f"{int(it)},{format_float(lr)},{format_float(loss)},{format_float(err)}")
    return "\n".join(lines) + "\n"


def trajectory_rows(history):
    """Flatten ``{layer: [(iter, points), ...]}`` into CSV rows."""
    rows = []
    for name, entries in history.items():
        for it, pts in entries:
            for k, (a, b) in enumerate(np.asarray(pts)):
                rows.append((name, k, int(it), float(a), float(b)))
    return rows


def trajectory_csv(history):
    lines = [",".join(TRAJECTORY_HEADER)]
    for name, k, it, a, b in trajectory_rows(history):
        lines.append(f"{name},{k},{it},{format_float(a)},{format_float(b)}")
    return "\n".join(lines) + "\n"


def parse_trajectory_csv(text):
    """Inverse of :func:`trajectory_csv`."""
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines or tuple(lines[0].split(",")) != TRAJECTORY_HEADER:
        raise ValueError(f"trajectory CSV must start with header {','.join(TRAJECTORY_HEADER)}")
    acc = {}
    for line in lines[1:]:
        name, k, it, a, b = line.split(",")
        acc.setdefault(name, {}).setdefault(int(it), {})[int(k)] = (float(a), float(b))
    history = {}
    for name, by_iter in acc.items():
        entries = []
        for it in sorted(by_iter):
            syn = by_iter[it]
            entries.append((it, np.array([syn[k] for k in range(len(syn))])))
        history[name] = entries
    return history
