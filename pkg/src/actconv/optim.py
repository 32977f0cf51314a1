"""SGD with Nesterov momentum, step schedule, and the synapse-position rule."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .acu import apply_position_update, normalize_position_gradient


@dataclass
class TrainConfig:
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_drop_steps: list = field(default_factory=lambda: [32000, 48000])
    lr_drop_factor: float = 0.1
    total_iters: int = 64000
    warmup_iters: int = 10000
    batch_size: int = 64
    position_lr_scale: float = 0.01
    seed: int = 0
    log_interval: int = 100
    augment: bool = True

    def __post_init__(self):
        self.lr_drop_steps = [int(s) for s in self.lr_drop_steps]
        if self.lr_drop_steps != sorted(self.lr_drop_steps):
            raise ValueError(f"lr_drop_steps must be ascending, got {self.lr_drop_steps}")
        if any(s >= self.total_iters for s in self.lr_drop_steps):
            raise ValueError("every lr drop must happen before total_iters")
        if not 0 <= self.warmup_iters < self.total_iters:
            raise ValueError("warmup_iters must lie in [0, total_iters)")
        if self.batch_size < 1 or self.log_interval < 1:
            raise ValueError("batch_size and log_interval must be >= 1")

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = ",".join(str(s) for s in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        """Parse ``key=value`` lines; blank lines and ``#`` comments are ignored."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep:
                raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
            if key not in types:
                raise ValueError(f"line {lineno}: unknown config key {key!r}")
            kind = types[key]
            try:
                if kind == "list":
                    kwargs[key] = [int(s) for s in value.split(",") if s.strip()]
                elif kind == "bool":
                    if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                        raise ValueError(value)
                    kwargs[key] = value.lower() in ("true", "1", "yes")
                elif kind == "int":
                    kwargs[key] = int(value)
                else:
                    kwargs[key] = float(value)
            except ValueError:
                raise ValueError(f"line {lineno}: bad value {value!r} for {key}") from None
        return cls(**kwargs)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_text(f.read())

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_text())


def lr_at(cfg, it):
    """Step schedule: ``base_lr * factor ** (number of drops already passed)``."""
    passed = sum(1 for s in cfg.lr_drop_steps if it >= s)
    return cfg.base_lr * cfg.lr_drop_factor ** passed


def sgd_nesterov_step(param, grad, velocity, lr, momentum, decay):
    """One Nesterov step; returns new ``(param, velocity)`` without touching the inputs."""
    g = grad + decay * param
    v = momentum * velocity - lr * g
    return param + momentum * v - lr * g, v


class SGD:
    """Nesterov SGD over a dict of parameter arrays, updated in place.

    Keys in ``decay_keys`` get L2 weight decay; keys in ``skip`` (synapse
    positions) are left to :func:`position_step`.
    """

    def __init__(self, params, decay_keys=(), skip=()):
        self.params = params
        self.decay_keys = set(decay_keys)
        self.skip = set(skip)
        self.velocity = {k: np.zeros_like(v) for k, v in params.items() if k not in self.skip}

    def step(self, grads, lr, momentum, weight_decay):
        for k, v in self.velocity.items():
            p = self.params[k]
            decay = weight_decay if k in self.decay_keys else 0.0
            new_p, new_v = sgd_nesterov_step(p, grads[k], v, lr, momentum, decay)
            p[...] = new_p
            v[...] = new_v


def position_step(layer, raw_pos_grad, cfg, it):
    """Normalise the raw position gradient and move the layer's synapses.

    Step length is ``lr_at(cfg, it) * layer.position_lr_scale``; positions do
    not move while ``it < cfg.warmup_iters`` and take no momentum or decay.
    """
    g = np.asarray(raw_pos_grad, dtype=np.float64)
    stacked = g if g.ndim == 3 else g[None]
    normed = np.stack([normalize_position_gradient(gg, p.origin_fixed)
                       for gg, p in zip(stacked, layer.group_positions)])
    apply_position_update(layer, normed, lr_at(cfg, it), warmed_up=it >= cfg.warmup_iters)
    return layer
