"""Dataset and network builders shared by the CLI, the acceptance suite and the benchmarks."""
from __future__ import annotations

import os

import numpy as np

from .data import (DataError, apply_zca, fit_zca, global_contrast_normalize, load_cifar10,
                   synthetic_dilation_task)
from .nn import Network, build_plain_network, build_residual_network, build_shallow_network
from .optim import TrainConfig
from .train import Trainer

DATA_ENV = "ACTCONV_DATA_DIR"
ARCHS = ("plain", "res-basic", "res-bottleneck", "shallow")

# synthetic preset: 1024/512 images of 16x16, two stride-1 layers of 8 channels
SYNTH_SIZE = 16
SYNTH_TRAIN = 1024
SYNTH_TEST = 512


def synthetic_config(seed=0, total_iters=1500):
    drops = [int(total_iters * 0.6), int(total_iters * 0.85)]
    return TrainConfig(base_lr=0.1, momentum=0.9, weight_decay=1e-4, lr_drop_steps=drops,
                       total_iters=total_iters, warmup_iters=min(200, total_iters // 2), batch_size=32,
                       position_lr_scale=0.05, seed=seed, log_interval=100, augment=False)


def default_data_dir():
    return os.environ.get(DATA_ENV)


def load_datasets(source):
    """Build ``(train, test)`` from a plain dict (stored verbatim in checkpoints).

    ``source["name"]`` is ``"synthetic"`` (keys ``seed``, ``n_train``,
    ``n_test``, ``size``) or ``"cifar10"`` (keys ``data_dir``, ``limit``,
    ``test_limit``, ``zca``).
    """
    name = source.get("name")
    if name == "synthetic":
        rng = np.random.default_rng(1000 + int(source.get("seed", 0)))
        size = int(source.get("size", SYNTH_SIZE))
        train = synthetic_dilation_task(int(source.get("n_train", SYNTH_TRAIN)), size, rng)
        test = synthetic_dilation_task(int(source.get("n_test", SYNTH_TEST)), size, rng, split="test")
        return train, test
    if name == "cifar10":
        root = source.get("data_dir")
        if not root:
            raise DataError(f"no CIFAR-10 directory: pass --data-dir or set {DATA_ENV}")
        train = global_contrast_normalize(load_cifar10(root, "train", source.get("limit")))
        test = global_contrast_normalize(load_cifar10(root, "test", source.get("test_limit")))
        if source.get("zca"):
            zca = fit_zca(train.images)
            train, test = apply_zca(train, zca), apply_zca(test, zca)
        return train, test
    raise ValueError(f"unknown dataset {name!r}")


def build_spec(arch, classes, in_channels, use_acu, width=1.0, blocks=5):
    if arch == "plain":
        return build_plain_network(width, classes, use_acu, in_channels)
    if arch == "shallow":
        return build_shallow_network((8, 8), classes, use_acu, in_channels)
    if arch in ("res-basic", "res-bottleneck"):
        return build_residual_network(arch[4:], blocks, classes, use_acu, width, in_channels)
    raise ValueError(f"unknown arch {arch!r}")


def build_network(spec, train, seed, position_lr_scale):
    return Network(spec, train.images.shape[1:], np.random.default_rng(seed), position_lr_scale=position_lr_scale)


def max_displacement(net):
    """Largest ``|alpha|`` or ``|beta|`` over every ACU synapse of ``net`` (0 without ACUs)."""
    return max((float(np.abs(p.points).max()) for layer in net.acu.values() for p in layer.group_positions),
               default=0.0)


def synthetic_pair(seed, total_iters=1500):
    """Train the ACU network and its fixed-grid twin on the seeded synthetic task.

    Returns ``(acu_trainer, conv_trainer)``.
    """
    source = {"name": "synthetic", "seed": seed}
    train, test = load_datasets(source)
    cfg = synthetic_config(seed, total_iters)
    out = []
    for use_acu in (True, False):
        spec = build_spec("shallow", 2, 1, use_acu)
        net = build_network(spec, train, seed, cfg.position_lr_scale)
        out.append(Trainer(net, cfg, train, test).run())
    return tuple(out)

