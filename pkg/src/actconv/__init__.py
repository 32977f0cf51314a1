"""Convolution with learnable synapse positions, in numpy (numba-accelerated when available)."""
from ._backend import active_backend
from .acu import AcuLayer, SynapsePositions, acu_backward, acu_forward, init_positions
from .nn import Network, NetworkSpec, build_plain_network, build_residual_network
from .optim import TrainConfig
from .refconv import ConvParams, conv2d

__version__ = "0.1.0"

__all__ = [
    "AcuLayer", "ConvParams", "Network", "NetworkSpec", "SynapsePositions", "TrainConfig",
    "acu_backward", "acu_forward", "active_backend", "build_plain_network", "build_residual_network",
    "conv2d", "init_positions",
]
