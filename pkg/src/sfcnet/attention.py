"""Channel and spatial gating over a per-point feature map.

Two parallel branches: channel weights come from pooled statistics pushed
through a bottleneck MLP with a final ReLU; spatial weights come from a
shared per-point MLP, batch normalization over points, and a max over
channels. Both multiply onto the feature map. No sigmoid anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import Tensor
from .errors import DimensionError


@dataclass
class AttentionWeights:
    channel: Tensor  # (1, c), non-negative
    spatial: Tensor  # (n, 1)


def channel_attention(x: Tensor, mlp_layers) -> Tensor:
    """Per-channel weights: ReLU(MLP(max-pool + avg-pool over points))."""
    mx = engine.pool(x, axis=0, kind="max")
    av = engine.pool(x, axis=0, kind="avg")
    pooled = engine.reshape(engine.add(mx, av), (1, x.data.shape[1]))
    return engine.relu(engine.shared_mlp(pooled, mlp_layers))


def spatial_attention(
    x: Tensor, mlp_layers, gamma: Tensor, beta: Tensor, bn_state, training: bool
) -> Tensor:
    """Per-point weights: max over channels of BN(shared MLP(x))."""
    h = engine.shared_mlp(x, mlp_layers)
    h = engine.batchnorm(h, gamma, beta, bn_state, training)
    w = engine.pool(h, axis=1, kind="max")
    return engine.reshape(w, (x.data.shape[0], 1))


def apply_attention(x: Tensor, weights: AttentionWeights) -> Tensor:
    """Multiplicative gating: out[i, c] = x[i, c] * channel[c] * spatial[i]."""
    n, c = x.data.shape
    if weights.channel.data.shape != (1, c) or weights.spatial.data.shape != (n, 1):
        raise DimensionError(
            f"apply_attention: x {x.data.shape} vs channel "
            f"{weights.channel.data.shape} / spatial {weights.spatial.data.shape}"
        )
    return engine.mul(engine.mul(x, weights.channel), weights.spatial)


def identity_weights(x: Tensor) -> AttentionWeights:
    """All-ones weights; apply_attention becomes the identity exactly."""
    n, c = x.data.shape
    return AttentionWeights(channel=Tensor(np.ones((1, c))), spatial=Tensor(np.ones((n, 1))))
