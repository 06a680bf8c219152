"""The two fingerprint localization networks.

Both share a three-stage strided conv stack over the 9x56x1 fingerprint
(outputs 6x14x32 -> 3x6x64 -> 1x4x128, flattened to 512) and differ in the
fully connected head: the regression net tapers to a linear 2-vector of
coordinates, the classification net ends in a 63-way softmax. The heads are
sized so both nets carry nearly the same parameter count.
"""
from __future__ import annotations

import numpy as np

from .nn import (Conv2d, Dense, Dropout, Flatten, LeakyRelu, Network, Softmax,
                 TASK_CLASSIFICATION, TASK_REGRESSION)

INPUT_SHAPE = (9, 56, 1)
LEAKY_GAMMA = 0.01
DROPOUT_P = 0.4
N_CLASSES = 63

__all__ = [
    "INPUT_SHAPE",
    "build_regression_net",
    "build_classification_net",
    "param_count",
    "predict_position",
    "predict_class",
]


def _conv_stack(rng):
    return [
        Conv2d(1, 32, 4, 4, stride=(1, 4), rng=rng),
        LeakyRelu(LEAKY_GAMMA),
        Dropout(DROPOUT_P),
        Conv2d(32, 64, 4, 4, stride=(1, 2), rng=rng),
        LeakyRelu(LEAKY_GAMMA),
        Dropout(DROPOUT_P),
        Conv2d(64, 128, 3, 3, stride=(1, 1), rng=rng),
        LeakyRelu(LEAKY_GAMMA),
        Dropout(DROPOUT_P),
        Flatten(),
    ]


def build_regression_net(seed: int = 0) -> Network:
    """Coordinate-regression network; the final 2-unit layer is linear."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    layers = _conv_stack(rng) + [
        Dense(512, 256, rng=rng), LeakyRelu(LEAKY_GAMMA),
        Dense(256, 128, rng=rng), LeakyRelu(LEAKY_GAMMA),
        Dense(128, 35, rng=rng), LeakyRelu(LEAKY_GAMMA),
        Dense(35, 16, rng=rng), LeakyRelu(LEAKY_GAMMA),
        Dense(16, 8, rng=rng), LeakyRelu(LEAKY_GAMMA),
        Dense(8, 2, rng=rng),
    ]
    net = Network(layers, TASK_REGRESSION, INPUT_SHAPE)
    assert net.output_shape == 2
    return net


def build_classification_net(seed: int = 0) -> Network:
    """63-way grid classification network with a softmax head."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    layers = _conv_stack(rng) + [
        Dense(512, 256, rng=rng), LeakyRelu(LEAKY_GAMMA),
        Dense(256, 64, rng=rng), LeakyRelu(LEAKY_GAMMA),
        Dense(64, N_CLASSES, rng=rng),
        Softmax(),
    ]
    net = Network(layers, TASK_CLASSIFICATION, INPUT_SHAPE)
    assert net.output_shape == N_CLASSES
    return net


def param_count(net: Network) -> int:
    """Total learnable parameter elements (weights plus biases)."""
    return sum(p.size for p in net.parameters())


def _as_batch(fingerprint) -> np.ndarray:
    x = np.asarray(fingerprint, dtype=float)
    if x.shape == (9, 56):
        x = x[..., None]
    if x.shape == (9, 56, 1):
        x = x[None]
    return x


def predict_position(net: Network, fingerprint) -> np.ndarray:
    """Predicted (x, y) in meters for one fingerprint."""
    return net.forward(_as_batch(fingerprint), train=False)[0]


def predict_class(net: Network, fingerprint) -> int:
    """Predicted grid label (1-based); argmax ties go to the lowest index."""
    probs = net.forward(_as_batch(fingerprint), train=False)[0]
    return int(np.argmax(probs)) + 1
