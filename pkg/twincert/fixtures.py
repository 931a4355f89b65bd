"""Built-in networks, domains and closed-loop systems used by the CLI and tests."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .model import Box, Layer, LayerKind, Network, Padding
from .safety import LinearSystem


def dense(weights, bias=None, relu: bool = True) -> Layer:
    weights = np.asarray(weights, dtype=float)
    bias = np.zeros(weights.shape[0]) if bias is None else np.asarray(bias, dtype=float)
    return Layer(kind=LayerKind.DENSE, weights=weights, bias=bias, relu=relu)


def toy_network() -> Network:
    """Two inputs, two hidden relus, one relu output."""
    return Network(
        name="toy",
        input_shape=(2,),
        layers=(
            dense([[1.0, 0.5], [-0.5, 1.0]]),
            dense([[1.0, -1.0]]),
        ),
    )


def linear_network(weights: Sequence[float] = (2.0, -1.0)) -> Network:
    return Network(name="linear", input_shape=(len(weights),), layers=(dense([list(weights)], relu=False),))


def unit_box(dim: int = 2) -> Box:
    return Box(-np.ones(dim), np.ones(dim))


def random_network(
    seed: int,
    widths: Sequence[int] = (2, 8, 8, 1),
    scale: float = 1.0,
    relu_output: bool = False,
) -> Network:
    """Dense net with N(0, scale^2/fan_in) weights and small biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for k in range(1, len(widths)):
        fan_in = widths[k - 1]
        weights = rng.normal(0.0, scale / np.sqrt(fan_in), size=(widths[k], fan_in))
        bias = rng.normal(0.0, 0.1, size=widths[k])
        last = k == len(widths) - 1
        layers.append(dense(weights, bias, relu=relu_output if last else True))
    return Network(name=f"random-{seed}", input_shape=(widths[0],), layers=tuple(layers))


def random_conv_network(
    seed: int,
    image: tuple[int, int, int] = (1, 8, 8),
    channels: int = 4,
    kernel: int = 3,
    hidden: int = 64,
    outputs: int = 1,
) -> Network:
    """Conv (same padding) -> flatten -> dense relu -> dense output."""
    rng = np.random.default_rng(seed)
    c, h, w = image
    fan_in = c * kernel * kernel
    conv = Layer(
        kind=LayerKind.CONV2D,
        weights=rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(channels, c, kernel, kernel)),
        bias=rng.normal(0.0, 0.1, size=channels),
        relu=True,
        stride=(1, 1),
        padding=Padding.SAME,
    )
    flat = channels * h * w
    layers = (
        conv,
        Layer(kind=LayerKind.FLATTEN),
        dense(rng.normal(0.0, 1.0 / np.sqrt(flat), size=(hidden, flat)), rng.normal(0.0, 0.1, size=hidden)),
        dense(rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(outputs, hidden)), relu=False),
    )
    return Network(name=f"conv-{seed}", input_shape=image, layers=layers)


def scalar_system(dd_bound: float = 0.1) -> LinearSystem:
    """x' = x - 0.5 (x + dd) + w1 on the safe interval [-1, 1]."""
    return LinearSystem(
        A=np.array([[1.0]]),
        B=np.array([1.0]),
        E=np.array([1.0]),
        K=np.array([-0.5]),
        w1_bound=0.1,
        w2_bound=np.array([0.0]),
        dd_bound=dd_bound,
        safe_lower=np.array([-1.0]),
        safe_upper=np.array([1.0]),
    )


def acc_system(dd_bound: float = 0.1298) -> LinearSystem:
    """Cruise-control loop on x = [d - 1.2, v_e - 0.4] with a 0.1 s period."""
    return LinearSystem(
        A=np.array([[1.0, -0.1], [0.0, 1.0]]),
        B=np.array([-0.005, 0.1]),
        E=np.array([1.0, 0.0]),
        K=np.array([0.3617, -0.8582]),
        w1_bound=0.02,
        w2_bound=np.array([5e-4, 3e-5]),
        dd_bound=dd_bound,
        safe_lower=np.array([-0.7, -0.3]),
        safe_upper=np.array([0.7, 0.3]),
    )
