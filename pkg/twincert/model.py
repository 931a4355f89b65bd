"""Network representation, file I/O, evaluation and interval propagation.

All layer values are handled as flat vectors. Image tensors are flattened
channel-major: flat index = ((c * H) + h) * W + w.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import sparse

from .errors import NetworkFormatError, ShapeError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class LayerKind(Enum):
    DENSE = "dense"
    CONV2D = "conv2d"
    FLATTEN = "flatten"


class Padding(Enum):
    VALID = "valid"
    SAME = "same"


class Stage(Enum):
    """Which value of the target neuron a sub-network produces."""
    Y = "y"
    X = "x"


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box [lower, upper]."""
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape:
            raise ShapeError(f"box bounds differ in length: {lower.size} != {upper.size}")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ShapeError("box bounds must be finite")
        if np.any(lower > upper):
            raise ShapeError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return int(self.lower.size)

    @staticmethod
    def point(x: Sequence[float]) -> "Box":
        x = np.asarray(x, dtype=float)
        return Box(x.copy(), x.copy())

    def contains(self, x: Sequence[float], tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def ball(self, center: Sequence[float], delta: float) -> "Box":
        """The L-inf ball of radius delta around center, intersected with this box."""
        center = np.asarray(center, dtype=float).reshape(-1)
        return Box(np.maximum(center - delta, self.lower), np.minimum(center + delta, self.upper))

    @staticmethod
    def from_dict(data: dict) -> "Box":
        return Box(np.asarray(data["lower"], dtype=float), np.asarray(data["upper"], dtype=float))

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True, eq=False)
class Layer:
    kind: LayerKind
    weights: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    relu: bool = False
    stride: tuple[int, int] = (1, 1)
    padding: Padding = Padding.VALID

    def to_dict(self) -> dict:
        if self.kind is LayerKind.FLATTEN:
            return {"kind": "flatten"}
        data = {
            "kind": self.kind.value,
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "relu": self.relu,
        }
        if self.kind is LayerKind.CONV2D:
            data["stride"] = list(self.stride)
            data["padding"] = self.padding.value
        return data


@dataclass(frozen=True, eq=False)
class SparseAffine:
    """Row-indexed affine map y = matrix @ x + bias."""
    matrix: sparse.csr_matrix
    bias: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x + self.bias


@dataclass(frozen=True, eq=False)
class AffineLayer:
    """A weighted layer in lowered form; the unit the certifier iterates over."""
    matrix: sparse.csr_matrix
    bias: np.ndarray
    relu: bool
    source: int

    @property
    def width(self) -> int:
        return int(self.bias.size)

    @cached_property
    def positive(self) -> sparse.csr_matrix:
        return self.matrix.maximum(0).tocsr()

    @cached_property
    def negative(self) -> sparse.csr_matrix:
        return self.matrix.minimum(0).tocsr()

    def row(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        start, stop = self.matrix.indptr[j], self.matrix.indptr[j + 1]
        return self.matrix.indices[start:stop], self.matrix.data[start:stop]


def conv_output_shape(
    in_shape: Sequence[int], kernel_shape: Sequence[int], stride: Sequence[int], padding: Padding
) -> tuple[int, int, int]:
    _, height, width = in_shape
    out_c, _, kh, kw = kernel_shape
    sh, sw = stride
    if padding is Padding.SAME:
        return out_c, math.ceil(height / sh), math.ceil(width / sw)
    return out_c, (height - kh) // sh + 1, (width - kw) // sw + 1


def _same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def _conv_pads(layer: Layer, in_shape: Sequence[int]) -> tuple[int, int, int, int]:
    if layer.padding is Padding.VALID:
        return 0, 0, 0, 0
    _, height, width = in_shape
    _, _, kh, kw = layer.weights.shape
    top, bottom = _same_padding(height, kh, layer.stride[0])
    left, right = _same_padding(width, kw, layer.stride[1])
    return top, bottom, left, right


def conv2d_direct(layer: Layer, in_shape: Sequence[int], x: np.ndarray) -> np.ndarray:
    """Evaluate a conv layer on a flat input; returns the flat pre-activation."""
    image = np.asarray(x, dtype=float).reshape(in_shape)
    top, bottom, left, right = _conv_pads(layer, in_shape)
    if top or bottom or left or right:
        image = np.pad(image, ((0, 0), (top, bottom), (left, right)))
    _, _, kh, kw = layer.weights.shape
    sh, sw = layer.stride
    windows = sliding_window_view(image, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    out = np.einsum("chwij,ocij->ohw", windows, layer.weights)
    out += layer.bias[:, None, None]
    return out.reshape(-1)


def lower_conv(layer: Layer, in_shape: Sequence[int]) -> SparseAffine:
    """Lower a conv2d layer to an equivalent sparse affine map."""
    if layer.kind is not LayerKind.CONV2D:
        raise ShapeError(f"lower_conv expects a conv2d layer, got {layer.kind.value}")
    in_c, height, width = in_shape
    out_c, k_in, kh, kw = layer.weights.shape
    if k_in != in_c:
        raise ShapeError(f"conv kernel expects {k_in} input channels, input has {in_c}")
    _, out_h, out_w = conv_output_shape(in_shape, layer.weights.shape, layer.stride, layer.padding)
    top, _, left, _ = _conv_pads(layer, in_shape)
    sh, sw = layer.stride

    ho, wo = np.meshgrid(np.arange(out_h), np.arange(out_w), indexing="ij")
    ho, wo = ho.reshape(-1), wo.reshape(-1)
    rows, cols, vals = [], [], []
    for o in range(out_c):
        out_index = (o * out_h + ho) * out_w + wo
        for c in range(in_c):
            for i in range(kh):
                for j in range(kw):
                    weight = layer.weights[o, c, i, j]
                    if weight == 0.0:
                        continue
                    h = ho * sh + i - top
                    w = wo * sw + j - left
                    valid = (h >= 0) & (h < height) & (w >= 0) & (w < width)
                    rows.append(out_index[valid])
                    cols.append(((c * height + h[valid]) * width) + w[valid])
                    vals.append(np.full(int(valid.sum()), weight))
    n_out = out_c * out_h * out_w
    if rows:
        matrix = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_out, in_c * height * width),
        ).tocsr()
    else:
        matrix = sparse.csr_matrix((n_out, in_c * height * width))
    bias = np.repeat(layer.bias, out_h * out_w)
    return SparseAffine(matrix=matrix, bias=bias)


@dataclass(frozen=True, eq=False)
class Network:
    """Layered feedforward ReLU network F."""
    name: str
    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...]
    shapes: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.input_shape or any(s <= 0 for s in self.input_shape):
            raise ShapeError(f"input_shape must be positive integers, got {list(self.input_shape)}")
        if not any(layer.kind is not LayerKind.FLATTEN for layer in self.layers):
            raise ShapeError("network needs at least one weighted layer")

        shapes = [self.input_shape]
        for index, layer in enumerate(self.layers, start=1):
            shapes.append(_validate_layer(index, layer, shapes[-1]))
        object.__setattr__(self, "shapes", tuple(shapes))

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    @cached_property
    def affine(self) -> tuple[AffineLayer, ...]:
        """Weighted layers in lowered form; index i-1 holds layer i."""
        lowered = []
        for index, layer in enumerate(self.layers):
            if layer.kind is LayerKind.DENSE:
                matrix = sparse.csr_matrix(layer.weights)
                lowered.append(AffineLayer(matrix, layer.bias.copy(), layer.relu, index))
            elif layer.kind is LayerKind.CONV2D:
                form = lower_conv(layer, self.shapes[index])
                lowered.append(AffineLayer(form.matrix, form.bias, layer.relu, index))
        return tuple(lowered)

    @property
    def depth(self) -> int:
        return len(self.affine)

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_size,) + tuple(layer.width for layer in self.affine)

    @property
    def relu_count(self) -> int:
        return sum(layer.width for layer in self.affine if layer.relu)

    @property
    def output_size(self) -> int:
        return self.widths[-1]

    def evaluate_batch(self, inputs: np.ndarray) -> np.ndarray:
        """Outputs for a batch of flat inputs (rows)."""
        values = np.asarray(inputs, dtype=float)
        for layer in self.affine:
            values = (layer.matrix @ values.T).T + layer.bias
            if layer.relu:
                values = np.maximum(values, 0.0)
        return values

    @staticmethod
    def from_dict(data: dict) -> "Network":
        try:
            name = str(data.get("name", "network"))
            input_shape = [int(s) for s in data["input_shape"]]
            raw_layers = data["layers"]
        except (KeyError, TypeError, ValueError) as e:
            raise NetworkFormatError(f"malformed network header: {e}") from e
        layers = [_parse_layer(index, raw) for index, raw in enumerate(raw_layers, start=1)]
        return Network(name=name, input_shape=tuple(input_shape), layers=tuple(layers))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "layers": [layer.to_dict() for layer in self.layers],
        }


def _parse_layer(index: int, raw: dict) -> Layer:
    try:
        kind = LayerKind(raw["kind"])
        if kind is LayerKind.FLATTEN:
            return Layer(kind=kind)
        weights = np.asarray(raw["weights"], dtype=float)
        bias = np.asarray(raw["bias"], dtype=float).reshape(-1)
        relu = bool(raw.get("relu", False))
        if kind is LayerKind.DENSE:
            return Layer(kind=kind, weights=weights, bias=bias, relu=relu)
        stride = tuple(int(s) for s in raw.get("stride", (1, 1)))
        padding = Padding(raw.get("padding", "valid"))
        return Layer(kind=kind, weights=weights, bias=bias, relu=relu, stride=stride, padding=padding)
    except (KeyError, TypeError, ValueError) as e:
        raise NetworkFormatError(f"layer {index}: malformed entry: {e}") from e


def _validate_layer(index: int, layer: Layer, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    where = f"layer {index} ({layer.kind.value})"
    in_size = int(np.prod(in_shape))
    if layer.kind is LayerKind.FLATTEN:
        if layer.relu:
            raise ShapeError(f"{where}: flatten cannot carry a relu")
        return (in_size,)

    weights, bias = layer.weights, layer.bias
    if weights is None or bias is None:
        raise ShapeError(f"{where}: missing weights or bias")
    if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
        raise ShapeError(f"{where}: weights and bias must be finite")

    if layer.kind is LayerKind.DENSE:
        if weights.ndim != 2:
            raise ShapeError(f"{where}: weights must be a matrix, got {weights.ndim} dims")
        if weights.shape[1] != in_size:
            raise ShapeError(f"{where}: weight row length {weights.shape[1]} != previous width {in_size}")
        if bias.size != weights.shape[0]:
            raise ShapeError(f"{where}: bias length {bias.size} != output width {weights.shape[0]}")
        return (weights.shape[0],)

    if len(in_shape) != 3:
        raise ShapeError(f"{where}: needs a (channels, height, width) input, got {list(in_shape)}")
    if weights.ndim != 4:
        raise ShapeError(f"{where}: kernel must be (out, in, kh, kw), got {weights.ndim} dims")
    if weights.shape[1] != in_shape[0]:
        raise ShapeError(f"{where}: kernel input channels {weights.shape[1]} != {in_shape[0]}")
    if bias.size != weights.shape[0]:
        raise ShapeError(f"{where}: bias length {bias.size} != output channels {weights.shape[0]}")
    if len(layer.stride) != 2 or min(layer.stride) < 1:
        raise ShapeError(f"{where}: stride must be two positive integers")
    out_shape = conv_output_shape(in_shape, weights.shape, layer.stride, layer.padding)
    if min(out_shape) <= 0:
        raise ShapeError(f"{where}: output shape {list(out_shape)} is empty")
    return out_shape


def load_network(path: PathLike) -> Network:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise NetworkFormatError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise NetworkFormatError(f"{path}: top level must be an object")
    net = Network.from_dict(data)
    logger.info(f"Loaded network '{net.name}' with widths {list(net.widths)}")
    return net


def _dump_json(data: dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":")) + "\n"


def save_network(net: Network, path: PathLike) -> None:
    Path(path).write_text(_dump_json(net.to_dict()), encoding="utf-8")


def load_domain(path: PathLike) -> Box:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return Box.from_dict(data)
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise NetworkFormatError(f"{path}: malformed domain file: {e}") from e


def save_domain(box: Box, path: PathLike) -> None:
    Path(path).write_text(_dump_json(box.to_dict()), encoding="utf-8")


@dataclass(frozen=True, eq=False)
class Trace:
    """Per-layer values of one forward pass; xs[0] is the flat input."""
    ys: tuple[np.ndarray, ...]
    xs: tuple[np.ndarray, ...]

    @property
    def output(self) -> np.ndarray:
        return self.xs[-1]


def forward(net: Network, x: Sequence[float]) -> Trace:
    """One pass through the lowered affine layers, the arithmetic SubNetwork.evaluate repeats."""
    values = np.asarray(x, dtype=float).reshape(-1)
    if values.size != net.input_size:
        raise ShapeError(f"input length {values.size} != network input size {net.input_size}")
    ys: list[np.ndarray] = [values.copy()]
    xs: list[np.ndarray] = [values.copy()]
    for layer in net.affine:
        y = layer.matrix @ values + layer.bias
        values = np.maximum(y, 0.0) if layer.relu else y
        ys.append(y)
        xs.append(values)
    return Trace(ys=tuple(ys), xs=tuple(xs))


def gradient(net: Network, x: Sequence[float], output_index: int) -> np.ndarray:
    """dF_j/dx by reverse accumulation; the relu subgradient at 0 is 0."""
    if not 0 <= output_index < net.output_size:
        raise ShapeError(f"output index {output_index} outside [0, {net.output_size})")
    trace = forward(net, x)
    grad = np.zeros(net.output_size)
    grad[output_index] = 1.0
    for i in range(net.depth, 0, -1):
        layer = net.affine[i - 1]
        if layer.relu:
            grad = grad * (trace.ys[i] > 0.0)
        grad = layer.matrix.T @ grad
    return np.asarray(grad, dtype=float)


@dataclass(frozen=True, eq=False)
class SubNetwork:
    """F_w(y_j^(i)) or F_w(x_j^(i)): layers source+1..target, last one sliced to neuron j."""
    network: Network
    source: int
    target: int
    neuron: int
    stage: Stage

    @property
    def window(self) -> int:
        return self.target - self.source

    @property
    def layer_indices(self) -> range:
        return range(self.source + 1, self.target + 1)

    @cached_property
    def layers(self) -> tuple[AffineLayer, ...]:
        full = list(self.network.affine[self.source:self.target])
        last = full[-1]
        sliced = AffineLayer(
            matrix=last.matrix[self.neuron].tocsr(),
            bias=last.bias[self.neuron:self.neuron + 1].copy(),
            relu=last.relu and self.stage is Stage.X,
            source=last.source,
        )
        return tuple(full[:-1]) + (sliced,)

    def evaluate(self, x_source: Sequence[float]) -> float:
        values = np.asarray(x_source, dtype=float)
        for layer in self.layers:
            values = layer.matrix @ values + layer.bias
            if layer.relu:
                values = np.maximum(values, 0.0)
        return float(values[0])


def decompose(net: Network, layer: int, neuron: int, stage: Stage, w: int) -> SubNetwork:
    if not 1 <= layer <= net.depth:
        raise ShapeError(f"layer {layer} outside [1, {net.depth}]")
    if not 0 <= neuron < net.widths[layer]:
        raise ShapeError(f"neuron {neuron} outside layer {layer} of width {net.widths[layer]}")
    if not 1 <= w <= layer:
        raise ShapeError(f"window {w} must satisfy 1 <= w <= {layer}")
    return SubNetwork(network=net, source=layer - w, target=layer, neuron=neuron, stage=Stage(stage))


@dataclass
class LayerRanges:
    """Certified intervals of one layer: y, x, dy (= y_hat - y) and dx (= x_hat - x)."""
    y_lo: np.ndarray
    y_hi: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    dy_lo: np.ndarray
    dy_hi: np.ndarray
    dx_lo: np.ndarray
    dx_hi: np.ndarray

    def copy(self) -> "LayerRanges":
        return LayerRanges(*(np.array(a, copy=True) for a in self.arrays()))

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.y_lo, self.y_hi, self.x_lo, self.x_hi,
                self.dy_lo, self.dy_hi, self.dx_lo, self.dx_hi)

    def to_dict(self) -> dict:
        names = ("y_lo", "y_hi", "x_lo", "x_hi", "dy_lo", "dy_hi", "dx_lo", "dx_hi")
        return {name: array.tolist() for name, array in zip(names, self.arrays())}


@dataclass
class RangeTable:
    """Running state of the certifier; layers[0] is the input layer.

    In global mode both copies range over the whole domain, so the live
    copy's values always lie inside the base copy's certified ranges.
    """
    layers: list[LayerRanges]
    relu: list[bool]
    global_mode: bool = True

    def copy(self) -> "RangeTable":
        return RangeTable([r.copy() for r in self.layers], list(self.relu), self.global_mode)

    def hat_y(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        r = self.layers[layer]
        lo, hi = r.y_lo + r.dy_lo, r.y_hi + r.dy_hi
        if self.global_mode:
            lo, hi = np.maximum(lo, r.y_lo), np.minimum(hi, r.y_hi)
        return lo, hi

    def hat_x(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        r = self.layers[layer]
        if not self.relu[layer]:
            lo, hi = r.x_lo + r.dx_lo, r.x_hi + r.dx_hi
            if self.global_mode:
                lo, hi = np.maximum(lo, r.x_lo), np.minimum(hi, r.x_hi)
            return lo, hi
        lo, hi = self.hat_y(layer)
        return np.maximum(lo, 0.0), np.maximum(hi, 0.0)

    def to_dict(self) -> list[dict]:
        return [r.to_dict() for r in self.layers]


def relu_distance_range(
    y_lo: np.ndarray, y_hi: np.ndarray, dy_lo: np.ndarray, dy_hi: np.ndarray,
    hat_lo: np.ndarray, hat_hi: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Interval for dx = relu(y + dy) - relu(y) given ranges of y, dy and y + dy."""
    lo = np.minimum(dy_lo, 0.0)
    hi = np.maximum(dy_hi, 0.0)
    x_lo, x_hi = np.maximum(y_lo, 0.0), np.maximum(y_hi, 0.0)
    xh_lo, xh_hi = np.maximum(hat_lo, 0.0), np.maximum(hat_hi, 0.0)
    lo = np.maximum(lo, xh_lo - x_hi)
    hi = np.minimum(hi, xh_hi - x_lo)

    inactive = (y_hi <= 0.0) & (hat_hi <= 0.0)
    active = (y_lo >= 0.0) & (hat_lo >= 0.0)
    lo = np.where(inactive, 0.0, np.where(active, np.maximum(dy_lo, lo), lo))
    hi = np.where(inactive, 0.0, np.where(active, np.minimum(dy_hi, hi), hi))
    return np.minimum(lo, 0.0), np.maximum(hi, 0.0)


def interval_step(
    layer: AffineLayer, prev: LayerRanges, hat_prev: tuple[np.ndarray, np.ndarray], global_mode: bool
) -> LayerRanges:
    """One affine + relu step of interval arithmetic from certified previous ranges."""
    pos, neg = layer.positive, layer.negative
    y_lo = pos @ prev.x_lo + neg @ prev.x_hi + layer.bias
    y_hi = pos @ prev.x_hi + neg @ prev.x_lo + layer.bias
    dy_lo = pos @ prev.dx_lo + neg @ prev.dx_hi
    dy_hi = pos @ prev.dx_hi + neg @ prev.dx_lo
    yh_lo = pos @ hat_prev[0] + neg @ hat_prev[1] + layer.bias
    yh_hi = pos @ hat_prev[1] + neg @ hat_prev[0] + layer.bias
    dy_lo = np.minimum(np.maximum(dy_lo, yh_lo - y_hi), 0.0)
    dy_hi = np.maximum(np.minimum(dy_hi, yh_hi - y_lo), 0.0)

    hat_lo, hat_hi = y_lo + dy_lo, y_hi + dy_hi
    if global_mode:
        hat_lo, hat_hi = np.maximum(hat_lo, y_lo), np.minimum(hat_hi, y_hi)
    else:
        hat_lo, hat_hi = np.maximum(hat_lo, yh_lo), np.minimum(hat_hi, yh_hi)

    if layer.relu:
        x_lo, x_hi = np.maximum(y_lo, 0.0), np.maximum(y_hi, 0.0)
        dx_lo, dx_hi = relu_distance_range(y_lo, y_hi, dy_lo, dy_hi, hat_lo, hat_hi)
    else:
        x_lo, x_hi = y_lo.copy(), y_hi.copy()
        dx_lo, dx_hi = dy_lo.copy(), dy_hi.copy()
    return LayerRanges(y_lo, y_hi, x_lo, x_hi, dy_lo, dy_hi, dx_lo, dx_hi)


def input_ranges(domain: Box, delta: float, center: Optional[Sequence[float]] = None) -> LayerRanges:
    if center is None:
        base = domain
        d_lo = np.full(domain.dim, -float(delta))
        d_hi = np.full(domain.dim, float(delta))
    else:
        base = Box.point(center)
        ball = domain.ball(base.lower, delta)
        d_lo = np.minimum(ball.lower - base.lower, 0.0)
        d_hi = np.maximum(ball.upper - base.lower, 0.0)
    return LayerRanges(
        base.lower.copy(), base.upper.copy(), base.lower.copy(), base.upper.copy(),
        d_lo.copy(), d_hi.copy(), d_lo, d_hi,
    )


def propagate_intervals(
    net: Network, domain: Box, delta: float, center: Optional[Sequence[float]] = None
) -> RangeTable:
    """Sound interval ranges for every layer; center switches to local mode."""
    if domain.dim != net.input_size:
        raise ShapeError(f"domain dimension {domain.dim} != network input size {net.input_size}")
    if delta < 0:
        raise ShapeError(f"delta must be non-negative, got {delta}")
    relu = [False] + [layer.relu for layer in net.affine]
    table = RangeTable([input_ranges(domain, delta, center)], relu, global_mode=center is None)
    for i, layer in enumerate(net.affine, start=1):
        hat_prev = table.hat_x(i - 1)
        table.layers.append(interval_step(layer, table.layers[i - 1], hat_prev, table.global_mode))
    return table
