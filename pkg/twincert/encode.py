"""Twin-network constraint builders.

A twin network runs the same layers on a base input x and a perturbed
input x_hat. The interleaving encoding (ITNE) keeps the base copy explicit
and describes the perturbed copy through per-neuron distances
dy = y_hat - y and dx = x_hat - x; the basic encoding (BTNE) keeps two
independent copies tied only at the input and at the objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import EncodingError
from .lincore import ConstraintSystem, LinExpr, Relation, Sense
from .model import Box, RangeTable, Stage, SubNetwork, Trace

logger = logging.getLogger(__name__)

Operand = Union[int, LinExpr]
ZERO = LinExpr()


class Scheme(Enum):
    ITNE = "itne"
    BTNE = "btne"


class Relaxation(Enum):
    LPR = "lpr"
    EXACT = "exact"


class Mode(Enum):
    GLOBAL = "global"
    LOCAL = "local"


@dataclass(frozen=True, order=True)
class NeuronRef:
    layer: int
    index: int

    def __str__(self) -> str:
        return f"({self.layer},{self.index})"


@dataclass(frozen=True)
class EncodingConfig:
    scheme: Scheme = Scheme.ITNE
    relaxation: Relaxation = Relaxation.LPR
    refine_set: frozenset[NeuronRef] = frozenset()
    mode: Mode = Mode.GLOBAL
    center: Optional[tuple[float, ...]] = None
    include_hat_relaxation: bool = True
    prune: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "refine_set", frozenset(self.refine_set))
        if self.mode is Mode.LOCAL and self.center is None:
            raise EncodingError("local mode needs a center point")
        if self.center is not None:
            object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def refines(self, ref: NeuronRef) -> bool:
        return self.relaxation is Relaxation.EXACT or ref in self.refine_set


@dataclass
class TwinEncoding:
    """A built sub-problem plus the expressions of every encoded quantity.

    ITNE fills ``dy``/``dx``; BTNE fills ``y_hat``/``x_hat``. The missing pair
    is derived on demand, so ``quantity()`` works for both schemes.
    """
    cs: ConstraintSystem
    scheme: Scheme
    sub: SubNetwork
    y: dict[NeuronRef, LinExpr] = field(default_factory=dict)
    x: dict[NeuronRef, LinExpr] = field(default_factory=dict)
    dy: dict[NeuronRef, LinExpr] = field(default_factory=dict)
    dx: dict[NeuronRef, LinExpr] = field(default_factory=dict)
    y_hat: dict[NeuronRef, LinExpr] = field(default_factory=dict)
    x_hat: dict[NeuronRef, LinExpr] = field(default_factory=dict)
    inputs: list[int] = field(default_factory=list)
    roles: dict[int, tuple[str, int, int]] = field(default_factory=dict)

    @property
    def target(self) -> NeuronRef:
        return NeuronRef(self.sub.target, self.sub.neuron)

    @property
    def binary_count(self) -> int:
        return len(self.cs.binaries)

    def quantity(self, name: str, ref: Optional[NeuronRef] = None) -> LinExpr:
        """Expression of y, x, dy or dx at ref (the target by default)."""
        ref = ref or self.target
        if name in ("y", "x"):
            return getattr(self, name)[ref]
        base = self.y if name == "dy" else self.x
        if self.scheme is Scheme.ITNE:
            return getattr(self, name)[ref]
        hat = self.y_hat if name == "dy" else self.x_hat
        return hat[ref] - base[ref]

    def objective(self, name: str, sense: Sense) -> None:
        self.cs.set_objective(self.quantity(name), sense)


def _expr(operand: Operand) -> LinExpr:
    return operand if isinstance(operand, LinExpr) else LinExpr.var(operand)


def encode_relu_exact(
    cs: ConstraintSystem, y: Operand, x: Operand, y_range: tuple[float, float], name: str = ""
) -> int:
    """Big-M encoding of x = relu(y) over an unstable range; returns the phase binary."""
    lo, hi = float(y_range[0]), float(y_range[1])
    if not lo < 0.0 < hi:
        raise EncodingError(f"exact relu {name} needs lower < 0 < upper, got [{lo}, {hi}]")
    y, x = _expr(y), _expr(x)
    z = cs.add_variable(0.0, 1.0, binary=True, name=f"z_{name}" if name else "")
    zv = LinExpr.var(z)
    cs.add_constraint(x, Relation.GE, 0.0)
    cs.add_constraint(x - y, Relation.GE, 0.0)
    # x <= y - lo * (1 - z)
    cs.add_constraint(x - y - zv * lo, Relation.LE, -lo)
    cs.add_constraint(x - zv * hi, Relation.LE, 0.0)
    return z


def encode_relu_lpr(cs: ConstraintSystem, y: Operand, x: Operand, y_range: tuple[float, float]) -> None:
    """Triangle relaxation of x = relu(y) over an unstable range."""
    lo, hi = float(y_range[0]), float(y_range[1])
    if not lo < 0.0 < hi:
        raise EncodingError(f"relu relaxation needs lower < 0 < upper, got [{lo}, {hi}]")
    y, x = _expr(y), _expr(x)
    slope = hi / (hi - lo)
    cs.add_constraint(x, Relation.GE, 0.0)
    cs.add_constraint(x - y, Relation.GE, 0.0)
    cs.add_constraint(x - y * slope, Relation.LE, -slope * lo)


def encode_dist_lpr(cs: ConstraintSystem, dy: Operand, dx: Operand, dy_range: tuple[float, float]) -> None:
    """Relaxation of dx = relu(y + dy) - relu(y) over all y, for dy in dy_range."""
    lo, hi = min(0.0, float(dy_range[0])), max(0.0, float(dy_range[1]))
    dy, dx = _expr(dy), _expr(dx)
    if hi - lo <= 0.0:
        cs.add_constraint(dx, Relation.EQ, 0.0)
        return
    width = hi - lo
    # lo * (hi - dy) / width <= dx <= hi * (dy - lo) / width
    cs.add_constraint(dx + dy * (lo / width), Relation.GE, lo * hi / width)
    cs.add_constraint(dx - dy * (hi / width), Relation.LE, -hi * lo / width)


def _needed_neurons(sub: SubNetwork, prune: bool) -> dict[int, np.ndarray]:
    net = sub.network
    needed = {sub.target: np.array([sub.neuron])}
    for k in range(sub.target, sub.source, -1):
        if prune:
            rows = net.affine[k - 1].matrix[needed[k]]
            needed[k - 1] = np.unique(rows.indices)
        else:
            needed[k - 1] = np.arange(net.widths[k - 1])
    return needed


class _Builder:
    """Shared plumbing of the two schemes: variables, constants and roles."""

    EPS = 1e-12

    def __init__(self, sub: SubNetwork, ranges: RangeTable, cfg: EncodingConfig):
        self.sub = sub
        self.net = sub.network
        self.ranges = ranges
        self.cfg = cfg
        stage = sub.stage.value
        self.enc = TwinEncoding(
            cs=ConstraintSystem(f"{cfg.scheme.value}:{stage}[{sub.target},{sub.neuron}]w{sub.window}"),
            scheme=cfg.scheme,
            sub=sub,
        )
        self.cs = self.enc.cs
        self.needed = _needed_neurons(sub, cfg.prune)

    def variable(self, lo: float, hi: float, role: str, k: int, q: int) -> LinExpr:
        if hi - lo <= self.EPS:
            return LinExpr.const(0.5 * (lo + hi))
        var_id = self.cs.add_variable(lo, hi, name=f"{role}{k}_{q}")
        self.enc.roles[var_id] = (role, k, q)
        return LinExpr.var(var_id)

    def bound_sum(self, a: LinExpr, b: LinExpr, a_range, b_range, lo: float, hi: float) -> None:
        """a + b in [lo, hi], skipping rows the variable bounds already imply."""
        if a_range[0] + b_range[0] < lo - self.EPS:
            self.cs.add_constraint(a + b, Relation.GE, lo)
        if a_range[1] + b_range[1] > hi + self.EPS:
            self.cs.add_constraint(a + b, Relation.LE, hi)

    def affine(self, k: int, q: int, values: list[LinExpr], with_bias: bool = True) -> LinExpr:
        layer = self.net.affine[k - 1]
        cols, vals = layer.row(q)
        bias = float(layer.bias[q]) if with_bias else 0.0
        return LinExpr.combine(((float(v), values[c]) for c, v in zip(cols, vals)), bias)

    def relu_copy(self, y: LinExpr, lo: float, hi: float, refined: bool, role: str, k: int, q: int) -> LinExpr:
        """x = relu(y) for one copy, short-circuiting stable phases."""
        if hi <= 0.0:
            return ZERO
        if lo >= 0.0:
            return y
        x = self.variable(0.0, hi, role, k, q)
        if refined:
            z = encode_relu_exact(self.cs, y, x, (lo, hi), name=f"{role}{k}_{q}")
            self.enc.roles[z] = ("z" if role == "x" else "zh", k, q)
        else:
            encode_relu_lpr(self.cs, y, x, (lo, hi))
        return x

    def check_refine_set(self) -> None:
        for ref in self.cfg.refine_set:
            inside = self.sub.source < ref.layer < self.sub.target or ref == self.enc.target
            if not inside:
                raise EncodingError(
                    f"refined neuron {ref} lies outside sub-network layers "
                    f"{self.sub.source + 1}..{self.sub.target}"
                )


def _check_prerequisites(sub: SubNetwork, ranges: RangeTable) -> None:
    need = sub.target + 1 if sub.stage is Stage.X else sub.target
    if len(ranges.layers) < need:
        raise EncodingError(
            f"ranges cover {len(ranges.layers)} layers, sub-network "
            f"{sub.stage.value}[{sub.target},{sub.neuron}] needs {need}"
        )


def _encode_itne(b: _Builder) -> TwinEncoding:
    sub, enc, ranges = b.sub, b.enc, b.ranges
    s = sub.source
    r = ranges.layers[s]
    hat_lo, hat_hi = ranges.hat_x(s)
    width = b.net.widths[s]
    xs: list[LinExpr] = [ZERO] * width
    dxs: list[LinExpr] = [ZERO] * width
    for q in b.needed[s]:
        xs[q] = b.variable(r.x_lo[q], r.x_hi[q], "x", s, q)
        dxs[q] = b.variable(r.dx_lo[q], r.dx_hi[q], "dx", s, q)
        b.bound_sum(xs[q], dxs[q], (r.x_lo[q], r.x_hi[q]), (r.dx_lo[q], r.dx_hi[q]), hat_lo[q], hat_hi[q])
        ref = NeuronRef(s, int(q))
        enc.x[ref], enc.dx[ref] = xs[q], dxs[q]
    enc.inputs = sorted(enc.roles)

    for k in sub.layer_indices:
        layer = b.net.affine[k - 1]
        full = k < sub.target or sub.stage is Stage.X
        r = ranges.layers[k] if full else None
        h_lo, h_hi = ranges.hat_y(k) if full else (None, None)
        next_xs: list[LinExpr] = [ZERO] * b.net.widths[k]
        next_dxs: list[LinExpr] = [ZERO] * b.net.widths[k]
        for q in b.needed[k]:
            ref = NeuronRef(k, int(q))
            y = b.affine(k, q, xs)
            dy = b.affine(k, q, dxs, with_bias=False)
            enc.y[ref], enc.dy[ref] = y, dy
            if k == sub.target and sub.stage is Stage.Y:
                continue
            if not layer.relu:
                next_xs[q], next_dxs[q] = y, dy
                enc.x[ref], enc.dx[ref] = y, dy
                continue

            refined = b.cfg.refines(ref)
            y_lo, y_hi = float(r.y_lo[q]), float(r.y_hi[q])
            x = b.relu_copy(y, y_lo, y_hi, refined, "x", k, q)
            yh_lo, yh_hi = float(h_lo[q]), float(h_hi[q])
            if yh_hi <= 0.0:
                dx = -x
            elif yh_lo >= 0.0:
                dx = y + dy - x
            else:
                dx = b.variable(r.dx_lo[q], r.dx_hi[q], "dx", k, q)
                x_hat, y_hat = x + dx, y + dy
                if refined:
                    z = encode_relu_exact(b.cs, y_hat, x_hat, (yh_lo, yh_hi), name=f"xh{k}_{q}")
                    enc.roles[z] = ("zh", k, q)
                else:
                    base_stable = y_hi <= 0.0 or y_lo >= 0.0
                    if base_stable or b.cfg.include_hat_relaxation:
                        encode_relu_lpr(b.cs, y_hat, x_hat, (yh_lo, yh_hi))
                    encode_dist_lpr(b.cs, dy, dx, (r.dy_lo[q], r.dy_hi[q]))
            next_xs[q], next_dxs[q] = x, dx
            enc.x[ref], enc.dx[ref] = x, dx
        xs, dxs = next_xs, next_dxs
    return enc


def _encode_btne(b: _Builder) -> TwinEncoding:
    sub, enc, ranges = b.sub, b.enc, b.ranges
    s = sub.source
    r = ranges.layers[s]
    hat_lo, hat_hi = ranges.hat_x(s)
    width = b.net.widths[s]
    xs: list[LinExpr] = [ZERO] * width
    xhs: list[LinExpr] = [ZERO] * width
    for q in b.needed[s]:
        xs[q] = b.variable(r.x_lo[q], r.x_hi[q], "x", s, q)
        xhs[q] = b.variable(hat_lo[q], hat_hi[q], "xh", s, q)
        if s == 0:
            # the only place the two copies are tied together
            neg = xs[q] * -1.0
            b.bound_sum(xhs[q], neg, (hat_lo[q], hat_hi[q]), (-r.x_hi[q], -r.x_lo[q]), r.dx_lo[q], r.dx_hi[q])
        ref = NeuronRef(s, int(q))
        enc.x[ref], enc.x_hat[ref] = xs[q], xhs[q]
    enc.inputs = sorted(enc.roles)

    for k in sub.layer_indices:
        layer = b.net.affine[k - 1]
        full = k < sub.target or sub.stage is Stage.X
        r = ranges.layers[k] if full else None
        h_lo, h_hi = ranges.hat_y(k) if full else (None, None)
        next_xs: list[LinExpr] = [ZERO] * b.net.widths[k]
        next_xhs: list[LinExpr] = [ZERO] * b.net.widths[k]
        for q in b.needed[k]:
            ref = NeuronRef(k, int(q))
            y = b.affine(k, q, xs)
            y_hat = b.affine(k, q, xhs)
            enc.y[ref], enc.y_hat[ref] = y, y_hat
            if k == sub.target and sub.stage is Stage.Y:
                continue
            if not layer.relu:
                next_xs[q], next_xhs[q] = y, y_hat
                enc.x[ref], enc.x_hat[ref] = y, y_hat
                continue
            refined = b.cfg.refines(ref)
            x = b.relu_copy(y, float(r.y_lo[q]), float(r.y_hi[q]), refined, "x", k, q)
            x_hat = b.relu_copy(y_hat, float(h_lo[q]), float(h_hi[q]), refined, "xh", k, q)
            next_xs[q], next_xhs[q] = x, x_hat
            enc.x[ref], enc.x_hat[ref] = x, x_hat
        xs, xhs = next_xs, next_xhs
    return enc


def encode_twin_subnet(
    sub: SubNetwork, ranges: RangeTable, cfg: EncodingConfig, domain: Box, delta: float
) -> TwinEncoding:
    """Encode F_w for a target neuron as a twin-network constraint system.

    The sub-network inputs are read from ``ranges.layers[sub.source]``; for
    source 0 these hold the domain and the delta box (or the ball around the
    center in local mode), so ``domain`` and ``delta`` only serve as a
    consistency check.
    """
    _check_prerequisites(sub, ranges)
    if sub.source == 0:
        r0 = ranges.layers[0]
        if r0.x_lo.size != domain.dim:
            raise EncodingError(f"input ranges have {r0.x_lo.size} entries, domain has {domain.dim}")
        if np.any(r0.dx_hi > delta + 1e-12) or np.any(r0.dx_lo < -delta - 1e-12):
            raise EncodingError("input distance ranges exceed delta")
    builder = _Builder(sub, ranges, cfg)
    builder.check_refine_set()
    enc = _encode_itne(builder) if cfg.scheme is Scheme.ITNE else _encode_btne(builder)
    logger.debug(
        f"{enc.cs.name}: {enc.cs.num_variables} vars, {len(enc.cs.constraints)} rows, "
        f"{enc.binary_count} binaries"
    )
    return enc


def assemble_point(enc: TwinEncoding, base: Trace, hat: Trace) -> np.ndarray:
    """The encoding's variable vector for a real execution pair."""
    point = np.zeros(enc.cs.num_variables)
    for var_id, (role, k, q) in enc.roles.items():
        if role == "x":
            point[var_id] = base.xs[k][q]
        elif role == "xh":
            point[var_id] = hat.xs[k][q]
        elif role == "dx":
            point[var_id] = hat.xs[k][q] - base.xs[k][q]
        elif role == "z":
            point[var_id] = 1.0 if base.ys[k][q] > 0.0 else 0.0
        elif role == "zh":
            point[var_id] = 1.0 if hat.ys[k][q] > 0.0 else 0.0
    return point


@dataclass(frozen=True)
class ScoredNeuron:
    ref: NeuronRef
    base_score: float
    dist_score: float

    @property
    def key(self) -> float:
        return self.base_score + self.dist_score


def score_neurons(ranges: RangeTable, layer_window: Iterable[int]) -> list[ScoredNeuron]:
    """Rank the relu neurons of the window by how loose their relaxation is.

    Neurons whose base and live copies are both stable never need refining
    and are left out.
    """
    scored: list[ScoredNeuron] = []
    for k in layer_window:
        if not ranges.relu[k]:
            continue
        r = ranges.layers[k]
        h_lo, h_hi = ranges.hat_y(k)
        for q in range(r.y_lo.size):
            y_lo, y_hi = float(r.y_lo[q]), float(r.y_hi[q])
            base_unstable = y_lo < 0.0 < y_hi
            hat_unstable = h_lo[q] < 0.0 < h_hi[q]
            if not (base_unstable or hat_unstable):
                continue
            base = -y_hi * y_lo / (y_hi - y_lo) if base_unstable else 0.0
            dist = max(abs(float(r.dy_lo[q])), abs(float(r.dy_hi[q])))
            scored.append(ScoredNeuron(NeuronRef(k, q), base, dist))
    scored.sort(key=lambda s: (-s.key, s.ref.layer, s.ref.index))
    return scored


def select_refinement(scores: Sequence[ScoredNeuron], r: int) -> frozenset[NeuronRef]:
    if r < 0:
        raise EncodingError(f"refine count must be >= 0, got {r}")
    ranked = sorted(scores, key=lambda s: (-s.key, s.ref.layer, s.ref.index))
    return frozenset(s.ref for s in ranked[:r])
