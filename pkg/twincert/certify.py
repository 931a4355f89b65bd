"""Global and local robustness certification driver.

The certifier walks the network layer by layer. For every neuron it builds
a twin encoding of the w-layer sub-network ending at that neuron, bounds
its pre-activation value and distance (the y-stage problem), derives the
post-activation range analytically and then bounds the post-activation
distance (the x-stage problem). The output distance ranges give the
certified variation bound.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from .encode import (
    EncodingConfig,
    Mode,
    NeuronRef,
    Relaxation,
    Scheme,
    TwinEncoding,
    encode_twin_subnet,
    score_neurons,
    select_refinement,
)
from .errors import InfeasibleSubproblemError, ShapeError
from .lincore import Backend, Sense, SimplexSolver, SolveStatus, solve_lp, solve_milp
from .model import (
    Box,
    Network,
    RangeTable,
    Stage,
    decompose,
    interval_step,
    propagate_intervals,
    relu_distance_range,
)
from .workers import ProgressCallback, WorkerPool

logger = logging.getLogger(__name__)

RefineCount = Union[int, str, None]


class Prebounds(Enum):
    """Where a neuron's y/dy ranges come from before its x-stage problem."""
    LP = "lp"
    INTERVAL = "interval"


@dataclass(frozen=True)
class CertConfig:
    """Parameters of one certification run.

    ``refine_count=None`` refines every candidate neuron of a window;
    ``refine_fraction`` takes a share of the candidates instead.
    """
    delta: float
    domain: Box
    window: int = 2
    refine_count: Optional[int] = 0
    refine_fraction: Optional[float] = None
    scheme: Scheme = Scheme.ITNE
    mode: Mode = Mode.GLOBAL
    center: Optional[tuple[float, ...]] = None
    node_limit: int = 10000
    outputs: Optional[tuple[int, ...]] = None
    target_refine: bool = True
    prebounds: Prebounds = Prebounds.LP
    include_hat_relaxation: bool = True
    prune: bool = False
    solver: Backend = Backend.SIMPLEX
    jobs: int = 1

    def __post_init__(self) -> None:
        for name, enum in (("scheme", Scheme), ("mode", Mode), ("prebounds", Prebounds), ("solver", Backend)):
            object.__setattr__(self, name, enum(getattr(self, name)))
        if not math.isfinite(self.delta) or self.delta < 0:
            raise ValueError(f"delta must be a finite value >= 0, got {self.delta}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.refine_count is not None and self.refine_count < 0:
            raise ValueError(f"refine_count must be >= 0, got {self.refine_count}")
        if self.refine_fraction is not None and not 0.0 <= self.refine_fraction <= 1.0:
            raise ValueError(f"refine_fraction must lie in [0, 1], got {self.refine_fraction}")
        if self.node_limit < 1:
            raise ValueError(f"node_limit must be >= 1, got {self.node_limit}")
        if self.jobs < 1:
            raise ValueError(f"jobs must be >= 1, got {self.jobs}")
        if self.outputs is not None:
            object.__setattr__(self, "outputs", tuple(sorted({int(j) for j in self.outputs})))
        if self.mode is Mode.LOCAL:
            if self.center is None:
                raise ValueError("local mode needs a center point")
            center = tuple(float(c) for c in self.center)
            if len(center) != self.domain.dim:
                raise ShapeError(f"center has {len(center)} entries, domain has {self.domain.dim}")
            if not self.domain.contains(center, tol=1e-12):
                raise ValueError("center lies outside the domain")
            object.__setattr__(self, "center", center)

    @staticmethod
    def parse_refine(value: RefineCount) -> Optional[int]:
        if value is None or (isinstance(value, str) and value.lower() == "all"):
            return None
        return int(value)

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "domain": self.domain.to_dict(),
            "window": self.window,
            "refine_count": "all" if self.refine_count is None else self.refine_count,
            "refine_fraction": self.refine_fraction,
            "scheme": self.scheme.value,
            "mode": self.mode.value,
            "center": list(self.center) if self.center is not None else None,
            "node_limit": self.node_limit,
            "outputs": list(self.outputs) if self.outputs is not None else None,
            "target_refine": self.target_refine,
            "prebounds": self.prebounds.value,
            "include_hat_relaxation": self.include_hat_relaxation,
            "prune": self.prune,
            "solver": self.solver.value,
        }


@dataclass
class CertStats:
    lp_solves: int = 0
    milp_solves: int = 0
    bb_nodes: int = 0
    wall_time_seconds: float = 0.0
    refined_neurons: int = 0
    truncated_milps: int = 0
    skipped_stable: int = 0

    def merge(self, other: "CertStats") -> None:
        self.lp_solves += other.lp_solves
        self.milp_solves += other.milp_solves
        self.bb_nodes += other.bb_nodes
        self.refined_neurons += other.refined_neurons
        self.truncated_milps += other.truncated_milps
        self.skipped_stable += other.skipped_stable

    def to_dict(self, stable: bool = False) -> dict:
        return {
            "lp_solves": self.lp_solves,
            "milp_solves": self.milp_solves,
            "bb_nodes": self.bb_nodes,
            "wall_time_seconds": 0.0 if stable else round(self.wall_time_seconds, 6),
            "refined_neurons": self.refined_neurons,
            "truncated_milps": self.truncated_milps,
            "skipped_stable": self.skipped_stable,
        }


@dataclass(frozen=True)
class OutputBound:
    index: int
    epsilon_upper: float
    dx_lower: float
    dx_upper: float

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "epsilon_upper": self.epsilon_upper,
            "dx_lower": self.dx_lower,
            "dx_upper": self.dx_upper,
        }


@dataclass
class CertReport:
    outputs: list[OutputBound]
    ranges: RangeTable
    stats: CertStats
    config: CertConfig
    network: str = ""

    def epsilon(self, j: Optional[int] = None) -> float:
        """Bound of output j, or the largest bound over the certified outputs."""
        if j is None:
            return max(o.epsilon_upper for o in self.outputs)
        for o in self.outputs:
            if o.index == j:
                return o.epsilon_upper
        raise KeyError(f"output {j} was not certified")

    def to_dict(self, include_ranges: bool = True, stable: bool = False) -> dict:
        data = {
            "network": self.network,
            "config": self.config.to_dict(),
            "outputs": [o.to_dict() for o in self.outputs],
            "stats": self.stats.to_dict(stable),
        }
        if include_ranges:
            data["ranges"] = self.ranges.to_dict()
        return data


@dataclass
class _NeuronResult:
    y: tuple[float, float]
    dy: tuple[float, float]
    dx: tuple[float, float]
    stats: CertStats = field(default_factory=CertStats)


class Certifier:
    """Layer-by-layer certification engine over one network.

    Example:
        >>> cfg = CertConfig(delta=0.1, domain=Box([-1, -1], [1, 1]))
        >>> report = Certifier(net, cfg).run()
        >>> report.epsilon()
    """

    def __init__(
        self,
        net: Network,
        cfg: CertConfig,
        progress: Optional[ProgressCallback] = None,
    ):
        """Initialize the engine.

        Args:
            net: Network to certify.
            cfg: Run parameters.
            progress: Optional callback receiving (percent, message).

        Raises:
            ShapeError: If the domain or output indices do not fit the network.
        """
        if cfg.domain.dim != net.input_size:
            raise ShapeError(f"domain dimension {cfg.domain.dim} != network input size {net.input_size}")
        if cfg.outputs is not None:
            bad = [j for j in cfg.outputs if not 0 <= j < net.output_size]
            if bad:
                raise ShapeError(f"output indices {bad} outside [0, {net.output_size})")
        self.net = net
        self.cfg = cfg
        self._progress = progress
        self.stats = CertStats()
        self._ranking: Optional[RangeTable] = None
        logger.debug(
            f"Certifier initialized for '{net.name}' widths={list(net.widths)} "
            f"scheme={cfg.scheme.value} window={cfg.window}"
        )

    def run(self) -> CertReport:
        """Certify every layer and read off the output bounds.

        Returns:
            CertReport with per-output bounds, the final ranges and statistics.

        Raises:
            InfeasibleSubproblemError: If a sub-problem has no feasible point.
        """
        cfg, net = self.cfg, self.net
        start = time.perf_counter()
        table = propagate_intervals(net, cfg.domain, cfg.delta, cfg.center)
        # refinement is ranked on the untightened ranges so the top-r sets are nested in r
        self._ranking = propagate_intervals(net, cfg.domain, cfg.delta, cfg.center)
        n = net.depth
        logger.info(f"Certifying '{net.name}' ({n} layers, delta={cfg.delta}, mode={cfg.mode.value})")

        with WorkerPool(cfg.jobs, self._progress) as pool:
            for i in range(1, n + 1):
                w = min(i, cfg.window)
                neurons = range(net.widths[i])
                if i == n and cfg.outputs is not None:
                    neurons = cfg.outputs
                results = pool.map(lambda j: self._certify_neuron(table, i, j, w), neurons)
                layer = table.layers[i]
                for j, res in zip(neurons, results):
                    layer.y_lo[j], layer.y_hi[j] = res.y
                    layer.dy_lo[j], layer.dy_hi[j] = res.dy
                    layer.dx_lo[j], layer.dx_hi[j] = res.dx
                    self.stats.merge(res.stats)
                if table.relu[i]:
                    layer.x_lo, layer.x_hi = np.maximum(layer.y_lo, 0.0), np.maximum(layer.y_hi, 0.0)
                else:
                    layer.x_lo, layer.x_hi = layer.y_lo.copy(), layer.y_hi.copy()
                self._tighten_following(table, i)
                pool.report(int(100 * i / n), f"layer {i}/{n} certified (window {w})")

        indices = cfg.outputs if cfg.outputs is not None else range(net.output_size)
        last = table.layers[n]
        outputs = [
            OutputBound(
                index=int(j),
                epsilon_upper=max(abs(float(last.dx_lo[j])), abs(float(last.dx_hi[j]))),
                dx_lower=float(last.dx_lo[j]),
                dx_upper=float(last.dx_hi[j]),
            )
            for j in indices
        ]
        self.stats.wall_time_seconds = time.perf_counter() - start
        report = CertReport(outputs=outputs, ranges=table, stats=self.stats, config=cfg, network=net.name)
        logger.info(
            f"Certified '{net.name}': eps_upper={report.epsilon():.6g} "
            f"({self.stats.lp_solves} LPs, {self.stats.milp_solves} MILPs, "
            f"{self.stats.wall_time_seconds:.2f}s)"
        )
        return report

    def _tighten_following(self, table: RangeTable, i: int) -> None:
        """Re-run interval propagation past layer i and keep the tighter bound."""
        for k in range(i + 1, self.net.depth + 1):
            fresh = interval_step(self.net.affine[k - 1], table.layers[k - 1], table.hat_x(k - 1), table.global_mode)
            old = table.layers[k]
            for lo_name, hi_name in (("y_lo", "y_hi"), ("x_lo", "x_hi"), ("dy_lo", "dy_hi"), ("dx_lo", "dx_hi")):
                setattr(old, lo_name, np.maximum(getattr(old, lo_name), getattr(fresh, lo_name)))
                setattr(old, hi_name, np.minimum(getattr(old, hi_name), getattr(fresh, hi_name)))

    def _refine_set(self, i: int, j: int, w: int, stage: Stage) -> frozenset[NeuronRef]:
        cfg = self.cfg
        scores = score_neurons(self._ranking, range(i - w + 1, i))
        if cfg.refine_fraction is not None:
            count = math.ceil(cfg.refine_fraction * len(scores))
        elif cfg.refine_count is None:
            count = len(scores)
        else:
            count = cfg.refine_count
        chosen = set(select_refinement(scores, count))
        if stage is Stage.X and cfg.target_refine:
            chosen.add(NeuronRef(i, j))
        return frozenset(chosen)

    def _encode(self, table: RangeTable, i: int, j: int, w: int, stage: Stage, stats: CertStats) -> TwinEncoding:
        cfg = self.cfg
        refine = self._refine_set(i, j, w, stage)
        stats.refined_neurons += len(refine)
        enc_cfg = EncodingConfig(
            scheme=cfg.scheme,
            relaxation=Relaxation.LPR,
            refine_set=refine,
            mode=cfg.mode,
            center=cfg.center,
            include_hat_relaxation=cfg.include_hat_relaxation,
            prune=cfg.prune,
        )
        sub = decompose(self.net, i, j, stage, w)
        return encode_twin_subnet(sub, table, enc_cfg, cfg.domain, cfg.delta)

    def _optimize(self, enc: TwinEncoding, solver: Optional[SimplexSolver], name: str, sense: Sense,
                  stats: CertStats) -> float:
        enc.objective(name, sense)
        cs = enc.cs
        if cs.binaries:
            result = solve_milp(cs, self.cfg.node_limit, backend=self.cfg.solver, solver=solver)
            stats.milp_solves += 1
            stats.bb_nodes += result.nodes_explored
        elif solver is not None:
            result = solver.solve()
            stats.lp_solves += 1
        else:
            result = solve_lp(cs, backend=self.cfg.solver)
            stats.lp_solves += 1

        target = enc.target
        if result.status is SolveStatus.INFEASIBLE:
            logger.error(f"{cs.name}: {sense.value} {name} is infeasible")
            raise InfeasibleSubproblemError(
                f"sub-problem {sense.value} {name} has no feasible point",
                layer=target.layer, neuron=target.index, stage=enc.sub.stage.value,
            )
        if result.status is SolveStatus.BOUND_ONLY:
            stats.truncated_milps += 1
        logger.debug(f"{cs.name}: {sense.value} {name} -> {result.dual_bound:.9g} ({result.status.value})")
        return result.dual_bound

    def _solver(self, enc: TwinEncoding) -> Optional[SimplexSolver]:
        # one solver per encoding so successive objectives warm start
        return SimplexSolver(enc.cs) if self.cfg.solver is Backend.SIMPLEX else None

    def _solve_pair(self, enc: TwinEncoding, solver: Optional[SimplexSolver], name: str,
                    lo: float, hi: float, stats: CertStats) -> tuple[float, float]:
        new_lo = self._optimize(enc, solver, name, Sense.MINIMIZE, stats)
        new_hi = self._optimize(enc, solver, name, Sense.MAXIMIZE, stats)
        return max(lo, new_lo), min(hi, new_hi)

    def _certify_neuron(self, table: RangeTable, i: int, j: int, w: int) -> _NeuronResult:
        r = table.layers[i]
        stats = CertStats()
        y = (float(r.y_lo[j]), float(r.y_hi[j]))
        dy = (float(r.dy_lo[j]), float(r.dy_hi[j]))
        relu = table.relu[i]

        if relu and self._both_stable(table, i, j, y, dy):
            stats.skipped_stable += 1
            return _NeuronResult(y, dy, (float(r.dx_lo[j]), float(r.dx_hi[j])), stats)

        if self.cfg.prebounds is Prebounds.LP or not relu:
            enc = self._encode(table, i, j, w, Stage.Y, stats)
            solver = self._solver(enc)
            if self.cfg.prebounds is Prebounds.LP:
                y = self._solve_pair(enc, solver, "y", *y, stats)
            dy = self._solve_pair(enc, solver, "dy", *dy, stats)
            dy = (min(dy[0], 0.0), max(dy[1], 0.0))
        if not relu:
            return _NeuronResult(y, dy, dy, stats)

        view = self._with_target(table, i, j, y, dy)
        dx_range = (float(view.layers[i].dx_lo[j]), float(view.layers[i].dx_hi[j]))
        if self._both_stable(view, i, j, y, dy):
            stats.skipped_stable += 1
            return _NeuronResult(y, dy, dx_range, stats)
        enc = self._encode(view, i, j, w, Stage.X, stats)
        dx = self._solve_pair(enc, self._solver(enc), "dx", *dx_range, stats)
        return _NeuronResult(y, dy, (min(dx[0], 0.0), max(dx[1], 0.0)), stats)

    @staticmethod
    def _both_stable(table: RangeTable, i: int, j: int, y, dy) -> bool:
        h_lo, h_hi = table.hat_y(i)
        base = y[1] <= 0.0 or y[0] >= 0.0
        hat = h_hi[j] <= 0.0 or h_lo[j] >= 0.0
        return base and hat

    @staticmethod
    def _with_target(table: RangeTable, i: int, j: int, y, dy) -> RangeTable:
        """A view of table where neuron (i, j) carries its fresh y/dy ranges."""
        layer = table.layers[i].copy()
        layer.y_lo[j], layer.y_hi[j] = y
        layer.dy_lo[j], layer.dy_hi[j] = dy
        layer.x_lo[j], layer.x_hi[j] = max(y[0], 0.0), max(y[1], 0.0)
        view = RangeTable(list(table.layers), table.relu, table.global_mode)
        view.layers[i] = layer
        hat_lo, hat_hi = view.hat_y(i)
        lo, hi = relu_distance_range(
            layer.y_lo[j:j + 1], layer.y_hi[j:j + 1], layer.dy_lo[j:j + 1], layer.dy_hi[j:j + 1],
            hat_lo[j:j + 1], hat_hi[j:j + 1],
        )
        layer.dx_lo[j] = max(float(layer.dx_lo[j]), float(lo[0]))
        layer.dx_hi[j] = min(float(layer.dx_hi[j]), float(hi[0]))
        return view


def certify_global(net: Network, cfg: CertConfig, progress: Optional[ProgressCallback] = None) -> CertReport:
    if cfg.mode is not Mode.GLOBAL:
        cfg = replace(cfg, mode=Mode.GLOBAL, center=None)
    return Certifier(net, cfg, progress).run()


def certify_local(
    net: Network, x0: Sequence[float], cfg: CertConfig, progress: Optional[ProgressCallback] = None
) -> CertReport:
    cfg = replace(cfg, mode=Mode.LOCAL, center=tuple(float(v) for v in x0))
    return Certifier(net, cfg, progress).run()
