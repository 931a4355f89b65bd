"""Reference bounds that sandwich the certified one.

``exact_epsilon`` solves the full twin MILP, ``grid_oracle`` enumerates a
lattice of input pairs and ``pgd_epsilon`` runs a sign-gradient attack
from dataset samples. Only the first is an upper bound; the other two
are attainable variations and therefore lower bounds.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .encode import EncodingConfig, Relaxation, Scheme, encode_twin_subnet
from .errors import GuardExceededError, NetworkFormatError, ShapeError, SolverError
from .lincore import Sense, SimplexSolver, SolveStatus, solve_milp
from .model import Box, Network, Stage, decompose, forward, gradient, propagate_intervals
from .workers import WorkerPool

logger = logging.getLogger(__name__)


class ExactGuard:
    MAX_UNSTABLE = 24
    MAX_GRID_DIM = 3


@dataclass(frozen=True)
class AttackConfig:
    steps: int = 50
    step_size: Optional[float] = None
    restarts: int = 3
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")

    def step_for(self, delta: float) -> float:
        return self.step_size if self.step_size is not None else delta / 8.0

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "step_size": self.step_size,
            "restarts": self.restarts,
            "rng_seed": self.rng_seed,
        }


@dataclass(frozen=True, eq=False)
class Dataset:
    rows: np.ndarray

    def __post_init__(self) -> None:
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if rows.size == 0:
            raise ShapeError("dataset is empty")
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return int(self.rows.shape[0])

    def validate(self, domain: Box) -> None:
        if self.rows.shape[1] != domain.dim:
            raise ShapeError(f"dataset rows have {self.rows.shape[1]} entries, domain has {domain.dim}")
        for index, row in enumerate(self.rows):
            if not domain.contains(row, tol=1e-12):
                raise ShapeError(f"dataset row {index} lies outside the domain")


def load_dataset(path: Union[str, Path]) -> Dataset:
    """Read a CSV of input vectors; a non-numeric first line is taken as a header."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for line_no, record in enumerate(csv.reader(fh), start=1):
            if not record or all(not cell.strip() for cell in record):
                continue
            try:
                rows.append([float(cell) for cell in record])
            except ValueError as e:
                if line_no == 1:
                    continue
                raise NetworkFormatError(f"{path}:{line_no}: not a numeric row: {e}") from e
    if not rows:
        raise NetworkFormatError(f"{path}: no data rows")
    if len({len(r) for r in rows}) != 1:
        raise NetworkFormatError(f"{path}: rows have different lengths")
    return Dataset(np.array(rows))


def _count_unstable(net: Network, domain: Box, delta: float) -> int:
    table = propagate_intervals(net, domain, delta)
    count = 0
    for k in range(1, net.depth + 1):
        if not table.relu[k]:
            continue
        r = table.layers[k]
        h_lo, h_hi = table.hat_y(k)
        count += int(np.sum((r.y_lo < 0) & (r.y_hi > 0)))
        count += int(np.sum((h_lo < 0) & (h_hi > 0)))
    return count


def exact_bounds(
    net: Network,
    domain: Box,
    delta: float,
    output: int = 0,
    force: bool = False,
    node_limit: int = 1_000_000,
) -> tuple[float, float]:
    """Minimum and maximum of F_j(x_hat) - F_j(x) over all admissible pairs.

    Both network copies are Big-M encoded with interval pre-bounds. If the
    node limit truncates a solve, the returned bound is still sound.

    Raises:
        GuardExceededError: If the net has too many unstable relus and force is off.
    """
    if not 0 <= output < net.output_size:
        raise ShapeError(f"output index {output} outside [0, {net.output_size})")
    unstable = _count_unstable(net, domain, delta)
    if unstable > ExactGuard.MAX_UNSTABLE:
        if not force:
            raise GuardExceededError(
                f"{unstable} unstable relu copies exceed the exact-baseline guard of "
                f"{ExactGuard.MAX_UNSTABLE}; pass force to run anyway"
            )
        logger.warning(f"Exact baseline forced on {unstable} unstable relu copies")

    table = propagate_intervals(net, domain, delta)
    stage = Stage.X if table.relu[net.depth] else Stage.Y
    sub = decompose(net, net.depth, output, stage, net.depth)
    cfg = EncodingConfig(scheme=Scheme.BTNE, relaxation=Relaxation.EXACT)
    enc = encode_twin_subnet(sub, table, cfg, domain, delta)
    name = "dx" if stage is Stage.X else "dy"
    solver = SimplexSolver(enc.cs)

    bounds = []
    for sense in (Sense.MINIMIZE, Sense.MAXIMIZE):
        enc.objective(name, sense)
        result = solve_milp(enc.cs, node_limit, solver=solver)
        if result.status is SolveStatus.INFEASIBLE:
            logger.error(f"Exact twin MILP {sense.value} is infeasible")
            raise SolverError(f"exact twin MILP ({sense.value}) reported infeasible")
        bounds.append(result.dual_bound)
        logger.debug(f"exact {sense.value}: {result.dual_bound:.9g} after {result.nodes_explored} nodes")
    return bounds[0], bounds[1]


def exact_epsilon(
    net: Network, domain: Box, delta: float, output: int = 0, force: bool = False
) -> float:
    lo, hi = exact_bounds(net, domain, delta, output, force)
    return max(abs(lo), abs(hi))


def grid_oracle(net: Network, domain: Box, delta: float, output: int = 0, step: float = 0.01) -> float:
    """Largest |F_j(x_hat) - F_j(x)| over lattice pairs of pitch ``step``.

    Raises:
        GuardExceededError: If the input has more than three dimensions.
    """
    if net.input_size > ExactGuard.MAX_GRID_DIM:
        raise GuardExceededError(
            f"grid oracle supports at most {ExactGuard.MAX_GRID_DIM} inputs, network has {net.input_size}"
        )
    if step <= 0:
        raise ValueError(f"grid step must be > 0, got {step}")
    counts = [int(math.floor((hi - lo) / step + 1e-9)) + 1 for lo, hi in zip(domain.lower, domain.upper)]
    axes = [lo + step * np.arange(c) for lo, c in zip(domain.lower, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.reshape(-1) for m in mesh], axis=1)
    values = net.evaluate_batch(points)[:, output].reshape(counts)

    k_max = int(math.floor(delta / step + 1e-9))
    best = 0.0
    for offset in itertools.product(range(-k_max, k_max + 1), repeat=len(counts)):
        nonzero = [o for o in offset if o != 0]
        # |F(a) - F(b)| is symmetric, so half of the offsets suffice
        if not nonzero or nonzero[0] < 0:
            continue
        base = tuple(slice(max(0, -o), c - max(0, o)) for o, c in zip(offset, counts))
        moved = tuple(slice(max(0, o), c - max(0, -o)) for o, c in zip(offset, counts))
        if any(s.stop <= s.start for s in base):
            continue
        best = max(best, float(np.max(np.abs(values[moved] - values[base]))))
    logger.info(f"Grid oracle (step {step}, {points.shape[0]} points): {best:.6g}")
    return best


def fgsm_perturb(
    net: Network,
    x: Sequence[float],
    delta: float,
    output: int = 0,
    sense: Sense = Sense.MAXIMIZE,
    domain: Optional[Box] = None,
) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    direction = 1.0 if Sense(sense) is Sense.MAXIMIZE else -1.0
    perturbed = x + direction * delta * np.sign(gradient(net, x, output))
    if domain is not None:
        perturbed = np.clip(perturbed, domain.lower, domain.upper)
    return perturbed


@dataclass(frozen=True, eq=False)
class AttackResult:
    epsilon_lower: float
    sample_index: int
    base: np.ndarray
    perturbed: np.ndarray

    def to_dict(self) -> dict:
        return {
            "epsilon_lower": self.epsilon_lower,
            "sample_index": self.sample_index,
            "base": self.base.tolist(),
            "perturbed": self.perturbed.tolist(),
        }


def _attack_sample(
    net: Network, x: np.ndarray, index: int, domain: Box, delta: float, output: int, ac: AttackConfig
) -> AttackResult:
    rng = np.random.default_rng([ac.rng_seed, index])
    lo = np.maximum(-delta, domain.lower - x)
    hi = np.minimum(delta, domain.upper - x)
    step = ac.step_for(delta)
    f0 = float(net.evaluate_batch(x[None, :])[0, output])
    best, best_eta = 0.0, np.zeros_like(x)
    for direction in (1.0, -1.0):
        for _ in range(ac.restarts):
            eta = rng.uniform(lo, hi)
            for it in range(ac.steps + 1):
                value = abs(float(forward(net, x + eta).output[output]) - f0)
                if value > best:
                    best, best_eta = value, eta.copy()
                if it == ac.steps:
                    break
                g = gradient(net, x + eta, output)
                eta = np.clip(eta + direction * step * np.sign(g), lo, hi)
    return AttackResult(best, index, x.copy(), x + best_eta)


def pgd_search(
    net: Network,
    dataset: Dataset,
    domain: Box,
    delta: float,
    output: int = 0,
    ac: Optional[AttackConfig] = None,
    jobs: int = 1,
) -> AttackResult:
    """Best attack over the dataset; per-sample generators make it order-free."""
    ac = ac or AttackConfig()
    dataset.validate(domain)
    if not 0 <= output < net.output_size:
        raise ShapeError(f"output index {output} outside [0, {net.output_size})")
    with WorkerPool(jobs) as pool:
        results = pool.map(
            lambda item: _attack_sample(net, item[1], item[0], domain, delta, output, ac),
            list(enumerate(dataset.rows)),
        )
    best = max(results, key=lambda r: (r.epsilon_lower, -r.sample_index))
    logger.info(f"PGD over {len(dataset)} samples: eps_lower={best.epsilon_lower:.6g}")
    return best


def pgd_epsilon(
    net: Network,
    dataset: Dataset,
    domain: Box,
    delta: float,
    output: int = 0,
    ac: Optional[AttackConfig] = None,
) -> float:
    return pgd_search(net, dataset, domain, delta, output, ac).epsilon_lower
