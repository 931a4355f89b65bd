"""Closed-loop safety demo for a perception-in-the-loop linear controller.

The plant is x[k+1] = A x + B u + E w1 + w2 with state feedback
u = K (x + [dd, 0, ...]), where dd is the perception error on the first
state component. A robust invariant set is found by iterating
S <- S & pre(S) on halfspace polytopes, with every containment question
answered by an LP.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DisturbanceBoundError, NetworkFormatError, ShapeError, SolverError
from .lincore import ConstraintSystem, LinExpr, Relation, Sense, SimplexSolver, SolveStatus

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class Policy(Enum):
    RANDOM = "random"
    EXTREME = "extreme"
    SEEDED = "seeded"


@dataclass(frozen=True, eq=False)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    K: np.ndarray
    w1_bound: float
    w2_bound: np.ndarray
    dd_bound: float
    safe_lower: np.ndarray
    safe_upper: np.ndarray

    def __post_init__(self) -> None:
        a = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = a.shape[0]
        if a.shape != (n, n):
            raise ShapeError(f"A must be square, got {a.shape}")
        vectors = {}
        for name in ("B", "E", "K", "w2_bound", "safe_lower", "safe_upper"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if v.size != n:
                raise ShapeError(f"{name} has {v.size} entries, state dimension is {n}")
            vectors[name] = v
        if self.w1_bound < 0 or self.dd_bound < 0 or np.any(vectors["w2_bound"] < 0):
            raise ValueError("disturbance bounds must be >= 0")
        if np.any(vectors["safe_lower"] > vectors["safe_upper"]):
            raise ValueError("safe_lower exceeds safe_upper")
        object.__setattr__(self, "A", a)
        for name, v in vectors.items():
            object.__setattr__(self, name, v)
        object.__setattr__(self, "w1_bound", float(self.w1_bound))
        object.__setattr__(self, "dd_bound", float(self.dd_bound))

    @property
    def dim(self) -> int:
        return int(self.A.shape[0])

    @property
    def closed_loop(self) -> np.ndarray:
        return self.A + np.outer(self.B, self.K)

    @property
    def perception_gain(self) -> np.ndarray:
        """Effect of a unit perception error on the next state: B * K[0]."""
        return self.B * self.K[0]

    def with_bounds(self, **bounds) -> "LinearSystem":
        return replace(self, **bounds)

    def safe_polytope(self) -> "Polytope":
        return Polytope.from_box(self.safe_lower, self.safe_upper)

    @staticmethod
    def from_dict(data: dict) -> "LinearSystem":
        try:
            return LinearSystem(
                A=np.asarray(data["A"], dtype=float),
                B=np.asarray(data["B"], dtype=float),
                E=np.asarray(data["E"], dtype=float),
                K=np.asarray(data["K"], dtype=float),
                w1_bound=float(data["w1_bound"]),
                w2_bound=np.asarray(data["w2_bound"], dtype=float),
                dd_bound=float(data["dd_bound"]),
                safe_lower=np.asarray(data["safe_lower"], dtype=float),
                safe_upper=np.asarray(data["safe_upper"], dtype=float),
            )
        except (KeyError, TypeError) as e:
            raise NetworkFormatError(f"malformed system config: {e}") from e

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "E": self.E.tolist(),
            "K": self.K.tolist(),
            "w1_bound": self.w1_bound,
            "w2_bound": self.w2_bound.tolist(),
            "dd_bound": self.dd_bound,
            "safe_lower": self.safe_lower.tolist(),
            "safe_upper": self.safe_upper.tolist(),
        }


def load_system(path: PathLike) -> LinearSystem:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise NetworkFormatError(f"{path}: not valid JSON: {e}") from e
    return LinearSystem.from_dict(data)


def save_system(system: LinearSystem, path: PathLike) -> None:
    text = json.dumps(system.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def step(
    system: LinearSystem,
    x: Sequence[float],
    w1: float = 0.0,
    w2: Optional[Sequence[float]] = None,
    dd: float = 0.0,
    tol: float = 1e-12,
) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    w2 = np.zeros(system.dim) if w2 is None else np.asarray(w2, dtype=float)
    if abs(w1) > system.w1_bound + tol:
        raise DisturbanceBoundError(f"|w1|={abs(w1)} exceeds bound {system.w1_bound}")
    if np.any(np.abs(w2) > system.w2_bound + tol):
        raise DisturbanceBoundError(f"w2={w2.tolist()} exceeds bound {system.w2_bound.tolist()}")
    if abs(dd) > system.dd_bound + tol:
        raise DisturbanceBoundError(f"|dd|={abs(dd)} exceeds bound {system.dd_bound}")
    perceived = x.copy()
    perceived[0] += dd
    return system.A @ x + system.B * float(system.K @ perceived) + system.E * w1 + w2


@dataclass(frozen=True, eq=False)
class Polytope:
    """{x : H x <= g}; LPs over it use bbox as finite variable bounds."""
    H: np.ndarray
    g: np.ndarray
    bbox_lower: np.ndarray
    bbox_upper: np.ndarray

    TOL = 1e-9

    def __post_init__(self) -> None:
        h = np.atleast_2d(np.asarray(self.H, dtype=float))
        g = np.asarray(self.g, dtype=float).reshape(-1)
        if h.shape[0] != g.size:
            raise ShapeError(f"{h.shape[0]} normals but {g.size} offsets")
        object.__setattr__(self, "H", h)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "bbox_lower", np.asarray(self.bbox_lower, dtype=float).reshape(-1))
        object.__setattr__(self, "bbox_upper", np.asarray(self.bbox_upper, dtype=float).reshape(-1))

    @staticmethod
    def from_box(lower: Sequence[float], upper: Sequence[float]) -> "Polytope":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        n = lower.size
        h = np.vstack([np.eye(n), -np.eye(n)])
        g = np.concatenate([upper, -lower])
        margin = np.maximum(upper - lower, 1.0)
        return Polytope(h, g, lower - margin, upper + margin)

    @property
    def dim(self) -> int:
        return int(self.H.shape[1])

    @property
    def num_halfspaces(self) -> int:
        return int(self.H.shape[0])

    def contains(self, x: Sequence[float], tol: float = TOL) -> bool:
        return bool(np.all(self.H @ np.asarray(x, dtype=float) <= self.g + tol))

    def intersect(self, other: "Polytope") -> "Polytope":
        return Polytope(
            np.vstack([self.H, other.H]),
            np.concatenate([self.g, other.g]),
            np.maximum(self.bbox_lower, other.bbox_lower),
            np.minimum(self.bbox_upper, other.bbox_upper),
        )

    def _anchor(self) -> np.ndarray:
        """Origin of the shifted LP variables, inside the polytope when the origin or bbox centre is."""
        origin = np.clip(np.zeros(self.dim), self.bbox_lower, self.bbox_upper)
        for c in (origin, 0.5 * (self.bbox_lower + self.bbox_upper)):
            if self.contains(c):
                return c
        return origin

    def _system(self, rows: Optional[np.ndarray] = None,
                anchor: Optional[np.ndarray] = None) -> tuple[ConstraintSystem, np.ndarray]:
        """LP over x = c + up - down with up, down >= 0.

        For an anchor c inside the polytope the slack basis at up = down = 0
        is feasible, so no solve needs a phase I.
        """
        c = self._anchor() if anchor is None else anchor
        cs = ConstraintSystem("polytope")
        up = [cs.add_variable(0.0, hi - ci) for ci, hi in zip(c, self.bbox_upper)]
        down = [cs.add_variable(0.0, ci - lo) for ci, lo in zip(c, self.bbox_lower)]
        indices = range(self.num_halfspaces) if rows is None else np.flatnonzero(rows)
        for i in indices:
            terms = {}
            for col, v in enumerate(self.H[i]):
                if v != 0.0:
                    terms[up[col]] = float(v)
                    terms[down[col]] = -float(v)
            cs.add_constraint(LinExpr(terms), Relation.LE, float(self.g[i] - self.H[i] @ c))
        return cs, c

    @staticmethod
    def _maximize(solver: SimplexSolver, h: np.ndarray, c: np.ndarray) -> Optional[float]:
        result = solver.solve(objective=np.concatenate([h, -h]), sense=Sense.MAXIMIZE)
        if result.status is SolveStatus.INFEASIBLE:
            return None
        return result.objective_value + float(h @ c)

    def support(self, normals: np.ndarray) -> list[Optional[float]]:
        """max h.x over the polytope for each row h; None when empty."""
        normals = np.atleast_2d(normals)
        cs, c = self._system()
        solver = SimplexSolver(cs)
        values: list[Optional[float]] = []
        for h in normals:
            value = self._maximize(solver, h, c)
            if value is None:
                return [None] * len(normals)
            values.append(value)
        return values

    def is_empty(self) -> bool:
        cs, _ = self._system()
        result = SimplexSolver(cs).solve(objective=np.zeros(2 * self.dim))
        return result.status is SolveStatus.INFEASIBLE

    def is_subset_of(self, other: "Polytope", tol: float = TOL) -> bool:
        if self.is_empty():
            return True
        support = self.support(other.H)
        return all(s <= g + tol for s, g in zip(support, other.g))

    def remove_redundant(self, tol: float = TOL) -> "Polytope":
        """Drop halfspaces implied by the remaining ones."""
        keep = np.ones(self.num_halfspaces, dtype=bool)
        c = self._anchor()
        for i in range(self.num_halfspaces):
            if not np.any(self.H[i]):
                keep[i] = False
                continue
            keep[i] = False
            cs, _ = self._system(keep, c)
            value = self._maximize(SimplexSolver(cs), self.H[i], c)
            if value is None:
                keep[i] = True
                break
            if value > self.g[i] + tol:
                keep[i] = True
        return Polytope(self.H[keep], self.g[keep], self.bbox_lower, self.bbox_upper)

    def to_dict(self) -> dict:
        return {"H": self.H.tolist(), "g": self.g.tolist()}


def _disturbance_effect(system: LinearSystem, normals: np.ndarray) -> np.ndarray:
    """Worst-case growth of each h.x over one step of disturbance."""
    return (
        system.w1_bound * np.abs(normals @ system.E)
        + np.abs(normals) @ system.w2_bound
        + system.dd_bound * np.abs(normals @ system.perception_gain)
    )


def pre_set(system: LinearSystem, s: Polytope) -> Polytope:
    """States whose successor lies in s for every admissible disturbance."""
    h = s.H
    return Polytope(h @ system.closed_loop, s.g - _disturbance_effect(system, h), s.bbox_lower, s.bbox_upper)


@dataclass(frozen=True, eq=False)
class InvariantResult:
    polytope: Optional[Polytope]
    converged: bool
    iterations: int

    @property
    def empty(self) -> bool:
        return self.converged and self.polytope is None

    @property
    def certified(self) -> bool:
        """True when the polytope is a fixpoint, so an invariance claim holds."""
        return self.converged and self.polytope is not None

    def verdict(self) -> str:
        if not self.converged:
            return f"invariant set: not certified (no fixpoint after {self.iterations} iterations)"
        if self.polytope is None:
            return "invariant set: empty"
        return f"invariant set: nonempty ({self.polytope.num_halfspaces} halfspaces)"

    def to_dict(self) -> dict:
        if not self.converged:
            verdict = "unknown"
        else:
            verdict = "empty" if self.polytope is None else "nonempty"
        return {
            "verdict": verdict,
            "converged": self.converged,
            "iterations": self.iterations,
            "method": "substitute method: halfspace polytope iteration",
            "polytope": self.polytope.to_dict() if self.polytope is not None else None,
        }


PRUNE_EVERY = 50


def invariant_set(system: LinearSystem, safe: Optional[Polytope] = None, max_iters: int = 500) -> InvariantResult:
    """Largest robust invariant subset of safe reachable by pre-set iteration.

    Level k holds the safe rows pulled back k steps through the closed loop,
    h Acl^k x <= g - t_k(h), where t_k sums the worst-case disturbance
    effect of the k steps. The intersection of levels 0..k is the k-th
    iterate of S <- S & pre(S). Only level rows that cut the current set
    are kept, and the set is a fixpoint once a whole level is implied.
    """
    base = (safe or system.safe_polytope()).remove_redundant()
    if base.is_empty():
        return InvariantResult(None, True, 0)
    acl = system.closed_loop
    normals, offsets = base.H.copy(), base.g.copy()
    tightening = np.zeros(base.num_halfspaces)
    s = base
    for it in range(1, max_iters + 1):
        tightening = tightening + _disturbance_effect(system, normals)
        normals = normals @ acl
        bounds = offsets - tightening
        scale = np.linalg.norm(normals, axis=1)
        live = scale > Polytope.TOL
        if np.any(~live & (bounds < -Polytope.TOL)):
            logger.info(f"Invariant set empty after {it} iterations (disturbance exceeds a vanished row)")
            return InvariantResult(None, True, it)
        h = normals[live] / scale[live, None]
        b = bounds[live] / scale[live]
        support = s.support(h) if h.size else []
        if support and support[0] is None:
            logger.info(f"Invariant set empty after {it} iterations")
            return InvariantResult(None, True, it)
        cuts = np.array([v > bound + Polytope.TOL for v, bound in zip(support, b)], dtype=bool)
        if not np.any(cuts):
            s = s.remove_redundant()
            logger.info(f"Invariant set converged after {it} iterations ({s.num_halfspaces} halfspaces)")
            return InvariantResult(s, True, it)
        s = Polytope(np.vstack([s.H, h[cuts]]), np.concatenate([s.g, b[cuts]]), s.bbox_lower, s.bbox_upper)
        logger.debug(f"Level {it}: {int(cuts.sum())} cutting rows, {s.num_halfspaces} total")
        if it % PRUNE_EVERY == 0:
            s = s.remove_redundant()
    if s.is_empty():
        logger.info(f"Invariant set empty after {max_iters} iterations")
        return InvariantResult(None, True, max_iters)
    logger.warning(f"Invariant set iteration did not converge in {max_iters} iterations")
    return InvariantResult(s.remove_redundant(), False, max_iters)


def max_tolerable_error(
    system: LinearSystem,
    safe: Optional[Polytope] = None,
    tol: float = 1e-4,
    max_iters: int = 500,
) -> Optional[float]:
    """Largest dd_bound (to within tol) whose invariant set is nonempty and converged."""

    def admits(dd: float) -> bool:
        result = invariant_set(system.with_bounds(dd_bound=dd), safe, max_iters)
        return result.converged and not result.empty

    if not admits(0.0):
        return None
    lo, hi = 0.0, 1.0
    for _ in range(40):
        if not admits(hi):
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise SolverError("perception error bound search did not find an inadmissible value")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if admits(mid) else (lo, mid)
    logger.info(f"Largest tolerable perception error: {lo:.6g}")
    return lo


def perception_bound(model_error: float, certified_epsilon: float) -> float:
    """Perception error bound when a network's output feeds the distance estimate."""
    if model_error < 0 or certified_epsilon < 0:
        raise ValueError("error bounds must be >= 0")
    return model_error + certified_epsilon


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    disturbances: np.ndarray
    safe: bool
    exit_step: Optional[int]

    def to_dict(self) -> dict:
        return {
            "steps": int(self.disturbances.shape[0]),
            "safe": self.safe,
            "exit_step": self.exit_step,
        }


def _draw(system: LinearSystem, steps: int, policy: Policy, seed: int) -> np.ndarray:
    """Columns: w1, w2[0..n), dd."""
    bounds = np.concatenate([[system.w1_bound], system.w2_bound, [system.dd_bound]])
    if policy is Policy.RANDOM:
        rng = np.random.default_rng(seed)
        return rng.uniform(-1.0, 1.0, size=(steps, bounds.size)) * bounds
    if policy is Policy.EXTREME:
        rng = np.random.default_rng(seed)
        return rng.choice([-1.0, 1.0], size=(steps, bounds.size)) * bounds
    draws = np.empty((steps, bounds.size))
    for k in range(steps):
        draws[k] = np.random.default_rng([seed, k]).uniform(-1.0, 1.0, size=bounds.size) * bounds
    return draws


def simulate(
    system: LinearSystem,
    x0: Sequence[float],
    steps: int,
    policy: Union[Policy, str] = Policy.EXTREME,
    seed: int = 0,
    region: Optional[Polytope] = None,
    stop_on_exit: bool = True,
) -> Trajectory:
    """Run the closed loop and check every state against region (the safe box by default)."""
    region = region or system.safe_polytope()
    x = np.asarray(x0, dtype=float)
    if not region.contains(x):
        raise ValueError("initial state lies outside the checked region")
    policy = Policy(policy)
    draws = _draw(system, steps, policy, seed)
    n = system.dim
    kicks = (
        np.outer(draws[:, 0], system.E)
        + draws[:, 1:1 + n]
        + np.outer(draws[:, -1], system.perception_gain)
    )
    acl = system.closed_loop
    states = np.empty((steps + 1, n))
    states[0] = x
    exit_step = None
    for k in range(steps):
        x = acl @ x + kicks[k]
        states[k + 1] = x
        if not region.contains(x):
            exit_step = k + 1
            if stop_on_exit:
                states = states[:k + 2]
                draws = draws[:k + 1]
                break
    safe = exit_step is None
    logger.info(f"Simulated {draws.shape[0]} steps ({policy.value}): {'safe' if safe else f'exit at {exit_step}'}")
    return Trajectory(states, draws, safe, exit_step)


def write_trajectory(traj: Trajectory, path: PathLike) -> None:
    n = traj.states.shape[1]
    header = ["step"] + [f"x{i + 1}" for i in range(n)] + ["w1"] + [f"w2_{i + 1}" for i in range(n)] + ["dd"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k, state in enumerate(traj.states):
            disturbance = traj.disturbances[k] if k < traj.disturbances.shape[0] else np.full(n + 2, np.nan)
            writer.writerow([k] + [f"{v:.12g}" for v in state] + [f"{v:.12g}" for v in disturbance])
