"""Linear and mixed-integer programming for the certification sub-problems.

The LP text dump written by :meth:`ConstraintSystem.to_lp_text` follows the
CPLEX LP grammar subset below, so a system can be replayed in an external
solver::

    \\ comment lines start with a backslash
    Maximize | Minimize
     obj: <terms> [+ <constant>]
    Subject To
     c<k>: <terms> <= | = <rhs>
    Bounds
     <lower> <= x<i> <= <upper>
    Binaries
     x<i> ...
    End

where ``<terms>`` is a sequence of ``+ <coef> x<i>`` / ``- <coef> x<i>``.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import SolverError

logger = logging.getLogger(__name__)


class Relation(Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class Sense(Enum):
    MAXIMIZE = "max"
    MINIMIZE = "min"

    @property
    def sign(self) -> float:
        return -1.0 if self is Sense.MAXIMIZE else 1.0


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    BOUND_ONLY = "bound_only"


class Backend(Enum):
    SIMPLEX = "simplex"
    HIGHS = "highs"


Number = Union[int, float]


class LinExpr:
    """Sparse affine expression sum(coef * var) + constant."""

    __slots__ = ("terms", "constant")

    def __init__(self, terms: Optional[Mapping[int, float]] = None, constant: float = 0.0):
        self.terms: dict[int, float] = dict(terms) if terms else {}
        self.constant = float(constant)

    @staticmethod
    def var(var_id: int, coef: float = 1.0) -> "LinExpr":
        return LinExpr({var_id: float(coef)})

    @staticmethod
    def const(value: float) -> "LinExpr":
        return LinExpr(None, value)

    @staticmethod
    def combine(pairs: Iterable[tuple[float, "LinExpr"]], constant: float = 0.0) -> "LinExpr":
        """sum(coef * expr) + constant without building intermediates."""
        terms: dict[int, float] = {}
        for coef, expr in pairs:
            if coef == 0.0:
                continue
            constant += coef * expr.constant
            for var_id, value in expr.terms.items():
                terms[var_id] = terms.get(var_id, 0.0) + coef * value
        return LinExpr(terms, constant)

    def __add__(self, other: Union["LinExpr", Number]) -> "LinExpr":
        if isinstance(other, LinExpr):
            return LinExpr.combine(((1.0, self), (1.0, other)))
        return LinExpr(self.terms, self.constant + float(other))

    __radd__ = __add__

    def __sub__(self, other: Union["LinExpr", Number]) -> "LinExpr":
        if isinstance(other, LinExpr):
            return LinExpr.combine(((1.0, self), (-1.0, other)))
        return LinExpr(self.terms, self.constant - float(other))

    def __rsub__(self, other: Number) -> "LinExpr":
        return (-self) + other

    def __mul__(self, scalar: Number) -> "LinExpr":
        return LinExpr.combine(((float(scalar), self),))

    __rmul__ = __mul__

    def __neg__(self) -> "LinExpr":
        return self * -1.0

    def evaluate(self, point: Sequence[float]) -> float:
        return self.constant + sum(coef * point[v] for v, coef in self.terms.items())

    def is_constant(self) -> bool:
        return all(coef == 0.0 for coef in self.terms.values())

    def __repr__(self) -> str:
        return f"LinExpr({self.terms!r}, {self.constant!r})"


@dataclass(frozen=True)
class Variable:
    id: int
    lower: float
    upper: float
    is_binary: bool = False
    name: str = ""


@dataclass(frozen=True)
class Constraint:
    terms: tuple[tuple[int, float], ...]
    relation: Relation
    rhs: float
    name: str = ""


@dataclass
class SolveResult:
    status: SolveStatus
    objective_value: float
    dual_bound: float
    assignment: Optional[np.ndarray] = None
    nodes_explored: int = 0

    @property
    def feasible(self) -> bool:
        return self.status is not SolveStatus.INFEASIBLE


class ConstraintSystem:
    """Variables with finite bounds, linear rows and a linear objective."""

    def __init__(self, name: str = "system"):
        self.name = name
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.objective = LinExpr()
        self.sense = Sense.MAXIMIZE

    @property
    def num_variables(self) -> int:
        return len(self.variables)

    @property
    def binaries(self) -> list[int]:
        return [v.id for v in self.variables if v.is_binary]

    def add_variable(self, lower: float, upper: float, *, binary: bool = False, name: str = "") -> int:
        lower, upper = float(lower), float(upper)
        if not (math.isfinite(lower) and math.isfinite(upper)):
            raise SolverError(f"variable '{name}' needs finite bounds, got [{lower}, {upper}]")
        if lower > upper:
            raise SolverError(f"variable '{name}' has empty bounds [{lower}, {upper}]")
        if binary and (lower < 0.0 or upper > 1.0):
            raise SolverError(f"binary variable '{name}' bounds must lie in [0, 1]")
        var_id = len(self.variables)
        self.variables.append(Variable(var_id, lower, upper, binary, name or f"x{var_id}"))
        return var_id

    def add_constraint(
        self, expr: LinExpr, relation: Relation, rhs: float = 0.0, name: str = ""
    ) -> Optional[int]:
        """Add expr (relation) rhs; >= rows are stored negated as <=.

        Rows whose expression is constant are checked on the spot and not
        stored; a violated one makes the system infeasible.
        """
        rhs = float(rhs) - expr.constant
        terms = [(v, float(c)) for v, c in sorted(expr.terms.items()) if c != 0.0]
        for var_id, coef in terms:
            if not 0 <= var_id < len(self.variables):
                raise SolverError(f"constraint '{name}' references undeclared variable {var_id}")
            if not math.isfinite(coef):
                raise SolverError(f"constraint '{name}' has non-finite coefficient")
        if not math.isfinite(rhs):
            raise SolverError(f"constraint '{name}' has non-finite right-hand side")
        if relation is Relation.GE:
            terms = [(v, -c) for v, c in terms]
            rhs, relation = -rhs, Relation.LE
        if not terms:
            violated = rhs < -LinearSolver.FEAS_TOL if relation is Relation.LE else abs(rhs) > LinearSolver.FEAS_TOL
            if violated:
                # keep an unsatisfiable row so every solve reports infeasible
                self.constraints.append(Constraint((), relation, rhs, name or "trivial"))
            return None
        self.constraints.append(Constraint(tuple(terms), relation, rhs, name or f"c{len(self.constraints)}"))
        return len(self.constraints) - 1

    def set_objective(self, expr: LinExpr, sense: Sense) -> None:
        for var_id in expr.terms:
            if not 0 <= var_id < len(self.variables):
                raise SolverError(f"objective references undeclared variable {var_id}")
        self.objective = expr
        self.sense = sense

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lower = np.array([v.lower for v in self.variables], dtype=float)
        upper = np.array([v.upper for v in self.variables], dtype=float)
        return lower, upper

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.num_variables)
        for var_id, coef in self.objective.terms.items():
            c[var_id] = coef
        return c

    def matrix(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Dense (A, rhs, is_equality) view of the rows."""
        a = np.zeros((len(self.constraints), self.num_variables))
        rhs = np.zeros(len(self.constraints))
        eq = np.zeros(len(self.constraints), dtype=bool)
        for i, row in enumerate(self.constraints):
            for var_id, coef in row.terms:
                a[i, var_id] += coef
            rhs[i] = row.rhs
            eq[i] = row.relation is Relation.EQ
        return a, rhs, eq

    def to_lp_text(self) -> str:
        def fmt_terms(terms: Iterable[tuple[int, float]]) -> str:
            parts = []
            for var_id, coef in terms:
                sign = "-" if coef < 0 else "+"
                parts.append(f"{sign} {abs(coef):.17g} x{var_id}")
            return " ".join(parts) if parts else "0 x0"

        lines = [f"\\ {self.name}", "Maximize" if self.sense is Sense.MAXIMIZE else "Minimize"]
        objective = fmt_terms(sorted(self.objective.terms.items()))
        if self.objective.constant:
            objective += f" + {self.objective.constant:.17g}"
        lines.append(f" obj: {objective}")
        lines.append("Subject To")
        for k, row in enumerate(self.constraints):
            lines.append(f" c{k}: {fmt_terms(row.terms)} {row.relation.value} {row.rhs:.17g}")
        lines.append("Bounds")
        for v in self.variables:
            lines.append(f" {v.lower:.17g} <= x{v.id} <= {v.upper:.17g}")
        if self.binaries:
            lines.append("Binaries")
            lines.append(" " + " ".join(f"x{b}" for b in self.binaries))
        lines.append("End")
        return "\n".join(lines) + "\n"


def check_feasible(cs: ConstraintSystem, point: Sequence[float], tol: float = 1e-6) -> bool:
    point = np.asarray(point, dtype=float)
    if point.size != cs.num_variables:
        return False
    lower, upper = cs.bounds()
    if np.any(point < lower - tol) or np.any(point > upper + tol):
        return False
    for row in cs.constraints:
        lhs = sum(coef * point[v] for v, coef in row.terms)
        if row.relation is Relation.LE and lhs > row.rhs + tol:
            return False
        if row.relation is Relation.EQ and abs(lhs - row.rhs) > tol:
            return False
    return True


class LinearSolver:
    """Tolerances shared by the simplex and branch-and-bound."""
    FEAS_TOL = 1e-7
    OPT_TOL = 1e-9
    PIVOT_TOL = 1e-9
    INT_TOL = 1e-6
    GAP_TOL = 1e-6
    BLAND_AFTER = 1000
    REFACTOR_EVERY = 100


class SimplexSolver(LinearSolver):
    """Bounded-variable revised primal simplex over one ConstraintSystem.

    Each row i becomes a_i x + s_i = b_i with a logical s_i in [0, U_i] for
    <= rows (U_i from the variable box, so it stays finite) and [0, 0] for
    equalities. The basis of the last solve is kept; a new objective with
    unchanged bounds restarts phase II from it.
    """

    def __init__(self, cs: ConstraintSystem):
        self.cs = cs
        a, rhs, eq = cs.matrix()
        self.m, self.n = a.shape
        self.lower, self.upper = cs.bounds()
        self.a = a
        self.rhs = rhs
        self.eq = eq
        self.iterations = 0
        self._state: Optional[tuple] = None

    def _logical_upper(self, lower: np.ndarray, upper: np.ndarray) -> Optional[np.ndarray]:
        row_min = np.where(self.a > 0, self.a * lower, self.a * upper).sum(axis=1)
        slack_hi = self.rhs - row_min
        slack_hi = np.where(self.eq, 0.0, slack_hi)
        tol = self.FEAS_TOL * (1.0 + np.abs(self.rhs))
        if np.any(slack_hi < -tol):
            return None
        return np.maximum(slack_hi, 0.0)

    def solve(
        self,
        objective: Optional[np.ndarray] = None,
        sense: Optional[Sense] = None,
        lower: Optional[np.ndarray] = None,
        upper: Optional[np.ndarray] = None,
    ) -> SolveResult:
        c = self.cs.objective_vector() if objective is None else np.asarray(objective, dtype=float)
        sense = self.cs.sense if sense is None else sense
        lower = self.lower if lower is None else np.asarray(lower, dtype=float)
        upper = self.upper if upper is None else np.asarray(upper, dtype=float)
        if np.any(lower > upper + self.FEAS_TOL):
            return _infeasible(sense)

        cost = np.concatenate([sense.sign * c, np.zeros(2 * self.m)])
        warm = self._state is not None and np.array_equal(self._state[0], lower) \
            and np.array_equal(self._state[1], upper)
        if warm:
            _, _, tab = self._state
            tab = tab.copy()
        else:
            tab = self._cold_start(lower, upper)
            if tab is None:
                return _infeasible(sense)
            if np.any(tab.basis >= self.n + self.m):
                phase_one = np.concatenate([np.zeros(self.n + self.m), np.ones(self.m)])
                tab.run(phase_one)
                infeasibility = float(tab.x[self.n + self.m:].sum())
                scale = 1.0 + float(np.abs(self.rhs).max(initial=0.0))
                if infeasibility > self.FEAS_TOL * scale:
                    logger.debug(f"{self.cs.name}: phase I residual {infeasibility:.3e}, infeasible")
                    self.iterations += tab.iterations
                    return _infeasible(sense)
                tab.fix_artificials()

        tab.run(cost)
        self.iterations += tab.iterations
        self._state = (lower.copy(), upper.copy(), tab)
        x = np.clip(tab.x[:self.n], lower, upper)
        value = float(c @ x + self.cs.objective.constant)
        return SolveResult(SolveStatus.OPTIMAL, value, value, x, 0)

    def _cold_start(self, lower: np.ndarray, upper: np.ndarray) -> Optional["_Tableau"]:
        slack_hi = self._logical_upper(lower, upper)
        if slack_hi is None:
            return None
        m, n = self.m, self.n
        x = np.zeros(n + 2 * m)
        x[:n] = lower
        residual = self.rhs - self.a @ lower
        slack = np.clip(residual, 0.0, slack_hi)
        gap = residual - slack
        needs = np.abs(gap) > self.FEAS_TOL * (1.0 + np.abs(self.rhs))
        signs = np.where(gap < 0.0, -1.0, 1.0)

        columns = np.hstack([self.a, np.eye(m), np.diag(signs)])
        lo = np.concatenate([lower, np.zeros(m), np.zeros(m)])
        hi = np.concatenate([upper, slack_hi, np.where(needs, np.inf, 0.0)])
        basis = np.where(needs, n + m + np.arange(m), n + np.arange(m))
        x[n:n + m] = np.where(needs, slack, residual)
        x[n + m:] = np.where(needs, np.abs(gap), 0.0)
        state = np.full(n + 2 * m, -1, dtype=np.int8)
        state[basis] = 0
        # nonbasic slacks clipped to their upper bound
        at_hi = needs & (slack >= slack_hi) & (slack_hi > 0)
        state[n:n + m][at_hi] = 1
        binv = np.diag(np.where(needs, signs, 1.0))
        return _Tableau(columns, self.rhs, lo, hi, x, basis, state, binv, self)


class _Tableau:
    """Mutable simplex state: basis, nonbasic positions and B^-1."""

    def __init__(self, columns, rhs, lo, hi, x, basis, state, binv, params: LinearSolver):
        self.columns = columns
        self.rhs = rhs
        self.lo = lo
        self.hi = hi
        self.x = x
        self.basis = np.asarray(basis, dtype=int)
        self.state = state
        self.binv = binv
        self.params = params
        self.iterations = 0

    def copy(self) -> "_Tableau":
        return _Tableau(
            self.columns, self.rhs, self.lo, self.hi.copy(), self.x.copy(), self.basis.copy(),
            self.state.copy(), self.binv.copy(), self.params,
        )

    def fix_artificials(self) -> None:
        start = self.columns.shape[1] - self.basis.size
        self.hi[start:] = 0.0
        self.x[start:] = 0.0
        self._refactor()

    def _refactor(self) -> None:
        if self.basis.size == 0:
            return
        try:
            self.binv = np.linalg.inv(self.columns[:, self.basis])
        except np.linalg.LinAlgError as e:
            raise SolverError(f"singular basis during refactorization: {e}") from e
        nonbasic = self.state != 0
        residual = self.rhs - self.columns[:, nonbasic] @ self.x[nonbasic]
        self.x[self.basis] = self.binv @ residual

    def run(self, cost: np.ndarray) -> None:
        p = self.params
        fixed = self.hi - self.lo <= 0.0
        limit = 50 * (self.columns.shape[0] + self.columns.shape[1]) + 1000
        stalled, bland, since_refactor = 0, False, 0
        while True:
            self.iterations += 1
            if self.iterations > limit:
                raise SolverError(f"simplex exceeded {limit} iterations")
            if since_refactor >= p.REFACTOR_EVERY:
                self._refactor()
                since_refactor = 0

            duals = cost[self.basis] @ self.binv if self.basis.size else np.zeros(0)
            reduced = cost - duals @ self.columns
            eligible = (self.state != 0) & ~fixed & (
                ((self.state < 0) & (reduced < -p.OPT_TOL)) | ((self.state > 0) & (reduced > p.OPT_TOL))
            )
            candidates = np.flatnonzero(eligible)
            if candidates.size == 0:
                return
            if bland:
                enter = int(candidates[0])
            else:
                enter = int(candidates[np.argmax(np.abs(reduced[candidates]))])
            direction = 1.0 if self.state[enter] < 0 else -1.0

            alpha = self.binv @ self.columns[:, enter]
            g = direction * alpha
            x_b = self.x[self.basis]
            lo_b, hi_b = self.lo[self.basis], self.hi[self.basis]
            limits = np.full(self.basis.size, np.inf)
            down = g > p.PIVOT_TOL
            up = g < -p.PIVOT_TOL
            limits[down] = (x_b[down] - lo_b[down]) / g[down]
            limits[up] = (hi_b[up] - x_b[up]) / -g[up]
            limits = np.maximum(limits, 0.0)
            t_pivot = float(limits.min()) if limits.size else math.inf
            t_flip = float(self.hi[enter] - self.lo[enter])
            step = min(t_pivot, t_flip)
            if not math.isfinite(step):
                raise SolverError("unbounded direction in a bounded problem")

            stalled = stalled + 1 if step <= 1e-12 else 0
            if stalled >= p.BLAND_AFTER and not bland:
                logger.debug(f"switching to Bland's rule after {stalled} degenerate pivots")
                bland = True

            self.x[self.basis] = x_b - step * g
            if t_flip <= t_pivot:
                self.x[enter] = self.hi[enter] if direction > 0 else self.lo[enter]
                self.state[enter] = 1 if direction > 0 else -1
                continue

            ties = np.flatnonzero(limits <= t_pivot + 1e-12)
            if bland:
                row = int(ties[np.argmin(self.basis[ties])])
            else:
                row = int(ties[np.argmax(np.abs(g[ties]))])
            leave = int(self.basis[row])
            self.x[enter] += direction * step
            if g[row] > 0:
                self.x[leave], self.state[leave] = self.lo[leave], -1
            else:
                self.x[leave], self.state[leave] = self.hi[leave], 1
            self.basis[row] = enter
            self.state[enter] = 0

            pivot = alpha[row]
            self.binv[row] /= pivot
            others = np.arange(self.basis.size) != row
            self.binv[others] -= np.outer(alpha[others], self.binv[row])
            since_refactor += 1


def _infeasible(sense: Sense) -> SolveResult:
    worst = -math.inf if sense is Sense.MAXIMIZE else math.inf
    return SolveResult(SolveStatus.INFEASIBLE, worst, worst, None, 0)


def solve_lp(cs: ConstraintSystem, backend: Union[Backend, str] = Backend.SIMPLEX) -> SolveResult:
    """LP relaxation optimum; binaries are treated as continuous in [0, 1]."""
    if Backend(backend) is Backend.HIGHS:
        return _solve_highs(cs, integral=False, node_limit=None)
    return SimplexSolver(cs).solve()


@dataclass(order=True)
class _Node:
    key: float
    seq: int
    lower: np.ndarray = field(compare=False)
    upper: np.ndarray = field(compare=False)


def solve_milp(
    cs: ConstraintSystem,
    node_limit: int = 10000,
    backend: Union[Backend, str] = Backend.SIMPLEX,
    solver: Optional[SimplexSolver] = None,
) -> SolveResult:
    """Best-bound branch-and-bound over the binaries of cs.

    Nodes are expanded in order of their parent's relaxation bound (ties by
    creation order) and branch on the most fractional binary, lowest id on
    ties. Hitting node_limit returns BOUND_ONLY with the best outstanding
    bound, which is valid in the objective's sense.
    """
    if node_limit < 1:
        raise SolverError(f"node_limit must be >= 1, got {node_limit}")
    if Backend(backend) is Backend.HIGHS:
        return _solve_highs(cs, integral=True, node_limit=node_limit)

    solver = solver or SimplexSolver(cs)
    sense = cs.sense
    sign = sense.sign
    binaries = np.array(cs.binaries, dtype=int)
    lower, upper = cs.bounds()

    heap: list[_Node] = [_Node(-math.inf, 0, lower, upper)]
    seq = 1
    incumbent: Optional[np.ndarray] = None
    best = math.inf
    pruned_bound = math.inf
    nodes = 0

    def gap(value: float) -> float:
        return LinearSolver.GAP_TOL * (1.0 + abs(value))

    while heap:
        node = heap[0]
        if incumbent is not None and node.key >= best - gap(best):
            heapq.heappop(heap)
            pruned_bound = min(pruned_bound, node.key)
            continue
        if nodes >= node_limit:
            break
        heapq.heappop(heap)
        nodes += 1
        result = solver.solve(lower=node.lower, upper=node.upper)
        if result.status is SolveStatus.INFEASIBLE:
            continue
        value = sign * result.objective_value
        if incumbent is not None and value >= best - gap(best):
            pruned_bound = min(pruned_bound, value)
            continue

        x = result.assignment
        branch = -1
        if binaries.size:
            frac = np.abs(x[binaries] - np.round(x[binaries]))
            worst = float(frac.max())
            if worst > LinearSolver.INT_TOL:
                branch = int(binaries[np.flatnonzero(frac >= worst - 1e-12)[0]])
        if branch < 0:
            x = x.copy()
            x[binaries] = np.round(x[binaries])
            incumbent, best = x, value
            logger.debug(f"{cs.name}: incumbent {sign * value:.9g} at node {nodes}")
            continue

        down_upper = node.upper.copy()
        down_upper[branch] = 0.0
        up_lower = node.lower.copy()
        up_lower[branch] = 1.0
        heapq.heappush(heap, _Node(value, seq, node.lower, down_upper))
        heapq.heappush(heap, _Node(value, seq + 1, up_lower, node.upper))
        seq += 2

    if not heap:
        if incumbent is None:
            return SolveResult(SolveStatus.INFEASIBLE, sign * math.inf, sign * math.inf, None, nodes)
        dual = min(best, pruned_bound)
        return SolveResult(SolveStatus.OPTIMAL, sign * best, sign * dual, incumbent, nodes)

    dual = min(best, pruned_bound, heap[0].key)
    logger.warning(
        f"{cs.name}: node limit {node_limit} reached, returning bound {sign * dual:.9g}"
    )
    objective = sign * best if incumbent is not None else sign * math.inf
    return SolveResult(SolveStatus.BOUND_ONLY, objective, sign * dual, incumbent, nodes)


def _solve_highs(cs: ConstraintSystem, integral: bool, node_limit: Optional[int]) -> SolveResult:
    from scipy.optimize import Bounds, LinearConstraint, linprog, milp

    sign = cs.sense.sign
    c = sign * cs.objective_vector()
    a, rhs, eq = cs.matrix()
    lower, upper = cs.bounds()
    constant = cs.objective.constant
    binaries = cs.binaries

    if not integral or not binaries:
        res = linprog(
            c,
            A_ub=a[~eq] if np.any(~eq) else None,
            b_ub=rhs[~eq] if np.any(~eq) else None,
            A_eq=a[eq] if np.any(eq) else None,
            b_eq=rhs[eq] if np.any(eq) else None,
            bounds=list(zip(lower, upper)),
            method="highs",
        )
        if res.status == 2:
            return _infeasible(cs.sense)
        if res.status != 0:
            raise SolverError(f"HiGHS LP failed: {res.message}")
        value = sign * float(res.fun) + constant
        return SolveResult(SolveStatus.OPTIMAL, value, value, np.asarray(res.x), 0)

    integrality = np.zeros(cs.num_variables)
    integrality[binaries] = 1
    constraints = []
    if a.shape[0]:
        row_lo = np.where(eq, rhs, -np.inf)
        constraints.append(LinearConstraint(a, row_lo, rhs))
    res = milp(
        c,
        integrality=integrality,
        bounds=Bounds(lower, upper),
        constraints=constraints,
        options={"node_limit": int(node_limit)} if node_limit else None,
    )
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    if res.status == 2:
        return SolveResult(SolveStatus.INFEASIBLE, sign * math.inf, sign * math.inf, None, nodes)
    dual_raw = getattr(res, "mip_dual_bound", None)
    if res.status == 0:
        value = sign * float(res.fun) + constant
        return SolveResult(SolveStatus.OPTIMAL, value, value, np.asarray(res.x), nodes)
    if res.status == 1 and dual_raw is not None and math.isfinite(dual_raw):
        dual = sign * float(dual_raw) + constant
        objective = sign * float(res.fun) + constant if res.x is not None else sign * math.inf
        x = np.asarray(res.x) if res.x is not None else None
        logger.warning(f"{cs.name}: HiGHS node limit reached, returning bound {dual:.9g}")
        return SolveResult(SolveStatus.BOUND_ONLY, objective, dual, x, nodes)
    raise SolverError(f"HiGHS MILP failed: {res.message}")
