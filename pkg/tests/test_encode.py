from __future__ import annotations

import numpy as np
import pytest

from twincert.encode import (
    EncodingConfig,
    Mode,
    NeuronRef,
    Relaxation,
    Scheme,
    assemble_point,
    encode_dist_lpr,
    encode_relu_exact,
    encode_relu_lpr,
    encode_twin_subnet,
    score_neurons,
    select_refinement,
)
from twincert.errors import EncodingError
from twincert.fixtures import random_network
from twincert.lincore import (
    ConstraintSystem,
    LinExpr,
    Sense,
    SimplexSolver,
    SolveStatus,
    check_feasible,
    solve_lp,
    solve_milp,
)
from twincert.model import Box, Stage, decompose, forward, propagate_intervals, relu_distance_range


def _relu_system(lo: float, hi: float) -> tuple[ConstraintSystem, int, int]:
    cs = ConstraintSystem("relu")
    y = cs.add_variable(lo, hi)
    x = cs.add_variable(0, max(hi, 0.0))
    return cs, y, x


def test_big_m_accepts_exactly_the_relu_graph():
    cs, y, x = _relu_system(-1.0, 2.0)
    z = encode_relu_exact(cs, y, x, (-1.0, 2.0), name="t")
    assert cs.binaries == [z]
    for value in np.linspace(-1, 2, 13):
        phase = 1.0 if value > 0 else 0.0
        assert check_feasible(cs, [value, max(value, 0.0), phase])
        assert not check_feasible(cs, [value, max(value, 0.0) + 0.1, 0.0])
        assert not check_feasible(cs, [value, max(value, 0.0) + 0.1, 1.0])


def test_triangle_relaxation_peak():
    cs, y, x = _relu_system(-1.0, 2.0)
    encode_relu_lpr(cs, y, x, (-1.0, 2.0))
    cs.set_objective(LinExpr.var(x), Sense.MAXIMIZE)
    solver_result = solve_lp(cs)
    assert solver_result.objective_value == pytest.approx(2.0)
    assert check_feasible(cs, [0.0, 2.0 / 3.0])
    assert not check_feasible(cs, [0.0, 0.7])


@pytest.mark.parametrize("bounds", [(0.0, 1.0), (-1.0, 0.0), (0.5, 2.0)])
def test_relaxations_need_unstable_range(bounds):
    cs, y, x = _relu_system(*bounds)
    with pytest.raises(EncodingError):
        encode_relu_lpr(cs, y, x, bounds)
    with pytest.raises(EncodingError):
        encode_relu_exact(cs, y, x, bounds)


@pytest.mark.parametrize("dy_range", [(-0.3, 0.3), (-0.1, 0.5), (0.0, 0.4), (-0.2, 0.0)])
def test_distance_relaxation_contains_samples(dy_range, rng):
    cs = ConstraintSystem("dist")
    dy = cs.add_variable(*dy_range)
    dx = cs.add_variable(-1.0, 1.0)
    encode_dist_lpr(cs, dy, dx, dy_range)
    ys = rng.uniform(-2, 2, size=10_000)
    dys = rng.uniform(dy_range[0], dy_range[1], size=10_000)
    dxs = np.maximum(ys + dys, 0.0) - np.maximum(ys, 0.0)
    a, rhs, _ = cs.matrix()
    lhs = a @ np.vstack([dys, dxs])
    assert np.all(lhs <= rhs[:, None] + 1e-9)


def test_distance_relaxation_pins_zero_width():
    cs = ConstraintSystem("dist")
    dy = cs.add_variable(0.0, 0.0)
    dx = cs.add_variable(-1.0, 1.0)
    encode_dist_lpr(cs, dy, dx, (0.0, 0.0))
    assert check_feasible(cs, [0.0, 0.0])
    assert not check_feasible(cs, [0.0, 0.01])


def test_distance_region_shrinks_with_dy_range():
    previous = None
    for dy_range in [(-0.4, 0.4), (-0.2, 0.3), (-0.1, 0.1), (0.0, 0.05)]:
        cs = ConstraintSystem("dist")
        dy = cs.add_variable(*dy_range)
        dx = cs.add_variable(-1.0, 1.0)
        encode_dist_lpr(cs, dy, dx, dy_range)
        solver = SimplexSolver(cs)
        dx_only = np.array([0.0, 1.0])
        lo = solver.solve(objective=dx_only, sense=Sense.MINIMIZE).objective_value
        hi = solver.solve(objective=dx_only, sense=Sense.MAXIMIZE).objective_value
        ia_lo, ia_hi = relu_distance_range(
            np.array([-10.0]), np.array([10.0]), np.array([dy_range[0]]), np.array([dy_range[1]]),
            np.array([-10.0 + dy_range[0]]), np.array([10.0 + dy_range[1]]),
        )
        assert lo == pytest.approx(ia_lo[0], abs=1e-9)
        assert hi == pytest.approx(ia_hi[0], abs=1e-9)
        # the dx slab above dy = 0
        at_zero = solver.solve(
            objective=dx_only, sense=Sense.MAXIMIZE, lower=np.array([0.0, -1.0]), upper=np.array([0.0, 1.0]),
        ).objective_value
        if previous is not None:
            assert previous[0] <= lo + 1e-9
            assert hi <= previous[1] + 1e-9
            assert at_zero <= previous[2] + 1e-9
        previous = (lo, hi, at_zero)
    assert previous[2] == pytest.approx(0.0, abs=1e-9)


def _all_subnetworks(net):
    for k in range(1, net.depth + 1):
        for j in range(net.widths[k]):
            for stage in Stage:
                for w in range(1, k + 1):
                    yield decompose(net, k, j, stage, w)


def _pairs(rng, box: Box, delta: float, count: int, center=None):
    for _ in range(count):
        x = np.asarray(center, dtype=float) if center is not None else rng.uniform(box.lower, box.upper)
        xh = np.clip(x + rng.uniform(-delta, delta, size=x.size), box.lower, box.upper)
        yield x, xh


@pytest.mark.parametrize("scheme", list(Scheme))
@pytest.mark.parametrize("relaxation", list(Relaxation))
def test_encoding_admits_every_real_pair(scheme, relaxation, rng):
    net = random_network(11, widths=(3, 5, 4, 2))
    box = Box(-np.ones(3), np.ones(3))
    delta = 0.1
    table = propagate_intervals(net, box, delta)
    cfg = EncodingConfig(scheme=scheme, relaxation=relaxation)
    encodings = [encode_twin_subnet(sub, table, cfg, box, delta) for sub in _all_subnetworks(net)]
    for x, xh in _pairs(rng, box, delta, 15):
        base, hat = forward(net, x), forward(net, xh)
        for enc in encodings:
            point = assemble_point(enc, base, hat)
            assert check_feasible(enc.cs, point, tol=1e-6), enc.cs.name
            sub = enc.sub
            k, j = sub.target, sub.neuron
            if sub.stage is Stage.Y:
                expected = hat.ys[k][j] - base.ys[k][j]
                assert enc.quantity("dy").evaluate(point) == pytest.approx(expected, abs=1e-9)
            else:
                expected = hat.xs[k][j] - base.xs[k][j]
                assert enc.quantity("dx").evaluate(point) == pytest.approx(expected, abs=1e-9)


def test_local_encoding_admits_pairs_around_center(rng):
    net = random_network(12, widths=(2, 6, 3))
    box = Box(-np.ones(2), np.ones(2))
    x0 = (0.2, -0.4)
    table = propagate_intervals(net, box, 0.1, center=x0)
    cfg = EncodingConfig(mode=Mode.LOCAL, center=x0)
    encodings = [encode_twin_subnet(sub, table, cfg, box, 0.1) for sub in _all_subnetworks(net)]
    for x, xh in _pairs(rng, box, 0.1, 20, center=x0):
        base, hat = forward(net, x), forward(net, xh)
        for enc in encodings:
            assert check_feasible(enc.cs, assemble_point(enc, base, hat), tol=1e-6), enc.cs.name


@pytest.mark.parametrize("scheme", list(Scheme))
def test_exact_toy_encoding_gives_exact_bound(toy, unit2, scheme):
    table = propagate_intervals(toy, unit2, 0.1)
    sub = decompose(toy, 2, 0, Stage.X, 2)
    enc = encode_twin_subnet(sub, table, EncodingConfig(scheme=scheme, relaxation=Relaxation.EXACT), unit2, 0.1)
    enc.objective("dx", Sense.MAXIMIZE)
    result = solve_milp(enc.cs)
    assert result.status is SolveStatus.OPTIMAL
    assert result.objective_value == pytest.approx(0.2, abs=1e-6)


def test_local_mode_requires_center():
    with pytest.raises(EncodingError):
        EncodingConfig(mode=Mode.LOCAL)


def test_refined_neuron_outside_window(toy, unit2):
    table = propagate_intervals(toy, unit2, 0.1)
    sub = decompose(toy, 1, 0, Stage.Y, 1)
    cfg = EncodingConfig(refine_set=frozenset({NeuronRef(2, 0)}))
    with pytest.raises(EncodingError):
        encode_twin_subnet(sub, table, cfg, unit2, 0.1)


def test_missing_ranges_are_rejected(toy, unit2):
    table = propagate_intervals(toy, unit2, 0.1)
    table.layers = table.layers[:2]
    sub = decompose(toy, 2, 0, Stage.X, 1)
    with pytest.raises(EncodingError):
        encode_twin_subnet(sub, table, EncodingConfig(), unit2, 0.1)


def test_cone_pruning_keeps_only_connected_neurons(unit2):
    from twincert.fixtures import dense
    from twincert.model import Network

    net = Network(
        name="sparse",
        input_shape=(2,),
        layers=(dense([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), dense([[1.0, 0.0, 0.0]])),
    )
    table = propagate_intervals(net, unit2, 0.1)
    sub = decompose(net, 2, 0, Stage.X, 2)
    full = encode_twin_subnet(sub, table, EncodingConfig(), unit2, 0.1)
    pruned = encode_twin_subnet(sub, table, EncodingConfig(prune=True), unit2, 0.1)
    assert pruned.cs.num_variables < full.cs.num_variables
    for enc in (full, pruned):
        enc.objective("dx", Sense.MAXIMIZE)
    assert solve_lp(pruned.cs).objective_value == pytest.approx(solve_lp(full.cs).objective_value, abs=1e-9)


def test_scores_rank_and_select(toy, unit2, linear):
    table = propagate_intervals(toy, unit2, 0.1)
    scores = score_neurons(table, [1])
    assert [s.ref for s in scores] == [NeuronRef(1, 0), NeuronRef(1, 1)]
    assert scores[0].base_score == pytest.approx(0.75)
    assert scores[0].dist_score == pytest.approx(0.15)
    assert select_refinement(scores, 1) == frozenset({NeuronRef(1, 0)})
    assert select_refinement(scores, 5) == frozenset({NeuronRef(1, 0), NeuronRef(1, 1)})
    with pytest.raises(EncodingError):
        select_refinement(scores, -1)
    linear_table = propagate_intervals(linear, unit2, 0.1)
    assert score_neurons(linear_table, [1]) == []
