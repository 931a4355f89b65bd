from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest

from twincert.baseline import exact_epsilon, pgd_epsilon, Dataset
from twincert.certify import CertConfig, Certifier, Prebounds, certify_global, certify_local
from twincert.encode import Scheme
from twincert.errors import ShapeError
from twincert.fixtures import random_conv_network, random_network, unit_box
from twincert.lincore import Backend
from twincert.model import Network, forward


def _cfg(unit2, **kw) -> CertConfig:
    kw.setdefault("delta", 0.1)
    return CertConfig(domain=unit2, **kw)


def test_full_window_with_full_refinement_is_exact(toy, unit2):
    report = certify_global(toy, _cfg(unit2, window=2, refine_count=None))
    assert report.epsilon() == pytest.approx(0.2, abs=1e-6)


def test_single_layer_windows(toy, unit2):
    report = certify_global(toy, _cfg(unit2, window=1, refine_count=None))
    assert report.epsilon() == pytest.approx(0.3, abs=1e-6)


def test_pure_relaxation_with_interval_prebounds(toy, unit2):
    cfg = _cfg(unit2, window=2, refine_count=0, target_refine=False, prebounds=Prebounds.INTERVAL)
    assert certify_global(toy, cfg).epsilon() == pytest.approx(0.276, abs=0.002)


def test_lp_prebounds_are_no_looser(toy, unit2):
    common = dict(window=2, refine_count=0, target_refine=False)
    interval = certify_global(toy, _cfg(unit2, prebounds=Prebounds.INTERVAL, **common)).epsilon()
    lp = certify_global(toy, _cfg(unit2, prebounds=Prebounds.LP, **common)).epsilon()
    assert 0.2 - 1e-9 <= lp <= interval + 1e-9


def test_basic_twin_encoding_single_windows(toy, unit2):
    exact_windows = certify_global(toy, _cfg(unit2, scheme=Scheme.BTNE, window=1, refine_count=None))
    assert exact_windows.epsilon() == pytest.approx(1.5, abs=1e-6)
    relaxed = certify_global(
        toy, _cfg(unit2, scheme=Scheme.BTNE, window=1, refine_count=0, target_refine=False)
    )
    # the triangle admits x_hat = 1.5 with x = 0, the same worst case as the exact windows
    assert relaxed.epsilon() == pytest.approx(1.5, abs=1e-6)


def test_local_bounds_around_origin(toy, unit2):
    exact = certify_local(toy, (0.0, 0.0), _cfg(unit2, window=2, refine_count=None))
    assert exact.epsilon() == pytest.approx(0.125, abs=1e-6)
    split = certify_local(toy, (0.0, 0.0), _cfg(unit2, window=1, refine_count=None))
    assert split.epsilon() == pytest.approx(0.15, abs=1e-6)
    relaxed = certify_local(
        toy, (0.0, 0.0),
        _cfg(unit2, window=2, refine_count=0, target_refine=False, prebounds=Prebounds.INTERVAL),
    )
    assert relaxed.epsilon() == pytest.approx(0.14375, abs=5e-4)


def test_linear_network_bound(linear, unit2):
    assert certify_global(linear, _cfg(unit2)).epsilon() == pytest.approx(0.3, abs=1e-9)


def test_zero_delta_gives_zero_bound(toy, unit2):
    report = certify_global(toy, _cfg(unit2, delta=0.0, window=1))
    assert report.epsilon() == 0.0


@pytest.mark.parametrize("seed", range(6))
def test_bound_covers_sampled_variation(seed):
    net = random_network(seed, widths=(3, 6, 5, 2))
    box = unit_box(3)
    delta = 0.05
    report = certify_global(net, CertConfig(delta=delta, domain=box, window=2, refine_count=1))
    rng = np.random.default_rng(seed + 100)
    x = rng.uniform(-1, 1, size=(400, 3))
    xh = np.clip(x + rng.uniform(-delta, delta, size=x.shape), -1, 1)
    variation = np.abs(net.evaluate_batch(xh) - net.evaluate_batch(x)).max(axis=0)
    for j in range(2):
        assert variation[j] <= report.epsilon(j) + 1e-9


def _equivalence(seed: int) -> None:
    net = random_network(seed, widths=(2, 3, 3, 1))
    box = unit_box(2)
    cfg = CertConfig(delta=0.1, domain=box, window=net.depth, refine_count=None)
    assert certify_global(net, cfg).epsilon() == pytest.approx(exact_epsilon(net, box, 0.1), abs=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_full_refinement_matches_exact_baseline(seed):
    _equivalence(seed)


@pytest.mark.slow
def test_full_refinement_matches_exact_baseline_sweep():
    for seed in range(20, 40):
        _equivalence(seed)


@pytest.mark.parametrize("seed", range(4))
def test_refinement_never_loosens_single_hidden_layer(seed):
    net = random_network(seed, widths=(2, 8, 1))
    box = unit_box(2)
    bounds = [
        certify_global(net, CertConfig(delta=0.1, domain=box, window=2, refine_count=r)).epsilon()
        for r in (0, 1, 2, 4)
    ]
    for looser, tighter in zip(bounds, bounds[1:]):
        assert tighter <= looser + 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_refinement_never_loosens_two_hidden_layers(seed):
    net = random_network(seed, widths=(2, 6, 6, 1))
    box = unit_box(2)
    bounds = [
        certify_global(net, CertConfig(delta=0.1, domain=box, window=2, refine_count=r)).epsilon()
        for r in (0, 1, 2, 4)
    ]
    for looser, tighter in zip(bounds, bounds[1:]):
        assert tighter <= looser + 1e-6


@pytest.mark.slow
def test_soundness_sandwich_on_random_networks():
    ratios = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        hidden = int(rng.integers(8, 17))
        net = random_network(500 + seed, widths=(2, hidden, hidden, 1))
        box = unit_box(2)
        data = Dataset(rng.uniform(-1, 1, size=(10, 2)))
        lower = pgd_epsilon(net, data, box, 0.05)
        exact = exact_epsilon(net, box, 0.05, force=True)
        upper = certify_global(net, CertConfig(delta=0.05, domain=box, window=2, refine_count=None)).epsilon()
        assert lower <= exact + 1e-6
        assert exact <= upper + 1e-6
        if exact > 1e-9:
            ratios.append(upper / exact)
    assert float(np.median(ratios)) <= 2.0


def test_jobs_do_not_change_the_report():
    net = random_network(3, widths=(3, 6, 5, 2))
    box = unit_box(3)
    reports = [
        certify_global(net, CertConfig(delta=0.05, domain=box, window=2, refine_count=2, jobs=jobs))
        for jobs in (1, 4)
    ]
    first, second = (json.dumps(r.to_dict(stable=True), sort_keys=True) for r in reports)
    assert first == second


def test_restricting_outputs():
    net = random_network(4, widths=(2, 5, 3))
    box = unit_box(2)
    full = certify_global(net, CertConfig(delta=0.1, domain=box, window=1))
    only = certify_global(net, CertConfig(delta=0.1, domain=box, window=1, outputs=(1,)))
    assert [o.index for o in only.outputs] == [1]
    assert only.epsilon(1) == pytest.approx(full.epsilon(1))
    with pytest.raises(KeyError):
        only.epsilon(0)


def test_highs_backend_matches_simplex(toy, unit2):
    cfg = _cfg(unit2, window=1, refine_count=None, solver=Backend.HIGHS)
    assert certify_global(toy, cfg).epsilon() == pytest.approx(0.3, abs=1e-6)


def test_report_contents_and_progress(toy, unit2):
    seen = []
    report = Certifier(toy, _cfg(unit2, window=2), progress=lambda p, m: seen.append(p)).run()
    assert seen == [50, 100]
    data = report.to_dict(stable=True)
    assert data["network"] == "toy"
    assert data["config"]["window"] == 2
    assert data["stats"]["wall_time_seconds"] == 0.0
    assert data["stats"]["lp_solves"] + data["stats"]["milp_solves"] > 0
    assert len(data["ranges"]) == 3


def test_refine_fraction_and_parse():
    assert CertConfig.parse_refine("all") is None
    assert CertConfig.parse_refine("3") == 3
    with pytest.raises(ValueError):
        CertConfig(delta=0.1, domain=unit_box(2), refine_fraction=1.5)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"delta": -0.1},
        {"delta": float("nan")},
        {"window": 0},
        {"refine_count": -1},
        {"node_limit": 0},
        {"jobs": 0},
        {"mode": "local"},
        {"mode": "local", "center": (2.0, 0.0)},
    ],
)
def test_config_validation(kwargs):
    kwargs.setdefault("delta", 0.1)
    with pytest.raises(ValueError):
        CertConfig(domain=unit_box(2), **kwargs)


def test_domain_must_fit_network(toy):
    with pytest.raises(ShapeError):
        Certifier(toy, CertConfig(delta=0.1, domain=unit_box(3)))
    with pytest.raises(ShapeError):
        Certifier(toy, CertConfig(delta=0.1, domain=unit_box(2), outputs=(1,)))


def test_certified_pair_is_consistent_with_forward(toy):
    base = forward(toy, [0.5, 0.5]).output[0]
    moved = forward(toy, [0.6, 0.4]).output[0]
    report = certify_global(toy, CertConfig(delta=0.1, domain=unit_box(2), window=2))
    assert abs(moved - base) <= report.epsilon() + 1e-12


def test_conv_network_bound_is_sound(rng):
    net = random_conv_network(5, image=(1, 4, 4), channels=2, hidden=6)
    box = unit_box(16)
    report = certify_global(net, CertConfig(delta=0.02, domain=box, window=2, refine_count=1, prune=True))
    x = rng.uniform(-1, 1, size=(300, 16))
    xh = np.clip(x + rng.uniform(-0.02, 0.02, size=x.shape), -1, 1)
    variation = np.abs(net.evaluate_batch(xh) - net.evaluate_batch(x)).max()
    assert variation <= report.epsilon() + 1e-9


@pytest.mark.slow
def test_conv_network_scales():
    net = random_conv_network(0)
    cfg = CertConfig(delta=0.01, domain=unit_box(64), window=2, refine_count=10, jobs=4)
    report = certify_global(net, cfg)
    assert np.isfinite(report.epsilon())
    assert report.stats.lp_solves > 0
    assert report.stats.refined_neurons > 0
    assert report.stats.wall_time_seconds < 600.0


@pytest.mark.parametrize("factor", [2.5, -0.5])
def test_scaling_the_output_layer_scales_the_bound(factor):
    net = random_network(3, widths=(2, 6, 6, 1))
    last = net.layers[-1]
    scaled = Network(
        name="scaled",
        input_shape=net.input_shape,
        layers=tuple(net.layers[:-1]) + (replace(last, weights=factor * last.weights, bias=factor * last.bias),),
    )
    box = unit_box(2)
    cfg = CertConfig(delta=0.1, domain=box, window=2, refine_count=2)
    base = certify_global(net, cfg).epsilon()
    assert certify_global(scaled, cfg).epsilon() == pytest.approx(abs(factor) * base, rel=1e-6, abs=1e-9)
