"""Command-line front end.

Every subcommand writes a JSON report (to --out or standard output) with the
run manifest embedded under "manifest"; a short human-readable summary goes
to standard output when --out is given and to standard error otherwise.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .baseline import AttackConfig, exact_bounds, grid_oracle, load_dataset, pgd_search
from .certify import CertConfig, Certifier, Prebounds
from .db import RunHistory
from .encode import Mode, Scheme
from .errors import EncodingError, NetworkFormatError, SolverError, TwinCertError
from .fixtures import acc_system, linear_network, scalar_system, toy_network, unit_box
from .lincore import Backend
from .manifest import RunManifest
from .model import Box, Network, load_domain, load_network, save_domain, save_network
from .safety import (
    Policy,
    invariant_set,
    load_system,
    max_tolerable_error,
    perception_bound,
    save_system,
    simulate,
    write_trajectory,
)

logger = logging.getLogger(__name__)

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

EXIT_OK = 0
EXIT_UNCERTIFIED = 1
EXIT_USAGE = 2
EXIT_FILE = 3
EXIT_SOLVER = 4

# argument names that never change a report's content
_UNRECORDED = {"func", "command", "out", "history", "verbose", "jobs", "stable"}


def configure_logging(verbose: bool = False) -> None:
    name = os.environ.get("TWINCERT_LOG", "error").strip().lower()
    level = LOG_LEVELS.get(name)
    logging.basicConfig(
        level=logging.INFO if verbose else (level or logging.ERROR),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    if level is None:
        logger.error(f"Unknown TWINCERT_LOG value '{name}', using 'error'")


def _index_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from e


def _refine(text: str):
    if text.lower() == "all":
        return None
    try:
        value = int(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected an integer or 'all', got '{text}'") from e
    if value < 0:
        raise argparse.ArgumentTypeError("refine count must be >= 0")
    return value


def _point(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twincert",
        description="Global robustness certification for ReLU networks",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, help="write the JSON report here instead of standard output")
    common.add_argument("--history", type=Path, help="append the run manifest to this SQLite file")
    common.add_argument("--stable", action="store_true", help="omit timestamps and wall times")
    common.add_argument("--verbose", action="store_true", help="log progress at info level")

    net = argparse.ArgumentParser(add_help=False)
    net.add_argument("--network", type=Path, required=True, help="network JSON file")
    net.add_argument("--delta", type=float, required=True, help="input perturbation bound (L-infinity)")
    net.add_argument("--domain", type=Path, help="domain JSON file; defaults to [-1, 1]^n")
    net.add_argument("--outputs", type=_index_list, help="output indices, e.g. 0,2; defaults to all")

    p = sub.add_parser("certify", parents=[common, net], help="certified upper bound on output variation")
    p.add_argument("--window", type=int, default=2, help="sub-network depth W")
    p.add_argument("--refine", type=_refine, default=0, help="neurons refined per window, or 'all'")
    p.add_argument("--refine-fraction", type=float, help="share of window neurons to refine")
    p.add_argument("--scheme", choices=[s.value for s in Scheme], default=Scheme.ITNE.value)
    p.add_argument("--local", type=Path, metavar="X0_PATH", help="JSON point; certify around it")
    p.add_argument("--no-target-refine", action="store_true", help="keep the target neuron relaxed")
    p.add_argument("--node-limit", type=int, default=10000)
    p.add_argument("--prebounds", choices=[b.value for b in Prebounds], default=Prebounds.LP.value)
    p.add_argument("--solver", choices=[b.value for b in Backend], default=Backend.SIMPLEX.value)
    p.add_argument("--prune", action="store_true", help="encode only the target's cone of influence")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("exact", parents=[common, net], help="exact bound via the full twin MILP")
    p.add_argument("--force", action="store_true", help="run past the unstable-relu guard")
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("oracle", parents=[common, net], help="grid enumeration lower bound")
    p.add_argument("--grid-step", type=float, default=0.01)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("pgd", parents=[common, net], help="attack-based lower bound")
    p.add_argument("--dataset", type=Path, required=True, help="CSV of input vectors")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--step-size", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_pgd)

    p = sub.add_parser("acc", parents=[common], help="closed-loop invariant set and simulation")
    p.add_argument("--config", type=Path, required=True, help="system JSON file")
    p.add_argument("--dd-bound", type=float, help="override the perception error bound")
    p.add_argument("--model-error", type=float, default=0.0, help="perception model error, added to --cert-report")
    p.add_argument("--cert-report", type=Path, help="certify report whose bound joins the perception error")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--max-error", action="store_true", help="also search the largest tolerable perception error")
    p.add_argument("--simulate", type=int, metavar="N", help="simulate N steps")
    p.add_argument("--policy", choices=[q.value for q in Policy], default=Policy.EXTREME.value)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0", type=_point, help="initial state, comma-separated; defaults to the origin")
    p.add_argument("--trajectory", type=Path, default=Path("trajectory.csv"), help="trajectory CSV path")
    p.set_defaults(func=cmd_acc)

    p = sub.add_parser("make-toy", help="write the built-in networks, domain and systems")
    p.add_argument("--out", type=Path, required=True, help="target directory")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser("history", help="list recorded runs")
    p.add_argument("--db", type=Path, required=True)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_history)
    return parser


def _parameters(args: argparse.Namespace) -> dict:
    params = {}
    for key, value in sorted(vars(args).items()):
        if key in _UNRECORDED:
            continue
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, tuple):
            value = list(value)
        params[key] = value
    return params


def _emit(args: argparse.Namespace, report: dict, summary: list[str]) -> None:
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if args.out is not None:
        Path(args.out).write_text(text, encoding="utf-8")
        stream = sys.stdout
    else:
        sys.stdout.write(text)
        stream = sys.stderr
    for line in summary:
        print(line, file=stream)


def _finish(
    args: argparse.Namespace,
    report: dict,
    summary: list[str],
    inputs: Sequence[Optional[Path]],
    result: Optional[float],
    started: float,
    code: int = EXIT_OK,
) -> int:
    manifest = RunManifest.build(
        args.command,
        _parameters(args),
        [p for p in inputs if p is not None],
        result=result,
        wall_time_seconds=round(time.perf_counter() - started, 6),
        stable=args.stable,
    )
    report["manifest"] = manifest.to_dict()
    _emit(args, report, summary)
    if args.history is not None:
        with RunHistory(str(args.history)) as history:
            history.save_manifest(manifest)
    return code


def _load_inputs(args: argparse.Namespace) -> tuple[Network, Box]:
    net = load_network(args.network)
    domain = load_domain(args.domain) if args.domain is not None else unit_box(net.input_size)
    return net, domain


def _outputs(args: argparse.Namespace, net: Network) -> tuple[int, ...]:
    outputs = args.outputs if args.outputs else tuple(range(net.output_size))
    bad = [j for j in outputs if not 0 <= j < net.output_size]
    if bad:
        raise ValueError(f"output indices {bad} outside [0, {net.output_size})")
    return tuple(sorted(set(outputs)))


def _load_point(path: Path) -> tuple[float, ...]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise NetworkFormatError(f"{path}: not valid JSON: {e}") from e
    if isinstance(data, dict):
        data = data.get("x0", data.get("point"))
    try:
        return tuple(float(v) for v in data)
    except (TypeError, ValueError) as e:
        raise NetworkFormatError(f"{path}: expected a list of numbers") from e


def cmd_certify(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    net, domain = _load_inputs(args)
    center = _load_point(args.local) if args.local is not None else None
    cfg = CertConfig(
        delta=args.delta,
        domain=domain,
        window=args.window,
        refine_count=args.refine,
        refine_fraction=args.refine_fraction,
        scheme=Scheme(args.scheme),
        mode=Mode.LOCAL if center is not None else Mode.GLOBAL,
        center=center,
        node_limit=args.node_limit,
        outputs=args.outputs or None,
        target_refine=not args.no_target_refine,
        prebounds=Prebounds(args.prebounds),
        prune=args.prune,
        solver=Backend(args.solver),
        jobs=args.jobs,
    )
    report = Certifier(net, cfg).run()
    data = report.to_dict(include_ranges=True, stable=args.stable)
    eps = report.epsilon()
    data["epsilon_upper"] = eps
    summary = [f"eps_upper[{o.index}] = {o.epsilon_upper:.6f}" for o in report.outputs]
    return _finish(args, data, summary, [args.network, args.domain, args.local], eps, started)


def cmd_exact(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    net, domain = _load_inputs(args)
    rows = []
    for j in _outputs(args, net):
        lo, hi = exact_bounds(net, domain, args.delta, j, force=args.force)
        rows.append({"index": j, "lower": lo, "upper": hi, "epsilon_exact": max(abs(lo), abs(hi))})
    eps = max(r["epsilon_exact"] for r in rows)
    data = {"network": net.name, "delta": args.delta, "outputs": rows, "epsilon_exact": eps}
    summary = [f"eps_exact[{r['index']}] = {r['epsilon_exact']:.6f}" for r in rows]
    return _finish(args, data, summary, [args.network, args.domain], eps, started)


def cmd_oracle(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    net, domain = _load_inputs(args)
    rows = [
        {"index": j, "epsilon_grid": grid_oracle(net, domain, args.delta, j, args.grid_step)}
        for j in _outputs(args, net)
    ]
    eps = max(r["epsilon_grid"] for r in rows)
    data = {"network": net.name, "delta": args.delta, "grid_step": args.grid_step, "outputs": rows, "epsilon_grid": eps}
    summary = [f"eps_grid[{r['index']}] = {r['epsilon_grid']:.6f}" for r in rows]
    return _finish(args, data, summary, [args.network, args.domain], eps, started)


def cmd_pgd(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    net, domain = _load_inputs(args)
    dataset = load_dataset(args.dataset)
    ac = AttackConfig(steps=args.steps, step_size=args.step_size, restarts=args.restarts, rng_seed=args.seed)
    rows = []
    for j in _outputs(args, net):
        best = pgd_search(net, dataset, domain, args.delta, j, ac, jobs=args.jobs)
        rows.append({"index": j, **best.to_dict()})
    eps = max(r["epsilon_lower"] for r in rows)
    data = {"network": net.name, "delta": args.delta, "attack": ac.to_dict(), "outputs": rows, "epsilon_lower": eps}
    summary = [f"eps_lower[{r['index']}] = {r['epsilon_lower']:.6f}" for r in rows]
    return _finish(args, data, summary, [args.network, args.domain, args.dataset], eps, started)


def _certified_epsilon(path: Path) -> float:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return float(data["epsilon_upper"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise NetworkFormatError(f"{path}: not a certify report: {e}") from e


def cmd_acc(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    system = load_system(args.config)
    data: dict = {}
    if args.cert_report is not None:
        eps = _certified_epsilon(args.cert_report)
        dd = perception_bound(args.model_error, eps)
        data["perception"] = {"model_error": args.model_error, "certified_epsilon": eps, "dd_bound": dd}
        system = system.with_bounds(dd_bound=dd)
    elif args.dd_bound is not None:
        system = system.with_bounds(dd_bound=args.dd_bound)

    result = invariant_set(system, max_iters=args.max_iters)
    data["system"] = system.to_dict()
    data["invariant"] = result.to_dict()
    summary = [result.verdict()]

    if args.max_error:
        limit = max_tolerable_error(system, max_iters=args.max_iters)
        data["max_tolerable_error"] = limit
        summary.append("largest tolerable perception error: " + ("none" if limit is None else f"{limit:.6f}"))

    if args.simulate is not None:
        x0 = np.asarray(args.x0, dtype=float) if args.x0 is not None else np.zeros(system.dim)
        if x0.size != system.dim:
            raise ValueError(f"x0 has {x0.size} entries, state dimension is {system.dim}")
        # only a fixpoint is a valid invariance region
        region = result.polytope if result.certified else system.safe_polytope()
        traj = simulate(system, x0, args.simulate, Policy(args.policy), args.seed, region)
        write_trajectory(traj, args.trajectory)
        data["simulation"] = {**traj.to_dict(), "policy": args.policy, "seed": args.seed,
                              "region": "invariant" if result.certified else "safe"}
        verdict = "safe" if traj.safe else f"left the region at step {traj.exit_step}"
        summary.append(f"simulation ({args.simulate} steps, {args.policy}): {verdict}")

    headline = float(system.dd_bound)
    code = EXIT_OK if result.converged else EXIT_UNCERTIFIED
    return _finish(args, data, summary, [args.config, args.cert_report], headline, started, code)


def cmd_make_toy(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_network(toy_network(), out / "toy.json")
    save_network(linear_network(), out / "linear.json")
    save_domain(unit_box(2), out / "unit2.json")
    save_system(scalar_system(), out / "scalar.json")
    save_system(acc_system(), out / "acc.json")
    for name in ("toy.json", "linear.json", "unit2.json", "scalar.json", "acc.json"):
        print(out / name)
    return EXIT_OK


def cmd_history(args: argparse.Namespace) -> int:
    with RunHistory(str(args.db)) as history:
        rows = history.get_history()
    for row in rows:
        run_id, timestamp, command, _, _, result, version, _ = row
        shown = "-" if result is None else f"{result:.6g}"
        print(f"{run_id:4d}  {timestamp}  {command:<9s} result={shown}  v{version}")
    if not rows:
        print("no runs recorded")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(getattr(args, "verbose", False))
    handler: Callable[[argparse.Namespace], int] = args.func
    try:
        return handler(args)
    except (OSError, NetworkFormatError) as e:
        print(f"twincert: file error: {e}", file=sys.stderr)
        return EXIT_FILE
    except (SolverError, EncodingError) as e:
        print(f"twincert: solver error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except (TwinCertError, ValueError) as e:
        print(f"twincert: {e}", file=sys.stderr)
        return EXIT_USAGE
