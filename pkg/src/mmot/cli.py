"""Command-line front door: solve / sweep / oracle / duality /
check-conditions / block-approx.

Configuration comes from flags or a JSON config file (flags win). Reports are
JSON with sorted keys, couplings are CSV, and the report path renders
matplotlib figures next to the delimited output unless --no-plots is given.

Exit codes: 0 success, 1 configuration error, 2 non-convergence,
3 infeasible construction.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

__all__ = ["main", "build_parser", "FIGURE1_PRESET"]

# Bundled demonstration preset: spread Gaussian marginal, Coulomb pair cost,
# epsilon ladder from the near-product regime down to the near-map regime.
FIGURE1_PRESET = {
    "pdf": "gaussian:0,5",
    "interval": "-25,25",
    "grid": 400,
    "marginals": 2,
    "cost": "coulomb",
    "eps_list": "1e4,1e-2,1e-3,1e-4,1e-5",
}

PRESETS = {"figure1": FIGURE1_PRESET}


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _apply_thread_cap(argv) -> None:
    """Honor --threads / MMOT_THREADS before numpy gets imported."""
    threads = os.environ.get("MMOT_THREADS")
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(threads))


def _add_problem_args(parser) -> None:
    parser.add_argument("--config", help="JSON config file; explicit flags win")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="named parameter bundle")
    parser.add_argument("--pdf", help="marginal pdf: uniform | gaussian:mu,sigma")
    parser.add_argument("--interval", help="grid interval a,b")
    parser.add_argument("--grid", type=int, help="number of grid cells M")
    parser.add_argument("--space", help="space/density JSON file (alternative to --pdf)")
    parser.add_argument("-N", "--marginals", type=int, help="marginal count N (default 2)")
    parser.add_argument("--cost", help="pair cost: coulomb | riesz:s | log (default coulomb)")
    parser.add_argument("--out-dir", default=".", help="output directory")
    parser.add_argument("--dump-threshold", type=float, help="CSV mass threshold (default 1e-12)")
    parser.add_argument("--threads", type=int, help="cap worker threads (MMOT_THREADS mirrors)")
    parser.add_argument("--no-plots", action="store_true", help="skip figure rendering")


def _add_solver_args(parser) -> None:
    parser.add_argument("--tol", type=float, help="marginal L1 tolerance (default 1e-8)")
    parser.add_argument("--max-iter", type=int, help="sweep budget (default 100000)")
    parser.add_argument("--damping", type=float, help="update damping in (0,1] (default 1/N)")
    parser.add_argument("--warm-start", help="potential JSON to initialize from")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one entropic problem")
    _add_problem_args(p)
    _add_solver_args(p)
    p.add_argument("--eps", type=float, help="regularization strength")

    p = sub.add_parser("sweep", help="solve a decreasing epsilon ladder with chained warm starts")
    _add_problem_args(p)
    _add_solver_args(p)
    p.add_argument("--eps-list", help="comma-separated strictly decreasing epsilons")

    p = sub.add_parser("oracle", help="closed-form 1D plan and its cost")
    _add_problem_args(p)
    p.add_argument("--compare", help="coupling CSV to compare against (L1 and cost gap)")

    p = sub.add_parser("duality", help="certify a (coupling, potential) pair")
    _add_problem_args(p)
    p.add_argument("--eps", type=float, help="regularization strength")
    p.add_argument("--coupling", required=True, help="coupling CSV")
    p.add_argument("--potential", required=True, help="potential JSON")
    p.add_argument("--marginal-tol", type=float, default=1e-6,
                   help="marginal mismatch above this declares the certificate inapplicable")

    p = sub.add_parser("check-conditions", help="marginal / cost admissibility report")
    _add_problem_args(p)
    p.add_argument("--radii", help="comma-separated probe radii for the ball-mass check")
    p.add_argument("--origin", type=int, help="origin index for the tail integral")
    p.add_argument("--tail-radius", type=float, help="excluded-ball radius for the tail integral")

    p = sub.add_parser("block-approx", help="block approximation of a coupling")
    _add_problem_args(p)
    p.add_argument("--input", required=True, help="input coupling CSV")
    p.add_argument("-n", "--step", type=int, required=True, help="approximation step index")

    return parser


def _merge_config(args) -> None:
    layers = []
    if getattr(args, "preset", None):
        layers.append(PRESETS[args.preset])
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                layers.append(json.load(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    for layer in layers:
        for key, value in layer.items():
            attr = key.replace("-", "_")
            if not hasattr(args, attr):
                continue
            if getattr(args, attr) in (None, False):
                setattr(args, attr, value)


def _build_problem(args):
    from .cost import CostFunction, CostTensor
    from .serialize import load_space
    from .space import grid_from_pdf

    n = args.marginals if args.marginals is not None else 2
    if n < 2:
        raise ConfigError("need at least two marginals")
    if args.space:
        try:
            space, density = load_space(args.space)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load space file: {exc}") from exc
    else:
        if not args.pdf or not args.interval or not args.grid:
            raise ConfigError("need --space or all of --pdf, --interval, --grid")
        try:
            a, b = (float(v) for v in str(args.interval).split(","))
            space, density = grid_from_pdf(args.pdf, (a, b), int(args.grid))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    spec = args.cost or "coulomb"
    try:
        if spec == "coulomb":
            fn = CostFunction("coulomb")
        elif spec == "log":
            fn = CostFunction("log")
        elif spec.startswith("riesz:"):
            fn = CostFunction("riesz", exponent=float(spec.split(":", 1)[1]))
        else:
            raise ValueError(f"unknown cost spec {spec!r}")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    ct = CostTensor(space, n, fn)
    return space, density, fn, n, ct


def _solver_config(args, epsilon, n, space):
    from .serialize import load_potential
    from .sinkhorn import SinkhornConfig

    init = None
    if getattr(args, "warm_start", None):
        try:
            init = load_potential(args.warm_start, space)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load warm-start potential: {exc}") from exc
    kwargs = {"epsilon": epsilon, "init": init}
    if args.tol is not None:
        kwargs["tol"] = args.tol
    if args.max_iter is not None:
        kwargs["max_iter"] = args.max_iter
    if args.damping is not None:
        kwargs["damping"] = args.damping
    try:
        return SinkhornConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _config_echo(args, n, extra=None) -> dict:
    echo = {
        "pdf": args.pdf,
        "interval": args.interval,
        "grid": args.grid,
        "space_file": args.space,
        "marginals": n,
        "cost": args.cost or "coulomb",
    }
    if extra:
        echo.update(extra)
    return echo


def _threshold(args) -> float:
    from .serialize import DEFAULT_DUMP_THRESHOLD

    return args.dump_threshold if args.dump_threshold is not None else DEFAULT_DUMP_THRESHOLD


def _support_size(mass, threshold=1e-6) -> int:
    import numpy as np

    return int(np.count_nonzero(mass > threshold))


def cmd_solve(args) -> int:
    import numpy as np

    from . import coupling as cpl
    from .serialize import dump_coupling_csv, solve_report_payload, write_json
    from .sinkhorn import solve_symmetric

    space, density, fn, n, ct = _build_problem(args)
    if args.eps is None:
        raise ConfigError("solve needs --eps")
    cfg = _solver_config(args, args.eps, n, space)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    report = solve_symmetric(density, ct, cfg)
    wall = time.perf_counter() - t0
    payload = solve_report_payload(report, wall_time=wall)
    payload["cost_c0"] = cpl.cost_C0(report.coupling, ct)
    payload["entropy"] = cpl.entropy(report.coupling)
    payload["support_size"] = _support_size(report.coupling.mass)
    payload["marginals"] = [
        cpl.marginal_masses(report.coupling.mass, axis).tolist() for axis in range(n)
    ]
    payload["config"] = _config_echo(args, n, {"eps": args.eps})
    write_json(out / "solve_report.json", payload)
    dump_coupling_csv(report.coupling, out / "solve_coupling.csv", _threshold(args))
    if not args.no_plots:
        from .figures import support_scatter

        support_scatter(space, report.coupling.mass, out / "solve_support.png",
                        title=f"eps = {args.eps:g}")
    print(f"solve: eps={args.eps:g} converged={report.converged} "
          f"gap={report.gap:.3e} marginal_error={report.marginal_error:.3e}")
    return 0 if report.converged else 2


def cmd_sweep(args) -> int:
    import csv as csv_mod

    import numpy as np

    from . import coupling as cpl
    from .serialize import write_json
    from .sinkhorn import SinkhornConfig, solve_symmetric

    space, density, fn, n, ct = _build_problem(args)
    if not args.eps_list:
        raise ConfigError("sweep needs --eps-list")
    try:
        eps_values = [float(v) for v in str(args.eps_list).split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad eps list: {exc}") from exc
    if len(eps_values) < 2 or any(b >= a for a, b in zip(eps_values, eps_values[1:])):
        raise ConfigError("eps list must be strictly decreasing with at least two entries")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    couplings = []
    history = []  # (eps, potential values), for extrapolated warm starts
    all_converged = True
    for eps in eps_values:
        if len(history) >= 2:
            (e1, u1), (e2, u2) = history[-2], history[-1]
            init = u2 + (u2 - u1) * ((eps - e2) / (e2 - e1))
        elif history:
            init = history[-1][1]
        else:
            init = None
        kwargs = {"epsilon": eps, "init": init}
        if args.tol is not None:
            kwargs["tol"] = args.tol
        if args.max_iter is not None:
            kwargs["max_iter"] = args.max_iter
        if args.damping is not None:
            kwargs["damping"] = args.damping
        cfg = SinkhornConfig(**kwargs)
        t0 = time.perf_counter()
        report = solve_symmetric(density, ct, cfg)
        wall = time.perf_counter() - t0
        history.append((eps, report.potential.values))
        all_converged &= report.converged
        c0 = cpl.cost_C0(report.coupling, ct)
        ent = cpl.entropy(report.coupling)
        rows.append({
            "epsilon": eps,
            "cost_c0": c0,
            "entropy": ent,
            "cost_ceps": report.primal,
            "dual": report.dual,
            "gap": report.gap,
            "marginal_error": report.marginal_error,
            "support_size": _support_size(report.coupling.mass),
            "iterations": report.iterations,
            "converged": report.converged,
            "wall_time_s": wall,
        })
        couplings.append(report.coupling.mass)
        print(f"sweep: eps={eps:g} converged={report.converged} C0={c0:.6g} "
              f"support={rows[-1]['support_size']}")

    fields = list(rows[0].keys())
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv_mod.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)

    support = [r["support_size"] for r in rows]
    c0s = [r["cost_c0"] for r in rows]
    summary = {
        "epsilons": eps_values,
        "support_nonincreasing": all(b <= a for a, b in zip(support, support[1:])),
        "c0_nonincreasing_within_1e-4": all(b <= a + 1e-4 for a, b in zip(c0s, c0s[1:])),
        "entropy_term_final_ratio": (
            eps_values[-1] * rows[-1]["entropy"] / c0s[-1] if c0s[-1] else None
        ),
        "all_converged": all_converged,
        "config": _config_echo(args, n, {"eps_list": eps_values}),
    }
    write_json(out / "sweep_summary.json", summary)
    if not args.no_plots:
        from .figures import sweep_panels_figure, sweep_summary_figure

        sweep_summary_figure(rows, out / "sweep_support.png")
        sweep_panels_figure(space, couplings, eps_values, out / "sweep_panels.png")
    return 0 if all_converged else 2


def cmd_oracle(args) -> int:
    import numpy as np

    from . import coupling as cpl
    from .oracle1d import induced_plan
    from .serialize import dump_coupling_csv, load_coupling_csv, write_json

    space, density, fn, n, ct = _build_problem(args)
    if not space.is_ordered_1d():
        raise ConfigError("the oracle needs an ordered 1-d grid")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plan = induced_plan(density, n)
    cost = cpl.cost_C0(plan, ct)
    payload = {
        "cost_c0": cost,
        "support_size": _support_size(plan.mass, _threshold(args)),
        "config": _config_echo(args, n),
    }
    if args.compare:
        try:
            other = load_coupling_csv(args.compare, space, n)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load comparison coupling: {exc}") from exc
        payload["comparison"] = {
            "l1_distance": float(np.abs(plan.mass - other.mass).sum()),
            "cost_gap": cpl.cost_C0(other, ct) - cost,
        }
    dump_coupling_csv(plan, out / "oracle_plan.csv", _threshold(args))
    write_json(out / "oracle_report.json", payload)
    if not args.no_plots:
        from .figures import support_scatter

        support_scatter(space, plan.mass, out / "oracle_support.png",
                        title=f"cyclical plan, N = {n}", threshold=_threshold(args))
    print(f"oracle: N={n} cost={cost:.6g}")
    return 0


def cmd_duality(args) -> int:
    import numpy as np

    from . import coupling as cpl
    from .serialize import load_coupling_csv, write_json
    from .sinkhorn import Potential, dual_objective

    space, density, fn, n, ct = _build_problem(args)
    if args.eps is None or args.eps <= 0:
        raise ConfigError("duality needs --eps > 0")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        gamma = load_coupling_csv(args.coupling, space, n)
        with open(args.potential) as fh:
            pot_payload = json.load(fh)
        values = pot_payload.get("values", pot_payload.get("potential"))
        if values is None:
            raise ValueError("potential file has neither 'values' nor 'potential'")
        potential = Potential(space, np.asarray(values, dtype=float))
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load inputs: {exc}") from exc

    target = density.masses
    mismatch = max(
        float(np.abs(cpl.marginal_masses(gamma.mass, axis) - target).sum())
        for axis in range(n)
    )
    applicable = mismatch <= args.marginal_tol
    payload = {
        "applicable": applicable,
        "marginal_mismatch": mismatch,
        "marginal_tol": args.marginal_tol,
        "epsilon": args.eps,
        "config": _config_echo(args, n),
    }
    if applicable:
        primal = cpl.cost_Ceps(gamma, ct, args.eps)
        dual = dual_objective(potential, density, ct, args.eps)
        gap = primal - dual
        payload.update({
            "primal": primal,
            "dual": dual,
            "gap": gap,
            "weak_duality_ok": bool(gap >= -1e-9),
        })
        print(f"duality: gap={gap:.3e} weak_duality_ok={gap >= -1e-9}")
    else:
        payload["reason"] = "coupling marginals do not match the configured density"
        print("duality: certificate inapplicable (marginal mismatch "
              f"{mismatch:.3e} > {args.marginal_tol:g})")
    write_json(out / "duality_certificate.json", payload)
    return 0


def cmd_check_conditions(args) -> int:
    import numpy as np

    from .cost import support_clearance_radius
    from .serialize import write_json
    from .space import check_nonconcentration, tail_cost_mass

    space, density, fn, n, ct = _build_problem(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    diameter = space.diameter
    if args.radii:
        try:
            radii = [float(v) for v in str(args.radii).split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad radii list: {exc}") from exc
    else:
        radii = [diameter / k for k in (4, 8, 16, 32)]
    report = check_nonconcentration(density, n, radii)
    origin = args.origin if args.origin is not None else space.size // 2
    if not 0 <= origin < space.size:
        raise ConfigError("origin index out of range")
    tail_radius = args.tail_radius if args.tail_radius is not None else diameter / 4
    tail = tail_cost_mass(density, fn, origin, tail_radius)

    zs = np.geomspace(max(diameter, 1.0) * 1e-6, max(diameter, 1.0) * 2, 64)
    f_values = fn(zs)
    decreasing = bool(np.all(np.diff(f_values) < 0))
    blows_up = bool(np.isinf(fn(0.0)))

    clearance = None
    clearance_note = None
    if report.largest_admissible is not None:
        try:
            clearance = support_clearance_radius(fn, report.largest_admissible, n)
        except ValueError as exc:
            clearance_note = str(exc)

    payload = {
        "marginal_concentration": {
            "threshold": report.threshold,
            "max_atom_mass": report.max_atom_mass,
            "atoms_ok": report.atoms_ok,
            "probes": [
                {"radius": r, "max_ball_mass": m, "admissible": ok}
                for r, m, ok in report.probes
            ],
            "largest_admissible_radius": report.largest_admissible,
            "ok": report.largest_admissible is not None,
        },
        "tail_integral": {
            "origin_index": origin,
            "excluded_radius": tail_radius,
            "value": tail,
            "finite": bool(np.isfinite(tail)),
            "negative_tail": bool(tail < 0),
        },
        "cost_family": {
            "kind": fn.label(),
            "decreasing_ok": decreasing,
            "blows_up_at_zero": blows_up,
        },
        "diagonal_clearance_radius": clearance,
        "diagonal_clearance_note": clearance_note,
        "config": _config_echo(args, n),
    }
    write_json(out / "conditions_report.json", payload)
    ok = report.largest_admissible is not None
    print(f"check-conditions: nonconcentration_ok={ok} "
          f"largest_radius={report.largest_admissible} tail={tail:.6g}")
    return 0


def cmd_block_approx(args) -> int:
    from .blockapprox import ScheduleInfeasibleError, block_approximation, build_schedule
    from .serialize import dump_coupling_csv, load_coupling_csv, write_json

    space, density, fn, n, ct = _build_problem(args)
    if args.step < 1:
        raise ConfigError("step index must be at least 1")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        gamma = load_coupling_csv(args.input, space, n)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load input coupling: {exc}") from exc
    try:
        result = block_approximation(gamma, args.step, fn, ct=ct)
    except ScheduleInfeasibleError as exc:
        suggestion = None
        for candidate in range(1, max(2 * args.step, 32) + 1):
            if candidate == args.step:
                continue
            try:
                build_schedule(gamma, candidate, fn)
            except ScheduleInfeasibleError:
                continue
            suggestion = candidate
            break
        message = f"block-approx: infeasible at n={args.step}: {exc}"
        if suggestion is not None:
            message += f"; smallest feasible step found: n={suggestion}"
        else:
            message += "; no feasible step found while scanning upward"
        print(message, file=sys.stderr)
        return 3

    sched = result.schedule
    payload = {
        "n": sched.n,
        "radius": sched.radius,
        "epsilon_n": sched.epsilon_n,
        "delta_n": sched.delta_n,
        "lambda_n": sched.lambda_n,
        "block_count": len(sched.blocks),
        "marginal_error": result.marginal_error,
        "symmetry_error": result.symmetry_error,
        "remainder_mass": result.remainder_mass,
        "remainder_mass_bound": 3 * sched.epsilon_n,
        "min_remainder_separation": result.min_remainder_separation,
        "separation_bound": 2 * sched.radius / 5,
        "entropy": result.entropy_value,
        "entropy_bound": result.entropy_bound,
        "cost_original": result.cost_original,
        "cost_approximation": result.cost_approximation,
        "cost_gap": result.cost_gap,
        "cost_gap_bound": result.cost_gap_bound,
        "config": _config_echo(args, n, {"step": args.step}),
    }
    write_json(out / "block_approx_report.json", payload)
    dump_coupling_csv(result.approximation, out / "block_approx_coupling.csv", _threshold(args))
    if not args.no_plots:
        from .figures import block_approx_figure

        block_approx_figure(space, result.approximation.mass, gamma.mass,
                            out / "block_approx_support.png")
    print(f"block-approx: n={args.step} cost_gap={result.cost_gap} "
          f"remainder={result.remainder_mass:.3e}")
    return 0


_COMMANDS = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "oracle": cmd_oracle,
    "duality": cmd_duality,
    "check-conditions": cmd_check_conditions,
    "block-approx": cmd_block_approx,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_thread_cap(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _merge_config(args)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # infeasibility surfaces with a dedicated code
        from .blockapprox import ScheduleInfeasibleError
        from .sinkhorn import InfeasibleProblemError

        if isinstance(exc, (ScheduleInfeasibleError, InfeasibleProblemError)):
            print(f"infeasible: {exc}", file=sys.stderr)
            return 3
        raise


if __name__ == "__main__":
    sys.exit(main())
