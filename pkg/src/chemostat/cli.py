"""Command-line front end: scenario-driven experiments with CSV outputs.

    chemostat aggregate --scenario FILE [--out FILE]
    chemostat simulate  --scenario FILE [--epsilon X] [--t-end T]
                        [--initial SPEC] [--out FILE]
    chemostat steady    --scenario FILE [--epsilon X] [--seed-index I] [--out FILE]
    chemostat sweep     --scenario FILE [--grid base,factor,count]
                        [--seed-index I] [--out FILE]
    chemostat cep       --scenario FILE [--grid base,factor,count] [--t-end T]
                        [--initial SPEC] [--out FILE]

--scenario accepts a path or a bundled name (sec51, sec52, sec53,
homogeneous, washout).  --initial is inline JSON, e.g.
'{"uniform": [0.1, 1.0], "seed": 7}'.  CHEMOSTAT_THREADS caps the
parallelism of sweep/cep grids.  Exit codes: 0 success, 2 validation
failure, 3 numerical failure.  Identical inputs give byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import analysis, simulate
from .aggregated import (
    aggregate,
    covariance_check,
    decompose_strength,
    equilibria,
    predict_cep,
)
from .errors import (
    LocalBreakEvenInfinite,
    NotLinear,
    NumericalError,
    TiedRStar,
    ValidationError,
)
from .scenario import Scenario, epsilon_grid, initial_state, load_scenario

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _threads(n_tasks: int) -> int:
    cap = os.environ.get("CHEMOSTAT_THREADS")
    cap = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(cap, n_tasks))


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        tmp = f"{path}.tmp.{os.getpid()}"
        with open(tmp, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)


def _integrator_config(scenario: Scenario, t_end: float, **overrides) -> simulate.IntegratorConfig:
    kwargs = dict(scenario.integrator or {})
    kwargs.update(overrides)
    kwargs["t_end"] = t_end
    return simulate.IntegratorConfig(**kwargs)


def cmd_aggregate(args) -> int:
    scenario = load_scenario(args.scenario)
    model = scenario.model
    agg = aggregate(model)
    lines = [f"scenario: {scenario.name} "
             f"({model.domain.site_count} sites, {model.species_count} species)"]
    lines.append(f"mean input: {_fmt(agg.input_mean)}")
    lines.append(f"mean resource loss: {_fmt(agg.resource_loss_mean)}")
    lines.append(f"washout resource level r_0*: {_fmt(agg.break_evens[0])}")
    lines.append("")
    lines.append("species  name                      mean_mortality  break_even")
    for i in range(1, model.species_count + 1):
        r = agg.break_evens[i]
        lines.append(
            f"{i:<8d} {agg.species_names[i - 1]:<25s} "
            f"{_fmt(agg.mortality_means[i - 1]):<15s} {'inf' if np.isinf(r) else _fmt(r)}"
        )
    lines.append("")
    cases = ", ".join(agg.cep_cases) if agg.cep_cases else "none"
    lines.append(f"exclusion-prediction cases holding: {cases}")

    lines.append("")
    lines.append("rest points of the averaged system:")
    for eq in equilibria(agg):
        tag = "stable" if eq.stable else "unstable"
        if not eq.hyperbolic:
            tag += ", not hyperbolic"
        point = "(" + ", ".join(_fmt(v) for v in eq.point) + ")"
        lines.append(f"  resident {eq.surviving_index}: {point}  [{tag}]")

    if agg.cep_valid:
        x0, _ = initial_state(scenario)
        try:
            pred = predict_cep(agg, x0 @ model.domain.weights)
            lines.append("")
            lines.append(
                f"predicted winner from the scenario initial state: "
                f"{pred.winner} (limit resource level {_fmt(pred.r_hat)})"
            )
            for warning in pred.warnings:
                lines.append(f"  warning: {warning}")
        except TiedRStar as exc:
            lines.append(f"no unique winner: {exc}")

    lines.append("")
    try:
        decomp = decompose_strength(model, agg)
        lines.append("strength decomposition (break_even = local_mean + nonlinearity + heterogeneity):")
        lines.append("species  local_mean           nonlinearity           heterogeneity          residual")
        for d in decomp:
            lines.append(
                f"{d.species:<8d} {_fmt(d.local_mean):<20s} {_fmt(d.nonlinearity):<22s} "
                f"{_fmt(d.heterogeneity):<22s} {d.residual:.3e}"
            )
    except LocalBreakEvenInfinite as exc:
        lines.append(f"strength decomposition unavailable: {exc}")

    try:
        reports = covariance_check(model, agg)
        lines.append("")
        lines.append("covariance identity (linear uptake): break_even = local_mean + covariance")
        for rep in reports:
            lines.append(
                f"  species {rep.species}: cov={_fmt(rep.covariance)} residual={rep.residual:.3e}"
            )
    except NotLinear:
        pass

    if any(y != 1.0 for y in model.yields_):
        lines.append("")
        lines.append("densities above are yield-rescaled; natural units scale by: "
                     + ", ".join(_fmt(y) for y in model.yields_))

    _write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    eps = args.epsilon if args.epsilon is not None else (scenario.epsilon or 0.01)
    t_end = args.t_end if args.t_end is not None else (scenario.t_end or 100.0)
    spec = json.loads(args.initial) if args.initial else None
    state, meta = initial_state(scenario, spec)
    cfg = _integrator_config(scenario, t_end)
    traj = simulate.integrate_full(scenario.model, eps, state, cfg)
    comment = f"scenario={scenario.name} epsilon={_fmt(eps)} t_end={_fmt(t_end)} {meta}"
    simulate.write_trajectory_csv(traj, args.out, comment=comment)
    return EXIT_OK


def cmd_steady(args) -> int:
    scenario = load_scenario(args.scenario)
    model = scenario.model
    eps = args.epsilon if args.epsilon is not None else (scenario.epsilon or 0.01)
    agg = aggregate(model)
    eqs = {eq.surviving_index: eq for eq in equilibria(agg)}
    if args.seed_index not in eqs:
        raise ValidationError(
            f"seed index {args.seed_index} is not a rest point of the averaged "
            f"system (available: {sorted(eqs)})"
        )
    steady = analysis.continue_steady(model, eps, eqs[args.seed_index])
    steady = analysis.stability_of(model, steady)

    P = model.domain.site_count
    lines = [
        f"# scenario={scenario.name} epsilon={_fmt(eps)} seed={args.seed_index} "
        f"residual={steady.residual:.3e} "
        f"(fast component of the state = manifold offset at this rest point)",
        "component," + ",".join(f"site_{x + 1}" for x in range(P)),
    ]
    names = ["R"] + [f"U_{i}" for i in range(1, model.species_count + 1)]
    for name, row in zip(names, steady.state):
        lines.append(name + "," + ",".join(_fmt(v) for v in row))
    _write_text(args.out, "\n".join(lines) + "\n")

    report_path = (args.out + ".stability.csv") if args.out else None
    analysis.write_stability_csv(
        [steady],
        report_path or "/dev/stdout",
        comment=f"scenario={scenario.name} epsilon={_fmt(eps)}",
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = load_scenario(args.scenario)
    model = scenario.model
    grid = epsilon_grid(args.grid or scenario.sweep or "0.1,0.5,9")
    agg = aggregate(model)
    eqs = {eq.surviving_index: eq for eq in equilibria(agg)}
    if args.seed_index not in eqs:
        raise ValidationError(
            f"seed index {args.seed_index} is not a rest point of the averaged "
            f"system (available: {sorted(eqs)})"
        )
    result = analysis.epsilon_sweep(model, eqs[args.seed_index], grid)
    analysis.write_sweep_csv(
        result,
        args.out or "/dev/stdout",
        comment=(
            f"scenario={scenario.name} seed={args.seed_index} "
            f"slope={_fmt(result.slope) if not result.degenerate else 'degenerate'}"
        ),
    )
    return EXIT_OK


def cmd_cep(args) -> int:
    scenario = load_scenario(args.scenario)
    model = scenario.model
    grid = epsilon_grid(args.grid or scenario.sweep or "0.1,0.5,9")
    t_end = args.t_end if args.t_end is not None else (scenario.t_end or 500.0)
    spec = json.loads(args.initial) if args.initial else None
    state, meta = initial_state(scenario, spec)
    cfg = _integrator_config(scenario, t_end)

    def run(e: float):
        traj = simulate.integrate_full(model, float(e), state, cfg)
        return simulate.classify_survivors(traj.final_state)

    with ThreadPoolExecutor(max_workers=_threads(grid.size)) as pool:
        reports = list(pool.map(run, grid))
    labels = []
    for rep in reports:
        if rep.undecided:
            labels.append("undecided")
        elif rep.survivors:
            labels.append("+".join(str(i) for i in rep.survivors))
        else:
            labels.append("0")
    table = analysis.CepTable(epsilons=grid, reports=tuple(reports), labels=tuple(labels))
    if any(label == "undecided" for label in labels):
        sys.stderr.write(
            "some entries are undecided: densities sit between the extinction "
            "and survival thresholds; rerun with a larger --t-end\n"
        )
    analysis.write_cep_csv(
        table,
        args.out or "/dev/stdout",
        comment=f"scenario={scenario.name} t_end={_fmt(t_end)} {meta}",
    )
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="chemostat",
        description="Multi-site chemostat competition: averaged analysis and stiff simulation.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, epsilon=False, grid=False, t_end=False, seed_index=False, init=False):
        sp.add_argument("--scenario", required=True, help="scenario file or bundled name")
        sp.add_argument("--out", default=None, help="output file (default: stdout)")
        if epsilon:
            sp.add_argument("--epsilon", type=float, default=None)
        if grid:
            sp.add_argument("--grid", default=None, help="epsilon grid 'base,factor,count'")
        if t_end:
            sp.add_argument("--t-end", dest="t_end", type=float, default=None)
        if seed_index:
            sp.add_argument("--seed-index", dest="seed_index", type=int, default=0,
                            help="surviving index of the averaged rest point to continue")
        if init:
            sp.add_argument("--initial", default=None, help="inline JSON initial spec")

    sp = sub.add_parser("aggregate", help="averaged model, break-evens, rest points, decomposition")
    common(sp)
    sp.set_defaults(func=cmd_aggregate)

    sp = sub.add_parser("simulate", help="integrate the full system, write a trajectory CSV")
    common(sp, epsilon=True, t_end=True, init=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("steady", help="continue an averaged rest point to a full steady state")
    common(sp, epsilon=True, seed_index=True)
    sp.set_defaults(func=cmd_steady)

    sp = sub.add_parser("sweep", help="steady-state error across an epsilon grid")
    common(sp, grid=True, seed_index=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("cep", help="survivor table across an epsilon grid")
    common(sp, grid=True, t_end=True, init=True)
    sp.set_defaults(func=cmd_cep)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"validation error: {exc}\n")
        return EXIT_VALIDATION
    except NumericalError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
