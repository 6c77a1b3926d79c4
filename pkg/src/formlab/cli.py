"""Command line entry point.

Three subcommands: ``validate`` checks a scenario file and reports every
problem with its field path, ``run`` simulates a scenario and writes the CSV
and manifest artifacts, ``plot`` turns those artifacts into SVG figures.
All configuration comes from the scenario file and explicit flags; nothing
is read from the environment. Exit status is 0 exactly when the command
succeeded.
"""

from __future__ import annotations

import argparse
import os
import sys

from formlab import output, scenario, sim
from formlab.errors import FormlabError


def _load(path_or_name: str) -> scenario.ScenarioFile:
    """A scenario file path, or the bare name of a packaged fixture."""
    if os.path.exists(path_or_name):
        return scenario.load_scenario(path_or_name)
    name = path_or_name if path_or_name.endswith(".json") else path_or_name + ".json"
    if name in scenario.packaged_scenarios():
        return scenario.load_packaged(name)
    raise FormlabError(
        f"no such scenario file: {path_or_name!r} "
        f"(packaged: {', '.join(scenario.packaged_scenarios())})"
    )


def _cmd_validate(args) -> int:
    sc = _load(args.scenario)
    sched = scenario.build_schedule(sc)
    n_l = sc.n_agents - sc.n_followers
    print(
        f"OK {sc.name}: {sc.n_agents} agents ({sc.n_followers} followers, "
        f"{n_l} leaders), {len(sc.segments)} segments, "
        f"{len(sc.switches)} switches, {len(sc.joins)} joins, "
        f"horizon {sched.t_end - sched.t_start:g} s"
    )
    return 0


def _cmd_run(args) -> int:
    sc = _load(args.scenario)
    d = sc.defaults
    result = sim.simulate(
        scenario.build_formation(sc),
        sc.axis,
        scenario.build_schedule(sc),
        initial_positions=scenario.initial_positions(sc),
        alpha=d.alpha if args.alpha is None else args.alpha,
        dt=d.dt if args.dt is None else args.dt,
        mode=d.mode if args.mode is None else args.mode,
        integrator=d.integrator if args.integrator is None else args.integrator,
        seed=d.seed if args.seed is None else args.seed,
        stride=d.stride if args.stride is None else args.stride,
    )
    paths = output.write_run(result, args.out)
    for key in ("trajectory", "errors", "manifest"):
        print(f"wrote {paths[key]}")
    if args.plot:
        from formlab import plots

        figs = plots.plot_run(
            paths["trajectory"], paths["errors"], args.out, obstacles=sc.obstacles
        )
        print(f"wrote {figs['trajectory']}")
        for p in figs["errors"]:
            print(f"wrote {p}")
    return 0


def _cmd_plot(args) -> int:
    from formlab import plots

    obstacles = ()
    if args.scenario is not None:
        obstacles = _load(args.scenario).obstacles
    figs = plots.plot_run(args.traj, args.err, args.out, obstacles=obstacles)
    print(f"wrote {figs['trajectory']}")
    for p in figs["errors"]:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="formlab",
        description="formation maneuver control: validate scenarios, run them, plot runs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check a scenario file and exit")
    p_val.add_argument("scenario", help="scenario JSON path or packaged name")
    p_val.set_defaults(func=_cmd_validate)

    p_run = sub.add_parser("run", help="simulate a scenario and write artifacts")
    p_run.add_argument("scenario", help="scenario JSON path or packaged name")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--mode", choices=scenario.MODES, default=None,
                       help="follower update law (default from scenario)")
    p_run.add_argument("--dt", type=float, default=None, help="integrator step")
    p_run.add_argument("--alpha", type=float, default=None, help="tracking gain")
    p_run.add_argument("--seed", type=int, default=None, help="weight synthesis seed")
    p_run.add_argument("--integrator", choices=scenario.INTEGRATORS, default=None)
    p_run.add_argument("--stride", type=int, default=None,
                       help="log every Nth step (default from scenario)")
    p_run.add_argument("--plot", action="store_true",
                       help="also write the SVG figures")
    p_run.set_defaults(func=_cmd_run)

    p_plot = sub.add_parser("plot", help="render figures from run artifacts")
    p_plot.add_argument("--traj", required=True, help="trajectory CSV")
    p_plot.add_argument("--err", required=True, help="errors CSV")
    p_plot.add_argument("--out", required=True, help="output directory")
    p_plot.add_argument("--scenario", default=None,
                        help="scenario file, for obstacle decoration")
    p_plot.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FormlabError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
