"""Compare the compiled span integrator against the pure-python reference.

Runs the packaged scenarios once per backend, reports steps per second, and
checks that the two backends land on the same final positions. Invoke as

    python3 benchmarks/bench_backends.py [--dt 0.001] [--repeat 3]
"""

import argparse
import time

import numpy as np

from formlab import backend, scenario, sim


def run_once(sc, backend_name, dt):
    t0 = time.perf_counter()
    res = sim.simulate(
        scenario.build_formation(sc),
        sc.axis,
        scenario.build_schedule(sc),
        initial_positions=scenario.initial_positions(sc),
        alpha=sc.defaults.alpha,
        dt=dt,
        mode=sc.defaults.mode,
        integrator=sc.defaults.integrator,
        seed=sc.defaults.seed,
        stride=sc.defaults.stride,
        backend=backend_name,
    )
    elapsed = time.perf_counter() - t0
    return res, elapsed


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dt", type=float, default=0.001)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    names = backend.available_backends()
    print(f"backends: {', '.join(names)}")
    if "compiled" not in names:
        print("note: compiled extension not built, timing reference only")

    for fixture in scenario.packaged_scenarios():
        sc = scenario.load_packaged(fixture)
        print(f"\n{fixture} (dt={args.dt:g}):")
        finals = {}
        for name in names:
            best = np.inf
            steps = None
            for _ in range(args.repeat):
                res, elapsed = run_once(sc, name, args.dt)
                best = min(best, elapsed)
                steps = res.manifest["steps"]
            finals[name] = res.state.positions
            print(f"  {name:>9}: {steps} steps in {best:.3f} s "
                  f"({steps / best:,.0f} steps/s)")
        if len(finals) == 2:
            gap = float(np.max(np.abs(finals["compiled"] - finals["reference"])))
            print(f"  final-position agreement: {gap:.3e}")
            if gap > 1e-9:
                raise SystemExit("backends disagree beyond 1e-9")


if __name__ == "__main__":
    main()
