"""Run artifacts: trajectory and error CSV files plus the run manifest.

Numbers are written with repr-faithful precision (17 significant digits) so
a rerun with the same scenario, seed, and backend produces byte-identical
files. Timestamps of any kind are deliberately absent from the manifest.
"""

from __future__ import annotations

import json
import os

TRAJECTORY_HEADER = "t,agent,role,x,y,z,vx,vy,vz"
ERRORS_HEADER = "t,agent,ex,ey,ez"

TRAJECTORY_FILE = "trajectory.csv"
ERRORS_FILE = "errors.csv"
MANIFEST_FILE = "manifest.json"


def _g(x: float) -> str:
    return format(float(x), ".17g")


def write_trajectory_csv(result, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(TRAJECTORY_HEADER + "\n")
        for t, agent_id, role, p, v, _ in result.samples():
            fh.write(
                f"{_g(t)},{agent_id},{role},"
                f"{_g(p[0])},{_g(p[1])},{_g(p[2])},"
                f"{_g(v[0])},{_g(v[1])},{_g(v[2])}\n"
            )


def write_errors_csv(result, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(ERRORS_HEADER + "\n")
        for t, agent_id, _, _, _, e in result.samples():
            fh.write(f"{_g(t)},{agent_id},{_g(e[0])},{_g(e[1])},{_g(e[2])}\n")


def write_manifest(result, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(result.manifest, fh, indent=2)
        fh.write("\n")


def write_run(result, out_dir) -> dict:
    """Write all three artifacts into out_dir, creating it if needed."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "trajectory": os.path.join(out_dir, TRAJECTORY_FILE),
        "errors": os.path.join(out_dir, ERRORS_FILE),
        "manifest": os.path.join(out_dir, MANIFEST_FILE),
    }
    write_trajectory_csv(result, paths["trajectory"])
    write_errors_csv(result, paths["errors"])
    write_manifest(result, paths["manifest"])
    return paths
