"""Plotting of run artifacts: trajectory overview and per-axis error curves.

Everything here draws from the CSV files a run writes, not from live state,
so plots can be regenerated long after a run. Output is SVG. The trajectory
figure is a plan view for planar runs and a fixed isometric projection for
spatial ones; obstacles are shaded purely as scenery and snapshots of the
formation polygon show the shape morphing along the way.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
from matplotlib.patches import Polygon as MplPolygon  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

plt.rcParams["svg.hashsalt"] = "formlab"

from formlab.errors import FormlabError  # noqa: E402
from formlab.output import ERRORS_HEADER, TRAJECTORY_HEADER  # noqa: E402
from formlab.scenario import BoxSpec, PolygonSpec  # noqa: E402

ROLE_COLORS = {"follower": "tab:blue", "leader": "tab:red", "joining": "tab:green"}
_OBSTACLE_STYLE = dict(facecolor="0.82", edgecolor="0.55", zorder=0)

TRAJECTORY_PLOT = "trajectory.svg"
ERROR_PLOTS = ("errors_x.svg", "errors_y.svg", "errors_z.svg")

# Fixed isometric-style view direction for spatial runs.
_AZIM = np.deg2rad(-60.0)
_ELEV = np.deg2rad(28.0)
_VIEW_U = np.array([-np.sin(_AZIM), np.cos(_AZIM), 0.0])
_VIEW_V = np.array(
    [-np.cos(_AZIM) * np.sin(_ELEV), -np.sin(_AZIM) * np.sin(_ELEV), np.cos(_ELEV)]
)


@dataclass(frozen=True)
class AgentTrack:
    agent: int
    roles: tuple
    t: np.ndarray
    values: np.ndarray


def _read_csv(path, header: str, n_values: int, role_column: bool):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise FormlabError(f"{path}: empty file, expected header {header!r}") from None
        if got != header.split(","):
            raise FormlabError(f"{path}: header {','.join(got)!r} does not match {header!r}")
        tracks = {}
        for row in reader:
            if not row:
                continue
            t = float(row[0])
            agent = int(row[1])
            role = row[2] if role_column else ""
            vals = [float(v) for v in row[3 if role_column else 2:]]
            if len(vals) != n_values:
                raise FormlabError(f"{path}: malformed row for t={row[0]}")
            entry = tracks.setdefault(agent, ([], [], []))
            entry[0].append(t)
            entry[1].append(vals)
            entry[2].append(role)
    if not tracks:
        raise FormlabError(f"{path}: no data rows, nothing to plot")
    return tuple(
        AgentTrack(
            agent=aid,
            roles=tuple(tracks[aid][2]),
            t=np.array(tracks[aid][0]),
            values=np.array(tracks[aid][1]),
        )
        for aid in sorted(tracks)
    )


def read_trajectory_csv(path) -> tuple:
    """Per-agent position/velocity tracks, ordered by agent id."""
    return _read_csv(path, TRAJECTORY_HEADER, 6, role_column=True)


def read_errors_csv(path) -> tuple:
    """Per-agent tracking-error tracks, ordered by agent id."""
    return _read_csv(path, ERRORS_HEADER, 3, role_column=False)


def _is_planar(tracks) -> bool:
    return all(
        np.all(tr.values[:, 2] == 0.0) and np.all(tr.values[:, 5] == 0.0)
        for tr in tracks
    )


def _project(points: np.ndarray, planar: bool) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if planar:
        return pts[:, :2]
    return np.column_stack([pts @ _VIEW_U, pts @ _VIEW_V])


def _agent_color(track: AgentTrack) -> str:
    if "joining" in track.roles:
        return ROLE_COLORS["joining"]
    return ROLE_COLORS[track.roles[0]]


def _box_corners(lo, hi) -> np.ndarray:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    corners = []
    for ix in (lo[0], hi[0]):
        for iy in (lo[1], hi[1]):
            for iz in (lo[2], hi[2]):
                corners.append((ix, iy, iz))
    return np.array(corners)

_BOX_FACES = (
    (0, 1, 3, 2), (4, 5, 7, 6), (0, 1, 5, 4),
    (2, 3, 7, 6), (0, 2, 6, 4), (1, 3, 7, 5),
)


def _draw_obstacles(ax, obstacles, planar: bool) -> None:
    for obs in obstacles:
        if isinstance(obs, PolygonSpec):
            ax.add_patch(MplPolygon(np.asarray(obs.vertices), closed=True, **_OBSTACLE_STYLE))
        elif isinstance(obs, BoxSpec):
            if planar:
                lo, hi = obs.lo, obs.hi
                ax.add_patch(
                    Rectangle(lo, hi[0] - lo[0], hi[1] - lo[1], **_OBSTACLE_STYLE)
                )
            else:
                corners = _project(_box_corners(obs.lo, obs.hi), planar=False)
                for face in _BOX_FACES:
                    ax.add_patch(
                        MplPolygon(corners[list(face)], closed=True, alpha=0.35,
                                   **_OBSTACLE_STYLE)
                    )


def _snapshot_times(tracks, count: int = 6) -> np.ndarray:
    all_t = np.unique(np.concatenate([tr.t for tr in tracks]))
    if len(all_t) <= count:
        return all_t
    idx = np.unique(np.linspace(0, len(all_t) - 1, count).round().astype(int))
    return all_t[idx]


def plot_trajectory(tracks, out_path, obstacles=()) -> None:
    """Paths for every agent plus formation-polygon snapshots."""
    planar = _is_planar(tracks)
    fig, ax = plt.subplots(figsize=(7.5, 6.5))
    _draw_obstacles(ax, obstacles, planar)
    for tr in tracks:
        xy = _project(tr.values[:, :3], planar)
        ax.plot(xy[:, 0], xy[:, 1], color=_agent_color(tr), alpha=0.45, lw=1.0)
    for t_snap in _snapshot_times(tracks):
        pts, cols = [], []
        for tr in tracks:
            hit = np.nonzero(tr.t == t_snap)[0]
            if hit.size:
                pts.append(tr.values[hit[0], :3])
                cols.append(_agent_color(tr))
        if len(pts) < 2:
            continue
        xy = _project(np.array(pts), planar)
        loop = np.vstack([xy, xy[:1]])
        ax.plot(loop[:, 0], loop[:, 1], color="0.45", lw=0.8, zorder=2)
        ax.scatter(xy[:, 0], xy[:, 1], c=cols, s=18, zorder=3)
        ax.annotate(
            f"t={t_snap:g}", xy=xy.mean(axis=0), fontsize=7,
            color="0.35", ha="center", zorder=4,
        )
    handles = [
        plt.Line2D([], [], color=c, marker="o", ls="", label=r)
        for r, c in ROLE_COLORS.items()
        if any(r in tr.roles for tr in tracks)
    ]
    ax.legend(handles=handles, loc="best", fontsize=8)
    ax.set_aspect("equal", adjustable="datalim")
    if planar:
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    else:
        ax.set_xlabel("view u")
        ax.set_ylabel("view v")
        ax.set_title("fixed isometric view")
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_errors(error_tracks, out_dir) -> list:
    """One error-vs-time figure per coordinate axis."""
    paths = []
    for k, (fname, label) in enumerate(zip(ERROR_PLOTS, ("x", "y", "z"))):
        fig, ax = plt.subplots(figsize=(7.5, 4.0))
        for tr in error_tracks:
            ax.plot(tr.t, tr.values[:, k], lw=1.0, label=f"agent {tr.agent}")
        ax.set_xlabel("t [s]")
        ax.set_ylabel(f"e{label}")
        ax.legend(fontsize=8, ncol=2)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = os.path.join(out_dir, fname)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths


def plot_run(traj_path, err_path, out_dir, obstacles=()) -> dict:
    """Read both CSV artifacts and write all four SVG figures."""
    os.makedirs(out_dir, exist_ok=True)
    tracks = read_trajectory_csv(traj_path)
    error_tracks = read_errors_csv(err_path)
    traj_out = os.path.join(out_dir, TRAJECTORY_PLOT)
    plot_trajectory(tracks, traj_out, obstacles=obstacles)
    err_outs = plot_errors(error_tracks, out_dir)
    return {"trajectory": traj_out, "errors": err_outs}
