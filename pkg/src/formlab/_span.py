"""Packed description of one integration span.

A span is the longest stretch of simulated time over which nothing
structural changes: the roster is fixed, one maneuver segment is active, and
the weight matrix is constant. The driver slices the run into spans and hands
each one to an integration backend as a SpanProblem, which deliberately
contains only scalars and plain float64/int32 arrays so the compiled kernel
can consume it without touching Python objects in its hot loop.

State layout within a span: followers first, then leaders, then any spawned
agents still flying in. Tracked agents (leaders plus fly-ins) share one
target formula, so their nominal offsets live in a single ``track_rel``
block, leaders first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MODE_IMPLICIT = 0
MODE_CAUSAL = 1

INTEGRATOR_EULER = 0
INTEGRATOR_RK4 = 1

PROFILE_CONSTANT = 0
PROFILE_LINEAR = 1
PROFILE_SMOOTHSTEP = 2

_PROFILE_CODES = {"constant": PROFILE_CONSTANT, "linear": PROFILE_LINEAR, "smoothstep": PROFILE_SMOOTHSTEP}


def profile_code(kind: str) -> int:
    return _PROFILE_CODES[kind]


def _c64(arr, shape) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(arr, dtype=np.float64)).reshape(shape)
    return out


@dataclass
class SpanProblem:
    """Everything a backend needs to integrate one span.

    ``lu``/``piv`` hold the LU factorization of the follower block exactly as
    scipy's ``lu_factor`` returns it (piv is 0-based; the compiled kernel
    shifts it for LAPACK). They are required in implicit mode, as are
    ``w_ff``/``w_fl``. Causal mode instead requires the flattened edge list
    and the per-follower inverted weight sums.
    """

    dim: int
    n_followers: int
    n_leaders: int
    n_flying: int

    t0: float
    t_end: float
    dt: float
    alpha: float
    mode: int
    integrator: int

    p0: np.ndarray          # (n_total, dim)
    v0: np.ndarray          # (n_total, dim) commanded velocity from the step before t0
    center: np.ndarray      # (dim,)
    track_rel: np.ndarray   # (n_leaders + n_flying, dim)
    axis_gen: np.ndarray    # (dim, dim) rotation generator for the active axis

    seg_t0: float
    seg_t1: float
    kind_translation: int
    kind_scale: int
    kind_angle: int
    translation_from: np.ndarray  # (dim,)
    translation_to: np.ndarray    # (dim,)
    scale_from: float
    scale_to: float
    angle_from: float
    angle_to: float

    stride: int
    step0: int

    w_ff: np.ndarray | None = None   # (m, m) C order
    w_fl: np.ndarray | None = None   # (m, n_leaders*dim) C order
    lu: np.ndarray | None = None     # (m, m) Fortran order
    piv: np.ndarray | None = None    # (m,) int32, 0-based

    edge_ptr: np.ndarray | None = None    # (n_followers + 1,) int32
    edge_dst: np.ndarray | None = None    # (E,) int32 absolute state index
    edge_w: np.ndarray | None = None      # (E, dim, dim)
    gamma_inv: np.ndarray | None = None   # (n_followers, dim, dim)

    n_total: int = field(init=False)

    def __post_init__(self):
        d = self.dim
        if d not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {d}")
        self.n_total = self.n_followers + self.n_leaders + self.n_flying
        n_track = self.n_leaders + self.n_flying
        self.p0 = _c64(self.p0, (self.n_total, d))
        self.v0 = _c64(self.v0, (self.n_total, d))
        self.center = _c64(self.center, (d,))
        self.track_rel = _c64(self.track_rel, (n_track, d))
        self.axis_gen = _c64(self.axis_gen, (d, d))
        self.translation_from = _c64(self.translation_from, (d,))
        self.translation_to = _c64(self.translation_to, (d,))
        self.scale_from = float(self.scale_from)
        self.scale_to = float(self.scale_to)
        self.angle_from = float(self.angle_from)
        self.angle_to = float(self.angle_to)
        if not self.t_end > self.t0:
            raise ValueError(f"span window [{self.t0}, {self.t_end}] is empty")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if self.stride < 1:
            raise ValueError("stride must be at least 1")
        m = self.n_followers * d
        if self.mode == MODE_IMPLICIT:
            if self.w_ff is None or self.w_fl is None or self.lu is None or self.piv is None:
                raise ValueError("implicit mode needs w_ff, w_fl, lu, and piv")
            self.w_ff = _c64(self.w_ff, (m, m))
            self.w_fl = _c64(self.w_fl, (m, self.n_leaders * d))
            self.lu = np.asfortranarray(np.asarray(self.lu, dtype=np.float64)).reshape(m, m)
            self.piv = np.ascontiguousarray(np.asarray(self.piv, dtype=np.int32)).reshape(m)
        elif self.mode == MODE_CAUSAL:
            if (
                self.edge_ptr is None
                or self.edge_dst is None
                or self.edge_w is None
                or self.gamma_inv is None
            ):
                raise ValueError("causal mode needs edge_ptr, edge_dst, edge_w, and gamma_inv")
            self.edge_ptr = np.ascontiguousarray(np.asarray(self.edge_ptr, dtype=np.int32))
            self.edge_dst = np.ascontiguousarray(np.asarray(self.edge_dst, dtype=np.int32))
            n_edges = int(self.edge_ptr[-1])
            self.edge_w = _c64(self.edge_w, (n_edges, d, d))
            self.gamma_inv = _c64(self.gamma_inv, (self.n_followers, d, d))
            if self.edge_ptr.shape != (self.n_followers + 1,):
                raise ValueError("edge_ptr must have one entry per follower plus a terminator")
            if np.any(self.edge_dst < 0) or np.any(self.edge_dst >= self.n_total):
                raise ValueError("edge_dst holds an out-of-range state index")
        else:
            raise ValueError(f"unknown mode {self.mode}")
        if self.integrator not in (INTEGRATOR_EULER, INTEGRATOR_RK4):
            raise ValueError(f"unknown integrator {self.integrator}")

    @property
    def n_steps(self) -> int:
        total = self.t_end - self.t0
        return max(1, int(np.ceil(total / self.dt - 1e-9)))

    def max_log_rows(self) -> int:
        return self.n_steps // self.stride + 2


@dataclass
class SpanResult:
    """Final state plus the rows the span chose to log."""

    p_final: np.ndarray
    v_final: np.ndarray
    step_final: int
    t_log: np.ndarray   # (rows,)
    p_log: np.ndarray   # (rows, n_total, dim)
    v_log: np.ndarray   # (rows, n_total, dim)
