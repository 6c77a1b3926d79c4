"""Pure-NumPy span integrator.

This is the reference implementation of the backend contract: given a
SpanProblem, march the coupled leader/follower dynamics from t0 to t_end and
return the final state plus the logged samples. The compiled kernel mirrors
this module loop for loop; keep the two in sync when touching either.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from formlab._span import (
    INTEGRATOR_RK4,
    MODE_IMPLICIT,
    PROFILE_CONSTANT,
    PROFILE_LINEAR,
    SpanProblem,
    SpanResult,
)
from formlab.errors import SimulationError

BACKEND_NAME = "reference"


def _profile(kind: int, frm, to, s: float, duration: float):
    if kind == PROFILE_CONSTANT:
        return frm, np.zeros_like(frm) if isinstance(frm, np.ndarray) else 0.0
    if kind == PROFILE_LINEAR:
        w, dw = s, 1.0
    else:
        w, dw = s * s * (3.0 - 2.0 * s), 6.0 * s * (1.0 - s)
    span = to - frm
    return frm + span * w, span * (dw / duration)


def _derivative(prob: SpanProblem, t: float, p: np.ndarray, v_prev: np.ndarray, k2mat: np.ndarray) -> np.ndarray:
    d = prob.dim
    n_f = prob.n_followers
    n_l = prob.n_leaders

    dur = prob.seg_t1 - prob.seg_t0
    s = min(max((t - prob.seg_t0) / dur, 0.0), 1.0)
    trans, trans_rate = _profile(prob.kind_translation, prob.translation_from, prob.translation_to, s, dur)
    k, k_rate = _profile(prob.kind_scale, prob.scale_from, prob.scale_to, s, dur)
    ang, ang_rate = _profile(prob.kind_angle, prob.angle_from, prob.angle_to, s, dur)

    gen = prob.axis_gen
    rot = np.eye(d) + np.sin(ang) * gen + (1.0 - np.cos(ang)) * k2mat
    rot_rate = ang_rate * (gen @ rot)
    gain = k_rate * rot + k * rot_rate

    rel = prob.track_rel
    targets = prob.center + trans + k * (rel @ rot.T)
    target_vel = trans_rate + rel @ gain.T

    dp = np.empty_like(p)
    p_track = p[n_f:]
    dp[n_f:] = -np.tanh(p_track - targets) + target_vel

    if prob.mode == MODE_IMPLICIT:
        p_f = p[:n_f].reshape(n_f * d)
        p_l = p[n_f : n_f + n_l].reshape(n_l * d)
        v_l = dp[n_f : n_f + n_l].reshape(n_l * d)
        rhs = -(prob.w_fl @ v_l) - prob.alpha * (prob.w_ff @ p_f + prob.w_fl @ p_l)
        sol = scipy.linalg.lu_solve((prob.lu, prob.piv), rhs, check_finite=False)
        dp[:n_f] = sol.reshape(n_f, d)
    else:
        ptr = prob.edge_ptr
        for i in range(n_f):
            acc = np.zeros(d)
            for e in range(ptr[i], ptr[i + 1]):
                j = prob.edge_dst[e]
                acc += prob.edge_w[e] @ (prob.alpha * (p[j] - p[i]) + v_prev[j])
            dp[i] = prob.gamma_inv[i] @ acc
    return dp


def integrate_span(prob: SpanProblem) -> SpanResult:
    d = prob.dim
    p = prob.p0.copy()
    v_prev = prob.v0.copy()
    k2mat = prob.axis_gen @ prob.axis_gen

    n_steps = prob.n_steps
    step = prob.step0
    rk4 = prob.integrator == INTEGRATOR_RK4

    t_rows: list[float] = []
    p_rows: list[np.ndarray] = []
    v_rows: list[np.ndarray] = []

    for i in range(n_steps):
        t_i = prob.t0 + i * prob.dt
        last = i == n_steps - 1
        h = (prob.t_end - t_i) if last else prob.dt
        k1 = _derivative(prob, t_i, p, v_prev, k2mat)
        if rk4:
            k2 = _derivative(prob, t_i + 0.5 * h, p + (0.5 * h) * k1, v_prev, k2mat)
            k3 = _derivative(prob, t_i + 0.5 * h, p + (0.5 * h) * k2, v_prev, k2mat)
            k4 = _derivative(prob, t_i + h, p + h * k3, v_prev, k2mat)
            p = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            p = p + h * k1
        v_prev = k1
        step += 1
        t_now = prob.t_end if last else t_i + h
        if step % prob.stride == 0 or last:
            if not np.all(np.isfinite(p)):
                raise SimulationError(f"state became non-finite by t={t_now:.6f}")
            t_rows.append(t_now)
            p_rows.append(p.copy())
            v_rows.append(v_prev.copy())

    return SpanResult(
        p_final=p,
        v_final=v_prev.copy(),
        step_final=step,
        t_log=np.asarray(t_rows, dtype=np.float64),
        p_log=np.asarray(p_rows, dtype=np.float64).reshape(len(t_rows), prob.n_total, d),
        v_log=np.asarray(v_rows, dtype=np.float64).reshape(len(t_rows), prob.n_total, d),
    )
