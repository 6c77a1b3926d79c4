# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled span integrator.

Mirrors formlab._reference step for step; see that module for the readable
account of the dynamics. The only intentional differences are mechanical:
hand-rolled small-matrix products instead of BLAS calls, and a direct
LAPACK dgetrs call (with the pivot array shifted to 1-based) instead of
scipy's lu_solve wrapper. Keep the two implementations in lockstep.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, isfinite, sin, tanh
from scipy.linalg.cython_lapack cimport dgetrs

from formlab._span import (
    INTEGRATOR_RK4,
    MODE_IMPLICIT,
    PROFILE_CONSTANT,
    PROFILE_LINEAR,
    SpanResult,
)
from formlab.errors import SimulationError

cnp.import_array()

BACKEND_NAME = "compiled"

cdef int _CONSTANT = PROFILE_CONSTANT
cdef int _LINEAR = PROFILE_LINEAR
cdef int _MODE_IMPLICIT = MODE_IMPLICIT
cdef int _RK4 = INTEGRATOR_RK4


cdef inline void _blend(int kind, double s, double inv_dur, double* w, double* dw) noexcept nogil:
    if kind == _CONSTANT:
        w[0] = 0.0
        dw[0] = 0.0
    elif kind == _LINEAR:
        w[0] = s
        dw[0] = inv_dur
    else:
        w[0] = s * s * (3.0 - 2.0 * s)
        dw[0] = 6.0 * s * (1.0 - s) * inv_dur


cdef class _SpanKernel:
    cdef int d, n_f, n_l, n_track, n_total, mode, rk4, kind_t, kind_k, kind_a, m
    cdef double alpha, seg_t0, dur, inv_dur
    cdef double k_from, k_to, a_from, a_to
    cdef double[::1] center, t_from, t_to
    cdef double[:, ::1] gen, gen2, track_rel
    cdef double[:, ::1] w_ff, w_fl
    cdef double[::1, :] lu
    cdef int[::1] piv1
    cdef int[::1] edge_ptr, edge_dst
    cdef double[:, :, ::1] edge_w, gamma_inv
    # scratch
    cdef double[:, ::1] rot, rot_rate, gain
    cdef double[::1] rhs, p_l_flat

    def __init__(self, prob):
        cdef int i, j, k
        self.d = prob.dim
        self.n_f = prob.n_followers
        self.n_l = prob.n_leaders
        self.n_track = prob.n_leaders + prob.n_flying
        self.n_total = prob.n_total
        self.mode = prob.mode
        self.rk4 = 1 if prob.integrator == _RK4 else 0
        self.alpha = prob.alpha
        self.seg_t0 = prob.seg_t0
        self.dur = prob.seg_t1 - prob.seg_t0
        self.inv_dur = 1.0 / self.dur
        self.kind_t = prob.kind_translation
        self.kind_k = prob.kind_scale
        self.kind_a = prob.kind_angle
        self.k_from = prob.scale_from
        self.k_to = prob.scale_to
        self.a_from = prob.angle_from
        self.a_to = prob.angle_to
        self.center = prob.center
        self.t_from = prob.translation_from
        self.t_to = prob.translation_to
        self.gen = prob.axis_gen
        gen2 = np.asarray(prob.axis_gen) @ np.asarray(prob.axis_gen)
        self.gen2 = np.ascontiguousarray(gen2)
        self.track_rel = prob.track_rel
        self.m = self.n_f * self.d
        if self.mode == _MODE_IMPLICIT:
            self.w_ff = prob.w_ff
            self.w_fl = prob.w_fl
            self.lu = prob.lu
            self.piv1 = np.ascontiguousarray(np.asarray(prob.piv, dtype=np.int32) + 1)
            self.rhs = np.empty(self.m)
            self.p_l_flat = np.empty(self.n_l * self.d)
        else:
            self.edge_ptr = prob.edge_ptr
            self.edge_dst = prob.edge_dst
            self.edge_w = prob.edge_w
            self.gamma_inv = prob.gamma_inv
        self.rot = np.empty((self.d, self.d))
        self.rot_rate = np.empty((self.d, self.d))
        self.gain = np.empty((self.d, self.d))

    cdef int _deriv(self, double t, double[:, ::1] p, double[:, ::1] v_prev, double[:, ::1] dp) except -1:
        cdef int d = self.d
        cdef int n_f = self.n_f
        cdef int i, j, k, e, row, info
        cdef double s, w_t, dw_t, w_k, dw_k, w_a, dw_a
        cdef double ang, ang_rate, scale, scale_rate, sn, one_mc
        cdef double acc, ti, tr
        cdef int nrhs = 1
        cdef char trans = b'N'

        s = (t - self.seg_t0) * self.inv_dur
        if s < 0.0:
            s = 0.0
        elif s > 1.0:
            s = 1.0
        _blend(self.kind_t, s, self.inv_dur, &w_t, &dw_t)
        _blend(self.kind_k, s, self.inv_dur, &w_k, &dw_k)
        _blend(self.kind_a, s, self.inv_dur, &w_a, &dw_a)
        scale = self.k_from + (self.k_to - self.k_from) * w_k
        scale_rate = (self.k_to - self.k_from) * dw_k
        ang = self.a_from + (self.a_to - self.a_from) * w_a
        ang_rate = (self.a_to - self.a_from) * dw_a

        sn = sin(ang)
        one_mc = 1.0 - cos(ang)
        for i in range(d):
            for j in range(d):
                self.rot[i, j] = sn * self.gen[i, j] + one_mc * self.gen2[i, j]
            self.rot[i, i] += 1.0
        for i in range(d):
            for j in range(d):
                acc = 0.0
                for k in range(d):
                    acc += self.gen[i, k] * self.rot[k, j]
                self.rot_rate[i, j] = ang_rate * acc
        for i in range(d):
            for j in range(d):
                self.gain[i, j] = scale_rate * self.rot[i, j] + scale * self.rot_rate[i, j]

        # Tracked agents (leaders then fly-ins): tanh tracker toward the
        # transformed nominal plus the target feedforward velocity.
        for row in range(self.n_track):
            i = n_f + row
            for j in range(d):
                ti = self.center[j] + (self.t_from[j] + (self.t_to[j] - self.t_from[j]) * w_t)
                tr = (self.t_to[j] - self.t_from[j]) * dw_t
                for k in range(d):
                    ti += scale * self.rot[j, k] * self.track_rel[row, k]
                    tr += self.gain[j, k] * self.track_rel[row, k]
                dp[i, j] = -tanh(p[i, j] - ti) + tr

        if self.mode == _MODE_IMPLICIT:
            for i in range(self.n_l):
                for j in range(d):
                    self.p_l_flat[i * d + j] = p[n_f + i, j]
            for i in range(self.m):
                acc = 0.0
                for k in range(self.n_l * d):
                    acc += self.w_fl[i, k] * (dp[n_f + k // d, k % d] + self.alpha * self.p_l_flat[k])
                for k in range(self.m):
                    acc += self.alpha * self.w_ff[i, k] * p[k // d, k % d]
                self.rhs[i] = -acc
            info = 0
            dgetrs(&trans, &self.m, &nrhs, &self.lu[0, 0], &self.m, &self.piv1[0], &self.rhs[0], &self.m, &info)
            if info != 0:
                raise SimulationError(f"LAPACK dgetrs failed with info={info}")
            for i in range(n_f):
                for j in range(d):
                    dp[i, j] = self.rhs[i * d + j]
        else:
            for i in range(n_f):
                for j in range(d):
                    dp[i, j] = 0.0
                for e in range(self.edge_ptr[i], self.edge_ptr[i + 1]):
                    k = self.edge_dst[e]
                    for j in range(d):
                        acc = 0.0
                        for row in range(d):
                            acc += self.edge_w[e, j, row] * (
                                self.alpha * (p[k, row] - p[i, row]) + v_prev[k, row]
                            )
                        dp[i, j] += acc
                # gamma_inv is applied in place via a small temp
                self._apply_gamma(i, dp)
        return 0

    cdef inline void _apply_gamma(self, int i, double[:, ::1] dp) noexcept nogil:
        cdef double tmp0, tmp1, tmp2
        cdef int d = self.d
        if d == 2:
            tmp0 = self.gamma_inv[i, 0, 0] * dp[i, 0] + self.gamma_inv[i, 0, 1] * dp[i, 1]
            tmp1 = self.gamma_inv[i, 1, 0] * dp[i, 0] + self.gamma_inv[i, 1, 1] * dp[i, 1]
            dp[i, 0] = tmp0
            dp[i, 1] = tmp1
        else:
            tmp0 = (
                self.gamma_inv[i, 0, 0] * dp[i, 0]
                + self.gamma_inv[i, 0, 1] * dp[i, 1]
                + self.gamma_inv[i, 0, 2] * dp[i, 2]
            )
            tmp1 = (
                self.gamma_inv[i, 1, 0] * dp[i, 0]
                + self.gamma_inv[i, 1, 1] * dp[i, 1]
                + self.gamma_inv[i, 1, 2] * dp[i, 2]
            )
            tmp2 = (
                self.gamma_inv[i, 2, 0] * dp[i, 0]
                + self.gamma_inv[i, 2, 1] * dp[i, 1]
                + self.gamma_inv[i, 2, 2] * dp[i, 2]
            )
            dp[i, 0] = tmp0
            dp[i, 1] = tmp1
            dp[i, 2] = tmp2


def integrate_span(prob):
    cdef _SpanKernel kern = _SpanKernel(prob)
    cdef int d = prob.dim
    cdef int n_total = prob.n_total
    cdef int n_steps = prob.n_steps
    cdef int stride = prob.stride
    cdef long step = prob.step0
    cdef double t0 = prob.t0
    cdef double t_end = prob.t_end
    cdef double dt = prob.dt
    cdef int rk4 = kern.rk4

    p_arr = prob.p0.copy()
    vp_arr = prob.v0.copy()
    cdef double[:, ::1] p = p_arr
    cdef double[:, ::1] v_prev = vp_arr

    k1_arr = np.empty((n_total, d))
    k2_arr = np.empty((n_total, d))
    k3_arr = np.empty((n_total, d))
    k4_arr = np.empty((n_total, d))
    ps_arr = np.empty((n_total, d))
    cdef double[:, ::1] k1 = k1_arr
    cdef double[:, ::1] k2 = k2_arr
    cdef double[:, ::1] k3 = k3_arr
    cdef double[:, ::1] k4 = k4_arr
    cdef double[:, ::1] ps = ps_arr

    cdef int max_rows = prob.max_log_rows()
    t_log = np.empty(max_rows)
    p_log = np.empty((max_rows, n_total, d))
    v_log = np.empty((max_rows, n_total, d))
    cdef double[::1] t_log_v = t_log
    cdef double[:, :, ::1] p_log_v = p_log
    cdef double[:, :, ::1] v_log_v = v_log
    cdef int rows = 0

    cdef int i, a, b, last
    cdef double t_i, h, half_h, h6, t_now
    cdef bint bad

    for i in range(n_steps):
        t_i = t0 + i * dt
        last = 1 if i == n_steps - 1 else 0
        h = (t_end - t_i) if last else dt
        kern._deriv(t_i, p, v_prev, k1)
        if rk4:
            half_h = 0.5 * h
            for a in range(n_total):
                for b in range(d):
                    ps[a, b] = p[a, b] + half_h * k1[a, b]
            kern._deriv(t_i + half_h, ps, v_prev, k2)
            for a in range(n_total):
                for b in range(d):
                    ps[a, b] = p[a, b] + half_h * k2[a, b]
            kern._deriv(t_i + half_h, ps, v_prev, k3)
            for a in range(n_total):
                for b in range(d):
                    ps[a, b] = p[a, b] + h * k3[a, b]
            kern._deriv(t_i + h, ps, v_prev, k4)
            h6 = h / 6.0
            for a in range(n_total):
                for b in range(d):
                    p[a, b] = p[a, b] + h6 * (
                        k1[a, b] + 2.0 * k2[a, b] + 2.0 * k3[a, b] + k4[a, b]
                    )
        else:
            for a in range(n_total):
                for b in range(d):
                    p[a, b] = p[a, b] + h * k1[a, b]
        for a in range(n_total):
            for b in range(d):
                v_prev[a, b] = k1[a, b]
        step += 1
        t_now = t_end if last else t_i + h
        if step % stride == 0 or last:
            bad = 0
            for a in range(n_total):
                for b in range(d):
                    if not isfinite(p[a, b]):
                        bad = 1
            if bad:
                raise SimulationError(f"state became non-finite by t={t_now:.6f}")
            t_log_v[rows] = t_now
            for a in range(n_total):
                for b in range(d):
                    p_log_v[rows, a, b] = p[a, b]
                    v_log_v[rows, a, b] = v_prev[a, b]
            rows += 1

    return SpanResult(
        p_final=p_arr,
        v_final=vp_arr.copy(),
        step_final=step,
        t_log=t_log[:rows].copy(),
        p_log=p_log[:rows].copy(),
        v_log=v_log[:rows].copy(),
    )
