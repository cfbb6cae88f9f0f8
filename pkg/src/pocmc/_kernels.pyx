# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

Mirrors ``_kernels_py`` function for function with identical accumulation
order; see that module for the contracts.  Loops run over paths x steps x
states with the coefficient tables picked per (control, knot).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, floor

cnp.import_array()


def accept_candidates(const double[::1] times, const long[::1] marks,
                      const double[::1] unifs, long x0,
                      const long[::1] ctrl_idx, const long[::1] knot_idx,
                      const double[:, :, :, ::1] q, double big_k, long n_states):
    cdef Py_ssize_t n_cand = times.shape[0]
    cdef Py_ssize_t n
    cdef long cur = x0, j
    cdef double rate
    out = np.empty(n_cand, dtype=np.int64)
    cdef long[::1] buf = out
    cdef Py_ssize_t count = 0
    for n in range(n_cand):
        j = marks[n]
        if j == cur:
            continue
        rate = q[ctrl_idx[n], knot_idx[n], cur, j]
        if unifs[n] < n_states * rate / big_k:
            buf[count] = n
            count += 1
            cur = j
    return out[:count]


def filter_em_batch(const double[:, ::1] rho0, const double[:, :, ::1] dw, double dt,
                    const long[:, ::1] a_idx, const long[::1] knot_of_step,
                    const double[:, :, :, ::1] q, const double[:, :, :, ::1] h):
    cdef Py_ssize_t m = dw.shape[0], t_steps = dw.shape[1], d = dw.shape[2]
    cdef Py_ssize_t n = rho0.shape[1]
    out_arr = np.empty((m, t_steps + 1, n))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t p, t, i, j, k
    cdef long a, kn
    cdef double drift, hdw
    cdef double[64] rho
    if n > 64:
        raise ValueError("compiled kernel supports at most 64 states")
    for p in range(m):
        for i in range(n):
            out[p, 0, i] = rho0[p, i]
            rho[i] = rho0[p, i]
        for t in range(t_steps):
            a = a_idx[p, t]
            kn = knot_of_step[t]
            for i in range(n):
                drift = 0.0
                for j in range(n):
                    drift += rho[j] * q[a, kn, j, i]
                hdw = 0.0
                for k in range(d):
                    hdw += h[a, kn, i, k] * dw[p, t, k]
                out[p, t + 1, i] = rho[i] + dt * drift + rho[i] * hdw
            for i in range(n):
                rho[i] = out[p, t + 1, i]
    return out_arr


def filter_robust_batch(const double[:, ::1] rho0, const double[:, :, ::1] dw, double dt,
                        const long[:, ::1] a_idx, const long[::1] knot_of_step,
                        const double[:, :, :, ::1] q, const double[:, :, :, ::1] h):
    cdef Py_ssize_t m = dw.shape[0], t_steps = dw.shape[1], d = dw.shape[2]
    cdef Py_ssize_t n = rho0.shape[1]
    out_arr = np.empty((m, t_steps + 1, n))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t p, t, i, j, k
    cdef long a, kn
    cdef double off, hdw, hh
    cdef double[64] rho
    if n > 64:
        raise ValueError("compiled kernel supports at most 64 states")
    for p in range(m):
        for i in range(n):
            out[p, 0, i] = rho0[p, i]
            rho[i] = rho0[p, i]
        for t in range(t_steps):
            a = a_idx[p, t]
            kn = knot_of_step[t]
            for i in range(n):
                hdw = 0.0
                hh = 0.0
                for k in range(d):
                    hdw += h[a, kn, i, k] * dw[p, t, k]
                    hh += h[a, kn, i, k] * h[a, kn, i, k]
                off = 0.0
                for j in range(n):
                    if j != i:
                        off += rho[j] * q[a, kn, j, i]
                out[p, t + 1, i] = exp(hdw) * (
                    rho[i] * (1.0 + dt * (q[a, kn, i, i] - 0.5 * hh)) + dt * off)
            for i in range(n):
                rho[i] = out[p, t + 1, i]
    return out_arr


def closed_loop_batch(const double[:, ::1] rho0, const double[:, :, ::1] dw, double dt,
                      const long[:, ::1] table, const long[::1] layer_of_step,
                      long n_axis_nodes, double inv_dx, const long[::1] strides,
                      const long[::1] knot_of_step, const double[:, :, :, ::1] q,
                      const double[:, :, :, ::1] h, const double[:, :, ::1] f,
                      const double[::1] disc, bint store_paths):
    cdef Py_ssize_t m = dw.shape[0], t_steps = dw.shape[1], d = dw.shape[2]
    cdef Py_ssize_t n = rho0.shape[1]
    rewards_arr = np.zeros(m)
    a_used_arr = np.empty((m, t_steps), dtype=np.int64)
    min_rho_arr = np.empty(m)
    cdef double[::1] rewards = rewards_arr
    cdef long[:, ::1] a_used = a_used_arr
    cdef double[::1] min_rho = min_rho_arr
    paths_arr = np.empty((m, t_steps + 1, n)) if store_paths else np.empty((m, n))
    cdef double[:, :, ::1] paths3
    cdef double[:, ::1] paths2
    if store_paths:
        paths3 = paths_arr
    else:
        paths2 = paths_arr
    cdef Py_ssize_t p, t, i, j, k
    cdef long a, kn, flat, ii
    cdef double mass, off, hdw, hh, rew, mn, pi_i, frate
    cdef double[64] rho, nxt
    if n > 64:
        raise ValueError("compiled kernel supports at most 64 states")
    for p in range(m):
        mn = rho0[p, 0]
        for i in range(n):
            rho[i] = rho0[p, i]
            if rho[i] < mn:
                mn = rho[i]
            if store_paths:
                paths3[p, 0, i] = rho[i]
        rew = 0.0
        for t in range(t_steps):
            kn = knot_of_step[t]
            mass = 0.0
            for i in range(n):
                mass += rho[i]
            flat = 0
            for i in range(n):
                pi_i = rho[i] / mass if mass > 0.0 else 0.0
                ii = <long>floor(pi_i * inv_dx + 0.5)
                if ii < 0:
                    ii = 0
                elif ii > n_axis_nodes - 1:
                    ii = n_axis_nodes - 1
                flat += ii * strides[i]
            a = table[layer_of_step[t], flat]
            a_used[p, t] = a
            frate = 0.0
            for i in range(n):
                frate += rho[i] * f[a, kn, i]
            rew += disc[t] * dt * frate
            for i in range(n):
                hdw = 0.0
                hh = 0.0
                for k in range(d):
                    hdw += h[a, kn, i, k] * dw[p, t, k]
                    hh += h[a, kn, i, k] * h[a, kn, i, k]
                off = 0.0
                for j in range(n):
                    if j != i:
                        off += rho[j] * q[a, kn, j, i]
                nxt[i] = exp(hdw) * (
                    rho[i] * (1.0 + dt * (q[a, kn, i, i] - 0.5 * hh)) + dt * off)
            for i in range(n):
                rho[i] = nxt[i]
                if rho[i] < mn:
                    mn = rho[i]
                if store_paths:
                    paths3[p, t + 1, i] = rho[i]
        if not store_paths:
            for i in range(n):
                paths2[p, i] = rho[i]
        rewards[p] = rew
        min_rho[p] = mn
    return rewards_arr, a_used_arr, paths_arr, min_rho_arr
