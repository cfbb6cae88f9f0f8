"""Numpy implementations of the hot kernels.

This module is the reference backend: the Cython extension in
``_kernels.pyx`` mirrors these functions operation for operation (same
accumulation order) so that both backends agree to floating-point roundoff.
Vectorization is across paths; the time loop stays in Python.

All kernels are pure functions of their array arguments; random numbers are
drawn by the callers.
"""

import numpy as np


def accept_candidates(times, marks, unifs, x0, ctrl_idx, knot_idx, q, big_k, n_states):
    """Thinning acceptance sweep over one path's candidate points.

    Walks the marked-Poisson candidates in order and accepts candidate ``n``
    iff its mark differs from the current state ``i`` and
    ``U_n < n_states * q[a_n, kn_n, i, mark_n] / big_k``.  Self-marks are
    rejected outright (the off-diagonal table does not define them).

    Returns the int64 indices of accepted candidates.
    """
    accepted = []
    cur = int(x0)
    for n in range(len(times)):
        j = int(marks[n])
        if j == cur:
            continue
        rate = q[ctrl_idx[n], knot_idx[n], cur, j]
        if unifs[n] < n_states * rate / big_k:
            accepted.append(n)
            cur = j
    return np.asarray(accepted, dtype=np.int64)


def filter_em_batch(rho0, dw, dt, a_idx, knot_of_step, q, h):
    """Direct Euler steps of the unnormalized filter for a batch of paths.

    Parameters
    ----------
    rho0 : (M, N) initial states
    dw : (M, T, d) observation increments
    a_idx : (M, T) int64 control index per path per step
    knot_of_step : (T,) int64 coefficient knot per step
    q, h : coefficient tables, layouts (A, Kn, N, N) and (A, Kn, N, d)

    Returns the full paths, shape (M, T+1, N).
    """
    m, t_steps, d = dw.shape
    n = rho0.shape[1]
    out = np.empty((m, t_steps + 1, n))
    out[:, 0] = rho0
    rho = np.array(rho0)
    for t in range(t_steps):
        kn = knot_of_step[t]
        qs = q[a_idx[:, t], kn]            # (M, N, N)
        hs = h[a_idx[:, t], kn]            # (M, N, d)
        drift = np.zeros((m, n))
        for j in range(n):
            drift += rho[:, j, None] * qs[:, j, :]
        hdw = np.zeros((m, n))
        for k in range(d):
            hdw += hs[:, :, k] * dw[:, t, k, None]
        rho = rho + dt * drift + rho * hdw
        out[:, t + 1] = rho
    return out


def filter_robust_batch(rho0, dw, dt, a_idx, knot_of_step, q, h):
    """Positivity-preserving steps of the unnormalized filter (batch).

    One step maps ``rho`` to

        rho'_i = exp(h_i . dW) * (rho_i * (1 + dt*(q_ii - |h_i|^2 / 2))
                                  + dt * sum_{j != i} q_ji rho_j)

    which is the exponential-reweighting form with the pathwise integral
    accumulators cancelled algebraically.  Every factor is positive provided
    ``dt * (|q_ii| + |h_i|^2 / 2) < 1`` (checked by the caller).
    """
    m, t_steps, d = dw.shape
    n = rho0.shape[1]
    out = np.empty((m, t_steps + 1, n))
    out[:, 0] = rho0
    rho = np.array(rho0)
    diag = np.arange(n)
    for t in range(t_steps):
        kn = knot_of_step[t]
        qs = q[a_idx[:, t], kn]            # (M, N, N)
        hs = h[a_idx[:, t], kn]            # (M, N, d)
        hdw = np.zeros((m, n))
        hh = np.zeros((m, n))
        for k in range(d):
            hdw += hs[:, :, k] * dw[:, t, k, None]
            hh += hs[:, :, k] * hs[:, :, k]
        qdiag = qs[:, diag, diag]
        off = np.zeros((m, n))
        for j in range(n):
            contrib = rho[:, j, None] * qs[:, j, :]
            contrib[:, j] = 0.0
            off += contrib
        rho = np.exp(hdw) * (rho * (1.0 + dt * (qdiag - 0.5 * hh)) + dt * off)
        out[:, t + 1] = rho
    return out


def closed_loop_batch(rho0, dw, dt, table, layer_of_step, n_axis_nodes, inv_dx,
                      strides, knot_of_step, q, h, f, disc, store_paths):
    """Feedback simulation of the filter for a batch of observation paths.

    At each step the control is read from the nearest policy node of the
    *pre-step* normalized state (predictability), the running reward
    ``disc[t] * dt * <rho, f(a)>`` is accumulated at the left endpoint, and
    the state advances by one robust filter step.

    Returns ``(rewards, a_used, paths_or_final, min_rho)`` where
    ``paths_or_final`` is (M, T+1, N) when ``store_paths`` else (M, N).
    """
    m, t_steps, d = dw.shape
    n = rho0.shape[1]
    rho = np.array(rho0)
    rewards = np.zeros(m)
    a_used = np.empty((m, t_steps), dtype=np.int64)
    min_rho = rho.min(axis=1)
    paths = np.empty((m, t_steps + 1, n)) if store_paths else None
    if store_paths:
        paths[:, 0] = rho0
    diag = np.arange(n)
    for t in range(t_steps):
        kn = knot_of_step[t]
        mass = rho.sum(axis=1)
        safe = mass > 0.0
        pi = np.where(safe[:, None], rho / np.where(safe, mass, 1.0)[:, None], 0.0)
        idx = np.floor(pi * inv_dx + 0.5).astype(np.int64)
        np.clip(idx, 0, n_axis_nodes - 1, out=idx)
        flat = idx @ strides
        a = table[layer_of_step[t], flat]
        a_used[:, t] = a
        qs = q[a, kn]
        hs = h[a, kn]
        rewards += disc[t] * dt * np.sum(rho * f[a, kn], axis=1)
        hdw = np.zeros((m, n))
        hh = np.zeros((m, n))
        for k in range(d):
            hdw += hs[:, :, k] * dw[:, t, k, None]
            hh += hs[:, :, k] * hs[:, :, k]
        qdiag = qs[:, diag, diag]
        off = np.zeros((m, n))
        for j in range(n):
            contrib = rho[:, j, None] * qs[:, j, :]
            contrib[:, j] = 0.0
            off += contrib
        rho = np.exp(hdw) * (rho * (1.0 + dt * (qdiag - 0.5 * hh)) + dt * off)
        np.minimum(min_rho, rho.min(axis=1), out=min_rho)
        if store_paths:
            paths[:, t + 1] = rho
    return rewards, a_used, (paths if store_paths else rho), min_rho
