"""Adjoint backward equation and the pointwise Hamiltonian maximization check.

The costate pair ``(p, q^k)`` solves a linear backward SDE whose driver does
not involve the forward state, with terminal condition ``p_T = g``.  It is
approximated by regression Monte Carlo on a batch of filter paths: at each
backward step the loadings are ``q^k ~ E[p_{t+dt} dW^k]/dt`` and the costate
``p ~ E[p_{t+dt}]`` conditionally on the current state features, followed by
an explicit driver correction.  Conditional expectations are least-squares
projections on polynomials (default degree 2) in the normalized state and
its mass; for a constant control the projection degenerates to the
cross-sample mean, which is exact there.

The necessary optimality condition is then checked pointwise:
``H(t, rho_t, alpha_t, p_t, q_t) = max_a H(t, rho_t, a, p_t, q_t)`` up to a
tolerance, with the fraction of violating (sample, step) pairs reported.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BatchTooSmall, RegressionRankDeficient


@dataclass(frozen=True)
class AdjointPath:
    """Per-sample costate and loadings on the time grid, plus diagnostics."""

    times: np.ndarray        # (n_steps + 1,)
    p: np.ndarray            # (M, n_steps + 1, N)
    q: np.ndarray            # (M, n_steps, d, N)
    diagnostics: list        # per backward step: {step, basis_size, rank, residual}


def features(rho, degree=2):
    """Polynomial basis in (pi_1..pi_N, mass) evaluated at a state batch.

    Degree-2 monomials in the normalized state and the total mass; rows with
    zero mass fall back to zero features (constant term only).
    """
    rho = np.atleast_2d(rho)
    m, n = rho.shape
    mass = rho.sum(axis=1)
    safe = mass > 0.0
    pi = np.where(safe[:, None], rho / np.where(safe, mass, 1.0)[:, None], 0.0)
    cols = [np.ones(m)]
    lin = [pi[:, i] for i in range(n)] + [mass]
    if degree >= 1:
        cols.extend(lin)
    if degree >= 2:
        for i in range(len(lin)):
            for j in range(i, len(lin)):
                cols.append(lin[i] * lin[j])
    return np.stack(cols, axis=1)


def _project(basis, targets):
    """Least-squares conditional expectation: fitted values and diagnostics.

    Rank deficiency (e.g. identical features at the initial time) is handled
    by the minimum-norm solution, whose fitted values are still the
    projection onto the basis span.
    """
    sol, _, rank, _ = np.linalg.lstsq(basis, targets, rcond=None)
    if rank == 0:
        raise RegressionRankDeficient("regression basis is identically zero")
    fitted = basis @ sol
    residual = float(np.linalg.norm(targets - fitted) / max(1, targets.size) ** 0.5)
    return fitted, rank, residual


def solve_adjoint(model, control_idx, rho_paths, dw, dt, basis_degree=2):
    """Backward regression sweep for the adjoint pair along a path batch.

    Parameters
    ----------
    control_idx : (M, T) int array or scalar
        Control index used on each (sample, step); a scalar means one
        constant control.
    rho_paths : (M, T+1, N)
        Filter paths simulated under the same control source.
    dw : (M, T, d)
        The observation increments that drove ``rho_paths``.
    """
    rho_paths = np.asarray(rho_paths, dtype=float)
    dw = np.asarray(dw, dtype=float)
    m, t_steps, d = dw.shape
    n = model.n_states
    if np.ndim(control_idx) == 0:
        control_idx = np.full((m, t_steps), int(control_idx), dtype=np.int64)
    control_idx = np.asarray(control_idx, dtype=np.int64)
    basis_size = features(rho_paths[:, 0, :], basis_degree).shape[1]
    if m < 10 * basis_size:
        raise BatchTooSmall(
            f"{m} samples for a basis of size {basis_size}; need >= {10 * basis_size}"
        )
    times = np.arange(t_steps + 1) * dt
    p = np.empty((m, t_steps + 1, n))
    q_load = np.empty((m, t_steps, d, n))
    p[:, -1, :] = model.g
    diagnostics = []
    for step in range(t_steps - 1, -1, -1):
        t = times[step]
        kn = int(model.knot_index(t))
        basis = features(rho_paths[:, step, :], basis_degree)
        p_next = p[:, step + 1, :]
        targets = [p_next]
        for k in range(d):
            targets.append(p_next * dw[:, step, k, None] / dt)
        fitted, rank, residual = _project(basis, np.concatenate(targets, axis=1))
        p_hat = fitted[:, :n]
        for k in range(d):
            q_load[:, step, k, :] = fitted[:, (k + 1) * n:(k + 2) * n]
        # explicit driver correction at the regressed pair
        drift = np.empty((m, n))
        for a in np.unique(control_idx[:, step]):
            rows = control_idx[:, step] == a
            qp = p_hat[rows] @ model.q[a, kn].T          # (Q^a p)_i = sum_j q_ij p_j
            hq = np.zeros((rows.sum(), n))
            for k in range(d):
                hq += model.h[a, kn, :, k][None, :] * q_load[rows, step, k, :]
            drift[rows] = qp + hq + model.f[a, kn][None, :]
        p[:, step, :] = p_hat + dt * drift
        diagnostics.append({"step": step, "basis_size": basis_size,
                            "rank": int(rank), "residual": residual})
    diagnostics.reverse()
    return AdjointPath(times, p, q_load, diagnostics)


def hamiltonian_smp(t, rho, a, p, q_loadings, model):
    """Scalar Hamiltonian ``<f(a,t), rho> + <Q_a p, rho> + sum_k <q^k, h_k * rho>``."""
    rho = np.asarray(rho, dtype=float)
    p = np.asarray(p, dtype=float)
    kn = int(model.knot_index(t))
    value = float(model.f[a, kn] @ rho) + float((model.q[a, kn] @ p) @ rho)
    for k in range(model.d_obs):
        value += float(np.asarray(q_loadings)[k] @ (model.h[a, kn, :, k] * rho))
    return value


def _hamiltonian_all_controls(model, kn, rho, p, q_step):
    """H for every control at once; rho (M,N), p (M,N), q_step (M,d,N)."""
    m, n = rho.shape
    n_ctrl = model.n_controls
    out = np.empty((m, n_ctrl))
    for a in range(n_ctrl):
        val = rho @ model.f[a, kn]
        val = val + np.einsum("mi,mi->m", p @ model.q[a, kn].T, rho)
        for k in range(model.d_obs):
            val = val + np.einsum("mi,mi->m", q_step[:, k, :],
                                  model.h[a, kn, :, k][None, :] * rho)
        out[:, a] = val
    return out


def check_max_principle(adjoint, control_idx, rho_paths, model, tolerance,
                        violation_level=0.05):
    """Distribution of Hamiltonian gaps along the batch.

    ``gap(sample, step) = max_a H(...) - H(used control)``; PASS iff the
    fraction of gaps exceeding ``tolerance`` stays at or below
    ``violation_level``.
    """
    rho_paths = np.asarray(rho_paths, dtype=float)
    m, t_steps = adjoint.q.shape[:2]
    if np.ndim(control_idx) == 0:
        control_idx = np.full((m, t_steps), int(control_idx), dtype=np.int64)
    control_idx = np.asarray(control_idx, dtype=np.int64)
    gaps = np.empty((m, t_steps))
    rows = np.arange(m)
    for step in range(t_steps):
        kn = int(model.knot_index(adjoint.times[step]))
        h_all = _hamiltonian_all_controls(
            model, kn, rho_paths[:, step, :], adjoint.p[:, step, :],
            adjoint.q[:, step, :, :])
        gaps[:, step] = h_all.max(axis=1) - h_all[rows, control_idx[:, step]]
    flat = gaps.ravel()
    fraction = float(np.mean(flat > tolerance))
    report = {
        "n_samples": int(m),
        "n_steps": int(t_steps),
        "tolerance": float(tolerance),
        "violation_fraction": fraction,
        "gap_quantiles": {
            "p50": float(np.quantile(flat, 0.5)),
            "p90": float(np.quantile(flat, 0.9)),
            "p99": float(np.quantile(flat, 0.99)),
            "max": float(flat.max()),
        },
        "pass": bool(fraction <= violation_level),
    }
    return report
