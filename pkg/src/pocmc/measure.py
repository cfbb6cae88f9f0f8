"""Girsanov density along a path and the three equivalent reward estimators.

Quadrature conventions (first-order, documented):

* the stochastic integral attributes each observation increment to the state
  at the cell's left endpoint;
* time integrals of piecewise-constant-in-state quantities are exact: cells
  containing chain jumps are split at the jump times;
* within a cell the control and the coefficient knot are frozen at the left
  endpoint.

The three estimators (reference-measure, physical-measure, separated) are
single-path integrands; Monte Carlo averaging happens in the callers, with
:func:`estimator_report` packaging mean, standard error and scheme metadata.
"""

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch


@dataclass(frozen=True)
class DensityPath:
    """Change-of-measure density on the step grid, Z_0 = 1.

    ``log_values[k+1] - log_values[k] == stoch_increments[k] - 0.5 *
    drift_increments[k]`` holds exactly by construction.
    """

    values: np.ndarray            # (n_steps + 1,)
    log_values: np.ndarray
    stoch_increments: np.ndarray  # h(X,a,t) . dW per cell
    drift_increments: np.ndarray  # integral of |h|^2 ds per cell, exact
    dt: float


def _check_grid(chain, control, n_steps, dt):
    if abs(control.dt - dt) > 1e-12 or abs(control.horizon - chain.horizon) > 1e-9:
        raise GridMismatch("control grid does not match the observation grid")
    if abs(n_steps * dt - chain.horizon) > 1e-9 * max(1.0, chain.horizon):
        raise GridMismatch(
            f"{n_steps} steps of {dt} do not cover horizon {chain.horizon}"
        )


def states_on_grid(chain, dt, n_steps):
    """Chain state at each cell left endpoint, shape (n_steps,)."""
    return chain.state_at(np.arange(n_steps) * dt)


def piecewise_cell_integrals(chain, control, model, table):
    """Exact per-cell integrals of ``table[a_t, knot(t), X_t]`` over each cell.

    ``table`` has layout (A, Kn, N).  Cells without jumps contribute
    ``table[a, kn, state] * dt``; cells containing jumps are split exactly at
    the jump times.
    """
    dt = control.dt
    n_steps = len(control.values)
    t_left = np.arange(n_steps) * dt
    states = states_on_grid(chain, dt, n_steps)
    a_idx = control.values
    kn = model.knot_index(t_left)
    out = table[a_idx, kn, states] * dt
    if len(chain.jump_times):
        cells = np.minimum((chain.jump_times / dt).astype(np.int64), n_steps - 1)
        for c in np.unique(cells):
            inside = chain.jump_times[cells == c]
            edges = np.concatenate(([c * dt], inside, [(c + 1) * dt]))
            segs = np.diff(edges)
            seg_states = chain.state_at(edges[:-1])
            out[c] = np.dot(table[a_idx[c], kn[c], seg_states], segs)
    return out


def girsanov_density(chain, control, obs_increments, model):
    """Density of the physical measure along one path, on the step grid."""
    obs = np.asarray(obs_increments, dtype=float)
    n_steps, d = obs.shape
    dt = control.dt
    _check_grid(chain, control, n_steps, dt)
    t_left = np.arange(n_steps) * dt
    states = states_on_grid(chain, dt, n_steps)
    a_idx = control.values
    kn = model.knot_index(t_left)
    h_left = model.h[a_idx, kn, states, :]             # (n_steps, d)
    stoch = np.einsum("kd,kd->k", h_left, obs)
    norms = np.ascontiguousarray((model.h ** 2).sum(axis=3))
    drift = piecewise_cell_integrals(chain, control, model, norms)
    log_z = np.concatenate(([0.0], np.cumsum(stoch - 0.5 * drift)))
    return DensityPath(np.exp(log_z), log_z, stoch, drift, dt)


def reward_reference(chain, control, density, model):
    """Single-path reward integrand under the reference measure.

    ``sum_k Z_{t_k} * integral_cell f(X, a, t) + Z_T g(X_T)`` with the cell
    integrals split at jumps; average over paths externally.
    """
    n_steps = len(control.values)
    if len(density.values) != n_steps + 1:
        raise GridMismatch("density grid does not match the control grid")
    f_cells = piecewise_cell_integrals(chain, control, model, model.f)
    value = float(np.dot(density.values[:-1], f_cells))
    return value + float(density.values[-1] * model.g[chain.state_at(chain.horizon)])


def reward_physical(chain, control, model):
    """Single-path reward integrand under the physical measure."""
    f_cells = piecewise_cell_integrals(chain, control, model, model.f)
    if model.discount is not None:
        t_left = np.arange(len(control.values)) * control.dt
        return float(np.dot(np.exp(-model.discount * t_left), f_cells))
    return float(f_cells.sum()) + float(model.g[chain.state_at(chain.horizon)])


def reward_separated(filter_path, control, model):
    """Single-path separated reward from an unnormalized filter path.

    Finite horizon: left-endpoint quadrature of ``<rho_t, f>`` plus
    ``<rho_T, g>``.  Infinite horizon: discounted quadrature truncated at the
    path's end; the truncation bias is bounded by :func:`truncation_tail_bound`.
    """
    rho = filter_path.rho
    n_steps = len(control.values)
    if rho.shape[0] != n_steps + 1:
        raise GridMismatch("filter grid does not match the control grid")
    dt = control.dt
    t_left = np.arange(n_steps) * dt
    kn = model.knot_index(t_left)
    f_rates = np.einsum("ki,ki->k", rho[:-1], model.f[control.values, kn, :])
    if model.discount is not None:
        return float(np.dot(np.exp(-model.discount * t_left), f_rates) * dt)
    return float(f_rates.sum() * dt) + float(rho[-1] @ model.g)


def truncation_tail_bound(model, t_trunc, x0_mass=1.0):
    """Bias bound for truncating the discounted reward at ``t_trunc``.

    The total filter mass is a martingale with mean ``x0_mass``, so the
    expected tail is at most ``exp(-beta T) * sup|f| * x0_mass / beta``.
    """
    if model.discount is None:
        raise ValueError("tail bound applies to discounted models only")
    sup_f = float(np.abs(model.f).max())
    return float(np.exp(-model.discount * t_trunc) * sup_f * x0_mass / model.discount)


def estimator_report(samples, dt, scheme="left-endpoint", t_trunc=None,
                     tail_bound=None):
    """Package Monte Carlo samples of a reward integrand into a report dict."""
    samples = np.asarray(samples, dtype=float)
    n = len(samples)
    report = {
        "estimate": float(samples.mean()),
        "std_error": float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
        "n_paths": int(n),
        "scheme": scheme,
        "dt": float(dt),
    }
    if t_trunc is not None:
        report["t_trunc"] = float(t_trunc)
    if tail_bound is not None:
        report["tail_bound"] = float(tail_bound)
    return report


def log_density_batch(chains, control, obs_increments, model):
    """Log-density at every grid time for many chains.

    ``obs_increments`` is either one shared (T, d) observation path (the
    filtering oracle's setting) or a per-chain (M, T, d) array.  Returns
    (M, T+1) log-values.
    """
    obs = np.asarray(obs_increments, dtype=float)
    shared = obs.ndim == 2
    n_steps = len(control.values)
    dt = control.dt
    t_left = np.arange(n_steps) * dt
    a_idx = control.values
    kn = model.knot_index(t_left)
    h_cells = model.h[a_idx, kn, :, :]                 # (T, N, d)
    norm_cells = (h_cells ** 2).sum(axis=2)            # (T, N)
    m = len(chains)
    states = np.empty((m, n_steps), dtype=np.int64)
    for p, chain in enumerate(chains):
        states[p] = states_on_grid(chain, dt, n_steps)
    cols = np.arange(n_steps)
    h_left = h_cells[cols[None, :], states, :]         # (M, T, d)
    stoch = np.einsum("mkd,kd->mk", h_left, obs) if shared \
        else np.einsum("mkd,mkd->mk", h_left, obs)
    drift = norm_cells[cols[None, :], states] * dt
    for p, chain in enumerate(chains):
        if not len(chain.jump_times):
            continue
        cells = np.minimum((chain.jump_times / dt).astype(np.int64), n_steps - 1)
        for c in np.unique(cells):
            inside = chain.jump_times[cells == c]
            edges = np.concatenate(([c * dt], inside, [(c + 1) * dt]))
            seg_states = chain.state_at(edges[:-1])
            drift[p, c] = np.dot(norm_cells[c, seg_states], np.diff(edges))
    log_z = np.zeros((m, n_steps + 1))
    np.cumsum(stoch - 0.5 * drift, axis=1, out=log_z[:, 1:])
    return log_z
