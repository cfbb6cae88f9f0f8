"""Unnormalized conditional law of the hidden chain, driven by observations.

Two integration schemes share one interface: the direct Euler scheme
(``em``, diagnostic, no positivity guarantee) and the robust form
(``robust``, default), which rewrites the filter as a random linear ODE via
exponential reweighting and therefore keeps strictly positive states
strictly positive.  The robust step requires
``dt * max_i (|q_ii| + |h_i|^2 / 2) < 1``; :func:`robust_step_bound` checks
this before any integration starts.

For open-loop controls, :func:`oracle_filter_openloop` provides an
independent Monte Carlo estimate of the same object by averaging
``1{X_t = i} Z_t`` over chains simulated against the fixed observation path.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .chain import ControlPath, sample_driving, thin_chain
from .errors import NonFiniteState, NotOpenLoop, StepTooLarge
from .measure import log_density_batch

ORACLE_CHUNK = 4096


@dataclass(frozen=True)
class FilterPath:
    """Unnormalized law on a uniform time grid, one N-vector per node."""

    times: np.ndarray       # (n_steps + 1,)
    rho: np.ndarray         # (n_steps + 1, N)
    scheme: str             # "em" | "robust"

    @property
    def mass(self):
        return self.rho.sum(axis=1)

    @property
    def pi(self):
        """Normalized companion; rows are NaN where the mass vanishes."""
        mass = self.mass
        with np.errstate(invalid="ignore", divide="ignore"):
            out = self.rho / mass[:, None]
        out[mass <= 0.0] = np.nan
        return out


@dataclass(frozen=True)
class FilterEstimate:
    """Monte Carlo estimate of a filter path with componentwise errors."""

    times: np.ndarray
    rho: np.ndarray         # (n_steps + 1, N)
    se: np.ndarray          # (n_steps + 1, N)
    n_chains: int


def robust_step_bound(model, dt=None):
    """Stiffness constant of the robust step; guard the step size against it.

    Returns ``c = max_{a,kn,i} (|q(a,kn,i,i)| + |h(i,a,kn)|^2 / 2)``.  When
    ``dt`` is given, raises :class:`StepTooLarge` unless ``dt * c < 1``.
    """
    n = model.n_states
    diag = np.abs(model.q[:, :, np.arange(n), np.arange(n)])
    norms = 0.5 * (model.h ** 2).sum(axis=3)
    c = float((diag + norms).max())
    if dt is not None and dt * c >= 1.0:
        raise StepTooLarge(
            f"dt={dt} with stiffness {c} breaks positivity; need dt < {1.0 / c}"
        )
    return c


def step_em(rho, a, t, dw, dt, model):
    """One direct Euler step of the filter system (no positivity guard)."""
    rho = np.asarray(rho, dtype=float)
    q = model.q_at(a, t)
    h = model.h_at(a, t)
    return rho + dt * (rho @ q) + rho * (h @ np.asarray(dw, dtype=float))


def step_robust(rho, a, t, dw, dt, acc, model):
    """One positivity-preserving step in the exponentially reweighted chart.

    ``acc`` carries the per-state accumulators ``int_0^t h(i, a_s, s) . dW_s``;
    the state is pulled back to ``nu_i = rho_i exp(-acc_i)``, advanced by one
    explicit Euler step of the random linear ODE, and pushed forward with the
    updated accumulator.  Returns ``(rho_next, acc_next)``.
    """
    rho = np.asarray(rho, dtype=float)
    acc = np.asarray(acc, dtype=float)
    dw = np.asarray(dw, dtype=float)
    q = model.q_at(a, t)
    h = model.h_at(a, t)
    c = np.abs(np.diag(q)) + 0.5 * (h ** 2).sum(axis=1)
    if dt * c.max() >= 1.0:
        raise StepTooLarge(
            f"dt={dt} with stiffness {c.max()} breaks positivity at t={t}"
        )
    nu = rho * np.exp(-acc)
    growth = np.diag(q) - 0.5 * (h ** 2).sum(axis=1)
    coupling = q.T * np.exp(acc[None, :] - acc[:, None])   # [i, j] = q_ji e^{acc_j-acc_i}
    np.fill_diagonal(coupling, 0.0)
    nu_next = nu * (1.0 + dt * growth) + dt * (coupling @ nu)
    acc_next = acc + h @ dw
    return nu_next * np.exp(acc_next), acc_next


def single_robust_step(rho, a, t, dw, dt, model):
    """Robust step with the accumulators cancelled algebraically.

    Identical to :func:`step_robust` up to floating-point regrouping; this is
    the form the batch kernels use.
    """
    rho = np.asarray(rho, dtype=float)
    q = model.q_at(a, t)
    h = model.h_at(a, t)
    hdw = h @ np.asarray(dw, dtype=float)
    growth = np.diag(q) - 0.5 * (h ** 2).sum(axis=1)
    off = rho @ q - rho * np.diag(q)
    return np.exp(hdw) * (rho * (1.0 + dt * growth) + dt * off)


def _control_steps(control, n_steps, dt):
    if not isinstance(control, ControlPath):
        raise NotOpenLoop("integration requires an open-loop ControlPath")
    if len(control.values) != n_steps or abs(control.dt - dt) > 1e-12:
        raise ValueError("control grid does not match the observation grid")
    return control.values


def integrate_filter_batch(obs_increments, control, x0, scheme, model, dt=None):
    """Integrate the filter for a batch of observation paths.

    ``obs_increments``: (M, T, d); ``control``: shared :class:`ControlPath`
    (which fixes ``dt``) or an (M, T) int array of per-path control indices
    together with an explicit ``dt``; ``x0``: one (N,) cone vector or (M, N).
    Returns the paths, shape (M, T+1, N).
    """
    obs = np.ascontiguousarray(obs_increments, dtype=float)
    m, n_steps, _ = obs.shape
    if isinstance(control, ControlPath):
        dt = control.dt
        a_idx = np.broadcast_to(_control_steps(control, n_steps, dt), (m, n_steps))
    else:
        a_idx = np.asarray(control, dtype=np.int64)
        if a_idx.shape != (m, n_steps):
            raise ValueError("per-path control indices must have shape (M, T)")
        if dt is None:
            raise ValueError("explicit dt required with per-path control indices")
    a_idx = np.ascontiguousarray(a_idx, dtype=np.int64)
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 < 0):
        raise ValueError("initial condition must lie in the nonnegative cone")
    rho0 = np.ascontiguousarray(np.broadcast_to(x0, (m, model.n_states)))
    t_left = np.arange(n_steps) * dt
    knots = np.ascontiguousarray(model.knot_index(t_left), dtype=np.int64)
    if scheme == "robust":
        robust_step_bound(model, dt)
        return backend.filter_robust_batch(rho0, obs, dt, a_idx, knots,
                                           model.q, model.h)
    if scheme == "em":
        out = backend.filter_em_batch(rho0, obs, dt, a_idx, knots,
                                      model.q, model.h)
        if not np.all(np.isfinite(out)):
            raise NonFiniteState("direct Euler scheme produced non-finite entries")
        return out
    raise ValueError(f"unknown scheme {scheme!r}")


def integrate_filter(obs_increments, control, x0, scheme, model):
    """Integrate one filter path; see :func:`integrate_filter_batch`."""
    obs = np.asarray(obs_increments, dtype=float)
    paths = integrate_filter_batch(obs[None], control, x0, scheme, model)
    times = np.arange(obs.shape[0] + 1) * control.dt
    return FilterPath(times, paths[0], scheme)


def oracle_filter_openloop(obs_increments, control, x0, n_chains, rng_seed, model):
    """Estimate the filter by chain averaging against a fixed observation.

    Under the reference probability, an open-loop control makes the chain
    construction independent of the observation, so the conditional
    expectation ``E[1{X_t=i} Z_t | W]`` is a plain average over chains with
    the observation held fixed.  Initial states are drawn from ``x0``
    normalized; the estimate carries the total mass of ``x0``.
    """
    if not isinstance(control, ControlPath):
        raise NotOpenLoop("the chain-averaging oracle needs an open-loop control")
    obs = np.asarray(obs_increments, dtype=float)
    n_steps = obs.shape[0]
    dt = control.dt
    n = model.n_states
    x0 = np.asarray(x0, dtype=float)
    mass = float(x0.sum())
    times = np.arange(n_steps + 1) * dt
    if mass == 0.0:
        zero = np.zeros((n_steps + 1, n))
        return FilterEstimate(times, zero, zero.copy(), n_chains)
    x0_norm = x0 / mass
    grid = times[:-1]
    acc = np.zeros((n_steps + 1, n))
    acc_sq = np.zeros((n_steps + 1, n))
    done = 0
    while done < n_chains:
        batch = min(ORACLE_CHUNK, n_chains - done)
        chains = []
        for p in range(done, done + batch):
            driving = sample_driving(rng_seed, control.horizon, dt, model,
                                     path_index=p, x0_dist=x0_norm,
                                     with_brownian=False)
            chains.append(thin_chain(driving, control, model))
        z = np.exp(log_density_batch(chains, control, obs, model))
        states = np.empty((batch, n_steps + 1), dtype=np.int64)
        for p, chain in enumerate(chains):
            states[p, :-1] = chain.state_at(grid)
            states[p, -1] = chain.state_at(control.horizon)
        for i in range(n):
            weighted = np.where(states == i, z, 0.0)
            acc[:, i] += weighted.sum(axis=0)
            acc_sq[:, i] += (weighted ** 2).sum(axis=0)
        done += batch
    mean = acc / n_chains
    var = np.maximum(acc_sq / n_chains - mean ** 2, 0.0) * n_chains / max(n_chains - 1, 1)
    se = mass * np.sqrt(var / n_chains)
    return FilterEstimate(times, mass * mean, se, n_chains)
