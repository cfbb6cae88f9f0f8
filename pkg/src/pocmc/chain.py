"""Controlled chain trajectories built by thinning a dominating Poisson stream.

The driving randomness (Poisson candidate times, uniform marks, acceptance
uniforms, Brownian increments) is materialized explicitly so that every
simulation is a pure function of a seed.  The thinning recursion accepts
candidate ``n`` when its uniform falls below ``N q(a, t, i, mark)/K``; marks
equal to the current state are never accepted (their off-diagonal rate is
undefined and the compensator charges only genuine moves).

Seed derivation: one master seed; the substreams for (gaps, marks, uniforms,
brownian, initial state) of path ``p`` come from
``SeedSequence(master, spawn_key=(p, stream))``, so enlarging a batch never
perturbs existing paths.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ControlUndefined

_GAPS, _MARKS, _UNIFS, _BROWNIAN, _INIT = range(5)


def substream(master_seed, path_index, stream):
    """Deterministic child generator for (seed, path, stream)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(path_index, stream))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class DrivingNoise:
    """Materialized randomness driving one path under the reference measure."""

    poisson_times: np.ndarray   # increasing candidate times in (0, horizon]
    marks: np.ndarray           # int64 states in 0..N-1, one per candidate
    uniforms: np.ndarray        # acceptance uniforms in (0, 1)
    initial_state: int
    brownian: np.ndarray        # (n_steps, d) increments, variance dt per component
    dt: float
    horizon: float
    seed_record: tuple          # (master_seed, path_index)

    @property
    def n_steps(self):
        return self.brownian.shape[0]


@dataclass(frozen=True)
class ControlPath:
    """Open-loop control on a uniform grid, constant on [t_k, t_{k+1})."""

    values: np.ndarray          # int64 control indices, length n_steps
    dt: float
    horizon: float

    @classmethod
    def constant(cls, a_idx, horizon, dt):
        n_steps = _n_steps(horizon, dt)
        return cls(np.full(n_steps, a_idx, dtype=np.int64), dt, horizon)

    @classmethod
    def from_times(cls, switch_times, indices, horizon, dt):
        """Piecewise-constant control: ``indices[k]`` from ``switch_times[k]`` on."""
        n_steps = _n_steps(horizon, dt)
        t = np.arange(n_steps) * dt
        pos = np.searchsorted(switch_times, t, side="right") - 1
        if np.any(pos < 0):
            raise ControlUndefined("first switch time must be 0")
        values = np.asarray(indices, dtype=np.int64)[pos]
        return cls(values, dt, horizon)

    def index_at(self, t):
        """Control index at time ``t`` (scalar or array)."""
        t = np.asarray(t)
        if np.any(t > self.horizon * (1 + 1e-12)):
            raise ControlUndefined(
                f"control defined on [0, {self.horizon}], asked at t={t.max()}"
            )
        idx = np.minimum((t / self.dt).astype(np.int64), len(self.values) - 1)
        return self.values[idx] if t.ndim else int(self.values[idx])


@dataclass(frozen=True)
class ChainPath:
    """Piecewise-constant trajectory: accepted jumps on top of X_0."""

    jump_times: np.ndarray
    jump_states: np.ndarray     # int64
    initial_state: int
    horizon: float

    def state_at(self, t):
        """Cadlag state at time ``t`` (scalar or array)."""
        k = np.searchsorted(self.jump_times, t, side="right")
        states = np.concatenate(([self.initial_state], self.jump_states))
        out = states[k]
        return out if np.ndim(t) else int(out)

    def segments(self):
        """List of (t_start, t_end, state) covering [0, horizon]."""
        edges = np.concatenate(([0.0], self.jump_times, [self.horizon]))
        states = np.concatenate(([self.initial_state], self.jump_states))
        return [
            (edges[k], edges[k + 1], int(states[k]))
            for k in range(len(states))
            if edges[k + 1] > edges[k]
        ]


def _n_steps(horizon, dt):
    n = int(round(horizon / dt))
    if abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"dt={dt} does not divide horizon={horizon}")
    return n


def _poisson_times(rng, rate, horizon):
    times = np.empty(0)
    total = 0.0
    while True:
        gaps = rng.exponential(1.0 / rate, size=max(16, int(2 * rate * horizon) + 1))
        cum = total + np.cumsum(gaps)
        times = np.concatenate([times, cum])
        total = cum[-1]
        if total > horizon:
            break
    return times[times <= horizon]


def sample_driving(rng_seed, horizon, dt, model, path_index=0, x0_dist=None,
                   with_brownian=True):
    """Draw the full driving randomness for one path.

    ``x0_dist`` is the initial law over states (default uniform).  All five
    substreams are derived from ``rng_seed`` and ``path_index`` only, so the
    result is bit-reproducible.  ``with_brownian=False`` skips the Brownian
    block (the filtering oracle reuses one fixed observation path instead).
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    n_steps = _n_steps(horizon, dt)
    n = model.n_states
    times = _poisson_times(substream(rng_seed, path_index, _GAPS),
                           model.k_intensity, horizon)
    n_cand = len(times)
    marks = substream(rng_seed, path_index, _MARKS).integers(0, n, size=n_cand)
    unifs = substream(rng_seed, path_index, _UNIFS).random(n_cand)
    if with_brownian:
        brownian = substream(rng_seed, path_index, _BROWNIAN).standard_normal(
            (n_steps, model.d_obs)) * np.sqrt(dt)
    else:
        brownian = np.zeros((0, model.d_obs))
    if x0_dist is None:
        x0_dist = np.full(n, 1.0 / n)
    x0 = int(substream(rng_seed, path_index, _INIT).choice(n, p=x0_dist))
    return DrivingNoise(times, marks.astype(np.int64), unifs, x0, brownian,
                        float(dt), float(horizon), (rng_seed, path_index))


def thin_chain(driving, control, model):
    """Run the acceptance recursion and return the resulting trajectory."""
    times = driving.poisson_times
    ctrl_idx = np.asarray(control.index_at(times), dtype=np.int64).reshape(-1)
    knot_idx = np.asarray(model.knot_index(times), dtype=np.int64).reshape(-1)
    accepted = backend.accept_candidates(
        times, driving.marks, driving.uniforms, driving.initial_state,
        ctrl_idx, knot_idx, model.q, model.k_intensity, model.n_states)
    return ChainPath(times[accepted], driving.marks[accepted],
                     driving.initial_state, driving.horizon)


def compensator_residual(path, control, model, target_state):
    """Counting-minus-compensator residual for jumps into ``target_state``.

    Returns ``M_T(j) = #{jumps into j on (0, T]} - integral of
    q(a_s, s, X_{s-}, j) 1{X_{s-} != j} ds``, the time integral computed
    exactly over the piecewise-constant segments of (state, control, knot).
    """
    j = int(target_state)
    t_end = path.horizon
    cell_edges = np.arange(1, int(round(t_end / control.dt))) * control.dt
    edges = np.unique(np.concatenate(
        [[0.0, t_end], path.jump_times,
         cell_edges[cell_edges < t_end],
         model.time_knots[(model.time_knots > 0) & (model.time_knots < t_end)]]))
    left = edges[:-1]
    lengths = np.diff(edges)
    states = path.state_at(left)
    a_idx = control.index_at(left)
    kn = model.knot_index(left)
    rates = model.q[a_idx, kn, states, j]
    rates = np.where(states == j, 0.0, rates)
    integral = float(np.dot(rates, lengths))
    count = int(np.sum(path.jump_states == j))
    return count - integral


def simulate_physical(rng_seed, model, control_source, x0_dist, horizon, dt,
                      path_index=0):
    """Co-simulate chain and observation under the physical measure.

    The observation increment on cell k is ``h(X_{t_k}, a_k, t_k) dt + dB_k``
    with a fresh Brownian ``B``; the chain advances by thinning with the same
    candidate stream.  When ``control_source`` is a feedback policy the
    control for cell k is read from the filter state built from the
    observation increments up to ``t_k`` only.

    Returns ``(ChainPath, w_increments, ControlPath)``.
    """
    n_steps = _n_steps(horizon, dt)
    n = model.n_states
    x0_dist = np.asarray(x0_dist, dtype=float)
    times = _poisson_times(substream(rng_seed, path_index, _GAPS),
                           model.k_intensity, horizon)
    n_cand = len(times)
    marks = substream(rng_seed, path_index, _MARKS).integers(0, n, size=n_cand)
    unifs = substream(rng_seed, path_index, _UNIFS).random(n_cand)
    db = substream(rng_seed, path_index, _BROWNIAN).standard_normal(
        (n_steps, model.d_obs)) * np.sqrt(dt)
    x0 = int(substream(rng_seed, path_index, _INIT).choice(n, p=x0_dist))

    open_loop = isinstance(control_source, ControlPath)
    if open_loop and abs(control_source.horizon - horizon) > 1e-9:
        raise ControlUndefined("control path does not cover the horizon")
    if not open_loop:
        from .filtering import robust_step_bound, single_robust_step
        robust_step_bound(model, dt)  # raises StepTooLarge when inapplicable
        rho = x0_dist.copy()

    cand_cell = np.minimum((times / dt).astype(np.int64), n_steps - 1)
    knot_cand = np.asarray(model.knot_index(times), dtype=np.int64)
    a_values = np.empty(n_steps, dtype=np.int64)
    w_inc = np.empty((n_steps, model.d_obs))
    jump_times, jump_states = [], []
    cur = x0
    ptr = 0
    for k in range(n_steps):
        t_k = k * dt
        if open_loop:
            a_k = int(control_source.values[k])
        else:
            a_k = int(control_source.control_index(t_k, rho))
        a_values[k] = a_k
        w_inc[k] = model.h_at(a_k, t_k)[cur] * dt + db[k]
        # thinning over this cell's candidates, control frozen at a_k
        while ptr < n_cand and cand_cell[ptr] == k:
            mark = int(marks[ptr])
            if mark != cur:
                rate = model.q[a_k, knot_cand[ptr], cur, mark]
                if unifs[ptr] < n * rate / model.k_intensity:
                    jump_times.append(times[ptr])
                    jump_states.append(mark)
                    cur = mark
            ptr += 1
        if not open_loop:
            rho = single_robust_step(rho, a_k, t_k, w_inc[k], dt, model)

    chain_path = ChainPath(np.asarray(jump_times), np.asarray(jump_states, dtype=np.int64),
                           x0, float(horizon))
    ctrl = control_source if open_loop else ControlPath(a_values, dt, float(horizon))
    return chain_path, w_inc, ctrl
