import numpy as np
import pytest

from pocmc.model import ControlModel, validate_model


def build_model(q, h=None, f=None, g=None, controls=None, time_knots=(0.0,),
                horizon=1.0, discount=None, d_obs=1, k0=None, k_intensity=None):
    """Assemble and validate a model from (A, Kn, ...) tables."""
    q = np.asarray(q, dtype=float)
    n_ctrl, n_knots, n, _ = q.shape
    if h is None:
        h = np.zeros((n_ctrl, n_knots, n, d_obs))
    if f is None:
        f = np.zeros((n_ctrl, n_knots, n))
    if g is None:
        g = np.zeros(n)
    if controls is None:
        controls = tuple(f"a{i}" for i in range(n_ctrl))
    raw = ControlModel(
        n_states=n, d_obs=d_obs, controls=tuple(controls),
        time_knots=np.asarray(time_knots, dtype=float),
        q=q, h=np.asarray(h, dtype=float), f=np.asarray(f, dtype=float),
        g=np.asarray(g, dtype=float),
        horizon=horizon, discount=discount, k0=k0, k_intensity=k_intensity,
    )
    return validate_model(raw)


def symmetric_two_state(rate=1.0, h_vals=(0.0, 0.0), f_vals=(0.0, 0.0),
                        g_vals=(0.0, 0.0), horizon=1.0, k_intensity=None,
                        discount=None):
    """One-control N=2 model with symmetric rates, the workhorse fixture."""
    q = np.zeros((1, 1, 2, 2))
    q[0, 0, 0, 1] = rate
    q[0, 0, 1, 0] = rate
    h = np.zeros((1, 1, 2, 1))
    h[0, 0, 0, 0], h[0, 0, 1, 0] = h_vals
    f = np.zeros((1, 1, 2))
    f[0, 0, :] = f_vals
    return build_model(q, h, f, np.asarray(g_vals, dtype=float),
                       horizon=horizon, discount=discount,
                       k_intensity=k_intensity)


def example_63_model(R=1.0, n_controls=11, h_vals=(1.0, -1.0), g_vals=(1.0, 0.0),
                     horizon=1.0):
    """Quadratic-cost controlled-rate model: q(a) = a off-diagonal, f = -a^2/2."""
    grid = np.linspace(0.0, R, n_controls)
    q = np.zeros((n_controls, 1, 2, 2))
    h = np.zeros((n_controls, 1, 2, 1))
    f = np.zeros((n_controls, 1, 2))
    for ai, a in enumerate(grid):
        q[ai, 0, 0, 1] = a
        q[ai, 0, 1, 0] = a
        h[ai, 0, :, 0] = h_vals
        f[ai, 0, :] = -0.5 * a * a
    labels = tuple(f"{a:.2f}" for a in grid)
    return build_model(q, h, f, np.asarray(g_vals, dtype=float), controls=labels,
                       horizon=horizon, k_intensity=2.0 * R * 1.1)


@pytest.fixture
def two_state_plain():
    """Rate-1 symmetric chain, no observation drift, running reward (1, 0)."""
    return symmetric_two_state(rate=1.0, f_vals=(1.0, 0.0), k_intensity=4.0)


@pytest.fixture
def two_state_signed():
    """Rate-1 symmetric chain with observation drift h = (+1, -1)."""
    return symmetric_two_state(rate=1.0, h_vals=(1.0, -1.0), k_intensity=4.0)
