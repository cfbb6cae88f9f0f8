import numpy as np
import pytest
from scipy.linalg import expm

from pocmc.chain import ChainPath, ControlPath, sample_driving, thin_chain
from pocmc.errors import GridMismatch
from pocmc.filtering import integrate_filter
from pocmc.measure import (
    estimator_report,
    girsanov_density,
    log_density_batch,
    reward_physical,
    reward_reference,
    reward_separated,
    truncation_tail_bound,
)

from conftest import build_model, symmetric_two_state


def _constant_path(horizon):
    return ChainPath(np.array([]), np.array([], dtype=np.int64), 0, horizon)


def test_zero_drift_density_is_one(two_state_plain):
    ctrl = ControlPath.constant(0, 1.0, 0.1)
    obs = np.random.default_rng(0).standard_normal((10, 1)) * np.sqrt(0.1)
    dens = girsanov_density(_constant_path(1.0), ctrl, obs, two_state_plain)
    assert np.all(dens.values == 1.0)
    assert np.all(dens.log_values == 0.0)


def test_constant_h_closed_form():
    c = 0.8
    model = build_model(np.zeros((1, 1, 2, 2)), h=np.full((1, 1, 2, 1), c),
                        k_intensity=1.0)
    dt, n = 0.05, 20
    ctrl = ControlPath.constant(0, 1.0, dt)
    obs = np.random.default_rng(1).standard_normal((n, 1)) * np.sqrt(dt)
    dens = girsanov_density(_constant_path(1.0), ctrl, obs, model)
    w_T = obs.sum()
    assert dens.log_values[-1] == pytest.approx(c * w_T - 0.5 * c * c * 1.0,
                                                abs=1e-12)


def test_density_invariants(two_state_signed):
    ctrl = ControlPath.constant(0, 1.0, 0.1)
    drv = sample_driving(3, 1.0, 0.1, two_state_signed)
    path = thin_chain(drv, ctrl, two_state_signed)
    dens = girsanov_density(path, ctrl, drv.brownian, two_state_signed)
    assert np.all(dens.values > 0.0)
    # the log path is exactly the cumulative of the stored increments
    rebuilt = np.concatenate(
        ([0.0], np.cumsum(dens.stoch_increments - 0.5 * dens.drift_increments)))
    assert np.array_equal(dens.log_values, rebuilt)
    assert np.array_equal(dens.values, np.exp(rebuilt))


def test_mid_cell_jump_splits_drift_exactly():
    # h = (1, -2); jump 0 -> 1 at t = 0.55 inside cell [0.5, 0.6):
    # drift on that cell: 1^2 * 0.05 + 2^2 * 0.05; dW still uses the left state
    h = np.zeros((1, 1, 2, 1))
    h[0, 0, 0, 0], h[0, 0, 1, 0] = 1.0, -2.0
    model = build_model(np.zeros((1, 1, 2, 2)), h=h, k_intensity=1.0)
    dt = 0.1
    ctrl = ControlPath.constant(0, 1.0, dt)
    path = ChainPath(np.array([0.55]), np.array([1], dtype=np.int64), 0, 1.0)
    obs = np.random.default_rng(2).standard_normal((10, 1)) * np.sqrt(dt)
    dens = girsanov_density(path, ctrl, obs, model)
    assert dens.drift_increments[5] == pytest.approx(1.0 * 0.05 + 4.0 * 0.05)
    assert dens.drift_increments[4] == pytest.approx(1.0 * dt)
    assert dens.drift_increments[6] == pytest.approx(4.0 * dt)
    assert dens.stoch_increments[5] == pytest.approx(1.0 * obs[5, 0])
    assert dens.stoch_increments[6] == pytest.approx(-2.0 * obs[6, 0])


def test_boundary_jump_closed_form(two_state_signed):
    # jump exactly at T/2 on the grid: log Z_T = W_{T/2} - (W_T - W_{T/2}) - T/2
    dt = 0.1
    ctrl = ControlPath.constant(0, 1.0, dt)
    path = ChainPath(np.array([0.5]), np.array([1], dtype=np.int64), 0, 1.0)
    obs = np.random.default_rng(4).standard_normal((10, 1)) * np.sqrt(dt)
    dens = girsanov_density(path, ctrl, obs, two_state_signed)
    w_half = obs[:5].sum()
    w_full = obs.sum()
    assert dens.log_values[-1] == pytest.approx(
        w_half - (w_full - w_half) - 0.5 * 1.0, abs=1e-12)


def test_grid_mismatch_raises(two_state_signed):
    ctrl = ControlPath.constant(0, 1.0, 0.1)
    obs = np.zeros((5, 1))
    with pytest.raises(GridMismatch):
        girsanov_density(_constant_path(1.0), ctrl, obs, two_state_signed)


def test_density_martingale(two_state_signed):
    # E Z_T = 1 under the reference measure
    ctrl = ControlPath.constant(0, 1.0, 0.02)
    n_paths = 3000
    rng = np.random.default_rng(6)
    obs = rng.standard_normal((n_paths, 50, 1)) * np.sqrt(0.02)
    chains = [thin_chain(sample_driving(8, 1.0, 0.02, two_state_signed,
                                        path_index=p, with_brownian=False),
                         ctrl, two_state_signed)
              for p in range(n_paths)]
    z_T = np.exp(log_density_batch(chains, ctrl, obs, two_state_signed))[:, -1]
    se = z_T.std(ddof=1) / np.sqrt(n_paths)
    assert abs(z_T.mean() - 1.0) <= 3 * se


class TestRewardReference:
    def test_zero_rewards(self, two_state_signed):
        ctrl = ControlPath.constant(0, 1.0, 0.1)
        obs = np.zeros((10, 1))
        dens = girsanov_density(_constant_path(1.0), ctrl, obs, two_state_signed)
        assert reward_reference(_constant_path(1.0), ctrl, dens,
                                two_state_signed) == 0.0

    def test_frozen_chain_constant_reward(self):
        # h = 0 (Z = 1), q = 0, f(X0) = c, g = (0.4, 0): reward = c T + g(X0)
        c = 1.3
        f = np.zeros((1, 1, 2))
        f[0, 0, 0] = c
        model = build_model(np.zeros((1, 1, 2, 2)), f=f, g=[0.4, 0.0],
                            k_intensity=1.0, k0=2.0)
        ctrl = ControlPath.constant(0, 1.0, 0.1)
        obs = np.zeros((10, 1))
        dens = girsanov_density(_constant_path(1.0), ctrl, obs, model)
        val = reward_reference(_constant_path(1.0), ctrl, dens, model)
        assert val == pytest.approx(c * 1.0 + 0.4, abs=1e-12)

    def test_occupancy_oracle(self, two_state_plain):
        # h = 0, f = (1, 0), X0 = 0: E reward = int_0^1 P(X_t = 0) dt,
        # from the matrix exponential of the generator (independent oracle)
        ctrl = ControlPath.constant(0, 1.0, 0.02)
        n_paths = 5000
        vals = np.empty(n_paths)
        obs = np.zeros((50, 1))
        for p in range(n_paths):
            drv = sample_driving(10, 1.0, 0.02, two_state_plain, path_index=p,
                                 x0_dist=[1.0, 0.0], with_brownian=False)
            path = thin_chain(drv, ctrl, two_state_plain)
            dens = girsanov_density(path, ctrl, obs, two_state_plain)
            vals[p] = reward_reference(path, ctrl, dens, two_state_plain)
        q_mat = two_state_plain.q[0, 0]
        ts = np.linspace(0.0, 1.0, 2001)
        occ = np.array([expm(q_mat.T * t)[0, 0] for t in ts])
        oracle = np.trapezoid(occ, ts)
        assert oracle == pytest.approx(0.5 + 0.25 * (1 - np.exp(-2.0)), abs=1e-6)
        se = vals.std(ddof=1) / np.sqrt(n_paths)
        assert abs(vals.mean() - oracle) <= 3 * se


class TestRewardPhysical:
    def test_trivials(self, two_state_plain):
        ctrl = ControlPath.constant(0, 1.0, 0.1)
        assert reward_physical(_constant_path(1.0), ctrl,
                               symmetric_two_state(k_intensity=4.0)) == 0.0
        val = reward_physical(_constant_path(1.0), ctrl, two_state_plain)
        assert val == pytest.approx(1.0)          # f(X0) = 1 over unit horizon

    def test_occupancy_oracle(self, two_state_plain):
        from pocmc.chain import simulate_physical
        ctrl = ControlPath.constant(0, 1.0, 0.02)
        n_paths = 5000
        vals = np.empty(n_paths)
        for p in range(n_paths):
            path, _, _ = simulate_physical(12, two_state_plain, ctrl,
                                           [1.0, 0.0], 1.0, 0.02, path_index=p)
            vals[p] = reward_physical(path, ctrl, two_state_plain)
        oracle = 0.5 + 0.25 * (1 - np.exp(-2.0))
        se = vals.std(ddof=1) / np.sqrt(n_paths)
        assert abs(vals.mean() - oracle) <= 3 * se


class TestRewardSeparated:
    def test_zero_state(self, two_state_plain):
        ctrl = ControlPath.constant(0, 1.0, 0.1)
        fp = integrate_filter(np.zeros((10, 1)), ctrl, [0.0, 0.0], "robust",
                              two_state_plain)
        assert reward_separated(fp, ctrl, two_state_plain) == 0.0

    def test_deterministic_filter_matches_quadrature(self, two_state_plain):
        # h = 0: rho_t = expm(Q^T t) x0 and the reward is a known integral
        dt = 0.001
        ctrl = ControlPath.constant(0, 1.0, dt)
        x0 = np.array([0.3, 0.7])
        fp = integrate_filter(np.zeros((1000, 1)), ctrl, x0, "robust",
                              two_state_plain)
        q_mat = two_state_plain.q[0, 0]
        f_vec = two_state_plain.f[0, 0]
        ts = np.linspace(0.0, 1.0, 4001)
        vals = np.array([expm(q_mat.T * t) @ x0 @ f_vec for t in ts])
        oracle = np.trapezoid(vals, ts)
        got = reward_separated(fp, ctrl, two_state_plain)
        assert abs(got - oracle) <= 5.0 * dt

    def test_discounted_constant_reward_hits_c_over_beta(self):
        # f = c, mass martingale: J_infty = c / beta for unit-mass starts
        c, beta = 0.6, 1.0
        f = np.full((1, 1, 2), c)
        h = np.zeros((1, 1, 2, 1))
        h[0, 0, 0, 0], h[0, 0, 1, 0] = 0.8, -0.8
        model = build_model(np.zeros((1, 1, 2, 2)), h=h, f=f, horizon=None,
                            discount=beta, k_intensity=1.0)
        t_trunc, dt = 8.0, 0.01
        ctrl = ControlPath.constant(0, t_trunc, dt)
        rng = np.random.default_rng(9)
        n_paths = 2000
        vals = np.empty(n_paths)
        for p in range(n_paths):
            obs = rng.standard_normal((800, 1)) * np.sqrt(dt)
            fp = integrate_filter(obs, ctrl, [0.5, 0.5], "robust", model)
            vals[p] = reward_separated(fp, ctrl, model)
        bound = truncation_tail_bound(model, t_trunc, x0_mass=1.0)
        se = vals.std(ddof=1) / np.sqrt(n_paths)
        assert abs(vals.mean() - c / beta) <= bound + 3 * se + 2 * dt * c


def test_estimator_report_fields():
    rep = estimator_report(np.array([1.0, 2.0, 3.0]), dt=0.1, t_trunc=5.0,
                           tail_bound=0.01)
    assert rep["estimate"] == pytest.approx(2.0)
    assert rep["n_paths"] == 3
    assert rep["scheme"] == "left-endpoint"
    assert rep["t_trunc"] == 5.0
    assert rep["std_error"] == pytest.approx(1.0 / np.sqrt(3))
