import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbm_stm.errors import DegenerateDenominator, DomainError, ImplicitSolveFailure
from fbm_stm.fbm import FbmGrid, SamplingMethod, sample_increment_paths, sample_increments
from fbm_stm.models import LinearTestModel, cubic_drift, cubic_drift_sin_diffusion, linear_as_nonlinear
from fbm_stm.stm import (
    LogSignedState,
    ThetaScheme,
    alpha_n,
    beta_n,
    simulate_linear,
    simulate_linear_paths,
    simulate_nonlinear,
    simulate_nonlinear_paths,
    solve_implicit,
    step_factors,
    write_trajectory_csv,
)


class TestScheme:
    @pytest.mark.parametrize("kw", [{"theta": -0.1}, {"theta": 1.1}, {"dt": 0.0}, {"n_steps": 0}])
    def test_domain(self, kw):
        args = {"theta": 0.5, "dt": 0.1, "n_steps": 4} | kw
        with pytest.raises(DomainError):
            ThetaScheme(**args)

    def test_times(self):
        assert np.array_equal(ThetaScheme(0.5, 0.25, 4).times, [0, 0.25, 0.5, 0.75, 1.0])

    def test_log_signed_value(self):
        assert LogSignedState(-1, math.log(2.0)).value == pytest.approx(-2.0)
        assert LogSignedState(0, -math.inf).value == 0.0


class TestFactors:
    def test_backward_euler_alpha(self):
        for n in range(5):
            expect = 1 / (1 + 1.5 * 2.0 * (n + 1) ** 0.5 * 0.3**1.5)
            assert alpha_n(n, 1.0, 2.0, 1.5, 0.3) == pytest.approx(expect, rel=1e-15)

    def test_alpha_at_zero(self):
        assert alpha_n(0, 0.6, 2.0, 1.5, 0.3) == pytest.approx(1 / (1 + 1.5 * 0.6 * 2.0 * 0.3**1.5), rel=1e-15)

    def test_beta_explicit(self):
        assert beta_n(7, 0.0, 3.0, 2.5, 1.4, 0.2) == 2.5

    def test_beta_example(self):
        assert beta_n(1, 1.0, 1.0, 2.0, 2.0, 1.0) == pytest.approx(2 / 5, rel=1e-15)

    def test_alpha_limit_slow_convergence(self):
        # the gap to -(1-theta)/theta decays like n^(1-kappa); at kappa = 1.2
        # it is still about 2e-2 at n = 1e6 and first drops below 1e-3 near 1e13
        theta, kappa, lam, dt = 0.8, 1.2, 9.0, 0.5
        limit = -(1 - theta) / theta
        gaps = [abs(alpha_n(n, theta, lam, kappa, dt) - limit) for n in (10**6, 10**9, 10**13)]
        assert 0.01 < gaps[0] < 0.03
        assert gaps[2] < 1e-3
        rate = math.log(gaps[0] / gaps[1]) / math.log(1e3)
        assert rate == pytest.approx(kappa - 1, abs=0.02)

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(0, 10**6), theta=st.floats(0.01, 1), lam=st.floats(0.01, 20),
           kappa=st.floats(1, 3), dt=st.floats(1e-3, 2), mu=st.floats(0, 5))
    def test_beta_bound(self, n, theta, lam, kappa, dt, mu):
        b = beta_n(n, theta, lam, mu, kappa, dt)
        assert 0 <= b <= mu
        assert b <= mu / (kappa * theta * lam * (n + 1) ** (kappa - 1) * dt**kappa) * (1 + 1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateDenominator):
            alpha_n(0, 1.0, -1.0, 1.0, 1.0)
        with pytest.raises(DegenerateDenominator):
            beta_n(np.arange(3), 1.0, -1.0, 1.0, 1.0, 1.0)

    def test_vectorised(self):
        a = alpha_n(np.arange(4), 0.7, 1.0, 1.5, 0.5)
        assert a.shape == (4,)
        assert a[2] == alpha_n(2, 0.7, 1.0, 1.5, 0.5)


class TestLinear:
    def test_deterministic_backward_euler(self):
        m = LinearTestModel(2.0, 0.0, 1.7, 1.5)
        s = ThetaScheme(1.0, 0.4, 200)
        traj = simulate_linear(m, s, np.zeros(200))
        k = np.arange(1, 201)
        closed = math.log(1.5) - np.cumsum(np.log1p(1.7 * 2.0 * (k * 0.4) ** 0.7 * 0.4))
        np.testing.assert_allclose(traj.log_abs[1:], closed, rtol=1e-12)
        assert np.all(traj.sign == 1)

    def test_single_step(self):
        m = LinearTestModel(1.3, 0.9, 1.5, -2.0)
        s = ThetaScheme(0.6, 0.5, 1)
        v0 = 0.37
        traj = simulate_linear(m, s, np.array([v0]))
        a0, b0 = alpha_n(0, 0.6, 1.3, 1.5, 0.5), beta_n(0, 0.6, 1.3, 0.9, 1.5, 0.5)
        assert traj.values()[1] == pytest.approx((a0 + b0 * v0) * -2.0, rel=1e-15)
        assert traj.states[0].value == pytest.approx(-2.0, rel=1e-15)

    def test_one_step_second_moment(self):
        h, dt = 0.7, 0.5
        m = LinearTestModel(1.3, 0.9, 1.5, 1.0)
        s = ThetaScheme(0.6, dt, 1)
        v = sample_increment_paths(FbmGrid(h, dt, 1), "circulant", 3, range(100000))
        _, log_abs = simulate_linear_paths(m, s, v)
        sq = np.exp(2 * log_abs[:, 1])
        a0, b0 = alpha_n(0, 0.6, 1.3, 1.5, dt), beta_n(0, 0.6, 1.3, 0.9, 1.5, dt)
        target = a0**2 + b0**2 * dt ** (2 * h)
        assert abs(sq.mean() - target) < 3 * sq.std(ddof=1) / math.sqrt(sq.size)

    def test_sign_bookkeeping_matches_plain_product(self):
        m = LinearTestModel(-0.5, 1.7, 1.3, 0.8)
        s = ThetaScheme(0.3, 0.2, 40)
        v = sample_increment_paths(FbmGrid(0.65, 0.2, 40), "circulant", 8, range(50))
        sign, log_abs = simulate_linear_paths(m, s, v)
        alpha, beta = step_factors(m, s)
        plain = 0.8 * np.cumprod(alpha + beta * v, axis=1)
        np.testing.assert_array_equal(sign[:, 1:], np.sign(plain))
        np.testing.assert_allclose(np.exp(log_abs[:, 1:]), np.abs(plain), rtol=1e-12)

    def test_zero_factor_absorbs(self):
        m = LinearTestModel(1.0, 1.0, 1.0, 1.0)
        s = ThetaScheme(1.0, 1.0, 3)
        a0, b0 = alpha_n(0, 1.0, 1.0, 1.0, 1.0), beta_n(0, 1.0, 1.0, 1.0, 1.0, 1.0)
        traj = simulate_linear(m, s, np.array([-a0 / b0, 0.3, -0.2]))
        assert list(traj.sign) == [1, 0, 0, 0]
        assert np.all(np.isneginf(traj.log_abs[1:]))
        assert np.all(traj.values()[1:] == 0)

    def test_no_overflow_in_log_domain(self):
        m = LinearTestModel(-9.0, 2.0, 1.4, 3.0)
        s = ThetaScheme(0.4, 0.5, 4096)
        block = sample_increments(FbmGrid(0.7, 0.5, 4096), SamplingMethod.CIRCULANT, 1, 0)
        traj = simulate_linear(m, s, block)
        assert np.all(np.isfinite(traj.log_abs))
        # well past the largest double
        assert traj.log_abs[-1] > 1000

    def test_length_mismatch(self):
        m = LinearTestModel(1.0, 1.0, 1.5, 1.0)
        with pytest.raises(DomainError):
            simulate_linear(m, ThetaScheme(0.5, 0.1, 5), np.zeros(4))

    def test_deterministic_given_block(self):
        m = LinearTestModel(9.0, 2.0, 1.4, 3.0)
        s = ThetaScheme(0.8, 0.5, 64)
        block = sample_increments(FbmGrid(0.7, 0.5, 64), SamplingMethod.CIRCULANT, 5, 2)
        a, b = simulate_linear(m, s, block), simulate_linear(m, s, block)
        assert np.array_equal(a.log_abs, b.log_abs)


class TestSolver:
    def test_cubic_root_unique_and_accurate(self):
        m = cubic_drift(3.0, 2.0, 4.0, 3.0)
        rhs = np.array([-1e6, -30.0, -1e-3, 0.0, 1e-200, 2.0, 1e8])
        c, t = 0.5, 1.5
        y, failed = solve_implicit(m.drift, t, c, rhs, m.drift_dx)
        assert not failed.any()
        g = y - c * m.drift(t, y) - rhs
        assert np.all(np.abs(g) <= 1e-12 * (1 + np.abs(rhs)))
        # G is increasing, so the root has the sign of rhs
        assert np.array_equal(np.sign(y), np.sign(rhs))

    def test_numeric_slope_fallback(self):
        m = cubic_drift(3.0, 2.0, 4.0, 3.0)
        rhs = np.linspace(-50, 50, 11)
        y, failed = solve_implicit(m.drift, 1.0, 1.0, rhs)
        assert not failed.any()
        assert np.all(np.abs(y - m.drift(1.0, y) - rhs) <= 1e-12 * (1 + np.abs(rhs)))

    def test_tiny_states_keep_relative_precision(self):
        m = cubic_drift(3.0, 2.0, 4.0, 3.0)
        rhs = np.array([1e-100, -1e-250])
        y, _ = solve_implicit(m.drift, 2.0, 0.5, rhs, m.drift_dx)
        exact = rhs / (1 + 0.5 * 3.0 * 2.0 * 2.0)
        np.testing.assert_allclose(y, exact, rtol=1e-12)

    def test_failure_reported(self):
        # G(y) = y - (y + 1) - rhs is a nonzero constant: no root to bracket
        y, failed = solve_implicit(lambda t, y: y + 1.0, 0.0, 1.0, np.array([1.0]), max_iter=20)
        assert failed.all()


class TestNonlinear:
    def test_explicit_step(self):
        m = cubic_drift(3.0, 2.0, 4.0, 0.5)
        s = ThetaScheme(0.0, 0.1, 1)
        x, _, _ = simulate_nonlinear_paths(m, s, np.array([[0.2]]))
        assert x[0, 1] == pytest.approx(0.5 + 0.1 * m.drift(0.0, 0.5) + 4.0 * 0.5 * 0.2, rel=1e-15)

    @pytest.mark.parametrize("theta", [0.0, 0.3, 0.8, 1.0])
    def test_matches_linear(self, theta):
        lin = LinearTestModel(2.0, 0.8, 1.5, 1.7)
        s = ThetaScheme(theta, 0.1, 200)
        v = sample_increment_paths(FbmGrid(0.7, 0.1, 200), "circulant", 9, range(20))
        sign, log_abs = simulate_linear_paths(lin, s, v)
        x, div, failed = simulate_nonlinear_paths(linear_as_nonlinear(lin), s, v)
        assert not failed.any()
        assert np.all(div == -1)
        np.testing.assert_allclose(x, sign * np.exp(log_abs), rtol=1e-10, atol=1e-300)

    def test_backward_euler_cubic_contracts(self):
        m = cubic_drift(3.0, 2.0, 4.0, 3.0)
        s = ThetaScheme(1.0, 0.5, 512)
        v = sample_increment_paths(FbmGrid(0.6, 0.5, 512), "circulant", 1, range(50))
        x, div, failed = simulate_nonlinear_paths(m, s, v)
        assert not failed.any()
        assert np.all(div == -1)
        assert np.all(np.abs(x[:, -1]) < 1e-20)

    def test_sin_diffusion_runs(self):
        m = cubic_drift_sin_diffusion(3.0, 2.0, 3.0)
        s = ThetaScheme(1.0, 1.0, 128)
        block = sample_increments(FbmGrid(0.8, 1.0, 128), SamplingMethod.CIRCULANT, 1, 0)
        traj = simulate_nonlinear(m, s, block)
        assert traj.diverged_at is None
        assert abs(traj.values()[-1]) < abs(traj.values()[0])

    def test_explicit_cubic_saturates(self):
        m = cubic_drift(3.0, 2.0, 4.0, 3.0)
        s = ThetaScheme(0.0, 0.5, 20)
        traj = simulate_nonlinear(m, s, np.zeros(20))
        assert traj.diverged_at is not None
        assert np.all(np.isinf(traj.values()[traj.diverged_at:]))
        assert np.all(np.isfinite(traj.values()[: traj.diverged_at]))

    def test_solve_failure_raises(self, monkeypatch):
        import fbm_stm.stm as stm

        def fail(drift, t, c, rhs, drift_dx=None, **kw):
            return rhs, np.ones(rhs.shape, dtype=bool)

        monkeypatch.setattr(stm, "solve_implicit", fail)
        m = cubic_drift(3.0, 2.0, 4.0, 3.0)
        with pytest.raises(ImplicitSolveFailure):
            simulate_nonlinear(m, ThetaScheme(1.0, 0.5, 3), np.zeros(3))


def test_trajectory_csv(tmp_path):
    m = cubic_drift(3.0, 2.0, 4.0, 3.0)
    traj = simulate_nonlinear(m, ThetaScheme(0.0, 0.5, 20), np.zeros(20))
    path = tmp_path / "t.csv"
    write_trajectory_csv(path, traj)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,t,sign,log_abs,value_or_inf"
    assert len(lines) == 22
    assert lines[-1].split(",")[3:] == ["inf", "-inf"] or lines[-1].split(",")[3:] == ["inf", "inf"]
