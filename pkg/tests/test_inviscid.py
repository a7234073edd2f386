from __future__ import annotations

import numpy as np
import pytest

from stochburgers.fbsde import MCConfig, Window
from stochburgers.inviscid import (ShockError, characteristics_fixed_point, implicit_characteristics_1d, inviscid_solve,
                                   local_existence_window, min_fold_jacobian, trace_characteristics,
                                   viscosity_sweep)
from stochburgers.model import BurgersProblem, cutoff_force, time_reverse, transformed_force
from stochburgers.noise import build_brownian, synthesize_noise_field
from stochburgers.pde import fd_solve_forward
from stochburgers.presets import build_diffusion, build_force, build_initial, reference_problem

from conftest import PERIODIC, make_noise


def _problem(h, T=0.25, nu=0.0, g=None):
    return BurgersProblem(nu, T, PERIODIC, h, build_force("zero", PERIODIC),
                          g or build_diffusion("zero", PERIODIC, 1))


def _sine():
    return build_initial("sine", PERIODIC, {"modes": [{"amp": -1.0, "omega": np.pi}]})


def _solve(p, nodes, dt, seed=0):
    grid = p.grid(nodes, dt)
    eta = synthesize_noise_field(p.g, build_brownian(seed, p.g.d, p.T, grid.steps), grid)
    return inviscid_solve(p, eta, grid), grid


def test_zero_data(zero_data):
    p = BurgersProblem(0.0, 0.25, PERIODIC, *zero_data)
    sol, _ = _solve(p, 32, 1 / 32)
    assert not np.any(sol.y.values)


def test_constant_data():
    p = _problem(build_initial("constant", PERIODIC, {"value": 0.4}))
    sol, _ = _solve(p, 32, 1 / 32)
    np.testing.assert_allclose(sol.y.values, 0.4, atol=1e-12)


class TestImplicitOracle:
    def test_initial_time(self):
        x = np.linspace(-1, 1, 17)
        np.testing.assert_allclose(implicit_characteristics_1d(_sine(), 0.0, x), -np.sin(np.pi * x), atol=1e-14)

    def test_solves_implicit_relation(self):
        x = np.linspace(-1, 1, 41)
        t = 0.3
        y = implicit_characteristics_1d(_sine(), t, x)
        xi = x - y * t
        np.testing.assert_allclose(y, -np.sin(np.pi * xi), atol=1e-12)

    def test_needs_one_dimension(self):
        h = build_initial("zero", reference_problem(0.1, 0.25).domain.__class__((0.0, 0.0), (1.0, 1.0), True))
        with pytest.raises(ValueError):
            implicit_characteristics_1d(h, 0.1, [0.0])


def test_matches_implicit_characteristics():
    p = _problem(_sine())
    sol, grid = _solve(p, 256, 1 / 512)
    x = grid.points()[:, 0]
    err = max(np.max(np.abs(sol.y.values[k, :, 0] - implicit_characteristics_1d(p.h, t, x)))
              for k, t in enumerate(sol.y.times))
    assert err <= 1e-4


def test_fold_jacobian_matches_exact():
    # 1 + h'(xi) t is smallest at xi = 0, where h' = -pi
    sol, _ = _solve(_problem(_sine()), 128, 1 / 256)
    assert min_fold_jacobian(sol) == pytest.approx(1 - np.pi * 0.25, abs=2e-3)


def test_shock_refused():
    p = _problem(_sine(), T=0.4)
    grid = p.grid(64, 1 / 160)
    eta = synthesize_noise_field(p.g, build_brownian(0, 1, p.T, grid.steps), grid)
    with pytest.raises(ShockError) as info:
        inviscid_solve(p, eta, grid)
    assert abs(info.value.time - 1 / np.pi) <= 2 * grid.dt
    assert info.value.jacobian <= 0


def test_trace_reproduces_feedback():
    p = _problem(_sine())
    grid = p.grid(128, 1 / 256)
    eta = synthesize_noise_field(p.g, build_brownian(0, 1, p.T, grid.steps), grid)
    F_bar = time_reverse(cutoff_force(transformed_force(p, eta), 10.0))
    win = Window(0, grid.steps, grid.dt)
    sol = characteristics_fixed_point(p, F_bar, p.h, win, grid, M=10.0)
    X, Y = trace_characteristics(sol, F_bar, p.h, 0, grid.points())
    # no force: values are transported unchanged, and start at the fixed-point feedback
    np.testing.assert_allclose(Y, np.broadcast_to(Y[-1], Y.shape), atol=1e-13)
    np.testing.assert_allclose(Y[0], sol.values[0], atol=1e-9)
    # straight lines with slope -y in reversed time, up to interpolation of the feedback
    np.testing.assert_allclose(X[-1], X[0] - p.T * Y[0], atol=grid.spacing[0] ** 2)


def test_integrated_equation_residual():
    # y_0(t, x) - h(x - y t) vanishes along straight characteristics for f = g = 0
    errs = []
    for nodes, dt in ((64, 1 / 128), (128, 1 / 256)):
        p = _problem(_sine())
        sol, grid = _solve(p, nodes, dt)
        x = grid.points()[:, 0]
        y = sol.y.values[-1, :, 0]
        errs.append(np.max(np.abs(y - p.h((x - y * p.T)[:, None])[:, 0])))
    assert errs[1] < errs[0]
    assert errs[0] <= 10 * (1 / 128 + 2 / 64) ** 2


def test_noisy_instance_runs(ref_noise):
    p = reference_problem(0.0, 0.25)
    sol = inviscid_solve(p, ref_noise)
    assert sol.converged and min_fold_jacobian(sol) > 0
    assert np.all(np.isfinite(sol.y.values))


class TestExistenceWindow:
    def test_no_noise(self, zero_data):
        h, f, _ = zero_data
        p = BurgersProblem(0.0, 0.25, PERIODIC, _sine(), f, build_diffusion("zero", PERIODIC, 1))
        eta, _ = make_noise(p)
        w = local_existence_window(p, eta, 1.0)
        assert w.T_N == p.T
        assert w.S == w.beta

    def test_large_N(self, ref_problem, ref_noise):
        w = local_existence_window(ref_problem, ref_noise, 1e12)
        assert w.T_N == ref_problem.T
        assert 0 < w.S <= ref_problem.T

    def test_monotone_in_N(self, ref_problem, ref_noise):
        a = local_existence_window(ref_problem, ref_noise, 5.0)
        b = local_existence_window(ref_problem, ref_noise, 10.0)
        assert a.T_N <= b.T_N and (a.N, b.N) == (5.0, 10.0)

    def test_bad_N(self, ref_problem, ref_noise):
        with pytest.raises(ValueError):
            local_existence_window(ref_problem, ref_noise, 0.0)


class TestSweep:
    def test_constant_data_degenerate(self):
        p = _problem(build_initial("constant", PERIODIC, {"value": 0.3}), nu=0.1)
        grid = p.grid(32, 1 / 64)
        eta = synthesize_noise_field(p.g, build_brownian(0, 1, p.T, grid.steps), grid)
        rep = viscosity_sweep(p, [0.2, 0.1, 0.05], eta, grid, solver="fd")
        assert all(r.sup_err <= 1e-12 for r in rep.rows)
        assert rep.fit.degenerate and rep.monotone

    def test_entry_matches_direct_distance(self, ref_noise):
        p = reference_problem(0.1, 0.25)
        grid = ref_noise.grid
        rep = viscosity_sweep(p, [0.2, 0.1, 0.05], ref_noise, grid, solver="fd", N=50.0)
        ref = inviscid_solve(p.with_nu(0.0), ref_noise, grid, M=rep.M)
        fd = fd_solve_forward(p.with_nu(0.05), ref_noise, grid)
        d = np.max(np.linalg.norm(fd.values - ref.yhat.values, axis=-1))
        row = [r for r in rep.rows if r.nu == 0.05][0]
        assert row.sup_err == pytest.approx(d, abs=1e-12)
        assert rep.existence is not None and rep.existence.N == 50.0

    def test_small_viscosity_distance_decreases(self):
        p = _problem(_sine(), nu=0.1)
        grid = p.grid(256, 1 / 512)
        eta = synthesize_noise_field(p.g, build_brownian(0, 1, p.T, grid.steps), grid)
        rep = viscosity_sweep(p, [0.04, 0.02, 0.01], eta, grid, solver="fd")
        errs = [r.sup_err for r in rep.rows]
        assert errs[0] > errs[1] > errs[2]
        assert rep.jacobian_min > 0

    def test_short_list_noted(self, ref_noise):
        p = reference_problem(0.1, 0.25)
        rep = viscosity_sweep(p, [0.2, 0.15, 0.1], ref_noise, solver="fd")
        assert any("decade" in n for n in rep.notes)

    @pytest.mark.parametrize("nus", [[0.1, 0.05], [0.1, 0.05, 0.0]])
    def test_bad_lists(self, ref_noise, nus):
        with pytest.raises(ValueError):
            viscosity_sweep(reference_problem(0.1, 0.25), nus, ref_noise, solver="fd")

    def test_fbsde_member(self, ref_noise):
        p = reference_problem(0.1, 0.25)
        mc = MCConfig(paths=4000, seed=1)
        rep = viscosity_sweep(p, [0.2, 0.1, 0.05], ref_noise, mc=mc)
        assert not rep.partial and all(np.isfinite(r.sup_err) for r in rep.rows)
