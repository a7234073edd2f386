from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from stochburgers.grid import GridSpec, SpaceTimeField
from stochburgers.model import (BurgersProblem, Domain, cutoff_force, cutoff_map, default_cutoff_level,
                                reconstruct, smooth_step, substitute, time_reverse, transformed_force)
from stochburgers.presets import build_diffusion, build_force, build_initial, reference_problem

from conftest import PERIODIC, make_noise

TWO_PI = Domain((0.0,), (2 * np.pi,), True)


def _probes(n=40, seed=0, lo=-1.0, hi=1.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, (n, 1)), rng.normal(size=(n, 1))


class TestTransformedForce:
    def test_reduces_to_f_without_noise(self):
        f = build_force("sine", PERIODIC, {"damping": 0.4, "modes": [{"amp": 0.3, "omega": np.pi}]})
        p = BurgersProblem(0.2, 1.0, PERIODIC, build_initial("zero", PERIODIC), f,
                           build_diffusion("zero", PERIODIC, 1))
        eta, _ = make_noise(p, steps=16)
        F = transformed_force(p, eta)
        x, y = _probes()
        for j in (0, 7, 16):
            np.testing.assert_array_equal(F(j, x, y), f(eta.times[j], x, y))

    def test_spatially_constant_noise_vanishes(self):
        p = BurgersProblem(0.3, 1.0, PERIODIC, build_initial("zero", PERIODIC), build_force("zero", PERIODIC),
                           build_diffusion("constant", PERIODIC, 1, {"matrix": [[0.8]]}))
        eta, _ = make_noise(p, steps=16)
        assert not eta.is_zero
        x, y = _probes()
        for j in (3, 16):
            np.testing.assert_array_equal(transformed_force(p, eta)(j, x, y), 0.0)

    def test_hand_built_instance(self):
        nu = 0.35
        g = build_diffusion("sine", TWO_PI, 1, {"modes": [{"amp": 1.0, "omega": 1.0}]})
        p = BurgersProblem(nu, 1.0, TWO_PI, build_initial("zero", TWO_PI), build_force("zero", TWO_PI), g)
        eta, B = make_noise(p, steps=32, seed=17)
        F = transformed_force(p, eta)
        x, y = _probes(lo=0.0, hi=2 * np.pi)
        for j in (1, 12, 32):
            b = B.values[j, 0]
            s, c = np.sin(x), np.cos(x)
            expect = -nu * s * b - (y + s * b) * c * b
            np.testing.assert_allclose(F(j, x, y), expect, rtol=1e-12, atol=1e-14)

    def test_missing_channels(self, ref_problem):
        with pytest.raises(ValueError):
            transformed_force(ref_problem, np.zeros((4, 4)))

    @pytest.mark.parametrize("M", [None, 0.6])
    def test_derivatives_second_order(self, ref_problem, M):
        eta, _ = make_noise(ref_problem, steps=16, seed=5)
        F = transformed_force(ref_problem, eta)
        if M is not None:
            F = cutoff_force(F, M)
        x, y = _probes(seed=3)
        y = 0.5 * y
        j = 11
        for which in ("x", "y"):
            exact = F.grad_x(j, x, y) if which == "x" else F.grad_y(j, x, y)
            errs = []
            for h in (1e-2, 5e-3):
                if which == "x":
                    fd = (F(j, x + h, y) - F(j, x - h, y)) / (2 * h)
                else:
                    fd = (F(j, x, y + h) - F(j, x, y - h)) / (2 * h)
                errs.append(np.max(np.abs(fd - exact[:, :, 0])))
            if errs[0] < 1e-11:
                continue  # F is affine in this direction, differences are exact
            assert np.log2(errs[0] / errs[1]) >= 1.9, (which, errs)

    def test_on_nodes_matches_pointwise(self, ref_problem, ref_noise):
        F = transformed_force(ref_problem, ref_noise)
        grid = ref_noise.grid
        y = np.sin(grid.mesh())
        np.testing.assert_allclose(F.on_nodes(9, grid, y).reshape(-1, 1), F(9, grid.points(), y.reshape(-1, 1)),
                                   rtol=1e-13, atol=1e-14)


class TestCutoff:
    def test_identity_inside(self):
        y = np.array([[0.3, -0.4], [0.0, 0.9]])
        assert np.array_equal(cutoff_map(y, 1.0), y)

    def test_zero_outside(self):
        y = np.array([[2.0, 0.0], [1.5, -1.5]])
        assert not np.any(cutoff_map(y, 1.0))

    def test_profile_value(self):
        # radius 1.5 sits at s = 0.5 where the smooth step is exactly 1/2
        np.testing.assert_allclose(cutoff_map(np.array([[1.5, 0.0]]), 1.0), [[0.75, 0.0]], rtol=1e-15)
        # radius 1.25: S(1/4) = e^-4 / (e^-4 + e^-4/3)
        s = np.exp(-4.0) / (np.exp(-4.0) + np.exp(-4.0 / 3.0))
        np.testing.assert_allclose(cutoff_map(np.array([[1.25]]), 1.0), [[(1 - s) * 1.25]], rtol=1e-14)

    @given(hnp.arrays(float, (5, 3), elements=st.floats(-20, 20)), st.floats(0.1, 10.0))
    def test_bounds(self, y, M):
        z = cutoff_map(y, M)
        r = np.linalg.norm(y, axis=-1)
        assert np.all(np.linalg.norm(z, axis=-1) <= M + 1 + 1e-12)
        assert np.array_equal(z[r <= M], y[r <= M])
        assert not np.any(z[r >= M + 1])

    def test_jacobian(self):
        y = np.array([[0.9, 0.7], [1.1, -0.6], [0.2, 0.1]])
        _, J = cutoff_map(y, 1.0, jacobian=True)
        h = 1e-6
        for l in range(2):
            e = np.zeros(2)
            e[l] = h
            fd = (cutoff_map(y + e, 1.0) - cutoff_map(y - e, 1.0)) / (2 * h)
            np.testing.assert_allclose(J[:, :, l], fd, atol=1e-8)

    def test_smooth_step_derivative(self):
        s = np.linspace(0.05, 0.95, 19)
        h = 1e-6
        fd = (smooth_step(s + h) - smooth_step(s - h)) / (2 * h)
        np.testing.assert_allclose(smooth_step(s, order=1), fd, rtol=1e-6, atol=1e-9)

    def test_force_agrees_inside_ball(self, ref_problem, ref_noise):
        F = transformed_force(ref_problem, ref_noise)
        FM = cutoff_force(F, 1.0)
        x, y = _probes(seed=9)
        y = np.clip(y, -1.0, 1.0)
        for j in (0, 20, 64):
            np.testing.assert_array_equal(FM(j, x, y), F(j, x, y))

    def test_force_without_noise(self):
        f = build_force("damping", PERIODIC, {"damping": 0.7})
        p = BurgersProblem(0.1, 1.0, PERIODIC, build_initial("zero", PERIODIC), f,
                           build_diffusion("zero", PERIODIC, 1))
        eta, _ = make_noise(p, steps=8)
        x, y = _probes()
        y = 30 * y
        np.testing.assert_array_equal(cutoff_force(transformed_force(p, eta), 0.5)(4, x, y), f(0.5, x, y))

    def test_growth_probe(self, ref_noise):
        p = reference_problem(0.1, 0.25)
        p = BurgersProblem(p.nu, p.T, p.domain, p.h, build_force("zero", PERIODIC), p.g)
        M = 1.0
        FM = cutoff_force(transformed_force(p, ref_noise), M)
        x = np.linspace(-1, 1, 33)[:, None]
        vals = []
        for sign in (1.0, -1.0):
            for R in (10 * (M + 1), 40 * (M + 1)):
                vals.append(FM(30, x, np.full_like(x, sign * R)))
        for v in vals[1:]:
            np.testing.assert_array_equal(v, vals[0])
        assert np.all(np.isfinite(vals[0]))

    def test_bad_level(self, ref_problem, ref_noise):
        with pytest.raises(ValueError):
            cutoff_map(np.zeros((1, 1)), 0.0)
        with pytest.raises(ValueError):
            cutoff_force(transformed_force(ref_problem, ref_noise), -1.0)

    def test_default_level(self, ref_problem, ref_noise):
        F = transformed_force(ref_problem, ref_noise)
        M = default_cutoff_level(ref_problem, F)
        grid = ref_noise.grid
        sup_h = np.max(np.abs(ref_problem.h(grid.points())))
        assert M >= 2 * sup_h


class TestProblem:
    def test_invariants(self):
        h, f, g = build_initial("zero", PERIODIC), build_force("zero", PERIODIC), build_diffusion("zero", PERIODIC, 1)
        with pytest.raises(ValueError):
            BurgersProblem(-0.1, 1.0, PERIODIC, h, f, g)
        with pytest.raises(ValueError):
            BurgersProblem(0.1, 0.0, PERIODIC, h, f, g)
        with pytest.raises(ValueError):
            BurgersProblem(0.1, 1.0, PERIODIC, h, f, g, beta=1.0)

    def test_growth_and_lipschitz(self, ref_problem):
        f, L = ref_problem.f, ref_problem.L
        rng = np.random.default_rng(1)
        x = rng.uniform(-1, 1, (200, 1))
        y, y2 = rng.normal(scale=5, size=(2, 200, 1))
        assert np.all(np.abs(f(0.1, x, y)) <= L * (1 + np.abs(y)) + 1e-12)
        assert np.all(np.abs(f(0.1, x, y) - f(0.1, x, y2)) <= L * np.abs(y - y2) + 1e-12)

    def test_initial_bounded(self, ref_problem):
        pts = np.linspace(-1, 1, 257)[:, None]
        for order in range(3):
            assert np.all(np.isfinite(ref_problem.h.derivative(pts, order)))
            assert np.max(np.abs(ref_problem.h.derivative(pts, order))) < 100


def _field(values, grid):
    return SpaceTimeField(grid, grid.times, values)


class TestSubstitution:
    def test_identity_without_noise(self):
        p = BurgersProblem(0.1, 1.0, PERIODIC, build_initial("zero", PERIODIC), build_force("zero", PERIODIC),
                           build_diffusion("zero", PERIODIC, 1))
        eta, _ = make_noise(p, nodes=16, steps=8)
        v = np.random.default_rng(0).normal(size=(9, 16, 1))
        assert np.array_equal(substitute(_field(v, eta.grid), eta).values, v)

    def test_y_equal_eta(self, ref_noise):
        assert not np.any(substitute(_field(ref_noise.values, ref_noise.grid), ref_noise).values)

    @given(st.integers(0, 10**6), st.floats(-12, 12))
    def test_round_trip_bit_identical(self, seed, logscale):
        p = reference_problem(0.1, 0.25, noise_amp=2.0)
        eta, _ = make_noise(p, nodes=16, steps=8, seed=seed % 97)
        rng = np.random.default_rng(seed)
        v = rng.normal(size=(9, 16, 1)) * 10.0**logscale
        y = _field(v, eta.grid)
        assert np.array_equal(reconstruct(substitute(y, eta), eta).values, v)

    def test_stale_roundoff_ignored(self, ref_noise):
        v = np.random.default_rng(2).normal(size=ref_noise.values.shape)
        yhat = substitute(_field(v, ref_noise.grid), ref_noise)
        yhat.values = yhat.values + 1.0
        np.testing.assert_allclose(reconstruct(yhat, ref_noise).values, v + 1.0, rtol=1e-14, atol=1e-14)

    def test_grid_mismatch(self, ref_noise):
        grid = GridSpec((-1.0,), (1.0,), (16,), ref_noise.grid.dt, ref_noise.grid.T)
        with pytest.raises(ValueError):
            substitute(_field(np.zeros((grid.steps + 1, 16, 1)), grid), ref_noise)


class TestTimeReverse:
    def _grid(self):
        return GridSpec((-1.0,), (1.0,), (8,), 0.125, 1.0)

    def test_constant_unchanged(self):
        g = self._grid()
        f = _field(np.full((9, 8, 1), 2.5), g)
        assert np.array_equal(time_reverse(f).values, f.values)

    @given(hnp.arrays(float, (9, 8, 1), elements=st.floats(-1e6, 1e6)))
    def test_involution(self, v):
        f = _field(v, self._grid())
        assert np.array_equal(time_reverse(time_reverse(f)).values, v)

    def test_linear_in_time(self):
        g = self._grid()
        a = -1.7
        f = _field(np.broadcast_to(a * g.times[:, None, None], (9, 8, 1)), g)
        expect = a * (g.T - g.times)
        np.testing.assert_allclose(time_reverse(f).values[:, 3, 0], expect, rtol=1e-15, atol=1e-15)

    def test_noise_and_force(self, ref_problem, ref_noise):
        eta_bar = time_reverse(ref_noise)
        np.testing.assert_array_equal(eta_bar.values, ref_noise.values[::-1])
        np.testing.assert_array_equal(time_reverse(eta_bar).values, ref_noise.values)
        F = transformed_force(ref_problem, ref_noise)
        Fb = time_reverse(F)
        x, y = _probes()
        Nt = ref_noise.grid.steps
        np.testing.assert_array_equal(Fb(5, x, y), F(Nt - 5, x, y))

    def test_rejects_other_objects(self):
        with pytest.raises(TypeError):
            time_reverse(3.0)
