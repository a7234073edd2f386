from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochburgers.analysis import adaptedness_check, holder_exponent, rate_fit, sup_norm_ck
from stochburgers.grid import GridSpec, SpaceTimeField
from stochburgers.noise import build_brownian, couple_brownian, synthesize_noise_field
from stochburgers.pde import fd_solve_forward
from stochburgers.presets import build_diffusion, reference_problem

from conftest import PERIODIC


class TestHolder:
    def test_linear_series(self):
        est = holder_exponent(np.linspace(0.0, 3.0, 512))
        assert est.exponent == pytest.approx(1.0, abs=0.05)
        assert not est.degenerate

    def test_constant_is_degenerate(self):
        est = holder_exponent(np.full(256, 2.0))
        assert est.degenerate and est.exponent is None

    def test_brownian_paths(self):
        steps = 2**14
        hits = sum(0.4 <= holder_exponent(build_brownian(s, 1, 1.0, steps).values[:, 0]).exponent <= 0.55
                   for s in range(100))
        assert hits >= 95

    @given(st.floats(0.1, 50.0), st.floats(-10.0, 10.0), st.integers(0, 100))
    def test_affine_invariance(self, a, b, seed):
        s = build_brownian(seed, 1, 1.0, 256).values[:, 0]
        e0 = holder_exponent(s).exponent
        e1 = holder_exponent(a * s + b).exponent
        assert e1 == pytest.approx(e0, abs=1e-9)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            holder_exponent(np.arange(10.0), max_lag=1)
        with pytest.raises(ValueError):
            holder_exponent(np.arange(10.0), max_lag=32)


class TestSupNorm:
    def _grid(self, nodes=64):
        return GridSpec((-1.0,), (1.0,), (nodes,), 0.25, 1.0, True)

    def test_zero(self):
        g = self._grid()
        eta = synthesize_noise_field(build_diffusion("zero", PERIODIC, 1), build_brownian(0, 1, 1.0, 4), g)
        assert sup_norm_ck(eta, 4) == 0.0

    def test_constant(self):
        g = self._grid()
        v = np.full((5, 64, 1), -1.5)
        assert sup_norm_ck(SpaceTimeField(g, g.times, v), 0) == 1.5
        assert sup_norm_ck({0: v, 1: np.zeros_like(v)}, 1) == 1.5

    def test_sine_second_order(self):
        g = self._grid(128)
        x = g.points()[:, 0]
        chans = [np.sin(np.pi * x), np.pi * np.cos(np.pi * x), -np.pi**2 * np.sin(np.pi * x)]
        assert sup_norm_ck([c / np.pi**2 for c in chans], 2) == pytest.approx(1.0, abs=g.spacing[0] ** 2)

    @given(st.floats(0.01, 100.0), st.integers(0, 2))
    def test_scaling(self, c, k):
        rng = np.random.default_rng(k)
        chans = [rng.normal(size=20) for _ in range(3)]
        assert sup_norm_ck([c * a for a in chans], k) == pytest.approx(c * sup_norm_ck(chans, k), rel=1e-12)

    def test_monotone_in_k(self, sine_diffusion):
        eta = synthesize_noise_field(sine_diffusion, build_brownian(3, 1, 1.0, 4), self._grid())
        norms = [sup_norm_ck(eta, k) for k in range(5)]
        assert all(a <= b for a, b in zip(norms, norms[1:]))

    def test_missing_channel(self):
        g = self._grid()
        with pytest.raises(ValueError):
            sup_norm_ck(SpaceTimeField(g, g.times, np.zeros((5, 64, 1))), 1)
        with pytest.raises(ValueError):
            sup_norm_ck([np.zeros(3)], 5)


class TestAdaptedness:
    def _solver(self):
        p = reference_problem(0.1, 0.25)
        grid = p.grid(16, 1 / 32)

        def run(B):
            return fd_solve_forward(p, synthesize_noise_field(p.g, B, grid))

        return run

    def test_identical_paths(self):
        B = build_brownian(1, 1, 0.25, 8)
        rep = adaptedness_check(self._solver(), 0.25, B, B)
        assert rep.passed and rep.compared_times == 9

    def test_split_midway(self):
        a = build_brownian(1, 1, 0.25, 8)
        b = couple_brownian(a, 0.125, 7)
        rep = adaptedness_check(self._solver(), 0.125, a, b)
        assert rep.passed and rep.compared_times == 5

    def test_detects_anticipation(self):
        a = build_brownian(1, 1, 0.25, 8)
        b = couple_brownian(a, 0.125, 7)

        def peeking(B):
            v = np.broadcast_to(B.values[-1], (9, 16, 1)).copy()
            return SpaceTimeField(GridSpec((-1.0,), (1.0,), (16,), 1 / 32, 0.25, True), B.times, v)

        rep = adaptedness_check(peeking, 0.125, a, b)
        assert not rep.passed and rep.first_divergence == 0.0

    def test_uncoupled_rejected(self):
        with pytest.raises(ValueError):
            adaptedness_check(self._solver(), 0.125, build_brownian(1, 1, 0.25, 8), build_brownian(2, 1, 0.25, 8))


class TestRateFit:
    @pytest.mark.parametrize("p", [1.0, 0.5])
    def test_exact_power(self, p):
        s = np.array([0.1, 0.05, 0.025, 0.0125])
        fit = rate_fit(s, 3.0 * s**p)
        assert fit.exponent == pytest.approx(p, abs=1e-12)
        assert fit.r2 == pytest.approx(1.0)

    def test_noisy(self):
        rng = np.random.default_rng(0)
        s = np.logspace(-3, -1, 12)
        fit = rate_fit(s, s**0.5 * np.exp(0.05 * rng.normal(size=12)))
        assert fit.exponent == pytest.approx(0.5, abs=0.05)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            rate_fit([0.1, 0.2, 0.3], [1.0, 0.0, 1.0])
        with pytest.raises(ValueError):
            rate_fit([0.1, 0.2], [1.0, 2.0])
