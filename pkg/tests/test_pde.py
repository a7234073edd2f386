from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochburgers.grid import BlowUpError
from stochburgers.model import BurgersProblem, Domain
from stochburgers.noise import build_brownian, synthesize_noise_field, truncate_noise
from stochburgers.pde import CFLError, cole_hopf_oracle_1d, fd_solve_forward, periodic_shift_check
from stochburgers.presets import build_diffusion, build_force, build_initial, reference_problem

from conftest import PERIODIC, make_noise


def _problem(h, nu=0.1, T=0.5, domain=PERIODIC, f=None, g=None):
    return BurgersProblem(nu, T, domain, h, f or build_force("zero", domain), g or build_diffusion("zero", domain, 1))


def _sine_h(amp=-1.0):
    return build_initial("sine", PERIODIC, {"modes": [{"amp": amp, "omega": np.pi}]})


def test_zero_data(zero_data):
    h, f, g = zero_data
    p = BurgersProblem(0.1, 0.5, PERIODIC, h, f, g)
    eta, _ = make_noise(p, steps=32)
    out = fd_solve_forward(p, eta)
    assert not np.any(out.values)


def test_heat_kernel():
    dom = Domain((-4.0,), (4.0,), False)
    w, nu, T = 0.4, 0.1, 0.5
    h = build_initial("gaussian", dom, {"amp": 1.0, "center": [0.0], "width": w})
    p = _problem(h, nu, T, dom)
    grid = p.grid(129, 1 / 64)
    eta = synthesize_noise_field(p.g, build_brownian(0, 1, T, grid.steps), grid)
    out = fd_solve_forward(p, eta, advect=False)
    x = grid.points()[:, 0]
    s2 = w**2 + 2 * nu * grid.times[:, None]
    exact = w / np.sqrt(s2) * np.exp(-x[None] ** 2 / (2 * s2))
    rel = np.max(np.abs(out.values[..., 0] - exact)) / np.max(np.abs(exact))
    # implicit Euler plus central diffusion: error <= T nu (dt nu / 2 + hx^2 / 12) |h''''|, |h''''| = 3 / w^4
    scale = T * nu * (1 + nu) * 3 / w**4
    hx = grid.spacing[0]
    assert rel <= 2 * (hx**2 + grid.dt) * scale


class TestColeHopf:
    def test_zero_profile(self):
        h = build_initial("zero", PERIODIC)
        assert not np.any(cole_hopf_oracle_1d(0.1, h, 0.3, np.linspace(-1, 1, 9)))

    def test_constant_profile(self):
        h = build_initial("constant", PERIODIC, {"value": 0.7})
        np.testing.assert_allclose(cole_hopf_oracle_1d(0.05, h, 0.4, np.linspace(-1, 1, 9)), 0.7, atol=1e-10)

    def test_initial_time(self):
        x = np.linspace(-1, 1, 33)
        np.testing.assert_allclose(cole_hopf_oracle_1d(0.1 / np.pi, _sine_h(), 0.0, x), -np.sin(np.pi * x),
                                   atol=1e-8)

    def test_short_time_limit(self):
        # quadrature branch at tiny t must agree with the data
        x = np.linspace(-0.9, 0.9, 19)
        np.testing.assert_allclose(cole_hopf_oracle_1d(0.1 / np.pi, _sine_h(), 1e-8, x), -np.sin(np.pi * x),
                                   atol=1e-6)

    def test_odd_symmetry(self):
        x = np.linspace(0.05, 0.95, 10)
        a = cole_hopf_oracle_1d(0.1 / np.pi, _sine_h(), 0.5, x)
        b = cole_hopf_oracle_1d(0.1 / np.pi, _sine_h(), 0.5, -x)
        np.testing.assert_allclose(a, -b, atol=1e-9)

    def test_fd_agreement_coarse(self):
        nu = 0.1 / np.pi
        p = _problem(_sine_h(), nu, 0.5)
        errs = []
        for nodes, dt in ((64, 1 / 256), (128, 1 / 512)):
            grid = p.grid(nodes, dt)
            eta = synthesize_noise_field(p.g, build_brownian(0, 1, p.T, grid.steps), grid)
            out = fd_solve_forward(p, eta)
            exact = cole_hopf_oracle_1d(nu, p.h, p.T, grid.points()[:, 0])
            errs.append(np.max(np.abs(out.values[-1, :, 0] - exact)))
        assert errs[1] < errs[0]

    def test_needs_viscosity(self):
        with pytest.raises(ValueError):
            cole_hopf_oracle_1d(0.0, _sine_h(), 0.1, [0.0])


class TestShift:
    def test_zero_data(self, zero_data):
        p = BurgersProblem(0.1, 0.25, PERIODIC, *zero_data)
        eta, _ = make_noise(p)
        assert periodic_shift_check(p, eta, 5) == 0.0

    def test_full_period(self, ref_problem, ref_noise):
        assert periodic_shift_check(ref_problem, ref_noise, ref_noise.grid.nodes[0]) == 0.0

    def test_quarter_period(self, ref_problem, ref_noise):
        y = fd_solve_forward(ref_problem, ref_noise)
        d = periodic_shift_check(ref_problem, ref_noise, ref_noise.grid.nodes[0] // 4)
        assert d <= 10 * np.finfo(float).eps * y.sup_norm()

    def test_non_integer_shift(self, ref_problem, ref_noise):
        with pytest.raises(ValueError):
            periodic_shift_check(ref_problem, ref_noise, 1.5)

    def test_needs_periodic(self):
        dom = Domain((-1.0,), (1.0,), False)
        p = _problem(build_initial("zero", dom), domain=dom)
        eta, _ = make_noise(p)
        with pytest.raises(ValueError):
            periodic_shift_check(p, eta, 1)


@given(st.integers(1, 31), st.integers(0, 200))
def test_scheme_adaptedness(split, seed):
    p = reference_problem(0.1, 0.25)
    eta, _ = make_noise(p, nodes=16, steps=32, seed=seed)
    t = split * eta.grid.dt
    a = fd_solve_forward(p, eta).values
    b = fd_solve_forward(p, truncate_noise(eta, t)).values
    assert np.array_equal(a[: split + 1], b[: split + 1])


@pytest.mark.parametrize("nu", [0.02, 0.1])
@pytest.mark.parametrize("scheme", ["minmod", "upwind1"])
def test_maximum_principle(nu, scheme):
    h = build_initial("sine", PERIODIC, {"modes": [{"amp": 0.8, "omega": np.pi},
                                                   {"amp": 0.3, "omega": 3 * np.pi, "phase": 0.4}]})
    p = _problem(h, nu, 0.6)
    eta, _ = make_noise(p, nodes=128, steps=512)
    out = fd_solve_forward(p, eta, scheme=scheme)
    sup_h = np.max(np.abs(out.values[0]))
    assert np.max(np.abs(out.values)) <= sup_h + 1e-6


def test_cfl_refused():
    p = _problem(_sine_h(5.0), 0.1, 1.0)
    eta, _ = make_noise(p, nodes=64, steps=8)
    with pytest.raises(CFLError) as info:
        fd_solve_forward(p, eta)
    err = info.value
    assert err.cfl > 0.5
    assert err.required_dt == pytest.approx(0.5 * (2 / 64) / 5.0, rel=1e-9)


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_blow_up_reported():
    f = build_force("damping", PERIODIC, {"damping": -2000.0})
    p = _problem(_sine_h(0.5), 0.0, 4.0, f=f)
    eta, _ = make_noise(p, nodes=16, steps=256)
    with pytest.raises(BlowUpError) as info:
        fd_solve_forward(p, eta, advect=False)
    assert 0 < info.value.time <= 4.0


def test_grid_mismatch(ref_problem, ref_noise):
    with pytest.raises(ValueError):
        fd_solve_forward(ref_problem, ref_noise, ref_problem.grid(16, ref_noise.grid.dt))
    with pytest.raises(ValueError):
        fd_solve_forward(ref_problem, ref_noise, scheme="weno")


def test_stability_recorded(ref_problem, ref_noise):
    out = fd_solve_forward(ref_problem, ref_noise)
    assert 0 < out.meta["stability"]["max_cfl"] <= 0.5
