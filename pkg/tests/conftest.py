from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stochburgers.model import Domain
from stochburgers.noise import build_brownian, synthesize_noise_field
from stochburgers.presets import build_diffusion, build_force, build_initial, reference_problem

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")

PERIODIC = Domain((-1.0,), (1.0,), True)


def make_noise(problem, nodes=32, steps=64, seed=3):
    grid = problem.grid(nodes, problem.T / steps)
    B = build_brownian(seed, problem.d, problem.T, steps)
    return synthesize_noise_field(problem.g, B, grid), B


@pytest.fixture
def ref_problem():
    return reference_problem(nu=0.1, T=0.25)


@pytest.fixture
def ref_noise(ref_problem):
    return make_noise(ref_problem)[0]


@pytest.fixture
def sine_diffusion():
    return build_diffusion("sine", PERIODIC, 1, {"modes": [
        {"amp": 0.7, "omega": np.pi, "phase": 0.3},
        {"amp": 0.2, "omega": 2 * np.pi, "phase": 1.1},
    ]})


@pytest.fixture
def zero_data():
    return (build_initial("zero", PERIODIC), build_force("zero", PERIODIC),
            build_diffusion("zero", PERIODIC, 1))


_CRITERIA: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    _CRITERIA[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
