from __future__ import annotations

import math

import numpy as np
import pytest

from geomex.copulas import CopulaSpec, sample, true_gauge
from geomex.exceedance import ExceedanceModelSpec, fit_exceedance
from geomex.geometry import SPHERE_AREA, RadialFunction, default_grid, volume
from geomex.probsets import GeometricModelDraw
from geomex.quantreg import exceedance_split, fit_quantile_set


def constant_draw(d: int = 2, q: float = 0.9, r_q: float = 1.0, r_g: float = 1.0, xi: float = 0.0) -> GeometricModelDraw:
    """Radial GP model with constant location and scale and uniform directions."""
    g = default_grid(d)
    return GeometricModelDraw(
        q,
        RadialFunction.constant(g, r_q),
        RadialFunction.constant(g, r_g),
        xi,
        RadialFunction.constant(g, 1.0 / SPHERE_AREA[d]),
    )


def laplace_truth_draw(rho: float = 0.5, q: float = 0.8, d: int = 2) -> GeometricModelDraw:
    """Exact radial exponential model for the multivariate Laplace law at level q.

    R | W = w is exponential with scale r_G(w) = 1/g(w), so the q-quantile
    is log(1/(1-q)) r_G(w); W has density r_G^d / (d vol G).
    """
    g = default_grid(d)
    spec = CopulaSpec.laplace(rho, d=d)
    log_rg = -np.log(true_gauge(spec, g.nodes))
    r_g = RadialFunction(g, log_rg)
    vol = volume(r_g)
    return GeometricModelDraw(
        q,
        RadialFunction(g, log_rg + math.log(-math.log1p(-q))),
        r_g,
        0.0,
        RadialFunction(g, d * log_rg - math.log(d * vol)),
        {"truth": spec.family, "rho": rho},
    )


def ellipse_radial(grid, a: float, b: float) -> RadialFunction:
    phi = grid.angles
    return RadialFunction.from_values(grid, a * b / np.sqrt((b * np.cos(phi)) ** 2 + (a * np.sin(phi)) ** 2))


@pytest.fixture(scope="session")
def laplace_sample():
    return sample(CopulaSpec.laplace(0.5), 1000, 11)


@pytest.fixture(scope="session")
def laplace_qfit(laplace_sample):
    return fit_quantile_set(laplace_sample, 0.8)


@pytest.fixture(scope="session")
def laplace_m3(laplace_sample, laplace_qfit):
    rq = laplace_qfit.mean_radial()
    exc, _ = exceedance_split(laplace_sample, rq)
    return fit_exceedance(exc, laplace_sample.directions, rq, ExceedanceModelSpec("M3", angles="all_angles"), q=0.8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


PI = math.pi


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
