from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import optimize, stats

from geomex.geometry import DomainError, Sample
from geomex.margins import fit_margins
from geomex.probsets import GeometricModelDraw
from geomex.sampling import ResamplePlan, gp_excess, hybrid_resample, sample_complete, sample_directions, sample_rgp

from conftest import constant_draw, laplace_truth_draw


def _excess(draw, pts: Sample) -> np.ndarray:
    w = pts.directions
    return (pts.radii - draw.r_q(w)) / draw.r_g(w)


def test_unit_model_mean_excess():
    draw = constant_draw(2, 0.9)
    pts = sample_rgp(draw, 10_000, seed=0)
    assert 0.95 <= np.mean(pts.radii - 1.0) <= 1.05


def test_radii_exceed_quantile_set():
    draw = laplace_truth_draw(q=0.8)
    pts = sample_rgp(draw, 5000, seed=1)
    assert np.all(pts.radii > draw.r_q(pts.directions))


def test_memoryless():
    e = _excess(constant_draw(2, 0.9), sample_rgp(constant_draw(2, 0.9), 100_000, seed=2))
    p1 = np.mean(e > 1)
    p21 = np.mean(e > 2) / p1
    assert abs(p21 - p1) < 0.02


def test_gp_quantile_function():
    u = np.linspace(0.01, 0.99, 50)
    for xi in (-0.3, 0.0, 0.4):
        np.testing.assert_allclose(gp_excess(u, xi), stats.genpareto.isf(u, xi), rtol=1e-10)


@pytest.mark.parametrize("xi", [-0.2, 0.0, 0.3])
def test_excess_law_ks(xi):
    draw = laplace_truth_draw(q=0.8)
    draw = GeometricModelDraw(draw.q, draw.r_q, draw.r_g, xi, draw.r_w)
    passes = sum(
        stats.kstest(_excess(draw, sample_rgp(draw, 500, seed=s)), stats.genpareto(xi).cdf).pvalue > 0.01
        for s in range(40)
    )
    assert passes >= 38


def test_direction_law_matches_density():
    draw = laplace_truth_draw(rho=0.7, q=0.8)
    w = sample_directions(draw, 20_000, np.random.default_rng(4))
    g = draw.grid
    # CDF of the angle from the node density, trapezoid in angle
    cdf = np.concatenate([[0.0], np.cumsum(draw.r_w.values * g.weights)])
    edges = np.concatenate([g.angles - np.pi / g.size, [2 * np.pi - np.pi / g.size]])
    phi = np.mod(np.arctan2(w[:, 1], w[:, 0]) + np.pi / g.size, 2 * np.pi) - np.pi / g.size
    assert stats.kstest(phi, lambda x: np.interp(x, edges, cdf / cdf[-1])).pvalue > 0.001


def test_restricted_direction_sampler():
    draw = constant_draw(3, 0.9)
    w = sample_directions(draw, 1000, np.random.default_rng(0), accept=lambda v: v[:, 2] > 0.5)
    assert len(w) == 1000 and np.all(w[:, 2] > 0.5)


def test_deterministic_and_empty():
    draw = constant_draw(3, 0.8)
    np.testing.assert_array_equal(sample_rgp(draw, 100, 9).points, sample_rgp(draw, 100, 9).points)
    assert sample_rgp(draw, 0, 1).n == 0
    with pytest.raises(DomainError):
        sample_rgp(draw, -1, 1)


class TestComplete:
    def test_exponential_radial_law(self):
        draw = laplace_truth_draw(q=0.8)
        pts = sample_complete(draw, 20_000, seed=5)
        w = pts.directions
        outside = pts.radii > draw.r_q(w)
        assert abs(outside.mean() - 0.2) < 3 * math.sqrt(0.16 / pts.n)
        assert stats.kstest(pts.radii / draw.r_g(w), "expon").pvalue > 0.001
        np.testing.assert_array_equal(pts.meta["model_rows"], outside)

    def test_errors(self):
        with pytest.raises(DomainError):
            sample_complete(constant_draw(), 0, 1)


def _true_norm_quantile(draw, p: float) -> float:
    """Quantile of ||X|| under the radial exponential truth, by quadrature on the grid."""
    g = draw.grid
    f = draw.r_w.values * g.weights
    rg = draw.r_g.values
    return optimize.brentq(lambda r: float(f @ np.exp(-r / rg)) - (1 - p), 0.01, 100.0)


class TestHybrid:
    draw = laplace_truth_draw(q=0.9)

    def test_split_counts(self):
        src = sample_complete(self.draw, 1000, seed=0)
        out = hybrid_resample(src, self.draw, ResamplePlan(1000, 0.9, src), seed=1)
        origin = out.meta["model_rows"]
        assert out.n == 1000 and origin.sum() == 100
        inside = out.radii <= self.draw.r_q(out.directions)
        np.testing.assert_array_equal(inside, ~origin)

    def test_rounding_goes_to_model(self):
        src = sample_complete(self.draw, 500, seed=0)
        out = hybrid_resample(src, self.draw, ResamplePlan(2894, 0.9, src), seed=1)
        assert (~out.meta["model_rows"]).sum() == 2604 and out.meta["model_rows"].sum() == 290

    def test_deterministic(self):
        src = sample_complete(self.draw, 300, seed=0)
        plan = ResamplePlan(300, 0.9, src)
        np.testing.assert_array_equal(hybrid_resample(src, self.draw, plan, 4).points, hybrid_resample(src, self.draw, plan, 4).points)

    def test_original_margins(self):
        rng = np.random.default_rng(3)
        raw = rng.normal(size=(1000, 2)) * [1.0, 5.0] + [0.0, 10.0]
        ms = fit_margins(raw)
        lap = Sample(ms.to_laplace(raw))
        out = hybrid_resample(lap, self.draw, ResamplePlan(1000, 0.9, lap, "original", ms), seed=2)
        boot = out.points[~out.meta["model_rows"]]
        # bootstrap rows are original observations, mapped back up to rounding
        dist = np.min(np.linalg.norm(boot[:, None, :] - raw[None, :, :], axis=2), axis=1)
        assert dist.max() < 1e-6

    def test_plan_errors(self):
        src = sample_complete(self.draw, 100, seed=0)
        with pytest.raises(DomainError):
            ResamplePlan(0, 0.9, src)
        with pytest.raises(DomainError):
            ResamplePlan(10, 1.0, src)
        with pytest.raises(DomainError):
            ResamplePlan(10, 0.9, src, "weird")
        with pytest.raises(DomainError):
            ResamplePlan(10, 0.9, src, "original")
        with pytest.raises(DomainError):
            hybrid_resample(src, self.draw, ResamplePlan(10, 0.8, src), 1)
        far = sample_rgp(self.draw, 50, seed=3)
        with pytest.raises(DomainError):
            hybrid_resample(far, self.draw, ResamplePlan(10, 0.9, far), 1)

    def test_high_quantile_bracketing(self):
        truth = _true_norm_quantile(self.draw, 0.99)
        hits = 0
        for trial in range(20):
            src = sample_complete(self.draw, 1000, seed=100 + trial)
            plan = ResamplePlan(1000, 0.9, src)
            qs = [np.quantile(hybrid_resample(src, self.draw, plan, [trial, s]).radii, 0.99) for s in range(200)]
            lo, hi = np.quantile(qs, [0.025, 0.975])
            hits += lo <= truth <= hi
        assert hits >= 18
