from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from geomex.diagnostics import (
    PointPattern,
    ball_transform,
    default_abscissae,
    envelope,
    k_function,
    order_statistic_band,
    qq_pp_data,
    theoretical_k,
    thin_to,
    uniform_ball,
)
from geomex.geometry import BALL_VOLUME, DomainError, RadialFunction, Sample, default_grid
from geomex.probsets import GeometricModelDraw, draw_at_level
from geomex.sampling import sample_rgp

from conftest import constant_draw, laplace_truth_draw


@pytest.fixture(scope="module")
def envelopes_200():
    return {kind: envelope(kind, 200, m=1000, alpha=0.05, seed=kind == "ball") for kind in ("ball", "sector")}


def test_threshold_atom_maps_to_origin():
    draw = constant_draw(2, 0.9, r_q=1.0, r_g=1.0)
    pat = ball_transform(Sample(np.array([[1.0 + 1e-15, 0.0], [0.0, 1.0 + math.log(2.0)]])), draw)
    assert np.linalg.norm(pat.atoms[0]) < 1e-7
    assert np.linalg.norm(pat.atoms[1]) == pytest.approx(math.sqrt(0.5), abs=1e-12)
    assert math.sqrt(0.5) == pytest.approx(0.70711, abs=1e-5)


def test_ball_transform_of_truth_is_uniform():
    draw = draw_at_level(laplace_truth_draw(q=0.8), 0.99)
    pts = sample_rgp(laplace_truth_draw(q=0.8), 40_000, seed=1)
    pat = ball_transform(pts, draw)
    # exceedances of the level-0.99 isotropic set: about 1/20 of the input
    assert 0.04 < pat.n / pts.n < 0.06
    r = np.linalg.norm(pat.atoms, axis=1)
    assert stats.kstest(r**2, "uniform").pvalue > 0.001
    phi = np.mod(np.arctan2(pat.directions[:, 1], pat.directions[:, 0]), 2 * math.pi)
    assert stats.kstest(phi / (2 * math.pi), "uniform").pvalue > 0.001


def test_ball_transform_negative_threshold_reports_directions():
    g = default_grid(2)
    dens = np.where(np.arange(g.size) < 8, 1e-8, 1.0)
    dens = dens / float(dens @ g.weights)
    draw = GeometricModelDraw(0.9, RadialFunction.constant(g, 1.0), RadialFunction.constant(g, 1.0), 0.0, RadialFunction(g, np.log(dens)))
    with pytest.raises(DomainError) as info:
        ball_transform(Sample(np.array([[3.0, 0.0]])), draw)
    assert len(info.value.directions) == 8


def test_pattern_validation():
    with pytest.raises(DomainError):
        PointPattern(2, np.array([[1.5, 0.0]]))
    pat = PointPattern(2, np.array([[0.0, 0.0], [0.5, 0.0]]))
    assert np.allclose(np.linalg.norm(pat.directions, axis=1), 1.0)


class TestK:
    def test_sector_full_aperture(self, rng):
        pat = uniform_ball(2, 10, rng)
        assert k_function("sector", pat, [math.pi])[0] == pytest.approx(0.9 * math.pi, abs=1e-12)
        assert 0.9 * math.pi == pytest.approx(2.82743, abs=1e-5)

    @pytest.mark.parametrize("d", [2, 3])
    def test_identities_every_pattern(self, d):
        for seed in range(20):
            pat = uniform_ball(d, 10 + 7 * seed, np.random.default_rng(seed))
            n = pat.n
            full = BALL_VOLUME[d] * (n - 1) / n
            assert k_function("sector", pat, [math.pi])[0] == pytest.approx(full, rel=1e-14)
            assert k_function("ball", pat, [2.0])[0] == pytest.approx(full, rel=1e-14)
            assert k_function("ball", pat, [0.0])[0] == 0.0

    def test_monotone(self, rng):
        pat = uniform_ball(3, 150, rng)
        for kind in ("ball", "sector"):
            vals = k_function(kind, pat, default_abscissae(kind, 200))
            assert np.all(np.diff(vals) >= 0)

    def test_errors(self, rng):
        with pytest.raises(DomainError):
            k_function("ball", uniform_ball(2, 20, rng), [])
        with pytest.raises(DomainError):
            k_function("ball", uniform_ball(2, 5, rng), [0.1])
        with pytest.raises(DomainError):
            k_function("cone", uniform_ball(2, 20, rng), [0.1])


class TestTheoretical:
    def test_endpoints(self):
        assert theoretical_k("ball", 2, [0.0], 1000, 0)[0][0] == 0.0
        for d in (2, 3):
            assert theoretical_k("sector", d, [math.pi])[0][0] == pytest.approx(BALL_VOLUME[d], rel=1e-14)

    def test_ball_half_against_brute_force(self):
        val, se = theoretical_k("ball", 2, [0.5], 200_000, 1)
        # independent oracle: rejection from the square, 10^7 pairs in chunks
        rng = np.random.default_rng(77)
        hits, total = 0, 0
        while total < 10_000_000:
            u = rng.uniform(-1, 1, size=(3_000_000, 4))
            ok = (u[:, 0] ** 2 + u[:, 1] ** 2 <= 1) & (u[:, 2] ** 2 + u[:, 3] ** 2 <= 1)
            u = u[ok][: 10_000_000 - total]
            hits += int(np.sum((u[:, 0] - u[:, 2]) ** 2 + (u[:, 1] - u[:, 3]) ** 2 <= 0.25))
            total += len(u)
        p = hits / total
        oracle, oracle_se = math.pi * p, math.pi * math.sqrt(p * (1 - p) / total)
        assert abs(val[0] - oracle) < 3 * math.hypot(se[0], oracle_se)

    def test_errors(self):
        with pytest.raises(DomainError):
            theoretical_k("cone", 2, [0.1])
        with pytest.raises(DomainError):
            theoretical_k("ball", 4, [0.1])


class TestEnvelope:
    def test_training_containment(self, envelopes_200):
        for env in envelopes_200.values():
            assert np.all(env.lower <= env.upper)
            assert abs(env.containment - 0.95) <= 1.0 / env.m + 1e-12 or env.containment >= 0.95

    def test_fresh_calibration(self, envelopes_200):
        for kind, env in envelopes_200.items():
            rng = np.random.default_rng(500 + len(kind))
            inside = [env.contains(k_function(kind, uniform_ball(2, 200, rng), env.r)) for _ in range(500)]
            assert 0.91 <= np.mean(inside) <= 0.99, kind

    def test_half_ball_breaches_sector_band(self, envelopes_200, rng):
        pat = uniform_ball(2, 200, rng)
        half = PointPattern(2, np.abs(pat.atoms[:, [0]]) * [1, 0] + pat.atoms * [0, 1])
        assert not envelopes_200["sector"].contains(k_function("sector", half, envelopes_200["sector"].r))

    def test_errors(self):
        with pytest.raises(DomainError):
            envelope("ball", 50, m=100)
        with pytest.raises(DomainError):
            envelope("ball", 50, m=300, alpha=1.0)

    def test_deterministic(self):
        a = envelope("sector", 30, m=200, seed=5)
        b = envelope("sector", 30, m=200, seed=5)
        np.testing.assert_array_equal(a.lower, b.lower)
        np.testing.assert_array_equal(a.upper, b.upper)


class TestThin:
    def test_sizes(self, rng):
        pat = uniform_ball(2, 50, rng)
        full = thin_to(pat, 50, seed=1)
        np.testing.assert_array_equal(full.atoms, pat.atoms)
        assert thin_to(pat, 0, seed=1).n == 0
        assert thin_to(pat, 20, seed=1).n == 20
        np.testing.assert_array_equal(thin_to(pat, 20, seed=1).atoms, thin_to(pat, 20, seed=1).atoms)
        with pytest.raises(DomainError):
            thin_to(pat, 51)

    def test_thinning_keeps_uniformity(self, envelopes_200):
        env = envelopes_200["ball"]
        rng = np.random.default_rng(8)
        inside = [env.contains(k_function("ball", thin_to(uniform_ball(2, 600, rng), 200, rng.integers(1 << 30)), env.r)) for _ in range(300)]
        assert 0.90 <= np.mean(inside) <= 0.99


def test_end_to_end_envelopes(envelopes_200):
    truth = laplace_truth_draw(q=0.8)
    level = draw_at_level(truth, 0.99)
    passes = 0
    for rep in range(50):
        pat = ball_transform(sample_rgp(truth, 8000, seed=1000 + rep), level)
        pat = thin_to(pat, 200, seed=rep)
        passes += all(env.contains(k_function(kind, pat, env.r)) for kind, env in envelopes_200.items())
    assert passes >= 45


class TestQQ:
    def test_well_specified_model(self):
        draw = constant_draw(2, 0.9, r_q=1.0, r_g=0.5)
        exc = sample_rgp(draw, 400, seed=3)
        tables = qq_pp_data([draw], exc, n_s=500, seed=4)
        lo, hi = order_statistic_band(exc.n)
        qq = tables["qq"]
        inside = (qq[:, 1] >= -np.log1p(-lo) - 0.02) & (qq[:, 1] <= -np.log1p(-hi) + 0.02)
        assert inside.mean() >= 0.9
        (dirpp,) = tables["directional"]
        assert np.max(np.abs(dirpp[:, 0] - dirpp[:, 1])) < 0.1

    def test_deterministic_and_empty(self):
        draw = constant_draw(3, 0.9)
        exc = sample_rgp(draw, 50, seed=1)
        a = qq_pp_data([draw], exc, 100, seed=2)
        b = qq_pp_data([draw], exc, 100, seed=2)
        np.testing.assert_array_equal(a["pp"], b["pp"])
        assert len(a["directional"]) == 2
        empty = qq_pp_data([draw], Sample(np.empty((0, 3))), 100, seed=2)
        assert empty["pp"].shape == (0, 2) and empty["qq"].shape == (0, 2)
