from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geomex.geometry import (
    BALL_VOLUME,
    SPHERE_AREA,
    DomainError,
    RadialFunction,
    StarBody,
    default_grid,
    eval_radial,
    gauge_of,
    radial_combine,
    volume,
)

from conftest import ellipse_radial, unit


@pytest.mark.parametrize("d", [2, 3])
def test_grid_invariants(d):
    g = default_grid(d)
    assert np.allclose(np.linalg.norm(g.nodes, axis=1), 1.0, atol=1e-12)
    assert abs(g.weights.sum() - SPHERE_AREA[d]) < 1e-9
    assert len(np.unique(np.round(g.nodes, 12), axis=0)) == g.size
    assert g.size == (512 if d == 2 else 2048)


def test_constant_field_is_unit_ball():
    g = default_grid(2)
    rf = RadialFunction(g, np.zeros(g.size))
    assert eval_radial(rf, [0.6, 0.8]) == 1.0


def test_scaled_ball():
    g = default_grid(2)
    rf = RadialFunction(g, np.full(g.size, math.log(2.0)))
    assert eval_radial(rf, [0.0, 1.0]) == pytest.approx(2.0, abs=1e-15)


def test_ellipse_value_at_quarter_pi():
    g = default_grid(2)
    rf = ellipse_radial(g, 2.0, 1.0)
    # pi/4 is a node of the 512-angle grid, so the value is exact
    assert eval_radial(rf, unit([1.0, 1.0])) == pytest.approx(2.0 / math.sqrt(2.5), abs=1e-12)
    assert 2.0 / math.sqrt(2.5) == pytest.approx(1.26491, abs=1e-5)


def test_exact_at_nodes_both_dimensions():
    for d in (2, 3):
        g = default_grid(d)
        rng = np.random.default_rng(d)
        rf = RadialFunction(g, rng.normal(0, 0.3, g.size))
        np.testing.assert_allclose(rf(g.nodes), np.exp(rf.log_values), rtol=1e-12)


def test_non_unit_direction_rejected():
    rf = RadialFunction.constant(default_grid(2), 1.0)
    with pytest.raises(DomainError):
        eval_radial(rf, [2.0, 0.0])


def test_continuity_between_nodes():
    g = default_grid(2)
    rf = ellipse_radial(g, 3.0, 1.0)
    phi = np.linspace(0, 2 * np.pi, 20001)
    vals = rf(np.column_stack([np.cos(phi), np.sin(phi)]))
    assert np.max(np.abs(np.diff(vals))) < 1e-2
    assert np.all(vals > 0)


def test_d3_evaluation_positive_and_smooth(rng):
    g = default_grid(3)
    rf = RadialFunction.from_function(g, lambda w: 1.0 + 0.5 * w[:, 2] ** 2)
    w = unit(rng.normal(size=(500, 3)))
    exact = 1.0 + 0.5 * w[:, 2] ** 2
    np.testing.assert_allclose(rf(w), exact, atol=2e-3)


class TestCombine:
    g = default_grid(2)

    def test_add_balls(self):
        one = RadialFunction.constant(self.g, 1.0)
        np.testing.assert_allclose(radial_combine("add", one, one).values, 2.0, rtol=1e-15)

    def test_multiply(self):
        out = radial_combine("multiply", RadialFunction.constant(self.g, 2.0), RadialFunction.constant(self.g, 3.0))
        np.testing.assert_allclose(out.values, 6.0, rtol=1e-14)

    def test_power(self):
        out = radial_combine("power", RadialFunction.constant(self.g, 4.0), 0.5)
        np.testing.assert_allclose(out.values, 2.0, rtol=1e-14)

    def test_scale_equals_multiply_by_ball(self):
        a = ellipse_radial(self.g, 2.0, 1.0)
        np.testing.assert_allclose(
            radial_combine("scale", a, 3.0).values,
            radial_combine("multiply", a, RadialFunction.constant(self.g, 3.0)).values,
            rtol=1e-14,
        )

    def test_errors(self):
        a = RadialFunction.constant(self.g, 1.0)
        b = RadialFunction.constant(default_grid(2, 256), 1.0)
        with pytest.raises(DomainError):
            radial_combine("add", a, b)
        with pytest.raises(DomainError):
            radial_combine("scale", a, 0.0)
        with pytest.raises(DomainError):
            radial_combine("power", a, np.inf)

    def test_pointwise_identities_off_grid(self, rng):
        a = ellipse_radial(self.g, 2.0, 1.0)
        b = ellipse_radial(self.g, 1.0, 1.5)
        w = unit(rng.normal(size=(300, 2)))
        # multiply and power are linear in log scale, so exact everywhere
        np.testing.assert_allclose(radial_combine("multiply", a, b)(w), a(w) * b(w), rtol=1e-12)
        np.testing.assert_allclose(radial_combine("power", a, 1.7)(w), a(w) ** 1.7, rtol=1e-12)
        # add is exact at the nodes; between nodes log interpolation differs slightly
        np.testing.assert_allclose(radial_combine("add", a, b).values, a.values + b.values, rtol=1e-14)
        np.testing.assert_allclose(radial_combine("add", a, b)(w), a(w) + b(w), rtol=1e-4)


class TestVolume:
    def test_unit_disc(self):
        assert abs(volume(RadialFunction.constant(default_grid(2), 1.0)) - math.pi) < 1e-6

    def test_ball_radius_two_d3(self):
        assert abs(volume(RadialFunction.constant(default_grid(3), 2.0)) - 32 * math.pi / 3) < 1e-5

    def test_ellipse(self):
        assert abs(volume(ellipse_radial(default_grid(2), 2.0, 1.0)) - 2 * math.pi) < 1e-5

    @pytest.mark.parametrize("d", [2, 3])
    @pytest.mark.parametrize("c", [0.5, 1.0, 3.0])
    def test_scaled_balls(self, d, c):
        v = volume(RadialFunction.constant(default_grid(d), c))
        assert v == pytest.approx(c**d * BALL_VOLUME[d], rel=1e-9)

    def test_star_body_volume(self):
        sb = StarBody(ellipse_radial(default_grid(2), 2.0, 1.0))
        assert sb.volume == pytest.approx(2 * math.pi, abs=1e-5)
        assert sb.contains([1.9, 0.0]) and not sb.contains([0.0, 1.1])


class TestGauge:
    g = default_grid(2)

    def test_unit_ball(self):
        assert gauge_of(RadialFunction.constant(self.g, 1.0))([3.0, 4.0]) == pytest.approx(5.0, abs=1e-14)

    def test_on_boundary(self):
        assert gauge_of(RadialFunction.constant(self.g, 2.0))([2.0, 0.0]) == pytest.approx(1.0, abs=1e-15)

    def test_origin(self):
        with pytest.raises(DomainError):
            gauge_of(RadialFunction.constant(self.g, 1.0))([0.0, 0.0])

    @settings(max_examples=50, deadline=None)
    @given(
        t=st.floats(0.01, 100.0),
        x=st.tuples(st.floats(-10, 10), st.floats(-10, 10)).filter(lambda v: math.hypot(*v) > 1e-3),
    )
    def test_homogeneity(self, t, x):
        gfun = gauge_of(ellipse_radial(self.g, 2.0, 1.0))
        x = np.asarray(x)
        assert gfun(t * x) == pytest.approx(t * gfun(x), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), d=st.sampled_from([2, 3]))
def test_dual_brunn_minkowski(seed, d):
    g = default_grid(d)
    rng = np.random.default_rng(seed)
    a = RadialFunction(g, rng.normal(0, 0.4, g.size))
    b = RadialFunction(g, rng.normal(0, 0.4, g.size))
    total = volume(radial_combine("add", a, b)) ** (1 / d)
    assert total <= volume(a) ** (1 / d) + volume(b) ** (1 / d) + 1e-12


def test_serialization_round_trip():
    for d in (2, 3):
        g = default_grid(d)
        rf = RadialFunction(g, np.linspace(-0.2, 0.3, g.size))
        back = RadialFunction.from_dict(rf.to_dict())
        np.testing.assert_array_equal(back.log_values, rf.log_values)
        assert back.grid.same_as(g)

