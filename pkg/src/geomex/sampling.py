"""Simulation from a fitted radial GP model and hybrid bootstrap/model resampling."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import DomainError, Sample, uniform_directions, seed_sequence
from .margins import MarginSet
from .probsets import GeometricModelDraw

__all__ = ["ResamplePlan", "gp_excess", "sample_directions", "sample_rgp", "sample_complete", "hybrid_resample"]

_BATCH_FLOOR = 256


def gp_excess(u: np.ndarray, xi: float) -> np.ndarray:
    """Standard GP(xi) quantile at survival probability u, i.e. (u^-xi - 1)/xi."""
    log_u = np.log(u)
    if abs(xi) < 1e-12:
        return -log_u
    return np.expm1(-xi * log_u) / xi


def sample_directions(draw: GeometricModelDraw, n: int, rng: np.random.Generator, propose=None, accept=None) -> np.ndarray:
    """Directions from f_W by rejection.

    The interpolated density never exceeds its largest node value, so the
    grid maximum is a valid envelope. ``propose(m, rng)`` must draw uniformly
    over a direction region (the whole sphere by default); ``accept`` is an
    optional membership test restricting the target to a subset of it.
    """
    if propose is None:
        propose = lambda m, g: uniform_directions(draw.d, m, g)  # noqa: E731
    log_max = float(draw.r_w.log_values.max())
    out: list[np.ndarray] = []
    have = 0
    rate = 0.5
    while have < n:
        m = max(_BATCH_FLOOR, int(1.2 * (n - have) / rate))
        w = propose(m, rng)
        keep = np.log(rng.uniform(size=m)) <= draw.r_w.log_eval(w) - log_max
        if accept is not None:
            keep &= accept(w)
        rate = max(float(keep.mean()), 1e-3)
        out.append(w[keep])
        have += int(keep.sum())
    return np.concatenate(out)[:n]


def sample_rgp(draw: GeometricModelDraw, n: int, seed) -> Sample:
    """n points r_Q(w) w + E r_G(w) w with W ~ f_W and E standard GP(xi)."""
    if n < 0:
        raise DomainError("n must be nonnegative")
    rng = np.random.default_rng(seed)
    if n == 0:
        return Sample(np.empty((0, draw.d)), {"source": "rgp", "seed": seed})
    w = sample_directions(draw, n, rng)
    excess = gp_excess(1.0 - rng.uniform(size=n), draw.xi)
    radius = draw.r_q(w) + excess * draw.r_g(w)
    return Sample(radius[:, None] * w, {"source": "rgp", "seed": seed, "q": draw.q})


def sample_complete(draw: GeometricModelDraw, n: int, seed) -> Sample:
    """A full sample with exactly 1 - q of its mass outside Q_q in every direction.

    Exceedances are ``sample_rgp`` draws. Below the quantile set, R | W is
    exponential with scale r_G truncated to [0, r_Q], so when
    r_Q = r_G log(1/(1 - q)) and xi = 0 the whole radial law is exponential.
    """
    if n < 1:
        raise DomainError("n must be positive")
    ss = seed_sequence(seed)
    body_seed, tail_seed = ss.spawn(2)
    rng = np.random.default_rng(body_seed)
    n_body = int(rng.binomial(n, draw.q))
    w = sample_directions(draw, n_body, rng)
    rq, rg = draw.r_q(w), draw.r_g(w)
    # inverse CDF of Exp(scale rg) truncated at rq
    u = rng.uniform(size=n_body)
    radius = -rg * np.log1p(u * np.expm1(-rq / rg))
    tail = sample_rgp(draw, n - n_body, tail_seed).points
    points = np.vstack([radius[:, None] * w, tail])
    origin = np.concatenate([np.zeros(n_body, bool), np.ones(len(tail), bool)])
    return Sample(points, {"source": "complete", "model_rows": origin, "q": draw.q})


@dataclass(frozen=True, eq=False)
class ResamplePlan:
    """How many points to emit and at which split level.

    ``margins`` is "laplace" or "original"; the latter needs ``margin_set``.
    """

    n_total: int
    q: float
    source: Sample
    margins: str = "laplace"
    margin_set: MarginSet | None = None

    def __post_init__(self) -> None:
        if self.n_total < 1:
            raise DomainError("n_total must be at least 1")
        if not 0 < self.q < 1:
            raise DomainError("q must lie in (0, 1)")
        if self.margins not in ("laplace", "original"):
            raise DomainError("margins must be 'laplace' or 'original'")
        if self.margins == "original" and self.margin_set is None:
            raise DomainError("original margins need a fitted margin set")

    @property
    def n_bootstrap(self) -> int:
        return int(math.floor(self.n_total * self.q))


def hybrid_resample(sample: Sample, draw: GeometricModelDraw, plan: ResamplePlan, seed) -> Sample:
    """Bootstrap floor(n q) points from inside Q_q and simulate the rest from the model."""
    if abs(plan.q - draw.q) > 1e-12:
        raise DomainError(f"plan level {plan.q} does not match the draw level {draw.q}")
    inside = sample.radii <= draw.r_q(sample.directions)
    if not np.any(inside):
        raise DomainError("no observations lie inside the quantile set")
    ss = seed_sequence(seed)
    boot_seed, model_seed = ss.spawn(2)
    rng = np.random.default_rng(boot_seed)
    pool = sample.points[inside]
    n_boot = plan.n_bootstrap
    boot = pool[rng.integers(0, len(pool), size=n_boot)]
    model = sample_rgp(draw, plan.n_total - n_boot, model_seed).points
    points = np.vstack([boot, model])
    origin = np.concatenate([np.zeros(n_boot, bool), np.ones(len(model), bool)])
    if plan.margins == "original":
        points = plan.margin_set.from_laplace(points)
    return Sample(points, {"source": "hybrid", "model_rows": origin, "margins": plan.margins})
