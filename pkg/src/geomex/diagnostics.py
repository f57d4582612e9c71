"""Convergence diagnostics: transform exceedances to the unit ball and compare
second-order summaries with those of uniform patterns."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .geometry import BALL_VOLUME, SPHERE_AREA, DomainError, Sample, uniform_directions, seed_sequence
from .inference import simultaneous_band
from .probsets import GeometricModelDraw, stability_shift

__all__ = [
    "PointPattern",
    "EnvelopeResult",
    "ball_transform",
    "uniform_ball",
    "k_function",
    "theoretical_k",
    "envelope",
    "thin_to",
    "default_abscissae",
    "qq_pp_data",
    "order_statistic_band",
]

KINDS = ("ball", "sector")
_NORM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PointPattern:
    """Atoms in the closed unit ball; ``directions`` keeps the ray of each atom
    so that atoms mapped to the origin still have a direction."""

    d: int
    atoms: np.ndarray
    directions: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        atoms = np.asarray(self.atoms, float).reshape(-1, self.d)
        if len(atoms) and np.linalg.norm(atoms, axis=1).max() > 1.0 + _NORM_TOL:
            raise DomainError("every atom must lie in the closed unit ball")
        object.__setattr__(self, "atoms", atoms)
        if self.directions is None:
            r = np.linalg.norm(atoms, axis=1)
            dirs = np.zeros_like(atoms)
            pos = r > 0
            dirs[pos] = atoms[pos] / r[pos, None]
            dirs[~pos, 0] = 1.0
            object.__setattr__(self, "directions", dirs)
        else:
            object.__setattr__(self, "directions", np.asarray(self.directions, float).reshape(-1, self.d))

    @property
    def n(self) -> int:
        return len(self.atoms)

    def subset(self, idx) -> "PointPattern":
        return PointPattern(self.d, self.atoms[idx], self.directions[idx], dict(self.provenance))


def _h_cdf(z: np.ndarray, xi: float) -> np.ndarray:
    if abs(xi) < 1e-12:
        return -np.expm1(-z)
    base = np.maximum(1.0 + xi * z, 0.0)
    with np.errstate(divide="ignore"):
        return np.where(base > 0, -np.expm1(-np.log(base) / xi), 1.0)


def ball_transform(sample: Sample, draw: GeometricModelDraw) -> PointPattern:
    """Keep exceedances of the isotropic set Q*_q and map them into the unit ball."""
    d = draw.d
    rel = SPHERE_AREA[d] * draw.r_w.values
    r_qs = draw.r_q.values + draw.r_g.values * stability_shift(rel, draw.xi)
    if np.any(r_qs < 0):
        bad = np.flatnonzero(r_qs < 0)
        err = DomainError(f"isotropic threshold is negative in {len(bad)} grid directions")
        err.directions = draw.grid.nodes[bad]
        raise err
    w = sample.directions
    r = sample.radii
    rel_w = SPHERE_AREA[d] * draw.r_w(w)
    q_star = draw.r_q(w) + draw.r_g(w) * stability_shift(rel_w, draw.xi)
    g_star = draw.r_g(w) * rel_w**draw.xi
    keep = r > q_star
    z = (r[keep] - q_star[keep]) / g_star[keep]
    u = _h_cdf(z, draw.xi) ** (1.0 / d)
    return PointPattern(d, u[:, None] * w[keep], w[keep], {"draw": draw.provenance, "source": sample.meta.get("source")})


def uniform_ball(d: int, n: int, rng: np.random.Generator) -> PointPattern:
    """Uniform pattern: direction uniform on the sphere, radius U^{1/d}."""
    w = uniform_directions(d, n, rng)
    u = rng.uniform(size=n) ** (1.0 / d)
    return PointPattern(d, u[:, None] * w, w, {"source": "uniform"})


def default_abscissae(kind: str, n: int = 40) -> np.ndarray:
    if kind == "ball":
        return np.linspace(0.0, 1.2, n)
    if kind == "sector":
        return np.linspace(0.0, math.pi, n)
    raise DomainError(f"kind must be one of {KINDS}")


def _pair_stats(kind: str, pattern: PointPattern) -> np.ndarray:
    """Distances (ball) or angles (sector) of all unordered pairs."""
    iu = np.triu_indices(pattern.n, k=1)
    if kind == "ball":
        diff = pattern.atoms[:, None, :] - pattern.atoms[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=2))[iu]
    cos = np.clip(pattern.directions @ pattern.directions.T, -1.0, 1.0)
    return np.arccos(cos[iu])


def k_function(kind: str, pattern: PointPattern, rs) -> np.ndarray:
    """Empirical K_B (ball) or K_C (sector) at the abscissae rs."""
    if kind not in KINDS:
        raise DomainError(f"kind must be one of {KINDS}")
    rs = np.asarray(rs, float)
    if rs.size == 0:
        raise DomainError("abscissae must be nonempty")
    if pattern.n < 10:
        raise DomainError("K estimates need at least 10 atoms")
    s = np.sort(_pair_stats(kind, pattern))
    # each unordered pair counts twice among ordered pairs i != j
    counts = 2.0 * np.searchsorted(s, rs, side="right")
    return BALL_VOLUME[pattern.d] * counts / pattern.n**2


def _sector_fraction(d: int, r: np.ndarray) -> np.ndarray:
    r = np.clip(r, 0.0, math.pi)
    return r / math.pi if d == 2 else (1.0 - np.cos(r)) / 2.0


def theoretical_k(kind: str, d: int, rs, m_mc: int = 200_000, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """K under uniform intensity on the ball, with Monte-Carlo standard errors.

    The sector version has the closed form vol(B_1) times the fraction of the
    sphere within angle r, which is returned with zero error.
    """
    if kind not in KINDS:
        raise DomainError(f"kind must be one of {KINDS}")
    if d not in (2, 3):
        raise DomainError("d must be 2 or 3")
    rs = np.asarray(rs, float)
    vol = BALL_VOLUME[d]
    if kind == "sector":
        return vol * _sector_fraction(d, rs), np.zeros_like(rs)
    rng = np.random.default_rng(seed)
    u = uniform_ball(d, m_mc, rng).atoms
    v = uniform_ball(d, m_mc, rng).atoms
    dist = np.linalg.norm(u - v, axis=1)
    p = (dist[None, :] <= rs[:, None]).mean(axis=1)
    return vol * p, vol * np.sqrt(p * (1.0 - p) / m_mc)


@dataclass(frozen=True, eq=False)
class EnvelopeResult:
    kind: str
    r: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    rho: float
    m: int
    n_star: int
    containment: float

    def contains(self, curve) -> bool:
        curve = np.asarray(curve, float)
        return bool(np.all((curve >= self.lower) & (curve <= self.upper)))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "r": self.r.tolist(),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "alpha": self.alpha,
            "rho": self.rho,
            "m": self.m,
            "n_star": self.n_star,
            "containment": self.containment,
        }


def envelope(kind: str, n_star: int, m: int = 1000, alpha: float = 0.05, rs=None, seed=None, d: int = 2) -> EnvelopeResult:
    """(1 - alpha) envelope of K-hat for uniform patterns of size n_star.

    Pointwise (rho/2, 1 - rho/2) quantiles of m simulated curves, with rho
    set by bisection so a fraction 1 - alpha of the curves lies entirely inside.
    """
    if m < 200:
        raise DomainError("envelopes need m >= 200 replicates")
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    if n_star < 10:
        raise DomainError("n_star must be at least 10")
    rs = default_abscissae(kind) if rs is None else np.asarray(rs, float)
    seeds = seed_sequence(seed).spawn(m)
    curves = np.array([k_function(kind, uniform_ball(d, n_star, np.random.default_rng(s)), rs) for s in seeds])
    band = simultaneous_band(curves, alpha, min_draws=200)
    return EnvelopeResult(kind, rs, band.lower, band.upper, alpha, band.rho, m, n_star, band.coverage)


def thin_to(pattern: PointPattern, n_target: int, seed=None) -> PointPattern:
    """Uniformly random subpattern with exactly n_target atoms."""
    if n_target < 0 or n_target > pattern.n:
        raise DomainError(f"cannot thin {pattern.n} atoms to {n_target}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(pattern.n, size=n_target, replace=False))
    out = pattern.subset(idx)
    prov = dict(out.provenance, thinned_from=pattern.n)
    return PointPattern(out.d, out.atoms, out.directions, prov)


def order_statistic_band(n: int, alpha: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise (alpha/2, 1 - alpha/2) Beta(j, n + 1 - j) bands for uniform order statistics."""
    j = np.arange(1, n + 1)
    return stats.beta.ppf(alpha / 2.0, j, n + 1 - j), stats.beta.ppf(1.0 - alpha / 2.0, j, n + 1 - j)


def _spherical_coords(w: np.ndarray) -> list[np.ndarray]:
    if w.shape[1] == 2:
        return [np.mod(np.arctan2(w[:, 1], w[:, 0]), 2 * math.pi)]
    return [np.mod(np.arctan2(w[:, 1], w[:, 0]), 2 * math.pi), np.arccos(np.clip(w[:, 2], -1, 1))]


def _model_coord_cdf(draws: Sequence[GeometricModelDraw], obs: list[np.ndarray]) -> list[np.ndarray]:
    """Model CDF of each spherical coordinate at the observed values, averaged over draws."""
    grid = draws[0].grid
    dens = np.mean([dr.r_w.values for dr in draws], axis=0) * grid.weights
    dens = dens / dens.sum()
    node_coords = _spherical_coords(grid.nodes)
    out = []
    for nc, ob in zip(node_coords, obs):
        order = np.argsort(nc)
        cum = np.cumsum(dens[order])
        out.append(np.interp(ob, nc[order], cum, left=0.0, right=1.0))
    return out


def qq_pp_data(draws: Sequence[GeometricModelDraw], exceedances: Sample, n_s: int = 200, seed=None) -> dict:
    """PP/QQ tables for excesses and PP tables for the direction coordinates.

    For each exceedance the predictive CDF of its excess is estimated from
    n_s simulated excesses, each from a randomly chosen draw.
    """
    empty = {"pp": np.empty((0, 2)), "qq": np.empty((0, 2)), "directional": []}
    if exceedances.n == 0:
        return empty
    rng = np.random.default_rng(seed)
    w = exceedances.directions
    r = exceedances.radii
    n = exceedances.n
    pick = rng.integers(0, len(draws), size=(n, n_s))
    u = 1.0 - rng.uniform(size=(n, n_s))
    counts = np.zeros(n)
    logs = np.log(u)
    for k, dr in enumerate(draws):
        mask = pick == k
        if not mask.any():
            continue
        rows = np.nonzero(mask.any(axis=1))[0]
        rq = dr.r_q(w[rows])
        rg = dr.r_g(w[rows])
        e = -logs[rows] if abs(dr.xi) < 1e-12 else np.expm1(-dr.xi * logs[rows]) / dr.xi
        sim = rq[:, None] + rg[:, None] * e
        counts[rows] += np.sum((sim <= r[rows, None]) & mask[rows], axis=1)
    p = counts / n_s
    pp_x = np.arange(1, n + 1) / (n + 1.0)
    pp = np.column_stack([pp_x, np.sort(p)])
    clip = np.clip(pp, 0.0, 1.0 - 1.0 / (2.0 * n_s))
    qq = -np.log1p(-clip)
    coords = _spherical_coords(w)
    model = _model_coord_cdf(draws, coords)
    directional = [np.column_stack([pp_x, np.sort(m)]) for m in model]
    return {"pp": pp, "qq": qq, "directional": directional}
