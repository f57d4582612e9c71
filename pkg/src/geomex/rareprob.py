"""Posterior probabilities of star-shaped rare-event regions and tail-dependence coefficients."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .geometry import DirectionGrid, DomainError, Sample, seed_sequence
from .margins import laplace_ppf
from .probsets import GeometricModelDraw
from .sampling import sample_directions

__all__ = [
    "StarRegion",
    "ProbEstimate",
    "region_from_box",
    "region_outside",
    "prob_given_draw",
    "prob_posterior",
    "chi_estimate",
    "extremal_coefficients",
]

_FINE_CIRCLE = 2**16
_FINE_SPHERE = 2**17
_MIN_NW = 100


@dataclass(frozen=True, eq=False)
class StarRegion:
    """Region {r w : w in S_B, r_inf(w) <= r <= r_sup(w)}.

    ``radii(w)`` returns (hit, r_inf, r_sup) for rows of unit vectors; r_sup
    may be +inf. ``proposal`` draws uniformly over a direction set known to
    contain S_B, or is None for the whole sphere.
    """

    d: int
    radii: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]
    label: str = ""
    proposal: Callable[[int, np.random.Generator], np.ndarray] | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def on_fine_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Hit mask and entry radii over the fine quadrature grid (computed once)."""
        if "fine" not in self._cache:
            hit, lo, _ = self.radii(_fine_grid(self.d).nodes)
            self._cache["fine"] = (hit, lo)
        return self._cache["fine"]

    def contains_direction(self, w) -> np.ndarray:
        return self.radii(np.atleast_2d(w))[0]

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        r = np.linalg.norm(x, axis=1)
        w = x / np.where(r > 0, r, 1.0)[:, None]
        hit, lo, hi = self.radii(w)
        return hit & (r >= lo) & (r <= hi) & (r > 0)


def _box_radii(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    w = np.atleast_2d(w)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = a / w
        t2 = b / w
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    # a zero component only allows the slab if it straddles 0
    flat = w == 0
    ok_flat = np.broadcast_to((a <= 0) & (b >= 0), w.shape)
    lo = np.where(flat, np.where(ok_flat, -np.inf, np.inf), lo)
    hi = np.where(flat, np.where(ok_flat, np.inf, -np.inf), hi)
    # inf/inf style corners produce nan; they only occur for infinite bounds along zero components
    lo = np.nan_to_num(lo, nan=-np.inf)
    hi = np.nan_to_num(hi, nan=np.inf)
    r_inf = np.maximum(lo.max(axis=1), 0.0)
    r_sup = hi.min(axis=1)
    hit = (r_sup >= r_inf) & (r_sup > 0)
    return hit, r_inf, r_sup


@lru_cache(maxsize=4)
def _fine_grid(d: int) -> DirectionGrid:
    return DirectionGrid.circle(_FINE_CIRCLE) if d == 2 else DirectionGrid.fibonacci(_FINE_SPHERE)


def _arc_proposal(angles: np.ndarray, step: float):
    """Uniform proposal over the smallest arc covering the given angles, padded by one step."""
    srt = np.sort(np.mod(angles, 2 * math.pi))
    gaps = np.diff(np.concatenate([srt, [srt[0] + 2 * math.pi]]))
    j = int(np.argmax(gaps))
    start = srt[(j + 1) % len(srt)] - step
    width = min(2 * math.pi - gaps[j] + 2 * step, 2 * math.pi)

    def propose(m: int, rng: np.random.Generator) -> np.ndarray:
        phi = start + width * rng.uniform(size=m)
        return np.column_stack([np.cos(phi), np.sin(phi)])

    return propose


def _cap_proposal(dirs: np.ndarray, pad: float):
    """Uniform proposal over a spherical cap around the mean hit direction."""
    centre = dirs.mean(axis=0)
    norm = np.linalg.norm(centre)
    if norm < 1e-8:
        return None
    centre = centre / norm
    half = float(np.arccos(np.clip(dirs @ centre, -1, 1)).max()) + pad
    if half >= math.pi:
        return None
    cos_h = math.cos(half)
    # orthonormal frame with centre as the third axis
    helper = np.array([1.0, 0.0, 0.0]) if abs(centre[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(centre, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(centre, e1)

    def propose(m: int, rng: np.random.Generator) -> np.ndarray:
        z = 1.0 - rng.uniform(size=m) * (1.0 - cos_h)
        phi = 2 * math.pi * rng.uniform(size=m)
        s = np.sqrt(np.maximum(1.0 - z * z, 0.0))
        return (s * np.cos(phi))[:, None] * e1 + (s * np.sin(phi))[:, None] * e2 + z[:, None] * centre

    return propose


def _with_proposal(d: int, radii, label: str) -> StarRegion:
    fine = _fine_grid(d)
    hit = radii(fine.nodes)[0]
    if not np.any(hit):
        return StarRegion(d, radii, label, None)
    if d == 2:
        propose = _arc_proposal(fine.angles[hit], 2 * math.pi / fine.size)
    else:
        propose = _cap_proposal(fine.nodes[hit], 3.0 * math.sqrt(4 * math.pi / fine.size))
    return StarRegion(d, radii, label, propose)


def region_from_box(a, b) -> StarRegion:
    """Star-region representation of the box {a <= x <= b}; bounds may be infinite."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape or a.ndim != 1 or len(a) not in (2, 3):
        raise DomainError("box corners must be vectors of equal length 2 or 3")
    if np.any(a >= b):
        raise DomainError("box needs a < b componentwise")
    if np.all((a <= 0) & (b >= 0)):
        raise DomainError("boxes containing the origin are not supported")
    label = "box[" + ",".join(f"{x:g}" for x in a) + ":" + ",".join(f"{x:g}" for x in b) + "]"
    return _with_proposal(len(a), lambda w: _box_radii(a, b, w), label)


def region_outside(boundary) -> StarRegion:
    """Complement of a star body given by its radial function."""
    def radii(w: np.ndarray):
        w = np.atleast_2d(w)
        return np.ones(len(w), bool), boundary(w), np.full(len(w), np.inf)

    return StarRegion(boundary.d, radii, "outside", None)


def _gp_cdf(z: np.ndarray, xi: float) -> np.ndarray:
    z = np.maximum(z, 0.0)
    if abs(xi) < 1e-12:
        return -np.expm1(-z)
    base = 1.0 + xi * z
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -np.expm1(-np.log(np.maximum(base, 0.0)) / xi)
    out = np.where(base <= 0, 1.0, out)
    return np.where(np.isinf(z), 1.0, out)


@dataclass(frozen=True)
class DrawProbability:
    value: float
    exceedance_part: float
    interior_part: float
    angular_prob: float
    empty: bool = False


_STENCILS: dict = {}


def _fine_log_values(rf) -> np.ndarray:
    """log rf at every fine-grid node, via a stencil cached per source grid."""
    fine = _fine_grid(rf.d)
    key = (id(rf.grid), rf.grid.size)
    if key not in _STENCILS:
        _STENCILS[key] = (rf.grid, *rf.grid.locate(fine.nodes))
    _, idx, wts = _STENCILS[key]
    return np.sum(rf.log_values[idx] * wts, axis=1)


def _angular_mass(draw: GeometricModelDraw, region: StarRegion) -> float:
    fine = _fine_grid(draw.d)
    hit, _ = region.on_fine_grid()
    dens = np.exp(_fine_log_values(draw.r_w))
    total = float(np.dot(fine.weights, dens))
    return float(np.dot(fine.weights[hit], dens[hit])) / total


def _interior_nonempty(draw: GeometricModelDraw, region: StarRegion) -> bool:
    hit, lo = region.on_fine_grid()
    if not np.any(hit):
        return False
    return bool(np.any(lo[hit] < np.exp(_fine_log_values(draw.r_q)[hit])))


def _interior_count(draw: GeometricModelDraw, region: StarRegion, sample: Sample) -> int:
    inside_b = region.contains(sample.points)
    inside_q = sample.radii <= draw.r_q(sample.directions)
    return int(np.sum(inside_b & inside_q))


def prob_given_draw(
    draw: GeometricModelDraw,
    region: StarRegion,
    n_w: int = 10_000,
    seed=None,
    interior_counts: tuple[int, int] | None = None,
    sample: Sample | None = None,
    detail: bool = False,
):
    """P[X in B | draw]: exceedance part by angular quadrature and MC over
    directions from f_W restricted to S_B, plus a Beta(1+k, 1+n-k) draw for
    the mass of B inside Q_q whenever that intersection is nonempty.

    The interior count (k, n) comes from ``interior_counts`` or is computed
    from ``sample`` with this draw's quantile set.
    """
    if n_w < _MIN_NW:
        raise DomainError(f"n_w must be at least {_MIN_NW}")
    if region.d != draw.d:
        raise DomainError("region and draw dimensions differ")
    rng = np.random.default_rng(seed)
    ang = _angular_mass(draw, region)
    if ang <= 0:
        res = DrawProbability(0.0, 0.0, 0.0, 0.0, empty=True)
        return res if detail else res.value
    w = sample_directions(draw, n_w, rng, propose=region.proposal, accept=region.contains_direction)
    _, r_inf, r_sup = region.radii(w)
    r_q = draw.r_q(w)
    r_g = draw.r_g(w)
    with np.errstate(over="ignore"):  # unbounded boxes exit at huge radii
        upper = _gp_cdf((np.maximum(r_sup, r_q) - r_q) / r_g, draw.xi)
        lower = _gp_cdf((np.maximum(r_inf, r_q) - r_q) / r_g, draw.xi)
    exc = (1.0 - draw.q) * ang * float(np.mean(upper - lower))
    interior = 0.0
    if _interior_nonempty(draw, region):
        if interior_counts is None and sample is not None:
            interior_counts = (_interior_count(draw, region, sample), sample.n)
        if interior_counts is None:
            raise DomainError("B meets the quantile set; pass interior_counts or the sample")
        k, n = interior_counts
        if not 0 <= k <= n:
            raise DomainError("interior counts need 0 <= k <= n")
        interior = float(rng.beta(1.0 + k, 1.0 + n - k))
    value = float(min(max(exc + interior, 0.0), 1.0))
    res = DrawProbability(value, exc, interior, ang)
    return res if detail else value


@dataclass(frozen=True, eq=False)
class ProbEstimate:
    per_draw: np.ndarray
    mean: float
    lower: float
    upper: float
    alpha: float
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "lower": self.lower,
            "upper": self.upper,
            "alpha": self.alpha,
            "n_draws": int(len(self.per_draw)),
            "settings": self.settings,
        }


def prob_posterior(
    draws: Sequence[GeometricModelDraw],
    region: StarRegion,
    n_w: int = 10_000,
    alpha: float = 0.05,
    seed=None,
    interior_counts: tuple[int, int] | None = None,
    sample: Sample | None = None,
    min_draws: int = 100,
) -> ProbEstimate:
    """Posterior mean and equal-tailed interval of P[X in B] over model draws."""
    if len(draws) < min_draws:
        raise DomainError(f"interval reporting needs at least {min_draws} draws")
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    seeds = seed_sequence(seed).spawn(len(draws))
    vals = np.array(
        [prob_given_draw(dr, region, n_w, s, interior_counts=interior_counts, sample=sample) for dr, s in zip(draws, seeds)]
    )
    lo, hi = np.quantile(vals, [alpha / 2.0, 1.0 - alpha / 2.0])
    settings = {"n_w": n_w, "seed": seed, "region": region.label}
    return ProbEstimate(vals, float(vals.mean()), float(lo), float(hi), alpha, settings)


def _orthant_region(d: int, coords: Sequence[int], level: float) -> StarRegion:
    a = np.full(d, -np.inf)
    b = np.full(d, np.inf)
    a[list(coords)] = level
    return region_from_box(a, b)


def chi_estimate(source, coords: Sequence[int], q, sample: Sample | None = None, n_w: int = 10_000, seed=None):
    """Coefficient of tail dependence chi_q(A) = P[F_j(X_j) > q, j in A] / (1 - q).

    ``source`` is a Sample (empirical, using ranks) or a sequence of model
    draws on Laplace margins (model-based, one value per draw). ``q`` may be
    a scalar or a sequence of levels.
    """
    coords = tuple(int(c) for c in coords)
    if len(coords) < 2 or len(set(coords)) != len(coords):
        raise DomainError("need at least two distinct coordinates")
    levels = np.atleast_1d(np.asarray(q, float))
    if np.any((levels <= 0.5) | (levels >= 1)):
        raise DomainError("q must lie in (0.5, 1)")
    if isinstance(source, Sample):
        x = source.points[:, coords]
        n = len(x)
        u = (np.argsort(np.argsort(x, axis=0), axis=0) + 1.0) / (n + 1.0)
        out = np.array([np.mean(np.all(u > lev, axis=1)) / (1.0 - lev) for lev in levels])
        return float(out[0]) if np.ndim(q) == 0 else out
    draws = list(source)
    d = draws[0].d
    seeds = seed_sequence(seed).spawn(len(levels))
    out = []
    for lev, s in zip(levels, seeds):
        region = _orthant_region(d, coords, float(laplace_ppf(lev)))
        ds = s.spawn(len(draws))
        vals = [prob_given_draw(dr, region, n_w, sd, sample=sample) for dr, sd in zip(draws, ds)]
        out.append(np.asarray(vals) / (1.0 - lev))
    out = np.array(out)
    return out[0] if np.ndim(q) == 0 else out


def extremal_coefficients(draw_or_rg, method: int = 1, pair: tuple[int, int] = (0, 1)) -> tuple[float, float]:
    """(alpha_{j|i}, eta) of the limit set for one draw (or a radial function of G).

    eta is the largest t with (t, ..., t) in G, i.e. max_w r_G(w) min_j w_j over
    the positive orthant. alpha is the largest x_j/x_i over points of G with
    x_i = 1. Method 2 first rescales G so its largest coordinate in every
    direction of the positive axes equals one, as the limit set of exponential
    tails must satisfy.
    """
    rg = draw_or_rg.r_g if isinstance(draw_or_rg, GeometricModelDraw) else draw_or_rg
    if method not in (1, 2):
        raise DomainError("method must be 1 or 2")
    fine = _fine_grid(rg.d)
    w = fine.nodes
    r = rg(w)
    pts = r[:, None] * w
    pos = np.all(w > 0, axis=1)
    if method == 2:
        scale = np.array([pts[pos, j].max() for j in range(rg.d)])
        pts = pts / scale
    i, j = pair
    eta = float(np.min(pts[pos], axis=1).max())
    # the ray through w crosses x_i = 1 at t = 1 / w_i when r(w) w_i >= 1. A
    # boundary that only touches x_i = 1 tangentially falls a rounding error
    # short on the grid, so a set that never reaches it uses its closest ray.
    level = min(1.0, float(pts[pos, i].max()))
    reach = pos & (pts[:, i] >= level * (1.0 - 1e-12))
    alpha = float(np.max(w[reach, j] / w[reach, i]))
    return alpha, eta

