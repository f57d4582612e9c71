"""Semiparametric marginal models and the transform to standard Laplace margins.

Each coordinate gets an empirical mid-CDF in the bulk and generalized Pareto
tails below the lower and above the upper threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .geometry import DomainError, seed_sequence

__all__ = [
    "FitError",
    "GPTail",
    "MarginalTailModel",
    "MarginSet",
    "fit_gp",
    "fit_margin",
    "fit_margins",
    "to_laplace",
    "from_laplace",
    "laplace_cdf",
    "laplace_sf",
    "laplace_ppf",
    "laplace_from_log_probs",
]

MIN_TAIL_EXCESSES = 20
_XI_BOUND = 1.0 - 1e-6


class FitError(RuntimeError):
    """A model could not be fitted to the supplied data."""


def laplace_cdf(x):
    x = np.asarray(x, dtype=float)
    return np.where(x < 0, 0.5 * np.exp(np.minimum(x, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(x, 0.0)))


def laplace_sf(x):
    return laplace_cdf(-np.asarray(x, dtype=float))


def laplace_ppf(p):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(p < 0.5, np.log(2.0 * p), -np.log(2.0 * (1.0 - p)))


def laplace_from_log_probs(log_cdf, log_sf):
    """Laplace quantile from log F and log(1-F), accurate in both tails."""
    log_cdf = np.asarray(log_cdf, dtype=float)
    log_sf = np.asarray(log_sf, dtype=float)
    return np.where(log_cdf < log_sf, math.log(2.0) + log_cdf, -(math.log(2.0) + log_sf))


def _gp_log_sf(e, sigma: float, xi: float):
    """log P[excess > e] for GP(sigma, xi); -inf beyond the upper endpoint."""
    z = np.asarray(e, dtype=float) / sigma
    if abs(xi) < 1e-12:
        return -z
    arg = 1.0 + xi * z
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(arg > 0, -np.log(np.where(arg > 0, arg, 1.0)) / xi, -np.inf)


def _gp_isf(log_s, sigma: float, xi: float):
    """Excess e with log P[excess > e] = log_s."""
    log_s = np.asarray(log_s, dtype=float)
    if abs(xi) < 1e-12:
        return -sigma * log_s
    return sigma * np.expm1(-xi * log_s) / xi


def _gp_nll(params: np.ndarray, e: np.ndarray) -> float:
    log_sigma, xi = params
    sigma = math.exp(log_sigma)
    z = e / sigma
    if abs(xi) < 1e-10:
        return len(e) * log_sigma + float(z.sum())
    arg = 1.0 + xi * z
    if np.any(arg <= 0):
        # penalty grows with the violation so the line search can back off
        return 1e10 * (1.0 + float(np.sum(np.maximum(-arg, 0.0))))
    return len(e) * log_sigma + (1.0 + 1.0 / xi) * float(np.log(arg).sum())


def fit_gp(excesses) -> tuple[float, float]:
    """Maximum-likelihood GP (sigma, xi) with xi restricted to (-1, 1)."""
    e = np.asarray(excesses, dtype=float)
    if e.size == 0 or not np.all(np.isfinite(e)) or np.any(e < 0):
        raise FitError("GP fit needs finite nonnegative excesses")
    scale = float(e.mean())
    if not scale > 0:
        raise FitError("GP fit needs positive excesses")
    bounds = [(math.log(scale) - 10.0, math.log(scale) + 10.0), (-_XI_BOUND, _XI_BOUND)]
    best = None
    emax = float(e.max())
    for xi0 in (-0.5, 0.0, 0.3):
        sigma0 = max(scale * (1.0 - xi0), -xi0 * emax * 1.05)
        res = minimize(_gp_nll, np.array([math.log(sigma0), xi0]), args=(e,), method="L-BFGS-B", bounds=bounds)
        if best is None or res.fun < best.fun:
            best = res
    return math.exp(best.x[0]), float(best.x[1])


@dataclass(frozen=True)
class GPTail:
    """GP model for excesses beyond a threshold; side is 'lower' or 'upper'."""

    side: str
    threshold: float
    prob: float  # bulk CDF value at the threshold
    sigma: float
    xi: float
    n_excess: int


@dataclass(frozen=True, eq=False)
class MarginalTailModel:
    """Three-branch CDF: lower GP tail, interpolated empirical mid-CDF, upper GP tail."""

    knots: np.ndarray  # distinct sorted observations
    knot_probs: np.ndarray  # (# obs <= knot) / (n + 1)
    n: int
    p_lo: float
    p_hi: float
    lower: GPTail
    upper: GPTail
    replicates: tuple["MarginalTailModel", ...] = field(default=())

    @property
    def eps(self) -> float:
        return 1.0 / (4.0 * self.n)

    def bulk_cdf(self, o):
        return np.interp(o, self.knots, self.knot_probs)

    def log_cdf_sf(self, o) -> tuple[np.ndarray, np.ndarray]:
        """log F(o) and log(1 - F(o)) of the composite CDF, without clamping."""
        o = np.asarray(o, dtype=float)
        lo, up = self.lower, self.upper
        with np.errstate(divide="ignore"):
            log_cdf = np.log(self.bulk_cdf(o))
            log_sf = np.log1p(-self.bulk_cdf(o))
            below = o < lo.threshold
            if np.any(below):
                lc = math.log(lo.prob) + _gp_log_sf(lo.threshold - o[below], lo.sigma, lo.xi)
                log_cdf[below] = lc
                log_sf[below] = np.log1p(-np.exp(lc))
            above = o > up.threshold
            if np.any(above):
                ls = math.log1p(-up.prob) + _gp_log_sf(o[above] - up.threshold, up.sigma, up.xi)
                log_sf[above] = ls
                log_cdf[above] = np.log1p(-np.exp(ls))
        return log_cdf, log_sf

    def cdf(self, o):
        return np.exp(self.log_cdf_sf(o)[0])

    def to_dict(self, sketch: bool = False) -> dict:
        knots, probs = self.knots, self.knot_probs
        if sketch:
            grid = np.linspace(probs[0], probs[-1], 1001)
            knots = np.interp(grid, probs, knots)
            knots, idx = np.unique(knots, return_index=True)
            probs = grid[idx]
        return {
            "n": self.n,
            "p_lo": self.p_lo,
            "p_hi": self.p_hi,
            "knots": knots.tolist(),
            "knot_probs": probs.tolist(),
            "lower": vars(self.lower).copy(),
            "upper": vars(self.upper).copy(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MarginalTailModel":
        return cls(
            knots=np.asarray(data["knots"], dtype=float),
            knot_probs=np.asarray(data["knot_probs"], dtype=float),
            n=int(data["n"]),
            p_lo=float(data["p_lo"]),
            p_hi=float(data["p_hi"]),
            lower=GPTail(**data["lower"]),
            upper=GPTail(**data["upper"]),
        )


def _fit_single(values: np.ndarray, p_lo: float, p_hi: float) -> MarginalTailModel:
    n = len(values)
    srt = np.sort(values)
    knots, counts = np.unique(srt, return_counts=True)
    knot_probs = np.cumsum(counts) / (n + 1.0)
    u_lo = float(np.quantile(srt, p_lo))
    u_hi = float(np.quantile(srt, p_hi))
    if not u_lo < u_hi:
        raise FitError("degenerate margin: lower and upper thresholds coincide")
    lower_exc = u_lo - srt[srt < u_lo]
    upper_exc = srt[srt > u_hi] - u_hi
    for side, exc in (("lower", lower_exc), ("upper", upper_exc)):
        if len(exc) < MIN_TAIL_EXCESSES:
            raise FitError(f"{side} tail has {len(exc)} excesses, need at least {MIN_TAIL_EXCESSES}")
    tails = {}
    for side, exc, u in (("lower", lower_exc, u_lo), ("upper", upper_exc, u_hi)):
        sigma, xi = fit_gp(exc)
        prob = float(np.interp(u, knots, knot_probs))
        tails[side] = GPTail(side, u, prob, sigma, xi, int(len(exc)))
    return MarginalTailModel(knots, knot_probs, n, p_lo, p_hi, tails["lower"], tails["upper"])


def fit_margin(values, p_lo: float = 0.05, p_hi: float = 0.95, n_boot: int = 0, seed: int | None = None) -> MarginalTailModel:
    """Fit the composite marginal model; optional bootstrap replicates for uncertainty."""
    values = np.asarray(values, dtype=float).ravel()
    if len(values) < 50:
        raise DomainError("fit_margin needs at least 50 observations")
    if not 0 < p_lo < p_hi < 1:
        raise DomainError("need 0 < p_lo < p_hi < 1")
    model = _fit_single(values, p_lo, p_hi)
    if n_boot > 0:
        rng = np.random.default_rng(seed)
        reps = tuple(_fit_single(rng.choice(values, len(values)), p_lo, p_hi) for _ in range(n_boot))
        model = replace(model, replicates=reps)
    return model


def to_laplace(model: MarginalTailModel, o, return_flags: bool = False):
    """x = F_L^{-1}(F(o)), with F clamped to (eps, 1 - eps), eps = 1/(4n)."""
    arr = np.asarray(o, dtype=float)
    log_cdf, log_sf = model.log_cdf_sf(np.atleast_1d(arr))
    log_eps = math.log(model.eps)
    clamped = (log_cdf < log_eps) | (log_sf < log_eps)
    log_cdf_c = np.where(log_sf < log_eps, math.log1p(-model.eps), np.maximum(log_cdf, log_eps))
    log_sf_c = np.where(log_cdf < log_eps, math.log1p(-model.eps), np.maximum(log_sf, log_eps))
    x = laplace_from_log_probs(log_cdf_c, log_sf_c)
    if arr.ndim == 0:
        x, clamped = float(x[0]), bool(clamped[0])
    return (x, clamped) if return_flags else x


def from_laplace(model: MarginalTailModel, x):
    """Inverse of to_laplace: GP quantiles in the tails, interpolated order statistics in the bulk."""
    arr = np.asarray(x, dtype=float)
    xs = np.atleast_1d(arr)
    tiny = np.finfo(float).tiny
    # log F_L and log(1 - F_L), computed without cancellation
    log_cdf = np.where(xs < 0, xs - math.log(2.0), np.log1p(-0.5 * np.exp(-np.abs(xs))))
    log_sf = np.where(xs > 0, -xs - math.log(2.0), np.log1p(-0.5 * np.exp(-np.abs(xs))))
    log_cdf = np.maximum(log_cdf, math.log(tiny))
    log_sf = np.maximum(log_sf, math.log(tiny))
    lo, up = model.lower, model.upper
    out = np.interp(np.exp(log_cdf), model.knot_probs, model.knots)
    below = log_cdf < math.log(lo.prob)
    if np.any(below):
        out[below] = lo.threshold - _gp_isf(log_cdf[below] - math.log(lo.prob), lo.sigma, lo.xi)
    above = log_sf < math.log1p(-up.prob)
    if np.any(above):
        out[above] = up.threshold + _gp_isf(log_sf[above] - math.log1p(-up.prob), up.sigma, up.xi)
    return float(out[0]) if arr.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class MarginSet:
    """One marginal model per coordinate."""

    models: tuple[MarginalTailModel, ...]

    @property
    def d(self) -> int:
        return len(self.models)

    def to_laplace(self, data) -> np.ndarray:
        data = np.atleast_2d(np.asarray(data, dtype=float))
        return np.column_stack([to_laplace(m, data[:, j]) for j, m in enumerate(self.models)])

    def from_laplace(self, data) -> np.ndarray:
        data = np.atleast_2d(np.asarray(data, dtype=float))
        return np.column_stack([from_laplace(m, data[:, j]) for j, m in enumerate(self.models)])

    def to_dict(self, sketch: bool = False) -> dict:
        return {"coordinates": [m.to_dict(sketch) for m in self.models]}

    @classmethod
    def from_dict(cls, data: dict) -> "MarginSet":
        return cls(tuple(MarginalTailModel.from_dict(c) for c in data["coordinates"]))


def fit_margins(data, p_lo: float = 0.05, p_hi: float = 0.95, n_boot: int = 0, seed: int | None = None) -> MarginSet:
    data = np.atleast_2d(np.asarray(data, dtype=float))
    seeds = seed_sequence(seed).spawn(data.shape[1])
    models = []
    for j in range(data.shape[1]):
        try:
            child = int(seeds[j].generate_state(1)[0])
            models.append(fit_margin(data[:, j], p_lo, p_hi, n_boot, child))
        except FitError as exc:
            raise FitError(f"coordinate {j}: {exc}") from exc
    return MarginSet(tuple(models))
