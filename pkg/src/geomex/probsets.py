"""Quantile sets, isotropic probability sets and return sets from one model draw."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import SPHERE_AREA, DomainError, RadialFunction

__all__ = [
    "GeometricModelDraw",
    "ReturnSet",
    "DENSITY_FLOOR",
    "extrapolate_q",
    "scale_at",
    "isotropic_set",
    "q_lower",
    "return_set",
    "stability_shift",
    "draw_at_level",
]

DENSITY_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class GeometricModelDraw:
    """One joint posterior draw of the radial GP model at level q.

    ``r_g`` is the GP scale at level q; ``r_w`` holds the directional density
    values (so exp(log_values) integrates to one over the sphere).
    """

    q: float
    r_q: RadialFunction
    r_g: RadialFunction
    xi: float
    r_w: RadialFunction
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0 < self.q < 1:
            raise DomainError("q must lie in (0, 1)")
        if not self.xi > -1:
            raise DomainError("xi must exceed -1")

    @property
    def d(self) -> int:
        return self.r_q.d

    @property
    def grid(self):
        return self.r_q.grid

    def density_mass(self) -> float:
        return float(np.dot(self.grid.weights, self.r_w.values))

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "xi": self.xi,
            "r_q": self.r_q.log_values.tolist(),
            "r_g": self.r_g.log_values.tolist(),
            "r_w": self.r_w.log_values.tolist(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict, grid) -> "GeometricModelDraw":
        return cls(
            float(data["q"]),
            RadialFunction(grid, np.asarray(data["r_q"], float)),
            RadialFunction(grid, np.asarray(data["r_g"], float)),
            float(data["xi"]),
            RadialFunction(grid, np.asarray(data["r_w"], float)),
            dict(data.get("provenance", {})),
        )


def stability_shift(ratio, xi: float):
    """(ratio^xi - 1)/xi, with the log limit at xi = 0."""
    ratio = np.asarray(ratio, dtype=float)
    if abs(xi) < 1e-12:
        return np.log(ratio)
    return np.expm1(xi * np.log(ratio)) / xi


def scale_at(draw: GeometricModelDraw, q_target: float) -> RadialFunction:
    """GP scale of exceedances of the level-q_target quantile set."""
    if q_target < draw.q:
        raise DomainError(f"target level {q_target} is below the fitted level {draw.q}")
    ratio = (1.0 - draw.q) / (1.0 - q_target)
    return RadialFunction(draw.grid, draw.r_g.log_values + draw.xi * math.log(ratio))


def extrapolate_q(draw: GeometricModelDraw, q_target: float) -> RadialFunction:
    """Radial function of Q_{q_target} by the threshold-stability of the radial GP law."""
    if q_target < draw.q:
        raise DomainError(f"target level {q_target} is below the fitted level {draw.q}")
    if q_target >= 1:
        raise DomainError("target level must be below 1")
    ratio = (1.0 - draw.q) / (1.0 - q_target)
    shift = float(stability_shift(ratio, draw.xi))
    return RadialFunction(draw.grid, np.log(draw.r_q.values + shift * draw.r_g.values))


def draw_at_level(draw: GeometricModelDraw, q_target: float) -> GeometricModelDraw:
    """The same model re-expressed with threshold Q_{q_target} and its GP scale."""
    return GeometricModelDraw(
        q_target,
        extrapolate_q(draw, q_target),
        scale_at(draw, q_target),
        draw.xi,
        draw.r_w,
        dict(draw.provenance),
    )


def _relative_density(draw: GeometricModelDraw, reference: RadialFunction | None) -> tuple[np.ndarray, bool]:
    dens = draw.r_w.values
    floored = bool(np.any(dens < DENSITY_FLOOR))
    dens = np.maximum(dens, DENSITY_FLOOR)
    if reference is None:
        return dens * SPHERE_AREA[draw.d], floored
    return dens / np.maximum(reference.values, DENSITY_FLOOR), floored


def q_lower(draw: GeometricModelDraw, reference: RadialFunction | None = None, return_flag: bool = False):
    """Smallest level admitting an isotropic (reference-distributed) probability set."""
    rel, floored = _relative_density(draw, reference)
    val = float(min(max(1.0 - rel.min(), 0.0), np.nextafter(1.0, 0.0)))
    return (val, floored) if return_flag else val


def isotropic_set(draw: GeometricModelDraw, q: float, reference: RadialFunction | None = None) -> RadialFunction:
    """Probability-q set whose exceedance directions follow the reference law (uniform by default).

    Levels below draw.q use the same stability formulas; the result is only
    trustworthy where it stays outside the fitted quantile set.
    """
    ql = q_lower(draw, reference)
    if q <= ql:
        err = DomainError(f"q={q} does not exceed q_lower={ql:.6g}")
        err.q_lower = ql
        raise err
    rel, _ = _relative_density(draw, reference)
    ratio = (1.0 - draw.q) / (1.0 - q)
    r_qq = draw.r_q.values + float(stability_shift(ratio, draw.xi)) * draw.r_g.values
    r_gq = draw.r_g.values * ratio**draw.xi
    vals = r_qq + r_gq * stability_shift(rel, draw.xi)
    if np.any(vals <= 0):
        raise DomainError("isotropic set radial function is not positive at this level")
    return RadialFunction(draw.grid, np.log(vals))


@dataclass(frozen=True, eq=False)
class ReturnSet:
    """Boundary of the probability set whose complement is the return set."""

    boundary: RadialFunction
    period: float
    kind: str
    level: float


def return_set(draw: GeometricModelDraw, period: float, kind: str = "quantile", reference: RadialFunction | None = None) -> ReturnSet:
    if kind not in ("quantile", "isotropic"):
        raise DomainError("kind must be 'quantile' or 'isotropic'")
    if not period > 1:
        raise DomainError("return period must exceed 1")
    level = 1.0 - 1.0 / period
    if kind == "quantile":
        boundary = extrapolate_q(draw, level)
    else:
        ql = q_lower(draw, reference)
        if not period > 1.0 / (1.0 - ql):
            raise DomainError(f"isotropic return sets need T > {1.0 / (1.0 - ql):.6g}")
        boundary = isotropic_set(draw, level, reference)
    return ReturnSet(boundary, float(period), kind, level)
