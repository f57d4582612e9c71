"""Gamma quantile regression for the radial function of a quantile set.

Given directions W and radii R, R | W = w is modelled as Gamma with shape
``shape`` and a rate chosen so that exp(eta(w)) is exactly the q-quantile.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaincinv, gammaln

from .geometry import DirectionGrid, DomainError, RadialFunction, Sample, default_grid
from .inference import (
    LatentFieldPosterior,
    SmoothnessPrior,
    SphereBasis,
    draw_field,
    hyper_candidates,
    map_laplace_fit,
)

__all__ = [
    "QuantileSetFit",
    "fit_quantile_set",
    "posterior_quantile_sets",
    "exceedance_split",
]

_MIN_EXCEEDANCES = 20


@dataclass(frozen=True, eq=False)
class QuantileSetFit:
    q: float
    shape: float
    posterior: LatentFieldPosterior
    basis: SphereBasis
    grid: DirectionGrid

    def mean_radial(self) -> RadialFunction:
        """Quantile set at the posterior mode of the log field."""
        return RadialFunction(self.grid, self.basis.design_on(self.grid) @ self.posterior.mode)

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "shape": self.shape,
            "basis": self.basis.spec(),
            "grid_size": self.grid.size,
            "posterior": self.posterior.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuantileSetFit":
        basis = SphereBasis(**data["basis"])
        grid = default_grid(basis.d, int(data["grid_size"]))
        return cls(float(data["q"]), float(data["shape"]), LatentFieldPosterior.from_dict(data["posterior"]), basis, grid)


class _GammaQuantileObjective:
    def __init__(self, design: np.ndarray, radii: np.ndarray, q: float):
        self.design = design
        self.r = radii
        self.log_r = np.log(radii)
        self.q = q
        self.shape = 1.0

    def set_shape(self, shape: float) -> None:
        self.shape = shape
        self.log_c = math.log(gammaincinv(shape, self.q))

    def _rate_times_r(self, z: np.ndarray) -> np.ndarray:
        return np.exp(self.log_c - self.design @ z) * self.r

    def __call__(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        k = self.shape
        eta = self.design @ z
        log_rate = self.log_c - eta
        lr = np.exp(log_rate) * self.r
        val = np.sum(-k * log_rate + gammaln(k) - (k - 1.0) * self.log_r + lr)
        grad = self.design.T @ (k - lr)
        return float(val), grad

    def hessian(self, z: np.ndarray) -> np.ndarray:
        lr = self._rate_times_r(z)
        return (self.design * lr[:, None]).T @ self.design


def _moment_shape(radii: np.ndarray) -> float:
    m, v = radii.mean(), radii.var()
    return float(np.clip(m * m / v, 0.05, 200.0)) if v > 0 else 1.0


def fit_quantile_set(
    sample: Sample,
    q: float,
    basis: SphereBasis | None = None,
    prior: SmoothnessPrior | None = None,
    grid: DirectionGrid | None = None,
    hyper_grid=None,
    max_iter: int = 200,
    grad_tol: float = 1e-6,
) -> QuantileSetFit:
    """Penalized Gamma quantile regression; the Gamma shape is profiled out.

    Without an explicit prior, the smoothness hyperparameters are picked from
    a coarse grid by Laplace-approximate marginal likelihood.
    """
    if sample.n < 200:
        raise DomainError("quantile regression needs at least 200 observations")
    if not 0.5 <= q <= 0.999:
        raise DomainError("q must lie in [0.5, 0.999]")
    if sample.n * (1.0 - q) < _MIN_EXCEEDANCES:
        raise DomainError(f"q={q} leaves fewer than {_MIN_EXCEEDANCES} expected exceedances for n={sample.n}")
    basis = basis or SphereBasis(sample.d)
    grid = grid or default_grid(sample.d)
    radii = np.maximum(sample.radii, np.finfo(float).tiny)
    obj = _GammaQuantileObjective(basis.evaluate(sample.directions), radii, q)
    shape0 = _moment_shape(radii)
    obj.set_shape(shape0)
    z0 = np.full(basis.k, math.log(np.quantile(radii, q)))

    def fit_for(pr: SmoothnessPrior, init: np.ndarray) -> LatentFieldPosterior:
        return map_laplace_fit(obj, pr.as_gaussian(), init, hess=obj.hessian, max_iter=max_iter, grad_tol=grad_tol, hyper=pr.hyper())

    def profile_shape(pr: SmoothnessPrior, init: np.ndarray) -> tuple[float, LatentFieldPosterior]:
        state = {"z": init}

        def value(log_k: float) -> float:
            obj.set_shape(math.exp(log_k))
            post = fit_for(pr, state["z"])
            state["z"] = post.mode
            return post.objective

        res = minimize_scalar(value, bounds=(math.log(0.05), math.log(200.0)), method="bounded", options={"xatol": 1e-3})
        shape = math.exp(res.x)
        obj.set_shape(shape)
        return shape, fit_for(pr, state["z"])

    if prior is None:
        default = SmoothnessPrior.from_scale(basis, 0.4, 1.4, intercept_mean=float(z0[0]))
        shape, post = profile_shape(default, z0)
        best = None
        for sigma, rng_, log_hp in (hyper_grid or hyper_candidates()):
            pr = SmoothnessPrior.from_scale(basis, sigma, rng_, intercept_mean=float(z0[0]))
            cand = fit_for(pr, post.mode)
            score = cand.log_evidence + log_hp
            if best is None or score > best[0]:
                best = (score, pr)
        prior = best[1]
        shape, post = profile_shape(prior, post.mode)
    else:
        shape, post = profile_shape(prior, z0)
    if not post.converged:
        raise DomainError("quantile regression did not converge")
    return QuantileSetFit(q, shape, post, basis, grid)


def posterior_quantile_sets(fit: QuantileSetFit, m: int, seed) -> list[RadialFunction]:
    design = fit.basis.design_on(fit.grid)
    return [RadialFunction(fit.grid, design @ z) for z in draw_field(fit.posterior, m, seed)]


def exceedance_split(sample: Sample, r_q) -> tuple[Sample, Sample]:
    """Partition a sample into points with r > r_Q(w) and the rest.

    ``r_q`` is a RadialFunction or a nonnegative constant.
    """
    if isinstance(r_q, RadialFunction):
        if r_q.d != sample.d:
            raise DomainError("dimension mismatch between sample and radial function")
        thresh = np.exp(r_q.log_eval(sample.directions))
    else:
        thresh = np.full(sample.n, float(r_q))
    mask = sample.radii > thresh
    return sample.subset(mask), sample.subset(~mask)
