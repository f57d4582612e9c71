"""Radial GP exceedance models with Poisson-transformed directional likelihoods.

Given exceedances of a quantile set Q, the excess radius over r_Q(w) is GP
with scale r_G(w) and a constant shape xi. Directions follow
f_W = r_L^d / (d vol L), where the star body L is B (M1), G (M2) or B.G (M3).
The normalizing volume is handled by the Poisson transform: a free intercept
beta replaces the log normalizing constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import DirectionGrid, DomainError, RadialFunction, Sample, SPHERE_AREA, default_grid
from .inference import (
    GaussianPrior,
    LatentFieldPosterior,
    SmoothnessPrior,
    SphereBasis,
    block_prior,
    draw_field,
    hyper_candidates,
    map_laplace_fit,
    simultaneous_band,
    _fd_hessian,
)
from .probsets import GeometricModelDraw

__all__ = [
    "VARIANTS",
    "ExceedanceModelSpec",
    "ExceedanceFit",
    "ExceedanceData",
    "neg_log_likelihood",
    "fit_exceedance",
    "dir_density",
    "homothety_check",
]

VARIANTS = ("M1", "M2", "M3")
XI_MODES = ("fixed_zero", "constant_free")
ANGLE_MODES = ("exceedances_only", "all_angles")
_MIN_EXCEEDANCES = 50
_XI_PRIOR_SD = 0.5
_BETA_PRIOR_SD = 10.0


@dataclass(frozen=True)
class ExceedanceModelSpec:
    variant: str = "M2"
    xi_mode: str = "fixed_zero"
    angles: str = "exceedances_only"
    basis_k: int | None = None

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise DomainError(f"variant must be one of {VARIANTS}")
        if self.xi_mode not in XI_MODES:
            raise DomainError(f"xi mode must be one of {XI_MODES}")
        if self.angles not in ANGLE_MODES:
            raise DomainError(f"angle inclusion must be one of {ANGLE_MODES}")

    @property
    def has_g_in_l(self) -> bool:
        return self.variant in ("M2", "M3")

    @property
    def has_b(self) -> bool:
        return self.variant in ("M1", "M3")


@dataclass(frozen=True)
class _Layout:
    k: int
    has_b: bool
    free_xi: bool

    @property
    def a(self) -> slice:
        return slice(0, self.k)

    @property
    def b(self) -> slice:
        return slice(self.k, 2 * self.k) if self.has_b else slice(0, 0)

    @property
    def beta(self) -> int:
        return 2 * self.k if self.has_b else self.k

    @property
    def xi(self) -> int | None:
        return self.beta + 1 if self.free_xi else None

    @property
    def size(self) -> int:
        return self.beta + 1 + int(self.free_xi)


@dataclass(frozen=True, eq=False)
class ExceedanceData:
    """Everything the likelihood needs, pre-evaluated on a basis."""

    d: int
    excess: np.ndarray  # r_i - r_Q(w_i) for exceedances
    design_exc: np.ndarray  # basis at exceedance directions
    design_ang: np.ndarray  # basis at the angle set S_w
    design_grid: np.ndarray  # basis at quadrature nodes
    grid_weights: np.ndarray

    @classmethod
    def build(cls, exceedances: Sample, angles: np.ndarray, r_q: RadialFunction, basis: SphereBasis, grid: DirectionGrid) -> "ExceedanceData":
        thresh = np.exp(r_q.log_eval(exceedances.directions))
        excess = exceedances.radii - thresh
        if np.any(excess < 0):
            raise DomainError("every exceedance must lie beyond the quantile set")
        return cls(
            exceedances.d,
            excess,
            basis.evaluate(exceedances.directions),
            basis.evaluate(angles),
            basis.design_on(grid),
            np.asarray(grid.weights),
        )


class _Likelihood:
    """Poisson-transformed negative log-likelihood with analytic derivatives."""

    def __init__(self, data: ExceedanceData, spec: ExceedanceModelSpec):
        self.data = data
        self.spec = spec
        k = data.design_grid.shape[1]
        self.layout = _Layout(k, spec.has_b, spec.xi_mode == "constant_free")
        lay = self.layout
        # linear maps from the parameter vector to log r_L on the grid / angle set
        sel = np.zeros((k, lay.size))
        if spec.has_g_in_l:
            sel[:, lay.a] += np.eye(k)
        if spec.has_b:
            sel[:, lay.b] += np.eye(k)
        self.l_grid = data.design_grid @ sel
        self.l_ang_sum = (data.design_ang @ sel).sum(axis=0)
        self.a_exc = np.zeros((len(data.excess), lay.size))
        self.a_exc[:, lay.a] = data.design_exc
        self.n_ang = data.design_ang.shape[0]

    def _poisson(self, theta: np.ndarray):
        d = self.data.d
        beta = theta[self.layout.beta]
        lg = self.l_grid @ theta
        u = self.n_ang * math.exp(beta) * self.data.grid_weights * np.exp(d * lg)
        total = float(u.sum())  # = |S_w| e^beta d vol(L)
        val = total - self.n_ang * beta - d * float(self.l_ang_sum @ theta)
        grad = d * (self.l_grid.T @ u) - d * self.l_ang_sum
        grad[self.layout.beta] += total - self.n_ang
        return val, grad, u, total

    def _radial(self, theta: np.ndarray):
        la = self.a_exc @ theta
        z = self.data.excess * np.exp(-la)
        xi = theta[self.layout.xi] if self.layout.free_xi else 0.0
        grad = np.zeros(self.layout.size)
        if abs(xi) < 1e-10 and not self.layout.free_xi:
            val = float(np.sum(la + z))
            grad += self.a_exc.T @ (1.0 - z)
            return val, grad
        arg = 1.0 + xi * z
        if np.any(arg <= 0) or xi <= -1:
            return math.inf, grad
        if abs(xi) < 1e-8:
            # second-order expansion around xi = 0 keeps the xi-derivative smooth
            val = float(np.sum(la + z - xi * (z * z / 2.0 - z)))
            dla = 1.0 - z + xi * (z * z - z)
            dxi = float(np.sum(z - z * z / 2.0))
        else:
            log_arg = np.log(arg)
            val = float(np.sum(la + (1.0 / xi + 1.0) * log_arg))
            dz = (1.0 / xi + 1.0) * xi / arg  # d/dz of (1/xi+1) log(1+xi z)
            dla = 1.0 - dz * z
            dxi = float(np.sum(-log_arg / xi**2 + (1.0 / xi + 1.0) * z / arg))
        grad += self.a_exc.T @ dla
        grad[self.layout.xi] += dxi
        return val, grad

    def __call__(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        pv, pg, _, _ = self._poisson(theta)
        rv, rg = self._radial(theta)
        return pv + rv, pg + rg

    def hessian(self, theta: np.ndarray) -> np.ndarray:
        d = self.data.d
        _, _, u, total = self._poisson(theta)
        lay = self.layout
        h = (self.l_grid * (d * d * u)[:, None]).T @ self.l_grid
        cross = d * (self.l_grid.T @ u)
        h[lay.beta, :] += cross
        h[:, lay.beta] += cross
        h[lay.beta, lay.beta] = total
        if lay.free_xi:
            return h + _fd_hessian(lambda t: self._radial(t)[1], theta)
        z = self.data.excess * np.exp(-(self.a_exc @ theta))
        h += (self.a_exc * z[:, None]).T @ self.a_exc
        return h


def neg_log_likelihood(params, exceedances: Sample, angles: np.ndarray, r_q: RadialFunction, spec: ExceedanceModelSpec | None = None, basis: SphereBasis | None = None, grid: DirectionGrid | None = None) -> float:
    """Evaluate the Poisson-transform negative log-likelihood at a parameter vector.

    Parameter layout: log r_G coefficients, log r_B coefficients (M1/M3),
    beta, then xi when it is free.
    """
    spec = spec or ExceedanceModelSpec()
    basis = basis or SphereBasis(exceedances.d, spec.basis_k)
    grid = grid or default_grid(exceedances.d)
    lik = _Likelihood(ExceedanceData.build(exceedances, angles, r_q, basis, grid), spec)
    return lik(np.asarray(params, float))[0]


@dataclass(frozen=True, eq=False)
class ExceedanceFit:
    spec: ExceedanceModelSpec
    posterior: LatentFieldPosterior
    basis: SphereBasis
    grid: DirectionGrid
    r_q: RadialFunction
    q: float
    n_exceedances: int
    n_angles: int
    provenance: dict = field(default_factory=dict)

    @property
    def layout(self) -> _Layout:
        return _Layout(self.basis.k, self.spec.has_b, self.spec.xi_mode == "constant_free")

    def fields(self, theta: np.ndarray) -> dict:
        """log r_G, log r_L and log r_B on the grid, plus xi and beta, at a parameter vector."""
        lay = self.layout
        design = self.basis.design_on(self.grid)
        log_g = design @ theta[lay.a]
        log_b = design @ theta[lay.b] if lay.has_b else np.zeros(self.grid.size)
        if self.spec.variant == "M1":
            log_l = log_b
        elif self.spec.variant == "M2":
            log_l = log_g
        else:
            log_l = log_g + log_b
        xi = float(theta[lay.xi]) if lay.free_xi else 0.0
        return {"log_g": log_g, "log_l": log_l, "log_b": log_b, "xi": xi, "beta": float(theta[lay.beta])}

    def draw_from(self, theta: np.ndarray, provenance: dict | None = None) -> GeometricModelDraw:
        if not 0 < self.q < 1:
            raise DomainError("this fit has no quantile level; pass q to fit_exceedance")
        f = self.fields(theta)
        d = self.grid.d
        log_dvol = math.log(float(np.dot(self.grid.weights, np.exp(d * f["log_l"]))))
        return GeometricModelDraw(
            self.q,
            self.r_q,
            RadialFunction(self.grid, f["log_g"]),
            max(f["xi"], -1.0 + 1e-9),
            RadialFunction(self.grid, d * f["log_l"] - log_dvol),
            dict(self.provenance, **(provenance or {})),
        )

    def mode_draw(self) -> GeometricModelDraw:
        return self.draw_from(self.posterior.mode, {"draw": "mode"})

    def draws(self, n: int, seed) -> list[GeometricModelDraw]:
        thetas = draw_field(self.posterior, n, seed)
        return [self.draw_from(t, {"draw": j}) for j, t in enumerate(thetas)]

    def to_dict(self) -> dict:
        return {
            "spec": vars(self.spec).copy(),
            "basis": self.basis.spec(),
            "grid_size": self.grid.size,
            "r_q": self.r_q.log_values.tolist(),
            "q": self.q,
            "n_exceedances": self.n_exceedances,
            "n_angles": self.n_angles,
            "posterior": self.posterior.to_dict(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExceedanceFit":
        basis = SphereBasis(**data["basis"])
        grid = default_grid(basis.d, int(data["grid_size"]))
        return cls(
            ExceedanceModelSpec(**data["spec"]),
            LatentFieldPosterior.from_dict(data["posterior"]),
            basis,
            grid,
            RadialFunction(grid, np.asarray(data["r_q"], float)),
            float(data["q"]),
            int(data["n_exceedances"]),
            int(data["n_angles"]),
            dict(data.get("provenance", {})),
        )


def _build_prior(layout: _Layout, basis: SphereBasis, hyper_g, hyper_b, log_g0: float) -> GaussianPrior:
    blocks = [SmoothnessPrior.from_scale(basis, *hyper_g, intercept_mean=log_g0).as_gaussian()]
    if layout.has_b:
        blocks.append(SmoothnessPrior.from_scale(basis, *hyper_b, intercept_sd=1.0).as_gaussian())
    blocks.append(GaussianPrior(np.array([[1.0 / _BETA_PRIOR_SD**2]]), np.zeros(1)))
    if layout.free_xi:
        blocks.append(GaussianPrior(np.array([[1.0 / _XI_PRIOR_SD**2]]), np.zeros(1)))
    return block_prior(blocks)


def fit_exceedance(
    exceedances: Sample,
    angles: np.ndarray | Sample | None,
    r_q: RadialFunction,
    spec: ExceedanceModelSpec | None = None,
    q: float | None = None,
    basis: SphereBasis | None = None,
    grid: DirectionGrid | None = None,
    hyper: dict | None = None,
    max_iter: int = 200,
    grad_tol: float = 1e-6,
    provenance: dict | None = None,
    hyper_grid=None,
) -> ExceedanceFit:
    """MAP fit plus Gaussian approximation over (log r_G, log r_B, beta, xi).

    ``angles`` is the direction set entering the directional likelihood: None
    means the exceedance directions. ``hyper`` maps ``"g"``/``"b"`` to
    (sigma, range) pairs; when absent they are picked on the coarse grid by
    Laplace-approximate evidence, one block at a time, over ``hyper_grid``
    (``inference.hyper_candidates()`` by default).
    """
    spec = spec or ExceedanceModelSpec()
    if exceedances.n < _MIN_EXCEEDANCES:
        raise DomainError(f"need at least {_MIN_EXCEEDANCES} exceedances, got {exceedances.n}")
    if angles is None:
        if spec.angles == "all_angles":
            raise DomainError("all_angles requires the full sample directions")
        angles = exceedances.directions
    elif isinstance(angles, Sample):
        angles = angles.directions
    angles = np.atleast_2d(np.asarray(angles, float))
    if np.ptp(angles, axis=0).max() < 1e-12:
        raise DomainError("degenerate angle support: all angles are equal")
    basis = basis or SphereBasis(exceedances.d, spec.basis_k)
    grid = grid or default_grid(exceedances.d)
    data = ExceedanceData.build(exceedances, angles, r_q, basis, grid)
    lik = _Likelihood(data, spec)
    lay = lik.layout
    d = exceedances.d

    log_g0 = math.log(max(float(data.excess.mean()), 1e-8))
    init = np.zeros(lay.size)
    init[lay.a] = log_g0
    log_l0 = log_g0 if spec.has_g_in_l else 0.0
    init[lay.beta] = -math.log(SPHERE_AREA[d]) - d * log_l0

    def fit_with(hg, hb, start) -> LatentFieldPosterior:
        prior = _build_prior(lay, basis, hg, hb, log_g0)
        info = {"g": list(hg), "b": list(hb) if lay.has_b else None}
        return map_laplace_fit(lik, prior, start, hess=lik.hessian, max_iter=max_iter, grad_tol=grad_tol, hyper=info)

    if hyper is None:
        hg, hb = (0.4, 1.4), (0.4, 1.4)
        post = fit_with(hg, hb, init)
        cands = hyper_grid or hyper_candidates()
        blocks = ("g", "b") if lay.has_b else ("g",)
        for block in blocks:
            best = None
            for sigma, rng_, log_hp in cands:
                trial_g = (sigma, rng_) if block == "g" else hg
                trial_b = (sigma, rng_) if block == "b" else hb
                cand = fit_with(trial_g, trial_b, post.mode)
                score = cand.log_evidence + log_hp
                if best is None or score > best[0]:
                    best = (score, trial_g, trial_b, cand)
            _, hg, hb, post = best
    else:
        hg = tuple(hyper["g"])
        hb = tuple(hyper.get("b") or (0.4, 1.4))
        post = fit_with(hg, hb, init)
    return ExceedanceFit(
        spec,
        post,
        basis,
        grid,
        r_q,
        float(q) if q is not None else (1.0 - exceedances.n / len(angles) if spec.angles == "all_angles" else float("nan")),
        exceedances.n,
        len(angles),
        dict(provenance or {}),
    )


def dir_density(draw: GeometricModelDraw, w) -> np.ndarray | float:
    """f_W(w) = r_L(w)^d / (d vol L), as stored on the draw."""
    return draw.r_w(w)


def homothety_check(fit: ExceedanceFit, alpha: float = 0.05, n_draws: int = 2000, seed=0) -> dict:
    """Simultaneous band for the centred log r_B field; 0 outside it anywhere is evidence against homothety."""
    if fit.spec.variant != "M3":
        raise DomainError("homothety check needs an M3 fit")
    lay = fit.layout
    design = fit.basis.design_on(fit.grid)
    weights = SmoothnessPrior(fit.basis, 1.0, 1.0).mean_weights
    coeffs = draw_field(fit.posterior, n_draws, seed)[:, lay.b]
    centred = coeffs @ design.T - (coeffs @ weights)[:, None]
    band = simultaneous_band(centred, alpha)
    outside = (band.lower > 0) | (band.upper < 0)
    verdict = "non-homothetic evidence" if np.any(outside) else "no evidence"
    return {"band": band, "verdict": verdict, "outside": outside}
