"""Latent Gaussian fields on the sphere: basis, SPDE-type prior, mode finding.

Log radial functions are represented as ``psi(w) @ z`` for a partition-of-unity
basis ``psi``. Coefficients get a Gaussian smoothness prior whose precision is
the discrete Matern operator (alpha = 2) restricted to mean-zero fields, plus
a separate variance for the field mean. Posteriors are approximated by a
Gaussian at the penalized-likelihood mode.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import linalg
from scipy.optimize import minimize
from scipy.special import gammaln

from .geometry import DirectionGrid, DomainError, SphericalTriangulation

__all__ = [
    "ConvergenceError",
    "SphereBasis",
    "SmoothnessPrior",
    "GaussianPrior",
    "LatentFieldPosterior",
    "Band",
    "block_prior",
    "map_laplace_fit",
    "draw_field",
    "simultaneous_band",
    "hyper_candidates",
    "hyper_candidates_tau_kappa",
]


class ConvergenceError(RuntimeError):
    """Mode finding failed; carries the last iterate and its gradient norm."""

    def __init__(self, message: str, last: np.ndarray | None = None, grad_norm: float = float("nan")):
        super().__init__(f"{message} (gradient norm {grad_norm:.3g})")
        self.last = last
        self.grad_norm = grad_norm


def _cubic_bspline(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cardinal cubic B-spline on [-2, 2] and its derivative."""
    a = np.abs(u)
    val = np.where(a < 1, (4.0 - 6.0 * a**2 + 3.0 * a**3) / 6.0, np.where(a < 2, (2.0 - a) ** 3 / 6.0, 0.0))
    der = np.where(a < 1, (-12.0 * a + 9.0 * a**2) / 6.0, np.where(a < 2, -0.5 * (2.0 - a) ** 2, 0.0))
    return val, der * np.sign(u)


def _icosphere(level: int) -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    pts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(level):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = pts[i] + pts[j]
                pts.append(m / np.linalg.norm(m))
                cache[key] = len(pts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(pts), np.array(faces, dtype=np.intp)


class SphereBasis:
    """Partition-of-unity basis: periodic cubic B-splines (d=2) or hat functions (d=3)."""

    def __init__(self, d: int, k: int | None = None):
        if d not in (2, 3):
            raise DomainError("basis dimension must be 2 or 3")
        self.d = d
        if d == 2:
            k = 24 if k is None else int(k)
            if k < 8:
                raise DomainError("need at least 8 basis functions")
            self.k = k
        else:
            k = 162 if k is None else int(k)
            levels = {12: 0, 42: 1, 162: 2, 642: 3}
            if k not in levels:
                raise DomainError(f"d=3 basis size must be one of {sorted(levels)}")
            self.k = k
            nodes, faces = _icosphere(levels[k])
            self.mesh_nodes = nodes
            self._tri = SphericalTriangulation(nodes, faces)
        self._grid_cache: dict[int, np.ndarray] = {}

    def spec(self) -> dict:
        return {"d": self.d, "k": self.k}

    def evaluate(self, w: np.ndarray) -> np.ndarray:
        """Design matrix (m, K) at unit vectors w."""
        w = np.atleast_2d(np.asarray(w, dtype=float))
        if self.d == 2:
            phi = np.mod(np.arctan2(w[:, 1], w[:, 0]), 2.0 * np.pi)
            return self._bspline(phi)[0]
        idx, lam = self._tri.locate(w)
        out = np.zeros((len(w), self.k))
        rows = np.repeat(np.arange(len(w)), 3)
        np.add.at(out, (rows, idx.ravel()), lam.ravel())
        return out

    def _bspline(self, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = self.k
        h = 2.0 * np.pi / k
        u = phi[:, None] / h - np.arange(k)[None, :]
        u = np.mod(u + k / 2.0, k) - k / 2.0
        val, der = _cubic_bspline(u)
        return val, der / h

    def design_on(self, grid: DirectionGrid) -> np.ndarray:
        key = id(grid)
        if key not in self._grid_cache:
            self._grid_cache[key] = self.evaluate(grid.nodes)
        return self._grid_cache[key]

    @cached_property
    def fem_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Mass matrix C and stiffness matrix G."""
        k = self.k
        if self.d == 2:
            h = 2.0 * np.pi / k
            gx, gw = np.polynomial.legendre.leggauss(4)
            phi = (np.arange(k)[:, None] + (gx[None, :] + 1.0) / 2.0).ravel() * h
            wts = np.tile(gw * h / 2.0, k)
            val, der = self._bspline(phi)
            return (val * wts[:, None]).T @ val, (der * wts[:, None]).T @ der
        nodes, faces = self.mesh_nodes, self._tri.simplices
        c = np.zeros((k, k))
        g = np.zeros((k, k))
        local_mass = (np.ones((3, 3)) + np.eye(3)) / 12.0
        for tri in faces:
            p = nodes[tri]
            e = np.array([p[2] - p[1], p[0] - p[2], p[1] - p[0]])
            area = 0.5 * np.linalg.norm(np.cross(e[0], e[1]))
            c[np.ix_(tri, tri)] += area * local_mass
            g[np.ix_(tri, tri)] += (e @ e.T) / (4.0 * area)
        return c, g


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    """Quadratic penalty 0.5 (theta - mean)' precision (theta - mean)."""

    precision: np.ndarray
    mean: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.mean)

    def penalty(self, theta: np.ndarray) -> float:
        r = theta - self.mean
        return 0.5 * float(r @ self.precision @ r)

    def log_det(self) -> float:
        sign, val = np.linalg.slogdet(self.precision)
        if sign <= 0:
            raise DomainError("prior precision is not positive definite")
        return float(val)


@dataclass(frozen=True, eq=False)
class SmoothnessPrior:
    """tau (kappa^4 C + 2 kappa^2 G + G C~^{-1} G) on mean-zero fields, plus a prior on the field mean."""

    basis: SphereBasis
    tau: float
    kappa: float
    intercept_sd: float = 10.0
    intercept_mean: float = 0.0

    @classmethod
    def from_scale(cls, basis: SphereBasis, sigma: float, range_: float, **kwargs) -> "SmoothnessPrior":
        """Parameterize by marginal standard deviation and practical range (radians)."""
        tau, kappa = _scale_to_tau_kappa(basis.d, sigma, range_)
        return cls(basis, tau, kappa, **kwargs)

    @cached_property
    def mean_weights(self) -> np.ndarray:
        c, _ = self.basis.fem_matrices
        m = c.sum(axis=1)
        return m / m.sum()

    @cached_property
    def operator(self) -> np.ndarray:
        c, g = self.basis.fem_matrices
        lumped = c.sum(axis=1)
        k2 = self.kappa**2
        return k2 * k2 * c + 2.0 * k2 * g + g @ (g / lumped[:, None])

    @cached_property
    def spde_precision(self) -> np.ndarray:
        p = np.eye(self.basis.k) - np.outer(np.ones(self.basis.k), self.mean_weights)
        s = p.T @ self.operator @ p
        return self.tau * 0.5 * (s + s.T)

    @cached_property
    def precision(self) -> np.ndarray:
        m = self.mean_weights
        return self.spde_precision + np.outer(m, m) / self.intercept_sd**2

    @property
    def mean(self) -> np.ndarray:
        return np.full(self.basis.k, self.intercept_mean)

    def spde_penalty(self, z: np.ndarray) -> float:
        return 0.5 * float(z @ self.spde_precision @ z)

    def intercept_penalty(self, z: np.ndarray) -> float:
        return 0.5 * (float(self.mean_weights @ z) - self.intercept_mean) ** 2 / self.intercept_sd**2

    def as_gaussian(self) -> GaussianPrior:
        return GaussianPrior(self.precision, self.mean)

    def hyper(self) -> dict:
        return {"tau": self.tau, "kappa": self.kappa, "intercept_sd": self.intercept_sd}


def _scale_to_tau_kappa(d: int, sigma: float, range_: float) -> tuple[float, float]:
    # Matern smoothness nu = 2 - dim/2 on the (d-1)-dimensional sphere
    dim = d - 1
    nu = 2.0 - dim / 2.0
    kappa = math.sqrt(8.0 * nu) / range_
    log_tau = gammaln(nu) - gammaln(2.0) - (dim / 2.0) * math.log(4.0 * math.pi) - 2.0 * nu * math.log(kappa)
    return math.exp(log_tau) / sigma**2, kappa


def hyper_candidates(
    sigmas: Sequence[float] = (0.1, 0.2, 0.4, 0.8, 1.6),
    ranges: Sequence[float] = (0.35, 0.7, 1.4, 2.8, 5.6),
    prior_sigma: float = 0.4,
    prior_range: float = 1.4,
    prior_log_sd: float = 1.0,
) -> list[tuple[float, float, float]]:
    """(sigma, range, log hyperprior) triples for the coarse log-grid search.

    The hyperpriors are independent log-normals on sigma and range, which are
    log-linear reparameterizations of (tau, kappa).
    """
    out = []
    for s in sigmas:
        for r in ranges:
            lp = -0.5 * ((math.log(s / prior_sigma) / prior_log_sd) ** 2 + (math.log(r / prior_range) / prior_log_sd) ** 2)
            out.append((float(s), float(r), lp))
    return out


def _tau_kappa_to_scale(d: int, tau: float, kappa: float) -> tuple[float, float]:
    dim = d - 1
    nu = 2.0 - dim / 2.0
    tau_unit, _ = _scale_to_tau_kappa(d, 1.0, math.sqrt(8.0 * nu) / kappa)
    return math.sqrt(tau_unit / tau), math.sqrt(8.0 * nu) / kappa


def hyper_candidates_tau_kappa(
    d: int,
    taus: Sequence[float],
    kappas: Sequence[float],
    prior_sigma: float = 0.4,
    prior_range: float = 1.4,
    prior_log_sd: float = 1.0,
) -> list[tuple[float, float, float]]:
    """Same triples as hyper_candidates, for a grid given in the operator's own (tau, kappa)."""
    out = []
    for t in taus:
        for k in kappas:
            if not (t > 0 and k > 0):
                raise DomainError("tau and kappa must be positive")
            s, r = _tau_kappa_to_scale(d, t, k)
            lp = -0.5 * ((math.log(s / prior_sigma) / prior_log_sd) ** 2 + (math.log(r / prior_range) / prior_log_sd) ** 2)
            out.append((s, r, lp))
    return out


def block_prior(blocks: Sequence[GaussianPrior]) -> GaussianPrior:
    return GaussianPrior(linalg.block_diag(*[b.precision for b in blocks]), np.concatenate([b.mean for b in blocks]))


@dataclass(frozen=True, eq=False)
class LatentFieldPosterior:
    """Gaussian approximation N(mode, H^{-1}) with H = chol @ chol.T."""

    mode: np.ndarray
    chol: np.ndarray
    converged: bool
    objective: float
    log_evidence: float
    hyper: dict = field(default_factory=dict)
    n_iter: int = 0

    @property
    def dim(self) -> int:
        return len(self.mode)

    @property
    def covariance(self) -> np.ndarray:
        inv = linalg.solve_triangular(self.chol, np.eye(self.dim), lower=True)
        return inv.T @ inv

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.tolist(),
            "chol": self.chol.tolist(),
            "converged": self.converged,
            "objective": self.objective,
            "log_evidence": self.log_evidence,
            "hyper": self.hyper,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LatentFieldPosterior":
        return cls(
            np.asarray(data["mode"], float),
            np.asarray(data["chol"], float),
            bool(data["converged"]),
            float(data["objective"]),
            float(data["log_evidence"]),
            dict(data.get("hyper", {})),
            int(data.get("n_iter", 0)),
        )


Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


def _fd_hessian(grad_fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray) -> np.ndarray:
    n = len(x)
    h = np.empty((n, n))
    for i in range(n):
        step = 1e-5 * max(1.0, abs(x[i]))
        e = np.zeros(n)
        e[i] = step
        h[:, i] = (grad_fn(x + e) - grad_fn(x - e)) / (2.0 * step)
    return 0.5 * (h + h.T)


def _check_finite(value: float, grad: np.ndarray, theta: np.ndarray) -> None:
    if not (np.isfinite(value) and np.all(np.isfinite(grad))):
        raise ConvergenceError("objective returned a non-finite value", theta, float("nan"))


def map_laplace_fit(
    nll: Objective,
    prior: GaussianPrior,
    init,
    hess: Callable[[np.ndarray], np.ndarray] | None = None,
    max_iter: int = 200,
    grad_tol: float = 1e-6,
    hyper: dict | None = None,
) -> LatentFieldPosterior:
    """Minimize nll + prior penalty and return the Gaussian approximation at the mode.

    ``nll`` returns (value, gradient). With an analytic Hessian the search is a
    damped Newton iteration with backtracking; otherwise scipy's L-BFGS is used
    and the Hessian at the mode comes from central differences of the gradient.
    """
    theta = np.asarray(init, dtype=float).copy()
    if not np.all(np.isfinite(theta)):
        raise DomainError("initial point must be finite")
    p, mu = prior.precision, prior.mean

    def total(t: np.ndarray) -> tuple[float, np.ndarray]:
        v, g = nll(t)
        r = t - mu
        return float(v) + 0.5 * float(r @ p @ r), np.asarray(g, float) + p @ r

    value, grad = total(theta)
    _check_finite(value, grad, theta)

    def converged_at(v: float, g: np.ndarray) -> bool:
        return float(np.max(np.abs(g))) <= grad_tol * (1.0 + abs(v))

    n_iter = 0
    if hess is not None:
        damping = 0.0
        for n_iter in range(1, max_iter + 1):
            if converged_at(value, grad):
                break
            h = hess(theta) + p
            while True:
                try:
                    cf = linalg.cho_factor(h + damping * np.eye(len(theta)), lower=True)
                    break
                except linalg.LinAlgError:
                    damping = max(1e-8, 10.0 * damping)
            step = -linalg.cho_solve(cf, grad)
            t = 1.0
            slope = float(grad @ step)
            while True:
                cand = theta + t * step
                try:
                    cv, cg = total(cand)
                except FloatingPointError:
                    cv, cg = np.inf, grad
                if np.isfinite(cv) and np.all(np.isfinite(cg)) and cv <= value + 1e-4 * t * slope:
                    break
                t *= 0.5
                if t < 1e-12:
                    if converged_at(value, grad) or abs(slope) < 1e-14 * (1.0 + abs(value)):
                        break
                    raise ConvergenceError("line search failed", theta, float(np.max(np.abs(grad))))
            if t < 1e-12:
                break
            theta, value, grad = cand, cv, cg
            damping = damping / 10.0 if damping > 1e-8 else 0.0
        hmat = hess(theta) + p
    else:
        res = minimize(total, theta, jac=True, method="L-BFGS-B", options={"maxiter": max_iter * 10, "gtol": 1e-12, "ftol": 1e-15})
        theta = res.x
        value, grad = total(theta)
        n_iter = int(res.nit)
        _check_finite(value, grad, theta)
        hmat = _fd_hessian(lambda t: total(t)[1], theta)
    _check_finite(value, grad, theta)
    gnorm = float(np.max(np.abs(grad)))
    ok = converged_at(value, grad)
    if not ok and gnorm > 1e-3 * (1.0 + abs(value)):
        raise ConvergenceError(f"no convergence after {n_iter} iterations", theta, gnorm)
    hmat = 0.5 * (hmat + hmat.T)
    try:
        chol = linalg.cholesky(hmat, lower=True)
    except linalg.LinAlgError as exc:
        raise ConvergenceError("posterior precision is not positive definite", theta, gnorm) from exc
    log_det_h = 2.0 * float(np.sum(np.log(np.diag(chol))))
    try:
        log_evidence = -value + 0.5 * prior.log_det() - 0.5 * log_det_h
    except DomainError:
        log_evidence = float("nan")  # improper prior: evidence undefined
    return LatentFieldPosterior(theta, chol, ok, value, log_evidence, dict(hyper or {}), n_iter)


def draw_field(post: LatentFieldPosterior, n: int, seed) -> np.ndarray:
    """n draws (rows) from N(mode, H^{-1})."""
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((post.dim, n))
    return (post.mode[:, None] + linalg.solve_triangular(post.chol.T, eps, lower=False)).T


@dataclass(frozen=True, eq=False)
class Band:
    lower: np.ndarray
    upper: np.ndarray
    rho: float
    alpha: float
    coverage: float

    def contains(self, curves) -> np.ndarray:
        curves = np.atleast_2d(curves)
        return np.all((curves >= self.lower) & (curves <= self.upper), axis=1)


def _pointwise_quantiles(sorted_draws: np.ndarray, p: float) -> np.ndarray:
    m = len(sorted_draws)
    pos = p * (m - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, m - 1)
    frac = pos - lo
    return sorted_draws[lo] * (1.0 - frac) + sorted_draws[hi] * frac


def simultaneous_band(field_draws, alpha: float, min_draws: int = 200) -> Band:
    """Band from pointwise (rho/2, 1-rho/2) quantiles with rho chosen by bisection
    so that a fraction 1 - alpha of the draws lies entirely inside."""
    draws = np.atleast_2d(np.asarray(field_draws, dtype=float))
    if len(draws) < min_draws:
        raise DomainError(f"need at least {min_draws} draws, got {len(draws)}")
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    srt = np.sort(draws, axis=0)

    def band_at(rho: float) -> tuple[np.ndarray, np.ndarray, float]:
        lo = _pointwise_quantiles(srt, rho / 2.0)
        up = _pointwise_quantiles(srt, 1.0 - rho / 2.0)
        inside = np.all((draws >= lo) & (draws <= up), axis=1)
        return lo, up, float(inside.mean())

    target = 1.0 - alpha
    a, b = 0.0, alpha
    lo, up, cov = band_at(b)
    if cov >= target:
        return Band(lo, up, b, alpha, cov)
    for _ in range(60):
        mid = 0.5 * (a + b)
        if band_at(mid)[2] >= target:
            a = mid
        else:
            b = mid
    lo, up, cov = band_at(a)
    return Band(lo, up, a, alpha, cov)
