"""Reference distributions with closed-form gauges and directional densities.

These serve as oracles for the inference code: each family can be sampled
(standard Laplace margins by default) and, where available, exposes its
limit-set gauge, its directional density in native margins and its
extremal coefficients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .geometry import DomainError, Sample, SPHERE_AREA
from .margins import laplace_from_log_probs

__all__ = [
    "FAMILIES",
    "CopulaSpec",
    "sample",
    "true_gauge",
    "true_dir_density",
    "true_coeffs",
    "positive_stable",
]

FAMILIES = (
    "gaussian_laplace",
    "laplace_mv",
    "student_t",
    "logistic_laplace",
    "inverted_logistic_laplace",
    "gaussian_mixture",
)
_ELLIPTICAL = ("gaussian_laplace", "laplace_mv", "student_t")
_LOGISTIC = ("logistic_laplace", "inverted_logistic_laplace")


def _equicorrelation(rho: float, d: int) -> np.ndarray:
    c = np.full((d, d), float(rho))
    np.fill_diagonal(c, 1.0)
    return c


@dataclass(frozen=True, eq=False)
class CopulaSpec:
    """A family name plus its parameters.

    ``corr`` is the unit-diagonal correlation matrix of the elliptical
    families; ``theta`` the logistic dependence parameter; ``nu`` the
    Student-t degrees of freedom; ``components`` (weight, mean, cov) triples
    for the Gaussian mixture.
    """

    family: str
    d: int = 2
    corr: np.ndarray | None = None
    theta: float | None = None
    nu: float | None = None
    components: tuple = field(default=())

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        if self.d not in (2, 3):
            raise DomainError("d must be 2 or 3")
        if self.family in _ELLIPTICAL:
            if self.corr is None:
                raise DomainError(f"{self.family} needs a correlation matrix")
            c = np.asarray(self.corr, dtype=float)
            if c.shape != (self.d, self.d) or not np.allclose(c, c.T) or not np.allclose(np.diag(c), 1.0):
                raise DomainError("correlation matrix must be symmetric with unit diagonal")
            if np.linalg.eigvalsh(c).min() <= 0:
                raise DomainError("correlation matrix must be positive definite")
            object.__setattr__(self, "corr", c)
        if self.family == "student_t" and not (self.nu is not None and self.nu > 0):
            raise DomainError("student_t needs nu > 0")
        if self.family in _LOGISTIC and not (self.theta is not None and 0 < self.theta < 1):
            raise DomainError("logistic families need theta in (0, 1)")
        if self.family == "gaussian_mixture":
            if not self.components:
                raise DomainError("gaussian_mixture needs components")
            weights = np.array([c[0] for c in self.components], dtype=float)
            if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
                raise DomainError("mixture weights must be nonnegative and sum to 1")

    @classmethod
    def gaussian(cls, rho: float, d: int = 2) -> "CopulaSpec":
        return cls("gaussian_laplace", d, corr=_equicorrelation(rho, d))

    @classmethod
    def laplace(cls, rho: float, d: int = 2) -> "CopulaSpec":
        return cls("laplace_mv", d, corr=_equicorrelation(rho, d))

    @classmethod
    def student(cls, rho: float, nu: float, d: int = 2) -> "CopulaSpec":
        return cls("student_t", d, corr=_equicorrelation(rho, d), nu=nu)

    @classmethod
    def logistic(cls, theta: float, d: int = 2) -> "CopulaSpec":
        return cls("logistic_laplace", d, theta=theta)

    @classmethod
    def inverted_logistic(cls, theta: float, d: int = 2) -> "CopulaSpec":
        return cls("inverted_logistic_laplace", d, theta=theta)

    @property
    def precision(self) -> np.ndarray:
        if self.corr is None:
            raise DomainError(f"{self.family} has no precision matrix")
        return np.linalg.inv(self.corr)

    @property
    def rho(self) -> float:
        if self.corr is None:
            raise DomainError(f"{self.family} has no correlation")
        return float(self.corr[0, 1])

    def describe(self) -> dict:
        out: dict = {"family": self.family, "d": self.d}
        if self.corr is not None:
            out["corr"] = self.corr.tolist()
        if self.theta is not None:
            out["theta"] = self.theta
        if self.nu is not None:
            out["nu"] = self.nu
        return out


def positive_stable(theta: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Positive stable variables with Laplace transform exp(-t^theta) (Kanter's representation)."""
    u = rng.uniform(0.0, math.pi, n)
    e = rng.exponential(size=n)
    a = np.sin(theta * u) / np.sin(u) ** (1.0 / theta)
    b = (np.sin((1.0 - theta) * u) / e) ** ((1.0 - theta) / theta)
    return a * b


def _laplace_from_logistic(frechet: np.ndarray) -> np.ndarray:
    # U = exp(-1/Z); log U and log(1 - U) are both available in closed form
    log_u = -1.0 / frechet
    return laplace_from_log_probs(log_u, np.log(-np.expm1(log_u)))


def sample(spec: CopulaSpec, n: int, seed: int, margins: str = "laplace") -> Sample:
    """Draw n observations; ``margins`` is 'laplace' or 'native'."""
    if n < 1:
        raise DomainError("n must be positive")
    if margins not in ("laplace", "native"):
        raise DomainError("margins must be 'laplace' or 'native'")
    rng = np.random.default_rng(seed)
    d, fam = spec.d, spec.family
    if fam in _ELLIPTICAL:
        z = rng.multivariate_normal(np.zeros(d), spec.corr, size=n, method="cholesky")
        if fam == "gaussian_laplace":
            x = z if margins == "native" else laplace_from_log_probs(stats.norm.logcdf(z), stats.norm.logsf(z))
        elif fam == "laplace_mv":
            # sqrt(2E) Z has standard Laplace margins, so native and Laplace coincide
            x = np.sqrt(2.0 * rng.exponential(size=(n, 1))) * z
        else:
            t = z / np.sqrt(rng.chisquare(spec.nu, size=(n, 1)) / spec.nu)
            x = t if margins == "native" else laplace_from_log_probs(stats.t.logcdf(t, spec.nu), stats.t.logsf(t, spec.nu))
    elif fam in _LOGISTIC:
        s = positive_stable(spec.theta, n, rng)
        frechet = (s[:, None] / rng.exponential(size=(n, d))) ** spec.theta
        if fam == "logistic_laplace":
            x = frechet if margins == "native" else _laplace_from_logistic(frechet)
        else:
            # survival reflection: U -> 1 - U; exponential margins are 1/Z
            x = 1.0 / frechet if margins == "native" else -_laplace_from_logistic(frechet)
    else:
        weights = np.array([c[0] for c in spec.components])
        labels = rng.choice(len(weights), size=n, p=weights)
        x = np.empty((n, d))
        for k, (_, mean, cov) in enumerate(spec.components):
            idx = np.flatnonzero(labels == k)
            x[idx] = rng.multivariate_normal(np.asarray(mean, float), np.asarray(cov, float), size=len(idx))
        if margins == "laplace":
            x = _mixture_to_laplace(spec, x)
    return Sample(x, {"family": fam, "seed": seed, "margins": margins})


def _mixture_to_laplace(spec: CopulaSpec, x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    for j in range(spec.d):
        log_terms_cdf, log_terms_sf = [], []
        for w, mean, cov in spec.components:
            sd = math.sqrt(float(np.asarray(cov, float)[j, j]))
            zj = (x[:, j] - float(np.asarray(mean, float)[j])) / sd
            log_terms_cdf.append(math.log(w) + stats.norm.logcdf(zj))
            log_terms_sf.append(math.log(w) + stats.norm.logsf(zj))
        out[:, j] = laplace_from_log_probs(
            np.logaddexp.reduce(log_terms_cdf, axis=0), np.logaddexp.reduce(log_terms_sf, axis=0)
        )
    return out


def _rows(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    return np.atleast_2d(arr), single


def _logistic_gauge(x: np.ndarray, theta: float) -> np.ndarray:
    d = x.shape[1]
    out = np.empty(len(x))
    for i, row in enumerate(x):
        pos, neg = row[row > 0], row[row < 0]
        if len(pos) == d:
            out[i] = pos.sum() / theta + (1.0 - d / theta) * pos.min()
        elif len(neg) == d:
            out[i] = np.sum((-neg) ** (1.0 / theta)) ** theta
        else:
            # zero coordinates are removable-limit points of this branch
            out[i] = pos.sum() / theta + np.sum((-neg) ** (1.0 / theta)) ** theta
    return out


def _inverted_logistic_gauge(x: np.ndarray, theta: float) -> np.ndarray:
    d = x.shape[1]
    out = np.empty(len(x))
    for i, row in enumerate(x):
        pos, neg = row[row > 0], row[row < 0]
        if len(pos) == d:
            out[i] = np.sum(pos ** (1.0 / theta)) ** theta
        elif len(neg) == d:
            out[i] = np.sum(-neg) / theta + (1.0 - d / theta) * np.abs(neg).min()
        else:
            out[i] = np.sum(pos ** (1.0 / theta)) ** theta + np.sum(-neg) / theta
    return out


def true_gauge(spec: CopulaSpec, x):
    """Gauge function of the limit set in standard Laplace margins."""
    arr, single = _rows(x)
    if np.any(np.all(arr == 0, axis=1)):
        raise DomainError("the gauge is undefined at the origin")
    fam = spec.family
    if fam == "gaussian_laplace":
        s = np.sign(arr) * np.sqrt(np.abs(arr))
        out = np.einsum("ij,jk,ik->i", s, spec.precision, s)
    elif fam == "laplace_mv":
        out = np.sqrt(np.einsum("ij,jk,ik->i", arr, spec.precision, arr))
    elif fam == "student_t":
        a = np.abs(arr)
        out = -a.sum(axis=1) / spec.nu + (1.0 + spec.d / spec.nu) * a.max(axis=1)
    elif fam == "logistic_laplace":
        out = _logistic_gauge(arr, spec.theta)
    elif fam == "inverted_logistic_laplace":
        out = _inverted_logistic_gauge(arr, spec.theta)
    else:
        raise DomainError(f"{fam} has no tabulated gauge")
    return float(out[0]) if single else out


def _set_partitions(items: tuple[int, ...]):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for k in range(len(rest) + 1):
        for others in combinations(rest, k):
            block = (first,) + others
            remaining = tuple(i for i in rest if i not in others)
            for tail in _set_partitions(remaining):
                yield [block] + tail


def _falling(theta: float, k: int) -> float:
    out = 1.0
    for ell in range(k):
        out *= theta - ell
    return out


def _partition_sum(w: np.ndarray, total: np.ndarray, inner, theta: float, sign_of_deriv: float) -> np.ndarray:
    """sum over partitions of (-1)^|pi| Gamma(|pi|) total^-|pi| prod_s D_s.

    D_s = theta_(|s|) total^{theta-|s|} prod_{j in s} (sign * inner_j) is the
    mixed partial of the power-sum exponent function ``total**theta``.
    """
    d = w.shape[1]
    out = np.zeros(len(w))
    for part in _set_partitions(tuple(range(d))):
        k = len(part)
        term = (-1.0) ** k * math.exp(gammaln(k)) * total ** (-theta * k)
        for block in part:
            m = len(block)
            term = term * _falling(theta, m) * total ** (theta - m)
            for j in block:
                term = term * sign_of_deriv * inner[:, j]
        out += term
    return out


def true_dir_density(spec: CopulaSpec, w):
    """Density of X/|X| on S^{d-1} in the family's native margins."""
    arr, single = _rows(w)
    d, fam = spec.d, spec.family
    if fam in _ELLIPTICAL:
        q = spec.precision
        quad = np.einsum("ij,jk,ik->i", arr, q, arr)
        const = math.exp(gammaln(d / 2.0)) / (2.0 * math.pi ** (d / 2.0)) * math.sqrt(np.linalg.det(q))
        out = const * quad ** (-d / 2.0)
    elif fam in _LOGISTIC:
        theta = spec.theta
        out = np.zeros(len(arr))
        inside = np.all(arr > 0, axis=1)
        wp = arr[inside]
        if fam == "logistic_laplace":
            # Frechet margins: V(z) = (sum z^{-1/theta})^theta
            total = np.sum(wp ** (-1.0 / theta), axis=1)
            inner = wp ** (-1.0 / theta - 1.0) / theta
            out[inside] = _partition_sum(wp, total, inner, theta, -1.0)
        else:
            # exponential margins: l(x) = (sum x^{1/theta})^theta
            total = np.sum(wp ** (1.0 / theta), axis=1)
            inner = wp ** (1.0 / theta - 1.0) / theta
            out[inside] = (-1.0) ** d * _partition_sum(wp, total, inner, theta, 1.0)
    else:
        raise DomainError(f"{fam} has no tabulated directional density")
    return float(out[0]) if single else out


def true_coeffs(spec: CopulaSpec) -> tuple[float, float]:
    """(alpha_{2|1}, eta) for the bivariate tabulated families."""
    if spec.d != 2:
        raise DomainError("extremal coefficients are tabulated for d=2 only")
    if spec.family == "gaussian_laplace":
        rho = spec.rho
        return rho**2, (1.0 + rho) / 2.0
    if spec.family == "laplace_mv":
        rho = spec.rho
        return rho, math.sqrt((1.0 - rho**2) / (2.0 - 2.0 * rho))
    if spec.family == "logistic_laplace":
        return 1.0, 1.0
    raise DomainError(f"{spec.family} has no tabulated coefficients")


def uniform_dir_density(d: int) -> float:
    return 1.0 / SPHERE_AREA[d]
