"""Star bodies represented by their radial functions on the unit sphere.

A star body is stored as log radial values on a fixed direction grid; values
between nodes are obtained by interpolating in log scale, which keeps every
evaluation strictly positive. Volumes are always computed by quadrature over
the grid nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np
from scipy.spatial import ConvexHull, cKDTree

__all__ = [
    "DomainError",
    "DirectionGrid",
    "RadialFunction",
    "StarBody",
    "Sample",
    "SPHERE_AREA",
    "BALL_VOLUME",
    "default_grid",
    "eval_radial",
    "radial_combine",
    "volume",
    "gauge_of",
    "uniform_directions",
    "polar",
    "seed_sequence",
]

SPHERE_AREA = {2: 2.0 * math.pi, 3: 4.0 * math.pi}
BALL_VOLUME = {2: math.pi, 3: 4.0 * math.pi / 3.0}

_UNIT_TOL = 1e-9
_SNAP = 1e-12


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


def _check_dimension(d: int) -> None:
    if d not in (2, 3):
        raise DomainError(f"dimension must be 2 or 3, got {d}")


class SphericalTriangulation:
    """Triangulated node set on S^2 with point location.

    Each query direction is located in the triangle whose cone contains it;
    the normalized cone coordinates are the spherical barycentric weights.
    """

    def __init__(self, nodes: np.ndarray, simplices: np.ndarray | None = None):
        self.nodes = np.asarray(nodes, dtype=float)
        if simplices is None:
            simplices = ConvexHull(self.nodes).simplices
        self.simplices = np.asarray(simplices, dtype=np.intp)
        corners = self.nodes[self.simplices]  # (T, 3, 3): corner index, coordinate
        self._inverse = np.linalg.inv(np.transpose(corners, (0, 2, 1)))
        self._tree = cKDTree(self.nodes)
        n_nodes = len(self.nodes)
        incident: list[list[int]] = [[] for _ in range(n_nodes)]
        for t, tri in enumerate(self.simplices):
            for v in tri:
                incident[v].append(t)
        width = max(len(row) for row in incident)
        table = np.full((n_nodes, width), -1, dtype=np.intp)
        for v, row in enumerate(incident):
            table[v, : len(row)] = row
        self._incident = table

    def _cone_coords(self, tri: np.ndarray, w: np.ndarray) -> np.ndarray:
        return np.einsum("mij,mj->mi", self._inverse[tri], w)

    def locate(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return node indices (m, 3) and barycentric weights (m, 3) for unit vectors w."""
        w = np.atleast_2d(np.asarray(w, dtype=float))
        m = len(w)
        _, nearest = self._tree.query(w, k=3)
        found = np.full(m, -1, dtype=np.intp)
        lam = np.zeros((m, 3))
        for k in range(nearest.shape[1]):
            todo = np.flatnonzero(found < 0)
            if todo.size == 0:
                break
            cands = self._incident[nearest[todo, k]]
            for c in range(cands.shape[1]):
                todo_c = todo[(found[todo] < 0) & (cands[:, c] >= 0)]
                if todo_c.size == 0:
                    continue
                tri = self._incident[nearest[todo_c, k], c]
                coords = self._cone_coords(tri, w[todo_c])
                ok = np.all(coords >= -1e-12, axis=1)
                found[todo_c[ok]] = tri[ok]
                lam[todo_c[ok]] = coords[ok]
        rest = np.flatnonzero(found < 0)
        for i in rest:  # rare: containing triangle not incident to the 3 nearest nodes
            coords = self._inverse @ w[i]
            tri = int(np.argmax(coords.min(axis=1)))
            found[i] = tri
            lam[i] = coords[tri]
        lam = np.clip(lam, 0.0, None)
        lam /= lam.sum(axis=1, keepdims=True)
        big = lam.max(axis=1) > 1.0 - _SNAP
        if np.any(big):
            top = np.argmax(lam[big], axis=1)
            snapped = np.zeros((int(big.sum()), 3))
            snapped[np.arange(len(top)), top] = 1.0
            lam[big] = snapped
        return self.simplices[found], lam


@dataclass(frozen=True, eq=False)
class DirectionGrid:
    """Quadrature nodes on S^{d-1} with interpolation support."""

    d: int
    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "circle"

    def __post_init__(self) -> None:
        _check_dimension(self.d)
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    @classmethod
    def circle(cls, n: int = 512) -> "DirectionGrid":
        phi = 2.0 * np.pi * np.arange(n) / n
        nodes = np.column_stack([np.cos(phi), np.sin(phi)])
        return cls(2, nodes, np.full(n, 2.0 * np.pi / n), "circle")

    @classmethod
    def fibonacci(cls, n: int = 2048) -> "DirectionGrid":
        i = np.arange(n) + 0.5
        z = 1.0 - 2.0 * i / n
        golden = np.pi * (3.0 - math.sqrt(5.0))
        theta = golden * i
        s = np.sqrt(1.0 - z * z)
        nodes = np.column_stack([s * np.cos(theta), s * np.sin(theta), z])
        nodes /= np.linalg.norm(nodes, axis=1, keepdims=True)
        return cls(3, nodes, np.full(n, 4.0 * np.pi / n), "fibonacci")

    @property
    def size(self) -> int:
        return len(self.nodes)

    @cached_property
    def angles(self) -> np.ndarray:
        """Polar angles of the nodes (d=2 only)."""
        return 2.0 * np.pi * np.arange(self.size) / self.size

    @cached_property
    def triangulation(self) -> SphericalTriangulation:
        if self.d != 3:
            raise DomainError("triangulation is only defined for d=3 grids")
        return SphericalTriangulation(self.nodes)

    def locate(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Interpolation stencil: node indices and weights for each direction."""
        w = np.atleast_2d(np.asarray(w, dtype=float))
        if self.d == 2:
            n = self.size
            phi = np.mod(np.arctan2(w[:, 1], w[:, 0]), 2.0 * np.pi)
            pos = phi * n / (2.0 * np.pi)
            lo = np.floor(pos)
            t = pos - lo
            lo = lo.astype(np.intp)
            up = t > 1.0 - _SNAP
            lo = np.where(up, lo + 1, lo) % n
            t = np.where(up | (t < _SNAP), 0.0, t)
            idx = np.column_stack([lo, (lo + 1) % n])
            wts = np.column_stack([1.0 - t, t])
            return idx, wts
        return self.triangulation.locate(w)

    def same_as(self, other: "DirectionGrid") -> bool:
        if self is other:
            return True
        return (
            self.d == other.d
            and self.size == other.size
            and self.kind == other.kind
            and np.array_equal(self.nodes, other.nodes)
        )


@lru_cache(maxsize=None)
def default_grid(d: int, n: int | None = None) -> DirectionGrid:
    """Shared default grid: 512 equal angles for d=2, 2048 Fibonacci nodes for d=3."""
    _check_dimension(d)
    if d == 2:
        return DirectionGrid.circle(512 if n is None else n)
    return DirectionGrid.fibonacci(2048 if n is None else n)


def _as_directions(w, d: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(w, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != d:
        raise DomainError(f"expected {d}-dimensional directions, got shape {arr.shape}")
    norms = np.linalg.norm(arr, axis=1)
    if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
        raise DomainError("direction arguments must have unit norm")
    return arr, single


@dataclass(frozen=True, eq=False)
class RadialFunction:
    """Strictly positive function on S^{d-1}, stored as log values at grid nodes."""

    grid: DirectionGrid
    log_values: np.ndarray

    def __post_init__(self) -> None:
        lv = np.asarray(self.log_values, dtype=float)
        if lv.shape != (self.grid.size,):
            raise DomainError(f"expected {self.grid.size} log values, got shape {lv.shape}")
        if not np.all(np.isfinite(lv)):
            raise DomainError("log values must be finite")
        lv = lv.copy()
        lv.setflags(write=False)
        object.__setattr__(self, "log_values", lv)

    @classmethod
    def constant(cls, grid: DirectionGrid, value: float) -> "RadialFunction":
        if value <= 0:
            raise DomainError("radial functions must be positive")
        return cls(grid, np.full(grid.size, math.log(value)))

    @classmethod
    def from_values(cls, grid: DirectionGrid, values) -> "RadialFunction":
        values = np.asarray(values, dtype=float)
        if np.any(values <= 0):
            raise DomainError("radial functions must be positive")
        return cls(grid, np.log(values))

    @classmethod
    def from_function(cls, grid: DirectionGrid, fn: Callable[[np.ndarray], np.ndarray]) -> "RadialFunction":
        return cls.from_values(grid, fn(grid.nodes))

    @property
    def d(self) -> int:
        return self.grid.d

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)

    def log_eval(self, w) -> np.ndarray:
        """Interpolated log r(w) for unit vectors w (no norm check)."""
        idx, wts = self.grid.locate(w)
        return np.sum(self.log_values[idx] * wts, axis=1)

    def __call__(self, w) -> np.ndarray | float:
        return eval_radial(self, w)

    def to_dict(self) -> dict:
        out: dict = {"d": self.d, "log_values": self.log_values.tolist()}
        if self.d == 2:
            out["count"] = self.grid.size
        else:
            out["nodes"] = self.grid.nodes.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RadialFunction":
        d = int(data["d"])
        lv = np.asarray(data["log_values"], dtype=float)
        if d == 2:
            grid = default_grid(2, int(data.get("count", len(lv))))
        else:
            nodes = np.asarray(data["nodes"], dtype=float)
            grid = default_grid(3, len(nodes))
            if not np.allclose(grid.nodes, nodes, atol=1e-12):
                grid = DirectionGrid(3, nodes, np.full(len(nodes), 4.0 * np.pi / len(nodes)), "custom")
        return cls(grid, lv)


@dataclass(frozen=True, eq=False)
class StarBody:
    """Set {t r(w) w : 0 <= t <= 1}; starshaped at the origin since r > 0."""

    boundary: RadialFunction

    def contains(self, x) -> np.ndarray:
        return gauge_of(self.boundary)(x) <= 1.0

    @property
    def volume(self) -> float:
        return volume(self.boundary)


def eval_radial(rf: RadialFunction, w) -> np.ndarray | float:
    """Evaluate r(w) at one unit vector (returns float) or rows of unit vectors."""
    arr, single = _as_directions(w, rf.d)
    out = np.exp(rf.log_eval(arr))
    return float(out[0]) if single else out


def _check_same_grid(a: RadialFunction, b: RadialFunction) -> None:
    if not a.grid.same_as(b.grid):
        raise DomainError("radial functions live on different grids")


def radial_combine(kind: str, a: RadialFunction, b) -> RadialFunction:
    """Pointwise algebra on radial functions.

    ``add`` and ``multiply`` take a second RadialFunction on the same grid;
    ``power`` takes a scalar or per-node exponent; ``scale`` a positive constant.
    """
    if kind == "add":
        _check_same_grid(a, b)
        return RadialFunction(a.grid, np.logaddexp(a.log_values, b.log_values))
    if kind == "multiply":
        _check_same_grid(a, b)
        return RadialFunction(a.grid, a.log_values + b.log_values)
    if kind == "power":
        expo = b.log_values if isinstance(b, RadialFunction) else np.asarray(b, dtype=float)
        if not np.all(np.isfinite(expo)):
            raise DomainError("exponent must be finite")
        return RadialFunction(a.grid, a.log_values * expo)
    if kind == "scale":
        c = float(b)
        if not c > 0:
            raise DomainError(f"scale factor must be positive, got {c}")
        return RadialFunction(a.grid, a.log_values + math.log(c))
    raise DomainError(f"unknown combination kind {kind!r}")


def volume(rf: RadialFunction) -> float:
    """(1/d) * sum of weight * r^d over the grid nodes."""
    d = rf.d
    return float(np.dot(rf.grid.weights, np.exp(d * rf.log_values)) / d)


def gauge_of(rf: RadialFunction) -> Callable[[np.ndarray], np.ndarray | float]:
    """Return g with g(x) = |x| / r(x/|x|)."""

    def gauge(x) -> np.ndarray | float:
        arr = np.asarray(x, dtype=float)
        single = arr.ndim == 1
        arr = np.atleast_2d(arr)
        norms = np.linalg.norm(arr, axis=1)
        if np.any(norms == 0):
            raise DomainError("the gauge is undefined at the origin")
        out = norms * np.exp(-rf.log_eval(arr / norms[:, None]))
        return float(out[0]) if single else out

    return gauge


def uniform_directions(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def polar(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split points into radii and unit directions (zero rows get direction e_1)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.linalg.norm(points, axis=1)
    w = np.zeros_like(points)
    pos = r > 0
    w[pos] = points[pos] / r[pos, None]
    w[~pos, 0] = 1.0
    return r, w


@dataclass(frozen=True, eq=False)
class Sample:
    """n points in R^d with cached polar decomposition."""

    points: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        _check_dimension(pts.shape[1])
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n

    @cached_property
    def _polar(self) -> tuple[np.ndarray, np.ndarray]:
        return polar(self.points)

    @property
    def radii(self) -> np.ndarray:
        return self._polar[0]

    @property
    def directions(self) -> np.ndarray:
        return self._polar[1]

    def subset(self, mask) -> "Sample":
        return Sample(self.points[mask], dict(self.meta))


def seed_sequence(seed) -> np.random.SeedSequence:
    """Accept an int, None or an existing SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)
