"""Flat key=value run configuration, validated before any computation."""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .exceedance import ANGLE_MODES, VARIANTS, XI_MODES
from .inference import hyper_candidates, hyper_candidates_tau_kappa

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    data: str
    out: str
    q: float = 0.8
    variant: str = "M3"
    xi_mode: str = "fixed_zero"
    angles: str = "exceedances_only"
    basis_k: int | None = None
    margins: str = "fit"
    n_q: int = 20
    n_gl: int = 50
    diag_draws: int = 20
    diag_m: int = 500
    alpha: float = 0.05
    max_iter: int = 200
    grad_tol: float = 1e-6
    sigma_grid: tuple[float, ...] | None = None
    range_grid: tuple[float, ...] | None = None
    tau_grid: tuple[float, ...] | None = None
    kappa_grid: tuple[float, ...] | None = None
    seed_margins: int = 1
    seed_qfit: int = 2
    seed_exc: int = 3
    seed_diag: int = 4
    seed_resample: int = 5

    def __post_init__(self) -> None:
        if not 0.5 <= self.q <= 0.999:
            raise ConfigError("q must lie in [0.5, 0.999]")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.xi_mode not in XI_MODES:
            raise ConfigError(f"xi_mode must be one of {XI_MODES}")
        if self.angles not in ANGLE_MODES:
            raise ConfigError(f"angles must be one of {ANGLE_MODES}")
        if self.margins not in ("fit", "laplace"):
            raise ConfigError("margins must be 'fit' or 'laplace'")
        for name in ("n_q", "n_gl", "diag_draws"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.diag_m < 200:
            raise ConfigError("diag.m must be at least 200")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.basis_k is not None and self.basis_k < 8:
            raise ConfigError("basis_k must be at least 8")
        if self.max_iter < 1 or not self.grad_tol > 0:
            raise ConfigError("max_iter must be positive and grad_tol > 0")
        for name in _LIST_KEYS:
            vals = getattr(self, name)
            if vals is not None and (not vals or min(vals) <= 0):
                raise ConfigError(f"{name} must list positive values")
        if (self.tau_grid is None) != (self.kappa_grid is None):
            raise ConfigError("tau_grid and kappa_grid must be given together")
        if self.tau_grid is not None and (self.sigma_grid is not None or self.range_grid is not None):
            raise ConfigError("give either tau_grid/kappa_grid or sigma_grid/range_grid, not both")

    @property
    def data_path(self) -> Path:
        return Path(self.data)

    def hyper_grid(self, d: int = 2) -> list[tuple[float, float, float]] | None:
        """Smoothness hyperparameter candidates, or None for the library default.

        A (tau, kappa) grid depends on the sphere dimension through the
        Matern normalising constant, hence ``d``.
        """
        if self.tau_grid is not None:
            return hyper_candidates_tau_kappa(d, self.tau_grid, self.kappa_grid)
        if self.sigma_grid is None and self.range_grid is None:
            return None
        kw = {}
        if self.sigma_grid is not None:
            kw["sigmas"] = self.sigma_grid
        if self.range_grid is not None:
            kw["ranges"] = self.range_grid
        return hyper_candidates(**kw)

    def stage_seeds(self) -> dict:
        return {
            "margins": self.seed_margins,
            "qfit": self.seed_qfit,
            "exc": self.seed_exc,
            "diag": self.seed_diag,
            "resample": self.seed_resample,
        }


_INT_KEYS = {"basis_k", "n_q", "n_gl", "diag_draws", "diag_m", "max_iter"}
_FLOAT_KEYS = {"q", "alpha", "grad_tol"}
_LIST_KEYS = ("sigma_grid", "range_grid", "tau_grid", "kappa_grid")


def _field_name(key: str) -> str:
    return key.replace(".", "_")


def parse_config(text: str, base: Path | None = None) -> RunConfig:
    """Parse 'key = value' lines; '#' starts a comment. Unknown keys are errors.

    Dotted keys such as ``seed.qfit`` or ``diag.m`` map to fields with
    underscores; the ``*_grid`` keys take comma-separated lists.
    Relative paths are resolved against ``base``.
    """
    known = {f.name for f in fields(RunConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        name = _field_name(key)
        if name not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if name in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            if name.startswith("seed_") or name in _INT_KEYS:
                values[name] = None if value.lower() == "none" else int(value)
            elif name in _FLOAT_KEYS:
                values[name] = float(value)
            elif name in _LIST_KEYS:
                values[name] = tuple(float(v) for v in value.split(","))
            else:
                values[name] = value
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {value!r} for {key}") from None
    for required in ("data", "out"):
        if required not in values:
            raise ConfigError(f"missing required key {required!r}")
    if base is not None:
        for key in ("data", "out"):
            p = Path(values[key])
            if not p.is_absolute():
                values[key] = str(base / p)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), base=path.parent)
