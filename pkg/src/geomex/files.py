"""Deterministic CSV/SVG emission and the JSON model file."""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceedance import ExceedanceFit
from .geometry import DomainError, RadialFunction, default_grid
from .margins import MarginSet
from .probsets import GeometricModelDraw
from .quantreg import QuantileSetFit

__all__ = [
    "DataError",
    "SCHEMA_VERSION",
    "ModelFile",
    "read_data_csv",
    "write_text_atomic",
    "write_csv",
    "format_number",
    "write_radial_csv",
    "read_radial_csv",
    "write_band_csv",
    "write_points_csv",
    "svg_polylines",
    "emit_plot_data",
]

SCHEMA_VERSION = 1


class DataError(ValueError):
    """Malformed input data; the message names the offending line."""


def format_number(x: float) -> str:
    """Shortest round-trip representation; inf/nan spelled out."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format_number(v)


def write_text_atomic(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    return write_text_atomic(path, "\n".join(lines) + "\n")


def read_data_csv(path, d: int | None = None) -> np.ndarray:
    """One observation per row, comma separated; a non-numeric first row is a header."""
    rows: list[list[float]] = []
    width = d
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                if lineno == 1 and not rows:
                    continue
                raise DataError(f"{path}: line {lineno}: non-numeric value") from None
            if width is None:
                width = len(vals)
            if len(vals) != width:
                raise DataError(f"{path}: line {lineno}: expected {width} columns, got {len(vals)}")
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}: line {lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    if width not in (2, 3):
        raise DataError(f"{path}: expected 2 or 3 columns, got {width}")
    return np.asarray(rows, dtype=float)


def write_radial_csv(path, rf: RadialFunction) -> Path:
    cols = ["x", "y", "z"][: rf.d]
    rows = ([*w, lv, v] for w, lv, v in zip(rf.grid.nodes, rf.log_values, rf.values))
    return write_csv(path, [*cols, "log_r", "r"], rows)


def read_radial_csv(path) -> RadialFunction:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.array([[float(v) for v in line.split(",")] for line in fh if line.strip()])
    d = len(header) - 2
    grid = default_grid(d, len(data))
    if not np.allclose(grid.nodes, data[:, :d], atol=1e-12):
        raise DataError(f"{path}: nodes do not match the default grid of size {len(data)}")
    return RadialFunction(grid, data[:, d])


def write_band_csv(path, abscissa, lower, upper, centre=None, names=("r", "lower", "upper", "centre")) -> Path:
    abscissa = np.asarray(abscissa, float)
    cols = [abscissa, np.asarray(lower, float), np.asarray(upper, float)]
    header = list(names[:3])
    if centre is not None:
        cols.append(np.asarray(centre, float))
        header.append(names[3])
    return write_csv(path, header, zip(*cols))


def write_points_csv(path, points: np.ndarray, names: Sequence[str] | None = None) -> Path:
    points = np.atleast_2d(points)
    names = list(names or ["x", "y", "z"][: points.shape[1]])
    return write_csv(path, names, points)


def _svg_coords(pts: np.ndarray, scale: float, size: int) -> str:
    half = size / 2.0
    return " ".join(f"{half + scale * x:.3f},{half - scale * y:.3f}" for x, y in pts)


def svg_polylines(path, curves: Sequence[np.ndarray], points: np.ndarray | None = None, size: int = 400) -> Path:
    """Closed polylines, one vertex per row, and optional scatter in a square viewport centred at 0."""
    extent = max([np.abs(c).max() for c in curves] + ([np.abs(points).max()] if points is not None and len(points) else []))
    scale = 0.45 * size / max(extent, 1e-12)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">']
    if points is not None:
        for x, y in np.atleast_2d(points):
            cx, cy = size / 2.0 + scale * x, size / 2.0 - scale * y
            out.append(f'<circle cx="{cx:.3f}" cy="{cy:.3f}" r="1.2" fill="#777"/>')
    for c in curves:
        # a polygon element is the closed polyline through the given vertices
        out.append(f'<polygon fill="none" stroke="black" stroke-width="1" points="{_svg_coords(c, scale, size)}"/>')
    out.append("</svg>")
    return write_text_atomic(path, "\n".join(out) + "\n")


def emit_plot_data(artifact, stem, formats: Sequence[str] = ("csv",)) -> list[Path]:
    """CSV always; SVG only for two-dimensional radial functions or point sets.

    Returns the written paths. Asking for SVG of a d=3 object raises after the
    CSV is on disk.
    """
    stem = Path(stem)
    written: list[Path] = []
    if isinstance(artifact, RadialFunction):
        written.append(write_radial_csv(stem.with_suffix(".csv"), artifact))
        d = artifact.d
        curve = artifact.values[:, None] * artifact.grid.nodes if d == 2 else None
    else:
        pts = np.atleast_2d(np.asarray(artifact, float))
        written.append(write_points_csv(stem.with_suffix(".csv"), pts))
        d = pts.shape[1]
        curve = None
    if "svg" in formats:
        if d != 2:
            raise DomainError("SVG output is only supported for d=2")
        if curve is not None:
            written.append(svg_polylines(stem.with_suffix(".svg"), [curve]))
        else:
            written.append(svg_polylines(stem.with_suffix(".svg"), [], points=pts))
    return written


@dataclass(eq=False)
class ModelFile:
    """Everything needed to regenerate posterior draws deterministically.

    ``draws`` is the registry: one entry per exceedance fit naming the
    quantile-set draw it conditions on and the seed of its n_gl field draws.
    """

    margins: MarginSet | None
    quantile_fit: QuantileSetFit
    exceedance_fits: list[ExceedanceFit]
    draws: list[dict]
    settings: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.draws) != len(self.exceedance_fits):
            raise DomainError("draw registry and exceedance fits differ in length")
        for entry in self.draws:
            if not 0 <= int(entry["q_draw"]) < int(self.settings.get("n_q", len(self.draws))):
                raise DomainError(f"registry entry {entry} references a missing quantile draw")

    def model_draws(self) -> list[GeometricModelDraw]:
        out: list[GeometricModelDraw] = []
        for fit, entry in zip(self.exceedance_fits, self.draws):
            for j, dr in enumerate(fit.draws(int(entry["n_gl"]), int(entry["seed"]))):
                out.append(GeometricModelDraw(dr.q, dr.r_q, dr.r_g, dr.xi, dr.r_w, {"q_draw": entry["q_draw"], "gl_draw": j}))
        return out

    def to_json(self) -> str:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "settings": self.settings,
            "margins": self.margins.to_dict() if self.margins is not None else None,
            "quantile_fit": self.quantile_fit.to_dict(),
            "exceedance_fits": [f.to_dict() for f in self.exceedance_fits],
            "draws": self.draws,
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    def save(self, path) -> Path:
        return write_text_atomic(path, self.to_json())

    @classmethod
    def load(cls, path) -> "ModelFile":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise DataError(f"{path}: unsupported schema_version {version!r}, expected {SCHEMA_VERSION}")
        margins = MarginSet.from_dict(doc["margins"]) if doc.get("margins") else None
        return cls(
            margins,
            QuantileSetFit.from_dict(doc["quantile_fit"]),
            [ExceedanceFit.from_dict(f) for f in doc["exceedance_fits"]],
            list(doc["draws"]),
            dict(doc.get("settings", {})),
        )
