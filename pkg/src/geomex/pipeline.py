"""Two-stage fitting pipeline: margins, quantile set, per-draw exceedance models,
diagnostics and report tables."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .diagnostics import ball_transform, envelope, k_function, theoretical_k, thin_to
from .exceedance import ExceedanceFit, ExceedanceModelSpec, fit_exceedance, homothety_check
from .files import ModelFile, read_data_csv, svg_polylines, write_band_csv, write_csv, write_points_csv, write_radial_csv, write_text_atomic
from .geometry import DomainError, RadialFunction, Sample, seed_sequence
from .inference import SphereBasis, simultaneous_band
from .margins import MarginSet, fit_margins
from .probsets import GeometricModelDraw
from .quantreg import QuantileSetFit, exceedance_split, fit_quantile_set, posterior_quantile_sets

__all__ = [
    "PipelineError",
    "PipelineResult",
    "standardize",
    "fit_quantile_stage",
    "fit_exceedance_stage",
    "diagnose_draws",
    "exceedance_proportions",
    "run_pipeline",
    "write_model_tables",
]

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str, draw: int | None = None):
        where = f"stage {stage}" + (f", draw {draw}" if draw is not None else "")
        super().__init__(f"{where}: {message}")
        self.stage = stage
        self.draw = draw


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def standardize(data: np.ndarray, mode: str = "fit", seed=None) -> tuple[Sample, MarginSet | None]:
    """Laplace-margin sample; ``mode='laplace'`` takes the data as already standardized."""
    if mode == "laplace":
        return Sample(data, {"margins": "laplace"}), None
    margins = fit_margins(data, seed=seed)
    return Sample(margins.to_laplace(data), {"margins": "fitted"}), margins


def fit_quantile_stage(sample: Sample, q: float, n_q: int, seed, **solver) -> tuple[QuantileSetFit, list[RadialFunction]]:
    """``solver`` may carry hyper_grid, max_iter and grad_tol."""
    fit = fit_quantile_set(sample, q, **solver)
    return fit, posterior_quantile_sets(fit, n_q, seed)


def _fit_one(args) -> ExceedanceFit:
    sample, r_q, spec, q, hyper, idx, solver = args
    exc, _ = exceedance_split(sample, r_q)
    angles = sample.directions if spec.angles == "all_angles" else None
    return fit_exceedance(exc, angles, r_q, spec, q=q, hyper=hyper, provenance={"q_draw": idx}, **solver)


def fit_exceedance_stage(
    sample: Sample,
    q: float,
    q_draws: Sequence[RadialFunction],
    spec: ExceedanceModelSpec,
    n_gl: int,
    seed,
    jobs: int = 1,
    **solver,
) -> tuple[list[ExceedanceFit], list[dict]]:
    """One exceedance fit per quantile-set draw.

    Smoothness hyperparameters are selected on the first draw and reused, so
    the remaining fits are independent and may run in parallel without
    changing results.
    """
    seeds = [_seed_int(s) for s in seed_sequence(seed).spawn(len(q_draws))]
    try:
        first = _fit_one((sample, q_draws[0], spec, q, None, 0, solver))
    except (DomainError, ArithmeticError) as exc:
        raise PipelineError("fit-exc", str(exc), 0) from exc
    hyper = first.posterior.hyper
    tasks = [(sample, rq, spec, q, hyper, i, solver) for i, rq in enumerate(q_draws) if i > 0]
    fits = [first]
    try:
        if jobs > 1 and tasks:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                fits.extend(pool.map(_fit_one, tasks))
        else:
            fits.extend(_fit_one(t) for t in tasks)
    except (DomainError, ArithmeticError) as exc:
        raise PipelineError("fit-exc", str(exc)) from exc
    registry = [{"q_draw": i, "n_gl": int(n_gl), "seed": seeds[i]} for i in range(len(fits))]
    return fits, registry


def exceedance_proportions(sample: Sample, q_draws: Sequence[RadialFunction]) -> np.ndarray:
    return np.array([float(np.mean(sample.radii > rq(sample.directions))) for rq in q_draws])


@dataclass(eq=False)
class DiagnosticsResult:
    d: int
    n_star: int
    envelopes: dict
    curves: dict
    passes: dict
    failures: list = field(default_factory=list)

    def pass_rate(self, kind: str) -> float:
        flags = self.passes.get(kind, [])
        return float(np.mean(flags)) if flags else float("nan")


def diagnose_draws(sample: Sample, draws: Sequence[GeometricModelDraw], n_draws: int, m: int, alpha: float, seed) -> DiagnosticsResult:
    """Ball-transform the sample under evenly spaced draws, thin to a common
    size and check K_B and K_C against uniform envelopes."""
    ss = seed_sequence(seed)
    env_seeds = ss.spawn(2)
    thin_seeds = ss.spawn(n_draws)
    picks = np.unique(np.linspace(0, len(draws) - 1, min(n_draws, len(draws))).round().astype(int))
    patterns, failures = [], []
    for k in picks:
        try:
            patterns.append((int(k), ball_transform(sample, draws[k])))
        except DomainError as exc:
            failures.append({"draw": int(k), "reason": str(exc)})
    usable = [(k, p) for k, p in patterns if p.n >= 10]
    if not usable:
        raise PipelineError("diagnose", "no draw yields at least 10 transformed atoms")
    n_star = min(p.n for _, p in usable)
    envs, curves, passes = {}, {}, {}
    for kind, es in zip(("ball", "sector"), env_seeds):
        env = envelope(kind, n_star, m, alpha, seed=es, d=sample.d)
        envs[kind] = env
        cs = []
        for (k, p), ts in zip(usable, thin_seeds):
            cs.append(k_function(kind, thin_to(p, n_star, ts), env.r))
        curves[kind] = np.array(cs)
        passes[kind] = [env.contains(c) for c in cs]
    return DiagnosticsResult(sample.d, n_star, envs, curves, passes, failures)


@dataclass(eq=False)
class PipelineResult:
    model: ModelFile
    sample: Sample
    proportions: np.ndarray
    diagnostics: DiagnosticsResult | None
    homothety: dict | None
    summary: dict


def _band_abscissa(grid) -> np.ndarray:
    return grid.angles if grid.d == 2 else np.arange(grid.size, dtype=float)


def write_model_tables(out: Path, model: ModelFile, draws: Sequence[GeometricModelDraw], alpha: float) -> dict:
    """Posterior-mean boundaries and simultaneous bands as CSV, plus SVG for d=2."""
    out.mkdir(parents=True, exist_ok=True)
    grid = draws[0].grid
    log_q = np.array([dr.r_q.log_values for dr in draws])
    log_g = np.array([dr.r_g.log_values for dr in draws])
    dens = np.array([dr.r_w.values for dr in draws])
    mean_q = RadialFunction(grid, np.log(np.exp(log_q).mean(axis=0)))
    mean_g = RadialFunction(grid, np.log(np.exp(log_g).mean(axis=0)))
    write_radial_csv(out / "quantile_set.csv", mean_q)
    write_radial_csv(out / "limit_set.csv", mean_g)
    written = {"quantile_set": mean_q, "limit_set": mean_g}
    x = _band_abscissa(grid)
    name = "angle" if grid.d == 2 else "node"
    if len(draws) >= 200:
        for label, vals in (("quantile_set", np.exp(log_q)), ("limit_set", np.exp(log_g)), ("dir_density", dens)):
            band = simultaneous_band(vals, alpha)
            write_band_csv(out / f"{label}_band.csv", x, band.lower, band.upper, vals.mean(axis=0), names=(name, "lower", "upper", "mean"))
    else:
        write_csv(out / "dir_density.csv", [name, "mean"], zip(x, dens.mean(axis=0)))
    if grid.d == 2:
        svg_polylines(out / "quantile_set.svg", [mean_q.values[:, None] * grid.nodes])
        svg_polylines(out / "limit_set.svg", [mean_g.values[:, None] * grid.nodes])
    return written


def _write_diagnostics(out: Path, diag: DiagnosticsResult) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for kind in ("ball", "sector"):
        env = diag.envelopes[kind]
        theo, _ = theoretical_k(kind, diag.d, env.r, 50_000, 0)
        write_band_csv(out / f"k_{kind}_envelope.csv", env.r, env.lower, env.upper, theo, names=("r", "lower", "upper", "uniform"))
        curves = diag.curves[kind]
        header = ["r"] + [f"draw{j}" for j in range(len(curves))]
        write_csv(out / f"k_{kind}_curves.csv", header, zip(env.r, *curves))
    rows = [[kind, str(j), "1" if ok else "0"] for kind in ("ball", "sector") for j, ok in enumerate(diag.passes[kind])]
    write_csv(out / "envelope_pass.csv", ["kind", "draw", "inside"], rows)


def run_pipeline(config: RunConfig, jobs: int = 1, figures: bool = True) -> PipelineResult:
    """standardize -> fit-q -> per-draw fit-exc -> diagnostics -> files in config.out."""
    out = Path(config.out)
    seeds = config.stage_seeds()
    try:
        data = read_data_csv(config.data_path)
    except (OSError, ValueError) as exc:
        raise PipelineError("read", str(exc)) from exc
    try:
        sample, margins = standardize(data, config.margins, seeds["margins"])
    except (DomainError, ArithmeticError, RuntimeError) as exc:
        raise PipelineError("standardize", str(exc)) from exc
    try:
        solver = {"hyper_grid": config.hyper_grid(sample.d), "max_iter": config.max_iter, "grad_tol": config.grad_tol}
        q_solver = dict(solver, basis=SphereBasis(sample.d, config.basis_k)) if config.basis_k else solver
        qfit, q_draws = fit_quantile_stage(sample, config.q, config.n_q, seeds["qfit"], **q_solver)
    except (DomainError, ArithmeticError) as exc:
        raise PipelineError("fit-q", str(exc)) from exc
    spec = ExceedanceModelSpec(config.variant, config.xi_mode, config.angles, config.basis_k)
    fits, registry = fit_exceedance_stage(sample, config.q, q_draws, spec, config.n_gl, seeds["exc"], jobs, **solver)
    settings = {"q": config.q, "n_q": config.n_q, "n_gl": config.n_gl, "spec": vars(spec).copy(), "seeds": seeds, "n": sample.n}
    model = ModelFile(margins, qfit, fits, registry, settings)
    draws = model.model_draws()
    props = exceedance_proportions(sample, q_draws)
    homothety = homothety_check(fits[0], config.alpha, seed=seeds["diag"]) if spec.variant == "M3" else None
    try:
        diag = diagnose_draws(sample, draws, config.diag_draws, config.diag_m, config.alpha, seeds["diag"])
    except (DomainError, PipelineError) as exc:
        log.warning("diagnostics skipped: %s", exc)
        diag = None

    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.json")
    write_points_csv(out / "standardized.csv", sample.points)
    write_csv(out / "exceedance_proportions.csv", ["q_draw", "proportion"], ((str(i), p) for i, p in enumerate(props)))
    write_model_tables(out, model, draws, config.alpha)
    if diag is not None:
        _write_diagnostics(out / "diag", diag)
    summary = {
        "n": sample.n,
        "d": sample.d,
        "q": config.q,
        "variant": spec.variant,
        "expected_exceedances": round(sample.n * (1.0 - config.q), 9),
        "mean_exceedances": float(props.mean() * sample.n),
        "mean_exceedance_proportion": float(props.mean()),
        "mean_xi": float(np.mean([dr.xi for dr in draws])),
        "homothety": homothety["verdict"] if homothety else "not applicable",
        "n_star": diag.n_star if diag else 0,
        "k_ball_pass_rate": diag.pass_rate("ball") if diag else float("nan"),
        "k_sector_pass_rate": diag.pass_rate("sector") if diag else float("nan"),
    }
    write_csv(out / "summary.csv", ["key", "value"], ([k, v if isinstance(v, (str, int)) and not isinstance(v, bool) else float(v)] for k, v in summary.items()))
    lines = [f"{k}: {v}" for k, v in summary.items()]
    write_text_atomic(out / "report.txt", "\n".join(lines) + "\n")
    result = PipelineResult(model, sample, props, diag, homothety, summary)
    if figures:
        from .plotting import render_report

        render_report(result, out / "figures")
    return result
