"""Command-line interface: ``geomex <subcommand> ...``.

Data files hold one observation per row. Commands after ``standardize``
expect Laplace-margin data.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import copulas
from .config import ConfigError, load_config
from .exceedance import ExceedanceModelSpec
from .files import (
    SCHEMA_VERSION,
    DataError,
    ModelFile,
    read_data_csv,
    svg_polylines,
    write_band_csv,
    write_points_csv,
    write_radial_csv,
    write_text_atomic,
)
from .geometry import DomainError, RadialFunction, Sample, seed_sequence
from .inference import simultaneous_band
from .margins import MarginSet, fit_margins
from .pipeline import (
    PipelineError,
    PipelineResult,
    diagnose_draws,
    exceedance_proportions,
    fit_exceedance_stage,
    run_pipeline,
    write_model_tables,
    _write_diagnostics,
)
from .probsets import isotropic_set, return_set
from .quantreg import QuantileSetFit, fit_quantile_set, posterior_quantile_sets
from .rareprob import prob_posterior, region_from_box
from .sampling import ResamplePlan, hybrid_resample

log = logging.getLogger("geomex")

FAMILIES = {
    "gaussian": lambda o: copulas.CopulaSpec.gaussian(o["rho"], o["d"]),
    "laplace": lambda o: copulas.CopulaSpec.laplace(o["rho"], o["d"]),
    "student": lambda o: copulas.CopulaSpec.student(o["rho"], o["nu"], o["d"]),
    "logistic": lambda o: copulas.CopulaSpec.logistic(o["theta"], o["d"]),
    "inverted_logistic": lambda o: copulas.CopulaSpec.inverted_logistic(o["theta"], o["d"]),
}


def _jobs_option(f):
    return click.option(
        "--jobs",
        type=click.IntRange(min=1),
        envvar="GEOMEX_JOBS",
        default=1,
        show_default=True,
        help="Worker processes for per-draw fits (falls back to GEOMEX_JOBS).",
    )(f)


def _fail(exc: Exception) -> None:
    raise click.ClickException(str(exc))


def _load_sample(path) -> Sample:
    try:
        return Sample(read_data_csv(path), {"path": str(path)})
    except (OSError, DataError) as exc:
        _fail(exc)


def _load_model(path) -> ModelFile:
    try:
        return ModelFile.load(path)
    except (OSError, DataError, KeyError, DomainError) as exc:
        _fail(exc)


def _parse_box(text: str) -> tuple[list[float], list[float]]:
    try:
        lo, hi = text.split(":")
        return [float(v) for v in lo.split(",")], [float(v) for v in hi.split(",")]
    except ValueError:
        raise click.BadParameter("box must look like 'a1,a2:b1,b2'") from None


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Geometric multivariate extremes: fit, diagnose and query radial GP models."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@main.command()
@click.option("--family", type=click.Choice(sorted(FAMILIES)), required=True)
@click.option("--rho", type=float, default=0.5, show_default=True)
@click.option("--theta", type=float, default=0.3, show_default=True)
@click.option("--nu", type=float, default=4.0, show_default=True)
@click.option("--d", "dim", type=click.IntRange(2, 3), default=2, show_default=True)
@click.option("--n", type=click.IntRange(min=1), required=True)
@click.option("--seed", type=int, required=True)
@click.option("--margins", type=click.Choice(["laplace", "native"]), default="laplace", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def simulate(family, rho, theta, nu, dim, n, seed, margins, out):
    """Draw a synthetic sample from one of the oracle families."""
    try:
        spec = FAMILIES[family]({"rho": rho, "theta": theta, "nu": nu, "d": dim})
        s = copulas.sample(spec, n, seed, margins)
    except DomainError as exc:
        _fail(exc)
    write_points_csv(out, s.points)


@main.command()
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Laplace-margin data CSV.")
@click.option("--model", "model_out", type=click.Path(dir_okay=False), help="Write the marginal models as JSON.")
@click.option("--seed", type=int, default=None)
def standardize(data, out, model_out, seed):
    """Fit semiparametric margins and transform to standard Laplace."""
    s = _load_sample(data)
    try:
        ms = fit_margins(s.points, seed=seed)
    except (DomainError, RuntimeError) as exc:
        _fail(exc)
    write_points_csv(out, ms.to_laplace(s.points))
    if model_out:
        write_text_atomic(model_out, json.dumps({"schema_version": SCHEMA_VERSION, "margins": ms.to_dict()}, indent=1, sort_keys=True) + "\n")


@main.command("fit-q")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--q", type=float, required=True)
@click.option("--n-draws", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--seed", type=int, default=2, show_default=True, help="Seed of the quantile-set draws.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def fit_q(data, q, n_draws, seed, out):
    """Gamma quantile regression for the quantile set at level q."""
    s = _load_sample(data)
    try:
        fit = fit_quantile_set(s, q)
    except DomainError as exc:
        _fail(exc)
    doc = {"schema_version": SCHEMA_VERSION, "quantile_fit": fit.to_dict(), "n_q": n_draws, "seed": seed}
    write_text_atomic(out, json.dumps(doc, indent=1, sort_keys=True) + "\n")
    props = exceedance_proportions(s, posterior_quantile_sets(fit, n_draws, seed))
    click.echo(f"mean exceedance proportion {props.mean():.4f} (target {1 - q:.4f})")


def _load_qfit(path) -> tuple[QuantileSetFit, int, int]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != SCHEMA_VERSION:
        _fail(DataError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}"))
    return QuantileSetFit.from_dict(doc["quantile_fit"]), int(doc["n_q"]), int(doc["seed"])


_XI_ALIASES = {"zero": "fixed_zero", "free": "constant_free"}
_ANGLE_ALIASES = {"exceedances": "exceedances_only", "all": "all_angles"}


@main.command("fit-exc")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--qfit", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--variant", type=click.Choice(["M1", "M2", "M3"]), default="M3", show_default=True)
@click.option("--xi", "xi_mode", type=click.Choice(["zero", "free", "fixed_zero", "constant_free"]), default="zero", show_default=True)
@click.option("--angles", type=click.Choice(["exceedances", "all", "exceedances_only", "all_angles"]), default="exceedances", show_default=True)
@click.option("--basis-k", type=click.IntRange(min=8), default=None)
@click.option("--draws", "--n-gl", "n_gl", type=click.IntRange(min=1), default=50, show_default=True, help="Field draws per quantile-set draw.")
@click.option("--seed", type=int, default=3, show_default=True)
@click.option("--margins", "margins_path", type=click.Path(exists=True, dir_okay=False), help="Margins JSON written by 'standardize --model'.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_jobs_option
def fit_exc(data, qfit, variant, xi_mode, angles, basis_k, n_gl, seed, margins_path, out, jobs):
    """Fit the exceedance model once per quantile-set draw."""
    s = _load_sample(data)
    fit, n_q, q_seed = _load_qfit(qfit)
    q_draws = posterior_quantile_sets(fit, n_q, q_seed)
    spec = ExceedanceModelSpec(variant, _XI_ALIASES.get(xi_mode, xi_mode), _ANGLE_ALIASES.get(angles, angles), basis_k)
    try:
        fits, registry = fit_exceedance_stage(s, fit.q, q_draws, spec, n_gl, seed, jobs)
    except PipelineError as exc:
        _fail(exc)
    settings = {"q": fit.q, "n_q": n_q, "n_gl": n_gl, "spec": vars(spec).copy(), "n": s.n, "seeds": {"qfit": q_seed, "exc": seed}}
    margins = None
    if margins_path:
        with open(margins_path, encoding="utf-8") as fh:
            margins = MarginSet.from_dict(json.load(fh)["margins"])
    ModelFile(margins, fit, fits, registry, settings).save(out)


def _write_set_outputs(out, radials: list[RadialFunction], alpha: float, band_path=None, svg_path=None) -> None:
    grid = radials[0].grid
    vals = np.array([r.values for r in radials])
    mean = RadialFunction(grid, np.log(vals.mean(axis=0)))
    write_radial_csv(out, mean)
    if band_path:
        if len(vals) < 200:
            raise click.ClickException(f"a simultaneous band needs at least 200 draws, have {len(vals)}")
        band = simultaneous_band(vals, alpha)
        x = grid.angles if grid.d == 2 else np.arange(grid.size, dtype=float)
        write_band_csv(band_path, x, band.lower, band.upper, vals.mean(axis=0), names=("angle" if grid.d == 2 else "node", "lower", "upper", "mean"))
    if svg_path:
        if grid.d != 2:
            raise click.ClickException("SVG output is only supported for d=2 (CSV written)")
        svg_polylines(svg_path, [mean.values[:, None] * grid.nodes])


@main.command("return-set")
@click.option("--excfit", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--T", "--period", "period", type=float, required=True, help="Return period.")
@click.option("--kind", type=click.Choice(["quantile", "isotropic"]), default="quantile", show_default=True)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Posterior-mean boundary CSV.")
@click.option("--band", "band_path", type=click.Path(dir_okay=False), help="Simultaneous band CSV.")
@click.option("--svg", "svg_path", type=click.Path(dir_okay=False), help="Boundary SVG (d=2).")
def return_set_cmd(excfit, period, kind, alpha, out, band_path, svg_path):
    """Boundary of the return set with period T, averaged over posterior draws."""
    model = _load_model(excfit)
    radials, skipped = [], 0
    for dr in model.model_draws():
        try:
            radials.append(return_set(dr, period, kind).boundary)
        except DomainError:
            skipped += 1
    if not radials:
        _fail(DomainError(f"no posterior draw admits a {kind} return set with T={period}"))
    if skipped:
        click.echo(f"{skipped} draws skipped (level below q_lower)", err=True)
    _write_set_outputs(out, radials, alpha, band_path, svg_path)


@main.command("iso-set")
@click.option("--excfit", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--q", "level", type=float, required=True)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Posterior-mean boundary CSV.")
@click.option("--band", "band_path", type=click.Path(dir_okay=False), help="Simultaneous band CSV.")
@click.option("--svg", "svg_path", type=click.Path(dir_okay=False), help="Boundary SVG (d=2).")
def iso_set_cmd(excfit, level, alpha, out, band_path, svg_path):
    """Isotropic probability set at level q."""
    model = _load_model(excfit)
    radials, skipped = [], 0
    for dr in model.model_draws():
        try:
            radials.append(isotropic_set(dr, level))
        except DomainError:
            skipped += 1
    if not radials:
        _fail(DomainError(f"no posterior draw admits an isotropic set at q={level}"))
    if skipped:
        click.echo(f"{skipped} draws skipped (level below q_lower)", err=True)
    _write_set_outputs(out, radials, alpha, band_path, svg_path)


@main.command()
@click.option("--excfit", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--box", required=True, help="Box corners 'a1,a2:b1,b2' (Laplace margins; 'inf' allowed).")
@click.option("--nw", type=click.IntRange(min=100), default=10_000, show_default=True)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--data", type=click.Path(exists=True, dir_okay=False), help="Sample for the interior count.")
@click.option("--out", type=click.Path(dir_okay=False), help="Write the estimate as JSON.")
def prob(excfit, box, nw, alpha, seed, data, out):
    """Posterior probability of a box region."""
    model = _load_model(excfit)
    a, b = _parse_box(box)
    sample = _load_sample(data) if data else None
    try:
        est = prob_posterior(model.model_draws(), region_from_box(a, b), nw, alpha, seed, sample=sample)
    except DomainError as exc:
        _fail(exc)
    text = json.dumps(est.to_dict(), indent=1, sort_keys=True)
    click.echo(text)
    if out:
        write_text_atomic(out, text + "\n")


@main.command()
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--excfit", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--m", type=click.IntRange(min=200), default=1000, show_default=True)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--n-draws", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--seed", type=int, default=4, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def diagnose(data, excfit, m, alpha, n_draws, seed, out):
    """K_B/K_C envelope diagnostics of the ball-transformed exceedances."""
    s = _load_sample(data)
    model = _load_model(excfit)
    try:
        diag = diagnose_draws(s, model.model_draws(), n_draws, m, alpha, seed)
    except (PipelineError, DomainError) as exc:
        _fail(exc)
    _write_diagnostics(Path(out), diag)
    if s.d == 2:
        from .plotting import plot_k_envelope

        for kind in ("ball", "sector"):
            for ext in ("png", "svg"):
                plot_k_envelope(diag.envelopes[kind], diag.curves[kind], s.d, path=Path(out) / f"k_{kind}.{ext}")
    click.echo(f"n*={diag.n_star} K_B pass {diag.pass_rate('ball'):.2f} K_C pass {diag.pass_rate('sector'):.2f}")


@main.command()
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--excfit", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--n", "n_total", type=click.IntRange(min=1), required=True)
@click.option("--reps", type=click.IntRange(min=1), default=200, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--original-margins", is_flag=True, help="Back-transform with the margins stored in the model file.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def resample(data, excfit, n_total, reps, seed, original_margins, out):
    """Hybrid bootstrap/model resamples, one CSV per replicate."""
    s = _load_sample(data)
    model = _load_model(excfit)
    if original_margins and model.margins is None:
        _fail(DomainError("the model file carries no marginal models"))
    draws = model.model_draws()
    ss = seed_sequence(seed)
    pick_rng = np.random.default_rng(ss.spawn(1)[0])
    out = Path(out)
    margins = "original" if original_margins else "laplace"
    for rep, child in enumerate(ss.spawn(reps)):
        dr = draws[int(pick_rng.integers(len(draws)))]
        plan = ResamplePlan(n_total, dr.q, s, margins, model.margins)
        try:
            res = hybrid_resample(s, dr, plan, child)
        except DomainError as exc:
            _fail(exc)
        write_points_csv(out / f"resample_{rep:04d}.csv", res.points)


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True, help="Laplace-margin data.")
@click.option("--m", type=click.IntRange(min=200), default=500, show_default=True)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, default=4, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def report(model_path, data, m, alpha, seed, out):
    """Tables and matplotlib figures for a fitted model."""
    from .plotting import render_report

    s = _load_sample(data)
    model = _load_model(model_path)
    draws = model.model_draws()
    out = Path(out)
    write_model_tables(out, model, draws, alpha)
    try:
        diag = diagnose_draws(s, draws, 20, m, alpha, seed)
        _write_diagnostics(out / "diag", diag)
    except (PipelineError, DomainError) as exc:
        click.echo(f"diagnostics skipped: {exc}", err=True)
        diag = None
    q_draws = list({id(f.r_q): f.r_q for f in model.exceedance_fits}.values())
    props = exceedance_proportions(s, q_draws)
    result = PipelineResult(model, s, props, diag, None, {})
    for path in render_report(result, out / "figures"):
        click.echo(str(path))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--no-figures", is_flag=True, help="Skip the matplotlib figures.")
@_jobs_option
def run(config_path, no_figures, jobs):
    """Full pipeline from a key=value config file."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        _fail(exc)
    try:
        result = run_pipeline(cfg, jobs=jobs, figures=not no_figures)
    except PipelineError as exc:
        _fail(exc)
    for k, v in result.summary.items():
        click.echo(f"{k}: {v}")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
