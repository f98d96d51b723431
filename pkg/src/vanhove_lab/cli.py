"""Command-line front end: sweeps, cross-checks, artifact emission.

Every command writes two or three files next to a common prefix:

* ``PREFIX.csv``  data rows under a documented header, ``.`` decimal,
  scientific notation with 17 significant digits;
* ``PREFIX.json`` run manifest (schema ``vanhove-lab/1``): the merged
  configuration, package versions, seeds, column documentation, fit
  reports, error summaries, wall time;
* ``PREFIX.svg``  optional plot of the sweep with the fitted asymptote
  overlaid (``--svg`` on sweep commands).

Configuration comes from an optional JSON file (``--config``) whose
keys are the command's option names with underscores; explicit
command-line flags win over the file, which wins over defaults.  The
manifest re-embeds the merged result, so a run is reproducible from
its own artifacts.  With ``--deterministic`` the wall-time field and
the SVG timestamp are suppressed and identical config plus seeds give
byte-identical CSV and JSON.

Exit codes: 0 success; 2 configuration or validation failure; 3
numerical non-convergence (any row with converged=false, or a
numerical failure mid-run).  The environment variable
``VANHOVE_LAB_THREADS`` caps sweep parallelism (default 1); nothing
else is read from the environment.  Output row order always follows
input order, whatever the completion order.
"""

from __future__ import annotations

import csv as csv_module
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import click
import numpy as np

from . import __version__, bubbles, dispersion, fitlab, geometry, selfenergy
from .errors import (
    InsufficientResolution,
    SingularDesign,
    VanHoveLabError,
    ZeroFrequency,
)
from .matsubara import ThermalState
from .quad import QuadSpec

__all__ = ["main"]


def _threads() -> int:
    raw = os.environ.get("VANHOVE_LAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"VANHOVE_LAB_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ValueError("VANHOVE_LAB_THREADS must be >= 1")
    return n


def _map_ordered(fn: Callable, items: Sequence):
    """Apply fn over items, in parallel when allowed, output in input order."""
    n = _threads()
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# formatting and artifact writers
# ---------------------------------------------------------------------------


def _fmt_cell(v) -> str:
    if isinstance(v, bool) or isinstance(v, np.bool_):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return "%d" % int(v)
    if isinstance(v, (float, np.floating)):
        return "%.16e" % float(v)
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _jsonable(v):
    """Recursively convert to JSON-safe values; non-finite floats to None."""
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else None
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if v is None or isinstance(v, str):
        return v
    return str(v)


def _write_manifest(path: Path, command: str, config: dict, columns: dict,
                    results: dict, seeds: dict, wall_time: float,
                    deterministic: bool) -> None:
    import importlib.metadata

    import mpmath
    import scipy

    manifest = {
        "schema": "vanhove-lab/1",
        "command": command,
        "config": _jsonable(config),
        "versions": {
            "vanhove_lab": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "mpmath": mpmath.__version__,
            "click": importlib.metadata.version("click"),
        },
        "seeds": _jsonable(seeds),
        "columns": columns,
        "results": _jsonable(results),
        "wall_time_s": None if deterministic else wall_time,
        "threads": None if deterministic else _threads(),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    dashed: bool = False
    markers: bool = True


@dataclass
class PlotSpec:
    title: str
    xlabel: str
    ylabel: str
    series: List[Series] = field(default_factory=list)
    logx: bool = True


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]


def _ticks_linear(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def _render_svg(path: Path, spec: PlotSpec, deterministic: bool) -> None:
    """Dependency-light sweep plot: axes, ticks, polylines, legend."""
    W, H = 720, 480
    ml, mr, mt, mb = 84, 24, 44, 58
    xs = np.concatenate([s.x for s in spec.series])
    ys = np.concatenate([s.y for s in spec.series])
    finite = np.isfinite(xs) & (xs > 0 if spec.logx else np.isfinite(xs))

    def tx(x):
        return np.log10(x) if spec.logx else x

    ux = tx(xs[finite])
    ulo, uhi = float(ux.min()), float(ux.max())
    if uhi <= ulo:
        uhi = ulo + 1.0
    ylo, yhi = float(np.nanmin(ys)), float(np.nanmax(ys))
    if yhi <= ylo:
        yhi = ylo + 1.0
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad

    def px(x):
        return ml + (tx(x) - ulo) / (uhi - ulo) * (W - ml - mr)

    def py(y):
        return H - mb - (y - ylo) / (yhi - ylo) * (H - mt - mb)

    out = ['<svg xmlns="http://www.w3.org/2000/svg" '
           f'width="{W}" height="{H}" viewBox="0 0 {W} {H}">']
    if not deterministic:
        out.append(f"<!-- rendered {time.strftime('%Y-%m-%dT%H:%M:%S')} -->")
    out.append(f'<rect width="{W}" height="{H}" fill="white"/>')
    out.append(f'<text x="{W/2:.1f}" y="24" text-anchor="middle" '
               f'font-family="sans-serif" font-size="15">{escape(spec.title)}</text>')
    axis = 'stroke="black" stroke-width="1"'
    out.append(f'<line x1="{ml}" y1="{H-mb}" x2="{W-mr}" y2="{H-mb}" {axis}/>')
    out.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{H-mb}" {axis}/>')

    if spec.logx:
        for d in range(math.floor(ulo), math.floor(uhi) + 1):
            if d < ulo - 1e-9 or d > uhi + 1e-9:
                continue
            x = px(10.0 ** d)
            out.append(f'<line x1="{x:.2f}" y1="{H-mb}" x2="{x:.2f}" '
                       f'y2="{H-mb+6}" {axis}/>')
            out.append(f'<text x="{x:.2f}" y="{H-mb+22}" text-anchor="middle" '
                       f'font-family="sans-serif" font-size="12">1e{d}</text>')
    else:
        for t in _ticks_linear(ulo, uhi):
            x = ml + (t - ulo) / (uhi - ulo) * (W - ml - mr)
            out.append(f'<line x1="{x:.2f}" y1="{H-mb}" x2="{x:.2f}" '
                       f'y2="{H-mb+6}" {axis}/>')
            out.append(f'<text x="{x:.2f}" y="{H-mb+22}" text-anchor="middle" '
                       f'font-family="sans-serif" font-size="12">{t:.4g}</text>')
    for t in _ticks_linear(ylo, yhi):
        y = py(t)
        out.append(f'<line x1="{ml-6}" y1="{y:.2f}" x2="{ml}" y2="{y:.2f}" {axis}/>')
        out.append(f'<text x="{ml-10}" y="{y+4:.2f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="12">{t:.4g}</text>')

    out.append(f'<text x="{(ml+W-mr)/2:.1f}" y="{H-12}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="13">{escape(spec.xlabel)}</text>')
    out.append(f'<text x="20" y="{(mt+H-mb)/2:.1f}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="13" '
               f'transform="rotate(-90 20 {(mt+H-mb)/2:.1f})">'
               f'{escape(spec.ylabel)}</text>')

    for i, s in enumerate(spec.series):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}"
                       for x, y in zip(s.x, s.y) if np.isfinite(y))
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="1.5"{dash}/>')
        if s.markers:
            for x, y in zip(s.x, s.y):
                if np.isfinite(y):
                    out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" '
                               f'r="3" fill="{color}"/>')
        ly = mt + 16 + 16 * i
        out.append(f'<line x1="{W-mr-150}" y1="{ly}" x2="{W-mr-120}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="1.5"{dash}/>')
        out.append(f'<text x="{W-mr-114}" y="{ly+4}" font-family="sans-serif" '
                   f'font-size="12">{escape(s.label)}</text>')
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def _merge_config(ctx: click.Context, params: dict) -> dict:
    """File value beats default, explicit flag beats file; flags win."""
    config_path = params.pop("config", None)
    file_cfg = {}
    if config_path is not None:
        try:
            file_cfg = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ValueError(f"cannot read config file {config_path}: {e}")
        if not isinstance(file_cfg, dict):
            raise ValueError("config file must hold a JSON object")
        unknown = sorted(set(file_cfg) - set(params))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    merged = {}
    from click.core import ParameterSource

    for name, value in params.items():
        source = ctx.get_parameter_source(name)
        if name in file_cfg and source in (ParameterSource.DEFAULT,
                                           ParameterSource.DEFAULT_MAP):
            v = file_cfg[name]
            merged[name] = tuple(v) if isinstance(value, tuple) \
                and isinstance(v, list) else v
        else:
            merged[name] = value
    return merged


def _grid(lo: float, hi: float, points: int, geometric: bool) -> np.ndarray:
    if points < 1:
        raise ValueError("grid needs at least one point")
    if not (lo > 0.0) and geometric:
        raise ValueError("geometric grid needs positive endpoints")
    if points == 1:
        return np.array([lo])
    if hi < lo:
        raise ValueError("grid maximum below minimum")
    return np.geomspace(lo, hi, points) if geometric \
        else np.linspace(lo, hi, points)


def _quad_spec(cfg: dict) -> QuadSpec:
    return QuadSpec(abs_tol=cfg["abs_tol"], rel_tol=cfg["rel_tol"],
                    max_evaluations=int(cfg["max_evals"]))


def _finish(cfg: dict, command: str, columns: dict, rows: list,
            results: dict, seeds: dict, t0: float,
            plot: Optional[PlotSpec] = None) -> int:
    prefix = Path(cfg["out_prefix"])
    if prefix.parent != Path(""):
        prefix.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(prefix.with_suffix(".csv"), list(columns), rows)
    _write_manifest(prefix.with_suffix(".json"), command, cfg, columns,
                    results, seeds, time.perf_counter() - t0,
                    cfg.get("deterministic", False))
    if plot is not None and cfg.get("svg", False):
        _render_svg(prefix.with_suffix(".svg"), plot,
                    cfg.get("deterministic", False))
    bad = results.get("non_converged_rows", 0)
    if bad:
        click.echo(f"non-convergence: {bad} row(s) with converged=false",
                   err=True)
        return 3
    return 0


def _run_guarded(ctx: click.Context, body: Callable[[], int]) -> None:
    try:
        code = body()
    except (ValueError, ZeroFrequency, SingularDesign,
            InsufficientResolution) as e:
        click.echo(f"error: {type(e).__name__}: {e}", err=True)
        code = 2
    except VanHoveLabError as e:
        click.echo(f"error: {type(e).__name__}: {e}", err=True)
        code = 3
    ctx.exit(code)


def _common_options(f):
    f = click.option("--config", type=click.Path(), default=None,
                     help="JSON file of option values; flags override it.")(f)
    f = click.option("--out-prefix", default="run",
                     help="Artifact prefix; writes PREFIX.csv/.json/.svg.")(f)
    f = click.option("--deterministic", is_flag=True, default=False,
                     help="Suppress wall time and SVG timestamp for "
                          "byte-identical artifacts.")(f)
    return f


def _quad_options(abs_tol: float, rel_tol: float, max_evals: int):
    def deco(f):
        f = click.option("--abs-tol", type=float, default=abs_tol,
                         show_default=True,
                         help="Absolute quadrature tolerance.")(f)
        f = click.option("--rel-tol", type=float, default=rel_tol,
                         show_default=True,
                         help="Relative quadrature tolerance.")(f)
        f = click.option("--max-evals", type=int, default=max_evals,
                         show_default=True,
                         help="Integrand evaluation budget per integral.")(f)
        return f
    return deco


def _q0_grid_options(lo: float, hi: float, points: int):
    def deco(f):
        f = click.option("--q0-min", type=float, default=lo, show_default=True,
                         help="Smallest frequency in the sweep.")(f)
        f = click.option("--q0-max", type=float, default=hi, show_default=True,
                         help="Largest frequency in the sweep.")(f)
        f = click.option("--q0-points", type=int, default=points,
                         show_default=True, help="Number of sweep points.")(f)
        f = click.option("--geometric/--linear", "geometric", default=True,
                         show_default=True,
                         help="Spacing of the sweep grid.")(f)
        return f
    return deco


def _svg_option(f):
    return click.option("--svg", is_flag=True, default=False,
                        help="Also write PREFIX.svg with the sweep plot.")(f)


# ---------------------------------------------------------------------------
# the command group
# ---------------------------------------------------------------------------


@click.group()
@click.version_option(version=__version__, prog_name="vanhove-lab")
def main() -> None:
    """Numerical laboratory for a two-dimensional fermion system whose
    Fermi surface carries a Van Hove saddle: second-order self-energy
    sweeps, one-loop bubbles, Fermi-surface geometry experiments, and
    log-polynomial asymptote fits.

    Commands write PREFIX.csv (data, documented header), PREFIX.json
    (manifest, schema vanhove-lab/1) and optionally PREFIX.svg.  Exit
    codes: 0 success, 2 invalid configuration, 3 numerical
    non-convergence.
    """


@main.command("sigma2")
@_common_options
@_q0_grid_options(0.3, 0.3, 1)
@click.option("--q", nargs=2, type=float, default=(0.0, 0.0), show_default=True,
              help="Momentum measured from the saddle.")
@click.option("--beta", type=float, default=8.0, show_default=True,
              help="Inverse temperature.")
@_quad_options(2e-3, 2e-3, 2_000_000)
@_svg_option
@click.pass_context
def cmd_sigma2(ctx, **params):
    """Second-order self-energy by direct 4D quadrature, swept over q0.

    Columns: q0, re_value, im_value, error_estimate, evaluations,
    converged.
    """
    def body() -> int:
        t0 = time.perf_counter()
        cfg = _merge_config(ctx, params)
        grid = _grid(cfg["q0_min"], cfg["q0_max"], cfg["q0_points"],
                     cfg["geometric"])
        state = ThermalState.finite(cfg["beta"])
        spec = _quad_spec(cfg)
        q = np.asarray(cfg["q"], dtype=float)
        if q.shape != (2,):
            raise ValueError("q must be a 2-vector")

        def one(q0: float):
            return selfenergy.sigma2(q0, q, state, spec)

        points = _map_ordered(one, list(grid))
        rows = [(p.q0, p.value.real, p.value.imag, p.error_estimate,
                 p.evaluations, p.converged) for p in points]
        columns = {
            "q0": "external frequency",
            "re_value": "real part of the self-energy",
            "im_value": "imaginary part of the self-energy",
            "error_estimate": "quadrature error estimate",
            "evaluations": "integrand evaluations used",
            "converged": "quadrature met its tolerance",
        }
        results = {
            "max_error_estimate": max(p.error_estimate for p in points),
            "non_converged_rows": sum(not p.converged for p in points),
        }
        plot = PlotSpec(
            title="second-order self-energy at fixed momentum",
            xlabel="q0", ylabel="value",
            series=[
                Series("re", grid, np.array([p.value.real for p in points])),
                Series("im", grid, np.array([p.value.imag for p in points])),
            ])
        return _finish(cfg, "sigma2", columns, rows, results, {}, t0, plot)

    _run_guarded(ctx, body)


@main.command("dsigma-domega")
@_common_options
@_q0_grid_options(1e-6, 1e-2, 9)
@click.option("--method", type=click.Choice(["reduced", "orthant4d", "cube4d"]),
              default="reduced", show_default=True,
              help="Evaluation route for the frequency derivative.")
@_quad_options(1e-8, 1e-8, 4_000_000)
@_svg_option
@click.pass_context
def cmd_dsigma_domega(ctx, **params):
    """Imaginary part of the frequency derivative of the self-energy at
    the saddle, swept over q0, with an a (ln q0)^2 + b ln q0 + c fit.

    Columns: q0, value, error_estimate, evaluations, converged.
    """
    def body() -> int:
        t0 = time.perf_counter()
        cfg = _merge_config(ctx, params)
        grid = _grid(cfg["q0_min"], cfg["q0_max"], cfg["q0_points"],
                     cfg["geometric"])
        spec = _quad_spec(cfg)

        def one(q0: float):
            return selfenergy.im_d0_sigma2(q0, spec, method=cfg["method"])

        points = _map_ordered(one, list(grid))
        rows = [(p.q0, p.value.real, p.error_estimate, p.evaluations,
                 p.converged) for p in points]
        columns = {
            "q0": "external frequency",
            "value": "imaginary part of the frequency derivative",
            "error_estimate": "quadrature error estimate",
            "evaluations": "integrand evaluations used",
            "converged": "quadrature met its tolerance",
        }
        results = {
            "max_error_estimate": max(p.error_estimate for p in points),
            "non_converged_rows": sum(not p.converged for p in points),
        }
        plot = PlotSpec(title="frequency derivative at the saddle",
                        xlabel="q0", ylabel="Im d/dq0",
                        series=[Series("sweep", grid,
                                       np.array([r[1] for r in rows]))])
        if len(rows) >= 5:
            fit = fitlab.fit_log_square([(r[0], r[1]) for r in rows])
            results["fit"] = fit.to_dict()
            dense = np.geomspace(grid[0], grid[-1], 200)
            plot.series.append(Series("fit", dense, fit.predict(dense),
                                      dashed=True, markers=False))
        return _finish(cfg, "dsigma-domega", columns, rows, results, {}, t0,
                       plot)

    _run_guarded(ctx, body)


@main.command("grad-check")
@_common_options
@click.option("--q0", type=float, default=0.1, show_default=True,
              help="External frequency.")
@click.option("--beta", "betas", type=float, multiple=True,
              default=(2.0, 8.0, 32.0), show_default=True,
              help="Inverse temperatures (repeatable).")
@_quad_options(5e-5, 5e-5, 4_000_000)
@click.pass_context
def cmd_grad_check(ctx, **params):
    """Momentum gradient of the self-energy at the saddle; it must
    vanish by reflection symmetry at every temperature.

    Columns: beta, q0, re_g1, im_g1, re_g2, im_g2, error_1, error_2,
    evaluations, converged.
    """
    def body() -> int:
        t0 = time.perf_counter()
        cfg = _merge_config(ctx, params)
        if not cfg["betas"]:
            raise ValueError("need at least one --beta")
        spec = _quad_spec(cfg)

        def one(beta: float):
            state = ThermalState.finite(beta)
            return beta, selfenergy.grad_sigma2_at_vh(cfg["q0"], state, spec)

        out = _map_ordered(one, list(cfg["betas"]))
        rows = [(beta, cfg["q0"], g.value[0].real, g.value[0].imag,
                 g.value[1].real, g.value[1].imag, g.error_estimate[0],
                 g.error_estimate[1], g.evaluations, g.converged)
                for beta, g in out]
        columns = {
            "beta": "inverse temperature",
            "q0": "external frequency",
            "re_g1": "real part, first momentum component",
            "im_g1": "imaginary part, first momentum component",
            "re_g2": "real part, second momentum component",
            "im_g2": "imaginary part, second momentum component",
            "error_1": "error estimate, first component",
            "error_2": "error estimate, second component",
            "evaluations": "integrand evaluations used",
            "converged": "quadrature met its tolerance",
        }
        max_abs = max(max(abs(g.value[0]), abs(g.value[1])) for _, g in out)
        max_err = max(max(g.error_estimate) for _, g in out)
        results = {
            "max_abs_component": max_abs,
            "max_error_estimate": max_err,
            "zero_within_10_sigma": bool(max_abs <= 10.0 * max(max_err, 1e-300)),
            "non_converged_rows": sum(not g.converged for _, g in out),
        }
        return _finish(cfg, "grad-check", columns, rows, results, {}, t0)

    _run_guarded(ctx, body)


@main.command("d2-xieta")
@_common_options
@_q0_grid_options(1e-5, 1e-2, 9)
@click.option("--zeta12-method", type=click.Choice(["reduced", "zform"]),
              default="reduced", show_default=True,
              help="Route for the boundary-bracket piece.")
@_quad_options(1e-8, 1e-8, 4_000_000)
@_svg_option
@click.pass_context
def cmd_d2_xieta(ctx, **params):
    """Mixed second momentum derivative at the saddle, zero
    temperature, swept over q0, with log-polynomial fit.

    Columns: q0, value, zeta11, zeta12, error_estimate, evaluations,
    converged.
    """
    def body() -> int:
        t0 = time.perf_counter()
        cfg = _merge_config(ctx, params)
        grid = _grid(cfg["q0_min"], cfg["q0_max"], cfg["q0_points"],
                     cfg["geometric"])
        spec = _quad_spec(cfg)

        def one(q0: float):
            return selfenergy.d2_sigma2_xi_eta(
                q0, spec, zeta12_method=cfg["zeta12_method"])

        points = _map_ordered(one, list(grid))
        rows = [(p.q0, p.value.real, float(np.real(p.pieces["zeta11"])),
                 float(np.real(p.pieces["zeta12"])), p.error_estimate,
                 p.evaluations, p.converged) for p in points]
        columns = {
            "q0": "external frequency",
            "value": "mixed second derivative (real)",
            "zeta11": "interior piece",
            "zeta12": "boundary piece",
            "error_estimate": "quadrature error estimate",
            "evaluations": "integrand evaluations used",
            "converged": "quadrature met its tolerance",
        }
        results = {
            "max_error_estimate": max(p.error_estimate for p in points),
            "non_converged_rows": sum(not p.converged for p in points),
        }
        plot = PlotSpec(title="mixed second derivative at the saddle",
                        xlabel="q0", ylabel="value",
                        series=[Series("sweep", grid,
                                       np.array([r[1] for r in rows]))])
        if len(rows) >= 5:
            fit = fitlab.fit_log_square([(r[0], r[1]) for r in rows])
            results["fit"] = fit.to_dict()
            dense = np.geomspace(grid[0], grid[-1], 200)
            plot.series.append(Series("fit", dense, fit.predict(dense),
                                      dashed=True, markers=False))
        return _finish(cfg, "d2-xieta", columns, rows, results, {}, t0, plot)

    _run_guarded(ctx, body)


@main.command("d2-xixi")
@_common_options
@_q0_grid_options(1e-5, 1e-2, 9)
@click.option("--with-imaginary", is_flag=True, default=False,
              help="Also integrate the imaginary-part pieces "
                   "(adds columns, slower).")
@_quad_options(1e-8, 1e-8, 4_000_000)
@_svg_option
@click.pass_context
def cmd_d2_xixi(ctx, **params):
    """Pure second momentum derivative profile at the saddle, zero
    temperature, swept over q0, with log-polynomial fit.

    Columns: q0, value, b0_term, i20_term, error_estimate, evaluations,
    converged; --with-imaginary appends im_value, im_x1, im_i20, im_x3.
    """
    def body() -> int:
        t0 = time.perf_counter()
        cfg = _merge_config(ctx, params)
        grid = _grid(cfg["q0_min"], cfg["q0_max"], cfg["q0_points"],
                     cfg["geometric"])
        spec = _quad_spec(cfg)
        with_im = cfg["with_imaginary"]

        def one(q0: float):
            return selfenergy.d2_sigma2_xi_xi(q0, spec,
                                              include_imaginary=with_im)

        points = _map_ordered(one, list(grid))
        columns = {
            "q0": "external frequency",
            "value": "assembled bounded-growth profile (real)",
            "b0_term": "closed-form boundary piece",
            "i20_term": "real interior piece",
            "error_estimate": "quadrature error estimate",
            "evaluations": "integrand evaluations used",
            "converged": "quadrature met its tolerance",
        }
        if with_im:
            columns.update({
                "im_value": "imaginary part of the derivative",
                "im_x1": "triple-pole piece",
                "im_i20": "interior piece, imaginary part",
                "im_x3": "double-pole boundary piece",
            })
        rows = []
        for p in points:
            row = [p.q0, p.value.real, float(p.pieces["b0"]),
                   float(p.pieces["re_i20"]), p.error_estimate, p.evaluations,
                   p.converged]
            if with_im:
                row += [p.value.imag, float(p.pieces["im_x1"]),
                        float(p.pieces["im_i20"]), float(p.pieces["im_x3"])]
            rows.append(tuple(row))
        results = {
            "max_error_estimate": max(p.error_estimate for p in points),
            "non_converged_rows": sum(not p.converged for p in points),
        }
        plot = PlotSpec(title="pure second derivative profile at the saddle",
                        xlabel="q0", ylabel="value",
                        series=[Series("sweep", grid,
                                       np.array([r[1] for r in rows]))])
        if len(rows) >= 5:
            fit = fitlab.fit_log_square([(r[0], r[1]) for r in rows])
            results["fit"] = fit.to_dict()
            dense = np.geomspace(grid[0], grid[-1], 200)
            plot.series.append(Series("fit", dense, fit.predict(dense),
                                      dashed=True, markers=False))
        return _finish(cfg, "d2-xixi", columns, rows, results, {}, t0, plot)

    _run_guarded(ctx, body)


def _bubble_body(ctx, params, kind: str) -> None:
    def body() -> int:
        t0 = time.perf_counter()
        cfg = _merge_config(ctx, params)
        grid = _grid(cfg["beta_min"], cfg["beta_max"], cfg["beta_points"],
                     cfg["geometric"])
        points = _map_ordered(lambda b: bubbles.bubble_result(kind, b),
                              list(grid))
        rows = [(r.kind, r.beta, r.value, r.asymptotic_prediction, r.residual)
                for r in points]
        columns = {
            "kind": "bubble channel (ph or pp)",
            "beta": "inverse temperature",
            "value": "exact 1D-reduced bubble value",
            "prediction": "large-beta asymptotic prediction",
            "residual": "value minus prediction",
        }
        results = {
            "K": bubbles.k_constant(),
            "K_prime": bubbles.k_prime_constant(),
            "max_abs_residual": max(abs(r.residual) for r in points),
            "non_converged_rows": 0,
        }
        plot = PlotSpec(title=f"{kind} bubble against asymptotic prediction",
                        xlabel="beta", ylabel="value",
                        series=[
                            Series("value", grid,
                                   np.array([r.value for r in points])),
                            Series("prediction", grid,
                                   np.array([r.asymptotic_prediction
                                             for r in points]),
                                   dashed=True, markers=False),
                        ])
        return _finish(cfg, f"bubble-{kind}", columns, rows, results, {}, t0,
                       plot)

    _run_guarded(ctx, body)


def _beta_grid_options(f):
    f = click.option("--beta-min", type=float, default=10.0, show_default=True,
                     help="Smallest inverse temperature.")(f)
    f = click.option("--beta-max", type=float, default=80.0, show_default=True,
                     help="Largest inverse temperature.")(f)
    f = click.option("--beta-points", type=int, default=4, show_default=True,
                     help="Number of grid points.")(f)
    f = click.option("--geometric/--linear", "geometric", default=True,
                     show_default=True, help="Spacing of the beta grid.")(f)
    return f


@main.command("bubble-ph")
@_common_options
@_beta_grid_options
@_svg_option
@click.pass_context
def cmd_bubble_ph(ctx, **params):
    """Density-channel bubble over a beta grid, next to its
    -2 ln(beta) + 2K prediction.

    Columns: kind, beta, value, prediction, residual.
    """
    _bubble_body(ctx, params, "ph")


@main.command("bubble-pp")
@_common_options
@_beta_grid_options
@_svg_option
@click.pass_context
def cmd_bubble_pp(ctx, **params):
    """Pairing-channel bubble over a beta grid, next to its
    (ln beta)^2 - 2K ln(beta) + K' prediction.

    Columns: kind, beta, value, prediction, residual.
    """
    _bubble_body(ctx, params, "pp")


def _model_from(cfg: dict) -> dispersion.DispersionModel:
    if cfg["model"] == "hubbard":
        return dispersion.DispersionModel.hubbard(cfg["theta"], cfg["mu"])
    return dispersion.DispersionModel.xy()


@main.command("overlap")
@_common_options
@click.option("--model", type=click.Choice(["hubbard", "xy"]),
              default="hubbard", show_default=True)
@click.option("--theta", type=float, default=0.3, show_default=True,
              help="Next-neighbor hopping ratio (hubbard model).")
@click.option("--mu", type=float, default=0.0, show_default=True,
              help="Chemical potential measured from the Van Hove level.")
@click.option("--scale", "m_scale", type=float, default=2.0, show_default=True,
              help="Threshold scale M; thresholds are M^j.")
@click.option("--j-min", type=int, default=-6, show_default=True,
              help="Most negative threshold exponent; sweep is -1..j_min.")
@click.option("--num-p", type=int, default=40, show_default=True,
              help="Number of random translation momenta.")
@click.option("--delta", type=float, default=0.1, show_default=True,
              help="Distance floor entering the length bound.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="RNG seed for the translation samples.")
@click.option("--sign", type=click.Choice(["+1", "-1"]), default="+1",
              show_default=True, help="Sign of the translated curve.")
@click.pass_context
def cmd_overlap(ctx, **params):
    """Length-of-overlap scaling experiment: arc length of the Fermi
    curve where the translated dispersion stays within M^j, against
    the (M^j / delta)^(1/n0) bound.

    Columns: p_x, p_y, j, length, bound, violated.
    """
    def body() -> int:
        t0 = time.perf_counter()
        cfg = _merge_config(ctx, params)
        if cfg["j_min"] >= 0:
            raise ValueError("--j-min must be negative")
        model = _model_from(cfg)
        j_range = list(range(-1, cfg["j_min"] - 1, -1))
        report = geometry.overlap_scaling_experiment(
            model, M=cfg["m_scale"], j_range=j_range, num_p=cfg["num_p"],
            delta=cfg["delta"], rng_seed=cfg["seed"])
        sign = +1 if cfg["sign"] == "+1" else -1
        rows = list(report.rows(sign=sign))
        columns = {
            "p_x": "translation momentum, first component",
            "p_y": "translation momentum, second component",
            "j": "threshold exponent; threshold is M^j",
            "length": "measured overlap arc length",
            "bound": "scaling bound (M^j/delta)^(1/n0)",
            "violated": "length exceeds the bound",
        }
        viol = report.violation_fraction if sign == +1 \
            else report.violation_fraction_minus
        results = {
            "total_curve_length": report.total_curve_length,
            "n0": report.n0,
            "fitted_exponent": report.fitted_exponent,
            "fitted_exponent_minus": report.fitted_exponent_minus,
            "violation_fraction_per_j": viol,
            "non_converged_rows": 0,
        }
        return _finish(cfg, "overlap", columns, rows, results,
                       {"rng_seed": cfg["seed"]}, t0)

    _run_guarded(ctx, body)


@main.command("normal-form")
@_common_options
@click.option("--model", type=click.Choice(["hubbard", "xy"]),
              default="hubbard", show_default=True)
@click.option("--theta", type=float, default=0.3, show_default=True)
@click.option("--mu", type=float, default=0.0, show_default=True)
@click.option("--radius", type=float, default=0.1, show_default=True,
              help="Half-width of the factorization patch.")
@click.option("--grid", type=int, default=41, show_default=True,
              help="Nodes per side of the factorization grid.")
@click.pass_context
def cmd_normal_form(ctx, **params):
    """Saddle points of the dispersion and their product normal forms
    e = a(k) (k1 - k2^nu1 b)(k2 - k1^nu2 c) on a patch.

    Columns: k1, k2, lambda1, lambda2, nu1, nu2, radius, max_residual.
    """
    def body() -> int:
        t0 = time.perf_counter()
        cfg = _merge_config(ctx, params)
        model = _model_from(cfg)
        saddles = dispersion.find_singular_points(model)
        if not saddles:
            raise ValueError("no saddle points found for this model")
        rows = []
        worst = 0.0
        for p in saddles:
            nf = dispersion.morse_normal_form(model, p, radius=cfg["radius"],
                                              grid=cfg["grid"])
            worst = max(worst, nf.max_residual)
            rows.append((p.location[0], p.location[1],
                         p.hessian_eigenvalues[0], p.hessian_eigenvalues[1],
                         -1 if nf.nu1 is None else nf.nu1,
                         -1 if nf.nu2 is None else nf.nu2,
                         nf.radius, nf.max_residual))
        columns = {
            "k1": "saddle location, first component",
            "k2": "saddle location, second component",
            "lambda1": "Hessian eigenvalue",
            "lambda2": "Hessian eigenvalue",
            "nu1": "branch tangency order, first factor (-1: linear)",
            "nu2": "branch tangency order, second factor (-1: linear)",
            "radius": "patch half-width used",
            "max_residual": "largest factorization residual on the patch",
        }
        results = {"num_saddles": len(rows), "max_residual": worst,
                   "non_converged_rows": 0}
        return _finish(cfg, "normal-form", columns, rows, results, {}, t0)

    _run_guarded(ctx, body)


def _interval_corpus(seed: int, per_k: int):
    """Deterministic polynomial corpus satisfying the derivative bound.

    Each entry fixes the k-th derivative to a quadratic s (A + B u +
    C u^2) with A - |B| - |C| >= 1, so s times that margin is a valid
    eta, then integrates k times with bounded random constants.
    """
    from numpy.polynomial import Polynomial

    rng = np.random.default_rng(seed)
    corpus = []
    ident = 0
    for k in (1, 2, 3):
        for _ in range(per_k):
            s = 10.0 ** rng.uniform(-1.0, 1.0)
            A = 1.5 + rng.uniform(0.0, 1.0)
            B = rng.uniform(-0.25, 0.25)
            C = rng.uniform(-0.25, 0.25)
            g = Polynomial([A * s, B * s, C * s])
            eta = s * (A - abs(B) - abs(C)) * 0.999
            f = g.integ(k, k=list(rng.uniform(-1.0, 1.0, size=k)))
            eps = eta * 10.0 ** rng.uniform(-3.0, -1.0)
            corpus.append((ident, k, eta, eps, f))
            ident += 1
    return corpus


@main.command("interval-check")
@_common_options
@click.option("--per-k", type=int, default=25, show_default=True,
              help="Corpus polynomials per derivative order k in {1,2,3}.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="RNG seed for the corpus.")
@click.option("--grid", type=int, default=200_000, show_default=True,
              help="Sample points for the sublevel-measure estimate.")
@click.pass_context
def cmd_interval_check(ctx, **params):
    """Sublevel-set measure against the derivative-bound estimate
    2^(k+1) (eps/eta)^(1/k) on a bundled polynomial corpus.

    Columns: poly_id, k, eta, eps, measured_volume, bound, holds.
    """
    def body() -> int:
        t0 = time.perf_counter()
        cfg = _merge_config(ctx, params)
        if cfg["per_k"] < 1:
            raise ValueError("--per-k must be positive")
        corpus = _interval_corpus(cfg["seed"], cfg["per_k"])

        def one(entry):
            ident, k, eta, eps, f = entry
            r = geometry.interval_lemma_check(f, k, eta, eps,
                                              grid=cfg["grid"])
            return (ident, k, eta, eps, r.measured_volume, r.bound, r.holds)

        rows = _map_ordered(one, corpus)
        columns = {
            "poly_id": "corpus index",
            "k": "derivative order with the lower bound",
            "eta": "derivative lower bound",
            "eps": "sublevel threshold",
            "measured_volume": "measured |{x : |f(x)| <= eps}|",
            "bound": "2^(k+1) (eps/eta)^(1/k)",
            "holds": "measured volume within the bound",
        }
        results = {
            "rows": len(rows),
            "all_hold": bool(all(r[6] for r in rows)),
            "non_converged_rows": 0,
        }
        return _finish(cfg, "interval-check", columns, rows, results,
                       {"rng_seed": cfg["seed"]}, t0)

    _run_guarded(ctx, body)


@main.command("fit")
@_common_options
@click.option("--input", "input_path", type=click.Path(), required=True,
              help="CSV file holding the sweep to fit.")
@click.option("--x-column", default="q0", show_default=True,
              help="Header name of the swept variable.")
@click.option("--y-column", default="value", show_default=True,
              help="Header name of the fitted quantity.")
@_svg_option
@click.pass_context
def cmd_fit(ctx, **params):
    """Fit a (ln x)^2 + b ln x + c to two columns of an existing CSV.

    Columns: x, y, fitted, residual.
    """
    def body() -> int:
        t0 = time.perf_counter()
        cfg = _merge_config(ctx, params)
        path = Path(cfg["input_path"])
        if not path.exists():
            raise ValueError(f"input file {path} does not exist")
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv_module.DictReader(fh)
            fields = reader.fieldnames or []
            for name in (cfg["x_column"], cfg["y_column"]):
                if name not in fields:
                    raise ValueError(
                        f"column {name!r} not in input header {fields}")
            try:
                samples = [(float(rec[cfg["x_column"]]),
                            float(rec[cfg["y_column"]])) for rec in reader]
            except (TypeError, KeyError):
                raise ValueError("input rows are ragged")

        fit = fitlab.fit_log_square(samples)
        samples.sort()
        rows = [(x, y, float(fit.predict(x)), y - float(fit.predict(x)))
                for x, y in samples]
        columns = {
            "x": "swept variable",
            "y": "input values",
            "fitted": "fit evaluated at x",
            "residual": "y minus fitted",
        }
        results = {"fit": fit.to_dict(), "non_converged_rows": 0}
        x = np.array([r[0] for r in rows])
        plot = PlotSpec(title="log-polynomial fit", xlabel=cfg["x_column"],
                        ylabel=cfg["y_column"],
                        series=[Series("data", x,
                                       np.array([r[1] for r in rows]))])
        dense = np.geomspace(x.min(), x.max(), 200)
        plot.series.append(Series("fit", dense, fit.predict(dense),
                                  dashed=True, markers=False))
        return _finish(cfg, "fit", columns, rows, results, {}, t0, plot)

    _run_guarded(ctx, body)


if __name__ == "__main__":
    main()
