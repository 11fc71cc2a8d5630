"""Command-line interface for the critical-set laboratory."""

import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
from loguru import logger

from src.config import load_lab_config
from src.errors import LabError
from src.laboratory import Laboratory, parse_radius


def setup_logging(debug: bool = False):
    """Setup logging configuration."""
    log_level = "DEBUG" if debug else "INFO"
    logger.remove()
    logger.add(
        sys.stderr,
        format="<level>{level: <8}</level> | {name}:{function}:{line} - {message}",
        level=log_level
    )
    logger.add(
        "critlab.log",
        format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
        level=log_level,
        rotation="500 MB"
    )


def _radii(values: str) -> List[Any]:
    return [parse_radius(v) for v in values.split(",") if v.strip()]


def _report(title: str, result: Dict[str, Any], lines: Optional[List[str]] = None):
    """Print a result block and exit 1 unless every invariant passed."""
    click.echo("\n" + "=" * 60)
    click.echo(title)
    click.echo("=" * 60)
    if result["status"] == "success":
        click.secho("✓ All checks passed", fg="green", bold=True)
    elif result["status"] == "failed":
        click.secho("✗ Invariant violations: " + ", ".join(result["violations"]), fg="red", bold=True)
    else:
        click.secho(f"✗ Error in {result['stage']}", fg="red", bold=True)
        click.echo(f"Error: {result.get('error', 'Unknown error')}")
    for line in lines or []:
        click.echo(line)
    for path in result.get("outputs", []):
        click.echo(f"  wrote {path}")
    click.echo("=" * 60)
    if result["status"] != "success":
        sys.exit(1)


@click.group()
@click.option("--seed", type=int, default=None, help="Seed for every random draw")
@click.option("--config", "config_path", type=click.Path(exists=True), help="YAML presets or overrides")
@click.option("--preset", default=None, help="Named preset inside the --config file")
@click.option("--out", type=click.Path(), default=None, help="Output directory")
@click.option("--jobs", type=int, default=None, help="Parallel workers")
@click.option("--debug", is_flag=True, help="Enable debug mode")
@click.pass_context
def cli(ctx, seed, config_path, preset, out, jobs, debug):
    """Critical Set Laboratory: frequency, effective sets and coverings of harmonic functions."""
    setup_logging(debug)
    ctx.ensure_object(dict)
    overrides: Dict[str, Any] = {}
    if seed is not None:
        overrides["run.seed"] = seed
    if out is not None:
        overrides["run.out_dir"] = out
    if jobs is not None:
        overrides["run.jobs"] = jobs
    try:
        ctx.obj["config"] = load_lab_config(Path(config_path) if config_path else None, preset, overrides)
    except LabError as e:
        click.secho(f"✗ Invalid configuration: {e}", fg="red", bold=True)
        sys.exit(1)
    ctx.obj["debug"] = debug


def _lab(ctx) -> Laboratory:
    return Laboratory(ctx.obj["config"])


def _run(ctx, title: str, action, render=None):
    try:
        result = action(_lab(ctx))
    except Exception as e:
        click.secho(f"✗ Failed: {e}", fg="red", bold=True)
        logger.exception(f"{title} failed")
        sys.exit(1)
    _report(title, result, render(result) if render and result["status"] != "error" else None)


@cli.command()
@click.argument("n", type=int)
@click.argument("d", type=int)
@click.pass_context
def basis(ctx, n, d):
    """Basis of homogeneous harmonic polynomials of degree D in N variables."""
    _run(ctx, "HARMONIC BASIS", lambda lab: lab.basis(n, d),
         lambda r: [f"Elements: {r['count']} (dimension {r['dimension']})"])


@cli.command("freq-profile")
@click.argument("source")
@click.option("--x", default=None, help="Center, comma separated (default: base point)")
@click.option("--radii", default=None, help="Comma-separated radii (default: profile grid)")
@click.pass_context
def freq_profile(ctx, source, x, radii):
    """Frequency profile N(x, r) and height h(r) as CSV."""
    center = _radii(x) if x else None
    _run(ctx, "FREQUENCY PROFILE", lambda lab: lab.frequency_profile(source, center, _radii(radii) if radii else None),
         lambda r: [f"Rows: {r['points']}"])


@cli.command("pinch-check")
@click.argument("source")
@click.option("--r2", default="1/21", help="Inner radius")
@click.option("--r1", default="1", help="Outer radius")
@click.option("--eps", type=float, default=1e-3, help="Pinch tolerance")
@click.pass_context
def pinch_check(ctx, source, r2, r1, eps):
    """Pinching, frequency ODE, dominant degree and tangent uniqueness."""
    _run(ctx, "PINCH CHECK", lambda lab: lab.pinch_check(source, parse_radius(r2), parse_radius(r1), eps),
         lambda r: [f"Pinch: {r['pinch']:.6e}"])


def _volume_lines(result):
    lines = [f"Volumes: {', '.join(f'{v:.4e}' for v in result['volumes'])}"]
    if result.get("slope") is not None:
        lines.append(f"Log-log slope: {result['slope']:.3f}")
    return lines


@cli.command("critical-scan")
@click.argument("source")
@click.option("--r", "radii", default="1/16,1/32", help="Comma-separated radii")
@click.option("--mode", type=click.Choice(["critical", "singular", "frequency"]), default="critical")
@click.pass_context
def critical_scan(ctx, source, radii, mode):
    """Effective critical (or singular) set masks and Minkowski volumes."""
    _run(ctx, "CRITICAL SCAN", lambda lab: lab.critical_scan(source, [float(v) for v in _radii(radii)], mode),
         _volume_lines)


@cli.command("nodal-scan")
@click.argument("source")
@click.option("--r", "radii", default="1/16,1/32", help="Comma-separated radii")
@click.pass_context
def nodal_scan(ctx, source, radii):
    """Effective nodal set masks and Minkowski volumes."""
    _run(ctx, "NODAL SCAN", lambda lab: lab.nodal_scan(source, [float(v) for v in _radii(radii)]), _volume_lines)


@cli.command("volume-scan")
@click.argument("source")
@click.option("--r", "radii", default="1/16,1/32,1/64", help="Comma-separated radii")
@click.option("--mode", type=click.Choice(["C", "S", "Z", "F"]), default="C")
@click.pass_context
def volume_scan(ctx, source, radii, mode):
    """Volume rows and fitted scaling exponent."""
    _run(ctx, "VOLUME SCAN", lambda lab: lab.volume_scan(source, [float(v) for v in _radii(radii)], mode),
         _volume_lines)


@cli.command()
@click.argument("source")
@click.option("--lam", type=float, required=True, help="Frequency bound on the input ball")
@click.option("--r", "r", default="1/16", help="Terminal scale")
@click.option("--radius", type=float, default=0.5, help="Input ball radius")
@click.pass_context
def cover(ctx, source, lam, r, radius):
    """Recursive degree-descending covering of S_r."""
    def render(result):
        lines = [
            f"Levels: {result['levels']}  terminal balls: {result['terminal']}  "
            f"escapes: {result['escapes']}  excluded: {result['excluded']}"
        ]
        lines.append(f"{'level':>5} {'balls':>7} {'terminal':>9} {'degree':>7} {'mass':>12}")
        lines += [f"{j:>5} {b:>7} {t:>9} {d:>7} {m:>12.4e}" for j, b, t, d, m in result["table"]]
        return lines

    _run(ctx, "COVERING", lambda lab: lab.cover(source, lam, float(parse_radius(r)), radius), render)


@cli.command()
@click.argument("source")
@click.option("--radius", type=float, default=None, help="Only count points in B(0, radius)")
@click.pass_context
def count2d(ctx, source, radius):
    """Critical points of a planar harmonic expansion."""
    _run(ctx, "CRITICAL POINTS", lambda lab: lab.count2d(source, radius),
         lambda r: [f"Critical points (with multiplicity): {r['count']}"])


@cli.command()
@click.argument("problem")
@click.pass_context
def elliptic(ctx, problem):
    """Solve an elliptic problem and check its frequency and harmonic approximation."""
    _run(ctx, "ELLIPTIC", lambda lab: lab.elliptic(problem),
         lambda r: [f"Generalized frequency: {', '.join(f'{v:.6f}' for v in r['frequencies'])}",
                    f"Monotonicity constant: {r['monotonicity_constant']:.3e}"])


@cli.command()
def version():
    """Show version information."""
    from . import __version__
    click.echo(f"Critical Set Laboratory v{__version__}")


def main():
    """Main entry point."""
    cli(obj={})


if __name__ == "__main__":
    main()
