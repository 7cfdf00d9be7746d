#!/usr/bin/env python3
"""
Thermo-Poroelastic Wave Simulator CLI
Command-line entry point: manufactured-solution convergence studies,
physical simulations, snapshot comparison, configuration checks and
Voronoi mesh generation.
"""

import logging
import os
import sys
from dataclasses import replace
from typing import Optional

import click

from config_service import ConfigService, RunConfig
from poly_mesh import regularity_report, voronoi_mesh, write_mesh
from report_generator import summary_lines
from scenario_runner import (compare, compare_receivers, load_receivers, run_convergence,
                             run_simulate)
from tpe_errors import TPEError

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
LONGITUDINAL_RECEIVERS = ('x1', 'x3')
COMPARISON_RATIO = 0.3


def print_header(text: str):
    """Print a coloured header"""
    click.echo("\n" + click.style(text, fg='blue', bold=True))


def print_success(text: str):
    click.echo(click.style(text, fg='green'))


def print_error(text: str):
    click.echo(click.style(text, fg='red'), err=True)


def print_warning(text: str):
    click.echo(click.style(text, fg='yellow'))


def print_info(text: str):
    click.echo(click.style(text, fg='cyan'))


def _with_output_dir(config: RunConfig, output_dir: Optional[str]) -> RunConfig:
    if not output_dir:
        return config
    return replace(config, output=replace(config.output, directory=os.path.abspath(output_dir)))


def _load(ctx: click.Context, path: str, output_dir: Optional[str] = None) -> RunConfig:
    service: ConfigService = ctx.obj['service']
    config, check = service.validate(path)
    for warning in check.warnings:
        print_warning(f"warning: {warning}")
    if not check.valid:
        for error in check.errors:
            print_error(f"error: {error}")
        ctx.exit(1)
    return _with_output_dir(config, output_dir)


@click.group()
@click.option('--verbose', '-v', is_flag=True, help='Debug logging.')
@click.option('--quiet', '-q', is_flag=True, help='Warnings and errors only.')
@click.pass_context
def cli(ctx: click.Context, verbose: bool, quiet: bool):
    """Polytopal dG simulator for thermo-poroelastic waves."""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    ctx.ensure_object(dict)
    ctx.obj['service'] = ConfigService()


@cli.command()
@click.argument('config_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--output-dir', '-o', type=click.Path(file_okay=False), default=None,
              help='Override run.output_dir.')
@click.pass_context
def convergence(ctx: click.Context, config_path: str, output_dir: Optional[str]):
    """Run a manufactured-solution convergence ladder."""
    try:
        config = _load(ctx, config_path, output_dir)
        if config.mode != 'convergence':
            print_error(f"{config_path}: run.mode is '{config.mode}', expected 'convergence'")
            ctx.exit(1)
        print_header(f"Convergence study: {config.name}")
        result = run_convergence(config)
    except TPEError as e:
        print_error(f"Error: {e}")
        ctx.exit(1)

    for line in summary_lines(result.table):
        print_info(line)
    for name, path in result.files.items():
        click.echo(f"  {name}: {path}")
    if result.passed:
        print_success("PASS: observed rates meet the expected order")
    else:
        for failure in result.failures:
            print_warning(failure)
        print_error("FAIL: observed rates below the expected order")
    ctx.exit(result.exit_code)


@cli.command()
@click.argument('config_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--output-dir', '-o', type=click.Path(file_okay=False), default=None,
              help='Override run.output_dir.')
@click.pass_context
def simulate(ctx: click.Context, config_path: str, output_dir: Optional[str]):
    """Run a physical simulation with sources and receivers."""
    try:
        config = _load(ctx, config_path, output_dir)
        print_header(f"Simulation: {config.name}")
        result = run_simulate(config)
    except TPEError as e:
        print_error(f"Error: {e}")
        ctx.exit(1)

    print_success(f"Completed {result.state.step} steps to t = {result.state.t:.6g} "
                  f"({result.n_dofs} unknowns)")
    click.echo(f"  output: {result.output_dir}")
    click.echo(f"  snapshots: {len(result.snapshots)}  receivers: {len(result.traces)}")
    for name, seconds in result.phases.items():
        click.echo(f"  {name}: {seconds:.2f} s")


@cli.command(name='compare')
@click.argument('snapshots_a', type=click.Path(exists=True, file_okay=False))
@click.argument('snapshots_b', type=click.Path(exists=True, file_okay=False))
@click.option('--output-dir', '-o', type=click.Path(file_okay=False), default=None,
              help='Directory for difference_<k>.csv files.')
@click.pass_context
def compare_command(ctx: click.Context, snapshots_a: str, snapshots_b: str,
                    output_dir: Optional[str]):
    """Difference fields between two snapshot sets (A minus B)."""
    try:
        summaries = compare(snapshots_a, snapshots_b, output_dir)
        receivers = compare_receivers(load_receivers(snapshots_a), load_receivers(snapshots_b))
    except TPEError as e:
        print_error(f"Error: {e}")
        ctx.exit(1)

    print_header("Snapshot differences")
    for s in summaries:
        click.echo(f"  step {s.step:>6}: max |dv| = {s.max_difference:.4e}  "
                   f"peak |v_A| = {s.peak_a:.4e}  ratio = {s.ratio:.3f}  "
                   f"mean cos = {s.mean_cosine:.4f}")
    if receivers:
        print_header("Receiver differences (max |dvmag| / max vmag_A)")
        for name, ratio in receivers.items():
            line = f"  {name}: {ratio:.4f}"
            if name in LONGITUDINAL_RECEIVERS:
                (print_success if ratio <= COMPARISON_RATIO else print_warning)(line)
            else:
                click.echo(line)


@cli.command(name='validate-config')
@click.argument('config_path', type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def validate_config(ctx: click.Context, config_path: str):
    """Check a run configuration without running it."""
    service: ConfigService = ctx.obj['service']
    try:
        config, check = service.validate(config_path)
    except TPEError as e:
        print_error(f"Invalid configuration: {e}")
        ctx.exit(1)

    print_header(f"{config.name} ({config.mode})")
    click.echo(f"  mesh: {config.mesh.describe()}  cells: {check.n_cells}  degree: {config.degree}")
    click.echo(f"  time: dt = {config.time.dt}  t_final = {config.time.t_final}  "
               f"steps = {config.time.n_steps}")
    click.echo(f"  regions: {', '.join(str(tag) for tag in sorted(config.regions))}  "
               f"sources: {len(config.sources)}  receivers: {len(config.receivers)}")
    click.echo(f"  config hash: {config.config_hash()[:16]}")
    for warning in check.warnings:
        print_warning(f"warning: {warning}")
    if check.valid:
        print_success("Configuration is valid")
    else:
        for error in check.errors:
            print_error(f"error: {error}")
        ctx.exit(1)


@cli.command(name='make-mesh')
@click.argument('output', type=click.Path(dir_okay=False))
@click.option('--cells', '-n', type=click.IntRange(min=2), default=300, show_default=True,
              help='Number of Voronoi seeds.')
@click.option('--seed', type=int, default=0, show_default=True, help='Random seed.')
@click.option('--lloyd', type=click.IntRange(min=0), default=0, show_default=True,
              help='Centroidal smoothing iterations.')
@click.pass_context
def make_mesh(ctx: click.Context, output: str, cells: int, seed: int, lloyd: int):
    """Write a Voronoi mesh of the unit square in the tpe-text format."""
    try:
        mesh = voronoi_mesh(cells, seed=seed, lloyd=lloyd)
        directory = os.path.dirname(os.path.abspath(output))
        os.makedirs(directory, exist_ok=True)
        write_mesh(mesh, output)
    except TPEError as e:
        print_error(f"Mesh generation failed: {e}")
        ctx.exit(1)
    print_success(f"{output}: {mesh.n_cells} cells, {mesh.n_faces} faces, "
                  f"area {mesh.domain_area:.12g}")
    click.echo(f"  {regularity_report(mesh).summary()}")


def main() -> None:
    cli(obj={})


if __name__ == '__main__':
    sys.exit(main())
