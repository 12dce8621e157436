"""
Click commands for the Delone Rectifier.

Every command writes its artifacts under the output directory with a reproducibility
header and exits 0 on success, 1 when a verified inequality fails and 2 on usage or
validation errors.
"""

import functools
import json
import logging
import math
import os
import re
import sys
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import click
import numpy as np
import pandas as pd
from rich.logging import RichHandler

from ..analyzers.counting import (e_profile, fit_deviation, fitting_delta, laczkovich_ratio,
                                  repetitivity_estimate)
from ..analyzers.hierarchy import auto_delta, fitted_regions, hierarchy_batch
from ..analyzers.regions import random_regions
from ..analyzers.spectral import build_matrix, perron_deviation, spectral_report, tile_density
from ..config import ENV_CONFIG, ENV_OUTPUT_DIR, Config
from ..constructions.flattener import DensityField, build_flatmap, flatten_diagnostics
from ..constructions.rectifier import density_from_points, rectify
from ..core.patch import (DeloneSetWindow, HierarchicalPatch, delone_report, delone_set, generate,
                          geometry_stats)
from ..core.rules import load_rule, validate_rule
from ..core.utils import (DeloneRectifierError, FlattenerError, PreconditionError, RegressionError,
                          RuleValidationError)
from ..reporting import summary
from ..reporting.exporters import (artifact_header, density_frame, export_csv, export_report, read_density_csv,
                                   read_points_csv, read_region_file)
from .display import (print_banner, print_error, print_info, print_section_header, print_success,
                      print_table, print_warning)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2

EXTENSIONS = {'json': 'json', 'yaml': 'yaml', 'markdown': 'md'}


@dataclass
class RunContext:
    """Settings shared by every command of one invocation."""

    config: Config
    output_dir: str
    format_type: str
    jobs: int
    seed: int
    quiet: bool

    @property
    def progress(self) -> bool:
        return not self.quiet and sys.stderr.isatty()

    def report_path(self, stem: str, suffix: str) -> str:
        return os.path.join(self.output_dir, f"{stem}_{suffix}.{EXTENSIONS[self.format_type]}")

    def path(self, stem: str, suffix: str, extension: str) -> str:
        return os.path.join(self.output_dir, f"{stem}_{suffix}.{extension}")

    def header(self, command: str, params: Dict[str, Any]) -> Dict[str, Any]:
        """Reproducibility header: command, its parameters, run settings and the full config."""
        return artifact_header({
            'command': command,
            'params': params,
            'seed': self.seed,
            'jobs': self.jobs,
            'output_dir': self.output_dir,
            'format': self.format_type,
            'config': self.config.get()
        })

    def say(self, message: str) -> None:
        if not self.quiet:
            print_info(message)


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(message)s", datefmt="[%X]",
                        handlers=[RichHandler(show_path=False, markup=False)], force=True)


def artifact_stem(name: str) -> str:
    """File-name-safe stem for rule names such as ``block:a=ab.ba;b=ba.ab``."""
    return re.sub(r'[^A-Za-z0-9_-]+', '_', name).strip('_') or 'run'


def parse_window(text: Optional[str]) -> Optional[Tuple[int, int, int, int]]:
    if text is None:
        return None
    try:
        values = tuple(int(v) for v in text.split(','))
    except ValueError:
        raise click.BadParameter(f"'{text}' is not x0,y0,x1,y1 integers", param_hint='--window')
    if len(values) != 4 or values[2] <= values[0] or values[3] <= values[1]:
        raise click.BadParameter(f"'{text}' is not a nonempty x0,y0,x1,y1 window", param_hint='--window')
    return values


def parse_floats(text: str, option: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise click.BadParameter(f"'{text}' is not a comma-separated list of numbers", param_hint=option)


def handle_errors(func: Callable[..., int]) -> Callable[..., None]:
    """Map package errors to exit code 2 and a positive violation count to exit code 1."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            violations = func(*args, **kwargs)
        except RuleValidationError as e:
            print_error(str(e))
            if e.report is not None:
                for entry in e.report.violations:
                    print_warning(f"{entry['scope']} {entry['name']} failed")
            ctx.exit(EXIT_USAGE)
        except DeloneRectifierError as e:
            print_error(f"{type(e).__name__}: {e}")
            if isinstance(e, FlattenerError) and e.diagnostics:
                print_info(json.dumps(e.diagnostics, sort_keys=True, default=str))
            ctx.exit(EXIT_USAGE)
        if violations:
            print_error(f"{violations} check(s) violated")
            ctx.exit(EXIT_VIOLATION)
    return wrapper


# Input resolution

def default_window(points: np.ndarray) -> Tuple[int, int, int, int]:
    """Largest integer rectangle inside the bounding box of the points."""
    if len(points) == 0:
        raise PreconditionError("no points to analyze")
    low = np.ceil(points.min(axis=0)).astype(int)
    high = np.floor(points.max(axis=0)).astype(int)
    if np.any(high <= low):
        raise PreconditionError(f"points span no integer window ({low.tolist()}..{high.tolist()})")
    return (int(low[0]), int(low[1]), int(high[0]), int(high[1]))


def load_patch_file(file_path: str) -> HierarchicalPatch:
    if not os.path.exists(file_path):
        raise PreconditionError(f"patch file '{file_path}' does not exist")
    with open(file_path, 'r', encoding='utf-8') as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise PreconditionError(f"cannot parse patch file '{file_path}': {e}") from e
    try:
        return HierarchicalPatch.from_dict(data.get('patch', data))
    except (KeyError, TypeError, ValueError) as e:
        raise PreconditionError(f"patch file '{file_path}' is malformed: {e}") from e


def build_patch(run: RunContext, rule_spec: str, depth: int, seed_tile: Optional[str]):
    rule = load_rule(rule_spec)
    patch = generate(rule, seed_tile, depth,
                     max_tiles=int(run.config.get('generation', 'max_tiles')),
                     snap_tol=float(run.config.get('geometry', 'snap_tol')))
    return rule, patch


def resolve_points(run: RunContext, rule_spec: Optional[str], depth: int, seed_tile: Optional[str],
                   points_path: Optional[str], patch_path: Optional[str],
                   window: Optional[Tuple[int, int, int, int]]):
    """Point window from a rule, a points CSV or a patch JSON export (exactly one)."""
    given = [v for v in (rule_spec, points_path, patch_path) if v]
    if len(given) != 1:
        raise click.UsageError("give exactly one of --rule, --points, --patch")
    if rule_spec:
        rule, patch = build_patch(run, rule_spec, depth, seed_tile)
        points = delone_set(patch)
        stem = artifact_stem(f"{rule.name}_L{depth}")
    elif points_path:
        rule, patch = None, None
        raw = read_points_csv(points_path)
        points = DeloneSetWindow(raw, window or default_window(raw), source=points_path)
        stem = artifact_stem(os.path.splitext(os.path.basename(points_path))[0])
    else:
        rule, patch = None, load_patch_file(patch_path)
        points = delone_set(patch)
        stem = artifact_stem(os.path.splitext(os.path.basename(patch_path))[0])
    if window is not None and points.window != window:
        points = DeloneSetWindow(points.points, window, points.r, points.R, points.source)
    return rule, patch, points, stem


def rule_options(func: Callable) -> Callable:
    func = click.option('--seed-tile', default=None, help='Seed prototile id (default: first prototile)')(func)
    func = click.option('--depth', type=click.IntRange(min=0), default=5, show_default=True,
                        help='Substitution depth')(func)
    func = click.option('--rule', 'rule_spec', default=None,
                        help='chair, table, penrose-triangles, block:<spec> or a rule file')(func)
    return func


def svg_option(func: Callable) -> Callable:
    return click.option('--svg/--no-svg', default=None, help='Also render SVG figures')(func)


def want_svg(run: RunContext, flag: Optional[bool]) -> bool:
    return bool(run.config.get('reporting', 'svg')) if flag is None else flag


# Group

@click.group()
@click.option('--config', 'config_path', default=None, help='Configuration file (.json or .yaml)')
@click.option('--output-dir', '-o', default=None, help='Output directory')
@click.option('--format', 'format_type', type=click.Choice(sorted(EXTENSIONS)), default=None,
              help='Report format')
@click.option('--jobs', '-j', type=click.IntRange(min=1), default=None, help='Worker threads for batches')
@click.option('--seed', type=int, default=None, help='Random seed')
@click.option('--verbose', '-v', is_flag=True, help='Debug logging')
@click.option('--quiet', '-q', is_flag=True, help='Warnings and errors only')
@click.pass_context
def cli(ctx: click.Context, config_path: Optional[str], output_dir: Optional[str],
        format_type: Optional[str], jobs: Optional[int], seed: Optional[int],
        verbose: bool, quiet: bool) -> None:
    """Substitution tilings, Delone-set discrepancy checks and lattice rectification."""
    configure_logging(verbose, quiet)
    config = Config(config_path or os.environ.get(ENV_CONFIG))
    ctx.obj = RunContext(
        config=config,
        output_dir=config.resolve('run', 'output_dir', output_dir, ENV_OUTPUT_DIR),
        format_type=config.resolve('reporting', 'format', format_type),
        jobs=int(config.resolve('run', 'jobs', jobs)),
        seed=int(config.resolve('run', 'seed', seed)),
        quiet=quiet
    )
    if ctx.obj.format_type not in EXTENSIONS:
        raise click.BadParameter(f"unknown report format '{ctx.obj.format_type}'", param_hint='--format')
    if not quiet and verbose:
        print_banner()


# generate

@cli.command('generate')
@rule_options
@svg_option
@click.option('--outline-level', type=int, default=None, help='Outline this supertile level in the SVG')
@click.pass_obj
@handle_errors
def cmd_generate(run: RunContext, rule_spec: Optional[str], depth: int, seed_tile: Optional[str],
                 svg: Optional[bool], outline_level: Optional[int]) -> int:
    """Generate a hierarchical patch and its Delone set."""
    if not rule_spec:
        raise click.UsageError("--rule is required")
    params = {'rule': rule_spec, 'depth': depth, 'seed_tile': seed_tile}
    header = run.header('generate', params)
    rule = load_rule(rule_spec)
    stem = artifact_stem(f"{rule.name}_L{depth}")

    validation = validate_rule(rule)
    export_report(summary.build_report('validate', header, validation=validation.to_dict()),
                  run.report_path(stem, 'validation'), run.format_type)
    if not validation.valid:
        raise RuleValidationError(f"rule '{rule.name}' is not a valid substitution", validation)

    patch = generate(rule, seed_tile, depth, validate=False,
                     max_tiles=int(run.config.get('generation', 'max_tiles')),
                     snap_tol=float(run.config.get('geometry', 'snap_tol')))
    points = delone_set(patch)
    stats = geometry_stats(patch, 0)

    export_report({'header': header, 'patch': patch.to_dict()}, run.path(stem, 'patch', 'json'), 'json')
    export_csv(summary.points_frame(points), run.path(stem, 'points', 'csv'),
               {**header, 'window': list(points.window)})
    if want_svg(run, svg):
        from ..reporting.visualization import plot_patch
        plot_patch(patch, run.path(stem, 'patch', 'svg'), outline_level=outline_level)

    if not run.quiet:
        print_section_header(f"generate {rule.name}")
        patch_info = summary.patch_summary(patch, stats)
        print_table(['level', 'tiles'], [[l, n] for l, n in enumerate(patch_info['tiles_per_level'])])
        print_success(f"{patch.tile_count(0)} tiles, window {list(points.window)}, files in {run.output_dir}")
    return 0


# analyze

@cli.command('analyze')
@rule_options
@click.option('--points', 'points_path', default=None, help='Points CSV with columns x, y')
@click.option('--patch', 'patch_path', default=None, help='Patch JSON written by generate')
@click.option('--window', default=None, help='Counting window x0,y0,x1,y1')
@click.option('--rho', type=float, default=None, help='Reference density (default: fitted rho_hat)')
@click.option('--alpha', type=float, default=None, help='Density for the Laczkovich ratio (default: rho)')
@click.option('--regions', 'region_count', type=click.IntRange(min=1), default=200, show_default=True)
@click.option('--delta', type=float, default=4.0, show_default=True, help='Cell size of sampled regions')
@click.option('--region-cells', type=click.IntRange(min=1), default=None)
@click.option('--radii', default='1,2,4', show_default=True, help='Repetitivity radii')
@click.option('--regions-file', default=None, help='Region file used instead of sampled regions')
@svg_option
@click.pass_obj
@handle_errors
def cmd_analyze(run: RunContext, rule_spec: Optional[str], depth: int, seed_tile: Optional[str],
                points_path: Optional[str], patch_path: Optional[str], window: Optional[str],
                rho: Optional[float], alpha: Optional[float], region_count: int, delta: float,
                region_cells: Optional[int], radii: str, regions_file: Optional[str],
                svg: Optional[bool]) -> int:
    """Spectral data, E-profile, deviation fit, Laczkovich ratio and repetitivity."""
    config = run.config
    window_box = parse_window(window)
    radius_list = parse_floats(radii, '--radii')
    region_cells = region_cells or int(config.get('hierarchy', 'region_cells'))
    rule, patch, points, stem = resolve_points(run, rule_spec, depth, seed_tile, points_path,
                                               patch_path, window_box)
    params = {'rule': rule_spec, 'depth': depth, 'seed_tile': seed_tile, 'points': points_path,
              'patch': patch_path, 'window': list(points.window), 'rho': rho, 'alpha': alpha,
              'regions': region_count, 'delta': delta, 'region_cells': region_cells, 'radii': radius_list,
              'regions_file': regions_file}
    header = run.header('analyze', params)
    sections: Dict[str, Any] = {}

    density = None
    if rule is not None:
        matrix = build_matrix(rule)
        report = spectral_report(matrix, **config.get('spectral'))
        deviation = None
        if report.thm2_applicable:
            deviation = perron_deviation(matrix, report, l_max=max(depth, 1))
        else:
            logger.warning(f"r(M)={report.r:.6g} is not below lambda; no Perron deviation constant")
        density = tile_density(matrix, report)
        sections['spectral'] = summary.spectral_summary(matrix, report, deviation, density)

    fit, fit_error = None, None
    try:
        fit = fit_deviation(points, min_sizes=int(config.get('counting', 'fit_min_sizes')))
    except RegressionError as e:
        fit_error = str(e)
        logger.warning(f"Deviation fit unavailable: {e}")
    if rho is None:
        if fit is not None:
            rho = fit.rho_hat
        else:
            width, height = points.window_size
            rho = len(points.points_in_window()) / float(width * height)
    if density is not None and fit is not None:
        gap = abs(density / fit.rho_hat - 1.0)
        tolerance = float(config.get('hierarchy', 'alpha_crosscheck'))
        sections['alpha_crosscheck'] = {'tile_density': density, 'rho_hat': fit.rho_hat,
                                        'relative_gap': gap, 'agree': gap <= tolerance}
        if gap > tolerance:
            logger.warning(f"Tile density {density:.6g} and rho_hat {fit.rho_hat:.6g} differ by {gap:.2%}")

    side = min(points.window_size)
    k_list = [2 ** j for j in range(0, int(math.floor(math.log2(side))))] if side >= 2 else []
    profile = e_profile(points, rho, k_list, int(config.get('counting', 'min_translates')))

    if regions_file:
        regions = read_region_file(regions_file)
    else:
        regions = random_regions(points.window, delta, region_count, region_cells, seed=run.seed)
    laczkovich = laczkovich_ratio(points, rho if alpha is None else alpha, regions, run.jobs, run.progress)
    repetitivity = repetitivity_estimate(points, radius_list,
                                         grid_step=float(config.get('counting', 'repetitivity_grid_step')),
                                         snap_tol=float(config.get('counting', 'patch_snap')))
    delone = delone_report(points, seed=run.seed)
    sections['analysis'] = summary.analysis_summary(points, rho, profile, fit, fit_error, laczkovich,
                                                    repetitivity, delone)
    if patch is not None:
        sections['patch'] = summary.patch_summary(patch)

    export_report(summary.build_report('analyze', header, **sections), run.report_path(stem, 'analysis'),
                  run.format_type)
    export_csv(summary.e_profile_frame(profile), run.path(stem, 'eprofile', 'csv'), header)
    export_csv(pd.DataFrame({'region': range(len(regions)), 'cells': [len(r) for r in regions],
                             'ratio': laczkovich.ratios}),
               run.path(stem, 'laczkovich', 'csv'), header)
    if fit is not None:
        export_csv(summary.fit_frame(fit), run.path(stem, 'fit', 'csv'), header)
    if want_svg(run, svg):
        from ..reporting.visualization import plot_deviation_fit, plot_e_profile
        plot_e_profile(profile, run.path(stem, 'eprofile', 'svg'))
        if fit is not None:
            plot_deviation_fit(fit, run.path(stem, 'fit', 'svg'))

    if not run.quiet:
        print_section_header(f"analyze {stem}")
        if 'spectral' in sections:
            spectral = sections['spectral']['report']
            print_table(['mu', 'r', 'pisot', 'r < lambda'],
                        [[spectral['mu'], spectral['r'], spectral['pisot'], spectral['thm2_applicable']]])
        print_table(['k', 'E', 'censored'], [[e.k, e.E, e.censored] for e in profile.entries], title='E-profile')
        censored = sections['analysis']['censored_sizes']
        if censored:
            print_warning(f"censored E sizes: {censored}")
        print_success(f"K_hat = {laczkovich.K_hat:.6g} over {len(regions)} regions, rho = {rho:.6g}")
    return 0


# hierarchy

@cli.command('hierarchy')
@rule_options
@click.option('--regions', 'region_count', type=click.IntRange(min=1), default=None)
@click.option('--delta', default='auto', show_default=True, help="Region cell size or 'auto'")
@click.option('--region-cells', type=click.IntRange(min=1), default=None)
@click.option('--force', is_flag=True, help='Decompose regions even when delta does not fit')
@click.option('--ball-trials', type=click.IntRange(min=0), default=None)
@click.option('--alpha-scale', type=float, default=1.0, show_default=True,
              help='Scale the tile density (negative controls)')
@click.option('--regions-file', default=None, help='Region file used instead of sampled regions')
@click.pass_obj
@handle_errors
def cmd_hierarchy(run: RunContext, rule_spec: Optional[str], depth: int, seed_tile: Optional[str],
                  region_count: Optional[int], delta: str, region_cells: Optional[int], force: bool,
                  ball_trials: Optional[int], alpha_scale: float, regions_file: Optional[str]) -> int:
    """Hierarchical decompositions and the supertile bound chain on sampled regions."""
    if not rule_spec:
        raise click.UsageError("--rule is required")
    config = run.config
    region_count = region_count or int(config.get('hierarchy', 'regions'))
    region_cells = region_cells or int(config.get('hierarchy', 'region_cells'))
    ball_trials = int(config.get('hierarchy', 'ball_trials')) if ball_trials is None else ball_trials

    rule, patch = build_patch(run, rule_spec, depth, seed_tile)
    stem = artifact_stem(f"{rule.name}_L{depth}")
    points = delone_set(patch)
    stats = geometry_stats(patch, 0)
    matrix = build_matrix(rule)
    report = spectral_report(matrix, **config.get('spectral'))
    density = tile_density(matrix, report)

    if delta == 'auto':
        delta_value = None
    else:
        try:
            delta_value = float(delta)
        except ValueError:
            raise click.BadParameter(f"'{delta}' is neither a number nor 'auto'", param_hint='--delta')
    if regions_file:
        regions = read_region_file(regions_file)
        sampling = {'delta': sorted({r.delta for r in regions}), 'requested': len(regions),
                    'fitted': None, 'attempts': 0, 'file': regions_file}
    elif force:
        cell = auto_delta(stats) if delta_value is None else delta_value
        regions = random_regions(patch.window(), cell, region_count, region_cells, seed=run.seed)
        sampling = {'delta': cell, 'requested': region_count, 'fitted': None, 'attempts': region_count}
    else:
        regions, sampling = fitted_regions(patch, stats, region_count, region_cells, delta_value, run.seed)
    sampling['sufficient_delta'] = fitting_delta(stats)
    sampling['forced'] = force

    params = {'rule': rule_spec, 'depth': depth, 'seed_tile': seed_tile, 'regions': region_count,
              'delta': delta, 'region_cells': region_cells, 'force': force, 'ball_trials': ball_trials,
              'alpha_scale': alpha_scale, 'regions_file': regions_file}
    header = run.header('hierarchy', params)
    merged, rows = hierarchy_batch(patch, matrix, report, points, regions, stats, force=force,
                                   ball_trials=ball_trials, seed=run.seed, jobs=run.jobs,
                                   progress=run.progress, alpha=density * alpha_scale)

    sections = {
        'spectral': summary.spectral_summary(matrix, report, density=density),
        'patch': summary.patch_summary(patch, stats),
        'hierarchy': summary.hierarchy_summary(merged, rows, sampling)
    }
    export_report(summary.build_report('hierarchy', header, **sections), run.report_path(stem, 'hierarchy'),
                  run.format_type)
    export_csv(summary.hierarchy_frame(rows), run.path(stem, 'hierarchy', 'csv'), header)

    violations = len(merged.violations)
    if not run.quiet:
        print_section_header(f"hierarchy {rule.name}")
        by_check = sections['hierarchy']['checks']['by_check']
        print_table(['check', 'passed', 'failed'],
                    [[name, c['passed'], c['failed']] for name, c in sorted(by_check.items())])
        if violations == 0:
            print_success(f"{len(regions)} regions at delta={sampling['delta']}: 0 violations")
    return violations


# flatten

@cli.command('flatten')
@rule_options
@click.option('--density', 'density_path', default=None, help='Density CSV with columns i, j, u')
@click.option('--points', 'points_path', default=None, help='Points CSV with columns x, y')
@click.option('--window', default=None, help='Window x0,y0,x1,y1 for --points')
@click.option('--m', 'm', type=click.IntRange(min=1), default=None, help='Dyadic depth of the cube')
@click.option('--cell', type=float, default=None, help='Cell side for point densities')
@click.option('--blend', type=float, default=None, help='Blend width w in (0, 1/2]')
@click.option('--method', type=click.Choice(['boundary', 'grid', 'mc']), default='boundary',
              show_default=True, help='Volume measurement')
@click.option('--samples', type=click.IntRange(min=1), default=1_000_000, show_default=True,
              help='Monte-Carlo samples')
@click.option('--roundtrip-points', type=click.IntRange(min=1), default=100_000, show_default=True)
@svg_option
@click.pass_obj
@handle_errors
def cmd_flatten(run: RunContext, rule_spec: Optional[str], depth: int, seed_tile: Optional[str],
                density_path: Optional[str], points_path: Optional[str], window: Optional[str],
                m: Optional[int], cell: Optional[float], blend: Optional[float], method: str,
                samples: int, roundtrip_points: int, svg: Optional[bool]) -> int:
    """Build the dyadic flattener for a density and report its diagnostics."""
    config = run.config
    blend = float(config.get('flattener', 'blend_width')) if blend is None else blend
    if density_path:
        if rule_spec or points_path:
            raise click.UsageError("--density excludes --rule and --points")
        values = read_density_csv(density_path)
        if m is not None:
            if 2 ** m > values.shape[0]:
                raise PreconditionError(f"density grid side {values.shape[0]} is smaller than 2^{m}")
            values = values[:2 ** m, :2 ** m]
        density = DensityField(values)
        stem = artifact_stem(os.path.splitext(os.path.basename(density_path))[0])
    else:
        _, _, points, stem = resolve_points(run, rule_spec, depth, seed_tile, points_path, None,
                                            parse_window(window))
        density = density_from_points(points, cell, m)

    params = {'rule': rule_spec, 'depth': depth, 'seed_tile': seed_tile, 'density': density_path,
              'points': points_path, 'window': window, 'm': density.m, 'cell': density.cell,
              'blend': blend, 'method': method, 'samples': samples, 'roundtrip_points': roundtrip_points}
    header = run.header('flatten', params)
    flatmap = build_flatmap(density, blend)
    diagnostics = flatten_diagnostics(flatmap, method=method,
                                      resolution=int(config.get('flattener', 'volume_resolution')),
                                      samples=samples,
                                      lipschitz_pairs=int(config.get('flattener', 'lipschitz_pairs')),
                                      roundtrip_points=roundtrip_points, seed=run.seed, jobs=run.jobs)

    export_report(summary.build_report('flatten', header, flatten=summary.flatten_summary(diagnostics)),
                  run.report_path(stem, 'flatten'), run.format_type)
    export_csv(summary.volume_error_frame(diagnostics['volume_errors']),
               run.path(stem, 'volume_errors', 'csv'), header)
    if density_path is None:
        export_csv(density_frame(density.values), run.path(stem, 'density', 'csv'), header)
    if want_svg(run, svg):
        from ..reporting.visualization import plot_warp_grid
        plot_warp_grid(flatmap, run.path(stem, 'warp', 'svg'))

    failed = [name for name in ('volumes', 'boundary_identity', 'roundtrip', 'telescoping')
              if diagnostics.get(name) is not None and not diagnostics[name]['ok']]
    eta = diagnostics['eta_star']
    if not eta['ok']:
        failed.append('eta_star')
    if not eta['bracket_ok']:
        failed.append('eta_bracket')
    if not run.quiet:
        print_section_header(f"flatten {stem}")
        print_table(['m', 'w', 'max volume error', 'tol_vol', 'K_fwd', 'K_inv'],
                    [[density.m, blend, diagnostics['volumes']['max_error'], diagnostics['volumes']['tol_vol'],
                      diagnostics['lipschitz']['K_fwd'], diagnostics['lipschitz']['K_inv']]])
        if not failed:
            print_success("all flattener checks passed")
        for name in failed:
            print_warning(f"{name} check failed")
    return len(failed)


# rectify

@cli.command('rectify')
@rule_options
@click.option('--points', 'points_path', default=None, help='Points CSV with columns x, y')
@click.option('--window', default=None, help='Window x0,y0,x1,y1')
@click.option('--cell', type=float, default=None, help='Density cell side (default: 2R rounded up)')
@click.option('--m', 'm', type=click.IntRange(min=1), default=None, help='Dyadic depth of the cube')
@click.option('--blend', type=float, default=None, help='Blend width w in (0, 1/2]')
@click.option('--rho', type=float, default=None, help='Global density (default: fitted rho_hat)')
@svg_option
@click.pass_obj
@handle_errors
def cmd_rectify(run: RunContext, rule_spec: Optional[str], depth: int, seed_tile: Optional[str],
                points_path: Optional[str], window: Optional[str], cell: Optional[float], m: Optional[int],
                blend: Optional[float], rho: Optional[float], svg: Optional[bool]) -> int:
    """Flatten, rescale and match a point window onto Z^2; report K_bilip."""
    config = run.config
    blend = float(config.get('flattener', 'blend_width')) if blend is None else blend
    _, _, points, stem = resolve_points(run, rule_spec, depth, seed_tile, points_path, None,
                                        parse_window(window))
    params = {'rule': rule_spec, 'depth': depth, 'seed_tile': seed_tile, 'points': points_path,
              'window': list(points.window), 'cell': cell, 'm': m, 'blend': blend, 'rho': rho}
    header = run.header('rectify', params)
    result = rectify(points, cell=cell, m=m, blend_width=blend, rho_hat=rho,
                     density_mismatch=float(config.get('rectifier', 'density_mismatch')),
                     resolution=float(config.get('rectifier', 'bisect_resolution')),
                     D_cap=float(config.get('rectifier', 'd_cap')),
                     window_fraction=float(config.get('rectifier', 'window_fraction')),
                     bilip_pairs=int(config.get('rectifier', 'bilip_pairs')), seed=run.seed)

    export_report(summary.build_report('rectify', header, rectify=result.to_dict()),
                  run.report_path(stem, 'rectify'), run.format_type)
    export_csv(summary.matching_frame(result), run.path(stem, 'matching', 'csv'), header)
    if want_svg(run, svg):
        from ..reporting.visualization import plot_displacement_field
        plot_displacement_field(result.matching, run.path(stem, 'displacement', 'svg'))

    finite = math.isfinite(result.K_bilip)
    if not run.quiet:
        print_section_header(f"rectify {stem}")
        print_table(['rho_hat', 'm', 'cell', 'D', 'pairs', 'K_bilip'],
                    [[result.rho_hat, result.density.m, result.density.cell, result.matching.radius,
                      len(result.sources), result.K_bilip]])
        if finite:
            print_success(f"K_bilip = {result.K_bilip:.6g}")
    return 0 if finite else 1
