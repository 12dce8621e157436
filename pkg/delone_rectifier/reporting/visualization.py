"""
Visualization module for the Delone Rectifier.
Prepares plot data from analysis results and renders it to SVG with matplotlib.
"""

import logging
import os
from typing import Any, Dict, List, Optional

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection, PolyCollection  # noqa: E402

from ..analyzers.counting import DensityFit, EProfile  # noqa: E402
from ..constructions.flattener import FlatMap  # noqa: E402
from ..constructions.rectifier import Matching  # noqa: E402
from ..core.patch import HierarchicalPatch  # noqa: E402
from ..core.utils import create_path_if_not_exists  # noqa: E402

logger = logging.getLogger(__name__)

matplotlib.rcParams['svg.hashsalt'] = 'delone-rectifier'

PALETTE = ['#ffffc0', '#c0ffff', '#ffd0e0', '#d0ffd0', '#e0d0ff', '#ffe0b0']


def _save(fig: Any, output_file: str) -> str:
    create_path_if_not_exists(os.path.dirname(output_file))
    fig.savefig(output_file, format='svg', metadata={'Date': None})
    plt.close(fig)
    logger.info(f"Figure written to {output_file}")
    return output_file


def prepare_patch_data(patch: HierarchicalPatch, level: int = 0) -> Dict[str, Any]:
    """Polygons and per-type color indices of one patch level."""
    tiles = patch.tiles(level)
    types = sorted({t.prototile_id for t in tiles})
    index = {pid: i for i, pid in enumerate(types)}
    return {
        'polygons': [np.asarray(p, dtype=float) for p in patch.polygons(level)],
        'colors': [index[t.prototile_id] for t in tiles],
        'types': types,
        'window': patch.window()
    }


def plot_patch(patch: HierarchicalPatch, output_file: str, level: int = 0,
               outline_level: Optional[int] = None) -> str:
    """
    Render the tiles of one level, optionally outlining a coarser level and the counting window.

    Args:
        patch: Patch to draw
        output_file: SVG path
        level: Level whose tiles are filled
        outline_level: Coarser level drawn as outlines
    """
    data = prepare_patch_data(patch, level)
    fig, ax = plt.subplots(figsize=(8, 8))
    colors = [PALETTE[c % len(PALETTE)] for c in data['colors']]
    ax.add_collection(PolyCollection(data['polygons'], facecolors=colors, edgecolors='#404040',
                                     linewidths=0.3))
    if outline_level is not None and outline_level != level:
        ax.add_collection(PolyCollection(patch.polygons(outline_level), facecolors='none',
                                         edgecolors='#b00000', linewidths=0.8))
    if data['window'] is not None:
        x0, y0, x1, y1 = data['window']
        ax.plot([x0, x1, x1, x0, x0], [y0, y0, y1, y1, y0], color='#0050b0', linewidth=1.0)
    xmin, ymin, xmax, ymax = patch.bounding_box()
    ax.set_xlim(xmin, xmax)
    ax.set_ylim(ymin, ymax)
    ax.set_aspect('equal')
    ax.set_axis_off()
    ax.set_title(f"{patch.rule.name if patch.rule else 'patch'} level {level} "
                 f"({len(data['polygons'])} tiles)")
    return _save(fig, output_file)


def prepare_e_profile_data(profile: EProfile) -> Dict[str, List[float]]:
    entries = [e for e in profile.entries if not e.empty_cube and np.isfinite(e.E)]
    return {
        'k': [e.k for e in entries],
        'E': [e.E for e in entries],
        'censored': [e.censored for e in entries],
        'product_m': [m for m, _ in profile.partial_products],
        'product': [p for _, p in profile.partial_products]
    }


def plot_e_profile(profile: EProfile, output_file: str) -> str:
    """E(k) on a log k axis, censored sizes hollow, with the dyadic partial products."""
    data = prepare_e_profile_data(profile)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    k = np.asarray(data['k'], dtype=float)
    e = np.asarray(data['E'], dtype=float)
    censored = np.asarray(data['censored'], dtype=bool)
    ax.plot(k, e, color='#303030', linewidth=1.0)
    ax.scatter(k[~censored], e[~censored], color='#0050b0', zorder=3, label='E(k)')
    if censored.any():
        ax.scatter(k[censored], e[censored], facecolors='none', edgecolors='#b00000', zorder=3,
                   label='censored')
    if data['product']:
        ax.plot([2.0 ** m for m in data['product_m']], data['product'], linestyle='--',
                color='#808080', label='partial product')
    ax.axhline(1.0, color='#a0a0a0', linewidth=0.6)
    ax.set_xscale('log', base=2)
    ax.set_xlabel('cube side k')
    ax.set_ylabel(f"E(k), rho = {profile.rho:.6g}")
    ax.legend()
    return _save(fig, output_file)


def plot_deviation_fit(fit: DensityFit, output_file: str) -> str:
    """Log-log plot of the maximum count deviation with the fitted line."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    sizes = np.asarray(fit.sizes, dtype=float)
    deviations = np.asarray(fit.deviations, dtype=float)
    positive = deviations > 0
    ax.scatter(sizes[positive], deviations[positive], color='#0050b0', zorder=3, label='max deviation')
    if isinstance(fit.delta_hat, float) and fit.M_prime is not None:
        slope = 2.0 - fit.delta_hat
        line = fit.M_prime * fit.rho_hat * sizes ** slope
        ax.plot(sizes, line, color='#b00000', label=f"delta_hat = {fit.delta_hat:.4g}")
    ax.set_xscale('log', base=2)
    ax.set_yscale('log')
    ax.set_xlabel('cube side')
    ax.set_ylabel('max |N - rho_hat vol|')
    ax.legend()
    return _save(fig, output_file)


def prepare_warp_grid_data(flatmap: FlatMap, lines: int = 16, samples: int = 200) -> Dict[str, np.ndarray]:
    """Images of the grid lines x = const and y = const under the flattener."""
    lower, upper = flatmap.density.cube_bounds()
    ticks = np.linspace(0.0, 1.0, lines + 1)
    t = np.linspace(0.0, 1.0, samples)
    segments = []
    for s in ticks:
        for axis in (0, 1):
            points = np.empty((samples, 2))
            points[:, axis] = lower[axis] + s * (upper[axis] - lower[axis])
            other = 1 - axis
            points[:, other] = lower[other] + t * (upper[other] - lower[other])
            segments.append(flatmap.evaluate(points))
    return {'segments': np.asarray(segments), 'lower': lower, 'upper': upper}


def plot_warp_grid(flatmap: FlatMap, output_file: str, lines: int = 16) -> str:
    """Pushed-forward square grid over the density's unit cubes."""
    data = prepare_warp_grid_data(flatmap, lines)
    density = flatmap.density
    fig, ax = plt.subplots(figsize=(8, 8))
    lower, upper = data['lower'], data['upper']
    ax.imshow(density.values.T, origin='lower', extent=(lower[0], upper[0], lower[1], upper[1]),
              cmap='Greys', alpha=0.4)
    ax.add_collection(LineCollection(data['segments'], colors='#0050b0', linewidths=0.6))
    ax.set_xlim(lower[0], upper[0])
    ax.set_ylim(lower[1], upper[1])
    ax.set_aspect('equal')
    ax.set_title(f"flattener, m = {density.m}, w = {flatmap.blend_width}")
    return _save(fig, output_file)


def plot_displacement_field(matching: Matching, output_file: str) -> str:
    """Arrows from each matched point to its lattice partner, colored by length."""
    fig, ax = plt.subplots(figsize=(8, 8))
    if len(matching.pairs):
        start = matching.points[matching.pairs[:, 0]]
        delta = matching.lattice[matching.pairs[:, 1]] - start
        quiver = ax.quiver(start[:, 0], start[:, 1], delta[:, 0], delta[:, 1], matching.displacements,
                           angles='xy', scale_units='xy', scale=1.0, cmap='viridis', width=0.002)
        fig.colorbar(quiver, ax=ax, label='displacement')
    x0, y0, x1, y1 = matching.window
    ax.set_xlim(x0, x1)
    ax.set_ylim(y0, y1)
    ax.set_aspect('equal')
    ax.set_title(f"matching onto {matching.beta:.4g} Z^2, D = {matching.radius:.4g}")
    return _save(fig, output_file)
