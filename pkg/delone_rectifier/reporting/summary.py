"""
Report builders for the Delone Rectifier.
Turns analysis results into the report dictionaries written by each command.
"""

from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from ..analyzers.counting import DensityFit, EProfile, LaczkovichResult
from ..analyzers.spectral import PerronDeviation, SpectralReport, SubstitutionMatrix
from ..constructions.rectifier import RectifyResult
from ..core.patch import DeloneSetWindow, GeometryStats, HierarchicalPatch
from ..core.report import CheckReport


def build_report(command: str, header: Dict[str, Any], **sections: Any) -> Dict[str, Any]:
    """Top-level report: command name, reproducibility header and named sections."""
    report = {'command': command, 'header': header}
    report.update({name: value for name, value in sections.items() if value is not None})
    return report


def patch_summary(patch: HierarchicalPatch, stats: Optional[GeometryStats] = None) -> Dict[str, Any]:
    summary = {
        'rule': patch.rule.name if patch.rule else None,
        'seed': patch.seed,
        'depth': patch.depth,
        'tiles_per_level': [patch.tile_count(level) for level in range(patch.depth + 1)],
        'type_counts': patch.type_counts(0),
        'window': list(patch.window())
    }
    if stats is not None:
        summary['geometry'] = stats.to_dict()
    return summary


def spectral_summary(matrix: SubstitutionMatrix, report: SpectralReport,
                     deviation: Optional[PerronDeviation] = None,
                     density: Optional[float] = None) -> Dict[str, Any]:
    """Matrix, Perron data and the Perron-Frobenius deviation constant K0."""
    summary = {'matrix': matrix.to_dict(), 'report': report.to_dict()}
    if deviation is not None:
        summary['perron_deviation'] = deviation.to_dict()
    if density is not None:
        summary['tile_density'] = density
    return summary


def points_frame(points: DeloneSetWindow) -> pd.DataFrame:
    return pd.DataFrame({'x': points.points[:, 0], 'y': points.points[:, 1]})


def e_profile_frame(profile: EProfile) -> pd.DataFrame:
    """Columns k, E, translates, censored; empty cubes carry E = inf."""
    rows = [{'k': e.k, 'E': e.E, 'translates': e.translates, 'censored': e.censored}
            for e in profile.entries]
    return pd.DataFrame(rows, columns=['k', 'E', 'translates', 'censored'])


def fit_frame(fit: DensityFit) -> pd.DataFrame:
    residuals = list(fit.residuals) + [np.nan] * (len(fit.sizes) - len(fit.residuals))
    return pd.DataFrame({'size': fit.sizes, 'max_deviation': fit.deviations, 'residual': residuals})


def analysis_summary(points: DeloneSetWindow, rho: float, profile: EProfile,
                     fit: Optional[DensityFit], fit_error: Optional[str],
                     laczkovich: LaczkovichResult, repetitivity: Dict[str, Any],
                     delone: Dict[str, Any]) -> Dict[str, Any]:
    """
    Point-statistics section of the analyze report.

    Censored E values and an unavailable fit are flagged here and never fail the run.
    """
    censored = [e.k for e in profile.entries if e.censored]
    return {
        'points': points.to_dict(),
        'rho': rho,
        'e_profile': profile.to_dict(),
        'censored_sizes': censored,
        'deviation_fit': fit.to_dict() if fit is not None else {'error': fit_error},
        'laczkovich': laczkovich.to_dict(),
        'repetitivity': repetitivity,
        'delone': delone
    }


def check_summary(report: CheckReport) -> Dict[str, Any]:
    """Report dictionary plus counts per check name."""
    by_name: Dict[str, Dict[str, int]] = {}
    for entry in report.checks:
        counts = by_name.setdefault(entry['name'], {'passed': 0, 'failed': 0})
        counts['passed' if entry['passed'] else 'failed'] += 1
    summary = report.to_dict()
    summary['by_check'] = by_name
    return summary


def hierarchy_summary(report: CheckReport, rows: List[Dict[str, Any]],
                      sampling: Dict[str, Any]) -> Dict[str, Any]:
    empirical = [r['empirical_K'] for r in rows if r.get('empirical_K') is not None]
    return {
        'sampling': sampling,
        'checks': check_summary(report),
        'max_empirical_K': max(empirical) if empirical else None,
        'min_margin': min((r['margin'] for r in rows), default=None),
        'violations': report.violations
    }


def hierarchy_frame(rows: List[Dict[str, Any]]) -> pd.DataFrame:
    columns = ['region', 'cells', 'm', 'l_0', 'lhs', 'rhs', 'margin', 'empirical_K', 'forced', 'violations']
    return pd.DataFrame(rows, columns=columns)


def flatten_summary(diagnostics: Dict[str, Any]) -> Dict[str, Any]:
    """Diagnostics without the per-cube error array (written as CSV instead)."""
    return {key: value for key, value in diagnostics.items() if key != 'volume_errors'}


def volume_error_frame(errors: np.ndarray) -> pd.DataFrame:
    i, j = np.meshgrid(np.arange(errors.shape[0]), np.arange(errors.shape[1]), indexing='ij')
    return pd.DataFrame({'i': i.ravel(), 'j': j.ravel(), 'error': np.asarray(errors).ravel()})


def matching_frame(result: RectifyResult) -> pd.DataFrame:
    """Matched core pairs: original x, y, lattice partner z1, z2 and the matched displacement."""
    sources, images = result.sources, result.images
    matching = result.matching
    core = matching.pairs[matching.point_core[matching.pairs[:, 0]]]
    shifts = np.linalg.norm(matching.points[core[:, 0]] - matching.lattice[core[:, 1]], axis=1)
    return pd.DataFrame({
        'x': sources[:, 0], 'y': sources[:, 1],
        'z1': images[:, 0], 'z2': images[:, 1],
        'displacement': shifts
    }, columns=['x', 'y', 'z1', 'z2', 'displacement'])
