"""
Report exporters for the Delone Rectifier.
Writes reports as JSON, YAML or Markdown, tables as headed CSV, and reads input files back.
"""

import json
import logging
import math
import os
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import yaml
from tabulate import tabulate

from .. import __version__
from ..analyzers.regions import GridRegion
from ..core.utils import PreconditionError, create_path_if_not_exists, flatten_dict

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def version_string() -> str:
    """git describe of the working tree when it is a repository, else the package version."""
    try:
        import git
        repo = git.Repo(os.path.dirname(os.path.abspath(__file__)), search_parent_directories=True)
        return repo.git.describe('--tags', '--always', '--dirty')
    except Exception as e:
        logger.debug(f"No git version available: {e}")
        return f"v{__version__}"


def artifact_header(run_config: Dict[str, Any]) -> Dict[str, Any]:
    """Reproducibility header embedded in every output file."""
    return {'run_config': to_serializable(run_config), 'version': version_string()}


def to_serializable(value: Any) -> Any:
    """Convert numpy scalars/arrays, tuples and non-finite floats into plain JSON values."""
    if isinstance(value, dict):
        return {str(k): to_serializable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_serializable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_serializable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return value
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value


def export_report(report_data: Dict[str, Any], file_path: str, format_type: str = 'json') -> str:
    """
    Export a report in the specified format.

    Args:
        report_data: Report data to export
        file_path: Output path
        format_type: Output format (json, yaml, markdown)

    Returns:
        Path actually written
    """
    create_path_if_not_exists(os.path.dirname(file_path))
    data = to_serializable(report_data)

    if format_type == 'json':
        export_json(data, file_path)
    elif format_type == 'yaml':
        export_yaml(data, file_path)
    elif format_type == 'markdown':
        export_markdown(data, file_path)
    else:
        raise PreconditionError(f"unknown report format '{format_type}'")

    logger.info(f"Report exported to {file_path}")
    return file_path


def export_json(report_data: Dict[str, Any], file_path: str) -> None:
    with open(file_path, 'w', encoding='utf-8') as f:
        json.dump(report_data, f, indent=2, sort_keys=True)
        f.write("\n")


def export_yaml(report_data: Dict[str, Any], file_path: str) -> None:
    with open(file_path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(report_data, f, default_flow_style=False, sort_keys=True)


def _scalar_rows(data: Dict[str, Any]) -> List[Tuple[str, Any]]:
    return [(k, v) for k, v in sorted(flatten_dict(data).items()) if not isinstance(v, list)]


def export_markdown(report_data: Dict[str, Any], file_path: str) -> None:
    """
    Export report as Markdown.

    Scalars of every section become a key/value table; lists of flat records
    (checks, per-region rows) become their own tables.
    """
    title = report_data.get('command', 'report')
    with open(file_path, 'w', encoding='utf-8') as f:
        f.write(f"# Delone Rectifier {title} report\n\n")
        header = report_data.get('header', {})
        if header:
            f.write(f"Version: `{header.get('version', '')}`\n\n")
            f.write("## Run configuration\n\n")
            f.write(tabulate(_scalar_rows(header.get('run_config', {})), headers=['key', 'value'],
                             tablefmt='github'))
            f.write("\n\n")

        for section, content in sorted(report_data.items()):
            if section in ('header', 'command'):
                continue
            f.write(f"## {section}\n\n")
            if isinstance(content, dict):
                rows = _scalar_rows(content)
                if rows:
                    f.write(tabulate(rows, headers=['key', 'value'], tablefmt='github'))
                    f.write("\n\n")
                for key, value in sorted(flatten_dict(content).items()):
                    if _is_record_list(value):
                        f.write(f"### {key}\n\n")
                        f.write(_record_table(value))
                        f.write("\n\n")
            elif _is_record_list(content):
                f.write(_record_table(content))
                f.write("\n\n")
            else:
                f.write(f"{content}\n\n")


def _is_record_list(value: Any) -> bool:
    return isinstance(value, list) and bool(value) and all(isinstance(v, dict) for v in value)


def _record_table(records: List[Dict[str, Any]]) -> str:
    columns: List[str] = []
    for record in records:
        for key in record:
            if key not in columns:
                columns.append(key)
    rows = [[_cell(record.get(c)) for c in columns] for record in records]
    return tabulate(rows, headers=columns, tablefmt='github')


def _cell(value: Any) -> Any:
    if isinstance(value, (dict, list)):
        return json.dumps(value, sort_keys=True)
    return value


def export_csv(frame: pd.DataFrame, file_path: str, header: Optional[Dict[str, Any]] = None) -> str:
    """
    Write a table as CSV preceded by ``# key: value`` comment lines.

    Nested header values are flattened with dotted keys; floats keep 17 significant digits.
    """
    create_path_if_not_exists(os.path.dirname(file_path))
    with open(file_path, 'w', encoding='utf-8', newline='') as f:
        if header:
            for key, value in sorted(flatten_dict(to_serializable(header)).items()):
                text = json.dumps(value, sort_keys=True) if isinstance(value, list) else value
                f.write(f"# {key}: {text}\n")
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    logger.info(f"Table exported to {file_path} ({len(frame)} rows)")
    return file_path


def _read_csv(file_path: str) -> pd.DataFrame:
    if not os.path.exists(file_path):
        raise PreconditionError(f"input file '{file_path}' does not exist")
    try:
        return pd.read_csv(file_path, comment='#')
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise PreconditionError(f"cannot read '{file_path}': {e}") from e


def read_points_csv(file_path: str) -> np.ndarray:
    """Points from a CSV with columns x, y (extra columns are ignored)."""
    frame = _read_csv(file_path)
    missing = [c for c in ('x', 'y') if c not in frame.columns]
    if missing:
        raise PreconditionError(f"'{file_path}' lacks columns {missing}")
    points = frame[['x', 'y']].to_numpy(dtype=float)
    if not np.all(np.isfinite(points)):
        raise PreconditionError(f"'{file_path}' holds non-finite coordinates")
    logger.info(f"Read {len(points)} points from {file_path}")
    return points


def read_density_csv(file_path: str) -> np.ndarray:
    """
    Density grid from a CSV with columns i, j, u (cell indices and value).

    The grid side is max(i, j) + 1; every cell must appear exactly once.
    """
    frame = _read_csv(file_path)
    missing = [c for c in ('i', 'j', 'u') if c not in frame.columns]
    if missing:
        raise PreconditionError(f"'{file_path}' lacks columns {missing}")
    i = frame['i'].to_numpy(dtype=np.int64)
    j = frame['j'].to_numpy(dtype=np.int64)
    if len(i) == 0 or i.min() < 0 or j.min() < 0:
        raise PreconditionError(f"'{file_path}' has no cells or negative indices")
    side = int(max(i.max(), j.max())) + 1
    values = np.full((side, side), np.nan)
    values[i, j] = frame['u'].to_numpy(dtype=float)
    if len(frame) != side * side or np.isnan(values).any():
        raise PreconditionError(f"'{file_path}' does not list every cell of a {side}x{side} grid once")
    return values


def density_frame(values: np.ndarray) -> pd.DataFrame:
    """Inverse of read_density_csv's layout: one row per cell, row-major."""
    side = values.shape[0]
    i, j = np.meshgrid(np.arange(side), np.arange(side), indexing='ij')
    return pd.DataFrame({'i': i.ravel(), 'j': j.ravel(), 'u': values.ravel()})


def read_region_file(file_path: str) -> List[GridRegion]:
    """
    Regions from a text file.

    Each region starts with a ``delta <v>`` line followed by one integer cell per line
    (``i j``, whitespace or comma separated). Blank lines and ``#`` comments are skipped.
    """
    if not os.path.exists(file_path):
        raise PreconditionError(f"region file '{file_path}' does not exist")
    blocks: List[Tuple[float, List[Tuple[int, ...]]]] = []
    with open(file_path, 'r', encoding='utf-8') as f:
        for number, raw in enumerate(f, start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            fields = line.replace(',', ' ').split()
            try:
                if fields[0] == 'delta':
                    if len(fields) != 2:
                        raise ValueError("expected 'delta <v>'")
                    blocks.append((float(fields[1]), []))
                elif not blocks:
                    raise ValueError("cell listed before any 'delta' line")
                else:
                    blocks[-1][1].append(tuple(int(v) for v in fields))
            except ValueError as e:
                raise PreconditionError(f"{file_path}:{number}: {e}") from e

    regions = []
    for index, (delta, cells) in enumerate(blocks):
        if not cells or len({len(c) for c in cells}) != 1:
            raise PreconditionError(f"region {index} in '{file_path}' has no cells or mixed dimensions")
        regions.append(GridRegion(delta, cells))
    logger.info(f"Read {len(regions)} regions from {file_path}")
    return regions
