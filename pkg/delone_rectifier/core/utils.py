"""
Utility functions for the Delone Rectifier.
Includes the exception hierarchy, snapping helpers and small collection helpers.
"""

import concurrent.futures
import os
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm


class DeloneRectifierError(Exception):
    """Base class for all errors raised by the package."""
    pass


class RuleParseError(DeloneRectifierError):
    """Exception raised when a rule file or built-in rule spec cannot be parsed."""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field:
            location.append(f"field '{field}'")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")


class UnsupportedFieldError(DeloneRectifierError):
    """Exception raised for cyclotomic orders the coordinate engine does not handle."""
    pass


class RuleValidationError(DeloneRectifierError):
    """Exception raised when an operation needs a valid rule and gets an invalid one."""

    def __init__(self, message: str, report: Any = None):
        self.report = report
        super().__init__(message)


class DepthLimitError(DeloneRectifierError):
    """Exception raised when a patch would exceed the configured tile budget."""
    pass


class RegionError(DeloneRectifierError):
    """Exception raised when a region leaves the point window or the patch."""
    pass


class ZeroCountError(DeloneRectifierError):
    """Exception raised when a density ratio is undefined because a cube is empty."""
    pass


class PreconditionError(DeloneRectifierError):
    """Exception raised when an operation's documented precondition does not hold."""
    pass


class RegressionError(DeloneRectifierError):
    """Exception raised when a log-log fit has too few usable sizes."""
    pass


class SpectralError(DeloneRectifierError):
    """Exception raised for invalid spectral requests (non-primitive input, rho too small)."""
    pass


class FlattenerError(DeloneRectifierError):
    """Exception raised when the flattener cannot build or validate a map."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class MatchingError(DeloneRectifierError):
    """Exception raised when no perfect core matching exists below the radius cap."""

    def __init__(self, message: str, matching: Any = None, deficiency: Optional[Dict[str, Any]] = None):
        self.matching = matching
        self.deficiency = deficiency or {}
        super().__init__(message)


def snap(values: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """
    Snap values to the nearest integer multiple of tol.

    Args:
        values: Array of floats
        tol: Snapping grid

    Returns:
        Snapped array (same shape)
    """
    return np.round(np.asarray(values, dtype=float) / tol) * tol


def create_path_if_not_exists(path: str) -> None:
    """Create directory path if it doesn't exist."""
    if path and not os.path.exists(path):
        os.makedirs(path, exist_ok=True)


def flatten_dict(d: Dict, parent_key: str = '', sep: str = '.') -> Dict:
    """Flatten nested dictionary with dot notation for keys."""
    items = []
    for k, v in d.items():
        new_key = f"{parent_key}{sep}{k}" if parent_key else k
        if isinstance(v, dict):
            items.extend(flatten_dict(v, new_key, sep=sep).items())
        else:
            items.append((new_key, v))
    return dict(items)


def parallel_map(func: Callable[[Any], Any], items: Sequence[Any], jobs: int = 1,
                 desc: Optional[str] = None, progress: bool = False) -> List[Any]:
    """
    Apply func to every item, optionally on a thread pool.

    Results come back in input order regardless of completion order.

    Args:
        func: Callable applied to each item
        items: Inputs
        jobs: Worker count (1 runs inline)
        desc: Progress bar label
        progress: Show a tqdm progress bar

    Returns:
        List of results aligned with items
    """
    results: List[Any] = [None] * len(items)
    bar = tqdm(total=len(items), desc=desc, disable=not progress, leave=False)
    if jobs <= 1 or len(items) <= 1:
        for index, item in enumerate(items):
            results[index] = func(item)
            bar.update(1)
        bar.close()
        return results

    with concurrent.futures.ThreadPoolExecutor(max_workers=min(jobs, len(items))) as executor:
        future_to_index = {executor.submit(func, item): index for index, item in enumerate(items)}
        for future in concurrent.futures.as_completed(future_to_index):
            results[future_to_index[future]] = future.result()
            bar.update(1)
    bar.close()
    return results
