"""
Substitution matrix analysis.
Tile types, primitivity, Perron data, the second spectral radius r(M) and the
Perron-Frobenius deviation bounds used by the hierarchy checks.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from ..core.field import FieldCoord
from ..core.rules import SubstitutionRule, iter_isometries
from ..core.utils import SpectralError

logger = logging.getLogger(__name__)


@dataclass
class SubstitutionMatrix:
    """Type-level substitution matrix: entry (i, j) counts type-j tiles inside lambda * type i."""

    entries: np.ndarray
    type_map: Dict[str, int] = field(default_factory=dict)
    lam: Optional[FieldCoord] = None
    lam_float: Optional[float] = None
    dimension: int = 2
    volumes: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return int(self.entries.shape[0])

    @classmethod
    def from_array(cls, entries: Sequence[Sequence[int]], lam: Optional[float] = None,
                   volumes: Optional[Sequence[float]] = None, dimension: int = 2) -> 'SubstitutionMatrix':
        """Wrap a raw nonnegative integer matrix (no rule attached)."""
        array = np.asarray(entries, dtype=np.int64)
        if array.ndim != 2 or array.shape[0] != array.shape[1]:
            raise SpectralError(f"substitution matrix must be square, got shape {array.shape}")
        if (array < 0).any():
            raise SpectralError("substitution matrix entries must be nonnegative")
        return cls(entries=array,
                   type_map={str(i): i for i in range(array.shape[0])},
                   lam_float=lam,
                   dimension=dimension,
                   volumes=None if volumes is None else np.asarray(volumes, dtype=float))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'n': self.n,
            'entries': self.entries.tolist(),
            'type_map': self.type_map,
            'lambda': self.lam_float,
            'dimension': self.dimension,
            'volumes': None if self.volumes is None else self.volumes.tolist()
        }


@dataclass
class SpectralReport:
    """Perron data and spectral classification of a primitive substitution matrix."""

    primitive: bool
    mu: float
    v: List[float]
    u: List[float]
    r: float
    pisot: Union[bool, str]
    thm2_applicable: bool
    one_norm: int
    eigenvalues: List[complex] = field(default_factory=list)
    mu_root: Optional[float] = None
    checks: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'primitive': self.primitive,
            'mu': self.mu,
            'r': self.r,
            'pisot': self.pisot,
            'thm2_applicable': self.thm2_applicable,
            'one_norm': self.one_norm,
            'v': self.v,
            'u': self.u,
            'mu_root': self.mu_root,
            'eigenvalues': [[z.real, z.imag] for z in self.eigenvalues],
            'checks': self.checks
        }


@dataclass
class PerronDeviation:
    """Deviation of M^l x from its Perron component, scaled by rho^l."""

    alpha: float
    K: float
    rho: float
    ratios: List[float]

    def to_dict(self) -> Dict[str, Any]:
        return {'alpha': self.alpha, 'K': self.K, 'rho': self.rho, 'ratios': self.ratios}


# Tile types

def _labelled_sets(rule: SubstitutionRule, prototile_id: str, iso=None):
    """Children of lambda * prototile as (label, vertex set) pairs, optionally moved by iso."""
    out = set()
    for j, (child_id, _) in enumerate(rule.children[prototile_id]):
        support = rule.child_support(prototile_id, j)
        if iso is not None:
            support = [iso.apply(v) for v in support]
        out.add((rule.prototile(child_id).label, frozenset(support)))
    return frozenset(out)


def _same_type(rule: SubstitutionRule, first: str, second: str) -> bool:
    a, b = rule.prototile(first), rule.prototile(second)
    if a.label != b.label:
        return False
    target = _labelled_sets(rule, second)
    for iso in iter_isometries(a.vertices, b.vertices, rule.order):
        if _labelled_sets(rule, first, iso.with_scaled_translation(rule.lam)) == target:
            return True
    return False


def build_matrix(rule: SubstitutionRule) -> SubstitutionMatrix:
    """
    Group prototiles into tile types and count types in every decomposition.

    Two prototiles share a type when one point-group isometry carries the first onto the
    second and its decomposition onto the second's decomposition.

    Args:
        rule: Valid substitution rule

    Returns:
        SubstitutionMatrix over tile types (in order of first appearance)
    """
    representatives: List[str] = []
    type_map: Dict[str, int] = {}
    for prototile_id in rule.prototile_ids:
        for index, rep in enumerate(representatives):
            if _same_type(rule, rep, prototile_id):
                type_map[prototile_id] = index
                break
        else:
            type_map[prototile_id] = len(representatives)
            representatives.append(prototile_id)

    n = len(representatives)
    entries = np.zeros((n, n), dtype=np.int64)
    for i, rep in enumerate(representatives):
        for child_id, _ in rule.children[rep]:
            entries[i, type_map[child_id]] += 1

    volumes = np.array([rule.prototile(rep).area for rep in representatives], dtype=float)
    logger.info(f"Rule '{rule.name}': {len(rule.prototiles)} prototiles in {n} tile types")
    return SubstitutionMatrix(entries=entries, type_map=type_map, lam=rule.lam,
                              lam_float=rule.lam_float, dimension=rule.dimension, volumes=volumes)


# Primitivity and Perron data

def _as_array(matrix: Union[SubstitutionMatrix, np.ndarray, Sequence]) -> np.ndarray:
    if isinstance(matrix, SubstitutionMatrix):
        return matrix.entries
    return np.asarray(matrix)


def is_primitive(matrix: Union[SubstitutionMatrix, np.ndarray, Sequence]) -> bool:
    """
    True iff some power M^k with k <= n^2 - 2n + 2 is entrywise positive.

    Powers are taken on the boolean pattern so nothing overflows.
    """
    pattern = _as_array(matrix) > 0
    n = pattern.shape[0]
    if n == 0:
        return False
    step = pattern.astype(np.int64)
    power = pattern.copy()
    for _ in range(max(1, n * n - 2 * n + 2)):
        if power.all():
            return True
        power = (power.astype(np.int64) @ step) > 0
    return bool(power.all())


def power_iteration(matrix: np.ndarray, tol: float = 1e-12, max_iter: int = 100000):
    """
    Dominant eigenpair of a primitive nonnegative matrix.

    Iterates from the all-ones vector with 1-norm normalization; stops when the residual
    ||A x - lam x||_1 falls below tol * lam.

    Returns:
        (lam, x) with x positive and summing to 1
    """
    a = np.asarray(matrix, dtype=float)
    x = np.full(a.shape[0], 1.0 / a.shape[0])
    lam = 0.0
    for _ in range(max_iter):
        y = a @ x
        lam = float(y.sum())
        if lam == 0.0:
            raise SpectralError("power iteration hit the zero vector")
        x_new = y / lam
        residual = float(np.abs(a @ x_new - lam * x_new).sum())
        x = x_new
        if residual < tol * lam:
            break
    else:
        logger.warning(f"Power iteration did not reach tol={tol} in {max_iter} steps")
    return lam, x


def characteristic_polynomial(matrix: np.ndarray) -> List[int]:
    """
    Integer characteristic polynomial det(xI - A), highest degree first (Faddeev-LeVerrier).
    """
    a = np.asarray(matrix, dtype=np.int64).astype(object)
    n = a.shape[0]
    coeffs = [1]
    work = np.zeros((n, n), dtype=object)
    identity = np.eye(n, dtype=np.int64).astype(object)
    c = 1
    for k in range(1, n + 1):
        work = a.dot(work) + c * identity
        trace = int(np.trace(a.dot(work)))
        c = -trace // k
        coeffs.append(c)
    return coeffs


def eigenvalues(matrix: np.ndarray, poly_max_n: int = 12) -> np.ndarray:
    """Spectrum of an integer matrix: roots of its exact characteristic polynomial for small n."""
    a = np.asarray(matrix)
    if a.shape[0] <= poly_max_n:
        return np.roots(np.array(characteristic_polynomial(a), dtype=float)).astype(complex)
    return np.linalg.eigvals(a.astype(float))


def spectral_report(matrix: Union[SubstitutionMatrix, np.ndarray, Sequence],
                    power_tol: float = 1e-12, power_max_iter: int = 100000,
                    pisot_margin: float = 1e-8, poly_max_n: int = 12) -> SpectralReport:
    """
    Perron eigenvalue, eigenvectors, second spectral radius and classification.

    Args:
        matrix: Primitive substitution matrix
        power_tol: Relative residual target for power iteration
        power_max_iter: Power iteration cap
        pisot_margin: |r - 1| below this is reported as "indeterminate"
        poly_max_n: Largest n solved through the characteristic polynomial

    Returns:
        SpectralReport
    """
    sub = matrix if isinstance(matrix, SubstitutionMatrix) else SubstitutionMatrix.from_array(matrix)
    a = sub.entries
    if not is_primitive(a):
        raise SpectralError("substitution matrix is not primitive")

    mu, v = power_iteration(a, power_tol, power_max_iter)
    _, u = power_iteration(a.T, power_tol, power_max_iter)

    unit_root = False
    if sub.n == 1:
        spectrum = np.array([complex(a[0, 0])])
        r_value = 0.0
        mu_root = float(a[0, 0])
    else:
        spectrum = eigenvalues(a, poly_max_n)
        if sub.n <= poly_max_n:
            coeffs = characteristic_polynomial(a)
            # Exact test for the eigenvalues +1 and -1.
            unit_root = any(sum(c * s ** (len(coeffs) - 1 - k) for k, c in enumerate(coeffs)) == 0
                            for s in (1, -1))
        perron = int(np.argmin(np.abs(spectrum - mu)))
        mu_root = float(spectrum[perron].real)
        rest = np.delete(spectrum, perron)
        r_value = float(np.max(np.abs(rest)))

    if unit_root and abs(r_value - 1.0) < pisot_margin:
        pisot: Union[bool, str] = False
    elif abs(r_value - 1.0) < pisot_margin:
        pisot = 'indeterminate'
        logger.warning(f"r(M) = {r_value} is within {pisot_margin} of 1; Pisot status indeterminate")
    else:
        pisot = r_value < 1.0

    checks: Dict[str, Any] = {'mu_agreement': abs(mu - mu_root) <= 1e-9 * max(1.0, mu)}
    lam = sub.lam_float
    if lam is not None:
        expected = lam ** sub.dimension
        checks['mu_equals_lambda_d'] = abs(mu - expected) <= 1e-9 * max(1.0, expected)
        if sub.volumes is not None:
            w = sub.volumes
            residual = float(np.max(np.abs(a @ w - expected * w)) / np.max(np.abs(w)))
            checks['volume_eigenvector_residual'] = residual
            checks['volume_eigenvector'] = residual <= 1e-9 * max(1.0, expected)
        thm2 = r_value < lam
    else:
        thm2 = r_value < math.sqrt(mu)

    report = SpectralReport(
        primitive=True,
        mu=mu,
        v=v.tolist(),
        u=(u / u.sum()).tolist(),
        r=r_value,
        pisot=pisot,
        thm2_applicable=bool(thm2),
        one_norm=int(a.sum(axis=1).max()),
        eigenvalues=[complex(z) for z in spectrum],
        mu_root=mu_root,
        checks=checks
    )
    logger.info(f"Spectral report: mu={mu:.12g}, r={r_value:.12g}, pisot={pisot}")
    return report


# Perron-Frobenius deviation

def _deviation_sequence(a: np.ndarray, start: np.ndarray, direction: np.ndarray,
                        left: np.ndarray, rho: float, l_max: int) -> List[float]:
    """||M^l start||_1 / rho^l for l = 1..l_max, with start kept orthogonal to the left vector."""
    norm = float(left @ direction)
    x = start - (left @ start) / norm * direction
    ratios = []
    scale = 1.0
    for _ in range(l_max):
        x = a @ x
        x = x - (left @ x) / norm * direction
        scale *= rho
        ratios.append(float(np.abs(x).sum()) / scale)
    return ratios


def pf_bound(matrix: Union[SubstitutionMatrix, np.ndarray, Sequence], rho: float,
             l_max: int = 30, report: Optional[SpectralReport] = None) -> PerronDeviation:
    """
    K_est = max_l ||M^l e - alpha mu^l v||_1 / rho^l with e the normalized all-ones vector.

    alpha = <u, e> / <u, v> with u the left Perron vector.

    Args:
        matrix: Primitive substitution matrix
        rho: Decay rate, must exceed r(M)
        l_max: Largest power
        report: Precomputed spectral report

    Returns:
        PerronDeviation with per-l ratios
    """
    a = _as_array(matrix).astype(float)
    report = report or spectral_report(matrix)
    if rho <= report.r:
        raise SpectralError(f"rho={rho} must exceed r(M)={report.r}")
    n = a.shape[0]
    e = np.full(n, 1.0 / math.sqrt(n))
    u, v = np.asarray(report.u), np.asarray(report.v)
    alpha = float(u @ e) / float(u @ v)
    ratios = _deviation_sequence(a, e, v, u, rho, l_max)
    return PerronDeviation(alpha=alpha, K=max(ratios) if ratios else 0.0, rho=rho, ratios=ratios)


def default_rho(report: SpectralReport, lam: float) -> float:
    """Midpoint of r(M) and lambda, floored at 1e-12."""
    return max((report.r + lam) / 2.0, 1e-12)


def tile_density(matrix: SubstitutionMatrix, report: SpectralReport) -> float:
    """alpha = <u, 1> / <u, w> with w the prototile volumes: level-0 tiles per unit area."""
    if matrix.volumes is None:
        raise SpectralError("tile density needs prototile volumes")
    u = np.asarray(report.u)
    return float(u.sum()) / float(u @ matrix.volumes)


def perron_deviation(matrix: SubstitutionMatrix, report: SpectralReport, rho: Optional[float] = None,
                 l_max: int = 30) -> PerronDeviation:
    """
    K0 = max over l <= l_max and types i of |(M^l 1)_i - alpha mu^l w_i| / rho^l.

    (M^l 1)_i counts level-0 tiles inside a level-l supertile of type i.
    """
    if matrix.lam_float is None:
        raise SpectralError("Perron deviation constant needs the dilation factor")
    rho = rho if rho is not None else default_rho(report, matrix.lam_float)
    if rho <= report.r:
        raise SpectralError(f"rho={rho} must exceed r(M)={report.r}")
    alpha = tile_density(matrix, report)
    a = matrix.entries.astype(float)
    ones = np.ones(matrix.n)
    u = np.asarray(report.u)
    norm = float(u @ matrix.volumes)
    x = ones - float(u @ ones) / norm * matrix.volumes
    ratios = []
    scale = 1.0
    for _ in range(l_max):
        x = a @ x
        x = x - float(u @ x) / norm * matrix.volumes
        scale *= rho
        ratios.append(float(np.abs(x).max()) / scale)
    # l = 0 term: |1 - alpha w_i|
    ratios.insert(0, float(np.abs(ones - alpha * matrix.volumes).max()))
    return PerronDeviation(alpha=alpha, K=max(ratios), rho=rho, ratios=ratios)
