"""
Power-Law Fitting

Handles:
- Weighted least squares of log(k/n) on log ε (delta-method weights)
- Wilson score intervals for hit fractions
- Collapse rate of transverse exit coordinates across the ε ladder
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import binomtest

from src.utils.errors import UnderpoweredError

logger = logging.getLogger(__name__)


@dataclass
class PowerLawFit:
    """log p = intercept + slope * log ε; covariance assumes known variances."""

    slope: float
    intercept: float
    slope_se: float
    intercept_se: float
    weights: List[float]
    r_squared: float
    n_points: int

    @property
    def constant(self) -> float:
        return float(np.exp(self.intercept))

    def to_dict(self) -> Dict:
        return {
            'slope': self.slope,
            'slope_se': self.slope_se,
            'intercept': self.intercept,
            'intercept_se': self.intercept_se,
            'constant': self.constant,
            'r_squared': self.r_squared,
            'n_points': self.n_points,
            'weights': list(self.weights),
        }


def fit_exponent(points: Sequence[Tuple[float, int, int]], min_hits: int = 25) -> PowerLawFit:
    """
    Fit hit fractions k/n ≈ μ ε^ρ on a ladder of (ε, k, n) points.

    Var(log p̂) ≈ (1 − p)/k by the delta method; weights are its inverse.

    Raises:
        UnderpoweredError: fewer than 3 points, or a point with k = 0 or k < min_hits
    """
    points = [(float(e), int(k), int(n)) for e, k, n in points]
    if len(points) < 3:
        raise UnderpoweredError(f"need at least 3 ladder points, got {len(points)}")
    for eps, k, n in points:
        if k == 0:
            raise UnderpoweredError(f"no hits at ε={eps:g}")
        if k < min_hits:
            raise UnderpoweredError(f"only {k} hits at ε={eps:g} (need {min_hits})")
        if k > n:
            raise ValueError(f"hits {k} exceed trials {n} at ε={eps:g}")

    eps = np.array([p[0] for p in points])
    k = np.array([p[1] for p in points], dtype=float)
    n = np.array([p[2] for p in points], dtype=float)
    p_hat = k / n
    variance = np.maximum((1.0 - p_hat) / k, 1e-12)
    w = 1.0 / variance

    X = np.column_stack([np.ones_like(eps), np.log(eps)])
    y = np.log(p_hat)
    xtwx = X.T @ (w[:, None] * X)
    cov = np.linalg.inv(xtwx)
    beta = cov @ (X.T @ (w * y))

    residual = y - X @ beta
    y_bar = np.sum(w * y) / np.sum(w)
    ss_tot = float(np.sum(w * (y - y_bar) ** 2))
    r_squared = 1.0 - float(np.sum(w * residual ** 2)) / ss_tot if ss_tot > 0 else 1.0

    fit = PowerLawFit(
        slope=float(beta[1]),
        intercept=float(beta[0]),
        slope_se=float(np.sqrt(max(cov[1, 1], 0.0))),
        intercept_se=float(np.sqrt(max(cov[0, 0], 0.0))),
        weights=w.tolist(),
        r_squared=r_squared,
        n_points=len(points),
    )
    logger.debug(f"Power-law fit: slope {fit.slope:.4f} ± {fit.slope_se:.4f}, constant {fit.constant:.4g}")
    return fit


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> Tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method='wilson')
    return float(ci.low), float(ci.high)


@dataclass
class CollapseFit:
    coordinate: int
    slope: Optional[float]
    intercept: Optional[float]
    slope_se: Optional[float]
    epsilons: List[float] = field(default_factory=list)
    medians: List[float] = field(default_factory=list)
    exact_collapse: bool = False
    expected: Optional[float] = None

    def to_dict(self) -> Dict:
        return {
            'coordinate': self.coordinate,
            'slope': self.slope,
            'slope_se': self.slope_se,
            'intercept': self.intercept,
            'expected': self.expected,
            'exact_collapse': self.exact_collapse,
            'epsilons': self.epsilons,
            'medians': self.medians,
        }


def transverse_collapse_rate(samples_by_eps: Dict[float, np.ndarray], coordinate: int,
                             lambdas=None, index: Optional[int] = None) -> CollapseFit:
    """
    Regress log median|x^j| on log ε for a transverse coordinate j (1-based).

    The expected slope is 1 − λ_j/λ_i when lambdas and the index are given.

    Raises:
        UnderpoweredError: fewer than 2 ε values with samples
    """
    usable = {float(e): np.asarray(s) for e, s in samples_by_eps.items() if len(s) > 0}
    if len(usable) < 2:
        raise UnderpoweredError(f"need conditioned samples at ≥ 2 ε values, got {len(usable)}")

    expected = None
    if lambdas is not None and index is not None:
        lam = np.asarray(lambdas, dtype=float)
        expected = float(1.0 - lam[coordinate - 1] / lam[index - 1])

    eps = np.array(sorted(usable, reverse=True))
    medians = np.array([np.median(np.abs(usable[e][:, coordinate - 1])) for e in eps])
    if np.all(medians == 0):
        return CollapseFit(coordinate, None, None, None, eps.tolist(), medians.tolist(),
                           exact_collapse=True, expected=expected)
    if np.any(medians == 0):
        raise UnderpoweredError(f"median |x^{coordinate}| vanishes at some but not all ε values")

    X = np.column_stack([np.ones_like(eps), np.log(eps)])
    beta, *_ = np.linalg.lstsq(X, np.log(medians), rcond=None)
    slope_se = None
    if len(eps) > 2:
        residual = np.log(medians) - X @ beta
        sigma2 = float(residual @ residual) / (len(eps) - 2)
        slope_se = float(np.sqrt(sigma2 * np.linalg.inv(X.T @ X)[1, 1]))

    return CollapseFit(coordinate, float(beta[1]), float(beta[0]), slope_se,
                       eps.tolist(), medians.tolist(), expected=expected)
