"""
Exponent ladder, limit covariance and the box constant c_A.
"""

import logging
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.linalg import LinAlgError, cho_factor

from src.utils.errors import ValidationError

logger = logging.getLogger(__name__)


def _check_lambdas(lambdas) -> np.ndarray:
    lam = np.asarray(lambdas, dtype=float).reshape(-1)
    if lam.size == 0 or np.any(lam <= 0) or np.any(np.diff(lam) >= 0):
        raise ValidationError(f"eigenvalues must be positive and strictly decreasing, got {lam.tolist()}")
    return lam


def exponent_power(lambdas, index: int) -> float:
    """p_i = Σ_{j<i} λ_j/λ_i, the power in χ and the L-scaling of μ (index 1-based)."""
    lam = np.asarray(lambdas, dtype=float)
    return float(np.sum(lam[:index - 1]) / lam[index - 1])


@dataclass(frozen=True)
class ExponentLadder:
    rho: np.ndarray

    def __getitem__(self, index: int) -> float:
        """rho_i for a 1-based index."""
        if not 1 <= index <= self.rho.size:
            raise IndexError(f"index {index} outside 1..{self.rho.size}")
        return float(self.rho[index - 1])

    def __len__(self) -> int:
        return self.rho.size

    def to_list(self) -> List[float]:
        return self.rho.tolist()


def compute_rho(lambdas) -> ExponentLadder:
    """rho_i = Σ_{j<i} (λ_j/λ_i − 1); rho_1 = 0."""
    lam = _check_lambdas(lambdas)
    rho = np.array([np.sum(lam[:i] / lam[i] - 1.0) for i in range(lam.size)])
    return ExponentLadder(rho=rho)


@dataclass(frozen=True, eq=False)
class LimitCovariance:
    """C^{jk} = (σσᵀ)^{jk}(0) / (λ_j + λ_k) with its Cholesky factor."""

    matrix: np.ndarray
    cholesky: tuple

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def to_list(self) -> List[List[float]]:
        return self.matrix.tolist()


def limit_covariance(sigma0, lambdas) -> LimitCovariance:
    lam = np.asarray(lambdas, dtype=float).reshape(-1)
    sigma0 = np.atleast_2d(np.asarray(sigma0, dtype=float))
    if sigma0.shape[0] != lam.size:
        raise ValidationError(f"σ(0) has {sigma0.shape[0]} rows, expected {lam.size}")

    C = (sigma0 @ sigma0.T) / (lam[:, None] + lam[None, :])
    C = 0.5 * (C + C.T)
    try:
        factor = cho_factor(C, lower=True)
    except LinAlgError as e:
        raise ValidationError("limit covariance is numerically singular (σ(0) rank-deficient)") from e
    # cho_factor accepts some near-singular matrices; check the pivots too
    pivots = np.abs(np.diag(factor[0]))
    if pivots.min() <= 1e-12 * max(1.0, pivots.max()):
        raise ValidationError("limit covariance is numerically singular (σ(0) rank-deficient)")

    return LimitCovariance(matrix=C, cholesky=factor)


def c_A(target, lambdas, L: float) -> float:
    """
    Box constant L^{-p_i} ∏_{j<i}(b^j − a^j) ∏_{j>i} 1{0 ∈ (a^j, b^j)}, i = face axis.

    Targets live on faces of the box B_L in chart coordinates.
    """
    i = target.axis
    p = exponent_power(lambdas, i)
    bounds = target.bounds
    lengths = bounds[:i - 1, 1] - bounds[:i - 1, 0]
    trailing = bounds[i:]
    indicator = bool(np.all((trailing[:, 0] < 0.0) & (trailing[:, 1] > 0.0)))
    value = L ** (-p) * float(np.prod(lengths)) * float(indicator)
    logger.debug(f"c_A({target.name}) = {value:.6g}")
    return value
