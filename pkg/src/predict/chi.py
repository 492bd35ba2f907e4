"""
Chi Weight Evaluator

Computes the face weights χ^i_±(y) of the limit measure.
Handles:
- Reduction of the (d-i)-fold Gaussian integral to a one-dimensional
  conditional law (marginalizing the trailing coordinates is exact)
- Half-line moments ∫_0^∞ u^p φ(u; m, s²) du by two independent backends:
  adaptive quadrature split at the peak, and a generalized Gauss-Laguerre
  rule with the polynomial weight absorbed
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import integrate
from scipy.linalg import cho_factor, cho_solve
from scipy.special import roots_genlaguerre

from src.predict.exponents import LimitCovariance, exponent_power
from src.utils.config import section
from src.utils.errors import ConfigError, QuadratureError

logger = logging.getLogger(__name__)

BACKENDS = ('adaptive', 'gauss_hermite')


@dataclass(frozen=True)
class GaussLaguerreRule:
    """
    Nodes/weights for ∫_0^∞ v^alpha e^{-v} g(v) dv ≈ Σ w_k g(v_k).
    """
    alpha: float
    n: int = 64

    def nodes_weights(self) -> Tuple[np.ndarray, np.ndarray]:
        return roots_genlaguerre(self.n, self.alpha)


class ChiEvaluator:
    """
    χ^i_± for one index i and one limit covariance.

    Args:
        covariance: limit covariance C
        lambdas: eigenvalues (strictly decreasing)
        index: i in 1..d
        config: engine config; the 'quadrature' section overrides the defaults
    """

    def __init__(self, covariance: LimitCovariance, lambdas, index: int,
                 config: Optional[Dict] = None):
        self.covariance = covariance
        self.lambdas = np.asarray(lambdas, dtype=float)
        self.index = int(index)
        d = covariance.dim
        if not 1 <= self.index <= d:
            raise ValueError(f"index {index} outside 1..{d}")

        self.BACKEND = 'adaptive'
        self.TOLERANCE = 1e-10
        self.TRUNCATION_SIGMAS = 12.0
        self.MAX_SUBDIVISIONS = 200
        self.GH_NODES = 64

        if config:
            quad_config = section(config, 'quadrature')
            self.BACKEND = quad_config.get('backend', self.BACKEND)
            self.TOLERANCE = quad_config.get('tolerance', self.TOLERANCE)
            self.TRUNCATION_SIGMAS = quad_config.get('truncation_sigmas', self.TRUNCATION_SIGMAS)
            self.MAX_SUBDIVISIONS = quad_config.get('max_subdivisions', self.MAX_SUBDIVISIONS)
            self.GH_NODES = quad_config.get('gh_nodes', self.GH_NODES)
        if self.BACKEND not in BACKENDS:
            raise ConfigError(f"unknown quadrature backend '{self.BACKEND}' (expected one of {BACKENDS})")

        self.power = exponent_power(self.lambdas, self.index)
        self._prepare_conditional()

    def _prepare_conditional(self):
        C = self.covariance.matrix
        i = self.index
        if i == 1:
            self._head = None
            self._gain = np.zeros(0)
            self._cond_std = float(np.sqrt(C[0, 0]))
            self._log_norm = 0.0
            return

        head = C[:i - 1, :i - 1]
        cross = C[:i - 1, i - 1]
        self._head = cho_factor(head, lower=True)
        # m = gainᵀ v and s² = C_ii − crossᵀ head⁻¹ cross
        self._gain = cho_solve(self._head, cross)
        variance = C[i - 1, i - 1] - float(cross @ self._gain)
        self._cond_std = float(np.sqrt(max(variance, 0.0)))
        log_det = 2.0 * float(np.sum(np.log(np.diag(self._head[0]))))
        self._log_norm = -0.5 * ((i - 1) * np.log(2 * np.pi) + log_det)

    def conditional(self, y) -> Tuple[float, float, float]:
        """
        Return (density prefactor, conditional mean of x^i, conditional std)
        given x^{<i} = −y^{<i}.
        """
        y = np.asarray(y, dtype=float).reshape(-1)
        if self.index == 1:
            return 1.0, 0.0, self._cond_std
        v = -y[:self.index - 1]
        quad_form = float(v @ cho_solve(self._head, v))
        prefactor = float(np.exp(self._log_norm - 0.5 * quad_form))
        mean = float(self._gain @ v)
        return prefactor, mean, self._cond_std

    def chi_pm(self, y) -> Tuple[float, float]:
        """(χ^i_+(y), χ^i_−(y))."""
        y = np.asarray(y, dtype=float).reshape(-1)
        prefactor, mean, std = self.conditional(y)
        shift = mean + y[self.index - 1]
        plus = prefactor * self.half_moment(shift, std)
        minus = prefactor * self.half_moment(-shift, std)
        return plus, minus

    def half_moment(self, mean: float, std: float) -> float:
        """∫_0^∞ u^p φ(u; mean, std²) du."""
        if std <= 0.0:
            return float(max(mean, 0.0) ** self.power) if mean > 0 else 0.0
        if self.BACKEND == 'gauss_hermite':
            return self._half_moment_laguerre(mean, std)
        return self._half_moment_adaptive(mean, std)

    def _half_moment_adaptive(self, mean: float, std: float) -> float:
        p = self.power
        norm = 1.0 / (np.sqrt(2 * np.pi) * std)

        def integrand(u):
            return u ** p * norm * np.exp(-0.5 * ((u - mean) / std) ** 2)

        upper = max(0.0, mean) + self.TRUNCATION_SIGMAS * std
        # split at the peak so each piece is monotone-ish
        pieces = [(0.0, mean), (mean, upper)] if 0.0 < mean < upper else [(0.0, upper)]

        total = 0.0
        for lo, hi in pieces:
            result = integrate.quad(integrand, lo, hi, epsabs=1e-15, epsrel=self.TOLERANCE,
                                    limit=self.MAX_SUBDIVISIONS, full_output=1)
            if len(result) > 3:
                raise QuadratureError(f"χ quadrature did not converge on [{lo:.3g}, {hi:.3g}] "
                                      f"(p={p:.3g}, m={mean:.3g}, s={std:.3g}): {result[3]}")
            total += result[0]
        return float(total)

    def _half_moment_laguerre(self, mean: float, std: float) -> float:
        # u = √2·s·√v turns the Gaussian into e^{-v}; cosh/sinh split keeps both parts entire in v
        p = self.power
        a = mean / (np.sqrt(2.0) * std)
        scale = (np.sqrt(2.0) * std) ** p / np.sqrt(np.pi)

        v_even, w_even = GaussLaguerreRule((p - 1.0) / 2.0, self.GH_NODES).nodes_weights()
        r = np.sqrt(v_even)
        even = 0.5 * (np.exp(2 * a * r - a * a) + np.exp(-2 * a * r - a * a))

        v_odd, w_odd = GaussLaguerreRule(p / 2.0, self.GH_NODES).nodes_weights()
        r = np.sqrt(v_odd)
        odd = 0.5 * (np.exp(2 * a * r - a * a) - np.exp(-2 * a * r - a * a)) / r

        return float(scale * 0.5 * (w_even @ even + w_odd @ odd))


def chi_pm(y, index: int, covariance: LimitCovariance, lambdas,
           config: Optional[Dict] = None) -> Tuple[float, float]:
    """Convenience wrapper around ChiEvaluator(...).chi_pm(y)."""
    return ChiEvaluator(covariance, lambdas, index, config).chi_pm(y)
