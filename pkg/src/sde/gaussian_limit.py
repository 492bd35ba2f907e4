"""
Gaussian Limit Samplers

Handles:
- The stochastic convolution Z_T = ∫_0^T e^{-Λs} σ(0) dW_s, sampled with
  exact Gaussian increments (the integrand is deterministic)
- The linear-system exit sampler built on X_t ≈ ε e^{Λt}(ξ₀ + N),
  N ~ N(0, C): exit face and location without time stepping
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from scipy.linalg import cholesky, eigh

from src.model.domain import BoxDomain
from src.predict.exponents import limit_covariance
from src.sde.rng import DUHAMEL_STREAM, GAUSSIAN_STREAM, block_generator, block_ranges
from src.utils.errors import ValidationError

logger = logging.getLogger(__name__)

CHUNK = 65536


def _psd_root(matrix: np.ndarray) -> np.ndarray:
    """Lower factor R with R Rᵀ = matrix; tolerates singular PSD matrices."""
    try:
        return cholesky(matrix, lower=True)
    except np.linalg.LinAlgError:
        values, vectors = eigh(matrix)
        return vectors * np.sqrt(np.clip(values, 0.0, None))


def increment_covariance(sigma0: np.ndarray, lambdas, s0: float, s1: float) -> np.ndarray:
    """Cov of ∫_{s0}^{s1} e^{-Λs}σ(0)dW_s: (σσᵀ)^{jk}(e^{-(λj+λk)s0} − e^{-(λj+λk)s1})/(λj+λk)."""
    lam = np.asarray(lambdas, dtype=float)
    rate = lam[:, None] + lam[None, :]
    return (sigma0 @ sigma0.T) * (np.exp(-rate * s0) - np.exp(-rate * s1)) / rate


def simulate_gaussian_limit(system, T: float, n: int, seed: int, n_steps: int = 64,
                            check_horizon: bool = True) -> np.ndarray:
    """
    n samples of Z_T, shape (n, d).

    Raises:
        ValidationError: e^{-λ_d T} ≥ 1e-8 (the horizon does not reach the limit)
    """
    lam = system.lambdas
    if check_horizon and np.exp(-lam[-1] * T) >= 1e-8:
        raise ValidationError(f"T={T} too short: e^(-λ_d T) = {np.exp(-lam[-1] * T):.3g} ≥ 1e-8")

    sigma0 = system.sigma0
    grid = np.linspace(0.0, T, n_steps + 1)
    roots = [_psd_root(increment_covariance(sigma0, lam, a, b)) for a, b in zip(grid[:-1], grid[1:])]

    d = system.dim
    out = np.zeros((n, d))
    for block, lo, hi in block_ranges(n, CHUNK):
        rng = block_generator(seed, GAUSSIAN_STREAM, block)
        z = np.zeros((hi - lo, d))
        for root in roots:
            z += rng.standard_normal((hi - lo, d)) @ root.T
        out[lo:hi] = z
    return out


@dataclass
class DuhamelExits:
    """Exit sample from the Gaussian representation of the linear system."""
    epsilon: float
    times: np.ndarray
    locations: np.ndarray
    face_axis: np.ndarray
    face_sign: np.ndarray

    def face_probabilities(self) -> Dict[int, float]:
        """P(exit through face axis k), k = 1..d."""
        n = len(self.face_axis)
        d = self.locations.shape[1]
        return {k: float(np.count_nonzero(self.face_axis == k)) / n for k in range(1, d + 1)}


def sample_duhamel_exits(system, domain, epsilon: float, n: int, seed: int) -> DuhamelExits:
    """
    τ_k = (1/λ_k) log(L / (ε|ξ₀^k + N_k|)); the exit face is argmin_k τ_k.

    Only defined for the pure linear system on a box domain.
    """
    if not system.is_linear or not isinstance(domain, BoxDomain):
        raise ValidationError("the Gaussian exit sampler needs a linear system on a box domain")
    if not 0 < epsilon < 1:
        raise ValidationError(f"epsilon must lie in (0, 1), got {epsilon}")

    lam = system.lambdas
    L = domain.half_width
    root = limit_covariance(system.sigma0, lam).cholesky[0]
    root = np.tril(root)

    times, locations, axes, signs = [], [], [], []
    for block, lo, hi in block_ranges(n, CHUNK):
        rng = block_generator(seed, DUHAMEL_STREAM, block)
        v = system.xi0 + rng.standard_normal((hi - lo, system.dim)) @ root.T
        with np.errstate(divide='ignore'):
            tau = np.log(L / (epsilon * np.abs(v))) / lam
        tau = np.maximum(tau, 0.0)
        axis = np.argmin(tau, axis=1)
        t = np.take_along_axis(tau, axis[:, None], 1)[:, 0]

        x = np.clip(epsilon * np.exp(lam * t[:, None]) * v, -L, L)
        sign = np.where(np.take_along_axis(v, axis[:, None], 1)[:, 0] >= 0, 1, -1)
        np.put_along_axis(x, axis[:, None], (sign * L)[:, None].astype(float), 1)

        times.append(t)
        locations.append(x)
        axes.append(axis + 1)
        signs.append(sign)

    logger.debug(f"Gaussian exit sampler: {n} exits at ε={epsilon:g}")
    return DuhamelExits(epsilon, np.concatenate(times), np.vstack(locations),
                        np.concatenate(axes).astype(np.int64), np.concatenate(signs).astype(np.int64))
