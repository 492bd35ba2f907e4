"""
System Specification

Describes the diffusion dX = b(X)dt + eps*sigma(X)dW near a repelling
equilibrium at the origin, together with its linearizing conjugacy.
Handles:
- Built-in systems (pure linear, quadratic shear with exact conjugacy)
- Construction from a campaign [system] table
- Assumption checks (eigenvalue ordering, rank of sigma(0), conjugacy
  identities, pushforward, low-order resonances)

All callables are batched: they accept arrays of shape (..., d).
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from scipy.stats import qmc

from src.utils.config import section
from src.utils.errors import ConfigError, ValidationError

logger = logging.getLogger(__name__)

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class Conjugacy:
    """Linearizing change of coordinates y = f(x) with f(0)=0, Df(0)=I."""

    forward: ArrayFn
    inverse: ArrayFn
    jacobian: Optional[ArrayFn] = None
    name: str = "identity"

    def jac(self, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
        """Df(x) with shape (..., d, d); central differences when no closed form is given."""
        x = np.asarray(x, dtype=float)
        if self.jacobian is not None:
            return self.jacobian(x)
        d = x.shape[-1]
        columns = []
        for k in range(d):
            e = np.zeros(d)
            e[k] = step
            columns.append((self.forward(x + e) - self.forward(x - e)) / (2 * step))
        return np.stack(columns, axis=-1)


def identity_conjugacy() -> Conjugacy:
    return Conjugacy(
        forward=lambda x: np.array(x, dtype=float, copy=True),
        inverse=lambda x: np.array(x, dtype=float, copy=True),
        jacobian=lambda x: np.broadcast_to(np.eye(np.shape(x)[-1]),
                                           np.shape(x) + (np.shape(x)[-1],)).copy(),
        name="identity",
    )


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """
    Drift, noise and conjugacy of the perturbed system.

    Args:
        lambdas: eigenvalues of Db(0), expected strictly decreasing and positive
        drift: x -> b(x)
        sigma: x -> sigma(x), shape (..., d, n)
        conjugacy: the pair (f, f^-1)
        xi0: deterministic initial scale point (X_0 = eps * xi0)
        constant_sigma: the d x n matrix when sigma does not depend on x
        is_linear: True when b(x) = diag(lambdas) x and f is the identity
    """

    lambdas: np.ndarray
    drift: ArrayFn
    sigma: ArrayFn
    conjugacy: Conjugacy
    xi0: np.ndarray
    noise_dim: int
    constant_sigma: Optional[np.ndarray] = None
    is_linear: bool = False
    name: str = "custom"
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        lambdas = np.asarray(self.lambdas, dtype=float).reshape(-1)
        xi0 = np.asarray(self.xi0, dtype=float).reshape(-1)
        if xi0.shape != lambdas.shape:
            raise ValueError(f"xi0 has dimension {xi0.size}, expected {lambdas.size}")
        if self.noise_dim < lambdas.size:
            raise ValueError(f"noise_dim {self.noise_dim} must be >= dim {lambdas.size}")
        object.__setattr__(self, 'lambdas', lambdas)
        object.__setattr__(self, 'xi0', xi0)
        if self.constant_sigma is not None:
            sigma = np.asarray(self.constant_sigma, dtype=float)
            if sigma.shape != (lambdas.size, self.noise_dim):
                raise ValueError(f"sigma has shape {sigma.shape}, expected "
                                 f"({lambdas.size}, {self.noise_dim})")
            object.__setattr__(self, 'constant_sigma', sigma)

    @property
    def dim(self) -> int:
        return self.lambdas.size

    @property
    def sigma0(self) -> np.ndarray:
        """sigma(0) as a d x n matrix."""
        if self.constant_sigma is not None:
            return self.constant_sigma
        return np.asarray(self.sigma(np.zeros(self.dim)), dtype=float)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'lambdas': self.lambdas.tolist(),
            'noise_dim': self.noise_dim,
            'sigma0': self.sigma0.tolist(),
            'xi0': self.xi0.tolist(),
            'is_linear': self.is_linear,
            'params': dict(self.params),
        }


def _constant_sigma_fn(sigma: np.ndarray) -> ArrayFn:
    def sigma_fn(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(sigma, x.shape[:-1] + sigma.shape)
    return sigma_fn


def _default_sigma(d: int, sigma) -> np.ndarray:
    if sigma is None:
        return np.eye(d)
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    return sigma


def linear_system(lambdas, sigma=None, xi0=None, name: str = "linear") -> SystemSpec:
    """Pure linear drift b(x) = diag(lambdas) x with identity conjugacy."""
    lam = np.asarray(lambdas, dtype=float).reshape(-1)
    d = lam.size
    sigma = _default_sigma(d, sigma)
    xi0 = np.zeros(d) if xi0 is None else xi0

    return SystemSpec(
        lambdas=lam,
        drift=lambda x: np.asarray(x, dtype=float) * lam,
        sigma=_constant_sigma_fn(sigma),
        conjugacy=identity_conjugacy(),
        xi0=xi0,
        noise_dim=sigma.shape[1],
        constant_sigma=sigma,
        is_linear=True,
        name=name,
    )


def shear_system(lambdas, coefficient: float = 0.5, sigma=None, xi0=None,
                 name: str = "shear") -> SystemSpec:
    """
    Quadratic shear b(x) = diag(lambdas) x + c * (x^1)^2 e_2.

    Exact conjugacy f(x) = x - kappa * (x^1)^2 e_2 with
    kappa = c / (2*lambda_1 - lambda_2); requires lambda_2 != 2*lambda_1.
    """
    lam = np.asarray(lambdas, dtype=float).reshape(-1)
    d = lam.size
    if d < 2:
        raise ConfigError("shear drift needs dimension >= 2")
    if np.isclose(lam[1], 2 * lam[0]):
        raise ConfigError("shear drift needs lambda_2 != 2*lambda_1")
    c = float(coefficient)
    kappa = c / (2 * lam[0] - lam[1])
    sigma = _default_sigma(d, sigma)
    xi0 = np.zeros(d) if xi0 is None else xi0

    def drift(x):
        x = np.asarray(x, dtype=float)
        out = x * lam
        out[..., 1] += c * x[..., 0] ** 2
        return out

    def forward(x):
        y = np.array(x, dtype=float, copy=True)
        y[..., 1] -= kappa * y[..., 0] ** 2
        return y

    def inverse(y):
        x = np.array(y, dtype=float, copy=True)
        x[..., 1] += kappa * x[..., 0] ** 2
        return x

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        jac = np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d)).copy()
        jac[..., 1, 0] = -2 * kappa * x[..., 0]
        return jac

    return SystemSpec(
        lambdas=lam,
        drift=drift,
        sigma=_constant_sigma_fn(sigma),
        conjugacy=Conjugacy(forward, inverse, jacobian, name="shear"),
        xi0=xi0,
        noise_dim=sigma.shape[1],
        constant_sigma=sigma,
        is_linear=False,
        name=name,
        params={'coefficient': c, 'kappa': kappa},
    )


def system_from_config(block: Dict[str, Any]) -> SystemSpec:
    """
    Build a SystemSpec from a campaign [system] table.

    Keys: lambdas, drift ("linear" | "shear"), shear_coefficient, sigma
    (list of rows, default identity), xi0 (default zeros).
    """
    if 'lambdas' not in block:
        raise ConfigError("[system] needs 'lambdas'")
    drift = block.get('drift', 'linear')
    sigma = block.get('sigma')
    xi0 = block.get('xi0')

    try:
        if drift == 'linear':
            return linear_system(block['lambdas'], sigma=sigma, xi0=xi0)
        if drift == 'shear':
            return shear_system(block['lambdas'], block.get('shear_coefficient', 0.5),
                                sigma=sigma, xi0=xi0)
    except ValueError as e:
        raise ConfigError(f"[system]: {e}") from e
    raise ConfigError(f"[system] unknown drift '{drift}' (expected 'linear' or 'shear')")


# --- Assumption checks ---

@dataclass
class CheckResult:
    """One assumption check; severity 'warning' never fails a report."""

    name: str
    passed: bool
    reason: str
    residual: Optional[float] = None
    severity: str = 'error'

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'passed': self.passed,
            'reason': self.reason,
            'residual': self.residual,
            'severity': self.severity,
        }


@dataclass
class ValidationReport:
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if c.severity == 'error')

    def failures(self) -> List[CheckResult]:
        return [c for c in self.checks if not c.passed and c.severity == 'error']

    def to_dict(self) -> Dict[str, Any]:
        return {'ok': self.ok, 'checks': [c.to_dict() for c in self.checks]}


def sobol_points(d: int, n: int, radius: float) -> np.ndarray:
    """First n unscrambled Sobol points mapped to [-radius, radius]^d."""
    m = max(1, int(np.ceil(np.log2(max(n, 2)))))
    points = qmc.Sobol(d, scramble=False).random_base2(m)[:n]
    return (2.0 * points - 1.0) * radius


def _relative(residual: np.ndarray, scale: np.ndarray) -> float:
    return float(np.max(residual / np.maximum(1.0, scale))) if residual.size else 0.0


def validate_system(spec: SystemSpec, domain=None, config: Optional[Dict] = None) -> ValidationReport:
    """
    Check every standing assumption on the system (and optionally the domain).

    Returns a report with one entry per check instead of raising.
    """
    cfg = section(config, 'validation')
    tol = cfg.get('tolerance', 1e-8)
    n_points = cfg.get('sample_points', 100)
    radius = cfg.get('sample_radius', 0.5)
    rank_tol = cfg.get('rank_tolerance', 1e-10)
    resonance_order = cfg.get('resonance_order', 4)

    report = ValidationReport()
    lam = spec.lambdas
    d = spec.dim

    # Check 1: eigenvalue ordering
    if np.any(lam <= 0):
        report.checks.append(CheckResult('eigenvalue_ordering', False, 'eigenvalues not positive'))
    elif np.any(np.diff(lam) >= 0):
        report.checks.append(CheckResult('eigenvalue_ordering', False,
                                         'eigenvalues not strictly decreasing'))
    else:
        report.checks.append(CheckResult('eigenvalue_ordering', True, 'strictly decreasing and positive'))

    # Check 2: sigma(0) surjective
    singular = np.linalg.svd(spec.sigma0, compute_uv=False)
    smallest = float(singular.min()) if singular.size == d else 0.0
    if spec.sigma0.shape[1] < d or smallest <= rank_tol * max(1.0, float(singular.max())):
        report.checks.append(CheckResult('sigma0_rank', False, 'σ(0) not surjective', smallest))
    else:
        report.checks.append(CheckResult('sigma0_rank', True, 'full row rank', smallest))

    # Check 3: conjugacy identities at quasi-random points
    f = spec.conjugacy
    points = sobol_points(d, n_points, radius)
    round_trip = f.forward(f.inverse(points))
    inv_res = _relative(np.linalg.norm(round_trip - points, axis=-1), np.linalg.norm(points, axis=-1))
    report.checks.append(CheckResult('conjugacy_inverse', inv_res <= tol,
                                     'f(f⁻¹(x)) = x' if inv_res <= tol else 'f(f⁻¹(x)) ≠ x',
                                     inv_res))

    origin = np.zeros(d)
    origin_res = max(float(np.linalg.norm(f.forward(origin))),
                     float(np.max(np.abs(f.jac(origin) - np.eye(d)))))
    report.checks.append(CheckResult('conjugacy_origin', origin_res <= tol,
                                     'f(0)=0 and Df(0)=I' if origin_res <= tol
                                     else 'f(0)≠0 or Df(0)≠I', origin_res))

    # Check 4: f pushes b forward to the linear field
    jac = f.jac(points)
    lhs = np.einsum('...jk,...k->...j', jac, spec.drift(points))
    rhs = f.forward(points) * lam
    push_res = _relative(np.linalg.norm(lhs - rhs, axis=-1), np.linalg.norm(rhs, axis=-1))
    report.checks.append(CheckResult('pushforward', push_res <= tol,
                                     'Df·b = diag(λ)·f' if push_res <= tol
                                     else 'f does not conjugate b to the linear field', push_res))

    # Check 5: low-order resonances (sufficient condition for a smooth conjugacy)
    resonances = []
    if np.all(lam > 0):
        for order in range(2, resonance_order + 1):
            for combo in itertools.combinations_with_replacement(range(d), order):
                total = lam[list(combo)].sum()
                for k in range(d):
                    if np.isclose(lam[k], total, rtol=1e-12, atol=0.0):
                        resonances.append((k + 1, tuple(j + 1 for j in combo)))
    report.checks.append(CheckResult(
        'resonance', not resonances,
        'no resonance up to order %d' % resonance_order if not resonances
        else f'resonances λ_k = Σλ_j found: {resonances[:3]}',
        severity='warning'))

    if domain is not None:
        report.checks.extend(domain.validate(spec, config))

    status = "✅ passed" if report.ok else "❌ failed"
    logger.debug(f"System validation for {spec.name}: {status}")
    return report


def require_valid(spec: SystemSpec, domain=None, config: Optional[Dict] = None) -> ValidationReport:
    """Validate and raise ValidationError when any error-severity check fails."""
    report = validate_system(spec, domain, config)
    if not report.ok:
        reasons = '; '.join(c.reason for c in report.failures())
        raise ValidationError(f"System '{spec.name}' failed validation: {reasons}", report)
    return report
