"""
Domain Specifications

The bounded domain D around the equilibrium and the geometry the exit engine
needs from it.
Handles:
- Level functions (D = {level < 0}) for boxes, ellipsoids and general smooth domains
- Locating the crossing on a step that left D and projecting onto the boundary
- Face labels for box-like domains
- Boundary sampling and transversality checks
"""

import logging
from abc import ABC, abstractmethod
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from src.model.system import CheckResult, SystemSpec, sobol_points
from src.utils.config import section
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)


class DomainSpec(ABC):
    """Base class; all methods take batched points of shape (..., d)."""

    kind = "abstract"
    contains_origin = True
    has_faces = False

    def __init__(self, dim: int):
        self.dim = int(dim)

    @abstractmethod
    def level(self, x: np.ndarray) -> np.ndarray:
        """Negative inside, zero on the boundary, positive outside."""

    @abstractmethod
    def project(self, x: np.ndarray) -> np.ndarray:
        """Map points near the boundary onto it."""

    @abstractmethod
    def boundary_samples(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """Deterministic boundary points and outward unit normals."""

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        ...

    def contains(self, x: np.ndarray) -> np.ndarray:
        return self.level(x) < 0

    def segment_crossing(self, x_in: np.ndarray, x_out: np.ndarray):
        """
        Locate the boundary crossing on segments from inside to outside points.

        Linear interpolation of the level function, then projection.

        Returns:
            (theta, point, face_axis, face_sign) with theta in [0, 1];
            face labels are 0 for domains without faces.
        """
        g_in = self.level(x_in)
        g_out = self.level(x_out)
        denom = g_in - g_out
        theta = np.where(denom != 0, g_in / np.where(denom != 0, denom, 1.0), 1.0)
        theta = np.clip(theta, 0.0, 1.0)
        point = self.project(x_in + theta[:, None] * (x_out - x_in))
        axis, sign = self.face_of(point)
        return theta, point, axis, sign

    def face_of(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        n = np.shape(x)[0]
        return np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64)

    def validate(self, system: SystemSpec, config: Optional[Dict] = None) -> List[CheckResult]:
        """Origin and initial point inside, drift transversal to the boundary."""
        checks = []
        origin = float(self.level(np.zeros(self.dim)))
        checks.append(CheckResult('domain_contains_origin', origin < 0,
                                  'origin inside D' if origin < 0 else 'origin not inside D',
                                  origin))

        xi_level = float(self.level(system.xi0))
        checks.append(CheckResult('initial_point', xi_level < 0,
                                  'εξ₀ ∈ D for ε ≤ 1' if xi_level < 0 else 'ξ₀ outside D',
                                  xi_level))

        n = section(config, 'validation').get('sample_points', 100)
        points, normals = self.boundary_samples(n)
        normal_speed = np.einsum('ij,ij->i', normals, system.drift(points))
        worst = float(normal_speed.min()) if normal_speed.size else 0.0
        checks.append(CheckResult('transversality', worst > 0,
                                  '⟨n, b⟩ > 0 on sampled boundary points' if worst > 0
                                  else 'drift not transversal to ∂D', worst))
        return checks


class BoxDomain(DomainSpec):
    """D = (-L, L)^d."""

    kind = "box"
    has_faces = True

    def __init__(self, dim: int, half_width: float):
        super().__init__(dim)
        self.half_width = float(half_width)
        if not self.half_width > 0:
            raise ConfigError(f"box half_width must be positive, got {half_width}")

    def level(self, x):
        return np.max(np.abs(x), axis=-1) - self.half_width

    def project(self, x):
        x = np.clip(np.asarray(x, dtype=float), -self.half_width, self.half_width)
        axis = np.argmax(np.abs(x), axis=-1)
        sign = np.where(np.take_along_axis(x, axis[..., None], -1)[..., 0] >= 0, 1.0, -1.0)
        np.put_along_axis(x, axis[..., None], (sign * self.half_width)[..., None], -1)
        return x

    def segment_crossing(self, x_in, x_out):
        # exact per coordinate: the first coordinate to reach |x_j| = L binds
        L = self.half_width
        delta = x_out - x_in
        target = np.where(x_out >= 0, L, -L)
        reaching = np.abs(x_out) >= L
        safe = np.where(delta != 0, delta, 1.0)
        theta_j = np.where(reaching & (delta != 0), (target - x_in) / safe, np.inf)
        axis = np.argmin(theta_j, axis=-1)
        theta = np.clip(np.take_along_axis(theta_j, axis[:, None], -1)[:, 0], 0.0, 1.0)

        point = np.clip(x_in + theta[:, None] * delta, -L, L)
        sign = np.where(np.take_along_axis(x_out, axis[:, None], -1)[:, 0] >= 0, 1, -1)
        np.put_along_axis(point, axis[:, None], (sign * L)[:, None].astype(float), -1)
        return theta, point, axis.astype(np.int64) + 1, sign.astype(np.int64)

    def face_of(self, x):
        x = np.atleast_2d(x)
        axis = np.argmax(np.abs(x), axis=-1)
        sign = np.where(np.take_along_axis(x, axis[:, None], -1)[:, 0] >= 0, 1, -1)
        return axis.astype(np.int64) + 1, sign.astype(np.int64)

    def boundary_samples(self, n):
        L = self.half_width
        per_face = max(1, n // (2 * self.dim))
        points, normals = [], []
        for axis in range(self.dim):
            if self.dim > 1:
                inner = sobol_points(self.dim - 1, per_face, 0.98 * L)
            else:
                inner = np.zeros((1, 0))
            for sign in (1.0, -1.0):
                face = np.insert(inner, axis, sign * L, axis=1)
                normal = np.zeros_like(face)
                normal[:, axis] = sign
                points.append(face)
                normals.append(normal)
        return np.vstack(points), np.vstack(normals)

    def to_dict(self):
        return {'kind': self.kind, 'dim': self.dim, 'half_width': self.half_width}


class SmoothDomain(DomainSpec):
    """
    D = {g < 0} with a user-supplied gradient.

    Boundary points are found by Newton steps along the gradient.
    """

    kind = "smooth"

    def __init__(self, dim: int, level_fn: Callable, gradient_fn: Callable,
                 newton_steps: int = 30, tolerance: float = 1e-13):
        super().__init__(dim)
        self._level = level_fn
        self._gradient = gradient_fn
        self.NEWTON_STEPS = newton_steps
        self.TOLERANCE = tolerance

    def level(self, x):
        return self._level(np.asarray(x, dtype=float))

    def gradient(self, x):
        return self._gradient(np.asarray(x, dtype=float))

    def project(self, x):
        x = np.array(x, dtype=float, copy=True)
        for _ in range(self.NEWTON_STEPS):
            g = self.level(x)
            if np.all(np.abs(g) <= self.TOLERANCE):
                break
            grad = self.gradient(x)
            norm2 = np.sum(grad * grad, axis=-1)
            x = x - (g / norm2)[..., None] * grad
        return x

    def boundary_samples(self, n):
        # rays from the origin, scaled onto the boundary by bisection on the radius
        directions = sobol_points(self.dim, n + 1, 1.0)
        norms = np.linalg.norm(directions, axis=1)
        # the Sobol centre maps to the origin and has no direction
        directions = directions[norms > 0][:n] / norms[norms > 0][:n, None]
        lo = np.zeros(len(directions))
        hi = np.ones(len(directions))
        while np.any(self.level(hi[:, None] * directions) < 0):
            grow = self.level(hi[:, None] * directions) < 0
            hi = np.where(grow, 2.0 * hi, hi)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            inside = self.level(mid[:, None] * directions) < 0
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        points = self.project(hi[:, None] * directions)
        normals = self.gradient(points)
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        return points, normals

    def to_dict(self):
        return {'kind': self.kind, 'dim': self.dim}


class EllipsoidDomain(SmoothDomain):
    """g(x) = sum((x_j / r_j)^2) - 1."""

    kind = "ellipsoid"

    def __init__(self, radii):
        self.radii = np.asarray(radii, dtype=float).reshape(-1)
        if np.any(self.radii <= 0):
            raise ConfigError(f"ellipsoid radii must be positive, got {self.radii.tolist()}")
        inv2 = 1.0 / self.radii ** 2
        super().__init__(
            self.radii.size,
            level_fn=lambda x: np.sum(x * x * inv2, axis=-1) - 1.0,
            gradient_fn=lambda x: 2.0 * x * inv2,
        )

    def to_dict(self):
        return {'kind': self.kind, 'dim': self.dim, 'radii': self.radii.tolist()}


class ChartBoxDomain(DomainSpec):
    """The preimage f⁻¹(B_L) of the chart box; faces are labelled in chart coordinates."""

    kind = "chart_box"
    has_faces = True

    def __init__(self, system: SystemSpec, half_width: float):
        super().__init__(system.dim)
        self.system = system
        self.chart = BoxDomain(system.dim, half_width)
        self.half_width = self.chart.half_width

    def level(self, x):
        return self.chart.level(self.system.conjugacy.forward(x))

    def project(self, x):
        f = self.system.conjugacy
        return f.inverse(self.chart.project(f.forward(x)))

    def segment_crossing(self, x_in, x_out):
        if self.system.is_linear:
            return self.chart.segment_crossing(x_in, x_out)
        return super().segment_crossing(x_in, x_out)

    def face_of(self, x):
        return self.chart.face_of(self.system.conjugacy.forward(x))

    def boundary_samples(self, n):
        points, normals = self.chart.boundary_samples(n)
        return self.system.conjugacy.inverse(points), normals

    def validate(self, system, config=None):
        # the linear field is transversal to every chart box
        return []

    def to_dict(self):
        return {'kind': self.kind, 'dim': self.dim, 'half_width': self.half_width}


def domain_from_config(block: Dict[str, Any], dim: int) -> DomainSpec:
    """
    Build a domain from a campaign [domain] table.

    Keys: kind ("box" | "ellipsoid"), half_width (box), radii (ellipsoid).
    """
    kind = block.get('kind', 'box')
    if kind == 'box':
        return BoxDomain(dim, block.get('half_width', 1.0))
    if kind == 'ellipsoid':
        radii = block.get('radii')
        if radii is None or len(radii) != dim:
            raise ConfigError(f"[domain] ellipsoid needs {dim} radii")
        return EllipsoidDomain(radii)
    raise ConfigError(f"[domain] unknown kind '{kind}' (expected 'box' or 'ellipsoid')")
