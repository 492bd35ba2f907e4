"""
Poincaré Maps

ψ_L maps the chart box boundary f⁻¹(∂B_L) forward to ∂D; ζ_L = f∘ψ_L⁻¹
maps ∂D back to ∂B_L by integrating the reversed flow (the equilibrium
attracts in reversed time).
Handles:
- Scalar maps for single points (numeric integration)
- Batched chart-face maps, closed form for the linear box case
"""

import logging
from typing import Dict, Optional, Tuple

import numpy as np

from src.flow.integrator import FlowIntegrator, FlowResult, linear_box_exit
from src.model.domain import BoxDomain, ChartBoxDomain
from src.utils.errors import FlowError

logger = logging.getLogger(__name__)


def linear_zeta(p, lambdas, L: float) -> np.ndarray:
    """
    Closed-form ζ_L for the linear flow: p e^{-λ s} with the smallest s ≥ 0
    such that max_j |p^j| e^{-λ_j s} = L.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    lam = np.asarray(lambdas, dtype=float)
    abs_p = np.abs(p)
    with np.errstate(divide='ignore'):
        s_j = np.where(abs_p > L, np.log(np.where(abs_p > 0, abs_p, 1.0) / L) / lam, 0.0)
    s = np.max(s_j, axis=-1)
    q = p * np.exp(-lam * s[:, None])
    return BoxDomain(p.shape[1], L).project(q)


class PoincareMaps:
    """
    ψ_L and ζ_L for a system, a domain and a chart half-width L.

    Args:
        system: SystemSpec (its conjugacy defines the chart)
        domain: the domain D
        L: chart box half-width; f⁻¹(B_L) must lie inside D
        config: engine config ('flow' section)
        closed_form: force (True) or disable (False) the linear box shortcut
    """

    def __init__(self, system, domain, L: float, config: Optional[Dict] = None,
                 closed_form: Optional[bool] = None):
        self.system = system
        self.domain = domain
        self.L = float(L)
        self.chart = ChartBoxDomain(system, self.L)
        self.integrator = FlowIntegrator(system, config)
        linear_box = system.is_linear and isinstance(domain, BoxDomain)
        self._closed_form = linear_box if closed_form is None else (closed_form and linear_box)

    def psi(self, x) -> FlowResult:
        """ψ_L(x) for x on f⁻¹(∂B_L)."""
        x = np.asarray(x, dtype=float)
        offset = abs(float(self.chart.level(x)))
        if offset > 1e-8 * max(1.0, self.L):
            raise FlowError(f"point {x.tolist()} is not on the chart boundary (offset {offset:.3g})")
        return self.integrator.deterministic_exit(x, self.domain)

    def psi_chart(self, q) -> FlowResult:
        """ψ_L(f⁻¹(q)) for q on ∂B_L."""
        return self.psi(self.system.conjugacy.inverse(np.asarray(q, dtype=float)))

    def psi_chart_batch(self, q) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Exit points and face labels of ψ_L(f⁻¹(q)) for an array of chart points.

        Returns:
            (points, face_axis, face_sign)
        """
        q = np.atleast_2d(np.asarray(q, dtype=float))
        if self._closed_form:
            points, _, axis, sign = linear_box_exit(q, self.system.lambdas, self.domain.half_width)
            return points, axis, sign

        points = np.empty_like(q)
        axis = np.zeros(len(q), dtype=np.int64)
        sign = np.zeros(len(q), dtype=np.int64)
        for n, row in enumerate(q):
            result = self.psi_chart(row)
            points[n] = result.exit_point
            if result.face is not None:
                axis[n], sign[n] = result.face
        return points, axis, sign

    def zeta(self, p) -> np.ndarray:
        """ζ_L(p) ∈ ∂B_L for p on ∂D, by backward integration until f(x) hits ∂B_L."""
        p = np.asarray(p, dtype=float)
        if self._closed_form:
            return linear_zeta(p, self.system.lambdas, self.L)[0]
        if float(self.chart.level(p)) <= 0:
            raise FlowError(f"point {p.tolist()} is already inside the chart box")

        _, x_entry, _ = self.integrator.first_crossing(p, self.chart.level, -1)
        q = self.system.conjugacy.forward(x_entry)
        return self.chart.chart.project(q)

    def zeta_batch(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self._closed_form:
            return linear_zeta(points, self.system.lambdas, self.L)
        return np.array([self.zeta(p) for p in points]).reshape(points.shape)


def poincare_psi(x, system, domain, L: float, config: Optional[Dict] = None) -> FlowResult:
    return PoincareMaps(system, domain, L, config).psi(x)


def zeta_L(p, system, domain, L: float, config: Optional[Dict] = None) -> np.ndarray:
    return PoincareMaps(system, domain, L, config).zeta(p)
