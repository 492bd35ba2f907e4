"""
Deterministic Flow Integrator

Integrates x' = b(x) and locates first exits from domains.
Handles:
- Closed-form linear flow and linear box exits
- Adaptive Runge-Kutta integration with dense output (scipy solve_ivp)
- Exit detection as a terminal event on the domain level function
- Backward integration into a target surface
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from src.utils.config import section
from src.utils.errors import FlowError, NonExitError

logger = logging.getLogger(__name__)


@dataclass
class FlowResult:
    """First exit of a deterministic orbit."""
    exit_point: np.ndarray
    exit_time: float
    face: Optional[Tuple[int, int]] = None
    path_t: Optional[np.ndarray] = None
    path_x: Optional[np.ndarray] = None


def linear_flow(x, t, lambdas) -> np.ndarray:
    """S_t x = (x^j e^{λ_j t})_j; x of shape (..., d), t scalar or shape (...)."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    return x * np.exp(np.asarray(lambdas, dtype=float) * t[..., None])


def linear_box_exit_time(x, lambdas, half_width: float) -> np.ndarray:
    """t(x) = min_j (1/λ_j) log(L/|x^j|) over nonzero coordinates; inf at the origin."""
    x = np.abs(np.asarray(x, dtype=float))
    lam = np.asarray(lambdas, dtype=float)
    with np.errstate(divide='ignore'):
        times = np.where(x > 0, np.log(half_width / np.where(x > 0, x, 1.0)) / lam, np.inf)
    return np.maximum(np.min(times, axis=-1), 0.0)


def linear_box_exit(x, lambdas, half_width: float):
    """
    Closed-form exit of the linear flow from (-L, L)^d.

    Returns:
        (points, times, face_axis, face_sign), batched over the leading axis.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    lam = np.asarray(lambdas, dtype=float)
    abs_x = np.abs(x)
    with np.errstate(divide='ignore'):
        per_coord = np.where(abs_x > 0, np.log(half_width / np.where(abs_x > 0, abs_x, 1.0)) / lam, np.inf)
    axis = np.argmin(per_coord, axis=-1)
    times = np.maximum(np.take_along_axis(per_coord, axis[:, None], -1)[:, 0], 0.0)

    points = np.clip(linear_flow(x, times, lam), -half_width, half_width)
    sign = np.where(np.take_along_axis(x, axis[:, None], -1)[:, 0] >= 0, 1, -1)
    np.put_along_axis(points, axis[:, None], (sign * half_width)[:, None].astype(float), -1)
    return points, times, axis.astype(np.int64) + 1, sign.astype(np.int64)


class FlowIntegrator:
    """
    Adaptive integrator for the drift of one system.

    Args:
        system: SystemSpec whose drift is integrated
        config: engine config; the 'flow' section overrides the defaults
    """

    def __init__(self, system, config: Optional[Dict] = None):
        self.system = system

        self.METHOD = 'DOP853'
        self.RTOL = 1e-12
        self.ATOL = 1e-14
        self.HORIZON_FACTOR = 50.0
        self.BOUNDARY_TOLERANCE = 1e-10

        if config:
            flow_config = section(config, 'flow')
            self.METHOD = flow_config.get('method', self.METHOD)
            self.RTOL = flow_config.get('rtol', self.RTOL)
            self.ATOL = flow_config.get('atol', self.ATOL)
            self.HORIZON_FACTOR = flow_config.get('horizon_factor', self.HORIZON_FACTOR)
            self.BOUNDARY_TOLERANCE = flow_config.get('boundary_tolerance', self.BOUNDARY_TOLERANCE)

    @property
    def horizon(self) -> float:
        return self.HORIZON_FACTOR / float(self.system.lambdas[-1])

    def _rhs(self, direction: int) -> Callable:
        drift = self.system.drift
        if direction > 0:
            return lambda t, x: drift(x)
        return lambda t, x: -drift(x)

    def flow(self, x, t: float) -> np.ndarray:
        """S_t x by integration (t may be negative)."""
        x = np.asarray(x, dtype=float)
        if t == 0:
            return x.copy()
        direction = 1 if t > 0 else -1
        sol = solve_ivp(self._rhs(direction), (0.0, abs(t)), x, method=self.METHOD,
                        rtol=self.RTOL, atol=self.ATOL)
        if not sol.success:
            raise FlowError(f"flow integration failed: {sol.message}")
        return sol.y[:, -1]

    def dense_path(self, x, t_end: float):
        """Dense-output solution on [0, t_end]; call it with an array of times."""
        sol = solve_ivp(self._rhs(1), (0.0, max(t_end, 1e-300)), np.asarray(x, dtype=float),
                        method=self.METHOD, rtol=self.RTOL, atol=self.ATOL, dense_output=True)
        if not sol.success:
            raise FlowError(f"flow integration failed: {sol.message}")
        return sol.sol

    def first_crossing(self, x, level_fn: Callable, direction: int, record_path: bool = False):
        """
        Integrate forward (direction=+1) or backward (-1) in time until
        level_fn crosses zero; upward for forward exits, downward for
        backward entries.

        Returns:
            (time, point, sol)
        """
        def event(t, y):
            return level_fn(y)
        event.terminal = True
        event.direction = 1 if direction > 0 else -1

        sol = solve_ivp(self._rhs(direction), (0.0, self.horizon), np.asarray(x, dtype=float),
                        method=self.METHOD, rtol=self.RTOL, atol=self.ATOL,
                        events=event, dense_output=record_path)
        if not sol.success:
            raise FlowError(f"flow integration failed: {sol.message}")
        if sol.t_events[0].size == 0:
            raise NonExitError(f"orbit from {np.round(x, 6).tolist()} did not reach the surface "
                            f"within horizon {self.horizon:.3g}")
        return float(sol.t_events[0][0]), sol.y_events[0][0], sol

    def deterministic_exit(self, x, domain, record_path: bool = False) -> FlowResult:
        """
        First exit of the forward orbit of x from the domain.

        Raises:
            FlowError: x outside D, x = 0, or no exit within the horizon
        """
        x = np.asarray(x, dtype=float)
        level = float(domain.level(x))
        if level > self.BOUNDARY_TOLERANCE:
            raise FlowError(f"start point {x.tolist()} lies outside the domain")
        if not np.any(x):
            raise NonExitError("the origin is a fixed point and never exits")

        if abs(level) <= self.BOUNDARY_TOLERANCE:
            point = domain.project(x)
            axis, sign = domain.face_of(point[None, :])
            return FlowResult(point, 0.0, _face(domain, axis, sign))

        t_exit, x_exit, sol = self.first_crossing(x, domain.level, +1, record_path)
        point = domain.project(x_exit)
        axis, sign = domain.face_of(point[None, :])
        result = FlowResult(point, t_exit, _face(domain, axis, sign))
        if record_path:
            result.path_t = sol.t
            result.path_x = sol.y.T
        return result


def _face(domain, axis, sign) -> Optional[Tuple[int, int]]:
    if not domain.has_faces:
        return None
    return int(axis[0]), int(sign[0])


def deterministic_exit(x, system, domain, config: Optional[Dict] = None,
                       record_path: bool = False) -> FlowResult:
    return FlowIntegrator(system, config).deterministic_exit(x, domain, record_path)
