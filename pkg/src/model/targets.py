"""
Target Sets

Boundary subsets whose exit probability a campaign estimates.
Handles:
- Face rectangles on a box face (in domain coordinates or chart coordinates)
- Preimage targets: chart-box rectangles pulled back to ∂D through ζ_L
- Membership tests with the closed/open edge convention
- The index of a target (which invariant-manifold trace its closure meets first)
"""

import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.utils.errors import ConfigError, ValidationError

logger = logging.getLogger(__name__)

FACE_RECTANGLE = 'face_rectangle'
BOUNDARY_PREIMAGE = 'boundary_preimage'

EDGE_TOLERANCE = 1e-9


def _parse_sign(value) -> int:
    if value in ('+', '+1', 1, '1'):
        return 1
    if value in ('-', '-1', -1):
        return -1
    raise ConfigError(f"target sign must be '+' or '-', got {value!r}")


@dataclass(frozen=True, eq=False)
class TargetSet:
    """
    A rectangle on the faces {x_axis = s*H} of a box of half-width H.

    For kind 'face_rectangle' H is the half-width of the box domain (or of
    the chart box in box-exit mode); for 'boundary_preimage' the rectangle
    lives on ∂B_L in chart coordinates and the target is its ζ_L-preimage on ∂D.

    Args:
        name: label used in reports
        kind: 'face_rectangle' or 'boundary_preimage'
        axis: face axis, 1-based
        signs: faces included, subset of (+1, -1)
        bounds: (d, 2) array of [a^j, b^j]; the axis row is ignored
        closed: whether interval edges belong to the target
    """

    name: str
    axis: int
    signs: Tuple[int, ...]
    bounds: np.ndarray
    kind: str = FACE_RECTANGLE
    closed: bool = True

    def __post_init__(self):
        bounds = np.asarray(self.bounds, dtype=float)
        if bounds.ndim != 2 or bounds.shape[1] != 2:
            raise ConfigError(f"target '{self.name}': bounds must be a list of [a, b] pairs")
        if not 1 <= self.axis <= bounds.shape[0]:
            raise ConfigError(f"target '{self.name}': axis {self.axis} outside 1..{bounds.shape[0]}")
        if self.kind not in (FACE_RECTANGLE, BOUNDARY_PREIMAGE):
            raise ConfigError(f"target '{self.name}': unknown kind '{self.kind}'")
        signs = tuple(sorted({int(s) for s in self.signs}, reverse=True))
        if not signs or any(s not in (1, -1) for s in signs):
            raise ConfigError(f"target '{self.name}': signs must be a non-empty subset of (+, -)")
        object.__setattr__(self, 'bounds', bounds)
        object.__setattr__(self, 'signs', signs)

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    def free_bounds(self) -> np.ndarray:
        """Bounds of the coordinates other than the face axis, shape (d-1, 2)."""
        return np.delete(self.bounds, self.axis - 1, axis=0)

    def check_geometry(self, half_width: float) -> None:
        """Raise ValidationError unless every interval is nonempty and inside [-H, H]."""
        free = self.free_bounds()
        if np.any(free[:, 0] > free[:, 1]):
            raise ValidationError(f"target '{self.name}': empty interval a > b")
        if np.any(free[:, 0] < -half_width - EDGE_TOLERANCE) or \
                np.any(free[:, 1] > half_width + EDGE_TOLERANCE):
            raise ValidationError(f"target '{self.name}': intervals exceed the face [-{half_width}, {half_width}]")

    def is_eligible(self, half_width: float, index: Optional[int] = None) -> bool:
        """Strictly interior intervals, and endpoints away from 0 beyond the index."""
        free = self.free_bounds()
        interior = bool(np.all(free[:, 0] > -half_width) and np.all(free[:, 1] < half_width))
        index = self.axis if index is None else index
        trailing = self.bounds[index:]
        return interior and bool(np.all(trailing != 0.0))

    def contains(self, points: np.ndarray, half_width: float,
                 face_axis: Optional[np.ndarray] = None,
                 face_sign: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Membership of boundary points.

        Face labels, when given, decide the face (corner points belong to the
        face the trajectory crossed); otherwise |x_axis| = H is tested.
        """
        points = np.atleast_2d(points)
        k = self.axis - 1
        if face_axis is not None and face_sign is not None:
            on_face = (np.asarray(face_axis) == self.axis) & np.isin(face_sign, self.signs)
        else:
            tol = EDGE_TOLERANCE * max(1.0, half_width)
            on_face = np.zeros(len(points), dtype=bool)
            for s in self.signs:
                on_face |= np.abs(points[:, k] - s * half_width) <= tol

        others = np.delete(points, k, axis=1)
        free = self.free_bounds()
        if self.closed:
            inside = (others >= free[:, 0] - EDGE_TOLERANCE) & (others <= free[:, 1] + EDGE_TOLERANCE)
        else:
            inside = (others > free[:, 0] + EDGE_TOLERANCE) & (others < free[:, 1] - EDGE_TOLERANCE)
        return on_face & np.all(inside, axis=1)

    def split(self, coordinate: int, at: float) -> Tuple['TargetSet', 'TargetSet']:
        """Cut the rectangle in two along a free coordinate (1-based)."""
        if coordinate == self.axis:
            raise ValueError("cannot split along the face axis")
        lo, hi = self.bounds.copy(), self.bounds.copy()
        lo[coordinate - 1, 1] = at
        hi[coordinate - 1, 0] = at
        return (replace(self, name=f"{self.name}[lo]", bounds=lo),
                replace(self, name=f"{self.name}[hi]", bounds=hi))

    def with_signs(self, signs: Sequence[int]) -> 'TargetSet':
        return replace(self, signs=tuple(signs))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'kind': self.kind,
            'axis': self.axis,
            'signs': ['+' if s > 0 else '-' for s in self.signs],
            'bounds': self.bounds.tolist(),
            'closed': self.closed,
        }


def target_from_config(block: Dict[str, Any], dim: int, half_width: float) -> TargetSet:
    """
    Build a TargetSet from one [[targets]] table.

    Missing bounds default to the full face; the axis row may be omitted
    entirely (d-1 rows) or given as any placeholder pair.
    """
    name = block.get('name', 'target')
    if 'axis' not in block:
        raise ConfigError(f"target '{name}' needs 'axis'")
    axis = int(block['axis'])
    signs = [_parse_sign(s) for s in block.get('signs', ['+', '-'])]

    full = [[-half_width, half_width] for _ in range(dim)]
    bounds = block.get('bounds')
    if bounds is None:
        bounds = full
    elif len(bounds) == dim - 1:
        bounds = list(bounds)
        bounds.insert(axis - 1, [-half_width, half_width])
    elif len(bounds) != dim:
        raise ConfigError(f"target '{name}': expected {dim} or {dim - 1} bound pairs, got {len(bounds)}")

    bounds = np.asarray(bounds, dtype=float)
    bounds[axis - 1] = (-half_width, half_width)
    return TargetSet(
        name=name,
        axis=axis,
        signs=tuple(signs),
        bounds=bounds,
        kind=block.get('kind', FACE_RECTANGLE),
        closed=bool(block.get('closed', True)),
    )


def rectangle_index(target: TargetSet) -> int:
    """
    Exact index of a face rectangle whose trailing coordinates are linear.

    The closure meets Λ^k = span(e_1..e_k) iff k >= axis and 0 ∈ [a^m, b^m]
    for every m > k; the index is the smallest such k.
    """
    d = target.dim
    contains_zero = (target.bounds[:, 0] <= 0.0) & (target.bounds[:, 1] >= 0.0)
    k = d
    while k > target.axis and contains_zero[k - 1]:
        k -= 1
    return k


def _closure_grid(target: TargetSet, points_per_side: int) -> np.ndarray:
    """Grid over the closed rectangle on one face, shape (m, d) without the face coordinate set."""
    axes = [np.linspace(a, b, points_per_side) if b > a else np.array([a])
            for a, b in target.free_bounds()]
    mesh = np.meshgrid(*axes, indexing='ij')
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def index_of_target(target: TargetSet, system, domain, chart_half_width: Optional[float] = None,
                    config: Optional[Dict] = None, points_per_side: int = 9) -> int:
    """
    Smallest k such that the target's closure meets the trace of Λ^k.

    Preimage targets, linear systems and chart-coordinate targets use the
    exact rectangle rule. Face rectangles on ∂D under a nonlinear drift are
    mapped through ζ_L on a grid of closure points; the index is read off
    from which trailing chart coordinates straddle zero. That branch is a
    sampled approximation.
    """
    from src.model.domain import BoxDomain, ChartBoxDomain

    half_width = getattr(domain, 'half_width', None)
    if target.kind == BOUNDARY_PREIMAGE:
        if chart_half_width is not None:
            target.check_geometry(chart_half_width)
        return rectangle_index(target)

    if not isinstance(domain, (BoxDomain, ChartBoxDomain)):
        raise ValidationError(f"target '{target.name}': face rectangles need a box domain")
    target.check_geometry(half_width)

    if system.is_linear or isinstance(domain, ChartBoxDomain):
        return rectangle_index(target)

    from src.flow.poincare import PoincareMaps

    L = chart_half_width if chart_half_width is not None else 0.25 * half_width
    maps = PoincareMaps(system, domain, L, config)
    grid = _closure_grid(target, points_per_side)
    k_axis = target.axis - 1

    best = target.dim
    tol = 1e-9 * L
    for sign in target.signs:
        points = np.insert(grid, k_axis, sign * half_width, axis=1)
        chart = np.array([maps.zeta(p) for p in points])
        chart_axis = np.argmax(np.abs(chart), axis=1)
        chart_sign = np.sign(chart[np.arange(len(chart)), chart_axis])
        # per chart face: trailing coordinates that change sign (or vanish) over the image
        for a, s in {(int(a), int(s)) for a, s in zip(chart_axis, chart_sign)}:
            on_face = chart[(chart_axis == a) & (chart_sign == s)]
            straddles = (on_face.min(axis=0) <= tol) & (on_face.max(axis=0) >= -tol)
            k = target.dim
            while k > a + 1 and straddles[k - 1]:
                k -= 1
            best = min(best, k)

    logger.debug(f"Sampled index of '{target.name}': {best}")
    return best


def targets_from_config(blocks: List[Dict[str, Any]], dim: int, half_width: float) -> List[TargetSet]:
    targets = [target_from_config(b, dim, half_width) for b in blocks]
    names = [t.name for t in targets]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate target names: {names}")
    return targets
