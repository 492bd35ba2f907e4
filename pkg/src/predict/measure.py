"""
Limit Measure

Evaluates the limit measure of boundary sets and the predicted conditional
exit law.
Handles:
- Face weights χ^i_±(ξ₀) per index (cached)
- Chart-face measure of ζ_L(A) ∩ F^i_{L±} ∩ Λ^i: closed form for chart
  rectangles and for linear box targets on their own index face, scanned
  otherwise (membership transitions bracketed and bisected)
- Conditional law as a weighted union of uniform boxes
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.flow.poincare import PoincareMaps
from src.model.domain import BoxDomain, ChartBoxDomain
from src.model.targets import BOUNDARY_PREIMAGE, TargetSet, index_of_target
from src.predict.chi import ChiEvaluator
from src.predict.exponents import exponent_power, limit_covariance
from src.utils.config import section
from src.utils.errors import NullEventError

logger = logging.getLogger(__name__)

Piece = Tuple[int, np.ndarray]


@dataclass
class ConditionalLaw:
    """
    Normalized limit law of the exit point given the target.

    Supported on the Λ^i trace of the target: on face (index, sign) the
    first i-1 coordinates are uniform over a union of boxes, the face
    coordinate is sign*half_width and the trailing coordinates are 0.

    Args:
        index: i
        dim: d
        half_width: face position of the coordinates the law is written in
        coordinates: 'domain' (box coordinates of D) or 'chart' (∂B_L)
        pieces: list of (sign, box) with box of shape (i-1, 2)
        weights: probability of each piece
    """

    index: int
    dim: int
    half_width: float
    coordinates: str
    pieces: List[Piece] = field(default_factory=list)
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def face_weight(self, sign: int) -> float:
        return float(sum(w for (s, _), w in zip(self.pieces, self.weights) if s == sign))

    @property
    def signs(self) -> List[int]:
        return sorted({s for s, _ in self.pieces}, reverse=True)

    def marginal_cdf(self, coordinate: int, x) -> np.ndarray:
        """CDF of the 0-based coordinate (< index-1) under the mixture of uniforms."""
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for (_, box), w in zip(self.pieces, self.weights):
            a, b = box[coordinate]
            total += w * np.clip((x - a) / (b - a), 0.0, 1.0)
        return total

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n points from the law (used to calibrate tests)."""
        which = rng.choice(len(self.pieces), size=n, p=self.weights)
        out = np.zeros((n, self.dim))
        for k, (sign, box) in enumerate(self.pieces):
            rows = which == k
            m = int(rows.sum())
            if m == 0:
                continue
            if box.size:
                out[rows, :self.index - 1] = rng.uniform(box[:, 0], box[:, 1], size=(m, box.shape[0]))
            out[rows, self.index - 1] = sign * self.half_width
        return out

    def to_dict(self) -> Dict:
        return {
            'index': self.index,
            'coordinates': self.coordinates,
            'half_width': self.half_width,
            'face_weights': {('+' if s > 0 else '-'): self.face_weight(s) for s in self.signs},
            'pieces': [{'sign': '+' if s > 0 else '-', 'box': box.tolist(), 'weight': float(w)}
                       for (s, box), w in zip(self.pieces, self.weights)],
        }


def _volume(box: np.ndarray) -> float:
    return float(np.prod(box[:, 1] - box[:, 0])) if box.size else 1.0


class LimitMeasure:
    """
    μ^i_L for one system, domain and chart half-width.

    Args:
        system: validated SystemSpec
        domain: domain D (box, smooth, or ChartBoxDomain in box-exit mode)
        L: chart half-width
        config: engine config ('quadrature' and 'flow' sections)
    """

    def __init__(self, system, domain, L: float, config: Optional[Dict] = None):
        self.system = system
        self.domain = domain
        self.L = float(L)
        self.config = config
        self.covariance = limit_covariance(system.sigma0, system.lambdas)

        self.MEASURE_GRID = 64
        self.MEASURE_TOLERANCE = 1e-10
        if config:
            quad_config = section(config, 'quadrature')
            self.MEASURE_GRID = quad_config.get('measure_grid', self.MEASURE_GRID)
            self.MEASURE_TOLERANCE = quad_config.get('measure_tolerance', self.MEASURE_TOLERANCE)

        self._weights: Dict[int, Tuple[float, float]] = {}
        self._maps: Optional[PoincareMaps] = None

    @property
    def maps(self) -> PoincareMaps:
        if self._maps is None:
            self._maps = PoincareMaps(self.system, self.domain, self.L, self.config)
        return self._maps

    def index(self, target: TargetSet) -> int:
        return index_of_target(target, self.system, self.domain, self.L, self.config)

    def weights(self, index: int) -> Tuple[float, float]:
        """(χ^i_+(ξ₀), χ^i_−(ξ₀))."""
        if index not in self._weights:
            evaluator = ChiEvaluator(self.covariance, self.system.lambdas, index, self.config)
            self._weights[index] = evaluator.chi_pm(self.system.xi0)
        return self._weights[index]

    def _chart_rectangle(self, target: TargetSet) -> bool:
        return target.kind == BOUNDARY_PREIMAGE or isinstance(self.domain, ChartBoxDomain)

    def face_pieces(self, target: TargetSet, index: int):
        """
        The Λ^index trace of the target per face.

        Returns:
            (coordinates, half_width, pieces, chart_measures) where
            chart_measures[sign] is H^{i-1}(ζ_L(A) ∩ F^i_{L,sign} ∩ Λ^i).
        """
        i = index
        lam = self.system.lambdas
        trailing = target.bounds[i:]
        trailing_ok = bool(np.all((trailing[:, 0] < 0.0) & (trailing[:, 1] > 0.0)))

        if self._chart_rectangle(target):
            pieces, measures = [], {}
            for s in (1, -1):
                measures[s] = 0.0
                if s in target.signs and target.axis == i and trailing_ok:
                    box = target.bounds[:i - 1].copy()
                    pieces.append((s, box))
                    measures[s] = _volume(box)
            return 'chart', self.L, pieces, measures

        if self.system.is_linear and isinstance(self.domain, BoxDomain) and target.axis == i:
            # ψ_L scales coordinate j by (L_D/L)^{λ_j/λ_i} on the index face
            L_D = self.domain.half_width
            scale = float(np.prod((self.L / L_D) ** (lam[:i - 1] / lam[i - 1])))
            pieces, measures = [], {}
            for s in (1, -1):
                measures[s] = 0.0
                if s in target.signs and trailing_ok:
                    box = target.bounds[:i - 1].copy()
                    pieces.append((s, box))
                    measures[s] = _volume(box) * scale
            return 'domain', L_D, pieces, measures

        pieces, measures = [], {}
        for s in (1, -1):
            measure, boxes = chart_face_measure(target, s, i, self.maps,
                                                self.MEASURE_GRID, self.MEASURE_TOLERANCE)
            measures[s] = measure
            pieces.extend((s, box) for box in boxes)
        return 'chart', self.L, pieces, measures

    def mu(self, target: TargetSet, index: Optional[int] = None) -> float:
        """μ^i_L(A) = L^{-p_i} Σ_± χ^i_±(ξ₀) H^{i-1}(ζ_L(A) ∩ F^i_{L±} ∩ Λ^i)."""
        i = self.index(target) if index is None else index
        chi_plus, chi_minus = self.weights(i)
        _, _, _, measures = self.face_pieces(target, i)
        p = exponent_power(self.system.lambdas, i)
        value = self.L ** (-p) * (chi_plus * measures[1] + chi_minus * measures[-1])
        logger.debug(f"μ^{i}_L({target.name}) = {value:.6g} (L={self.L})")
        return float(value)

    def conditional_law(self, target: TargetSet, index: Optional[int] = None) -> ConditionalLaw:
        i = self.index(target) if index is None else index
        chi = dict(zip((1, -1), self.weights(i)))
        coordinates, half_width, pieces, _ = self.face_pieces(target, i)

        raw = np.array([chi[s] * _volume(box) for s, box in pieces])
        if raw.size == 0 or raw.sum() <= 0:
            raise NullEventError(f"target '{target.name}' has zero limit measure; "
                                 f"its conditional law is undefined")
        keep = raw > 0
        pieces = [piece for piece, k in zip(pieces, keep) if k]
        return ConditionalLaw(index=i, dim=self.system.dim, half_width=half_width,
                              coordinates=coordinates, pieces=pieces,
                              weights=raw[keep] / raw[keep].sum())


def chart_face_measure(target: TargetSet, sign: int, index: int, maps: PoincareMaps,
                       grid: int = 64, tolerance: float = 1e-10) -> Tuple[float, List[np.ndarray]]:
    """
    H^{i-1} of the chart-face points q = (u, sign*L e_i, 0) with ψ_L(f⁻¹(q)) in the target.

    The last free coordinate is scanned on a grid; every membership change
    between grid points is bisected to tolerance*L. Remaining free
    coordinates use a midpoint rule. For index 1 the measure counts the
    single point (±L, 0, ..., 0).

    Returns:
        (measure, boxes) where boxes partition the measured set.
    """
    L = maps.L
    d = target.dim
    i = index
    half_width = maps.domain.half_width

    def member(u: np.ndarray) -> np.ndarray:
        q = np.zeros((len(u), d))
        q[:, :i - 1] = u
        q[:, i - 1] = sign * L
        points, axis, face_sign = maps.psi_chart_batch(q)
        return target.contains(points, half_width, axis, face_sign)

    if i == 1:
        inside = bool(member(np.zeros((1, 0)))[0])
        return (1.0, [np.zeros((0, 2))]) if inside else (0.0, [])

    step = 2 * L / grid
    outer_axes = [np.linspace(-L + step / 2, L - step / 2, grid) for _ in range(i - 2)]
    outer_cells = np.stack([m.reshape(-1) for m in np.meshgrid(*outer_axes, indexing='ij')], -1) \
        if outer_axes else np.zeros((1, 0))
    inner = np.linspace(-L, L, grid + 1)
    tol = tolerance * L

    total = 0.0
    boxes: List[np.ndarray] = []
    for cell in outer_cells:
        u = np.column_stack([np.repeat(cell[None, :], len(inner), 0), inner])
        flags = member(u)

        # bracket each membership change and bisect all of them together
        changes = np.nonzero(flags[:-1] != flags[1:])[0]
        lo, hi = inner[changes].copy(), inner[changes + 1].copy()
        lo_flag = flags[changes]
        while changes.size and np.max(hi - lo) > tol:
            mid = 0.5 * (lo + hi)
            mid_flag = member(np.column_stack([np.repeat(cell[None, :], len(mid), 0), mid]))
            same = mid_flag == lo_flag
            lo = np.where(same, mid, lo)
            hi = np.where(same, hi, mid)
        edges = 0.5 * (lo + hi)

        # runs of membership between consecutive edges
        breakpoints = np.concatenate([[-L], edges, [L]])
        state = bool(flags[0])
        for a, b in zip(breakpoints[:-1], breakpoints[1:]):
            if state and b > a:
                box = np.vstack([np.column_stack([cell - step / 2, cell + step / 2]), [[a, b]]]) \
                    if cell.size else np.array([[a, b]])
                boxes.append(box)
                total += (b - a) * step ** (i - 2)
            state = not state

    logger.debug(f"Chart-face measure of '{target.name}' (sign {sign:+d}, index {i}): {total:.6g}")
    return float(total), boxes


def mu_of_rectangle(target: TargetSet, system, domain, L: float,
                    config: Optional[Dict] = None) -> float:
    return LimitMeasure(system, domain, L, config).mu(target)


def predicted_conditional_law(target: TargetSet, system, domain, L: float,
                              config: Optional[Dict] = None) -> ConditionalLaw:
    return LimitMeasure(system, domain, L, config).conditional_law(target)
