"""
Campaign Runner

Runs the ε ladder for a validated plan and compares what it sees with the
predicted asymptotics.
Handles:
- One simulation per ε shared by every target, budget from the predictions
- Classification of exit points against each target
- Hit counts with Wilson intervals, non-exit aborts
- Exponent fits, conditional-law tests and transverse collapse rates
- Summary assembly, and re-fitting from stored samples
"""

import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.data.sample_store import SampleStore, read_samples
from src.experiment.plan import ExperimentPlan
from src.flow.poincare import PoincareMaps
from src.model.domain import ChartBoxDomain
from src.model.targets import BOUNDARY_PREIMAGE, TargetSet
from src.predict.exponents import c_A, compute_rho
from src.predict.measure import ConditionalLaw, LimitMeasure
from src.sde.rng import ladder_stream
from src.sde.simulator import ExitBatch, ExitSimulator, SimConfig
from src.stats import goodness
from src.stats.fitting import fit_exponent, transverse_collapse_rate, wilson_interval
from src.utils.config import section
from src.utils.errors import NullEventError, StorageError, UnderpoweredError

logger = logging.getLogger(__name__)


@dataclass
class CellResult:
    """Counts for one (ε, target) cell."""

    eps_index: int
    epsilon: float
    target: str
    trials: int
    hits: int
    ci_low: float
    ci_high: float
    dt: float
    status: str = 'ok'
    reason: Optional[str] = None

    @property
    def fraction(self) -> float:
        return self.hits / self.trials if self.trials else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'eps_index': self.eps_index,
            'epsilon': self.epsilon,
            'target': self.target,
            'trials': self.trials,
            'hits': self.hits,
            'fraction': self.fraction,
            'ci_low': self.ci_low,
            'ci_high': self.ci_high,
            'dt': self.dt,
            'status': self.status,
            'reason': self.reason,
        }


@dataclass
class ExperimentResult:
    name: str
    digest: str
    cells: List[CellResult] = field(default_factory=list)
    predictions: Dict[str, Dict] = field(default_factory=dict)
    fits: Dict[str, Dict] = field(default_factory=dict)
    gof: Dict[str, Dict] = field(default_factory=dict)
    collapse: Dict[str, List[Dict]] = field(default_factory=dict)
    sample_files: Dict[int, str] = field(default_factory=dict)
    nonexits: Dict[int, int] = field(default_factory=dict)

    @property
    def aborted(self) -> bool:
        return any(cell.status == 'aborted' for cell in self.cells)

    def to_summary(self, plan: ExperimentPlan) -> Dict[str, Any]:
        return {
            'name': self.name,
            'config_hash': self.digest,
            'config': plan.campaign,
            'epsilons': plan.epsilons,
            'exit_surface': plan.exit_surface,
            'chart_half_width': plan.chart_half_width,
            'predictions': self.predictions,
            'cells': [cell.to_dict() for cell in self.cells],
            'fits': self.fits,
            'gof': self.gof,
            'collapse': self.collapse,
            'samples': {str(k): v for k, v in self.sample_files.items()},
            'nonexits': {str(k): v for k, v in self.nonexits.items()},
            'metadata': {
                'created_at': datetime.now(timezone.utc).isoformat(),
                'seed': plan.seed,
                'threads': plan.threads,
            },
        }


class CampaignRunner:
    """
    Ladder execution for one plan.

    Args:
        plan: validated ExperimentPlan
        store: optional SampleStore for exit records
    """

    def __init__(self, plan: ExperimentPlan, store: Optional[SampleStore] = None):
        self.plan = plan
        self.store = store
        self.system = plan.system
        self.exit_domain = plan.exit_domain
        self.measure = LimitMeasure(self.system, self.exit_domain, plan.chart_half_width, plan.engine)

        stats_config = section(plan.campaign, 'stats')
        self.ALPHA = stats_config.get('alpha', 0.01)
        self.EXPONENT_BAND = stats_config.get('exponent_band', 0.15)
        self.MIN_HITS = stats_config.get('min_hits', 25)
        self.MIN_CONDITIONED = stats_config.get('min_conditioned', 200)
        self.MAX_GOF_SAMPLES = stats_config.get('max_gof_samples', 5000)
        self.NONEXIT_ABORT = section(plan.campaign, 'simulation').get('nonexit_abort_fraction', 1e-4)

        self._maps: Optional[PoincareMaps] = None
        self._predictions: Optional[Dict[str, Dict]] = None
        self._laws: Dict[str, ConditionalLaw] = {}

    @property
    def maps(self) -> PoincareMaps:
        if self._maps is None:
            self._maps = PoincareMaps(self.system, self.plan.domain, self.plan.chart_half_width,
                                      self.plan.engine)
        return self._maps

    # ------------------------------------------------------------------
    # Predictions
    # ------------------------------------------------------------------

    def predictions(self) -> Dict[str, Dict]:
        """index, ρ, μ, c_A (chart rectangles only) and χ± per target."""
        if self._predictions is not None:
            return self._predictions

        rho = compute_rho(self.system.lambdas)
        out = {}
        for target in self.plan.targets:
            i = self.measure.index(target)
            chi_plus, chi_minus = self.measure.weights(i)
            mu = self.measure.mu(target, i)
            entry = {
                'index': i,
                'rho': rho[i],
                'mu': mu,
                'chi_plus': chi_plus,
                'chi_minus': chi_minus,
                'c_A': None,
                'law': None,
            }
            on_chart = self.plan.exit_surface == 'chart' or target.kind == BOUNDARY_PREIMAGE
            if on_chart and target.axis == i:
                entry['c_A'] = c_A(target, self.system.lambdas, self.plan.chart_half_width)
            try:
                law = self.measure.conditional_law(target, i)
                self._laws[target.name] = law
                entry['law'] = law.to_dict()
            except NullEventError as e:
                logger.warning(f"⚠️  {e}")
            out[target.name] = entry
            logger.info(f"Target '{target.name}': index {i}, ρ={entry['rho']:.4f}, μ={mu:.6g}")

        self._predictions = out
        return out

    def trajectories_for(self, epsilon: float) -> int:
        preds = self.predictions()
        pairs = [(preds[t.name]['mu'], preds[t.name]['rho']) for t in self.plan.targets]
        return self.plan.budget.trajectories(epsilon, pairs)

    # ------------------------------------------------------------------
    # Classification
    # ------------------------------------------------------------------

    def classify(self, target: TargetSet, locations: np.ndarray, face_axis: np.ndarray,
                 face_sign: np.ndarray) -> np.ndarray:
        """Boolean mask of exit points that lie in the target."""
        if len(locations) == 0:
            return np.zeros(0, dtype=bool)
        L = self.plan.chart_half_width
        if self.plan.exit_surface == 'chart':
            chart_points = self.system.conjugacy.forward(locations)
            return target.contains(chart_points, L, face_axis, face_sign)
        if target.kind == BOUNDARY_PREIMAGE:
            return target.contains(self.maps.zeta_batch(locations), L)
        return target.contains(locations, self.plan.domain.half_width, face_axis, face_sign)

    def law_points(self, law: ConditionalLaw, locations: np.ndarray) -> np.ndarray:
        """Exit points in the coordinates the law is written in."""
        if law.coordinates == 'domain':
            return locations
        if self.plan.exit_surface == 'chart':
            return self.system.conjugacy.forward(locations)
        return self.maps.zeta_batch(locations)

    # ------------------------------------------------------------------
    # Ladder
    # ------------------------------------------------------------------

    def simulate_rung(self, eps_index: int, epsilon: float) -> Tuple[ExitBatch, SimConfig]:
        n = self.trajectories_for(epsilon)
        sim = SimConfig.default_for(self.system, epsilon, n, self.plan.seed, self.plan.engine,
                                    dt=self.plan.dt, max_time=self.plan.max_time,
                                    stream=ladder_stream(eps_index))
        logger.info(f"🎲 ε={epsilon:g}: {n} trajectories, dt={sim.dt:.3g}")
        simulator = ExitSimulator(self.system, self.exit_domain, self.plan.engine)
        return simulator.simulate_exits(sim, threads=self.plan.threads), sim

    def evaluate_batch(self, eps_index: int, batch: ExitBatch, dt: float,
                       conditioned: Dict[str, Dict[float, np.ndarray]]) -> List[CellResult]:
        """Cells for one rung; hits are appended to conditioned[target][ε]."""
        epsilon = batch.epsilon
        aborted = batch.nonexit_fraction > self.NONEXIT_ABORT
        reason = None
        if aborted:
            reason = (f"{batch.n_nonexit}/{batch.n_trajectories} trajectories did not exit "
                      f"(limit {self.NONEXIT_ABORT:g})")
            logger.error(f"❌ ε={epsilon:g}: {reason}")

        cells = []
        for target in self.plan.targets:
            mask = self.classify(target, batch.locations, batch.face_axis, batch.face_sign)
            hits = int(np.count_nonzero(mask))
            low, high = wilson_interval(hits, batch.n_trajectories)
            cells.append(CellResult(
                eps_index=eps_index, epsilon=epsilon, target=target.name,
                trials=batch.n_trajectories, hits=hits, ci_low=low, ci_high=high, dt=dt,
                status='aborted' if aborted else 'ok', reason=reason,
            ))
            if not aborted:
                conditioned.setdefault(target.name, {})[epsilon] = batch.locations[mask]
        return cells

    def run(self) -> ExperimentResult:
        plan = self.plan
        result = ExperimentResult(name=plan.name, digest=plan.digest)
        result.predictions = self.predictions()

        conditioned: Dict[str, Dict[float, np.ndarray]] = {}
        for k, epsilon in enumerate(plan.epsilons):
            batch, sim = self.simulate_rung(k, epsilon)
            result.nonexits[k] = batch.n_nonexit
            if self.store is not None and plan.write_samples:
                path = self.store.write_samples(k, (s.to_record() for s in batch.samples()))
                result.sample_files[k] = path.name
            result.cells.extend(self.evaluate_batch(k, batch, sim.dt, conditioned))

        self.statistics(result, conditioned)
        return result

    # ------------------------------------------------------------------
    # Statistics
    # ------------------------------------------------------------------

    def statistics(self, result: ExperimentResult, conditioned: Dict[str, Dict[float, np.ndarray]]) -> None:
        """Fill fits, conditional-law tests and collapse rates (report, don't abort)."""
        lam = self.system.lambdas
        for target in self.plan.targets:
            prediction = result.predictions[target.name]
            cells = [c for c in result.cells if c.target == target.name and c.status == 'ok']
            result.fits[target.name] = self._fit(cells, prediction)

            samples = conditioned.get(target.name, {})
            law = self._laws.get(target.name)
            if law is None:
                result.gof[target.name] = {'status': 'skipped', 'reason': 'zero limit measure'}
                continue
            result.gof[target.name] = self._gof(law, samples)

            i = prediction['index']
            collapse = []
            for j in range(i + 1, self.system.dim + 1):
                try:
                    fit = transverse_collapse_rate(samples, j, lam, i)
                    collapse.append({'status': 'ok', **fit.to_dict()})
                except UnderpoweredError as e:
                    collapse.append({'status': 'underpowered', 'coordinate': j, 'reason': str(e)})
            result.collapse[target.name] = collapse

    def _fit(self, cells: List[CellResult], prediction: Dict) -> Dict[str, Any]:
        points = [(c.epsilon, c.hits, c.trials) for c in cells]
        try:
            fit = fit_exponent(points, self.MIN_HITS)
        except UnderpoweredError as e:
            logger.warning(f"⚠️  Exponent fit skipped: {e}")
            return {'status': 'underpowered', 'reason': str(e)}
        deviation = fit.slope - prediction['rho']
        return {
            'status': 'ok',
            **fit.to_dict(),
            'predicted_rho': prediction['rho'],
            'predicted_mu': prediction['mu'],
            'within_band': bool(abs(deviation) <= self.EXPONENT_BAND),
        }

    def _gof(self, law: ConditionalLaw, samples: Dict[float, np.ndarray]) -> Dict[str, Any]:
        usable = [e for e, s in samples.items() if len(s) >= self.MIN_CONDITIONED]
        if not usable:
            return {'status': 'underpowered',
                    'reason': f"no ε with ≥ {self.MIN_CONDITIONED} conditioned samples"}
        epsilon = min(usable)
        points = samples[epsilon][:self.MAX_GOF_SAMPLES]
        report = goodness.test_conditional_law(self.law_points(law, points), law,
                                               self.ALPHA, self.MIN_CONDITIONED)
        return {'status': 'ok', 'epsilon': epsilon, **report.to_dict()}


def classify_exit(sample, target: TargetSet, system, domain, L: float,
                  config: Optional[Dict] = None) -> bool:
    """Whether one exit sample (ExitSample or record dict) lies in the target."""
    if isinstance(sample, dict):
        location, face = sample['location'], sample.get('face')
    else:
        location, face = sample.location, sample.face
    point = np.asarray(location, dtype=float)[None, :]
    axis = sign = None
    if face is not None:
        axis, sign = np.array([face[0]]), np.array([face[1]])

    if isinstance(domain, ChartBoxDomain):
        return bool(target.contains(system.conjugacy.forward(point), domain.half_width, axis, sign)[0])
    if target.kind == BOUNDARY_PREIMAGE:
        q = PoincareMaps(system, domain, L, config).zeta_batch(point)
        return bool(target.contains(q, L)[0])
    return bool(target.contains(point, domain.half_width, axis, sign)[0])


def run_plan(plan: ExperimentPlan, store: Optional[SampleStore] = None) -> ExperimentResult:
    return CampaignRunner(plan, store).run()


def refit_from_samples(plan: ExperimentPlan, summary: Dict[str, Any], sample_dir) -> ExperimentResult:
    """
    Recompute counts and statistics from stored exit records.

    Trial counts come from the summary; everything else from the samples.
    """
    runner = CampaignRunner(plan)
    result = ExperimentResult(name=plan.name, digest=plan.digest)
    result.predictions = runner.predictions()

    files = summary.get('samples', {})
    trials = {c['eps_index']: (c['trials'], c['dt']) for c in summary.get('cells', [])}
    nonexits = summary.get('nonexits', {})
    conditioned: Dict[str, Dict[float, np.ndarray]] = {}
    d = plan.system.dim

    for k, epsilon in enumerate(plan.epsilons):
        if str(k) not in files or k not in trials:
            raise StorageError(f"summary has no samples for ε index {k}")
        frame = read_samples(sample_dir / files[str(k)])
        n, dt = trials[k]
        locations = np.array(frame['location'].tolist(), dtype=float).reshape(-1, d)
        faces = frame['face'].tolist() if 'face' in frame else []
        if faces and isinstance(faces[0], list):
            face_axis = np.array([f[0] for f in faces], dtype=np.int64)
            face_sign = np.array([f[1] for f in faces], dtype=np.int64)
        else:
            face_axis = np.zeros(len(locations), dtype=np.int64)
            face_sign = np.zeros(len(locations), dtype=np.int64)
        missing = int(nonexits.get(str(k), 0))
        batch = ExitBatch(
            epsilon=epsilon,
            n_trajectories=int(n),
            trajectory_ids=frame['trajectory_id'].to_numpy(dtype=np.int64) if len(frame) else np.zeros(0, dtype=np.int64),
            times=frame['time'].to_numpy(dtype=float) if len(frame) else np.zeros(0),
            locations=locations,
            face_axis=face_axis,
            face_sign=face_sign,
            nonexit_ids=np.arange(missing, dtype=np.int64),
        )
        result.nonexits[k] = missing
        result.sample_files[k] = files[str(k)]
        result.cells.extend(runner.evaluate_batch(k, batch, dt, conditioned))

    runner.statistics(result, conditioned)
    return result
