"""
Exit Simulator

Batched Euler-Maruyama integration of dX = b(X)dt + eps*sigma(X)dW until
the first exit from a domain.
Handles:
- Step-size and horizon defaults tied to eps and the spectrum
- One RNG stream per trajectory id (block-size and thread-count invariant)
- Active-set compaction: exited trajectories leave the working arrays
- Exit location by interpolation on the last step, projected onto ∂D
- Optional path recording and caller-supplied start points
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from src.model.system import SystemSpec, require_valid
from src.sde.rng import EXIT_STREAM, TrajectoryNoise, block_ranges
from src.utils.config import section
from src.utils.errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    """
    One simulation run.

    Args:
        epsilon: noise amplitude (0 allowed for noiseless diagnostics)
        dt: Euler step
        max_time: horizon; trajectories still inside are counted as non-exits
        seed: non-negative 64-bit seed
        n_trajectories: number of trajectories
        record_paths: keep every step of every trajectory
        stream: RNG stream id (separates independent uses of one seed)
    """

    epsilon: float
    dt: float
    max_time: float
    seed: int
    n_trajectories: int
    record_paths: bool = False
    stream: int = EXIT_STREAM

    @classmethod
    def default_for(cls, system: SystemSpec, epsilon: float, n_trajectories: int, seed: int,
                    config: Optional[Dict] = None, **overrides) -> 'SimConfig':
        """dt = min(max_dt, c1/λ_1, c2·ε^{2/3}); max_time = (c3/λ_d) log(1/ε)."""
        sim = section(config, 'simulation')
        lam = system.lambdas
        dt = min(sim.get('max_dt', 1e-3),
                 sim.get('stability_factor', 0.02) / lam[0],
                 sim.get('epsilon_factor', 0.1) * epsilon ** (2.0 / 3.0) if epsilon > 0 else np.inf)
        log_scale = math.log(1.0 / epsilon) if 0 < epsilon < 1 else 1.0
        max_time = sim.get('horizon_factor', 8.0) / lam[-1] * log_scale
        values = dict(epsilon=float(epsilon), dt=float(dt), max_time=float(max_time),
                      seed=int(seed), n_trajectories=int(n_trajectories))
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def validate(self, system: SystemSpec) -> None:
        lam = system.lambdas
        if self.epsilon < 0:
            raise ValidationError(f"epsilon must be non-negative, got {self.epsilon}")
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if self.dt > 0.1 / lam[0]:
            raise ValidationError(f"dt={self.dt} exceeds the stability guard 0.1/λ_1={0.1 / lam[0]:.3g}")
        if 0 < self.epsilon < 1:
            floor = 4.0 / lam[-1] * math.log(1.0 / self.epsilon)
            if self.max_time < floor:
                raise ValidationError(f"max_time={self.max_time} below (4/λ_d)log(1/ε)={floor:.3g}")
        if self.n_trajectories < 0:
            raise ValidationError(f"n_trajectories must be non-negative, got {self.n_trajectories}")
        if self.seed < 0:
            raise ValidationError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class ExitSample:
    trajectory_id: int
    epsilon: float
    time: float
    location: Tuple[float, ...]
    face: Optional[Tuple[int, int]] = None

    def to_record(self) -> Dict:
        return {
            'trajectory_id': self.trajectory_id,
            'epsilon': self.epsilon,
            'time': self.time,
            'location': list(self.location),
            'face': list(self.face) if self.face is not None else None,
        }


@dataclass
class ExitBatch:
    """
    Exits of one simulation, ordered by trajectory id.

    face_axis/face_sign are 0 for domains without faces.
    """

    epsilon: float
    n_trajectories: int
    trajectory_ids: np.ndarray
    times: np.ndarray
    locations: np.ndarray
    face_axis: np.ndarray
    face_sign: np.ndarray
    nonexit_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    paths: Optional[Dict[int, Tuple[np.ndarray, np.ndarray]]] = None

    @property
    def n_exited(self) -> int:
        return int(self.trajectory_ids.size)

    @property
    def n_nonexit(self) -> int:
        return int(self.nonexit_ids.size)

    @property
    def nonexit_fraction(self) -> float:
        return self.n_nonexit / self.n_trajectories if self.n_trajectories else 0.0

    def samples(self) -> Iterator[ExitSample]:
        has_faces = bool(np.any(self.face_axis))
        for k in range(self.n_exited):
            face = (int(self.face_axis[k]), int(self.face_sign[k])) if has_faces else None
            yield ExitSample(
                trajectory_id=int(self.trajectory_ids[k]),
                epsilon=self.epsilon,
                time=float(self.times[k]),
                location=tuple(float(v) for v in self.locations[k]),
                face=face,
            )

    def select(self, mask: np.ndarray) -> 'ExitBatch':
        """Exited trajectories where mask holds (non-exits are dropped)."""
        return replace(self, trajectory_ids=self.trajectory_ids[mask], times=self.times[mask],
                       locations=self.locations[mask], face_axis=self.face_axis[mask],
                       face_sign=self.face_sign[mask], nonexit_ids=np.zeros(0, dtype=np.int64),
                       paths=None)


@dataclass
class _BlockResult:
    ids: np.ndarray
    times: np.ndarray
    locations: np.ndarray
    face_axis: np.ndarray
    face_sign: np.ndarray
    nonexit: np.ndarray
    paths: Optional[Dict[int, Tuple[np.ndarray, np.ndarray]]] = None


class ExitSimulator:
    """
    Euler-Maruyama exit engine for one system and domain.

    Args:
        system: SystemSpec (validated on construction)
        domain: DomainSpec to exit from
        config: engine config; the 'simulation' section overrides the defaults
    """

    def __init__(self, system: SystemSpec, domain, config: Optional[Dict] = None):
        require_valid(system, config=config)
        self.system = system
        self.domain = domain
        self.config = config

        self.BLOCK_SIZE = 8192
        self.THREADS = 1

        if config:
            sim_config = section(config, 'simulation')
            self.BLOCK_SIZE = sim_config.get('block_size', self.BLOCK_SIZE)
            self.THREADS = sim_config.get('threads', self.THREADS)

    def simulate_exits(self, sim: SimConfig, initial_points: Optional[np.ndarray] = None,
                       threads: Optional[int] = None) -> ExitBatch:
        """
        Run sim.n_trajectories trajectories from eps*xi0 (or initial_points).

        Returns:
            ExitBatch with exits ordered by trajectory id and the ids of
            trajectories still inside at max_time.
        """
        sim.validate(self.system)
        d = self.system.dim
        n = sim.n_trajectories

        if initial_points is None:
            start = sim.epsilon * self.system.xi0
            if not bool(self.domain.contains(start)):
                raise ValidationError(f"X₀ = εξ₀ = {start.tolist()} lies outside the domain")
            starts = None
        else:
            starts = np.atleast_2d(np.asarray(initial_points, dtype=float))
            if starts.shape != (n, d):
                raise ValidationError(f"initial_points has shape {starts.shape}, expected ({n}, {d})")
            start = None

        blocks = list(block_ranges(n, self.BLOCK_SIZE))
        workers = max(1, int(threads or self.THREADS))

        def run(block):
            _, lo, hi = block
            x0 = np.repeat(start[None, :], hi - lo, axis=0) if starts is None else starts[lo:hi]
            return self._run_block(sim, lo, x0)

        if workers > 1 and len(blocks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run, blocks))
        else:
            results = [run(b) for b in blocks]

        batch = self._collect(sim, results)
        if batch.n_nonexit:
            logger.warning(f"⚠️  {batch.n_nonexit}/{n} trajectories did not exit by "
                           f"t={sim.max_time:.3g} (ε={sim.epsilon:g})")
        logger.debug(f"ε={sim.epsilon:g}: {batch.n_exited} exits from {n} trajectories "
                     f"in {len(blocks)} blocks")
        return batch

    def replay(self, sim: SimConfig, trajectory_id: int) -> ExitBatch:
        """Re-run one trajectory of sim from εξ₀ with its own noise, recording its path."""
        if not 0 <= trajectory_id < sim.n_trajectories:
            raise ValidationError(f"trajectory_id {trajectory_id} outside 0..{sim.n_trajectories - 1}")
        sim.validate(self.system)
        single = replace(sim, n_trajectories=1, record_paths=True)
        start = (sim.epsilon * self.system.xi0)[None, :]
        batch = self._collect(single, [self._run_block(single, int(trajectory_id), start)])
        logger.debug(f"🎲 Replayed trajectory {trajectory_id} at ε={sim.epsilon:g}")
        return batch

    def _noise(self, x: np.ndarray, eta: np.ndarray) -> np.ndarray:
        # column-by-column sum keeps results independent of BLAS threading
        sigma = self.system.constant_sigma
        if sigma is not None:
            out = eta[:, :1] * sigma[:, 0]
            for col in range(1, sigma.shape[1]):
                out = out + eta[:, col:col + 1] * sigma[:, col]
            return out
        sig = self.system.sigma(x)
        out = sig[:, :, 0] * eta[:, :1]
        for col in range(1, sig.shape[2]):
            out = out + sig[:, :, col] * eta[:, col:col + 1]
        return out

    def _run_block(self, sim: SimConfig, offset: int, x0: np.ndarray) -> _BlockResult:
        m, d = x0.shape
        noise_dim = self.system.noise_dim
        noise = None
        if sim.epsilon > 0:
            noise = TrajectoryNoise(sim.seed, sim.stream, offset + np.arange(m), noise_dim)
        drift = self.system.drift
        dt = sim.dt
        scale = sim.epsilon * math.sqrt(dt)
        # whole steps only, so no reported exit time passes max_time
        n_steps = int(math.floor(sim.max_time / dt))

        x = np.array(x0, dtype=float, copy=True)
        alive = np.arange(m)
        exit_time = np.full(m, np.nan)
        exit_loc = np.zeros((m, d))
        exit_axis = np.zeros(m, dtype=np.int64)
        exit_sign = np.zeros(m, dtype=np.int64)
        exited = np.zeros(m, dtype=bool)

        history: Optional[List[Tuple[np.ndarray, np.ndarray]]] = [] if sim.record_paths else None
        if history is not None:
            history.append((alive.copy(), x.copy()))

        for step in range(n_steps):
            if alive.size == 0:
                break
            xa = x[alive]
            x_new = xa + drift(xa) * dt
            if scale > 0:
                eta = noise.draw(alive, step)
                x_new = x_new + scale * self._noise(xa, eta)

            out = self.domain.level(x_new) >= 0
            if np.any(out):
                idx = alive[out]
                theta, point, axis, sign = self.domain.segment_crossing(xa[out], x_new[out])
                exit_time[idx] = np.minimum((step + theta) * dt, sim.max_time)
                exit_loc[idx] = point
                exit_axis[idx] = axis
                exit_sign[idx] = sign
                exited[idx] = True
                x_new[out] = point

            x[alive] = x_new
            if history is not None:
                history.append((alive.copy(), x_new.copy()))
            alive = alive[~out]

        ids = np.nonzero(exited)[0]
        paths = self._assemble_paths(history, ids, offset, exit_time, dt) if history is not None else None
        return _BlockResult(
            ids=ids + offset,
            times=exit_time[ids],
            locations=exit_loc[ids],
            face_axis=exit_axis[ids],
            face_sign=exit_sign[ids],
            nonexit=np.nonzero(~exited)[0] + offset,
            paths=paths,
        )

    @staticmethod
    def _assemble_paths(history, ids, offset, exit_time, dt):
        """Per-trajectory (times, points); the last point is the exit point at its interpolated time."""
        per_traj: Dict[int, List[np.ndarray]] = {int(k): [] for k in ids}
        for alive, values in history:
            for row, k in enumerate(alive):
                if int(k) in per_traj:
                    per_traj[int(k)].append(values[row])
        paths = {}
        for k, points in per_traj.items():
            points = np.array(points)
            times = np.arange(len(points), dtype=float) * dt
            times[-1] = exit_time[k]
            paths[k + offset] = (times, points)
        return paths

    def _collect(self, sim: SimConfig, results: List[_BlockResult]) -> ExitBatch:
        d = self.system.dim
        paths = None
        if sim.record_paths:
            paths = {}
            for r in results:
                paths.update(r.paths or {})

        def cat(name, empty):
            parts = [getattr(r, name) for r in results]
            return np.concatenate(parts) if parts else empty

        return ExitBatch(
            epsilon=sim.epsilon,
            n_trajectories=sim.n_trajectories,
            trajectory_ids=cat('ids', np.zeros(0, dtype=np.int64)),
            times=cat('times', np.zeros(0)),
            locations=cat('locations', np.zeros((0, d))),
            face_axis=cat('face_axis', np.zeros(0, dtype=np.int64)),
            face_sign=cat('face_sign', np.zeros(0, dtype=np.int64)),
            nonexit_ids=cat('nonexit', np.zeros(0, dtype=np.int64)),
            paths=paths,
        )


def simulate_exits(system: SystemSpec, domain, sim: SimConfig, config: Optional[Dict] = None,
                   initial_points: Optional[np.ndarray] = None) -> ExitBatch:
    return ExitSimulator(system, domain, config).simulate_exits(sim, initial_points)
