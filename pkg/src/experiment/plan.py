"""
Experiment Plan

Turns a campaign config into validated objects.
Handles:
- System, domain, chart and target construction from the TOML tables
- The ε ladder and its per-rung trajectory budgets
- Box-exit mode (exit surface = chart box f⁻¹(B_L))
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.data.sample_store import config_hash
from src.model.domain import BoxDomain, ChartBoxDomain, DomainSpec, domain_from_config
from src.model.system import SystemSpec, require_valid, system_from_config
from src.model.targets import BOUNDARY_PREIMAGE, TargetSet, targets_from_config
from src.utils.config import section
from src.utils.errors import ConfigError, ValidationError

logger = logging.getLogger(__name__)

EXIT_SURFACES = ('domain', 'chart')


@dataclass(frozen=True)
class BudgetRule:
    """
    Trajectories per ladder rung: a fixed count, or enough for the expected
    number of target hits (n = ceil(hits / (μ ε^ρ)), capped).
    """

    fixed: Optional[int] = None
    target_hits: int = 2000
    max_trajectories: int = 100_000_000

    def trajectories(self, epsilon: float, predictions: Sequence[Tuple[float, float]]) -> int:
        """predictions: (μ, ρ) per target; targets with μ = 0 are ignored."""
        if self.fixed is not None:
            return int(self.fixed)
        needed = [math.ceil(self.target_hits / (mu * epsilon ** rho))
                  for mu, rho in predictions if mu > 0]
        if not needed:
            raise ValidationError("budget rule needs at least one target with positive limit measure")
        return int(min(max(needed), self.max_trajectories))

    def to_dict(self) -> Dict[str, Any]:
        return {'fixed': self.fixed, 'target_hits': self.target_hits,
                'max_trajectories': self.max_trajectories}


@dataclass
class ExperimentPlan:
    name: str
    system: SystemSpec
    domain: DomainSpec
    targets: List[TargetSet]
    epsilons: List[float]
    budget: BudgetRule
    seed: int
    chart_half_width: float
    exit_surface: str = 'domain'
    dt: Optional[float] = None
    max_time: Optional[float] = None
    threads: int = 1
    write_samples: bool = True
    compress: bool = False
    campaign: Dict[str, Any] = field(default_factory=dict)

    @property
    def engine(self) -> Dict[str, Any]:
        return self.campaign.get('engine', {})

    @property
    def digest(self) -> str:
        return config_hash(self.campaign)

    @property
    def exit_domain(self) -> DomainSpec:
        """The surface trajectories are stopped at."""
        if self.exit_surface == 'chart':
            return ChartBoxDomain(self.system, self.chart_half_width)
        return self.domain

    @classmethod
    def from_campaign(cls, campaign: Dict[str, Any], seed: Optional[int] = None,
                      threads: Optional[int] = None) -> 'ExperimentPlan':
        """Build (not yet validate) a plan; seed and threads override the config."""
        if seed is not None:
            campaign.setdefault('simulation', {})['seed'] = int(seed)
        if threads is not None:
            campaign.setdefault('simulation', {})['threads'] = int(threads)

        system = system_from_config(campaign.get('system', {}))
        domain = domain_from_config(campaign.get('domain', {}), system.dim)

        default_chart = 0.25 * (domain.half_width if isinstance(domain, BoxDomain)
                                else float(np.min(domain.radii)))
        L = float(campaign.get('chart', {}).get('half_width', default_chart))

        sim = campaign.get('simulation', {})
        exit_surface = sim.get('exit_surface', 'domain')
        if exit_surface not in EXIT_SURFACES:
            raise ConfigError(f"[simulation] exit_surface must be one of {EXIT_SURFACES}")

        target_blocks = campaign.get('targets', [])
        if not target_blocks:
            raise ConfigError("campaign needs at least one [[targets]] table")
        targets = []
        for block in target_blocks:
            on_chart = exit_surface == 'chart' or block.get('kind') == BOUNDARY_PREIMAGE
            if not on_chart and not isinstance(domain, BoxDomain):
                raise ConfigError(f"target '{block.get('name')}': smooth domains only take "
                                  f"'{BOUNDARY_PREIMAGE}' targets")
            width = L if on_chart else domain.half_width
            targets.extend(targets_from_config([block], system.dim, width))
        names = [t.name for t in targets]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate target names: {names}")

        ladder = campaign.get('ladder', {})
        if 'epsilons' not in ladder:
            raise ConfigError("[ladder] needs 'epsilons'")
        budget_defaults = section(campaign, 'budget')
        budget = BudgetRule(
            fixed=ladder.get('trajectories'),
            target_hits=int(ladder.get('hits_target', budget_defaults.get('target_hits', 2000))),
            max_trajectories=int(ladder.get('max_trajectories',
                                            budget_defaults.get('max_trajectories', 100_000_000))),
        )

        output = campaign.get('output', {})
        return cls(
            name=campaign.get('name', 'campaign'),
            system=system,
            domain=domain,
            targets=targets,
            epsilons=[float(e) for e in ladder['epsilons']],
            budget=budget,
            seed=int(sim.get('seed', 0)),
            chart_half_width=L,
            exit_surface=exit_surface,
            dt=sim.get('dt'),
            max_time=sim.get('max_time'),
            threads=int(sim.get('threads', section(campaign, 'simulation').get('threads', 1))),
            write_samples=bool(output.get('write_samples', True)),
            compress=bool(output.get('gzip', False)),
            campaign=campaign,
        )

    def validate(self) -> None:
        """Raise ValidationError on the first violated plan invariant."""
        eps = np.asarray(self.epsilons)
        if eps.size == 0:
            raise ValidationError("ε ladder is empty")
        if np.any(eps <= 0) or np.any(eps >= 1):
            raise ValidationError(f"ε values must lie in (0, 1), got {self.epsilons}")
        if np.any(np.diff(eps) >= 0):
            raise ValidationError(f"ε ladder must be strictly decreasing, got {self.epsilons}")
        if self.budget.fixed is not None and self.budget.fixed <= 0:
            raise ValidationError(f"trajectory budget must be positive, got {self.budget.fixed}")
        if self.budget.target_hits <= 0 or self.budget.max_trajectories <= 0:
            raise ValidationError("budget rule values must be positive")
        if self.seed < 0:
            raise ValidationError(f"seed must be non-negative, got {self.seed}")

        require_valid(self.system, self.domain, self.engine)

        if not self.chart_half_width > 0:
            raise ValidationError(f"chart half_width must be positive, got {self.chart_half_width}")
        corners = ChartBoxDomain(self.system, self.chart_half_width).boundary_samples(64)[0]
        if np.any(self.domain.level(corners) >= 0):
            raise ValidationError(f"chart box of half-width {self.chart_half_width} is not inside the domain")

        start = self.epsilons[0] * self.system.xi0
        if not bool(self.exit_domain.contains(start)):
            raise ValidationError(f"X₀ = εξ₀ lies outside the exit surface at ε={self.epsilons[0]}")

        for target in self.targets:
            width = self.chart_half_width if (self.exit_surface == 'chart' or
                                              target.kind == BOUNDARY_PREIMAGE) \
                else self.domain.half_width
            target.check_geometry(width)

        logger.info(f"✅ Plan '{self.name}' valid: {len(self.targets)} targets, "
                    f"{len(self.epsilons)} ladder rungs")
