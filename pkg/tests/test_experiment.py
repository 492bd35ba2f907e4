"""
Unit Tests for Experiment Plans, the Campaign Runner and Reports
"""

import copy
import math
import time

import pytest
import numpy as np
from pathlib import Path

# Add project root to path
import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.data.sample_store import SampleStore, read_summary
from src.experiment.plan import BudgetRule, ExperimentPlan
from src.experiment.report import cells_frame, render_svg, render_table
from src.experiment.runner import CampaignRunner, classify_exit, refit_from_samples, run_plan
from src.flow.poincare import PoincareMaps
from src.model.domain import BoxDomain, ChartBoxDomain, EllipsoidDomain
from src.model.system import linear_system
from src.model.targets import BOUNDARY_PREIMAGE, TargetSet
from src.sde.simulator import ExitBatch, ExitSample
from src.utils.errors import ConfigError, ValidationError


def make_campaign(**sections):
    """Small planar campaign; keyword arguments replace whole tables."""
    campaign = {
        'name': 'unit',
        'system': {'lambdas': [2.0, 1.0]},
        'domain': {'kind': 'box', 'half_width': 1.0},
        'targets': [
            {'name': 'top_bottom', 'axis': 2},
            {'name': 'sides', 'axis': 1},
        ],
        'ladder': {'epsilons': [0.3, 0.2, 0.15], 'trajectories': 300},
        'simulation': {'seed': 1},
    }
    campaign.update(copy.deepcopy(sections))
    return campaign


def make_plan(**sections) -> ExperimentPlan:
    plan = ExperimentPlan.from_campaign(make_campaign(**sections))
    plan.validate()
    return plan


@pytest.fixture(scope='module')
def plan():
    return make_plan()


@pytest.fixture(scope='module')
def result(plan):
    return run_plan(plan)


class TestBudgetRule:
    """Trajectories per rung."""

    def test_fixed(self):
        assert BudgetRule(fixed=7).trajectories(0.1, [(1.0, 1.0)]) == 7

    def test_largest_requirement_wins(self):
        rule = BudgetRule(target_hits=2000)
        assert rule.trajectories(0.25, [(0.5, 1.0), (1.0, 0.0)]) == 16000

    def test_rounds_up(self):
        assert BudgetRule(target_hits=5).trajectories(0.5, [(0.75, 1.0)]) == 14

    def test_cap(self):
        rule = BudgetRule(target_hits=2000, max_trajectories=1000)
        assert rule.trajectories(0.25, [(0.5, 1.0)]) == 1000

    def test_null_targets_ignored(self):
        rule = BudgetRule(target_hits=2000)
        assert rule.trajectories(0.25, [(0.0, 1.0), (1.0, 0.0)]) == 2000
        with pytest.raises(ValidationError):
            rule.trajectories(0.25, [(0.0, 1.0)])


class TestExperimentPlan:
    """Campaign tables to validated plans."""

    def test_builds_targets(self, plan):
        assert [t.name for t in plan.targets] == ['top_bottom', 'sides']
        assert plan.chart_half_width == pytest.approx(0.25)
        assert plan.budget.fixed == 300

    def test_ladder_must_decrease(self):
        with pytest.raises(ValidationError):
            make_plan(ladder={'epsilons': [0.1, 0.2, 0.3]})

    def test_ladder_inside_unit_interval(self):
        with pytest.raises(ValidationError):
            make_plan(ladder={'epsilons': [1.5, 0.2]})

    def test_missing_ladder(self):
        with pytest.raises(ConfigError):
            ExperimentPlan.from_campaign(make_campaign(ladder={}))

    def test_missing_targets(self):
        with pytest.raises(ConfigError):
            ExperimentPlan.from_campaign(make_campaign(targets=[]))

    def test_unknown_exit_surface(self):
        with pytest.raises(ConfigError):
            ExperimentPlan.from_campaign(make_campaign(simulation={'exit_surface': 'sphere'}))

    def test_smooth_domain_needs_preimage_targets(self):
        with pytest.raises(ConfigError):
            ExperimentPlan.from_campaign(make_campaign(domain={'kind': 'ellipsoid', 'radii': [1.0, 1.0]}))

    def test_chart_box_must_fit(self):
        with pytest.raises(ValidationError):
            make_plan(chart={'half_width': 2.0})

    def test_target_outside_face(self):
        with pytest.raises(ValidationError):
            make_plan(targets=[{'name': 'wide', 'axis': 2, 'bounds': [[-1.5, 0.5]]}])

    def test_negative_seed(self):
        plan = ExperimentPlan.from_campaign(make_campaign(), seed=-1)
        with pytest.raises(ValidationError):
            plan.validate()

    def test_digest_ignores_threads_and_output(self):
        base = ExperimentPlan.from_campaign(make_campaign())
        threaded = ExperimentPlan.from_campaign(make_campaign(output={'dir': '/tmp/elsewhere'}), threads=4)
        reseeded = ExperimentPlan.from_campaign(make_campaign(), seed=99)
        assert threaded.threads == 4
        assert base.digest == threaded.digest
        assert base.digest != reseeded.digest


class TestClassifyExit:
    """Membership of single exit records."""

    def test_face_labels_decide_corners(self):
        system = linear_system([2.0, 1.0])
        top = TargetSet(name='top', axis=2, signs=(1,), bounds=np.array([[-1.0, 1.0], [-1.0, 1.0]]))
        domain = BoxDomain(2, 1.0)
        assert classify_exit({'location': [0.2, 1.0], 'face': [2, 1]}, top, system, domain, 0.25)
        corner = ExitSample(trajectory_id=0, epsilon=0.1, time=1.0, location=(1.0, 1.0), face=(1, 1))
        assert not classify_exit(corner, top, system, domain, 0.25)

    def test_chart_box_domain(self):
        system = linear_system([2.0, 1.0])
        top = TargetSet(name='top', axis=2, signs=(1,), bounds=np.array([[-0.25, 0.25], [-0.25, 0.25]]))
        record = {'location': [0.1, 0.25], 'face': None}
        assert classify_exit(record, top, system, ChartBoxDomain(system, 0.25), 0.25)

    def test_preimage_target(self):
        """(0.2, 1) flows back to (0.0125, 0.25); (1, 0.2) to (0.25, 0.1)."""
        system = linear_system([2.0, 1.0])
        target = TargetSet(name='pre', axis=2, signs=(1,), bounds=np.array([[-0.1, 0.1], [-0.25, 0.25]]),
                           kind=BOUNDARY_PREIMAGE)
        domain = BoxDomain(2, 1.0)
        assert classify_exit({'location': [0.2, 1.0]}, target, system, domain, 0.25)
        assert not classify_exit({'location': [1.0, 0.2]}, target, system, domain, 0.25)


class TestCampaignRunner:
    """Ladder execution, counts and statistics."""

    def test_predictions(self, plan):
        predictions = CampaignRunner(plan).predictions()
        top = predictions['top_bottom']
        assert top['index'] == 2
        assert top['rho'] == pytest.approx(1.0)
        assert top['mu'] == pytest.approx(np.sqrt(2.0 / np.pi), rel=1e-5)
        assert predictions['sides']['index'] == 1
        assert predictions['sides']['mu'] == pytest.approx(1.0, abs=1e-9)
        assert top['law']['face_weights'] == {'+': pytest.approx(0.5), '-': pytest.approx(0.5)}

    def test_budget_from_predictions(self):
        plan = make_plan(ladder={'epsilons': [0.2], 'hits_target': 50})
        runner = CampaignRunner(plan)
        mu = runner.predictions()['top_bottom']['mu']
        assert runner.trajectories_for(0.2) == math.ceil(50 / (mu * 0.2))

    def test_faces_partition_the_boundary(self, result):
        for k in range(3):
            cells = {c.target: c for c in result.cells if c.eps_index == k}
            assert result.nonexits[k] == 0
            assert cells['top_bottom'].hits + cells['sides'].hits == cells['sides'].trials == 300

    def test_split_target_adds_up(self):
        top = {'name': 'top', 'axis': 2, 'signs': ['+']}
        lo = {'name': 'top_lo', 'axis': 2, 'signs': ['+'], 'bounds': [[-1.0, 0.25]]}
        hi = {'name': 'top_hi', 'axis': 2, 'signs': ['+'], 'bounds': [[0.25, 1.0]]}
        plan = make_plan(targets=[top, lo, hi], ladder={'epsilons': [0.3], 'trajectories': 400})
        cells = {c.target: c.hits for c in run_plan(plan).cells}
        assert cells['top_lo'] + cells['top_hi'] == cells['top']

    def test_wilson_bounds_bracket_fraction(self, result):
        for cell in result.cells:
            assert cell.ci_low <= cell.fraction <= cell.ci_high

    def test_rerun_is_identical(self, plan, result):
        again = run_plan(plan)
        assert [c.to_dict() for c in again.cells] == [c.to_dict() for c in result.cells]
        assert again.fits == result.fits

    def test_statistics_are_reported(self, result):
        assert set(result.fits) == {'top_bottom', 'sides'}
        assert result.fits['sides']['status'] == 'ok'
        assert result.gof['top_bottom']['status'] in ('ok', 'underpowered')
        assert result.collapse['top_bottom'] == []

    def test_nonexits_abort_the_rung(self, plan):
        runner = CampaignRunner(plan)
        batch = ExitBatch(
            epsilon=0.3, n_trajectories=10,
            trajectory_ids=np.arange(5), times=np.ones(5),
            locations=np.column_stack([np.zeros(5), np.ones(5)]),
            face_axis=np.full(5, 2), face_sign=np.ones(5, dtype=np.int64),
            nonexit_ids=np.arange(5, 10),
        )
        conditioned = {}
        cells = runner.evaluate_batch(0, batch, 1e-3, conditioned)
        assert all(c.status == 'aborted' for c in cells)
        assert 'did not exit' in cells[0].reason
        assert conditioned == {}

    def test_chart_exit_surface(self):
        plan = make_plan(simulation={'seed': 3, 'exit_surface': 'chart'},
                         ladder={'epsilons': [0.1], 'trajectories': 200})
        assert isinstance(plan.exit_domain, ChartBoxDomain)
        result = run_plan(plan)
        hits = {c.target: c.hits for c in result.cells}
        assert hits['top_bottom'] + hits['sides'] == 200
        assert result.predictions['top_bottom']['c_A'] is not None


class TestSmoothDomain:
    """Unit disc exits, classified through the chart box preimage."""

    TARGETS = [
        {'name': 'upper_lower', 'kind': BOUNDARY_PREIMAGE, 'axis': 2},
        {'name': 'left_right', 'kind': BOUNDARY_PREIMAGE, 'axis': 1},
    ]

    @pytest.fixture(scope='class')
    def disc_plan(self):
        return make_plan(domain={'kind': 'ellipsoid', 'radii': [1.0, 1.0]}, targets=self.TARGETS,
                         ladder={'epsilons': [0.3, 0.2], 'trajectories': 200})

    def test_plan_validates(self, disc_plan):
        assert isinstance(disc_plan.domain, EllipsoidDomain)
        assert disc_plan.chart_half_width == pytest.approx(0.25)

    def test_classification_follows_psi(self, disc_plan):
        """ψ_L images of chart face points land in the matching preimage target only."""
        system, domain, L = disc_plan.system, disc_plan.domain, disc_plan.chart_half_width
        upper, sides = disc_plan.targets
        maps = PoincareMaps(system, domain, L)
        for t in np.linspace(-0.8, 0.8, 5):
            for sign in (1.0, -1.0):
                top = maps.psi_chart(np.array([t * L, sign * L])).exit_point
                side = maps.psi_chart(np.array([sign * L, t * L])).exit_point
                assert abs(domain.level(top)) < 1e-8
                assert classify_exit({'location': top.tolist()}, upper, system, domain, L)
                assert not classify_exit({'location': top.tolist()}, sides, system, domain, L)
                assert classify_exit({'location': side.tolist()}, sides, system, domain, L)
                assert not classify_exit({'location': side.tolist()}, upper, system, domain, L)

    def test_run_plan(self, disc_plan):
        result = run_plan(disc_plan)
        assert result.predictions['upper_lower']['index'] == 2
        assert result.predictions['upper_lower']['mu'] == pytest.approx(np.sqrt(2.0 / np.pi), rel=1e-4)
        for k in range(2):
            cells = {c.target: c for c in result.cells if c.eps_index == k}
            assert result.nonexits[k] == 0
            assert cells['upper_lower'].trials == 200
            assert cells['upper_lower'].hits + cells['left_right'].hits == 200
            assert cells['left_right'].hits > cells['upper_lower'].hits


class TestRefit:
    """Stored samples reproduce the run."""

    def test_refit_matches_run(self, plan, tmp_path):
        store = SampleStore(tmp_path, plan.digest)
        run = CampaignRunner(plan, store).run()
        path = store.write_summary(run.to_summary(plan))
        summary = read_summary(path)
        assert summary['config_hash'] == plan.digest
        assert sorted(summary['samples']) == ['0', '1', '2']

        refit = refit_from_samples(plan, summary, tmp_path)
        assert [c.to_dict() for c in refit.cells] == [c.to_dict() for c in run.cells]
        assert refit.fits == run.fits

    def test_compressed_samples(self, tmp_path):
        plan = make_plan(ladder={'epsilons': [0.3, 0.2, 0.15], 'trajectories': 100},
                         output={'gzip': True})
        store = SampleStore(tmp_path, plan.digest, compress=plan.compress)
        run = CampaignRunner(plan, store).run()
        summary = read_summary(store.write_summary(run.to_summary(plan)))
        assert summary['samples']['0'].endswith('.jsonl.gz')
        refit = refit_from_samples(plan, summary, tmp_path)
        assert [c.hits for c in refit.cells] == [c.hits for c in run.cells]


class TestReport:
    """Text table and SVG plot."""

    def test_empty_summary(self):
        assert 'no cells' in render_table({'name': 'empty', 'config_hash': 'abc'})
        assert cells_frame({}).empty

    def test_table_lists_targets(self, plan, result):
        text = render_table(result.to_summary(plan))
        assert 'top_bottom' in text and 'sides' in text
        assert text.startswith('Campaign: unit')

    def test_svg_written(self, plan, result, tmp_path):
        path = render_svg(result.to_summary(plan), tmp_path / 'plot.svg')
        assert path.exists()
        assert '<svg' in path.read_text()

    def test_svg_is_reproducible(self, plan, result, tmp_path):
        """No timestamps or random ids: rendering twice gives the same bytes."""
        summary = result.to_summary(plan)
        first = render_svg(summary, tmp_path / 'a.svg').read_bytes()
        time.sleep(1.1)
        second = render_svg(summary, tmp_path / 'b.svg').read_bytes()
        assert first == second
        assert b'<dc:date>' not in first


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
