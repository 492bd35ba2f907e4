#!/usr/bin/env python3
"""
Main Orchestrator for Rare-Exit Campaigns

Command-line entry point over campaign TOML files.

Commands:
- predict: exponent ladder, limit covariance, χ weights and per-target μ (JSON on stdout)
- simulate: run the ε ladder, write exit samples and a summary
- fit: recompute counts and fits from a summary and its sample files
- report: text table and log-log SVG from a summary
- validate-flow: numeric exit maps against the closed form or a round trip (CSV)
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

import colorlog  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from src.data.sample_store import SampleStore, read_summary  # noqa: E402
from src.experiment.plan import ExperimentPlan  # noqa: E402
from src.experiment.report import render_svg, render_table  # noqa: E402
from src.experiment.runner import CampaignRunner, refit_from_samples  # noqa: E402
from src.flow.integrator import FlowIntegrator, linear_box_exit  # noqa: E402
from src.flow.poincare import PoincareMaps  # noqa: E402
from src.model.domain import BoxDomain, ChartBoxDomain  # noqa: E402
from src.predict.exponents import compute_rho, limit_covariance  # noqa: E402
from src.utils.config import get_config, get_output_dir, load_campaign  # noqa: E402
from src.utils.errors import (  # noqa: E402
    ConfigError, FlowError, NullEventError, QuadratureError, RareExitError,
    StorageError, UnderpoweredError, ValidationError,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_UNDERPOWERED = 4

EXIT_CODES = {
    ConfigError: EXIT_VALIDATION,
    ValidationError: EXIT_VALIDATION,
    QuadratureError: EXIT_VALIDATION,
    FlowError: EXIT_VALIDATION,
    NullEventError: EXIT_VALIDATION,
    StorageError: EXIT_IO,
    UnderpoweredError: EXIT_UNDERPOWERED,
}


def setup_logging(level: str = 'INFO', log_path: Optional[str] = None):
    """Colored log lines on stderr (stdout carries JSON/CSV), plain lines in the optional file."""
    handler = colorlog.StreamHandler(sys.stderr)
    handler.setFormatter(colorlog.ColoredFormatter(
        '%(log_color)s%(asctime)s - %(name)s - %(levelname)s%(reset)s - %(message)s'
    ))
    handlers: List[logging.Handler] = [handler]

    if log_path:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_path)
        file_handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
        handlers.append(file_handler)

    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), handlers=handlers, force=True)


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def exit_code_for(error: Exception) -> int:
    for kind, code in EXIT_CODES.items():
        if isinstance(error, kind):
            return code
    if isinstance(error, OSError):
        return EXIT_IO
    return 1


class ExitOrchestrator:
    """Runs one subcommand; every command returns a process exit code."""

    def __init__(self, stdout=None):
        self.stdout = stdout or sys.stdout

    def _emit(self, text: str):
        self.stdout.write(text if text.endswith('\n') else text + '\n')

    def _plan(self, config_path: str, seed: Optional[int] = None,
              threads: Optional[int] = None) -> ExperimentPlan:
        campaign = load_campaign(config_path)
        plan = ExperimentPlan.from_campaign(campaign, seed=seed, threads=threads)
        plan.validate()
        return plan

    def cmd_predict(self, config_path: str) -> int:
        plan = self._plan(config_path)
        system = plan.system
        runner = CampaignRunner(plan)
        covariance = limit_covariance(system.sigma0, system.lambdas)

        chi = {}
        for i in range(1, system.dim + 1):
            plus, minus = runner.measure.weights(i)
            chi[str(i)] = {'plus': plus, 'minus': minus}

        predictions = runner.predictions()
        output = {
            'name': plan.name,
            'config_hash': plan.digest,
            'rho': compute_rho(system.lambdas).to_list(),
            'covariance': covariance.to_list(),
            'chi': chi,
            'chart_half_width': plan.chart_half_width,
            'exit_surface': plan.exit_surface,
            'targets': predictions,
        }
        self._emit(json.dumps(output, indent=2, sort_keys=True, default=_jsonable))
        return EXIT_OK

    def cmd_simulate(self, config_path: str, seed: Optional[int] = None,
                     threads: Optional[int] = None, out: Optional[str] = None) -> int:
        plan = self._plan(config_path, seed=seed, threads=threads)
        out_dir = get_output_dir(plan.campaign, out)
        store = SampleStore(out_dir, plan.digest, compress=plan.compress)

        logger.info(f"🚀 Campaign '{plan.name}' → {out_dir}")
        result = CampaignRunner(plan, store).run()
        summary_path = store.write_summary(result.to_summary(plan))
        self._emit(str(summary_path))

        if result.aborted:
            logger.error("❌ Some ladder rungs were aborted (too many non-exits)")
            return EXIT_VALIDATION
        logger.info(f"✅ Campaign '{plan.name}' complete")
        return EXIT_OK

    def cmd_fit(self, summary_path: str) -> int:
        summary_path = Path(summary_path)
        summary = read_summary(summary_path)
        if 'config' not in summary:
            raise StorageError(f"summary {summary_path} has no embedded config")
        plan = ExperimentPlan.from_campaign(summary['config'])
        result = refit_from_samples(plan, summary, summary_path.parent)

        self._emit(json.dumps({'config_hash': result.digest, 'fits': result.fits,
                               'gof': result.gof, 'collapse': result.collapse},
                              indent=2, sort_keys=True, default=_jsonable))
        if result.fits and all(fit.get('status') != 'ok' for fit in result.fits.values()):
            logger.warning("⚠️  No target had enough hits for an exponent fit")
            return EXIT_UNDERPOWERED
        return EXIT_OK

    def cmd_report(self, summary_path: str, out: Optional[str] = None) -> int:
        summary_path = Path(summary_path)
        summary = read_summary(summary_path)
        self._emit(render_table(summary))
        out_dir = Path(out) if out else summary_path.parent
        tag = summary.get('config_hash', 'campaign')[:12]
        render_svg(summary, out_dir / f"report_{tag}.svg")
        return EXIT_OK

    def cmd_validate_flow(self, config_path: str, points: int = 100, out: Optional[str] = None) -> int:
        """
        Linear systems on box domains: numeric ψ_L against the closed form.
        Everything else: ζ_L(ψ_L(x)) against f(x) on the chart boundary.
        """
        plan = self._plan(config_path)
        system, domain = plan.system, plan.domain
        chart = ChartBoxDomain(system, plan.chart_half_width)
        starts, _ = chart.boundary_samples(points)
        starts = starts[:points]

        integrator = FlowIntegrator(system, plan.engine)
        rows = []
        if system.is_linear and isinstance(domain, BoxDomain):
            exact, exact_t, _, _ = linear_box_exit(starts, system.lambdas, domain.half_width)
            for x, p, t in zip(starts, exact, exact_t):
                numeric = integrator.deterministic_exit(x, domain)
                rows.append({
                    'point': x.tolist(),
                    'numeric_exit': numeric.exit_point.tolist(),
                    'closed_form_exit': p.tolist(),
                    'numeric_time': numeric.exit_time,
                    'closed_form_time': float(t),
                    'error': float(np.max(np.abs(numeric.exit_point - p))),
                })
        else:
            maps = PoincareMaps(system, domain, plan.chart_half_width, plan.engine, closed_form=False)
            for x in starts:
                image = maps.psi(x)
                back = maps.zeta(image.exit_point)
                q = system.conjugacy.forward(x)
                rows.append({
                    'point': x.tolist(),
                    'numeric_exit': image.exit_point.tolist(),
                    'round_trip': back.tolist(),
                    'chart_point': q.tolist(),
                    'numeric_time': image.exit_time,
                    'error': float(np.max(np.abs(back - q))),
                })

        frame = pd.DataFrame(rows)
        if out:
            Path(out).parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(out, index=False)
            logger.info(f"💾 Wrote {len(frame)} rows to {out}")
        else:
            self._emit(frame.to_csv(index=False))

        worst = float(frame['error'].max()) if len(frame) else 0.0
        tolerance = plan.engine.get('validation', {}).get('tolerance', 1e-8)
        if worst > tolerance:
            logger.warning(f"⚠️  Max flow error {worst:.3g} exceeds {tolerance:g}")
        else:
            logger.info(f"✅ Max flow error {worst:.3g} over {len(frame)} points")
        return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='rare-exit', description='Rare exit campaigns near a repelling equilibrium')
    parser.add_argument('--log-level', default=None, help='Log level (default: logging.level from config)')
    parser.add_argument('--log', help='Path to log file')
    commands = parser.add_subparsers(dest='command', required=True)

    predict = commands.add_parser('predict', help='Print predicted asymptotics as JSON')
    predict.add_argument('--config', required=True, help='Campaign TOML file')

    simulate = commands.add_parser('simulate', help='Run the ε ladder')
    simulate.add_argument('--config', required=True, help='Campaign TOML file')
    simulate.add_argument('--seed', type=int, default=None, help='Override the campaign seed')
    simulate.add_argument('--threads', type=int, default=None, help='Worker threads')
    simulate.add_argument('--out', default=None, help='Output directory')

    fit = commands.add_parser('fit', help='Re-fit from a summary and its sample files')
    fit.add_argument('--summary', required=True, help='summary_<hash>.json')

    report = commands.add_parser('report', help='Table and SVG plot from a summary')
    report.add_argument('--summary', required=True, help='summary_<hash>.json')
    report.add_argument('--out', default=None, help='Directory for the SVG (default: next to the summary)')

    flow = commands.add_parser('validate-flow', help='Check the deterministic exit maps')
    flow.add_argument('--config', required=True, help='Campaign TOML file')
    flow.add_argument('--points', type=int, default=100, help='Number of chart boundary points')
    flow.add_argument('--out', default=None, help='CSV file (default: stdout)')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)

    level = args.log_level or get_config().get('logging', {}).get('level', 'INFO')
    setup_logging(level, args.log)

    orchestrator = ExitOrchestrator()
    try:
        if args.command == 'predict':
            return orchestrator.cmd_predict(args.config)
        if args.command == 'simulate':
            return orchestrator.cmd_simulate(args.config, args.seed, args.threads, args.out)
        if args.command == 'fit':
            return orchestrator.cmd_fit(args.summary)
        if args.command == 'report':
            return orchestrator.cmd_report(args.summary, args.out)
        return orchestrator.cmd_validate_flow(args.config, args.points, args.out)
    except (RareExitError, OSError) as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return exit_code_for(e)


if __name__ == '__main__':
    sys.exit(main())
