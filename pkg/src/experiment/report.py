"""
Campaign Report

Renders a stored summary as a text table and a log-log SVG plot of hit
fractions against ε with the fitted and predicted power laws.
"""

import logging
from pathlib import Path
from typing import Any, Dict

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ['target', 'epsilon', 'trials', 'hits', 'fraction', 'ci_low', 'ci_high', 'status']


def cells_frame(summary: Dict[str, Any]) -> pd.DataFrame:
    frame = pd.DataFrame(summary.get('cells', []))
    if frame.empty:
        return pd.DataFrame(columns=TABLE_COLUMNS)
    return frame[TABLE_COLUMNS].sort_values(['target', 'epsilon'], ascending=[True, False])


def fits_frame(summary: Dict[str, Any]) -> pd.DataFrame:
    rows = []
    for name, fit in summary.get('fits', {}).items():
        prediction = summary.get('predictions', {}).get(name, {})
        rows.append({
            'target': name,
            'index': prediction.get('index'),
            'rho_predicted': prediction.get('rho'),
            'rho_fitted': fit.get('slope'),
            'rho_se': fit.get('slope_se'),
            'mu_predicted': prediction.get('mu'),
            'mu_fitted': fit.get('constant'),
            'status': fit.get('status'),
        })
    return pd.DataFrame(rows)


def render_table(summary: Dict[str, Any]) -> str:
    """Plain-text report: header, per-cell counts, then per-target fits."""
    lines = [f"Campaign: {summary.get('name', '?')}  (config {summary.get('config_hash', '')[:12]})"]
    cells = cells_frame(summary)
    if cells.empty:
        lines.append("no cells")
        return "\n".join(lines)

    lines.append("")
    lines.append(cells.to_string(index=False, float_format=lambda v: f"{v:.6g}"))
    fits = fits_frame(summary)
    if not fits.empty:
        lines.append("")
        lines.append(fits.to_string(index=False, float_format=lambda v: f"{v:.4g}", na_rep='-'))

    for name, gof in summary.get('gof', {}).items():
        if gof.get('status') == 'ok':
            verdict = 'pass' if gof.get('passed') else 'FAIL'
            lines.append(f"conditional law '{name}': {verdict} (n={gof.get('n')}, ε={gof.get('epsilon'):g})")
        else:
            lines.append(f"conditional law '{name}': {gof.get('status')} ({gof.get('reason')})")
    return "\n".join(lines)


def render_svg(summary: Dict[str, Any], path) -> Path:
    """Log-log plot of k/n with Wilson bars, fitted line and predicted μ ε^ρ."""
    path = Path(path)
    cells = cells_frame(summary)
    # a fixed salt keeps the SVG element ids stable across runs
    with plt.rc_context({'svg.hashsalt': summary.get('config_hash') or 'rare-exit'}):
        fig = _plot(summary, cells)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format='svg', bbox_inches='tight', metadata={'Date': None})
    plt.close(fig)
    logger.info(f"💾 Wrote plot to {path}")
    return path


def _plot(summary: Dict[str, Any], cells: pd.DataFrame):
    fig, ax = plt.subplots(figsize=(7, 5))

    for k, (name, group) in enumerate(cells.groupby('target', sort=True)):
        color = f"C{k % 10}"
        group = group[group['hits'] > 0]
        if group.empty:
            continue
        eps = group['epsilon'].to_numpy(dtype=float)
        frac = group['fraction'].to_numpy(dtype=float)
        err = np.vstack([frac - group['ci_low'].to_numpy(dtype=float),
                         group['ci_high'].to_numpy(dtype=float) - frac])
        ax.errorbar(eps, frac, yerr=err, fmt='o', color=color, capsize=3, label=f"{name} observed")

        grid = np.geomspace(eps.min(), eps.max(), 50)
        fit = summary.get('fits', {}).get(name, {})
        if fit.get('status') == 'ok':
            ax.plot(grid, fit['constant'] * grid ** fit['slope'], '-', color=color,
                    label=f"{name} fit ρ={fit['slope']:.3f}")
        prediction = summary.get('predictions', {}).get(name, {})
        if prediction.get('mu'):
            ax.plot(grid, prediction['mu'] * grid ** prediction['rho'], '--', color=color,
                    label=f"{name} predicted ρ={prediction['rho']:.3f}")

    ax.set_xscale('log')
    ax.set_yscale('log')
    ax.set_xlabel('ε')
    ax.set_ylabel('P(exit in target)')
    ax.set_title(summary.get('name', 'campaign'))
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=8)
    ax.grid(True, which='both', alpha=0.3)

    return fig
