"""
Goodness of Fit for Conditional Exit Laws

Compares conditioned exit locations with the predicted limit law.
Handles:
- Kolmogorov-Smirnov per in-manifold coordinate (asymptotic distribution)
- Binomial test of the face split against χ⁺ : χ⁻
- Medians of the transverse coordinates
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.stats import binomtest, kstest

from src.utils.errors import UnderpoweredError

logger = logging.getLogger(__name__)


@dataclass
class GoFReport:
    n: int
    alpha: float
    ks: List[Dict] = field(default_factory=list)
    face: Optional[Dict] = None
    transverse: List[Dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        checks = [entry['passed'] for entry in self.ks]
        if self.face is not None:
            checks.append(self.face['passed'])
        return all(checks)

    def to_dict(self) -> Dict:
        return {
            'n': self.n,
            'alpha': self.alpha,
            'passed': self.passed,
            'ks': self.ks,
            'face': self.face,
            'transverse': self.transverse,
        }


def test_conditional_law(samples, law, alpha: float = 0.01, min_samples: int = 200) -> GoFReport:
    """
    Test conditioned exit points (rows, in the law's coordinates) against the law.

    Raises:
        UnderpoweredError: fewer than min_samples samples
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n = len(samples)
    if n < min_samples:
        raise UnderpoweredError(f"{n} conditioned samples, need at least {min_samples}")

    report = GoFReport(n=n, alpha=alpha)
    i = law.index

    for j in range(i - 1):
        statistic, pvalue = kstest(samples[:, j], lambda x, j=j: law.marginal_cdf(j, x), method='asymp')
        report.ks.append({
            'coordinate': j + 1,
            'statistic': float(statistic),
            'pvalue': float(pvalue),
            'passed': bool(pvalue >= alpha),
        })

    if len(law.signs) == 2:
        k_plus = int(np.count_nonzero(samples[:, i - 1] > 0))
        expected = law.face_weight(1)
        pvalue = float(binomtest(k_plus, n, expected).pvalue)
        report.face = {
            'k_plus': k_plus,
            'n': n,
            'expected': expected,
            'observed': k_plus / n,
            'pvalue': pvalue,
            'passed': bool(pvalue >= alpha),
        }

    for j in range(i, samples.shape[1]):
        report.transverse.append({
            'coordinate': j + 1,
            'median_abs': float(np.median(np.abs(samples[:, j]))),
        })

    logger.debug(f"GoF on {n} samples: {'pass' if report.passed else 'fail'}")
    return report


# not a pytest test
test_conditional_law.__test__ = False
