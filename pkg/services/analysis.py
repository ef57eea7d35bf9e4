"""
Semiclassical escape estimate and the comparison with exact quantum decay rates.

The escape time is the time for an initial uncertainty delta_theta0 to grow to order one at
rate h_KS; its inverse is the escape rate. The report compares the fastest fitted quantum
decay rate against that estimate.
"""

import os
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from services import get_logger
from services.artifacts import read_json
from services.exceptions import DomainError, MissingInput

logger = get_logger(__name__)

QUANTUM_KINDS = ("density", "entropy", "echo")
PASS_RATIO = 5.0


def _check_domain(rate: float, delta_theta0: float, name: str = "h_ks") -> None:
    if not np.isfinite(rate) or rate <= 0:
        raise DomainError(f"{name} must be positive, got {rate}")
    if not 0 < delta_theta0 < 1:
        raise DomainError(f"delta_theta0 must lie in (0, 1), got {delta_theta0}")


def escape_time(h_ks: float, delta_theta0: float) -> float:
    """
    t* = ln(1/delta_theta0) / h_ks.

    Args:
        h_ks (float): Kolmogorov-Sinai entropy per unit time, > 0
        delta_theta0 (float): Initial angular uncertainty in (0, 1)

    Returns:
        float: Escape time

    Raises:
        DomainError: If an argument is outside its domain
    """
    _check_domain(h_ks, delta_theta0)
    return float(np.log(1.0 / delta_theta0) / h_ks)


def escape_rate(h_ks: float, delta_theta0: float) -> float:
    """Lambda = h_ks / ln(1/delta_theta0), the reciprocal of escape_time."""
    _check_domain(h_ks, delta_theta0)
    return float(h_ks / np.log(1.0 / delta_theta0))


def lambda_max_rate(lambda_max: float, delta_theta0: float) -> float:
    """Escape rate driven by the single largest exponent instead of the exponent sum."""
    _check_domain(lambda_max, delta_theta0, name="lambda_max")
    return float(lambda_max / np.log(1.0 / delta_theta0))


@dataclass
class EscapeReport:
    h_ks: float
    delta_theta0: float
    escape_time: float
    escape_rate: float
    quantum_rates: Dict[str, Dict[str, float]]
    ratio: float
    lambda_max_sensitivity: Optional[float] = None
    delta_theta0_source: str = field(default="width")

    @property
    def passed(self) -> bool:
        return self.ratio >= PASS_RATIO

    def to_dict(self) -> Dict:
        return {
            'h_ks': self.h_ks,
            'delta_theta0': self.delta_theta0,
            'delta_theta0_source': self.delta_theta0_source,
            't_star': self.escape_time,
            'lambda': self.escape_rate,
            'lambda_max_sensitivity': self.lambda_max_sensitivity,
            'rates': {kind: dict(rate) for kind, rate in self.quantum_rates.items()},
            'ratio': self.ratio,
            'pass': self.passed,
        }


def build_report(h_ks: Optional[float], delta_theta0: Optional[float],
                 quantum_rates: Optional[Dict[str, Optional[Dict[str, float]]]],
                 lambda_max: Optional[float] = None, delta_theta0_source: str = "width") -> EscapeReport:
    """
    Assemble the escape-rate comparison.

    Args:
        h_ks (Optional[float]): KS entropy of the orbit
        delta_theta0 (Optional[float]): Wigner peak width
        quantum_rates: {'density', 'entropy', 'echo'} -> {'value', 'stderr'}
        lambda_max (Optional[float]): Largest Lyapunov exponent for the sensitivity line
        delta_theta0_source (str): Where delta_theta0 came from ('width' or 'override')

    Returns:
        EscapeReport: Rates, ratio and pass flag

    Raises:
        MissingInput: Listing every absent piece
        DomainError: If h_ks or delta_theta0 is out of range
    """
    quantum_rates = quantum_rates or {}
    missing = []
    if h_ks is None:
        missing.append("h_ks")
    if delta_theta0 is None:
        missing.append("delta_theta0")
    missing.extend(kind for kind in QUANTUM_KINDS if quantum_rates.get(kind) is None)
    if missing:
        raise MissingInput(missing)

    rate = escape_rate(h_ks, delta_theta0)
    fastest = max(float(quantum_rates[kind]['value']) for kind in QUANTUM_KINDS)
    sensitivity = None
    if lambda_max is not None and lambda_max > 0:
        sensitivity = lambda_max_rate(lambda_max, delta_theta0)

    report = EscapeReport(
        h_ks=float(h_ks),
        delta_theta0=float(delta_theta0),
        escape_time=escape_time(h_ks, delta_theta0),
        escape_rate=rate,
        quantum_rates={kind: {'value': float(quantum_rates[kind]['value']),
                              'stderr': float(quantum_rates[kind].get('stderr', 0.0))}
                       for kind in QUANTUM_KINDS},
        ratio=fastest / rate,
        lambda_max_sensitivity=sensitivity,
        delta_theta0_source=delta_theta0_source,
    )
    logger.info(f"Escape rate {rate:.4g}, fastest quantum rate {fastest:.4g}, ratio {report.ratio:.3g}")
    return report


def report_from_artifacts(ks_path: Optional[str], width_path: Optional[str], fits_path: Optional[str],
                          delta_theta0: Optional[float] = None) -> EscapeReport:
    """
    Load lyapunov, wigner and quantum outputs and build the report.

    Args:
        ks_path (Optional[str]): ks.json from the lyapunov command
        width_path (Optional[str]): width.json from the wigner command
        fits_path (Optional[str]): fits.json from the quantum command
        delta_theta0 (Optional[float]): Explicit width overriding width.json

    Returns:
        EscapeReport: The assembled report

    Raises:
        MissingInput: If a file is absent or lacks the needed entries
    """
    missing = []
    h_ks = lambda_max = None
    width = delta_theta0
    rates: Dict = {}

    if ks_path and os.path.isfile(ks_path):
        headline = read_json(ks_path).get('headline') or {}
        h_ks = headline.get('h_ks')
        lambda_max = headline.get('lambda_max')
    else:
        missing.append("ks")

    if delta_theta0 is None:
        if width_path and os.path.isfile(width_path):
            width = read_json(width_path).get('delta_theta0')
        else:
            missing.append("width")

    if fits_path and os.path.isfile(fits_path):
        fits = read_json(fits_path)
        rates = {kind: fits.get(kind) for kind in QUANTUM_KINDS}
        missing.extend(kind for kind in QUANTUM_KINDS if rates[kind] is None)
    else:
        missing.append("fits")

    if missing:
        raise MissingInput(missing)
    return build_report(h_ks, width, rates, lambda_max=lambda_max,
                        delta_theta0_source="override" if delta_theta0 is not None else "width")
