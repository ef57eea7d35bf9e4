"""
Computational services for the PXP scars pipeline.

Modules:
- semiclassics: TDVP equations of motion, RK4 integration and the Z2 periodic orbit
- lyapunov: tangent Jacobians, monodromy matrices, Lyapunov spectrum and KS entropy
- wigner: constrained Wigner function, peak width and truncated-Wigner ensembles
- quantum: exact dynamics in the blockade-constrained Hilbert space
- analysis: escape time, escape rate and the headline report
- artifacts: CSV/JSON writers with metadata headers
"""

import logging
import os

__version__ = "0.1.0"

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def get_logger(name: str) -> logging.Logger:
    """
    Return a module logger with the package stream handler attached once.

    Args:
        name (str): Logger name, normally the calling module's __name__

    Returns:
        logging.Logger: Logger writing to stderr with the package format
    """
    logger = logging.getLogger(name)
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
        logger.setLevel(os.getenv("PXPSCARS_LOG_LEVEL", "INFO").upper())
        logger.propagate = False
    return logger


def set_log_level(level: str) -> None:
    """Apply a level to every logger created through get_logger."""
    for name in list(logging.root.manager.loggerDict):
        if name == 'services' or name.startswith('services.') or name.startswith('app'):
            logging.getLogger(name).setLevel(level.upper())
