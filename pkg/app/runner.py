"""
Dispatch of validated configurations to the computational services.

Each command writes its artifacts into `<output_root>/<command>-<config hash>` and returns
a process exit status: 0 on success, 2 for validation failures, 3 for numerical failures.
"""

import json
import os
import sys
from typing import Callable, Dict, Optional

import numpy as np
from pydantic import ValidationError

from app.config import (
    LyapunovConfig,
    OrbitConfig,
    QuantumConfig,
    ReportConfig,
    RunConfig,
    TWAConfig,
    WignerConfig,
)
from services import get_logger
from services.analysis import report_from_artifacts
from services.artifacts import build_metadata, config_hash, write_csv, write_json
from services.exceptions import InsufficientPeaks, PXPScarsError, ValidationFailure
from services.lyapunov import lyapunov_sweep
from services.quantum import (
    ObservableSeries,
    build_basis,
    entanglement_entropy,
    evolve_stream,
    fit_decay_rate,
    loschmidt_echo,
    rydberg_density,
    z2_state,
)
from services.semiclassics import (
    ModelParams,
    find_orbit_period,
    harmonic_deviation,
    integrate,
    rydberg_proxy,
    z2_initial_state,
    z2_orbit_frequency,
)
from services.wigner import (
    normalization,
    peak_width,
    twa_observable_series,
    twa_sample,
    wigner_grid,
)

logger = get_logger(__name__)

FIT_KINDS = {'density': "exp_envelope", 'entropy': "linear", 'echo': "exp_envelope"}


def run_directory(command: str, config: RunConfig) -> str:
    return os.path.join(config.output_root, f"{command}-{config_hash(config.hashed_fields())}")


def time_grid(t_end: float, spacing: float) -> np.ndarray:
    """Output times 0, spacing, 2 spacing, ... up to t_end inclusive."""
    count = int(np.floor(t_end / spacing + 1e-9))
    return spacing * np.arange(count + 1)


def run_orbit(config: OrbitConfig, directory: str, metadata: Dict) -> None:
    params = ModelParams(omega=config.omega, L=config.L)
    trajectory = integrate(z2_initial_state(config.L, config.perturbation), params, config.t_end, config.dt)
    info = find_orbit_period(trajectory, config.return_fraction)
    deviation, shift = harmonic_deviation(trajectory, info.frequency)

    header = ['t'] + [f"theta_{i + 1}" for i in range(config.L)] + ['rydberg_1', 'rydberg_2']
    proxy = rydberg_proxy(trajectory.thetas[:, :2])
    rows = (
        [t] + list(thetas) + list(density)
        for t, thetas, density in zip(trajectory.times, trajectory.thetas, proxy)
    )
    write_csv(os.path.join(directory, "trajectory.csv"), header, rows, metadata)

    summary = info.to_dict()
    summary.update({'harmonic_max_deviation': deviation, 'harmonic_phase_shift': shift})
    write_json(os.path.join(directory, "orbit.json"), summary, metadata)


def run_lyapunov(config: LyapunovConfig, directory: str, metadata: Dict) -> None:
    omega_orbit = config.omega_orbit or z2_orbit_frequency(config.omega, config.orbit_dt, config.orbit_t_end)
    results = lyapunov_sweep(config.sweep(), omega_orbit, config.steps_per_eighth, config.omega,
                             config.method, config.workers)

    widest = max(spectrum.unit_cell for spectrum, _ in results)
    header = ['L', 'cells'] + [f"lambda_{i + 1}" for i in range(widest)]
    rows = []
    for spectrum, _ in results:
        padding = [''] * (widest - spectrum.unit_cell)
        rows.append([spectrum.unit_cell, spectrum.cells] + [float(x) for x in spectrum.exponents] + padding)
    write_csv(os.path.join(directory, "spectrum.csv"), header, rows, metadata)

    entries = [dict(summary, method="symmetric") for _, summary in results]
    headline = next(entry for entry in entries if entry['L'] == config.L)
    write_json(os.path.join(directory, "ks.json"),
               {'entries': entries, 'headline': headline, 'omega_orbit': omega_orbit}, metadata)


def run_wigner(config: WignerConfig, directory: str, metadata: Dict) -> None:
    constrained = wigner_grid(config.n1, config.n2, constrained=True, rydberg_site=config.rydberg_site)
    unconstrained = wigner_grid(config.n1, config.n2, constrained=False)
    metadata = dict(metadata)
    metadata['conventions'] = dict(metadata['conventions'], wigner_rescale=constrained.rescale)

    header = ['theta1', 'theta2', 'W']
    write_csv(os.path.join(directory, "wigner_constrained.csv"), header, constrained.rows(), metadata)
    write_csv(os.path.join(directory, "wigner_unconstrained.csv"), header, unconstrained.rows(), metadata)

    width = peak_width(constrained, config.core_fraction)
    wide = peak_width(unconstrained, config.core_fraction)
    summary = width.to_dict()
    summary.update({
        'normalization': normalization(constrained) / constrained.rescale,
        'rescale': constrained.rescale,
        'unconstrained_delta_theta0': wide.delta_theta0,
        'unconstrained_spread': wide.spread,
        'width_ratio': wide.delta_theta0 / width.delta_theta0,
    })
    write_json(os.path.join(directory, "width.json"), summary, metadata)


def run_twa(config: TWAConfig, directory: str, metadata: Dict) -> None:
    ensemble = twa_sample(config.seed, config.n_samples, config.rydberg_site)
    params = ModelParams(omega=config.omega, L=config.L)
    series = twa_observable_series(ensemble, params, time_grid(config.t_end, config.dt_out), config.dt)

    write_csv(os.path.join(directory, "samples.csv"), ['theta1', 'theta2', 'weight'],
              zip(ensemble.theta1, ensemble.theta2, ensemble.weight), metadata)
    write_csv(os.path.join(directory, "series.csv"), ['t', 'obs_mean', 'obs_stderr', 'n_alive'],
              zip(series.times, series.mean, series.stderr, series.n_alive), metadata)

    summary = {
        'n_samples': len(ensemble),
        'acceptance_rate': ensemble.acceptance_rate,
        'envelope': ensemble.envelope,
        'dropped': series.dropped,
        'envelope_rate': None,
    }
    try:
        finite = np.isfinite(series.mean)
        fit = fit_decay_rate(ObservableSeries(series.times[finite], series.mean[finite], "rydberg_density"))
        summary['envelope_rate'] = fit.to_dict()
    except InsufficientPeaks as error:
        summary['envelope_rate_reason'] = str(error)
    write_json(os.path.join(directory, "twa.json"), summary, metadata)


def run_quantum(config: QuantumConfig, directory: str, metadata: Dict) -> None:
    basis = build_basis(config.N, config.boundary, config.max_basis_dim)
    site = config.N // 2 if config.site is None else config.site
    cut = config.N // 2 if config.cut is None else config.cut
    times = time_grid(config.t_end, config.dt_out)

    initial = z2_state(basis)
    values = {kind: [] for kind in FIT_KINDS}
    for state in evolve_stream(basis, initial, times, config.dt, config.method, config.omega):
        values['density'].append(rydberg_density(basis, state, site))
        values['entropy'].append(entanglement_entropy(basis, state, cut))
        values['echo'].append(loschmidt_echo(state, initial))

    fits: Dict[str, Optional[Dict]] = {}
    reasons = {}
    series_kinds = {'density': "rydberg_density", 'entropy': "entropy", 'echo': "echo"}
    for kind, fit_kind in FIT_KINDS.items():
        write_csv(os.path.join(directory, f"{kind}.csv"), ['t', 'value'], zip(times, values[kind]), metadata)
        series = ObservableSeries(times=times, values=values[kind], kind=series_kinds[kind])
        try:
            fits[kind] = fit_decay_rate(series, fit_kind).to_dict()
        except InsufficientPeaks as error:
            fits[kind] = None
            reasons[kind] = str(error)
    if reasons:
        fits['reasons'] = reasons
    write_json(os.path.join(directory, "fits.json"), fits, metadata)

    write_json(os.path.join(directory, "run.json"), {
        'N': config.N,
        'boundary': config.boundary,
        'dim': basis.dim,
        'method': config.method,
        'dt': config.dt,
        'omega': config.omega,
        'boundary_term_convention': metadata['conventions']['boundary_terms'],
    }, metadata)


def run_report(config: ReportConfig, directory: str, metadata: Dict) -> None:
    report = report_from_artifacts(config.ks, config.width, config.fits, config.delta_theta0)
    write_json(os.path.join(directory, "report.json"), report.to_dict(), metadata)


COMMANDS: Dict[str, Callable[[RunConfig, str, Dict], None]] = {
    "orbit": run_orbit,
    "lyapunov": run_lyapunov,
    "wigner": run_wigner,
    "twa": run_twa,
    "quantum": run_quantum,
    "report": run_report,
}


def report_failure(error: Exception) -> int:
    """
    Log an error, write its JSON description to stderr and return the exit status.

    Args:
        error (Exception): A pipeline error or a pydantic ValidationError

    Returns:
        int: 2 for validation failures, 3 for numerical failures
    """
    if isinstance(error, PXPScarsError):
        document, status = error.details(), error.exit_code
    elif isinstance(error, ValidationError):
        document = {'error': "ValidationError", 'message': str(error),
                    'fields': [".".join(str(part) for part in item['loc']) for item in error.errors()]}
        status = ValidationFailure.exit_code
    else:
        raise error
    logger.error(f"{document['error']}: {document['message']}")
    sys.stderr.write(json.dumps(document, sort_keys=True) + "\n")
    return status


def run(command: str, config: RunConfig) -> int:
    """
    Execute one command and write its artifacts.

    Args:
        command (str): One of orbit, lyapunov, wigner, twa, quantum, report
        config (RunConfig): Validated configuration for the command

    Returns:
        int: Exit status
    """
    if command not in COMMANDS:
        return report_failure(ValidationFailure(f"Unknown command: {command}"))
    directory = run_directory(command, config)
    metadata = build_metadata(command, config.hashed_fields())
    logger.info(f"Running {command} into {directory}")
    try:
        COMMANDS[command](config, directory, metadata)
    except PXPScarsError as error:
        return report_failure(error)
    logger.info(f"Finished {command}")
    return 0
