"""
Tangent-space dynamics around the Z2 periodic orbit.

This module provides:
1. Analytic and finite-difference Jacobians of the general-L flow
2. One-period monodromy matrices, either as a direct time-ordered product or composed
   from the first eighth of the period using the orbit's reversal and quarter-shift symmetries
3. Lyapunov spectra, KS entropy and a Benettin-style brute-force cross-check
4. An L sweep that can fan out over worker processes

The drive is the first-harmonic orbit sampled at step midpoints, t_k = (k + 1/2) dt, so the
poles of the Jacobian at multiples of tau/4 are never evaluated.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from services import get_logger
from services.exceptions import EigFailure, IncommensurateStep, SingularCell, ValidationFailure
from services.semiclassics import (
    VANISHING_COEFFICIENT,
    ModelParams,
    Trajectory,
    UnitCellState,
    coefficient_gradient,
    coefficient_tables,
    first_harmonic_orbit,
    rk4_integrate,
    theta_velocity,
    z2_orbit_frequency,
)

logger = get_logger(__name__)

FINITE_DIFFERENCE_STEP = 1e-6
PAIRING_TOLERANCE = 1e-6

JacobianDrive = Callable[[float], np.ndarray]


@dataclass
class MonodromyMatrix:
    entries: np.ndarray
    period: float
    method: str = "direct"

    @property
    def L(self) -> int:
        return self.entries.shape[0]


@dataclass
class LyapunovSpectrum:
    """Exponents sorted in descending order, in units of Omega."""

    exponents: np.ndarray
    unit_cell: int
    z2_exponents: Optional[np.ndarray] = None

    @property
    def cells(self) -> int:
        """Number of two-site cells in the perturbation's unit cell."""
        return self.unit_cell // 2

    @property
    def pairing_residual(self) -> float:
        return float(abs(np.sum(self.exponents)))

    @property
    def lambda_max(self) -> float:
        return float(self.exponents[0])


def eom_jacobian(thetas, params: ModelParams, mode: str = "analytic",
                 rhs: Optional[Callable] = None) -> np.ndarray:
    """
    Jacobian F_ij = df_i/dtheta_j of the flow at one unit-cell point.

    Args:
        thetas: L angles
        params (ModelParams): Rabi frequency
        mode (str): 'analytic' or 'finite_difference' (central, step 1e-6 rad)
        rhs (Optional[Callable]): Vector field for finite differences, defaults to the TDVP flow

    Returns:
        np.ndarray: L x L real matrix

    Raises:
        SingularCell: If a cell coefficient vanishes at the point
        ValidationFailure: If mode is unknown
    """
    thetas = np.asarray(thetas, dtype=float)
    if mode == "finite_difference":
        field = rhs or theta_velocity
        L = thetas.size
        displaced = thetas[None, :] + FINITE_DIFFERENCE_STEP * np.eye(L)
        retreated = thetas[None, :] - FINITE_DIFFERENCE_STEP * np.eye(L)
        columns = (field(displaced, params) - field(retreated, params)) / (2.0 * FINITE_DIFFERENCE_STEP)
        return np.asarray(columns).T
    if mode != "analytic":
        raise ValidationFailure(f"Unknown Jacobian mode: {mode}")
    return _analytic_jacobian(thetas, params)


def _analytic_jacobian(thetas: np.ndarray, params: ModelParams) -> np.ndarray:
    L = thetas.size
    _, a, pi_product = coefficient_tables(thetas)
    if abs(1.0 - pi_product) < 1e-10 or np.any(a < VANISHING_COEFFICIENT):
        raise SingularCell("Jacobian undefined where a cell coefficient vanishes")
    gradient = coefficient_gradient(thetas)

    sin_t = np.sin(thetas)
    cos_t = np.cos(thetas)
    jacobian = np.zeros((L, L))
    for i in range(L):
        prev, nxt = (i - 1) % L, (i + 1) % L
        ratio = a[prev] / a[i]
        coupling = sin_t[prev] * cos_t[prev] * sin_t[i]
        ratio_gradient = gradient[prev] / a[i] - a[prev] * gradient[i] / a[i] ** 2

        row = coupling * ratio_gradient
        row[nxt] -= sin_t[nxt]
        row[prev] += ratio * np.cos(2.0 * thetas[prev]) * sin_t[i]
        row[i] += ratio * sin_t[prev] * cos_t[prev] * cos_t[i]
        jacobian[i] = row
    return -0.5 * params.omega * jacobian


def tile_pattern(theta1, theta2, L: int) -> np.ndarray:
    """Z2-symmetric cell: odd sites (1-based) at theta1, even sites at theta2."""
    return np.tile([theta1, theta2], L // 2).astype(float)


def z2_orbit_jacobian(t: float, L: int, omega_orbit: float, omega: float = 1.0) -> np.ndarray:
    """
    Jacobian along the first-harmonic orbit with the two-site pattern tiled over L sites.

    Args:
        t (float): Time along the orbit
        L (int): Even unit-cell size
        omega_orbit (float): Orbit angular frequency
        omega (float): Rabi frequency

    Returns:
        np.ndarray: L x L Jacobian
    """
    theta1, theta2 = first_harmonic_orbit(t, omega_orbit)
    return eom_jacobian(tile_pattern(theta1, theta2, L), ModelParams(omega=omega, L=L))


def trajectory_drive(trajectory: Trajectory, L: int, omega: float = 1.0) -> JacobianDrive:
    """
    Jacobian drive interpolated from an integrated L=2 orbit.

    Args:
        trajectory (Trajectory): Orbit with thetas of shape (n_times, 2)
        L (int): Unit-cell size of the tangent dynamics
        omega (float): Rabi frequency

    Returns:
        JacobianDrive: t -> L x L Jacobian
    """
    params = ModelParams(omega=omega, L=L)

    def drive(t: float) -> np.ndarray:
        theta1 = np.interp(t, trajectory.times, trajectory.thetas[:, 0])
        theta2 = np.interp(t, trajectory.times, trajectory.thetas[:, 1])
        return eom_jacobian(tile_pattern(theta1, theta2, L), params)

    return drive


def step_exponential(jacobian: np.ndarray, dt: float, method: str = "pade") -> np.ndarray:
    """
    exp(F dt) by scaling-and-squaring Pade or a sixth-order truncated series.

    Args:
        jacobian (np.ndarray): Square matrix F
        dt (float): Time step
        method (str): 'pade' or 'taylor6'

    Returns:
        np.ndarray: Matrix exponential
    """
    generator = np.asarray(jacobian) * dt
    if method == "pade":
        return scipy.linalg.expm(generator)
    if method == "taylor6":
        result = np.eye(generator.shape[0], dtype=generator.dtype)
        term = np.eye(generator.shape[0], dtype=generator.dtype)
        for order in range(1, 7):
            term = term @ generator / order
            result = result + term
        return result
    raise ValidationFailure(f"Unknown exponential method: {method}")


def ordered_product(drive: JacobianDrive, start: float, dt: float, n_steps: int,
                    method: str = "pade", inverse: bool = False) -> np.ndarray:
    """
    Time-ordered product of exp(F(t_k) dt) over midpoints t_k = start + (k + 1/2) dt.

    Args:
        drive (JacobianDrive): t -> Jacobian
        start (float): Start time
        dt (float): Step size
        n_steps (int): Number of factors
        method (str): Exponential kernel
        inverse (bool): Return the inverse product, built from exp(-F dt) in reverse order

    Returns:
        np.ndarray: Propagator with the earliest factor rightmost
    """
    product = None
    for k in range(n_steps):
        factor = step_exponential(drive(start + (k + 0.5) * dt), -dt if inverse else dt, method)
        if product is None:
            product = factor
        elif inverse:
            product = product @ factor
        else:
            product = factor @ product
    return product


def monodromy_from_drive(drive: JacobianDrive, period: float, n_steps: int,
                         method: str = "pade") -> MonodromyMatrix:
    """One-period propagator of an arbitrary Jacobian drive."""
    entries = ordered_product(drive, 0.0, period / n_steps, n_steps, method)
    return MonodromyMatrix(entries=entries, period=period, method="direct")


def monodromy_direct(L: int, omega_orbit: float, dt: float, omega: float = 1.0,
                     method: str = "pade", trajectory: Optional[Trajectory] = None) -> MonodromyMatrix:
    """
    Monodromy as the ordered product of step exponentials over a full period.

    Args:
        L (int): Even unit-cell size
        omega_orbit (float): Orbit angular frequency, tau = 2 pi / omega_orbit
        dt (float): Step size, rounded so that a whole number of steps fills tau
        omega (float): Rabi frequency
        method (str): Exponential kernel
        trajectory (Optional[Trajectory]): Integrated orbit to drive with instead of the first harmonic

    Returns:
        MonodromyMatrix: Real L x L propagator

    Raises:
        ValidationFailure: If dt exceeds tau/1000
    """
    period = 2.0 * np.pi / omega_orbit
    if dt > period / 1000.0 * (1.0 + 1e-12):
        raise ValidationFailure(f"Step {dt} is coarser than tau/1000 = {period / 1000.0}")
    n_steps = max(1, int(round(period / dt)))

    if trajectory is None:
        def drive(t: float) -> np.ndarray:
            return z2_orbit_jacobian(t, L, omega_orbit, omega)
    else:
        drive = trajectory_drive(trajectory, L, omega)

    logger.info(f"Direct monodromy for L={L}: {n_steps} steps over tau={period:.6f}")
    return monodromy_from_drive(drive, period, n_steps, method)


def shift_matrices(L: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Cyclic shift matrices S_x[m, n] = delta_{n, m+1} and S_y[m, n] = (-1)^m i delta_{n, m+1}, m 1-based.

    Args:
        L (int): Matrix size

    Returns:
        Tuple[np.ndarray, np.ndarray]: (S_x, S_y)
    """
    s_x = np.roll(np.eye(L), 1, axis=1)
    signs = (-1.0) ** np.arange(1, L + 1)
    s_y = 1j * signs[:, None] * s_x
    return s_x, s_y


def monodromy_symmetric(L: int, omega_orbit: float, dt: float, omega: float = 1.0,
                        method: str = "pade") -> MonodromyMatrix:
    """
    Monodromy composed from the first-eighth propagator Q.

    The second eighth is the reversed image S_x Q^{-1} S_x^{-1}, the second quarter is the
    S_y-conjugate of the first, and the second half repeats the first:
    T = [S_y V S_y^{-1} V]^2 with V = S_x Q^{-1} S_x^{-1} Q.

    Args:
        L (int): Even unit-cell size
        omega_orbit (float): Orbit angular frequency
        dt (float): Step size; N dt must equal tau/8
        omega (float): Rabi frequency
        method (str): Exponential kernel

    Returns:
        MonodromyMatrix: L x L propagator (complex dtype, real up to rounding)

    Raises:
        IncommensurateStep: If 8 N dt differs from tau by more than 1e-9
    """
    if L % 2:
        raise ValidationFailure(f"Unit cell size must be even, got {L}")
    period = 2.0 * np.pi / omega_orbit
    n_steps = int(round(period / (8.0 * dt)))
    if n_steps < 1 or abs(8 * n_steps * dt - period) > 1e-9:
        raise IncommensurateStep(f"8*N*dt = {8 * n_steps * dt!r} does not match tau = {period!r}")

    def drive(t: float) -> np.ndarray:
        return z2_orbit_jacobian(t, L, omega_orbit, omega)

    eighth = ordered_product(drive, 0.0, dt, n_steps, method)
    eighth_inverse = ordered_product(drive, 0.0, dt, n_steps, method, inverse=True)

    s_x, s_y = shift_matrices(L)
    quarter = s_x @ eighth_inverse @ s_x.T @ eighth
    half = s_y @ quarter @ np.linalg.inv(s_y) @ quarter
    logger.info(f"Symmetric monodromy for L={L}: {n_steps} steps per eighth")
    return MonodromyMatrix(entries=half @ half, period=period, method="symmetric")


def z2_sector_basis(L: int) -> np.ndarray:
    """
    Orthonormal basis of the perturbations repeating with two-site period.

    Args:
        L (int): Even unit-cell size

    Returns:
        np.ndarray: L x 2 matrix whose columns move every first and every second site together
    """
    basis = np.zeros((L, 2))
    basis[0::2, 0] = basis[1::2, 1] = 1.0 / np.sqrt(L // 2)
    return basis


def _exponents(entries: np.ndarray, period: float) -> np.ndarray:
    try:
        eigenvalues = scipy.linalg.eigvals(entries)
    except (np.linalg.LinAlgError, ValueError) as error:
        raise EigFailure(f"Eigen-solver did not converge: {error}") from error
    with np.errstate(divide="ignore"):
        return np.sort(np.log(np.abs(eigenvalues)) / period)[::-1]


def lyapunov_spectrum(T: MonodromyMatrix) -> LyapunovSpectrum:
    """
    Exponents (1/tau) log|chi_i| of the monodromy eigenvalues, sorted descending.

    The orbit repeats with two-site period, so the monodromy maps the two-site periodic
    perturbations onto themselves; their block gives the Z2-sector exponents.

    Args:
        T (MonodromyMatrix): One-period propagator

    Returns:
        LyapunovSpectrum: Exponents, Z2-sector exponents (even L) and the unit-cell size

    Raises:
        EigFailure: If the eigen-solver does not converge
    """
    sector = None
    if T.L % 2 == 0:
        basis = z2_sector_basis(T.L)
        sector = _exponents(basis.T @ T.entries @ basis, T.period)
    return LyapunovSpectrum(exponents=_exponents(T.entries, T.period), unit_cell=T.L, z2_exponents=sector)


def ks_entropy(spectrum: LyapunovSpectrum, tolerance: float = PAIRING_TOLERANCE) -> float:
    """Sum of the exponents exceeding the pairing tolerance."""
    exponents = np.asarray(spectrum.exponents)
    return float(np.sum(exponents[exponents > tolerance]))


def z2_ks_entropy(spectrum: LyapunovSpectrum, tolerance: float = PAIRING_TOLERANCE) -> float:
    """
    KS entropy of the Z2 sector, the perturbations that keep the two-site periodicity.

    Raises:
        ValidationFailure: If the spectrum carries no Z2-sector exponents
    """
    if spectrum.z2_exponents is None:
        raise ValidationFailure("Spectrum has no Z2-sector exponents")
    exponents = np.asarray(spectrum.z2_exponents)
    return float(np.sum(exponents[exponents > tolerance]))


def ks_summary(spectrum: LyapunovSpectrum) -> Dict:
    """
    Summary of one spectrum; h_ks is the Z2-sector entropy when the sector is known.

    h_ks_total sums every positive exponent of the L-site cell.
    """
    total = ks_entropy(spectrum)
    has_sector = spectrum.z2_exponents is not None
    return {
        'L': spectrum.unit_cell,
        'cells': spectrum.cells,
        'h_ks': z2_ks_entropy(spectrum) if has_sector else total,
        'h_ks_total': total,
        'sector': "z2" if has_sector else "all",
        'lambda_max': spectrum.lambda_max,
        'pairing_residual': spectrum.pairing_residual,
    }


def _sweep_point(arguments: Tuple) -> Tuple[LyapunovSpectrum, Dict]:
    L, omega_orbit, steps_per_eighth, omega, method = arguments
    dt = 2.0 * np.pi / omega_orbit / (8 * steps_per_eighth)
    spectrum = lyapunov_spectrum(monodromy_symmetric(L, omega_orbit, dt, omega, method))
    return spectrum, ks_summary(spectrum)


def lyapunov_sweep(Ls: Sequence[int], omega_orbit: float, steps_per_eighth: int = 250,
                   omega: float = 1.0, method: str = "pade",
                   workers: int = 1) -> List[Tuple[LyapunovSpectrum, Dict]]:
    """
    Spectra and KS summaries for several unit-cell sizes.

    Args:
        Ls (Sequence[int]): Even unit-cell sizes
        omega_orbit (float): Orbit angular frequency
        steps_per_eighth (int): Midpoint steps per eighth period
        omega (float): Rabi frequency
        method (str): Exponential kernel
        workers (int): Process count; 1 runs inline

    Returns:
        List[Tuple[LyapunovSpectrum, Dict]]: One entry per L, ordered as Ls
    """
    jobs = [(int(L), omega_orbit, steps_per_eighth, omega, method) for L in Ls]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_point, jobs))
    return [_sweep_point(job) for job in jobs]


def brute_force_max_exponent(state0: UnitCellState, eps: float, horizon: float,
                             params: Optional[ModelParams] = None, dt: float = 1e-2,
                             renormalize_every: Optional[float] = None, seed: int = 0,
                             rhs: Optional[Callable] = None, omega_orbit: Optional[float] = None) -> float:
    """
    Largest exponent from two nearby trajectories with periodic renormalization.

    Args:
        state0 (UnitCellState): Reference initial point
        eps (float): Initial separation, within [1e-9, 1e-3]
        horizon (float): Total integration time
        params (Optional[ModelParams]): Flow parameters, default Omega=1 and L from state0
        dt (float): RK4 step
        renormalize_every (Optional[float]): Interval between renormalizations, default tau/8
            of the Z2 orbit
        seed (int): Seed of the random initial direction
        rhs (Optional[Callable]): Alternative vector field
        omega_orbit (Optional[float]): Orbit frequency fixing tau, measured on the two-site
            orbit when omitted

    Returns:
        float: Mean log-stretch rate

    Raises:
        ValidationFailure: If eps, horizon or the renormalization interval is out of range
        SingularCell: If either trajectory hits the coordinate singularity
    """
    if not 1e-9 <= eps <= 1e-3:
        raise ValidationFailure(f"Separation must lie in [1e-9, 1e-3], got {eps}")
    if not horizon > 0:
        raise ValidationFailure(f"Horizon must be positive, got {horizon}")
    params = params or ModelParams(L=state0.L)
    field = rhs or theta_velocity
    if renormalize_every is None:
        omega_orbit = omega_orbit or z2_orbit_frequency(params.omega)
        renormalize_every = 2.0 * np.pi / omega_orbit / 8.0
    if not renormalize_every > 0:
        raise ValidationFailure(f"Renormalization interval must be positive, got {renormalize_every}")

    direction = np.random.default_rng(seed).standard_normal(state0.L)
    direction /= np.linalg.norm(direction)
    pair = np.stack([state0.thetas, state0.thetas + eps * direction])

    n_intervals = max(1, int(round(horizon / renormalize_every)))
    interval = horizon / n_intervals
    stretch = 0.0
    for _ in range(n_intervals):
        pair = rk4_integrate(field, pair, params, interval, dt).thetas[-1]
        separation = pair[1] - pair[0]
        distance = np.linalg.norm(separation)
        stretch += np.log(distance / eps)
        pair[1] = pair[0] + eps * separation / distance
        logger.debug(f"Renormalized separation {distance:.3e}")
    logger.info(f"Brute-force exponent {stretch / horizon:.4g} over {n_intervals} intervals of {interval:.4g}")
    return float(stretch / horizon)
