"""
Semiclassical TDVP dynamics of the PXP chain on the bond-dimension-two manifold.

This module provides:
1. The unit-cell coefficients (Pi, a_m, A_m, Phi_m) of the variational Lagrangian
2. The equations of motion for L=2 in closed form and for general even L
3. A fixed-step RK4 integrator with a pluggable right-hand side
4. Poincare-return detection of the Z2 periodic orbit and its first harmonic

Angles are the full-angle flow variables of the ansatz: theta=0 is the ground state and
theta=pi/2 the Rydberg state of a site. The phases phi stay at 0 on the Z2 orbit.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from services import get_logger
from services.exceptions import NoReturnFound, SingularCell, ValidationFailure

logger = get_logger(__name__)

SINGULAR_PI_TOLERANCE = 1e-10
VANISHING_COEFFICIENT = 1e-16
LIMIT_SINE_TOLERANCE = 1e-4
TAN_LIMIT_TOLERANCE = 1e-8

RightHandSide = Callable[[np.ndarray, "ModelParams"], np.ndarray]


@dataclass(frozen=True)
class ModelParams:
    """Rabi frequency and unit-cell size of the variational flow."""

    omega: float = 1.0
    L: int = 2

    def __post_init__(self) -> None:
        if self.L < 2 or self.L % 2:
            raise ValidationFailure(f"Unit cell size must be even and >= 2, got {self.L}")
        if not self.omega > 0:
            raise ValidationFailure(f"Rabi frequency must be positive, got {self.omega}")


@dataclass
class UnitCellState:
    """Angles (theta_i, phi_i) of one unit cell, stored unwrapped."""

    thetas: np.ndarray
    phis: np.ndarray = None

    def __post_init__(self) -> None:
        self.thetas = np.asarray(self.thetas, dtype=float)
        if self.phis is None:
            self.phis = np.zeros_like(self.thetas)
        self.phis = np.asarray(self.phis, dtype=float)
        if self.thetas.shape != self.phis.shape:
            raise ValidationFailure("thetas and phis must have the same length")
        if not (np.all(np.isfinite(self.thetas)) and np.all(np.isfinite(self.phis))):
            raise ValidationFailure("Unit cell angles must be finite")

    @property
    def L(self) -> int:
        return self.thetas.shape[-1]


@dataclass
class CellCoefficients:
    pi_product: float
    a: np.ndarray
    A: np.ndarray
    phi_cap: np.ndarray


@dataclass
class Trajectory:
    """
    Time grid and theta history of an integrated flow.

    thetas has shape (n_times, ...batch, L); phases are identically zero.
    """

    times: np.ndarray
    thetas: np.ndarray

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.thetas = np.asarray(self.thetas, dtype=float)
        if len(self.times) != len(self.thetas):
            raise ValidationFailure("Trajectory times and states must have equal lengths")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValidationFailure("Trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def states(self) -> List[UnitCellState]:
        return [UnitCellState(thetas) for thetas in self.thetas]


@dataclass
class OrbitInfo:
    """
    Period of the angle-space orbit.

    The Rydberg-density proxy repeats after half the angle period, so the revival
    frequency seen in observables is twice `frequency`.
    """

    period: float
    frequency: float
    closure_error: float
    return_index: int = field(default=-1, repr=False)

    @property
    def revival_frequency(self) -> float:
        return 2.0 * self.frequency

    def to_dict(self) -> dict:
        return {
            'period': self.period,
            'frequency': self.frequency,
            'revival_frequency': self.revival_frequency,
            'closure_error': self.closure_error,
        }


def _shift_indices(L: int, offset: int) -> np.ndarray:
    return (np.arange(L) + offset) % L


def coefficient_tables(thetas: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Backward products and a_m coefficients for a batch of unit cells.

    Args:
        thetas (np.ndarray): Angles of shape (..., L) with L even

    Returns:
        Tuple[np.ndarray, np.ndarray, np.ndarray]: P of shape (..., L, L) with
            P[m, k] = prod_{l=1..k} sin^2(theta_{m-l}), the coefficients a of shape (..., L),
            and Pi = prod sin^2(theta) of shape (...)

    Note:
        a_m is summed in pairs, P[m,2j] * cos^2(theta_{m-2j-1}), so every term is
        non-negative and no cancellation occurs when sin^2 is close to 1.
    """
    thetas = np.asarray(thetas, dtype=float)
    L = thetas.shape[-1]
    s = np.sin(thetas) ** 2
    c = np.cos(thetas) ** 2

    lags = np.arange(1, L)
    backward = (np.arange(L)[:, None] - lags[None, :]) % L
    ones = np.ones(thetas.shape[:-1] + (L, 1))
    P = np.concatenate([ones, np.cumprod(s[..., backward], axis=-1)], axis=-1)

    pair_index = (np.arange(L)[:, None] - 2 * np.arange(L // 2)[None, :] - 1) % L
    a = np.sum(P[..., :, 0::2] * c[..., pair_index], axis=-1)
    return P, a, np.prod(s, axis=-1)


def coefficient_gradient(thetas: np.ndarray) -> np.ndarray:
    """
    Derivatives da_m/dtheta_j of the cell coefficients for a single unit cell.

    Args:
        thetas (np.ndarray): Angles of shape (L,)

    Returns:
        np.ndarray: Matrix D of shape (L, L) with D[m, j] = da_m/dtheta_j
    """
    thetas = np.asarray(thetas, dtype=float)
    L = thetas.shape[-1]
    P, _, _ = coefficient_tables(thetas)
    alternating = (-1.0) ** np.arange(L)
    B = np.cumsum(alternating * P, axis=-1)

    gradient = np.zeros((L, L))
    for m in range(L):
        for j in range(L):
            d = (m - j) % L
            if d == 0:
                continue
            gradient[m, j] = (-1.0) ** d * P[m, d - 1] * B[j, L - 1 - d]
    return gradient * np.sin(2.0 * thetas)[None, :]


def cell_coefficients(thetas) -> CellCoefficients:
    """
    Evaluate Pi, a_m, A_m and Phi_m for one unit cell.

    Args:
        thetas: L angles in radians, L even

    Returns:
        CellCoefficients: Coefficients satisfying A_m sin^2(theta_m) = 1 - A_{m+1}

    Raises:
        ValidationFailure: If L is odd
        SingularCell: If |1 - Pi| < 1e-10 (every site at |sin theta| = 1)
    """
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim != 1 or thetas.size < 2 or thetas.size % 2:
        raise ValidationFailure(f"Unit cell must hold an even number of angles, got {thetas.size}")
    _, a, pi_product = coefficient_tables(thetas)
    if abs(1.0 - pi_product) < SINGULAR_PI_TOLERANCE:
        raise SingularCell(f"Unit cell at the coordinate singularity, Pi={pi_product!r}")
    A = a / (1.0 - pi_product)
    return CellCoefficients(
        pi_product=float(pi_product),
        a=a,
        A=A,
        phi_cap=A * np.sin(thetas) ** 2,
    )


def _limit_ratio_term(x, y):
    """sin(x)cos^2(x)tan(y) with the flow limit where cos(y) vanishes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    cos_y = np.cos(y)
    degenerate = np.abs(cos_y) < TAN_LIMIT_TOLERANCE
    if np.any(degenerate & (np.abs(np.sin(x)) >= LIMIT_SINE_TOLERANCE)):
        raise SingularCell("tan(theta) diverges at a point off the Z2 orbit")
    safe_cos = np.where(degenerate, 1.0, cos_y)
    return np.where(degenerate, 0.0, np.sin(x) * np.cos(x) ** 2 * np.sin(y) / safe_cos)


def eom_rhs_l2(theta1, theta2, omega: float = 1.0) -> Tuple:
    """
    Closed-form L=2 equations of motion.

    Args:
        theta1: Angle of the first site (scalar or array)
        theta2: Angle of the second site (scalar or array)
        omega (float): Rabi frequency

    Returns:
        Tuple: (dtheta1/dt, dtheta2/dt)

    Raises:
        SingularCell: If tan diverges while the accompanying sine does not vanish
    """
    dtheta1 = -0.5 * omega * (_limit_ratio_term(theta1, theta2) + np.cos(theta2))
    dtheta2 = -0.5 * omega * (_limit_ratio_term(theta2, theta1) + np.cos(theta1))
    if np.ndim(dtheta1) == 0:
        return float(dtheta1), float(dtheta2)
    return dtheta1, dtheta2


def theta_velocity(thetas: np.ndarray, params: ModelParams, strict: bool = True) -> np.ndarray:
    """
    General-L equations of motion for a batch of unit cells.

    Args:
        thetas (np.ndarray): Angles of shape (..., L)
        params (ModelParams): Rabi frequency (L is read from the input shape)
        strict (bool): Raise SingularCell on singular rows; otherwise return NaN rows

    Returns:
        np.ndarray: dtheta/dt with the same shape as thetas

    Raises:
        SingularCell: In strict mode, if any row is singular
    """
    thetas = np.asarray(thetas, dtype=float)
    L = thetas.shape[-1]
    _, a, pi_product = coefficient_tables(thetas)

    previous = _shift_indices(L, -1)
    following = _shift_indices(L, 1)
    sin_t = np.sin(thetas)
    cos_t = np.cos(thetas)

    vanishing = a < VANISHING_COEFFICIENT
    coupling = sin_t[..., previous] * cos_t[..., previous] * sin_t
    safe_a = np.where(vanishing, 1.0, a)
    term = np.where(vanishing, 0.0, a[..., previous] / safe_a * coupling)

    bad = np.any(vanishing & (np.abs(sin_t) >= LIMIT_SINE_TOLERANCE), axis=-1)
    bad |= np.abs(1.0 - pi_product) < SINGULAR_PI_TOLERANCE
    velocity = -0.5 * params.omega * (cos_t[..., following] + term)

    if np.any(bad):
        if strict:
            raise SingularCell(f"Flow reached a singular unit cell ({int(np.sum(bad))} rows)")
        velocity = np.where(bad[..., None], np.nan, velocity)
    return velocity


def eom_rhs_general(state: UnitCellState, params: ModelParams) -> np.ndarray:
    """
    General even-L equations of motion for one unit cell.

    dtheta_i/dt = -(Omega/2)[cos theta_{i+1} + (A_{i-1}/A_i) sin theta_{i-1} cos theta_{i-1} sin theta_i],
    indices cyclic; the phases do not move on the Z2-class orbit.

    Args:
        state (UnitCellState): Unit-cell angles
        params (ModelParams): Rabi frequency and cell size

    Returns:
        np.ndarray: L theta derivatives

    Raises:
        SingularCell: If the cell is singular
    """
    if state.L != params.L:
        raise ValidationFailure(f"State has {state.L} sites but params expect L={params.L}")
    return theta_velocity(state.thetas, params)


def mass_matrix_inverse(thetas) -> np.ndarray:
    """
    Inverse of M_ij = dPhi_i/dtheta_j for one unit cell.

    Args:
        thetas: L angles with sin(theta) cos(theta) nonzero on every site

    Returns:
        np.ndarray: L x L matrix with diagonal 1/(2 A_i sin cos) and cyclic sub-diagonal tan(theta_i)/(2 A_i)
    """
    thetas = np.asarray(thetas, dtype=float)
    coefficients = cell_coefficients(thetas)
    L = thetas.size
    inverse = np.diag(1.0 / (2.0 * coefficients.A * np.sin(thetas) * np.cos(thetas)))
    inverse[np.arange(L), _shift_indices(L, -1)] += 0.5 * np.tan(thetas) / coefficients.A
    return inverse


def eom_rhs_mass_matrix(state: UnitCellState, params: ModelParams) -> np.ndarray:
    """Equations of motion assembled as M^{-1} u from the Lagrangian."""
    thetas = state.thetas
    coefficients = cell_coefficients(thetas)
    forcing = -params.omega * coefficients.A * np.sin(thetas) * np.cos(thetas) * np.cos(np.roll(thetas, -1))
    return mass_matrix_inverse(thetas) @ forcing


def thetas_from_phi_cap(phi_cap) -> np.ndarray:
    """
    Recover the angles from Phi_m = A_m sin^2(theta_m).

    Args:
        phi_cap: L values of Phi

    Returns:
        np.ndarray: Angles in [0, pi/2]
    """
    phi_cap = np.asarray(phi_cap, dtype=float)
    ratio = phi_cap / (1.0 - np.roll(phi_cap, 1))
    return np.arcsin(np.sqrt(np.clip(ratio, 0.0, 1.0)))


def variational_energy(state: UnitCellState, params: ModelParams) -> float:
    """Leading-order energy per site, Omega * sum_m A_m sin cos cos_{m+1} sin(phi_m) / L."""
    thetas = state.thetas
    coefficients = cell_coefficients(thetas)
    terms = coefficients.A * np.sin(thetas) * np.cos(thetas) * np.cos(np.roll(thetas, -1)) * np.sin(state.phis)
    return float(params.omega * np.sum(terms) / state.L)


def rydberg_proxy(thetas) -> np.ndarray:
    """Per-site Rydberg occupation sin^2(theta) of the product-like ansatz."""
    return np.sin(np.asarray(thetas, dtype=float)) ** 2


def z2_initial_state(L: int = 2, perturbation: float = 0.0) -> UnitCellState:
    """
    The Z2 corner |g r g r ...> tiled over an L-site cell.

    Args:
        L (int): Even unit-cell size
        perturbation (float): Amount subtracted from the Rydberg-site angle

    Returns:
        UnitCellState: thetas (0, pi/2 - perturbation) repeated, phases zero
    """
    ModelParams(L=L)
    return UnitCellState(np.tile([0.0, 0.5 * np.pi - perturbation], L // 2))


def _pair_velocity(x: float, y: float, omega: float) -> Tuple[float, float]:
    """Scalar two-site flow with the same limits and singular checks as theta_velocity."""
    sx, cx = math.sin(x), math.cos(x)
    sy, cy = math.sin(y), math.cos(y)
    if abs(1.0 - sx * sx * sy * sy) < SINGULAR_PI_TOLERANCE:
        raise SingularCell(f"Flow reached a singular unit cell at ({x!r}, {y!r})")
    ax, ay = cy * cy, cx * cx
    if ax < VANISHING_COEFFICIENT:
        if abs(sx) >= LIMIT_SINE_TOLERANCE:
            raise SingularCell(f"Flow reached a singular unit cell at ({x!r}, {y!r})")
        term_x = 0.0
    else:
        term_x = ay / ax * sy * cy * sx
    if ay < VANISHING_COEFFICIENT:
        if abs(sy) >= LIMIT_SINE_TOLERANCE:
            raise SingularCell(f"Flow reached a singular unit cell at ({x!r}, {y!r})")
        term_y = 0.0
    else:
        term_y = ax / ay * sx * cx * sy
    return -0.5 * omega * (cy + term_x), -0.5 * omega * (cx + term_y)


def _pair_rk4(thetas0: np.ndarray, omega: float, times: np.ndarray) -> np.ndarray:
    """RK4 of a single two-site cell on plain floats."""
    x, y = float(thetas0[0]), float(thetas0[1])
    xs, ys = [x], [y]
    for h in np.diff(times).tolist():
        k1x, k1y = _pair_velocity(x, y, omega)
        k2x, k2y = _pair_velocity(x + 0.5 * h * k1x, y + 0.5 * h * k1y, omega)
        k3x, k3y = _pair_velocity(x + 0.5 * h * k2x, y + 0.5 * h * k2y, omega)
        k4x, k4y = _pair_velocity(x + h * k3x, y + h * k3y, omega)
        x += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        y += (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        xs.append(x)
        ys.append(y)
    return np.column_stack([xs, ys])


def rk4_step(rhs: RightHandSide, thetas: np.ndarray, params: ModelParams, h: float) -> np.ndarray:
    k1 = rhs(thetas, params)
    k2 = rhs(thetas + 0.5 * h * k1, params)
    k3 = rhs(thetas + 0.5 * h * k2, params)
    k4 = rhs(thetas + h * k3, params)
    return thetas + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_integrate(rhs: RightHandSide, thetas0: np.ndarray, params: ModelParams,
                  t_end: float, dt: float) -> Trajectory:
    """
    Fixed-step classical RK4 over [0, t_end]; the last step is shortened to land on t_end.

    Args:
        rhs (RightHandSide): Callable (thetas, params) -> derivatives, batch-aware
        thetas0 (np.ndarray): Initial angles, shape (..., L)
        params (ModelParams): Passed through to rhs
        t_end (float): Final time (>= 0)
        dt (float): Step size (> 0)

    Returns:
        Trajectory: Samples at every step, including t=0
    """
    if not dt > 0:
        raise ValidationFailure(f"Step size must be positive, got {dt}")
    if t_end < 0:
        raise ValidationFailure(f"Final time must be non-negative, got {t_end}")

    n_steps = int(np.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    times = np.minimum(np.arange(n_steps + 1) * dt, t_end)
    times[0] = 0.0

    if rhs is theta_velocity and np.shape(thetas0) == (2,):
        return Trajectory(times, _pair_rk4(np.asarray(thetas0, dtype=float), params.omega, times))

    history = np.empty((n_steps + 1,) + np.shape(thetas0))
    history[0] = thetas0
    thetas = np.array(thetas0, dtype=float)
    for step in range(1, n_steps + 1):
        thetas = rk4_step(rhs, thetas, params, times[step] - times[step - 1])
        history[step] = thetas
    return Trajectory(times, history)


def integrate(state0: UnitCellState, params: ModelParams, t_end: float, dt: float,
              rhs: Optional[RightHandSide] = None) -> Trajectory:
    """
    Integrate the TDVP flow from one unit-cell state.

    Args:
        state0 (UnitCellState): Initial angles
        params (ModelParams): Rabi frequency and cell size
        t_end (float): Final time
        dt (float): Fixed RK4 step
        rhs (Optional[RightHandSide]): Alternative vector field, defaults to the general-L flow,
            which runs on plain floats when the cell has two sites

    Returns:
        Trajectory: thetas of shape (n_times, L)

    Raises:
        SingularCell: If the flow hits the coordinate singularity
    """
    if state0.L != params.L:
        raise ValidationFailure(f"State has {state0.L} sites but params expect L={params.L}")
    trajectory = rk4_integrate(rhs or theta_velocity, state0.thetas, params, t_end, dt)
    logger.debug(f"Integrated {len(trajectory) - 1} RK4 steps of size {dt} for L={params.L}")
    return trajectory


def _wrapped(delta: np.ndarray) -> np.ndarray:
    return np.angle(np.exp(1j * delta))


def torus_distance(thetas: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Euclidean distance with each angle difference wrapped into (-pi, pi]."""
    return np.linalg.norm(_wrapped(np.asarray(thetas) - np.asarray(reference)), axis=-1)


def find_orbit_period(traj: Trajectory, return_fraction: float = 0.05) -> OrbitInfo:
    """
    Period of a closed orbit from its first Poincare return to the initial point.

    Args:
        traj (Trajectory): Single-cell trajectory, thetas of shape (n_times, L)
        return_fraction (float): A return must come closer than this fraction of the
            largest excursion

    Returns:
        OrbitInfo: Return time refined by a parabola through the three samples around the
            closest approach, with the matching closure error

    Raises:
        NoReturnFound: If the trajectory never leaves its start or never comes back
    """
    distance = torus_distance(traj.thetas, traj.thetas[0])
    excursion = float(np.max(distance)) if len(distance) else 0.0
    if excursion < 1e-12:
        raise NoReturnFound("Trajectory never leaves its initial point")

    threshold = return_fraction * excursion
    departed = np.flatnonzero(distance > 0.5 * excursion)
    start = int(departed[0])

    for index in range(start + 1, len(distance) - 1):
        if distance[index] >= threshold:
            continue
        if distance[index] <= distance[index - 1] and distance[index] <= distance[index + 1]:
            window = slice(index - 1, index + 2)
            curvature, slope, offset = np.polyfit(traj.times[window], distance[window] ** 2, 2)
            if curvature > 0:
                period = -slope / (2.0 * curvature)
                closure = np.sqrt(max(offset - slope ** 2 / (4.0 * curvature), 0.0))
            else:
                period = traj.times[index]
                closure = distance[index]
            info = OrbitInfo(period=float(period), frequency=float(2.0 * np.pi / period),
                             closure_error=float(closure), return_index=index)
            logger.info(f"Orbit period {info.period:.6f} (frequency {info.frequency:.6f}), "
                        f"closure error {info.closure_error:.2e}")
            return info

    raise NoReturnFound(f"No return within {threshold:.3g} rad of the initial point "
                        f"before t={traj.times[-1]:.6g}")


def z2_orbit_frequency(omega: float = 1.0, dt: float = 1e-3, t_end: float = 40.0) -> float:
    """Angular frequency of the integrated two-site Z2 orbit."""
    trajectory = integrate(z2_initial_state(2), ModelParams(omega=omega, L=2), t_end, dt)
    return find_orbit_period(trajectory).frequency


def first_harmonic_orbit(t, omega_orbit: float) -> Tuple:
    """
    First-harmonic approximation of the Z2 orbit.

    Args:
        t: Time (scalar or array)
        omega_orbit (float): Angular frequency of the angle-space orbit

    Returns:
        Tuple: (theta1, theta2) = (-(pi/2)(1 - cos wt), (pi/2)(1 - sin wt))
    """
    phase = omega_orbit * np.asarray(t, dtype=float)
    theta1 = -0.5 * np.pi * (1.0 - np.cos(phase))
    theta2 = 0.5 * np.pi * (1.0 - np.sin(phase))
    if np.ndim(theta1) == 0:
        return float(theta1), float(theta2)
    return theta1, theta2


def harmonic_deviation(traj: Trajectory, omega_orbit: float,
                       shifts: Optional[np.ndarray] = None) -> Tuple[float, float]:
    """
    Largest distance between one period of an L=2 orbit and the shifted first harmonic.

    Args:
        traj (Trajectory): Integrated orbit with thetas of shape (n_times, 2)
        omega_orbit (float): Orbit frequency from find_orbit_period
        shifts (Optional[np.ndarray]): Candidate time shifts, default 81 values in [-tau/8, tau/8]

    Returns:
        Tuple[float, float]: (smallest maximum deviation, the shift achieving it)
    """
    period = 2.0 * np.pi / omega_orbit
    if shifts is None:
        shifts = np.linspace(-period / 8.0, period / 8.0, 81)
    within = traj.times <= period
    times = traj.times[within]
    thetas = traj.thetas[within][:, :2]

    best = (np.inf, 0.0)
    for shift in shifts:
        harmonic = np.stack(first_harmonic_orbit(times + shift, omega_orbit), axis=-1)
        deviation = float(np.max(torus_distance(thetas, harmonic)))
        if deviation < best[0]:
            best = (deviation, float(shift))
    return best
