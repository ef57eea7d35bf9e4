"""
Exact quantum dynamics of the PXP chain in the Rydberg-blockade subspace.

Site i of an N-site chain is stored in bit N-1-i of a configuration, so numeric order of
the bit patterns is the lexicographic order of the g/r strings. Site indices are 0-based;
the Z2 state |g r g r ...> has its excitations on the odd sites.

This module provides:
1. Enumeration of the constrained basis for open or periodic chains
2. The sparse PXP Hamiltonian and its action on state vectors
3. Krylov (Arnoldi) and RK4 propagation
4. Rydberg density, half-chain entanglement entropy and Loschmidt echo
5. Amplitudes of the bond-dimension-two MPS in the constrained basis
6. Envelope and linear fits of observable time series
"""

import os
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks

from services import get_logger
from services.exceptions import (
    ConvergenceFailure,
    DimensionMismatch,
    InsufficientPeaks,
    SVDFailure,
    TooLarge,
    ValidationFailure,
)

logger = get_logger(__name__)

DEFAULT_MAX_DIM = 2_000_000
KRYLOV_DIMENSION = 20
KRYLOV_TOLERANCE = 1e-10
HAPPY_BREAKDOWN = 1e-14
MIN_KRYLOV_STEP = 1e-8
BOUNDARIES = ("open", "periodic")
SERIES_KINDS = ("rydberg_density", "entropy", "echo")


@dataclass
class ConstrainedBasis:
    """Sorted blockade-respecting configurations of an N-site chain."""

    n_sites: int
    boundary: str
    configs: np.ndarray
    hamiltonians: Dict[float, scipy.sparse.csr_matrix] = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return self.configs.size

    @property
    def dim(self) -> int:
        return self.configs.size

    def index(self, patterns) -> np.ndarray:
        """
        Positions of configurations in the basis.

        Args:
            patterns: Bit pattern(s)

        Returns:
            np.ndarray: Positions, -1 where a pattern is not in the basis
        """
        patterns = np.atleast_1d(np.asarray(patterns, dtype=np.int64))
        positions = np.searchsorted(self.configs, patterns)
        clipped = np.minimum(positions, self.configs.size - 1)
        return np.where(self.configs[clipped] == patterns, clipped, -1)

    def occupation(self, site: int) -> np.ndarray:
        """0/1 occupation of one site for every configuration."""
        return (self.configs >> (self.n_sites - 1 - site)) & 1


@dataclass
class ObservableSeries:
    times: np.ndarray
    values: np.ndarray
    kind: str

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValidationFailure("Series times and values must have equal lengths")
        if self.kind not in SERIES_KINDS:
            raise ValidationFailure(f"Unknown series kind: {self.kind}")


@dataclass
class DecayFit:
    rate: float
    stderr: float
    kind: str
    n_points: int

    def to_dict(self) -> Dict:
        return {'value': self.rate, 'stderr': self.stderr}


def basis_size(N: int, boundary: str = "open") -> int:
    """Fibonacci count F(N+2) for open chains, Lucas number L(N) for periodic ones."""
    previous, current = 1, 2
    for _ in range(N - 1):
        previous, current = current, previous + current
    if boundary == "periodic":
        # configurations with both end sites excited: F(N-2) of them for N >= 3
        a, b = 1, 1
        for _ in range(max(N - 4, 0)):
            a, b = b, a + b
        return current - (b if N >= 3 else 0)
    return current


def _open_configs(n: int) -> np.ndarray:
    if n <= 0:
        return np.zeros(1, dtype=np.int64)
    shorter, current = np.zeros(1, dtype=np.int64), np.array([0, 1], dtype=np.int64)
    for bits in range(2, n + 1):
        lead = np.int64(0b10) << (bits - 2)
        shorter, current = current, np.concatenate([current, lead | shorter])
    return current


def build_basis(N: int, boundary: str = "open", max_dim: Optional[int] = None) -> ConstrainedBasis:
    """
    Enumerate the blockade-constrained configurations.

    Args:
        N (int): Number of sites, 2 <= N <= 32
        boundary (str): 'open' or 'periodic'
        max_dim (Optional[int]): Cap on the basis size, default PXPSCARS_MAX_BASIS_DIM or 2,000,000

    Returns:
        ConstrainedBasis: Sorted configurations

    Raises:
        ValidationFailure: If N or boundary is invalid
        TooLarge: If the basis would exceed max_dim
    """
    if not 2 <= N <= 32:
        raise ValidationFailure(f"Chain length must lie in [2, 32], got {N}")
    if boundary not in BOUNDARIES:
        raise ValidationFailure(f"Unknown boundary: {boundary}")
    if max_dim is None:
        max_dim = int(os.getenv("PXPSCARS_MAX_BASIS_DIM", DEFAULT_MAX_DIM))

    expected = basis_size(N, boundary)
    if expected > max_dim:
        raise TooLarge(f"Basis for N={N} ({boundary}) has {expected} states, above the cap {max_dim}")

    configs = _open_configs(N)
    if boundary == "periodic" and N > 2:
        both_ends = (configs >> (N - 1)) & configs & 1
        configs = configs[both_ends == 0]
    logger.info(f"Built {boundary} basis for N={N}: dimension {configs.size}")
    return ConstrainedBasis(n_sites=N, boundary=boundary, configs=configs)


class PXPHamiltonian:
    """
    Sparse PXP Hamiltonian (Omega/2) sum_i P_{i-1} X_i P_{i+1} on a constrained basis.

    End sites of an open chain carry a single projector on their only neighbour.
    """

    def __init__(self, basis: ConstrainedBasis, omega: float = 1.0) -> None:
        self.basis = basis
        self.omega = omega
        self.matrix = self._assemble()

    def _assemble(self) -> scipy.sparse.csr_matrix:
        basis = self.basis
        N = basis.n_sites
        configs = basis.configs
        rows, cols = [], []
        for site in range(N):
            free = np.ones(configs.size, dtype=bool)
            for neighbour in (site - 1, site + 1):
                if basis.boundary == "open" and not 0 <= neighbour < N:
                    continue
                free &= basis.occupation(neighbour % N) == 0
            sources = np.flatnonzero(free)
            targets = basis.index(configs[sources] ^ (np.int64(1) << (N - 1 - site)))
            rows.append(targets)
            cols.append(sources)
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        data = np.full(rows.size, 0.5 * self.omega)
        return scipy.sparse.csr_matrix((data, (rows, cols)), shape=(basis.dim, basis.dim))

    def apply(self, state: np.ndarray) -> np.ndarray:
        state = np.asarray(state)
        if state.shape[0] != self.basis.dim:
            raise DimensionMismatch(f"State has length {state.shape[0]}, basis has {self.basis.dim}")
        return self.matrix @ state

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()


def hamiltonian_matrix(basis: ConstrainedBasis, omega: float = 1.0) -> scipy.sparse.csr_matrix:
    """Sparse H for a basis, assembled once per Rabi frequency and kept on the basis."""
    matrix = basis.hamiltonians.get(omega)
    if matrix is None:
        matrix = basis.hamiltonians[omega] = PXPHamiltonian(basis, omega).matrix
    return matrix


def hamiltonian_apply(basis: ConstrainedBasis, state, omega: float = 1.0) -> np.ndarray:
    """
    H|state> in the constrained basis.

    Args:
        basis (ConstrainedBasis): Basis
        state: Amplitudes of length basis.dim
        omega (float): Rabi frequency

    Returns:
        np.ndarray: New amplitudes

    Raises:
        DimensionMismatch: If the state length differs from the basis size
    """
    state = np.asarray(state)
    if state.ndim != 1 or state.size != basis.dim:
        raise DimensionMismatch(f"State has length {state.size}, basis has {basis.dim}")
    return hamiltonian_matrix(basis, omega) @ state


def state_from_config(basis: ConstrainedBasis, pattern: int) -> np.ndarray:
    position = int(basis.index(pattern)[0])
    if position < 0:
        raise ValidationFailure(f"Configuration {pattern:b} violates the blockade")
    state = np.zeros(basis.dim, dtype=complex)
    state[position] = 1.0
    return state


def z2_pattern(N: int) -> int:
    """Bit pattern of |g r g r ...> (excitations on odd sites)."""
    return sum(1 << (N - 1 - site) for site in range(1, N, 2))


def z2_state(basis: ConstrainedBasis) -> np.ndarray:
    return state_from_config(basis, z2_pattern(basis.n_sites))


def energy(basis: ConstrainedBasis, state, omega: float = 1.0) -> float:
    state = np.asarray(state)
    return float(np.real(np.vdot(state, hamiltonian_apply(basis, state, omega))))


def krylov_step(matrix, state: np.ndarray, h: float, dimension: int = KRYLOV_DIMENSION) -> Tuple[np.ndarray, float]:
    """
    exp(-i H h)|state> from an Arnoldi subspace.

    Args:
        matrix: Sparse Hermitian H
        state (np.ndarray): Current amplitudes
        h (float): Time step
        dimension (int): Largest subspace size

    Returns:
        Tuple[np.ndarray, float]: (propagated state, a posteriori error estimate)
    """
    beta = np.linalg.norm(state)
    if beta == 0:
        return np.zeros_like(state), 0.0
    m_max = min(dimension, state.size)
    vectors = np.zeros((state.size, m_max + 1), dtype=complex)
    hessenberg = np.zeros((m_max + 1, m_max), dtype=complex)
    vectors[:, 0] = state / beta

    m = m_max
    for j in range(m_max):
        w = matrix @ vectors[:, j]
        for i in range(j + 1):
            hessenberg[i, j] = np.vdot(vectors[:, i], w)
            w = w - hessenberg[i, j] * vectors[:, i]
        hessenberg[j + 1, j] = np.linalg.norm(w)
        if abs(hessenberg[j + 1, j]) < HAPPY_BREAKDOWN:
            m = j + 1
            break
        vectors[:, j + 1] = w / hessenberg[j + 1, j]

    small = scipy.linalg.expm(-1j * h * hessenberg[:m, :m])
    propagated = beta * vectors[:, :m] @ small[:, 0]
    if m < m_max:
        return propagated, 0.0
    residual = beta * abs(hessenberg[m, m - 1]) * abs(small[m - 1, 0])
    return propagated, float(residual)


def _rk4_quantum_step(matrix, state: np.ndarray, h: float) -> np.ndarray:
    def derivative(vector):
        return -1j * (matrix @ vector)

    k1 = derivative(state)
    k2 = derivative(state + 0.5 * h * k1)
    k3 = derivative(state + 0.5 * h * k2)
    k4 = derivative(state + h * k3)
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def evolve(basis: ConstrainedBasis, state0, t_grid, dt: float = 0.1, method: str = "krylov",
           omega: float = 1.0, tolerance: float = KRYLOV_TOLERANCE) -> List[np.ndarray]:
    """
    Propagate a state through a grid of output times.

    Args:
        basis (ConstrainedBasis): Basis
        state0: Normalized initial amplitudes
        t_grid: Non-decreasing output times starting at or after 0
        dt (float): Largest step; Krylov steps are further capped at 0.1/Omega
        method (str): 'krylov' or 'rk4'
        omega (float): Rabi frequency
        tolerance (float): Krylov local error tolerance

    Returns:
        List[np.ndarray]: One state per output time

    Raises:
        DimensionMismatch: If state0 does not match the basis
        ConvergenceFailure: If a Krylov step cannot meet the tolerance
    """
    return list(evolve_stream(basis, state0, t_grid, dt, method, omega, tolerance))


def evolve_stream(basis: ConstrainedBasis, state0, t_grid, dt: float = 0.1, method: str = "krylov",
                  omega: float = 1.0, tolerance: float = KRYLOV_TOLERANCE) -> Iterator[np.ndarray]:
    """Like evolve, but yields each output state without keeping earlier ones."""
    state = np.asarray(state0, dtype=complex)
    if state.ndim != 1 or state.size != basis.dim:
        raise DimensionMismatch(f"State has length {state.size}, basis has {basis.dim}")
    if method not in ("krylov", "rk4"):
        raise ValidationFailure(f"Unknown propagation method: {method}")
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size and (t_grid[0] < 0 or np.any(np.diff(t_grid) < 0)):
        raise ValidationFailure("t_grid must be non-negative and non-decreasing")

    return _propagate(basis, state, t_grid, dt, method, omega, tolerance)


def _propagate(basis: ConstrainedBasis, state: np.ndarray, t_grid: np.ndarray, dt: float, method: str,
               omega: float, tolerance: float) -> Iterator[np.ndarray]:
    matrix = hamiltonian_matrix(basis, omega)
    max_step = min(dt, 0.1 / omega) if method == "krylov" else dt
    t = 0.0
    for target in t_grid:
        while t < target - 1e-12:
            h = min(max_step, target - t)
            if method == "rk4":
                state = _rk4_quantum_step(matrix, state, h)
            else:
                state, h = _adaptive_krylov(matrix, state, h, tolerance)
            t += h
        yield state.copy()
    logger.info(f"Evolved N={basis.n_sites} ({basis.dim} states) to t={t:.4g} with {method}")


def _adaptive_krylov(matrix, state: np.ndarray, h: float, tolerance: float) -> Tuple[np.ndarray, float]:
    while True:
        propagated, residual = krylov_step(matrix, state, h)
        if residual < tolerance:
            return propagated, h
        logger.debug(f"Krylov residual {residual:.2e} at step {h:.3e}, halving")
        h *= 0.5
        if h < MIN_KRYLOV_STEP:
            raise ConvergenceFailure(f"Krylov step fell below {MIN_KRYLOV_STEP} with residual {residual:.3e}",
                                     step=h, residual=residual)


def rydberg_density(basis: ConstrainedBasis, state, site: int) -> float:
    """
    Probability that a site is in the Rydberg state.

    Args:
        basis (ConstrainedBasis): Basis
        state: Amplitudes
        site (int): 0-based site index

    Returns:
        float: Sum of |amp|^2 over configurations with the site excited
    """
    if not 0 <= site < basis.n_sites:
        raise ValidationFailure(f"Site must lie in [0, {basis.n_sites}), got {site}")
    probabilities = np.abs(np.asarray(state)) ** 2
    return float(np.sum(probabilities[basis.occupation(site) == 1]))


def entanglement_entropy(basis: ConstrainedBasis, state, cut: int) -> float:
    """
    Von Neumann entropy (nats) of the sites left of a bond.

    Args:
        basis (ConstrainedBasis): Basis
        state: Amplitudes
        cut (int): Number of sites in the left block, 1 <= cut <= N-1

    Returns:
        float: -sum p ln p over squared Schmidt values

    Raises:
        SVDFailure: If the singular value decomposition does not converge
    """
    N = basis.n_sites
    if not 1 <= cut <= N - 1:
        raise ValidationFailure(f"Cut must lie in [1, {N - 1}], got {cut}")
    left = basis.configs >> (N - cut)
    right = basis.configs & ((np.int64(1) << (N - cut)) - 1)
    left_values, left_index = np.unique(left, return_inverse=True)
    right_values, right_index = np.unique(right, return_inverse=True)

    # pairs that would break the blockade across the cut never occur in the basis, so they stay zero
    amplitudes = np.zeros((left_values.size, right_values.size), dtype=complex)
    amplitudes[left_index, right_index] = np.asarray(state)
    try:
        singular_values = scipy.linalg.svd(amplitudes, compute_uv=False)
    except (np.linalg.LinAlgError, ValueError) as error:
        raise SVDFailure(f"SVD of the {amplitudes.shape} amplitude matrix failed: {error}") from error

    weights = singular_values ** 2
    weights = weights[weights > 1e-15]
    return float(max(-np.sum(weights * np.log(weights)), 0.0))


def loschmidt_echo(state_t, state_0) -> float:
    """|<psi(0)|psi(t)>|, clipped to [0, 1]."""
    state_t = np.asarray(state_t)
    state_0 = np.asarray(state_0)
    if state_t.shape != state_0.shape:
        raise DimensionMismatch(f"States have lengths {state_t.size} and {state_0.size}")
    return float(min(abs(np.vdot(state_0, state_t)), 1.0))


def mps_state_vector(thetas, phis, basis: ConstrainedBasis) -> np.ndarray:
    """
    Amplitudes of the bond-dimension-two MPS on every constrained configuration.

    A^g = [[cos theta, 0], [1, 0]] and A^r = [[0, i e^{i phi} sin theta], [0, 0]];
    open chains contract with v_L = (1, 0) and v_R = (1, 1), periodic chains take the trace.

    Args:
        thetas: N angles (the unit cell tiled by the caller)
        phis: N phases
        basis (ConstrainedBasis): Basis

    Returns:
        np.ndarray: Normalized amplitudes
    """
    thetas = np.asarray(thetas, dtype=float)
    phis = np.asarray(phis, dtype=float)
    N = basis.n_sites
    if thetas.size != N or phis.size != N:
        raise DimensionMismatch(f"Need {N} angles and phases, got {thetas.size} and {phis.size}")

    def contract(start: Tuple[complex, complex]) -> Tuple[np.ndarray, np.ndarray]:
        first = np.full(basis.dim, start[0], dtype=complex)
        second = np.full(basis.dim, start[1], dtype=complex)
        for site in range(N):
            excited = basis.occupation(site) == 1
            ground_first = first * np.cos(thetas[site]) + second
            rydberg_second = first * 1j * np.exp(1j * phis[site]) * np.sin(thetas[site])
            first = np.where(excited, 0.0, ground_first)
            second = np.where(excited, rydberg_second, 0.0)
        return first, second

    if basis.boundary == "open":
        first, second = contract((1.0, 0.0))
        amplitudes = first + second
    else:
        amplitudes = contract((1.0, 0.0))[0] + contract((0.0, 1.0))[1]

    norm = np.linalg.norm(amplitudes)
    if norm == 0:
        logger.warning("MPS has zero weight on the constrained basis")
        return amplitudes
    return amplitudes / norm


def mps_overlap_series(basis: ConstrainedBasis, cell_thetas: np.ndarray, states: Sequence[np.ndarray]) -> np.ndarray:
    """
    |<psi_MPS(theta(t))|psi(t)>| along a trajectory.

    Args:
        basis (ConstrainedBasis): Basis
        cell_thetas (np.ndarray): Unit-cell angles per time, shape (n_times, L)
        states (Sequence[np.ndarray]): Exact states at the same times

    Returns:
        np.ndarray: Overlaps
    """
    N = basis.n_sites
    overlaps = []
    for thetas, state in zip(cell_thetas, states):
        tiled = np.resize(thetas, N)
        overlaps.append(abs(np.vdot(mps_state_vector(tiled, np.zeros(N), basis), state)))
    return np.array(overlaps)


def observable_series(basis: ConstrainedBasis, states: Sequence[np.ndarray], times, kind: str,
                      site: Optional[int] = None, cut: Optional[int] = None) -> ObservableSeries:
    """
    Evaluate one observable along a list of states.

    Args:
        basis (ConstrainedBasis): Basis
        states (Sequence[np.ndarray]): States at the output times
        times: Output times
        kind (str): 'rydberg_density', 'entropy' or 'echo'
        site (Optional[int]): Site for the density, default N/2
        cut (Optional[int]): Bond for the entropy, default N/2

    Returns:
        ObservableSeries: Values per time
    """
    N = basis.n_sites
    if kind == "rydberg_density":
        site = N // 2 if site is None else site
        values = [rydberg_density(basis, state, site) for state in states]
    elif kind == "entropy":
        cut = N // 2 if cut is None else cut
        values = [entanglement_entropy(basis, state, cut) for state in states]
    elif kind == "echo":
        values = [loschmidt_echo(state, states[0]) for state in states]
    else:
        raise ValidationFailure(f"Unknown series kind: {kind}")
    return ObservableSeries(times=times, values=values, kind=kind)


def dominant_period(times: np.ndarray, values: np.ndarray) -> float:
    """Period of the strongest non-zero Fourier component of a uniformly sampled series."""
    spacing = float(np.mean(np.diff(times)))
    spectrum = np.abs(np.fft.rfft(values - np.mean(values)))
    frequencies = np.fft.rfftfreq(values.size, d=spacing)
    peak = int(np.argmax(spectrum[1:])) + 1
    return float(1.0 / frequencies[peak])


def fit_decay_rate(series: ObservableSeries, kind: str = "exp_envelope",
                   revival_period: Optional[float] = None, min_peaks: int = 5) -> DecayFit:
    """
    Decay rate of a time series.

    exp_envelope subtracts a running mean over one revival period and fits log(excess) against
    time over the maxima of the excess that lie above its median absolute value and at least
    half a period apart.
    linear fits the raw series by least squares.

    Args:
        series (ObservableSeries): Uniformly sampled series
        kind (str): 'exp_envelope' or 'linear'
        revival_period (Optional[float]): Expected revival period, estimated by FFT if omitted
        min_peaks (int): Fewest peaks accepted for an envelope fit

    Returns:
        DecayFit: |slope| and its standard error

    Raises:
        InsufficientPeaks: If fewer than min_peaks maxima are found
    """
    times, values = series.times, series.values
    if kind == "linear":
        (slope, _), covariance = np.polyfit(times, values, 1, cov=True)
        return DecayFit(rate=float(abs(slope)), stderr=float(np.sqrt(max(covariance[0, 0], 0.0))),
                        kind=kind, n_points=int(times.size))
    if kind != "exp_envelope":
        raise ValidationFailure(f"Unknown fit kind: {kind}")

    spacing = float(np.mean(np.diff(times)))
    period = revival_period or dominant_period(times, values)
    baseline = uniform_filter1d(values, size=max(1, int(round(period / spacing))))
    excess = values - baseline
    distance = max(1, int(0.5 * period / spacing))
    peaks, _ = find_peaks(excess, height=np.median(np.abs(excess)), distance=distance)
    peaks = peaks[excess[peaks] > 0]
    if peaks.size < min_peaks:
        raise InsufficientPeaks(f"Found {peaks.size} peaks in the {series.kind} series, need {min_peaks}")

    (slope, _), covariance = np.polyfit(times[peaks], np.log(excess[peaks]), 1, cov=True)
    fit = DecayFit(rate=float(abs(slope)), stderr=float(np.sqrt(max(covariance[0, 0], 0.0))),
                   kind=kind, n_points=int(peaks.size))
    logger.info(f"{series.kind} envelope rate {fit.rate:.4g} +/- {fit.stderr:.2g} from {fit.n_points} peaks")
    return fit
