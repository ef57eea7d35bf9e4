"""
Wigner functions of the Z2 state and truncated-Wigner ensembles.

The Wigner functions use half-angle variables: theta=0 is |g> and theta=pi is |r> on a
site, so the Z2 state |g r> sits at (theta1, theta2) = (0, pi). The flow of
services.semiclassics uses full angles, theta_flow = theta_wigner / 2.

This module provides:
1. The gauge map (theta) <-> (vartheta), its Jacobian and the kernel K
2. The unconstrained and constrained Wigner functions and their quadrature grids
3. The peak width delta_theta0 of the constrained distribution
4. Rejection sampling of signed-weight initial conditions and their evolved observables
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from services import get_logger
from services.exceptions import EnvelopeTooSmall, SingularPoint, ValidationFailure
from services.semiclassics import ModelParams, rk4_integrate, theta_velocity

logger = get_logger(__name__)

SQRT3 = np.sqrt(3.0)
BOUNDARY_TOLERANCE = 1e-12
NORMALIZATION_TOLERANCE = 1e-6
# Share of the |W| sin sin mass that defines the neighbourhood of the peak
CORE_FRACTION = 1e-3
MIN_CORE_NODES = 10


@dataclass
class WignerGrid:
    """Wigner values on graded Gauss-Legendre nodes in (0, pi) x (0, pi)."""

    theta1: np.ndarray
    theta2: np.ndarray
    weights1: np.ndarray
    weights2: np.ndarray
    values: np.ndarray
    constrained: bool = True
    rydberg_site: int = 2
    rescale: float = 1.0

    @property
    def n1(self) -> int:
        return self.theta1.size

    @property
    def n2(self) -> int:
        return self.theta2.size

    def rows(self) -> List[Tuple[float, float, float]]:
        """Flattened (theta1, theta2, W) rows for export."""
        t1, t2 = np.meshgrid(self.theta1, self.theta2, indexing="ij")
        return list(zip(t1.ravel().tolist(), t2.ravel().tolist(), self.values.ravel().tolist()))


@dataclass
class PeakWidth:
    delta_theta0: float
    spread: float
    hwhm: float
    peak: Tuple[float, float]
    core_fraction: float = CORE_FRACTION
    core_nodes: int = 0

    def to_dict(self) -> dict:
        return {'delta_theta0': self.delta_theta0, 'spread': self.spread, 'hwhm': self.hwhm,
                'peak': list(self.peak), 'core_fraction': self.core_fraction, 'core_nodes': self.core_nodes}


@dataclass
class TWASample:
    theta1: float
    theta2: float
    weight: int
    density: float


@dataclass
class TWAEnsemble:
    """Signed-weight initial conditions in Wigner (half-angle) variables."""

    theta1: np.ndarray
    theta2: np.ndarray
    weight: np.ndarray
    density: np.ndarray
    seed: int = 0
    envelope: float = field(default=0.0)
    proposals: int = field(default=0)

    def __len__(self) -> int:
        return self.theta1.size

    def as_samples(self) -> List[TWASample]:
        return [TWASample(float(a), float(b), int(w), float(d))
                for a, b, w, d in zip(self.theta1, self.theta2, self.weight, self.density)]

    @property
    def acceptance_rate(self) -> float:
        return len(self) / self.proposals if self.proposals else 0.0


@dataclass
class TWASeries:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_alive: np.ndarray

    @property
    def dropped(self) -> int:
        return int(self.n_alive[0] - self.n_alive[-1]) if len(self.n_alive) else 0


def _unpack(p) -> Tuple[np.ndarray, np.ndarray]:
    theta1, theta2 = p
    return np.asarray(theta1, dtype=float), np.asarray(theta2, dtype=float)


def _pack(theta1: np.ndarray, theta2: np.ndarray) -> Tuple:
    if np.ndim(theta1) == 0:
        return float(theta1), float(theta2)
    return theta1, theta2


def _vartheta(theta1: np.ndarray, theta2: np.ndarray) -> np.ndarray:
    """2 atan[tan(theta1/2) / cos(theta2/2)] written without the tangent."""
    return 2.0 * np.arctan2(np.sin(0.5 * theta1), np.cos(0.5 * theta1) * np.cos(0.5 * theta2))


def theta_to_vartheta(p) -> Tuple:
    """
    Map MPS angles (theta1, theta2) to the unconstrained-chart angles (vartheta1, vartheta2).

    Args:
        p: (theta1, theta2), scalars or arrays in [0, pi]

    Returns:
        Tuple: (vartheta1, vartheta2) in [0, pi]

    Raises:
        SingularPoint: At theta2 = pi with theta1 != 0, or theta1 = pi with theta2 != 0
    """
    theta1, theta2 = _unpack(p)
    seam1 = (np.abs(np.cos(0.5 * theta2)) < BOUNDARY_TOLERANCE) & (theta1 > BOUNDARY_TOLERANCE)
    seam2 = (np.abs(np.cos(0.5 * theta1)) < BOUNDARY_TOLERANCE) & (theta2 > BOUNDARY_TOLERANCE)
    if np.any(seam1 | seam2):
        raise SingularPoint("Gauge map is singular where one angle reaches pi and the other does not vanish")
    return _pack(_vartheta(theta1, theta2), _vartheta(theta2, theta1))


def vartheta_to_theta(p) -> Tuple:
    """
    Inverse gauge map from (vartheta1, vartheta2) back to (theta1, theta2).

    Args:
        p: (vartheta1, vartheta2) in [0, pi)

    Returns:
        Tuple: (theta1, theta2)

    Raises:
        SingularPoint: If either angle reaches pi
    """
    vartheta1, vartheta2 = _unpack(p)
    if np.any(np.abs(np.cos(0.5 * vartheta1)) < BOUNDARY_TOLERANCE) or \
            np.any(np.abs(np.cos(0.5 * vartheta2)) < BOUNDARY_TOLERANCE):
        raise SingularPoint("Inverse gauge map is singular at vartheta = pi")
    tan1 = np.tan(0.5 * vartheta1) ** 2
    tan2 = np.tan(0.5 * vartheta2) ** 2
    return _pack(_inverse_half(tan1, tan2), _inverse_half(tan2, tan1))


def _inverse_half(tan_own: np.ndarray, tan_other: np.ndarray) -> np.ndarray:
    """theta from cos^2(theta/2) = 2 / [x + sqrt(4 T_other + x^2)], x = 1 + T_own - T_other."""
    x = 1.0 + tan_own - tan_other
    root = np.sqrt(4.0 * tan_other + x ** 2)
    # x + root cancels for large negative x; use the conjugate form there
    denominator = np.where(x >= 0, x + root, 4.0 * tan_other / np.where(x >= 0, 1.0, root - x))
    cos_half = np.sqrt(np.clip(2.0 / denominator, 0.0, 1.0))
    return 2.0 * np.arccos(cos_half)


def jacobian(p) -> np.ndarray:
    """Jacobian of the gauge map, J(theta1, theta2)."""
    theta1, theta2 = _unpack(p)
    s1, s2 = np.sin(0.5 * theta1) ** 2, np.sin(0.5 * theta2) ** 2
    c1, c2 = np.cos(0.5 * theta1), np.cos(0.5 * theta2)
    numerator = 1.0 - s1 * s2
    denominator = (c1 ** 2 + np.tan(0.5 * theta2) ** 2) * (c2 ** 2 + np.tan(0.5 * theta1) ** 2) * c1 * c2
    return numerator / denominator


def kernel(p) -> np.ndarray:
    """
    K(theta1, theta2) = J * sin(vartheta1) sin(vartheta2) / (sin theta1 sin theta2).

    Raises:
        SingularPoint: On the boundary of (0, pi)^2
    """
    theta1, theta2 = _require_interior(p)
    vartheta1, vartheta2 = _vartheta(theta1, theta2), _vartheta(theta2, theta1)
    return jacobian((theta1, theta2)) * np.sin(vartheta1) * np.sin(vartheta2) / (np.sin(theta1) * np.sin(theta2))


def _require_interior(p) -> Tuple[np.ndarray, np.ndarray]:
    theta1, theta2 = _unpack(p)
    if np.any((theta1 <= 0) | (theta1 >= np.pi) | (theta2 <= 0) | (theta2 >= np.pi)):
        raise SingularPoint("Constrained Wigner function is only defined on the open square (0, pi)^2")
    return theta1, theta2


def _brackets(vartheta1: np.ndarray, vartheta2: np.ndarray, rydberg_site: int) -> np.ndarray:
    if rydberg_site == 1:
        return 0.25 * (1.0 - SQRT3 * np.cos(vartheta1)) * (1.0 + SQRT3 * np.cos(vartheta2))
    if rydberg_site == 2:
        return 0.25 * (1.0 + SQRT3 * np.cos(vartheta1)) * (1.0 - SQRT3 * np.cos(vartheta2))
    raise ValidationFailure(f"Rydberg site must be 1 or 2, got {rydberg_site}")


def wigner_unconstrained(p):
    """
    Unconstrained two-spin Wigner function (1/4)(1 - sqrt3 cos theta1)(1 + sqrt3 cos theta2).

    Args:
        p: (theta1, theta2)

    Returns:
        Real value (or array)
    """
    theta1, theta2 = _unpack(p)
    value = _brackets(theta1, theta2, rydberg_site=1)
    return float(value) if np.ndim(value) == 0 else value


def weighted_constrained(theta1, theta2, rydberg_site: int = 2) -> np.ndarray:
    """
    sin(theta1) sin(theta2) W(theta1, theta2), evaluated without dividing by the sines.

    Bounded on the closed square except on the two seams handled by theta_to_vartheta.
    """
    theta1 = np.asarray(theta1, dtype=float)
    theta2 = np.asarray(theta2, dtype=float)
    vartheta1, vartheta2 = _vartheta(theta1, theta2), _vartheta(theta2, theta1)
    return jacobian((theta1, theta2)) * np.sin(vartheta1) * np.sin(vartheta2) * \
        _brackets(vartheta1, vartheta2, rydberg_site)


def wigner_constrained(p, rydberg_site: int = 2):
    """
    Constrained Wigner function of the Z2 state.

    W = (1/4) K [1 + sqrt3 cos vartheta(theta1, theta2)][1 - sqrt3 cos vartheta(theta2, theta1)]
    with the excitation on site 2, which peaks at (0, pi). rydberg_site=1 gives the mirror
    bracket order, peaked at (pi, 0).

    Args:
        p: (theta1, theta2) strictly inside (0, pi)^2
        rydberg_site (int): Site carrying the Rydberg excitation, 1 or 2

    Returns:
        Real value (or array)

    Raises:
        SingularPoint: On the boundary
    """
    theta1, theta2 = _require_interior(p)
    value = weighted_constrained(theta1, theta2, rydberg_site) / (np.sin(theta1) * np.sin(theta2))
    return float(value) if np.ndim(value) == 0 else value


def quadrature_rule(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gauss-Legendre nodes on (0, pi), graded toward both ends.

    The nodes x of [0, 1] are mapped through theta = pi x^2 (3 - 2x), whose derivative
    vanishes at the ends, so the corners of the square are sampled densely.

    Args:
        n (int): Number of nodes

    Returns:
        Tuple[np.ndarray, np.ndarray]: (nodes, weights) with sum(weights) = pi
    """
    nodes, weights = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (nodes + 1.0)
    theta = np.pi * x ** 2 * (3.0 - 2.0 * x)
    return theta, 0.5 * weights * 6.0 * np.pi * x * (1.0 - x)


def wigner_grid(n1: int, n2: int, constrained: bool = True, rydberg_site: int = 2,
                normalize: bool = True) -> WignerGrid:
    """
    Evaluate a Wigner function on interior quadrature nodes.

    Args:
        n1 (int): Nodes along theta1 (>= 16)
        n2 (int): Nodes along theta2 (>= 16)
        constrained (bool): Constrained W, otherwise the unconstrained two-spin function
        rydberg_site (int): Orientation of the constrained function
        normalize (bool): Rescale when the quadrature misses 1 by more than 1e-6

    Returns:
        WignerGrid: Values of shape (n1, n2) and the applied rescale factor
    """
    if n1 < 16 or n2 < 16:
        raise ValidationFailure(f"Grid needs at least 16 nodes per axis, got {n1}x{n2}")
    theta1, weights1 = quadrature_rule(n1)
    theta2, weights2 = quadrature_rule(n2)
    t1, t2 = np.meshgrid(theta1, theta2, indexing="ij")
    if constrained:
        values = wigner_constrained((t1, t2), rydberg_site)
    else:
        values = wigner_unconstrained((t1, t2))
    grid = WignerGrid(theta1, theta2, weights1, weights2, values, constrained, rydberg_site)

    total = normalization(grid)
    if normalize and abs(total - 1.0) > NORMALIZATION_TOLERANCE:
        logger.warning(f"Wigner quadrature gave {total:.10f}; rescaling to unit normalization")
        grid.values = grid.values / total
        grid.rescale = 1.0 / total
    logger.info(f"Wigner grid {n1}x{n2} (constrained={constrained}) normalization {total:.10f}")
    return grid


def _measure(grid: WignerGrid) -> np.ndarray:
    return np.outer(grid.weights1 * np.sin(grid.theta1), grid.weights2 * np.sin(grid.theta2))


def normalization(grid: WignerGrid) -> float:
    """Quadrature of sin(theta1) sin(theta2) W over the square."""
    return float(np.sum(_measure(grid) * grid.values))


def quadrature_mean(grid: WignerGrid) -> Tuple[float, float]:
    """Signed first moments of (theta1, theta2) under the measure sin sin W."""
    mass = _measure(grid) * grid.values
    total = np.sum(mass)
    return (float(np.sum(mass * grid.theta1[:, None]) / total),
            float(np.sum(mass * grid.theta2[None, :]) / total))


def peak_width(grid: WignerGrid, core_fraction: float = CORE_FRACTION) -> PeakWidth:
    """
    Width of the Wigner peak along theta1.

    The density rho = |W| sin(theta1) sin(theta2) is taken on the quadrature nodes. Nodes are
    ordered by their distance to the node holding max |W| and the nearest ones are kept until
    they carry core_fraction of the total mass; delta_theta0 is the rho-weighted root mean
    square of theta1 - theta1_peak over that core. With core_fraction=1 it is the second
    moment of the whole distribution.

    spread is the second moment of the |W| theta1 marginal over the whole square, and hwhm the
    half width at half maximum of the rho theta1 marginal.

    Args:
        grid (WignerGrid): Evaluated grid
        core_fraction (float): Share of the total mass in the neighbourhood of the peak, in (0, 1]

    Returns:
        PeakWidth: delta_theta0, spread, hwhm and the peak location

    Raises:
        ValidationFailure: If core_fraction is outside (0, 1]
    """
    if not 0.0 < core_fraction <= 1.0:
        raise ValidationFailure(f"Core fraction must lie in (0, 1], got {core_fraction}")
    magnitude = np.abs(grid.values)
    i_peak, j_peak = np.unravel_index(np.argmax(magnitude), magnitude.shape)
    centre = grid.theta1[i_peak]
    offsets1 = grid.theta1 - centre
    offsets2 = grid.theta2 - grid.theta2[j_peak]

    density = _measure(grid) * magnitude
    distance = np.hypot(offsets1[:, None], offsets2[None, :]).ravel()
    order = np.argsort(distance, kind="stable")
    mass = density.ravel()[order]
    cumulative = np.cumsum(mass)
    n_core = min(int(np.searchsorted(cumulative, core_fraction * cumulative[-1])) + 1, mass.size)
    if n_core < MIN_CORE_NODES:
        logger.warning(f"Peak neighbourhood holds only {n_core} nodes; refine the grid for a resolved width")
    core_offsets = np.broadcast_to(offsets1[:, None], density.shape).ravel()[order[:n_core]]
    core_mass = mass[:n_core]
    delta_theta0 = np.sqrt(np.sum(core_mass * core_offsets ** 2) / np.sum(core_mass))

    marginal = magnitude @ grid.weights2
    spread = np.sum(grid.weights1 * marginal * offsets1 ** 2) / np.sum(grid.weights1 * marginal)
    profile = density.sum(axis=1) / grid.weights1

    width = PeakWidth(delta_theta0=float(delta_theta0),
                      spread=float(np.sqrt(spread)),
                      hwhm=_half_width(grid.theta1, profile, int(np.argmax(profile))),
                      peak=(float(centre), float(grid.theta2[j_peak])),
                      core_fraction=core_fraction,
                      core_nodes=n_core)
    logger.info(f"Peak at {width.peak}, delta_theta0={width.delta_theta0:.4g} over {n_core} nodes, "
                f"spread={width.spread:.4g}, hwhm={width.hwhm:.4g}")
    return width


def _half_width(nodes: np.ndarray, profile: np.ndarray, index: int) -> float:
    half = 0.5 * profile[index]
    sides = []
    for step in (1, -1):
        k = index
        while 0 <= k + step < nodes.size and profile[k + step] > half:
            k += step
        if 0 <= k + step < nodes.size:
            upper, lower = profile[k], profile[k + step]
            fraction = (upper - half) / (upper - lower)
            crossing = nodes[k] + fraction * (nodes[k + step] - nodes[k])
            sides.append(abs(crossing - nodes[index]))
    return float(np.mean(sides)) if sides else float("nan")


def _sampling_envelope(rydberg_site: int, n_grid: int = 200) -> float:
    theta, _ = quadrature_rule(n_grid)
    t1, t2 = np.meshgrid(theta, theta, indexing="ij")
    return 1.1 * float(np.max(np.abs(weighted_constrained(t1, t2, rydberg_site))))


def _draw(seed: int, n: int, envelope: float, rydberg_site: int,
          block: int, chunk: int) -> Tuple[np.ndarray, np.ndarray, int]:
    accepted = np.empty((n, 2))
    proposals = 0
    for start in range(0, n, chunk):
        indices = np.arange(start, min(start + chunk, n))
        streams = [np.random.default_rng([seed, int(index)]) for index in indices]
        pending = np.arange(indices.size)
        while pending.size:
            draws = np.stack([streams[k].random((block, 3)) for k in pending])
            theta1 = np.pi * draws[..., 0]
            theta2 = np.pi * draws[..., 1]
            density = np.abs(weighted_constrained(theta1, theta2, rydberg_site))
            if np.any(density > envelope):
                raise EnvelopeTooSmall(f"Proposal density {float(np.max(density)):.6g} exceeds "
                                       f"envelope {envelope:.6g}")
            hits = draws[..., 2] * envelope < density
            first = np.argmax(hits, axis=1)
            found = hits[np.arange(pending.size), first]
            proposals += int(np.sum(np.where(found, first + 1, block)))
            rows = pending[found]
            accepted[indices[rows], 0] = theta1[found, first[found]]
            accepted[indices[rows], 1] = theta2[found, first[found]]
            pending = pending[~found]
    return accepted[:, 0], accepted[:, 1], proposals


def twa_sample(seed: int, n: int, rydberg_site: int = 2, envelope: Optional[float] = None,
               block: int = 64, chunk: int = 4096) -> TWAEnsemble:
    """
    Rejection-sample initial conditions from |W| sin(theta1) sin(theta2).

    Sample k uses its own stream default_rng([seed, k]), so results do not depend on
    chunking. If a proposal exceeds the envelope, the envelope is doubled and sampling
    restarts from the first sample.

    Args:
        seed (int): Ensemble seed
        n (int): Number of samples (>= 0)
        rydberg_site (int): Orientation of the constrained Wigner function
        envelope (Optional[float]): Initial envelope, default 1.1 x grid maximum
        block (int): Proposals drawn per sample per round
        chunk (int): Samples evaluated together

    Returns:
        TWAEnsemble: Angles, signs of W and |W| sin sin at each sample
    """
    if n < 0:
        raise ValidationFailure(f"Sample count must be non-negative, got {n}")
    envelope = envelope or _sampling_envelope(rydberg_site)
    while True:
        try:
            theta1, theta2, proposals = _draw(seed, n, envelope, rydberg_site, block, chunk)
            break
        except EnvelopeTooSmall as error:
            logger.warning(f"{error}; doubling the envelope and restarting")
            envelope *= 2.0

    signed = weighted_constrained(theta1, theta2, rydberg_site)
    ensemble = TWAEnsemble(theta1=theta1, theta2=theta2, weight=np.where(signed < 0, -1, 1).astype(int),
                           density=np.abs(signed), seed=seed, envelope=envelope, proposals=proposals)
    logger.info(f"Drew {n} TWA samples, acceptance rate {ensemble.acceptance_rate:.3f}")
    return ensemble


def wigner_to_cell_angles(theta1, theta2, L: int = 2) -> np.ndarray:
    """Convert half-angle Wigner samples to flow angles tiled over an L-site cell."""
    pair = 0.5 * np.stack([np.asarray(theta1, dtype=float), np.asarray(theta2, dtype=float)], axis=-1)
    return np.tile(pair, L // 2)


def signed_mean(values: np.ndarray, weights: np.ndarray) -> Tuple[float, float]:
    """
    Self-normalized signed mean and its delta-method standard error.

    Args:
        values (np.ndarray): Observable per sample
        weights (np.ndarray): Signs per sample

    Returns:
        Tuple[float, float]: (mean, stderr)
    """
    total = np.sum(weights)
    if values.size == 0 or total == 0:
        return float("nan"), float("nan")
    mean = np.sum(weights * values) / total
    stderr = np.sqrt(np.sum(weights ** 2 * (values - mean) ** 2)) / abs(total)
    return float(mean), float(stderr)


def twa_observable_series(samples: TWAEnsemble, params: ModelParams, t_grid, dt: float = 1e-2) -> TWASeries:
    """
    Evolve every sample under the TDVP flow and average the Rydberg-sublattice density.

    The observable is the classical symbol sin^2(theta/2) in Wigner variables, i.e. sin^2 of
    the flow angle, averaged over the even (Rydberg) sites. Samples that hit a singular cell
    become NaN and are dropped from the averages from that time on.

    Args:
        samples (TWAEnsemble): Initial conditions
        params (ModelParams): Rabi frequency and cell size
        t_grid: Increasing output times starting at 0
        dt (float): Maximum RK4 step

    Returns:
        TWASeries: Signed means, standard errors and surviving sample counts
    """
    if len(samples) == 0:
        raise ValidationFailure("TWA series needs at least one sample")
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid[0] != 0.0 or np.any(np.diff(t_grid) <= 0):
        raise ValidationFailure("t_grid must start at 0 and increase strictly")

    def flow(thetas: np.ndarray, flow_params: ModelParams) -> np.ndarray:
        return theta_velocity(thetas, flow_params, strict=False)

    thetas = wigner_to_cell_angles(samples.theta1, samples.theta2, params.L)
    weights = samples.weight.astype(float)
    means, errors, alive = [], [], []
    for k, t in enumerate(t_grid):
        if k > 0:
            span = t - t_grid[k - 1]
            steps = int(np.ceil(span / dt - 1e-9))
            with np.errstate(invalid="ignore"):
                thetas = rk4_integrate(flow, thetas, params, span, span / steps).thetas[-1]
        finite = np.all(np.isfinite(thetas), axis=-1)
        density = np.mean(np.sin(thetas[finite][:, 1::2]) ** 2, axis=-1)
        mean, error = signed_mean(density, weights[finite])
        means.append(mean)
        errors.append(error)
        alive.append(int(np.sum(finite)))

    series = TWASeries(t_grid, np.array(means), np.array(errors), np.array(alive))
    if series.dropped:
        logger.warning(f"Dropped {series.dropped} TWA samples at singular cells")
    return series
